use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scale factor `min(1, C / ‖g‖)` applied to a gradient of norm `norm`.
#[inline]
pub fn clip_factor(norm: f64, clip_norm: f64) -> f64 {
    if norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales every gradient whose L2 norm exceeds `clip_norm` onto the ball of radius `clip_norm`.
pub fn clip(per_example_grads: &[Vec<f64>], clip_norm: f64) -> Vec<Vec<f64>> {
    per_example_grads
        .iter()
        .map(|g| {
            let f = clip_factor(l2_norm(g), clip_norm);
            if f == 1.0 {
                g.clone()
            } else {
                // rounding can leave the product a few ulps past the bound
                let mut f = f;
                loop {
                    let out: Vec<f64> = g.iter().map(|x| x * f).collect();
                    if l2_norm(&out) <= clip_norm {
                        return out;
                    }
                    f *= 1.0 - 4.0 * f64::EPSILON;
                }
            }
        })
        .collect()
}

/// `(1/B)·Σ clipped + (1/B)·N(0, σ²C² I)` with noise drawn from a generator seeded by `seed`.
pub fn noisy_mean(clipped: &[Vec<f64>], clip_norm: f64, sigma: f64, batch_size: usize, seed: u64) -> Vec<f64> {
    let dim = clipped.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; dim];
    for g in clipped {
        sum.iter_mut().zip(g).for_each(|(s, v)| *s += v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_and_average(&mut sum, clip_norm, sigma, batch_size, &mut rng);
    sum
}

/// Adds `N(0, σ²C²)` to each coordinate of a clipped sum, then divides by `batch_size`.
pub(crate) fn add_noise_and_average(sum: &mut [f64], clip_norm: f64, sigma: f64, batch_size: usize, rng: &mut ChaCha8Rng) {
    let std = sigma * clip_norm;
    let inv_b = 1.0 / batch_size as f64;
    if std > 0.0 {
        for s in sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *s = (*s + std * z) * inv_b;
        }
    } else {
        sum.iter_mut().for_each(|s| *s *= inv_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clips_long_vectors_onto_the_ball() {
        let out = clip(&[vec![3.0, 4.0]], 1.0);
        assert!((out[0][0] - 0.6).abs() < 1e-15 && (out[0][1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn short_vectors_unchanged() {
        let g = vec![vec![0.1, 0.2]];
        assert_eq!(clip(&g, 1.0), g);
        assert_eq!(clip(&[vec![0.0, 0.0]], 1.0), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn zero_noise_is_exact_mean() {
        let g = vec![vec![1.0, 2.0], vec![3.0, -2.0]];
        assert_eq!(noisy_mean(&g, 1.0, 0.0, 2, 5), vec![2.0, 0.0]);
    }

    #[test]
    fn noise_is_seeded() {
        let g = vec![vec![0.5; 8]];
        assert_eq!(noisy_mean(&g, 1.0, 1.3, 1, 42), noisy_mean(&g, 1.0, 1.3, 1, 42));
        assert_ne!(noisy_mean(&g, 1.0, 1.3, 1, 42), noisy_mean(&g, 1.0, 1.3, 1, 43));
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_bound(
            g in prop::collection::vec(-1e3f64..1e3, 1..50),
            c in 1e-3f64..10.0,
        ) {
            let out = clip(&[g.clone()], c);
            prop_assert!(l2_norm(&out[0]) <= c);
            if l2_norm(&g) <= c {
                prop_assert_eq!(&out[0], &g);
            }
        }
    }
}
