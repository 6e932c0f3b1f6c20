//! WebAssembly bindings for the static demo page in `www/`.

use dpgen::dp::{clip, compute_epsilon, l2_norm, noisy_mean, sigma_for_budget};
use wasm_bindgen::prelude::*;

fn js_err(e: dpgen::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `ε` after each of `points` evenly spaced step counts up to `max_steps`.
/// Returns `[steps_0, eps_0, steps_1, eps_1, ...]`.
#[wasm_bindgen]
pub fn epsilon_curve(q: f64, sigma: f64, max_steps: u32, delta: f64, points: u32) -> Result<Vec<f64>, JsValue> {
    let points = points.max(1);
    let mut out = Vec::with_capacity(2 * points as usize);
    for i in 1..=points {
        let steps = (u64::from(max_steps) * u64::from(i)).div_ceil(u64::from(points));
        out.push(steps as f64);
        out.push(compute_epsilon(q, sigma, steps, delta).map_err(js_err)?);
    }
    Ok(out)
}

/// Smallest noise multiplier meeting `(epsilon, delta)` after `steps` steps.
#[wasm_bindgen]
pub fn noise_for_budget(q: f64, steps: u32, epsilon: f64, delta: f64) -> Result<f64, JsValue> {
    sigma_for_budget(q, u64::from(steps), epsilon, delta).map_err(js_err)
}

/// Clips `gradient` to norm `clip_norm` and adds `N(0, σ²C²)` noise, as one
/// DP-SGD step does for a batch of one. Returns
/// `[input norm, clipped norm, sanitized norm, sanitized...]`.
#[wasm_bindgen]
pub fn sanitize(gradient: Vec<f64>, clip_norm: f64, sigma: f64, seed: u32) -> Vec<f64> {
    let clipped = clip(std::slice::from_ref(&gradient), clip_norm);
    let noisy = noisy_mean(&clipped, clip_norm, sigma, 1, u64::from(seed));
    let mut out = vec![l2_norm(&gradient), l2_norm(&clipped[0]), l2_norm(&noisy)];
    out.extend(noisy);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_grows_with_steps() {
        let c = epsilon_curve(0.01, 1.1, 1000, 1e-5, 4).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c[6], 1000.0);
        assert!(c.chunks(2).zip(c.chunks(2).skip(1)).all(|(a, b)| b[1] > a[1]));
    }

    #[test]
    fn noise_meets_the_budget() {
        let s = noise_for_budget(0.01, 1000, 1.0, 1e-5).unwrap();
        assert!(compute_epsilon(0.01, s, 1000, 1e-5).unwrap() <= 1.0);
    }

    #[test]
    fn sanitize_clips_before_noise() {
        let out = sanitize(vec![3.0, 4.0], 1.0, 0.0, 1);
        assert_eq!(out[0], 5.0);
        assert!((out[1] - 1.0).abs() < 1e-12);
        assert!((out[3] - 0.6).abs() < 1e-12 && (out[4] - 0.8).abs() < 1e-12);
    }
}
