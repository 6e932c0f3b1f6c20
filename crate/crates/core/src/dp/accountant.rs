//! Moments accountant for the Poisson-subsampled Gaussian mechanism.
//!
//! With `μ0 = N(0, σ²)`, `μ1 = N(1, σ²)` and the mixture `μ = (1 − q)μ0 + qμ1`,
//! the per-step log moment of order λ is
//!
//! ```text
//! α(λ) = ln max( E_{z~μ}[(μ(z)/μ0(z))^λ],  E_{z~μ0}[(μ0(z)/μ(z))^λ] )
//! ```
//!
//! Moments compose additively over steps, and the tail bound turns `T` steps
//! into `ε = min_λ (T·α(λ) + ln(1/δ)) / λ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest moment order tracked.
pub const MAX_LAMBDA: usize = 64;

/// Upper end of the search range of [`sigma_for_budget`].
pub const SIGMA_MAX: f64 = 1e3;

/// Resolution of [`sigma_for_budget`].
pub const SIGMA_TOLERANCE: f64 = 1e-4;

const QUAD_REL_TOL: f64 = 1e-9;
const QUAD_MAX_DEPTH: u32 = 30;
/// Half-width of the integration window beyond the mixture centers, in units of σ.
const TAIL_SIGMAS: f64 = 40.0;

/// Accumulated privacy loss of a sequence of identical subsampled Gaussian steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
    /// `α(λ)` of a single step for `λ = 1..=MAX_LAMBDA`; `+∞` when `σ = 0`.
    #[serde(with = "crate::serde_util::vec_f64_nonfinite")]
    pub per_step: Vec<f64>,
    /// `steps × per_step`, elementwise.
    #[serde(with = "crate::serde_util::vec_f64_nonfinite")]
    pub log_moments: Vec<f64>,
}

impl AccountantState {
    pub fn new(q: f64, sigma: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("sampling probability q={q} must lie in (0, 1]")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise multiplier sigma={sigma} must be finite and >= 0")));
        }
        let per_step: Vec<f64> = (1..=MAX_LAMBDA).map(|l| log_moment(q, sigma, l)).collect();
        Ok(Self { q, sigma, steps: 0, log_moments: vec![0.0; per_step.len()], per_step })
    }

    /// Records `n` further steps.
    pub fn advance(&mut self, n: u64) {
        self.steps += n;
        let t = self.steps as f64;
        self.log_moments = self.per_step.iter().map(|a| if self.steps == 0 { 0.0 } else { a * t }).collect();
    }

    pub fn is_private(&self) -> bool {
        self.sigma > 0.0
    }

    /// `ε` for the given `δ`, with the minimizing order (`None` when no step was taken
    /// or the mechanism is non-private).
    pub fn epsilon_with_order(&self, delta: f64) -> (f64, Option<usize>) {
        if self.steps == 0 {
            return (0.0, None);
        }
        if !self.is_private() {
            return (f64::INFINITY, None);
        }
        let log_inv_delta = -delta.ln();
        let mut best = (f64::INFINITY, None);
        for (i, m) in self.log_moments.iter().enumerate() {
            let lambda = (i + 1) as f64;
            let eps = (m + log_inv_delta) / lambda;
            if eps < best.0 {
                best = (eps, Some(i + 1));
            }
        }
        best
    }
}

/// `ε` spent by `state` at failure probability `δ`; `+∞` for a non-private
/// (`σ = 0`) mechanism that took at least one step.
pub fn get_epsilon(state: &AccountantState, delta: f64) -> f64 {
    state.epsilon_with_order(delta).0
}

/// Convenience wrapper: `ε` after `steps` steps of `(q, σ)`.
pub fn compute_epsilon(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    let mut st = AccountantState::new(q, sigma)?;
    st.advance(steps);
    Ok(get_epsilon(&st, delta))
}

/// Smallest `σ` (to within [`SIGMA_TOLERANCE`]) whose `ε` after `steps` steps
/// does not exceed `epsilon`.
pub fn sigma_for_budget(q: f64, steps: u64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("target epsilon {epsilon} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} must lie in (0, 1)")));
    }
    if steps == 0 {
        // no step spends any budget; the smallest private sigma on the grid suffices
        return Ok(SIGMA_TOLERANCE);
    }
    if compute_epsilon(q, SIGMA_MAX, steps, delta)? > epsilon {
        return Err(Error::UnreachableBudget { epsilon, sigma_max: SIGMA_MAX });
    }
    // invariant: eps(lo) > epsilon (eps(0) = ∞), eps(hi) <= epsilon
    let (mut lo, mut hi) = (0.0_f64, SIGMA_MAX);
    while hi - lo > SIGMA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if compute_epsilon(q, mid, steps, delta)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Per-step log moment `α(λ)` of the subsampled Gaussian mechanism.
pub fn log_moment(q: f64, sigma: f64, lambda: usize) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let a = log_mixture_integral(q, sigma, lambda, Moment::MixtureOverBase);
    let b = log_mixture_integral(q, sigma, lambda, Moment::BaseOverMixture);
    a.max(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Moment {
    /// `E_{z~μ}[(μ/μ0)^λ]`
    MixtureOverBase,
    /// `E_{z~μ0}[(μ0/μ)^λ]`
    BaseOverMixture,
}

/// Log of the integrand of either moment at `z`.
fn log_integrand(q: f64, sigma: f64, lambda: f64, which: Moment, z: f64) -> f64 {
    let s2 = 2.0 * sigma * sigma;
    let norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let log_mu0 = -z * z / s2 + norm;
    let log_mu1 = -(z - 1.0) * (z - 1.0) / s2 + norm;
    let log_mu = if q >= 1.0 { log_mu1 } else { log_add_exp((1.0 - q).ln() + log_mu0, q.ln() + log_mu1) };
    match which {
        Moment::MixtureOverBase => log_mu + lambda * (log_mu - log_mu0),
        Moment::BaseOverMixture => log_mu0 + lambda * (log_mu0 - log_mu),
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Integration windows: both integrands are sums of σ-wide Gaussian bumps
/// centered on the integers `0..=λ+1`, so everything outside `TAIL_SIGMAS·σ`
/// of those points is negligible. Overlapping windows are merged.
fn windows(sigma: f64, lambda: usize) -> Vec<(f64, f64)> {
    let r = TAIL_SIGMAS * sigma;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for k in 0..=lambda + 1 {
        let (a, b) = (k as f64 - r, k as f64 + r);
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = b,
            _ => out.push((a, b)),
        }
    }
    out
}

/// `ln ∫ exp(g(z)) dz` by adaptive Simpson over σ-wide panels, with the
/// integrand rescaled by its maximum to stay in range.
fn log_mixture_integral(q: f64, sigma: f64, lambda: usize, which: Moment) -> f64 {
    let lam = lambda as f64;
    let g = |z: f64| log_integrand(q, sigma, lam, which, z);

    let mut panels: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in windows(sigma, lambda) {
        let n = ((hi - lo) / sigma).ceil().max(1.0) as usize;
        let w = (hi - lo) / n as f64;
        panels.extend((0..n).map(|k| (lo + k as f64 * w, lo + (k + 1) as f64 * w)));
    }

    // fine scan for the peak and a rough magnitude for the tolerance
    const SUB: usize = 8;
    let mut gmax = f64::NEG_INFINITY;
    for &(a, b) in &panels {
        for k in 0..=SUB {
            gmax = gmax.max(g(a + (b - a) * k as f64 / SUB as f64));
        }
    }
    let f = |z: f64| (g(z) - gmax).exp();
    let masses: Vec<f64> = panels
        .iter()
        .map(|&(a, b)| {
            let h = (b - a) / SUB as f64;
            (0..SUB).map(|k| f(a + (k as f64 + 0.5) * h)).sum::<f64>() * h
        })
        .collect();
    let rough: f64 = masses.iter().sum();

    // below σ ≈ 1 the integrand is evaluated from terms of size ~λ³/σ², whose
    // rounding noise would otherwise stop the refinement from terminating
    let magnitude = (lam + 1.0).powi(3) / (2.0 * sigma * sigma) + 1.0;
    let rel = QUAD_REL_TOL.max(4.0 * f64::EPSILON * magnitude);
    // each panel gets a share of the error budget proportional to its mass
    let floor = 1e-3 * rel * rough / panels.len() as f64;

    let mut total = 0.0;
    for (&(a, b), &m) in panels.iter().zip(&masses) {
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(&f, a, b, fa, fm, fb, whole, rel * m + floor, QUAD_MAX_DEPTH);
    }
    total.ln() + gmax
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || !delta.is_finite() || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact `ln E_{μ0}[(μ/μ0)^{λ+1}]` via the binomial expansion, whose terms are
    /// `C(λ+1, k) (1−q)^{λ+1−k} q^k exp((k² − k) / 2σ²)`.
    fn binomial_log_a(q: f64, sigma: f64, lambda: usize) -> f64 {
        let n = lambda + 1;
        let mut acc = f64::NEG_INFINITY;
        let mut log_binom = 0.0;
        for k in 0..=n {
            if k > 0 {
                log_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            let kf = k as f64;
            let term = log_binom + (n - k) as f64 * (1.0 - q).ln() + kf * q.ln() + (kf * kf - kf) / (2.0 * sigma * sigma);
            acc = log_add_exp(acc, term);
        }
        acc
    }

    #[test]
    fn mixture_moment_matches_binomial_expansion() {
        for &q in &[0.001, 0.01, 0.05, 0.3] {
            for &sigma in &[0.8, 1.0, 2.0, 4.0, 8.0] {
                for &lambda in &[1, 2, 5, 16, 32, 64] {
                    let quad = log_mixture_integral(q, sigma, lambda, Moment::MixtureOverBase);
                    let exact = binomial_log_a(q, sigma, lambda);
                    // difference of logs = relative error of the moments
                    assert!((quad - exact).abs() < 1e-8, "q={q} σ={sigma} λ={lambda}: {quad} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn base_moment_matches_brute_force_sum() {
        for &(q, sigma, lambda) in &[(0.01, 4.0, 8), (0.05, 1.0, 16), (0.3, 2.0, 3)] {
            let lam = lambda as f64;
            let (lo, hi) = (-60.0 * sigma, lam + 1.0 + 60.0 * sigma);
            let n = 2_000_000;
            let h = (hi - lo) / n as f64;
            let vals: Vec<f64> = (0..n).map(|k| log_integrand(q, sigma, lam, Moment::BaseOverMixture, lo + (k as f64 + 0.5) * h)).collect();
            let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let brute = (vals.iter().map(|v| (v - m).exp()).sum::<f64>() * h).ln() + m;
            let quad = log_mixture_integral(q, sigma, lambda, Moment::BaseOverMixture);
            assert!((brute - quad).abs() < 1e-8, "{brute} vs {quad}");
        }
    }

    #[test]
    fn zero_steps_spend_nothing() {
        for &(q, s) in &[(0.01, 1.0), (1.0, 0.5), (0.2, 0.0)] {
            let st = AccountantState::new(q, s).unwrap();
            assert_eq!(get_epsilon(&st, 1e-5), 0.0);
        }
    }

    #[test]
    fn tiny_sigma_stays_cheap_and_ordered() {
        let t = std::time::Instant::now();
        let small = AccountantState::new(0.01, 1e-4).unwrap();
        let larger = AccountantState::new(0.01, 0.3).unwrap();
        assert!(t.elapsed().as_secs_f64() < 5.0);
        for (a, b) in small.per_step.iter().zip(&larger.per_step) {
            assert!(a.is_finite() && a > b);
        }
    }

    #[test]
    fn non_private_mechanism_is_infinite() {
        let mut st = AccountantState::new(0.1, 0.0).unwrap();
        st.advance(1);
        assert_eq!(get_epsilon(&st, 1e-5), f64::INFINITY);
    }

    #[test]
    fn moments_are_additive_and_exact() {
        let mut one = AccountantState::new(0.02, 1.5).unwrap();
        one.advance(1);
        let mut many = AccountantState::new(0.02, 1.5).unwrap();
        for _ in 0..137 {
            many.advance(1);
        }
        for (a, b) in one.log_moments.iter().zip(&many.log_moments) {
            assert_eq!(*b, a * 137.0);
        }
    }

    #[test]
    fn doubling_steps_increases_epsilon() {
        let e1 = compute_epsilon(0.01, 4.0, 10_000, 1e-5).unwrap();
        let e2 = compute_epsilon(0.01, 4.0, 20_000, 1e-5).unwrap();
        assert!(e2 > e1);
    }

    #[test]
    fn rejects_bad_sampling_rate() {
        assert!(AccountantState::new(0.0, 1.0).is_err());
        assert!(AccountantState::new(1.5, 1.0).is_err());
        assert!(AccountantState::new(0.5, -1.0).is_err());
    }

    #[test]
    fn sigma_for_budget_meets_target() {
        let (q, t, d) = (0.01, 1000, 1e-5);
        for &eps in &[0.5, 1.0, 4.0] {
            let s = sigma_for_budget(q, t, eps, d).unwrap();
            assert!(compute_epsilon(q, s, t, d).unwrap() <= eps);
            assert!(compute_epsilon(q, s - SIGMA_TOLERANCE, t, d).unwrap() > eps);
        }
    }

    #[test]
    fn unreachable_budget_is_reported() {
        let err = sigma_for_budget(1.0, 1_000_000, 1e-6, 1e-5).unwrap_err();
        assert!(matches!(err, Error::UnreachableBudget { .. }));
    }
}
