//! Largest steps for which the per-step increment bound
//!
//! ```text
//! sup_p |ΔW_k,p| ≤ φ_b(D h) / (S d)
//! ```
//!
//! holds with probability at least `1 - ε`. Each coordinate of `ΔW_k` is
//! `N(0, h)`, so the probability for one coordinate is
//! `erf(φ_b(Dh) / (S d √(2h)))`, and the critical step solves
//!
//! ```text
//! φ_b(D h) / (S d √(2h)) = α(ε),    α(ε) = erf⁻¹(1 - ε).
//! ```
//!
//! For geometric Brownian decay (`D = λ`, `S = σ`, `d = 1`) this has closed
//! forms: with `φ_b(x) = 1 - x` (EM) it is a quadratic in `h` whose smaller
//! root is taken, with `φ_b(x) = e^{-x}` (NSEM) it reduces to
//! `2λh e^{2λh} = λ / (σ² α²)`.

use crate::error::{domain, invalid, Error, Result};
use crate::schemes::BoundFunction;
use crate::specfun::{erf, erf_inv, lambert_w0};

/// Constants of the increment bound: `D` bounds the drift derivative and
/// `S` the diffusion derivative on the domain, `d` is the noise dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceBounds {
    pub d_bound: f64,
    pub s_bound: f64,
    pub noise_dim: usize,
}

impl InvarianceBounds {
    pub fn new(d_bound: f64, s_bound: f64, noise_dim: usize) -> Result<Self> {
        if !(d_bound >= 0.0 && d_bound.is_finite()) {
            return Err(invalid(format!("D must be finite and >= 0, got {d_bound}")));
        }
        if !(s_bound >= 0.0 && s_bound.is_finite()) {
            return Err(invalid(format!("S must be finite and >= 0, got {s_bound}")));
        }
        if noise_dim == 0 {
            return Err(invalid("noise dimension must be at least 1"));
        }
        Ok(Self {
            d_bound,
            s_bound,
            noise_dim,
        })
    }

    /// `D = λ`, `S = σ`, `d = 1`.
    pub fn gbm(lambda: f64, sigma: f64) -> Result<Self> {
        Self::new(lambda, sigma, 1)
    }

    /// `φ_b(D h) / (S d)`; infinite when `S = 0`.
    pub fn increment_threshold(&self, bound: &BoundFunction, h: f64) -> f64 {
        bound.eval(self.d_bound * h) / (self.s_bound * self.noise_dim as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinStepRoute {
    ClosedFormEm,
    ClosedFormNsem,
    NumericRoot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinStepResult {
    pub h0: f64,
    pub epsilon: f64,
    /// `erf⁻¹(1 - ε)`
    pub alpha_eps: f64,
    pub route: MinStepRoute,
}

/// `α(ε) = erf⁻¹(1 - ε)` for `ε ∈ (0, ½)`.
pub fn alpha_of_epsilon(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(domain(format!(
            "epsilon must lie in (0, 1/2), got {epsilon}"
        )));
    }
    erf_inv(1.0 - epsilon)
}

fn check_rates(lambda: f64, sigma: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Closed-form minimal step for Euler-Maruyama on geometric Brownian decay:
/// the smaller root
///
/// ```text
/// h₋ = 1/λ + α²σ²/λ² - (ασ/λ²) √(α²σ² + 2λ)
/// ```
///
/// evaluated as `1 / (λ² h₊)` to avoid cancellation.
pub fn min_step_em(lambda: f64, sigma: f64, epsilon: f64) -> Result<MinStepResult> {
    check_rates(lambda, sigma)?;
    let alpha_eps = alpha_of_epsilon(epsilon)?;
    let a2s2 = (alpha_eps * sigma).powi(2);
    let h0 = 1.0 / (lambda + a2s2 + alpha_eps * sigma * (a2s2 + 2.0 * lambda).sqrt());
    Ok(MinStepResult {
        h0,
        epsilon,
        alpha_eps,
        route: MinStepRoute::ClosedFormEm,
    })
}

/// Closed-form minimal step for NSEM with `φ_b = exp` on geometric Brownian
/// decay: `h₀ = W₀(λ / (σ² α²)) / (2λ)`.
pub fn min_step_nsem(lambda: f64, sigma: f64, epsilon: f64) -> Result<MinStepResult> {
    check_rates(lambda, sigma)?;
    let alpha_eps = alpha_of_epsilon(epsilon)?;
    let h0 = lambert_w0(lambda / (sigma * sigma * alpha_eps * alpha_eps))? / (2.0 * lambda);
    Ok(MinStepResult {
        h0,
        epsilon,
        alpha_eps,
        route: MinStepRoute::ClosedFormNsem,
    })
}

fn invariance_gap(bounds: &InvarianceBounds, bound: &BoundFunction, alpha_eps: f64, h: f64) -> f64 {
    bounds.increment_threshold(bound, h) / (2.0 * h).sqrt() - alpha_eps
}

/// Default search interval: `(0, 1/D)` for the linear bound, whose values
/// leave `(0, 1)` past `1/D`; otherwise `(0, H]` with `H` doubled from 1
/// until the gap changes sign.
fn default_bracket(bounds: &InvarianceBounds, bound: &BoundFunction, alpha_eps: f64) -> (f64, f64) {
    if matches!(bound, BoundFunction::Linear) && bounds.d_bound > 0.0 {
        return (0.0, 1.0 / bounds.d_bound);
    }
    let mut hi = 1.0;
    for _ in 0..200 {
        if invariance_gap(bounds, bound, alpha_eps, hi) < 0.0 {
            break;
        }
        hi *= 2.0;
    }
    (0.0, hi)
}

/// Solves the critical-step equation by bisection for any decreasing bound
/// function.
pub fn min_step_numeric(
    bounds: &InvarianceBounds,
    bound: &BoundFunction,
    epsilon: f64,
) -> Result<MinStepResult> {
    let alpha_eps = alpha_of_epsilon(epsilon)?;
    let bracket = default_bracket(bounds, bound, alpha_eps);
    min_step_numeric_in(bounds, bound, epsilon, bracket)
}

/// As [`min_step_numeric`] on an explicit bracket `(lo, hi)`; `lo = 0` is
/// allowed and stands for the `h → 0⁺` limit where the gap diverges.
pub fn min_step_numeric_in(
    bounds: &InvarianceBounds,
    bound: &BoundFunction,
    epsilon: f64,
    bracket: (f64, f64),
) -> Result<MinStepResult> {
    if !(bounds.s_bound > 0.0) {
        return Err(domain("the increment bound needs S > 0"));
    }
    let alpha_eps = alpha_of_epsilon(epsilon)?;
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid(format!("invalid bracket [{lo}, {hi}]")));
    }
    let gap = |h: f64| invariance_gap(bounds, bound, alpha_eps, h);
    let lo_positive = if lo == 0.0 {
        bound.eval(0.0) > 0.0
    } else {
        gap(lo) > 0.0
    };
    if !lo_positive || !(gap(hi) < 0.0) {
        return Err(Error::RootNotFound { lo, hi });
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(MinStepResult {
        h0: 0.5 * (lo + hi),
        epsilon,
        alpha_eps,
        route: MinStepRoute::NumericRoot,
    })
}

/// Probability that one coordinate of `ΔW_k ~ N(0, h)` satisfies the
/// increment bound, `erf(φ_b(Dh) / (S d √(2h)))`. Zero when the bound
/// function is not positive at `D h`.
pub fn invariance_probability(
    bounds: &InvarianceBounds,
    bound: &BoundFunction,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(domain(format!("step must be positive, got {h}")));
    }
    if !(bounds.s_bound > 0.0) {
        return Err(domain("the increment bound needs S > 0"));
    }
    let threshold = bounds.increment_threshold(bound, h);
    if !(threshold > 0.0) {
        return Ok(0.0);
    }
    erf(threshold / (2.0 * h).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioRow {
    pub ratio: f64,
    pub h0_em: f64,
    pub h0_nsem: f64,
}

/// Both closed-form minimal steps against `σ/λ`, at fixed `λ`.
pub fn ratio_curve(lambda: f64, ratios: &[f64], epsilon: f64) -> Result<Vec<RatioRow>> {
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(invalid("ratios must be positive"));
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("ratios must be strictly ascending"));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let sigma = ratio * lambda;
            Ok(RatioRow {
                ratio,
                h0_em: min_step_em(lambda, sigma, epsilon)?.h0,
                h0_nsem: min_step_nsem(lambda, sigma, epsilon)?.h0,
            })
        })
        .collect()
}
