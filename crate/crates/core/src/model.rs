//! SDE systems `dY = f(Y) dt + g(Y) dW`, box domains, geometric Brownian
//! motion and a sampled check of the boundary conditions characterising
//! invariant boxes.

use std::fmt;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Drift `f`: writes `f(x)` (length `n`) into the output slice.
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Diffusion `g`: writes the `n × d` matrix `g(x)` row-major into the output slice.
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// An autonomous Itô SDE with state in `ℝⁿ` driven by a `d`-dimensional
/// Brownian motion on `[0, horizon]`.
#[derive(Clone)]
pub struct SdeModel {
    dim_state: usize,
    dim_noise: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    initial_state: Vec<f64>,
    horizon: f64,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("initial_state", &self.initial_state)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new(
        dim_state: usize,
        dim_noise: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        initial_state: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(invalid("state and noise dimensions must be positive"));
        }
        if initial_state.len() != dim_state {
            return Err(invalid(format!(
                "initial state has length {}, expected {dim_state}",
                initial_state.len()
            )));
        }
        if initial_state.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial state must be finite"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            dim_state,
            dim_noise,
            drift,
            diffusion,
            initial_state,
            horizon,
        })
    }

    /// One-dimensional model with one noise source.
    pub fn scalar<F, G>(drift: F, diffusion: G, y0: f64, horizon: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            1,
            1,
            Arc::new(move |x, out| out[0] = drift(x[0])),
            Arc::new(move |x, out| out[0] = diffusion(x[0])),
            vec![y0],
            horizon,
        )
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_scalar(&self) -> bool {
        self.dim_state == 1 && self.dim_noise == 1
    }

    /// Same dynamics, different start or horizon.
    pub fn with_initial_state(&self, initial_state: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::new(
            self.dim_state,
            self.dim_noise,
            self.drift.clone(),
            self.diffusion.clone(),
            initial_state,
            horizon,
        )
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, &mut out);
        Ok(out)
    }

    /// Row-major `n × d` diffusion matrix at `x`.
    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_state {
            return Err(invalid(format!(
                "state has length {}, model dimension is {}",
                x.len(),
                self.dim_state
            )));
        }
        Ok(())
    }
}

/// Geometric Brownian motion `dY = μ Y dt + σ Y dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmModel {
    pub mu: f64,
    pub sigma: f64,
    pub y0: f64,
    pub horizon: f64,
}

impl GbmModel {
    pub fn new(mu: f64, sigma: f64, y0: f64, horizon: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid(format!("mu must be finite, got {mu}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(y0 > 0.0 && y0.is_finite()) {
            return Err(invalid(format!("y0 must be > 0, got {y0}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be > 0, got {horizon}")));
        }
        Ok(Self {
            mu,
            sigma,
            y0,
            horizon,
        })
    }

    /// Stochastic decay equation, `μ = -λ`.
    pub fn decay(lambda: f64, sigma: f64, y0: f64, horizon: f64) -> Result<Self> {
        Self::new(-lambda, sigma, y0, horizon)
    }

    pub fn to_sde(&self) -> SdeModel {
        let (mu, sigma) = (self.mu, self.sigma);
        SdeModel::scalar(move |x| mu * x, move |x| sigma * x, self.y0, self.horizon)
            .expect("validated GBM parameters form a valid SDE")
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.mu, self.sigma, self.y0, horizon)
    }

    /// Closed-form pathwise solution `Y₀ exp((μ - σ²/2) t + σ W(t))` at each
    /// grid point.
    pub fn exact_solution(&self, brownian_values: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        if brownian_values.len() != times.len() {
            return Err(invalid(format!(
                "{} Brownian values for {} time points",
                brownian_values.len(),
                times.len()
            )));
        }
        if brownian_values.iter().any(|w| !w.is_finite()) {
            return Err(invalid("Brownian values must be finite"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(invalid("times must be finite and nonnegative"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("times must be sorted ascending"));
        }
        let drift = self.mu - 0.5 * self.sigma * self.sigma;
        Ok(times
            .iter()
            .zip(brownian_values)
            .map(|(&t, &w)| self.y0 * (drift * t + self.sigma * w).exp())
            .collect())
    }

    /// `E[Y(t)] = Y₀ e^{μt}`.
    pub fn exact_expectation(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("time must be >= 0, got {t}")));
        }
        Ok(self.y0 * (self.mu * t).exp())
    }
}

/// Free-function form of [`GbmModel::exact_solution`].
pub fn gbm_exact_solution(
    model: &GbmModel,
    brownian_values: &[f64],
    times: &[f64],
) -> Result<Vec<f64>> {
    model.exact_solution(brownian_values, times)
}

/// Free-function form of [`GbmModel::exact_expectation`].
pub fn gbm_exact_expectation(model: &GbmModel, t: f64) -> Result<f64> {
    model.exact_expectation(t)
}

/// `K = { x : aᵢ ≤ xᵢ ≤ bᵢ, i ∈ I }` with either side of each bound optional.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    constraints: Vec<CoordinateBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateBounds {
    pub index: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl BoxDomain {
    pub fn new(constraints: Vec<CoordinateBounds>) -> Result<Self> {
        let mut seen = Vec::new();
        for c in &constraints {
            if seen.contains(&c.index) {
                return Err(invalid(format!("coordinate {} constrained twice", c.index)));
            }
            seen.push(c.index);
            if c.lower.is_some_and(|a| a.is_nan()) || c.upper.is_some_and(|b| b.is_nan()) {
                return Err(invalid("bounds must not be NaN"));
            }
            if let (Some(a), Some(b)) = (c.lower, c.upper) {
                if !(b > a) {
                    return Err(invalid(format!(
                        "coordinate {}: upper bound {b} must exceed lower bound {a}",
                        c.index
                    )));
                }
            }
        }
        Ok(Self { constraints })
    }

    /// `{ x ∈ ℝⁿ : xᵢ ≥ 0 for every i }`.
    pub fn nonnegative_orthant(n: usize) -> Self {
        Self {
            constraints: (0..n)
                .map(|index| CoordinateBounds {
                    index,
                    lower: Some(0.0),
                    upper: None,
                })
                .collect(),
        }
    }

    pub fn interval(index: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![CoordinateBounds {
            index,
            lower: Some(lower),
            upper: Some(upper),
        }])
    }

    pub fn constraints(&self) -> &[CoordinateBounds] {
        &self.constraints
    }

    /// Closed-set membership: a point on a face is inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| {
            let v = x[c.index];
            c.lower.is_none_or(|a| v >= a) && c.upper.is_none_or(|b| v <= b)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffendingQuantity {
    /// `fᵢ` has the wrong sign on the face.
    Drift(f64),
    /// `g_{i,j}` is nonzero on the face.
    Diffusion { noise_index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilianViolation {
    pub index: usize,
    pub boundary: Boundary,
    pub point: Vec<f64>,
    pub quantity: OffendingQuantity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilianReport {
    pub satisfied: bool,
    pub violations: Vec<MilianViolation>,
}

/// Face-sampling options for [`check_milian_conditions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSampling {
    pub samples_per_face: usize,
    pub seed: u64,
    /// Range used for coordinates without a finite bound.
    pub window: (f64, f64),
    /// Absolute tolerance on `g_{i,j} = 0`.
    pub diffusion_tolerance: f64,
}

impl FaceSampling {
    pub fn new(samples_per_face: usize, seed: u64) -> Self {
        Self {
            samples_per_face,
            seed,
            window: (-10.0, 10.0),
            diffusion_tolerance: 1e-12,
        }
    }
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Samples each constrained face of `domain` and checks
///
/// ```text
/// fᵢ(x) ≥ 0 where xᵢ = aᵢ,   fᵢ(x) ≤ 0 where xᵢ = bᵢ,   g_{i,j}(x) = 0 on both faces.
/// ```
///
/// Coordinates other than `i` are drawn uniformly from the box; sides
/// without a finite bound are taken from `sampling.window`, shifted to start
/// at the finite bound when the window does not reach it.
pub fn check_milian_conditions(
    model: &SdeModel,
    domain: &BoxDomain,
    sampling: &FaceSampling,
) -> Result<MilianReport> {
    if domain.constraints.is_empty() {
        return Err(invalid("domain has no constrained coordinates"));
    }
    if sampling.samples_per_face == 0 {
        return Err(invalid("face_samples must be at least 1"));
    }
    let (wlo, whi) = sampling.window;
    if !(whi > wlo) {
        return Err(invalid("sampling window must be a nonempty interval"));
    }
    let n = model.dim_state();
    let d = model.dim_noise();
    if let Some(c) = domain.constraints.iter().find(|c| c.index >= n) {
        return Err(invalid(format!(
            "constrained index {} outside state dimension {n}",
            c.index
        )));
    }

    let ranges: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let c = domain.constraints.iter().find(|c| c.index == j);
            let lower = c.and_then(|c| c.lower).filter(|v| v.is_finite());
            let upper = c.and_then(|c| c.upper).filter(|v| v.is_finite());
            match (lower, upper) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, if whi > a { whi } else { a + (whi - wlo) }),
                (None, Some(b)) => (if wlo < b { wlo } else { b - (whi - wlo) }, b),
                (None, None) => (wlo, whi),
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut violations = Vec::new();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * d];

    for c in &domain.constraints {
        let faces = [(Boundary::Lower, c.lower), (Boundary::Upper, c.upper)];
        for (boundary, value) in faces {
            let Some(face) = value.filter(|v| v.is_finite()) else {
                continue;
            };
            for _ in 0..sampling.samples_per_face {
                let point: Vec<f64> = ranges
                    .iter()
                    .enumerate()
                    .map(|(j, &(lo, hi))| {
                        let u = uniform01(&mut rng);
                        if j == c.index {
                            face
                        } else {
                            lo + (hi - lo) * u
                        }
                    })
                    .collect();
                model.drift_into(&point, &mut f);
                model.diffusion_into(&point, &mut g);
                let fi = f[c.index];
                let wrong_sign = match boundary {
                    Boundary::Lower => fi < 0.0,
                    Boundary::Upper => fi > 0.0,
                };
                if wrong_sign || fi.is_nan() {
                    violations.push(MilianViolation {
                        index: c.index,
                        boundary,
                        point: point.clone(),
                        quantity: OffendingQuantity::Drift(fi),
                    });
                }
                for j in 0..d {
                    let gij = g[c.index * d + j];
                    if !(gij.abs() <= sampling.diffusion_tolerance) {
                        violations.push(MilianViolation {
                            index: c.index,
                            boundary,
                            point: point.clone(),
                            quantity: OffendingQuantity::Diffusion {
                                noise_index: j,
                                value: gij,
                            },
                        });
                    }
                }
            }
        }
    }

    Ok(MilianReport {
        satisfied: violations.is_empty(),
        violations,
    })
}
