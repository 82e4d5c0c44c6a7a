//! One-step integrators and the driver that runs them along a Brownian path.
//!
//! | scheme | update |
//! |--------|--------|
//! | EM     | `X + f(X) h + g(X) ΔW` |
//! | NSEM   | `X + f(X) φ(h) + g(X) ΔW`, `φ(h) = (1 - φ_b(αh)) / α` |
//! | BIM    | `X + f(X) h + g(X) ΔW + (c⁰h + c¹|ΔW|)(X - X_next)`, solved for `X_next` |
//!
//! Nothing here clips or rejects states that leave a domain; invariance is
//! something the analysis module measures.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::model::SdeModel;
use crate::rng::BrownianPath;

/// The function `φ_b` in the denominator, mapping `(0, ∞)` into `(0, 1)`.
#[derive(Clone)]
pub enum BoundFunction {
    /// `e^{-x}`
    Exponential,
    /// `1 - x`, only meaningful for `x < 1`. Turns NSEM back into EM.
    Linear,
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for BoundFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential => f.write_str("Exponential"),
            Self::Linear => f.write_str("Linear"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl PartialEq for BoundFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Exponential, Self::Exponential) | (Self::Linear, Self::Linear) => true,
            (Self::Custom { f: a, .. }, Self::Custom { f: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl BoundFunction {
    pub fn custom<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Exponential => (-x).exp(),
            Self::Linear => 1.0 - x,
            Self::Custom { f, .. } => f(x),
        }
    }
}

/// Nonstandard step weight `φ(h) = (1 - φ_b(αh)) / α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denominator {
    alpha: f64,
    bound: BoundFunction,
}

impl Denominator {
    pub fn new(alpha: f64, bound: BoundFunction) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, bound })
    }

    /// `φ(h) = (1 - e^{-αh}) / α`.
    pub fn exponential(alpha: f64) -> Result<Self> {
        Self::new(alpha, BoundFunction::Exponential)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bound(&self) -> &BoundFunction {
        &self.bound
    }

    pub fn phi(&self, h: f64) -> f64 {
        match &self.bound {
            BoundFunction::Exponential => -(-self.alpha * h).exp_m1() / self.alpha,
            // (1 - (1 - αh)) / α simplifies to h exactly
            BoundFunction::Linear => h,
            BoundFunction::Custom { f, .. } => (1.0 - f(self.alpha * h)) / self.alpha,
        }
    }

    /// `φ_b(αh) = 1 - α φ(h)`, evaluated without the cancellation of the
    /// right-hand side.
    pub fn decay_factor(&self, h: f64) -> f64 {
        self.bound.eval(self.alpha * h)
    }
}

/// Constant weights of the scalar balanced implicit method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimParams {
    pub c0: f64,
    pub c1: f64,
}

impl BimParams {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        if !(c0 >= 0.0 && c0.is_finite() && c1 >= 0.0 && c1.is_finite()) {
            return Err(invalid(format!(
                "BIM weights must be finite and nonnegative, got c0={c0}, c1={c1}"
            )));
        }
        Ok(Self { c0, c1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeSpec {
    EulerMaruyama,
    Nonstandard(Denominator),
    BalancedImplicit(BimParams),
}

impl SchemeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EulerMaruyama => "em",
            Self::Nonstandard(_) => "nsem",
            Self::BalancedImplicit(_) => "bim",
        }
    }
}

/// Scratch buffers for `f(x)` and `g(x)`.
pub(crate) struct Workspace {
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(model: &SdeModel) -> Self {
        Self {
            f: vec![0.0; model.dim_state()],
            g: vec![0.0; model.dim_state() * model.dim_noise()],
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step: None,
        })
    }
}

fn check_step_inputs(model: &SdeModel, x: &[f64], h: f64, dw: &[f64]) -> Result<()> {
    model.check_state(x)?;
    if dw.len() != model.dim_noise() {
        return Err(invalid(format!(
            "increment has length {}, model noise dimension is {}",
            dw.len(),
            model.dim_noise()
        )));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(invalid(format!(
            "step must be finite and nonnegative, got {h}"
        )));
    }
    Ok(())
}

/// Core update shared by every entry point; `out` must not alias `x`.
pub(crate) fn advance(
    model: &SdeModel,
    scheme: &SchemeSpec,
    x: &[f64],
    h: f64,
    dw: &[f64],
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    let d = model.dim_noise();
    model.drift_into(x, &mut ws.f);
    check_finite(&ws.f, "drift")?;
    model.diffusion_into(x, &mut ws.g);
    check_finite(&ws.g, "diffusion")?;

    let drift_weight = match scheme {
        SchemeSpec::Nonstandard(denom) => denom.phi(h),
        _ => h,
    };
    for (i, o) in out.iter_mut().enumerate() {
        let mut v = x[i] + ws.f[i] * drift_weight;
        for (gij, dwj) in ws.g[i * d..(i + 1) * d].iter().zip(dw) {
            v += gij * dwj;
        }
        *o = v;
    }
    if let SchemeSpec::BalancedImplicit(p) = scheme {
        // scalar form only, checked by callers
        let damping = p.c0 * h + p.c1 * dw[0].abs();
        out[0] = (out[0] + damping * x[0]) / (1.0 + damping);
    }
    check_finite(out, "state")
}

/// Euler-Maruyama: `x + f(x) h + g(x) ΔW`.
pub fn em_step(model: &SdeModel, x: &[f64], h: f64, dw: &[f64]) -> Result<Vec<f64>> {
    check_step_inputs(model, x, h, dw)?;
    let mut out = vec![0.0; x.len()];
    advance(
        model,
        &SchemeSpec::EulerMaruyama,
        x,
        h,
        dw,
        &mut Workspace::new(model),
        &mut out,
    )?;
    Ok(out)
}

/// Nonstandard Euler-Maruyama: `x + f(x) φ(h) + g(x) ΔW`.
pub fn nsem_step(
    model: &SdeModel,
    x: &[f64],
    denom: &Denominator,
    h: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_step_inputs(model, x, h, dw)?;
    let mut out = vec![0.0; x.len()];
    let scheme = SchemeSpec::Nonstandard(denom.clone());
    advance(
        model,
        &scheme,
        x,
        h,
        dw,
        &mut Workspace::new(model),
        &mut out,
    )?;
    Ok(out)
}

/// Scalar balanced implicit step
/// `[x + f(x) h + g(x) ΔW + (c⁰h + c¹|ΔW|) x] / (1 + c⁰h + c¹|ΔW|)`.
pub fn bim_step(model: &SdeModel, x: f64, params: &BimParams, h: f64, dw: f64) -> Result<f64> {
    if !model.is_scalar() {
        return Err(Error::Unsupported(
            "the balanced implicit method is implemented for scalar models only".into(),
        ));
    }
    check_step_inputs(model, &[x], h, &[dw])?;
    let mut out = [0.0];
    let scheme = SchemeSpec::BalancedImplicit(*params);
    advance(
        model,
        &scheme,
        &[x],
        h,
        &[dw],
        &mut Workspace::new(model),
        &mut out,
    )?;
    Ok(out[0])
}

/// Numerical solution `X_k ≈ Y(t_k)` on the grid of the driving path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major `(N + 1) × n`.
    pub states: Vec<f64>,
    pub dim: usize,
    pub scheme: SchemeSpec,
    pub model: SdeModel,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states
            .iter()
            .skip(i)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    /// CSV with header `k,t,x_1..x_n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t");
        for i in 1..=self.dim {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{k},{}", crate::csv::fmt(*t));
            for v in self.state(k) {
                let _ = write!(out, ",{}", crate::csv::fmt(*v));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn validate_scheme_for(model: &SdeModel, scheme: &SchemeSpec) -> Result<()> {
    if matches!(scheme, SchemeSpec::BalancedImplicit(_)) && !model.is_scalar() {
        return Err(Error::Unsupported(
            "the balanced implicit method is implemented for scalar models only".into(),
        ));
    }
    Ok(())
}

/// Applies `scheme` over every increment of `path`, starting from the
/// model's initial state.
pub fn integrate(model: &SdeModel, scheme: &SchemeSpec, path: &BrownianPath) -> Result<Trajectory> {
    if path.dim() != model.dim_noise() {
        return Err(invalid(format!(
            "path dimension {} does not match model noise dimension {}",
            path.dim(),
            model.dim_noise()
        )));
    }
    let tolerance = 1e-9 * model.horizon().max(1.0);
    if path.horizon() > model.horizon() + tolerance {
        return Err(invalid(format!(
            "path covers [0, {}] beyond the model horizon {}",
            path.horizon(),
            model.horizon()
        )));
    }
    validate_scheme_for(model, scheme)?;

    let n = model.dim_state();
    let steps = path.num_steps();
    let h = path.step();
    let mut states = vec![0.0; (steps + 1) * n];
    states[..n].copy_from_slice(model.initial_state());
    let mut ws = Workspace::new(model);
    for k in 0..steps {
        let (done, rest) = states.split_at_mut((k + 1) * n);
        advance(
            model,
            scheme,
            &done[k * n..],
            h,
            path.increment(k),
            &mut ws,
            &mut rest[..n],
        )
        .map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                step: Some(k),
            },
            other => other,
        })?;
    }
    Ok(Trajectory {
        times: path.times(),
        states,
        dim: n,
        scheme: scheme.clone(),
        model: model.clone(),
    })
}
