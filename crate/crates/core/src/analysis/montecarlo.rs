//! Monte Carlo estimators over independently seeded paths.
//!
//! Paths are processed in fixed-size blocks of consecutive stream indices.
//! Blocks may run on any thread, but their partial statistics are merged in
//! ascending block order, so results are bitwise identical for a given
//! master seed regardless of scheduling.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::{BoxDomain, SdeModel};
use crate::rng::{BrownianPath, SeedSpec};
use crate::schemes::{
    advance, integrate, validate_scheme_for, BoundFunction, Denominator, SchemeSpec, Workspace,
};

use super::minstep::InvarianceBounds;

pub(crate) const BLOCK: u64 = 128;

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count = n;
    }

    pub fn estimate(&self) -> McEstimate {
        let std_error = if self.count > 1 {
            (self.m2.max(0.0) / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        McEstimate {
            mean: self.mean,
            std_error,
            num_paths: self.count as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Paths that contributed, i.e. excluding failed ones.
    pub num_paths: usize,
}

/// Runs `work` over blocks of stream indices `0..num_paths` in parallel and
/// returns the block results in ascending order.
pub(crate) fn over_blocks<T, F>(num_paths: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<u64>) -> T + Sync + Send,
{
    let blocks = num_paths.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| work(b * BLOCK..((b + 1) * BLOCK).min(num_paths)))
        .collect()
}

/// Number of whole steps of size `h` that fit in `horizon`.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step must be positive, got {h}")));
    }
    let n = (horizon / h * (1.0 + 1e-12)).floor();
    if n < 1.0 {
        return Err(invalid(format!("step {h} exceeds the horizon {horizon}")));
    }
    Ok(n as usize)
}

/// Per-node, per-component sample means `E[X_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSeries {
    pub times: Vec<f64>,
    pub dim: usize,
    /// Row-major `(N + 1) × n`.
    pub estimates: Vec<McEstimate>,
    pub failed_paths: usize,
}

impl ExpectationSeries {
    pub fn at(&self, k: usize, i: usize) -> McEstimate {
        self.estimates[k * self.dim + i]
    }

    /// First-component estimates, one per node.
    pub fn first_component(&self) -> Vec<McEstimate> {
        self.estimates.iter().step_by(self.dim).copied().collect()
    }
}

/// Sample mean and standard error of the numerical solution at every grid
/// node, over paths with stream indices `0..num_paths`. Paths hitting a
/// non-finite value are counted in `failed_paths` and left out.
pub fn mc_expectation(
    model: &SdeModel,
    scheme: &SchemeSpec,
    h: f64,
    num_paths: usize,
    master_seed: u64,
) -> Result<ExpectationSeries> {
    if num_paths < 2 {
        return Err(invalid(
            "at least two paths are needed for a standard error",
        ));
    }
    validate_scheme_for(model, scheme)?;
    let steps = steps_for(model.horizon(), h)?;
    let n = model.dim_state();
    let nodes = (steps + 1) * n;

    let blocks = over_blocks(
        num_paths as u64,
        |range| -> Result<(Vec<RunningStats>, usize)> {
            let mut stats = vec![RunningStats::default(); nodes];
            let mut failed = 0;
            for i in range {
                let path = BrownianPath::generate(
                    SeedSpec::new(master_seed, i),
                    h,
                    steps,
                    model.dim_noise(),
                )?;
                match integrate(model, scheme, &path) {
                    Ok(traj) => {
                        for (s, x) in stats.iter_mut().zip(&traj.states) {
                            s.push(*x);
                        }
                    }
                    Err(Error::NonFinite { .. }) => failed += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((stats, failed))
        },
    );

    let mut total = vec![RunningStats::default(); nodes];
    let mut failed_paths = 0;
    for block in blocks {
        let (stats, failed) = block?;
        for (t, s) in total.iter_mut().zip(&stats) {
            t.merge(s);
        }
        failed_paths += failed;
    }
    Ok(ExpectationSeries {
        times: (0..=steps).map(|k| k as f64 * h).collect(),
        dim: n,
        estimates: total.iter().map(RunningStats::estimate).collect(),
        failed_paths,
    })
}

/// Mean of NSEM on the linear SDE `dY = μY dt + g(Y) dW`, from the
/// recursion `m_{k+1} = m_k (1 + μ φ(h))`, since the noise term has zero
/// mean. The factor is evaluated as `φ_b(αh) + (μ + α) φ(h)`, which is the
/// same quantity but exact in the decay case `μ = -α`.
pub fn nsem_linear_mean(mu: f64, y0: f64, denom: &Denominator, h: f64, steps: usize) -> Vec<f64> {
    let factor = denom.decay_factor(h) + (mu + denom.alpha()) * denom.phi(h);
    let mut m = Vec::with_capacity(steps + 1);
    m.push(y0);
    for k in 0..steps {
        m.push(m[k] * factor);
    }
    m
}

/// Bound on the increments whose violation is counted by
/// [`exit_statistics`].
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBound {
    pub bounds: InvarianceBounds,
    pub bound: BoundFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitStatistics {
    pub num_steps: usize,
    pub step: f64,
    /// For each step `k`, the fraction of paths whose increment `ΔW_k`
    /// violates the increment bound (all zero without a bound).
    pub violation_fraction_per_step: Vec<f64>,
    /// Violating increments over all steps of all paths.
    pub step_violation_fraction: f64,
    pub step_violations: u64,
    pub exited_paths: usize,
    /// Exited paths over paths that did not fail numerically.
    pub exit_fraction: f64,
    /// `first_exit_histogram[k]`: paths first found outside the domain at node `k`.
    pub first_exit_histogram: Vec<usize>,
    pub failed_paths: usize,
    pub num_paths: usize,
}

/// Counts domain exits and increment-bound violations along `num_paths`
/// seeded trajectories. States are tested after every step; a state on the
/// boundary is inside.
pub fn exit_statistics(
    model: &SdeModel,
    scheme: &SchemeSpec,
    domain: &BoxDomain,
    h: f64,
    num_paths: usize,
    master_seed: u64,
    increment_bound: Option<&IncrementBound>,
) -> Result<ExitStatistics> {
    if num_paths == 0 {
        return Err(invalid("num_paths must be at least 1"));
    }
    validate_scheme_for(model, scheme)?;
    if let Some(c) = domain
        .constraints()
        .iter()
        .find(|c| c.index >= model.dim_state())
    {
        return Err(invalid(format!(
            "domain constrains coordinate {} outside the state",
            c.index
        )));
    }
    let steps = steps_for(model.horizon(), h)?;
    let n = model.dim_state();
    let threshold = increment_bound.map(|b| b.bounds.increment_threshold(&b.bound, h));

    struct Block {
        violations: Vec<u64>,
        first_exit: Vec<usize>,
        failed: usize,
    }

    let blocks = over_blocks(num_paths as u64, |range| -> Result<Block> {
        let mut out = Block {
            violations: vec![0; steps],
            first_exit: vec![0; steps + 1],
            failed: 0,
        };
        let mut ws = Workspace::new(model);
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        for i in range {
            let path =
                BrownianPath::generate(SeedSpec::new(master_seed, i), h, steps, model.dim_noise())?;
            if let Some(t) = threshold {
                for k in 0..steps {
                    if path.increment(k).iter().any(|dw| !(dw.abs() <= t)) {
                        out.violations[k] += 1;
                    }
                }
            }
            x.copy_from_slice(model.initial_state());
            let mut exit_at = (!domain.contains(&x)).then_some(0);
            for k in 0..steps {
                if exit_at.is_some() {
                    break;
                }
                match advance(model, scheme, &x, h, path.increment(k), &mut ws, &mut next) {
                    Ok(()) => {
                        std::mem::swap(&mut x, &mut next);
                        if !domain.contains(&x) {
                            exit_at = Some(k + 1);
                        }
                    }
                    Err(Error::NonFinite { .. }) => {
                        out.failed += 1;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some(k) = exit_at {
                out.first_exit[k] += 1;
            }
        }
        Ok(out)
    });

    let mut violations = vec![0u64; steps];
    let mut first_exit_histogram = vec![0usize; steps + 1];
    let mut failed_paths = 0;
    for block in blocks {
        let block = block?;
        for (a, b) in violations.iter_mut().zip(&block.violations) {
            *a += b;
        }
        for (a, b) in first_exit_histogram.iter_mut().zip(&block.first_exit) {
            *a += b;
        }
        failed_paths += block.failed;
    }
    let exited_paths: usize = first_exit_histogram.iter().sum();
    let step_violations: u64 = violations.iter().sum();
    let settled = (num_paths - failed_paths).max(1);
    Ok(ExitStatistics {
        num_steps: steps,
        step: h,
        violation_fraction_per_step: violations
            .iter()
            .map(|&v| v as f64 / num_paths as f64)
            .collect(),
        step_violation_fraction: step_violations as f64 / (num_paths * steps) as f64,
        step_violations,
        exited_paths,
        exit_fraction: exited_paths as f64 / settled as f64,
        first_exit_histogram,
        failed_paths,
        num_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::minstep::min_step_nsem;
    use crate::model::GbmModel;
    use crate::schemes::BimParams;

    #[test]
    fn running_stats_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut direct = RunningStats::default();
        xs.iter().for_each(|&x| direct.push(x));
        let mut merged = RunningStats::default();
        for chunk in xs.chunks(77) {
            let mut s = RunningStats::default();
            chunk.iter().for_each(|&x| s.push(x));
            merged.merge(&s);
        }
        let (a, b) = (direct.estimate(), merged.estimate());
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.std_error - b.std_error).abs() < 1e-12);
        assert_eq!(a.num_paths, 1000);
    }

    #[test]
    fn steps_for_grid() {
        assert_eq!(steps_for(10.0, 0.1).unwrap(), 100);
        assert_eq!(steps_for(10.0, 3.0).unwrap(), 3);
        assert_eq!(steps_for(1.0, 1.0 / 3.0).unwrap(), 3);
        assert!(steps_for(1.0, 2.0).is_err());
    }

    #[test]
    fn deterministic_model_has_zero_error_bars() {
        let m = GbmModel::decay(1.0, 0.0, 1.0, 10.0).unwrap().to_sde();
        let scheme = SchemeSpec::Nonstandard(Denominator::exponential(1.0).unwrap());
        let series = mc_expectation(&m, &scheme, 0.5, 300, 1).unwrap();
        let single = integrate(
            &m,
            &scheme,
            &BrownianPath::from_increments(0.5, 1, &[0.0; 20]).unwrap(),
        )
        .unwrap();
        for (k, e) in series.first_component().iter().enumerate() {
            assert_eq!(e.mean, single.states[k]);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn mc_expectation_is_reproducible() {
        let m = GbmModel::decay(1.0, 1.0, 1.0, 4.0).unwrap().to_sde();
        let a = mc_expectation(&m, &SchemeSpec::EulerMaruyama, 0.5, 500, 9).unwrap();
        let b = mc_expectation(&m, &SchemeSpec::EulerMaruyama, 0.5, 500, 9).unwrap();
        assert_eq!(a, b);
        let c = mc_expectation(&m, &SchemeSpec::EulerMaruyama, 0.5, 500, 10).unwrap();
        assert_ne!(a, c);
        assert!(mc_expectation(&m, &SchemeSpec::EulerMaruyama, 0.5, 1, 9).is_err());
    }

    #[test]
    fn nsem_mean_unbiased_at_large_step() {
        let m = GbmModel::decay(1.0, 1.0, 1.0, 10.0).unwrap().to_sde();
        let scheme = SchemeSpec::Nonstandard(Denominator::exponential(1.0).unwrap());
        let series = mc_expectation(&m, &scheme, 2.0, 10_000, 2024).unwrap();
        for (k, e) in series.first_component().iter().enumerate() {
            let exact = (-(k as f64) * 2.0).exp();
            assert!(
                (e.mean - exact).abs() <= 3.0 * e.std_error + 1e-15,
                "k={k} {e:?}"
            );
        }
    }

    #[test]
    fn em_mean_collapses_at_unit_step() {
        let m = GbmModel::decay(1.0, 1.0, 1.0, 10.0).unwrap().to_sde();
        let series = mc_expectation(&m, &SchemeSpec::EulerMaruyama, 1.0, 10_000, 77).unwrap();
        for e in series.first_component().iter().skip(1) {
            assert!(e.mean.abs() <= 3.0 * e.std_error, "{e:?}");
        }
    }

    #[test]
    fn failures_are_counted() {
        let m = SdeModel::scalar(|x| x * x * x, |_| 1.0, 1.0, 10.0).unwrap();
        let series = mc_expectation(&m, &SchemeSpec::EulerMaruyama, 1.0, 20, 3).unwrap();
        assert!(series.failed_paths >= 15, "{}", series.failed_paths);
        assert_eq!(series.at(0, 0).num_paths, 20 - series.failed_paths);
    }

    #[test]
    fn linear_mean_recursion_exact_for_decay() {
        for &h in &[0.1, 1.0, 2.0, 10.0] {
            let d = Denominator::exponential(1.0).unwrap();
            let steps = (10.0 / h) as usize;
            let m = nsem_linear_mean(-1.0, 1.0, &d, h, steps);
            for (k, v) in m.iter().enumerate() {
                let exact = (-(k as f64) * h).exp();
                assert!((v - exact).abs() <= 4.0 * (k.max(1) as f64) * f64::EPSILON * exact);
                assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn exits_under_small_steps_are_rare() {
        let (lambda, sigma) = (1.0, 0.5);
        let h0 = min_step_nsem(lambda, sigma, 0.01).unwrap().h0;
        let h = 0.5 * h0;
        let m = GbmModel::decay(lambda, sigma, 1.0, 10.0).unwrap().to_sde();
        let scheme = SchemeSpec::Nonstandard(Denominator::exponential(lambda).unwrap());
        let bound = IncrementBound {
            bounds: InvarianceBounds::gbm(lambda, sigma).unwrap(),
            bound: BoundFunction::Exponential,
        };
        let stats = exit_statistics(
            &m,
            &scheme,
            &BoxDomain::nonnegative_orthant(1),
            h,
            10_000,
            5,
            Some(&bound),
        )
        .unwrap();
        assert!(stats.exit_fraction <= 0.03, "{}", stats.exit_fraction);
        assert!(stats.step_violation_fraction <= 2.0 * 0.01);
        assert_eq!(stats.violation_fraction_per_step.len(), stats.num_steps);
        assert_eq!(stats.first_exit_histogram[0], 0);
    }

    #[test]
    fn deterministic_nsem_and_balanced_bim_never_exit() {
        let k = BoxDomain::nonnegative_orthant(1);
        let m = GbmModel::decay(1.0, 0.0, 1.0, 100.0).unwrap().to_sde();
        let scheme = SchemeSpec::Nonstandard(Denominator::exponential(1.0).unwrap());
        for h in [0.1, 3.0, 25.0] {
            let s = exit_statistics(&m, &scheme, &k, h, 50, 0, None).unwrap();
            assert_eq!(s.exited_paths, 0);
            assert_eq!(s.step_violations, 0);
        }
        let m = GbmModel::decay(1.0, 1.0, 1.0, 100.0).unwrap().to_sde();
        let bim = SchemeSpec::BalancedImplicit(BimParams::new(1.0, 1.0).unwrap());
        for h in [0.1, 1.0, 10.0] {
            let s = exit_statistics(&m, &bim, &k, h, 1000, 1, None).unwrap();
            assert_eq!(s.exited_paths, 0);
        }
        // EM at h = 2.5 leaves at the first step on every path
        let m = GbmModel::decay(1.0, 0.1, 1.0, 10.0).unwrap().to_sde();
        let s = exit_statistics(&m, &SchemeSpec::EulerMaruyama, &k, 2.5, 100, 0, None).unwrap();
        assert_eq!(s.first_exit_histogram[1], 100);
    }
}
