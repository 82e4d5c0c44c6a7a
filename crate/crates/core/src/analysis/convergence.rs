//! Empirical strong convergence order on coupled Brownian grids.
//!
//! Each path is drawn once on the finest grid and coarsened by factors
//! `1, 2, 4, …`, so the coarse runs and the closed-form solution see the
//! same Brownian motion at every coarse node. The error of a level is
//! `E[max_k |X_k - Y(t_k)|]` over the coarse nodes, which bounds the
//! continuous-time supremum from below.

use crate::error::{invalid, Error, Result};
use crate::model::GbmModel;
use crate::rng::{BrownianPath, SeedSpec};
use crate::schemes::{integrate, SchemeSpec};

use super::montecarlo::{over_blocks, McEstimate, RunningStats};

/// Errors at or below this multiple of `y0` count as exact and are left
/// out of the order fit.
pub const EXACT_ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub order: f64,
    pub stderr: f64,
    pub levels_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorCurve {
    /// Step sizes from coarsest to finest.
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Monte Carlo standard error of each entry of `errors`.
    pub error_std_errors: Vec<f64>,
    /// `None` when fewer than two levels have a nonzero error.
    pub fit: Option<OrderFit>,
    pub failed_paths: usize,
}

impl StrongErrorCurve {
    pub fn fitted_order(&self) -> Option<f64> {
        self.fit.map(|f| f.order)
    }
}

/// Least-squares slope of `log₂ e` against `log₂ h`, all levels weighted
/// equally, skipping levels with `e <= floor`.
pub fn fit_order(steps: &[f64], errors: &[f64], floor: f64) -> Result<Option<OrderFit>> {
    if steps.len() != errors.len() {
        return Err(invalid("steps and errors differ in length"));
    }
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(errors)
        .filter(|(h, e)| **e > floor && **h > 0.0 && e.is_finite())
        .map(|(h, e)| (h.log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return Ok(None);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Ok(None);
    }
    let slope = sxy / sxx;
    let stderr = if pts.len() > 2 {
        let ssr: f64 = pts
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Some(OrderFit {
        order: slope,
        stderr,
        levels_used: pts.len(),
    }))
}

/// Strong error of `scheme` on `model` at steps `T / fine_steps · 2^ℓ`,
/// `ℓ = 0..levels`, from `num_paths` coupled paths. `fine_steps` must be
/// divisible by `2^levels`.
pub fn strong_error_curve(
    model: &GbmModel,
    scheme: &SchemeSpec,
    fine_steps: usize,
    levels: usize,
    num_paths: usize,
    master_seed: u64,
) -> Result<StrongErrorCurve> {
    if levels == 0 {
        return Err(invalid("at least one level is required"));
    }
    if levels > 62 || fine_steps == 0 || !fine_steps.is_multiple_of(1usize << levels) {
        return Err(invalid(format!(
            "fine_steps = {fine_steps} is not divisible by 2^{levels}"
        )));
    }
    if num_paths < 2 {
        return Err(invalid("at least two paths are needed"));
    }
    let sde = model.to_sde();
    let fine_h = model.horizon / fine_steps as f64;

    let blocks = over_blocks(
        num_paths as u64,
        |range| -> Result<(Vec<RunningStats>, usize)> {
            let mut stats = vec![RunningStats::default(); levels];
            let mut failed = 0;
            let mut sup_errors = vec![0.0; levels];
            'paths: for i in range {
                let fine =
                    BrownianPath::generate(SeedSpec::new(master_seed, i), fine_h, fine_steps, 1)?;
                for (level, slot) in sup_errors.iter_mut().enumerate() {
                    let path = fine.coarsen(1 << level)?;
                    let traj = match integrate(&sde, scheme, &path) {
                        Ok(t) => t,
                        Err(Error::NonFinite { .. }) => {
                            failed += 1;
                            continue 'paths;
                        }
                        Err(e) => return Err(e),
                    };
                    let exact = model.exact_solution(path.values(), &path.times())?;
                    *slot = traj
                        .states
                        .iter()
                        .zip(&exact)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                }
                for (s, e) in stats.iter_mut().zip(&sup_errors) {
                    s.push(*e);
                }
            }
            Ok((stats, failed))
        },
    );

    let mut total = vec![RunningStats::default(); levels];
    let mut failed_paths = 0;
    for block in blocks {
        let (stats, failed) = block?;
        for (t, s) in total.iter_mut().zip(&stats) {
            t.merge(s);
        }
        failed_paths += failed;
    }

    // coarsest first
    let estimates: Vec<McEstimate> = total.iter().rev().map(RunningStats::estimate).collect();
    let steps: Vec<f64> = (0..levels)
        .rev()
        .map(|l| fine_h * (1u64 << l) as f64)
        .collect();
    let errors: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let fit = fit_order(&steps, &errors, EXACT_ERROR_FLOOR * model.y0)?;
    Ok(StrongErrorCurve {
        steps,
        errors,
        error_std_errors: estimates.iter().map(|e| e.std_error).collect(),
        fit,
        failed_paths,
    })
}
