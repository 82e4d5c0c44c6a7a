//! Seeded Brownian increments with exact multi-resolution coupling.
//!
//! Stream splitting: path `i` under master seed `s` is driven by a ChaCha8
//! generator seeded (through `SeedableRng::seed_from_u64`) with
//!
//! ```text
//! stream_seed = splitmix64(s ^ splitmix64(i))
//! ```
//!
//! where `splitmix64` is the finaliser of Steele, Lea and Flood's SplitMix64.
//! Normal variates come from the inverse CDF, `z = -√2 · erfc⁻¹(2u)`, with
//! `u = (k + ½) / 2⁵³` built from the top 53 bits of a 64-bit draw, so `u`
//! never touches 0 or 1.

use std::fmt::Write as _;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::specfun::{erfc_inv_with, SpecFunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn stream_seed(&self) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(self.stream_index))
    }

    pub fn normal_stream(&self) -> NormalStream {
        NormalStream::new(*self)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal variates from one seeded stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
    cfg: SpecFunConfig,
}

impl NormalStream {
    pub fn new(seed: SeedSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed.stream_seed()),
            cfg: SpecFunConfig::default(),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.next_open01();
        -std::f64::consts::SQRT_2
            * erfc_inv_with(2.0 * u, &self.cfg).expect("2u lies strictly inside (0, 2)")
    }
}

/// Brownian motion sampled on the grid `t_k = k h`, `k = 0..=N`.
///
/// The node values `W(t_k)` are authoritative: increments are stored as
/// their differences, so that `W(t_{k+1}) - W(t_k)` reproduces each
/// increment bit for bit and coarsening by subsampling nodes keeps the
/// coarse and fine paths exactly coupled.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    step: f64,
    num_steps: usize,
    dim: usize,
    values: Vec<f64>,
    increments: Vec<f64>,
}

fn validate_grid(step: f64, num_steps: usize, dim: usize) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be positive, got {step}")));
    }
    if num_steps == 0 {
        return Err(invalid("num_steps must be at least 1"));
    }
    if dim == 0 {
        return Err(invalid("Brownian dimension must be at least 1"));
    }
    Ok(())
}

impl BrownianPath {
    /// Draws `num_steps × dim` i.i.d. `N(0, step)` increments from `seed`.
    pub fn generate(seed: SeedSpec, step: f64, num_steps: usize, dim: usize) -> Result<Self> {
        validate_grid(step, num_steps, dim)?;
        let mut stream = seed.normal_stream();
        let scale = step.sqrt();
        let raw: Vec<f64> = (0..num_steps * dim)
            .map(|_| scale * stream.next_normal())
            .collect();
        Self::from_increments(step, dim, &raw)
    }

    /// Builds a path from row-major increments (`num_steps × dim`). Node
    /// values are the left-to-right prefix sums; stored increments are
    /// their differences and may differ from `increments` by rounding.
    pub fn from_increments(step: f64, dim: usize, increments: &[f64]) -> Result<Self> {
        if dim == 0 || !increments.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} increments do not split into rows of {dim}",
                increments.len()
            )));
        }
        let num_steps = increments.len() / dim;
        validate_grid(step, num_steps, dim)?;
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(invalid("increments must be finite"));
        }
        let mut values = vec![0.0; (num_steps + 1) * dim];
        for k in 0..num_steps {
            for j in 0..dim {
                values[(k + 1) * dim + j] = values[k * dim + j] + increments[k * dim + j];
            }
        }
        Ok(Self::from_values(step, num_steps, dim, values))
    }

    fn from_values(step: f64, num_steps: usize, dim: usize, values: Vec<f64>) -> Self {
        let increments = (0..num_steps * dim)
            .map(|idx| values[idx + dim] - values[idx])
            .collect();
        Self {
            step,
            num_steps,
            dim,
            values,
            increments,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.num_steps as f64
    }

    /// Row-major `N × d` increments.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// Row-major `(N + 1) × d` node values, `W(0) = 0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.num_steps).map(|k| k as f64 * self.step).collect()
    }

    /// Path on the grid of step `factor · h`, sharing every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.num_steps.is_multiple_of(factor) {
            return Err(invalid(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.num_steps
            )));
        }
        let coarse_steps = self.num_steps / factor;
        let values = (0..=coarse_steps)
            .flat_map(|k| self.value(k * factor).iter().copied())
            .collect();
        Ok(Self::from_values(
            self.step * factor as f64,
            coarse_steps,
            self.dim,
            values,
        ))
    }

    /// CSV with header `k,t,dW_1..dW_d,W_1..W_d`; row `k` carries the
    /// increment arriving at node `k` (zero on row 0).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t");
        for j in 1..=self.dim {
            let _ = write!(out, ",dW_{j}");
        }
        for j in 1..=self.dim {
            let _ = write!(out, ",W_{j}");
        }
        out.push('\n');
        for k in 0..=self.num_steps {
            let _ = write!(out, "{k},{}", crate::csv::fmt(k as f64 * self.step));
            for j in 0..self.dim {
                let dw = if k == 0 {
                    0.0
                } else {
                    self.increments[(k - 1) * self.dim + j]
                };
                let _ = write!(out, ",{}", crate::csv::fmt(dw));
            }
            for w in self.value(k) {
                let _ = write!(out, ",{}", crate::csv::fmt(*w));
            }
            out.push('\n');
        }
        out
    }
}

/// Free-function form of [`BrownianPath::generate`].
pub fn generate_path(
    seed: SeedSpec,
    step: f64,
    num_steps: usize,
    dim: usize,
) -> Result<BrownianPath> {
    BrownianPath::generate(seed, step, num_steps, dim)
}

/// Free-function form of [`BrownianPath::coarsen`].
pub fn coarsen(path: &BrownianPath, factor: usize) -> Result<BrownianPath> {
    path.coarsen(factor)
}

/// `W(t_k)` for `k = 0..=N`, row-major when `d > 1`.
pub fn brownian_values(path: &BrownianPath) -> Vec<f64> {
    path.values.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Neumaier-compensated sum, independent of the path's own prefix sums.
    fn compensated_sum(xs: &[f64]) -> f64 {
        let mut sum = 0.0;
        let mut c = 0.0;
        for &x in xs {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                c += (sum - t) + x;
            } else {
                c += (x - t) + sum;
            }
            sum = t;
        }
        sum + c
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_path(SeedSpec::new(42, 3), 0.01, 100, 2).unwrap();
        let b = generate_path(SeedSpec::new(42, 3), 0.01, 100, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_path(SeedSpec::new(42, 4), 0.01, 100, 2).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn generation_rejects_bad_grid() {
        assert!(generate_path(SeedSpec::new(0, 0), 0.0, 10, 1).is_err());
        assert!(generate_path(SeedSpec::new(0, 0), -1.0, 10, 1).is_err());
        assert!(generate_path(SeedSpec::new(0, 0), 0.1, 0, 1).is_err());
        assert!(generate_path(SeedSpec::new(0, 0), 0.1, 1, 0).is_err());
    }

    #[test]
    fn sample_moments() {
        let (h, n) = (0.01, 100_000);
        let p = generate_path(SeedSpec::new(2024, 0), h, n, 1).unwrap();
        let inc = p.increments();
        let mean = inc.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 * (h / n as f64).sqrt(), "mean {mean}");
        let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - h).abs() <= 0.05 * h, "var {var}");
    }

    #[test]
    fn brownian_values_prefix_sum() {
        let p = BrownianPath::from_increments(1.0, 1, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(brownian_values(&p), vec![0.0; 4]);
        let p = BrownianPath::from_increments(1.0, 1, &[1.0, -1.0]).unwrap();
        assert_eq!(brownian_values(&p), vec![0.0, 1.0, 0.0]);

        let p = generate_path(SeedSpec::new(5, 9), 0.001, 5000, 1).unwrap();
        let w = brownian_values(&p);
        assert_eq!(w.len(), 5001);
        assert_eq!(w[0], 0.0);
        for k in 0..5000 {
            assert_eq!(w[k + 1] - w[k], p.increments()[k]);
        }
        let total = compensated_sum(p.increments());
        assert!((w[5000] - total).abs() <= 64.0 * f64::EPSILON * w[5000].abs().max(1.0));
    }

    #[test]
    fn coarsen_cases() {
        let p = generate_path(SeedSpec::new(1, 1), 0.25, 16, 1).unwrap();
        assert_eq!(coarsen(&p, 1).unwrap(), p);

        let whole = coarsen(&p, 16).unwrap();
        assert_eq!(whole.num_steps(), 1);
        assert_eq!(whole.increments()[0], p.value(16)[0]);
        assert_eq!(whole.step(), 4.0);

        let half = coarsen(&p, 2).unwrap();
        for k in 0..=8 {
            assert_eq!(half.value(k), p.value(2 * k));
        }
        for k in 0..8 {
            let s = p.increments()[2 * k] + p.increments()[2 * k + 1];
            assert!(
                (half.increments()[k] - s).abs()
                    <= 4.0 * f64::EPSILON * p.value(16)[0].abs().max(1.0)
            );
        }
        assert!(matches!(
            coarsen(&p, 3),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(coarsen(&p, 0).is_err());
    }

    #[test]
    fn stream_correlation_is_small() {
        let n = 100_000;
        let mut a = SeedSpec::new(77, 0).normal_stream();
        let mut b = SeedSpec::new(77, 1).normal_stream();
        let xs: Vec<f64> = (0..n).map(|_| a.next_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.next_normal()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() <= 0.02, "r = {r}");
    }

    #[test]
    fn increments_pass_kolmogorov_smirnov() {
        let n = 10_000;
        let h = 0.04;
        let p = generate_path(SeedSpec::new(3, 14), h, n, 1).unwrap();
        let mut z: Vec<f64> = p.increments().iter().map(|x| x / h.sqrt()).collect();
        z.sort_by(f64::total_cmp);
        let cdf = |x: f64| 0.5 * (1.0 + crate::specfun::erf(x / std::f64::consts::SQRT_2).unwrap());
        let d = z
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        // asymptotic 0.1% critical value 1.9495 / √n
        assert!(d < 1.9495 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn csv_dump_layout() {
        let p = BrownianPath::from_increments(0.5, 2, &[1.0, 2.0, -1.0, 0.5]).unwrap();
        let csv = p.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,t,dW_1,dW_2,W_1,W_2");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,"));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coarse_nodes_equal_fine_nodes(seed in any::<u64>(), exp in 0u32..6) {
                let p = generate_path(SeedSpec::new(seed, 0), 0.1, 32, 1).unwrap();
                let m = 1usize << exp;
                let c = p.coarsen(m).unwrap();
                let wc = brownian_values(&c);
                let wf = brownian_values(&p);
                for k in 0..wc.len() {
                    prop_assert_eq!(wc[k].to_bits(), wf[m * k].to_bits());
                }
            }
        }
    }
}
