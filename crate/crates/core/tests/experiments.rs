//! The geometric Brownian motion experiments, run through the CLI entry
//! point and checked against closed forms.

use nsem::analysis::min_step_nsem;
use nsem::cli;

fn table(args: &[&str]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run_with(
        std::iter::once("nsem").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn fine_paths_track_the_exact_solution() {
    let mut agree = [0; 3];
    let mut nsem_pointwise = 0;
    for seed in 0..10 {
        let s = seed.to_string();
        let (h, rows) = table(&[
            "paths", "--mu", "-1", "--sigma", "0.1", "--T", "10", "--steps", "256", "--seed", &s,
        ]);
        let ymax = rows.iter().map(|r| r[1].abs()).fold(0.0, f64::max);
        for (j, name) in ["em", "nsem", "bim"].iter().enumerate() {
            let c = column(&h, name);
            let gap = rows.iter().map(|r| (r[c] - r[1]).abs()).fold(0.0, f64::max) / ymax;
            if gap < 0.2 {
                agree[j] += 1;
            }
        }
        let c = column(&h, "nsem");
        if rows.iter().all(|r| ((r[c] - r[1]) / r[1]).abs() < 0.2) {
            nsem_pointwise += 1;
        }
    }
    assert!(agree.iter().all(|&a| a >= 9), "{agree:?}");
    assert!(nsem_pointwise >= 9);
}

#[test]
fn coarse_em_goes_negative_while_nsem_stays_bounded() {
    let mut em_negative = 0;
    let mut nsem_bounded = 0;
    for seed in 0..10 {
        let s = seed.to_string();
        let (h, rows) = table(&[
            "paths", "--mu", "-1", "--sigma", "0.1", "--T", "10", "--steps", "4", "--seed", &s,
        ]);
        let (em, nsem) = (column(&h, "em"), column(&h, "nsem"));
        if rows.iter().any(|r| r[em] < 0.0) {
            em_negative += 1;
        }
        if rows.iter().skip(1).all(|r| r[nsem].abs() < 0.5) {
            nsem_bounded += 1;
        }
    }
    assert_eq!(em_negative, 10);
    assert!(nsem_bounded >= 9, "{nsem_bounded}");
}

#[test]
fn noiseless_nsem_column_is_exact() {
    let (h, rows) = table(&["paths", "--sigma", "0", "--steps", "7", "--schemes", "nsem"]);
    let c = column(&h, "nsem");
    for r in &rows {
        assert!(((r[c] - r[1]) / r[1]).abs() <= 1e-12, "{r:?}");
    }
}

/// `E[(1 + √h z + |√h z|) / (1 + h + |√h z|)]` for `z ~ N(0, 1)`: the mean
/// one-step factor of BIM with `c⁰ = λ = 1`, `c¹ = σ = 1`, by composite
/// Simpson on `[-12, 12]`.
fn bim_mean_factor(h: f64) -> f64 {
    let s = h.sqrt();
    let g = |z: f64| {
        let dw = s * z;
        (1.0 + dw + dw.abs()) / (1.0 + h + dw.abs()) * (-0.5 * z * z).exp()
    };
    let n = 24_000;
    let w = 24.0 / n as f64;
    let mut sum = g(-12.0) + g(12.0);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(-12.0 + i as f64 * w);
    }
    sum * w / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn expectation_at_small_step() {
    let h = 0.1;
    let (head, rows) = table(&[
        "expectation",
        "--mu",
        "-1",
        "--sigma",
        "1",
        "--h",
        "0.1",
        "--paths",
        "10000",
        "--seed",
        "4",
    ]);
    let bim_factor = bim_mean_factor(h);
    // each scheme's mean is a geometric sequence in k with a known ratio
    let ratios = [("em", 1.0 - h), ("nsem", (-h).exp()), ("bim", bim_factor)];
    for (name, ratio) in ratios {
        let (m, s) = (
            column(&head, &format!("{name}_mean")),
            column(&head, &format!("{name}_se")),
        );
        let inside = rows
            .iter()
            .enumerate()
            .filter(|(k, r)| (r[m] - ratio.powi(*k as i32)).abs() <= 3.0 * r[s] + 1e-15)
            .count();
        assert!(
            inside * 100 >= 95 * rows.len(),
            "{name}: {inside} of {}",
            rows.len()
        );
    }
    // NSEM is the only one whose mean ratio equals e^{-h}; BIM drifts well above
    assert!(bim_factor > (-h).exp() + 0.01, "{bim_factor}");
    let nsem = column(&head, "nsem_mean");
    let em = column(&head, "em_mean");
    let bim = column(&head, "bim_mean");
    assert!(rows
        .iter()
        .all(|r| (r[nsem] - r[1]).abs() <= 0.02 && (r[em] - r[1]).abs() <= 0.03));
    assert!(rows.iter().any(|r| (r[bim] - r[1]).abs() > 0.05));
}

#[test]
fn expectation_at_coarse_step() {
    let (h, rows) = table(&[
        "expectation",
        "--mu",
        "-1",
        "--sigma",
        "1",
        "--h",
        "2",
        "--paths",
        "10000",
        "--seed",
        "4",
    ]);
    let (m, s) = (column(&h, "nsem_mean"), column(&h, "nsem_se"));
    for r in &rows {
        assert!((r[m] - r[1]).abs() <= 3.0 * r[s] + 1e-15, "{r:?}");
    }
    // EM mean is (1 - h)^k = (-1)^k; the sign is resolved while the spread is small
    let em = column(&h, "em_mean");
    for (k, r) in rows.iter().enumerate().skip(1).take(3) {
        let expected = if k % 2 == 0 { 1.0 } else { -1.0 };
        assert_eq!(r[em].signum(), expected, "k={k} {}", r[em]);
    }
}

#[test]
fn noiseless_expectation_has_zero_error_bars() {
    let (h, rows) = table(&["expectation", "--sigma", "0", "--h", "1", "--paths", "50"]);
    for name in ["em_se", "nsem_se", "bim_se"] {
        let c = column(&h, name);
        assert!(rows.iter().all(|r| r[c] == 0.0));
    }
}

#[test]
fn ratio_sweep_is_monotone() {
    let (h, rows) = table(&["minstep", "--ratio-sweep", "0.05:2:40"]);
    assert_eq!(h, ["ratio", "h0_em", "h0_nsem"]);
    assert_eq!(rows.len(), 40);
    for w in rows.windows(2) {
        assert!(w[1][1] < w[0][1] && w[1][2] < w[0][2]);
    }
    assert!(rows.iter().all(|r| r[2] >= r[1]));
}

#[test]
fn invariance_grid_around_minimal_step() {
    let (lambda, sigma, eps) = (1.0, 0.5, 0.01);
    let h0 = min_step_nsem(lambda, sigma, eps).unwrap().h0;
    let grid = format!("{}:{}:9", 0.6 * h0, 1.4 * h0);
    let (h, rows) = table(&[
        "invariance",
        "--lambda",
        "1",
        "--sigma",
        "0.5",
        "--eps",
        "0.01",
        "--h-grid",
        &grid,
        "--paths",
        "2000",
        "--seed",
        "8",
    ]);
    let (p, v) = (
        column(&h, "analytic_prob"),
        column(&h, "empirical_step_violation"),
    );
    for r in &rows {
        if ((r[0] - h0) / h0).abs() <= 1e-9 {
            assert!((r[p] - (1.0 - eps)).abs() <= 1e-9, "{r:?}");
        } else {
            assert_eq!(r[p] > 1.0 - eps, r[0] < h0, "{r:?}");
        }
        let steps = (10.0 / r[0] * (1.0 + 1e-12)).floor();
        let n = 2000.0 * steps;
        let q = 1.0 - r[p];
        let se = (q * (1.0 - q) / n).sqrt();
        assert!(
            (r[v] - q).abs() <= 3.0 * se,
            "h={} violation {} vs {q} (se {se})",
            r[0],
            r[v]
        );
    }
}

#[test]
fn balanced_implicit_never_exits() {
    let (h, rows) = table(&[
        "invariance",
        "--scheme",
        "bim",
        "--sigma",
        "1",
        "--h-grid",
        "0.1:10:5",
        "--paths",
        "1000",
    ]);
    let c = column(&h, "exit_fraction");
    assert!(rows.iter().all(|r| r[c] == 0.0));
}

#[test]
fn growth_case_mean_follows_its_recursion_not_the_exponential() {
    use nsem::analysis::{mc_expectation, nsem_linear_mean};
    use nsem::model::GbmModel;
    use nsem::schemes::{Denominator, SchemeSpec};

    let (lambda, h) = (1.0, 1.0);
    let gbm = GbmModel::new(lambda, 0.5, 1.0, 5.0).unwrap();
    let denom = Denominator::exponential(lambda).unwrap();
    let series = mc_expectation(
        &gbm.to_sde(),
        &SchemeSpec::Nonstandard(denom.clone()),
        h,
        10_000,
        12,
    )
    .unwrap();
    let recursion = nsem_linear_mean(lambda, 1.0, &denom, h, 5);
    for (k, e) in series.first_component().iter().enumerate() {
        assert!(
            (e.mean - recursion[k]).abs() <= 3.0 * e.std_error + 1e-12,
            "k={k}"
        );
    }
    // 1 + λφ(h) = 2 - e^{-1} against e^1: the mean lags the exact growth
    let rel_gap = 1.0 - recursion[5] / gbm.exact_expectation(5.0).unwrap();
    assert!(rel_gap > 0.9, "{rel_gap}");
}
