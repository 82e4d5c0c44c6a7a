//! Command-line front end. Every subcommand writes a CSV table to `--out`
//! or standard output; nothing is written until the whole table is built.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    exit_statistics, invariance_probability, mc_expectation, min_step_em, min_step_nsem,
    ratio_curve, strong_error_curve, IncrementBound, InvarianceBounds,
};
use crate::csv;
use crate::error::{invalid, Error, Result};
use crate::model::{BoxDomain, GbmModel};
use crate::rng::{BrownianPath, SeedSpec};
use crate::schemes::{integrate, BimParams, BoundFunction, Denominator, SchemeSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "nsem",
    version,
    about = "Nonstandard Euler-Maruyama experiments on geometric Brownian motion"
)]
struct Cli {
    /// File of `key=value` lines supplying flag defaults; `#` starts a comment.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One shared Brownian path through the exact solution and each scheme.
    #[command(args_override_self = true)]
    Paths(PathsArgs),
    /// Monte Carlo means and standard errors at every grid node.
    #[command(args_override_self = true)]
    Expectation(ExpectationArgs),
    /// Minimal steps for positivity of the decay equation.
    #[command(args_override_self = true)]
    Minstep(MinstepArgs),
    /// Strong error on dyadic grids and the fitted order.
    #[command(args_override_self = true)]
    Convergence(ConvergenceArgs),
    /// Analytic invariance probability against empirical violations and exits.
    #[command(args_override_self = true)]
    Invariance(InvarianceArgs),
}

#[derive(Debug, Args)]
struct SchemeArgs {
    /// BIM drift weight [default: |mu|]
    #[arg(long, allow_hyphen_values = true)]
    c0: Option<f64>,
    /// BIM noise weight [default: sigma]
    #[arg(long, allow_hyphen_values = true)]
    c1: Option<f64>,
    /// NSEM denominator rate [default: |mu|, or 1 when mu = 0]
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct PathsArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    y0: f64,
    #[arg(long = "T", default_value_t = 10.0, allow_hyphen_values = true)]
    horizon: f64,
    #[arg(long, default_value_t = 256)]
    steps: usize,
    /// Comma-separated subset of em,nsem,bim
    #[arg(long, default_value = "em,nsem,bim")]
    schemes: String,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpectationArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    y0: f64,
    #[arg(long = "T", default_value_t = 10.0, allow_hyphen_values = true)]
    horizon: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    h: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Comma-separated subset of em,nsem,bim
    #[arg(long, default_value = "em,nsem,bim")]
    schemes: String,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MinstepArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 0.01, allow_hyphen_values = true)]
    eps: f64,
    /// em, nsem or both
    #[arg(long, default_value = "both")]
    scheme: String,
    /// `lo:hi:n` grid of sigma/lambda ratios; emits a CSV table instead
    #[arg(long, value_name = "LO:HI:N")]
    ratio_sweep: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    y0: f64,
    #[arg(long = "T", default_value_t = 1.0, allow_hyphen_values = true)]
    horizon: f64,
    /// em, nsem or bim
    #[arg(long, default_value = "em")]
    scheme: String,
    #[command(flatten)]
    weights: SchemeArgs,
    #[arg(long, default_value_t = 6)]
    levels: usize,
    #[arg(long, default_value_t = 512)]
    fine_steps: usize,
    #[arg(long, default_value_t = 2_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InvarianceArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 0.01, allow_hyphen_values = true)]
    eps: f64,
    /// `lo:hi:n` grid of step sizes [default: 0.5·h0 to 2·h0 of the chosen scheme, 16 points]
    #[arg(long, value_name = "LO:HI:N")]
    h_grid: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// em, nsem or bim
    #[arg(long, default_value = "nsem")]
    scheme: String,
    #[command(flatten)]
    weights: SchemeArgs,
    #[arg(long = "T", default_value_t = 10.0, allow_hyphen_values = true)]
    horizon: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    y0: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Result of a subcommand: the table, its destination, and notes for the
/// user. `summary` goes to stdout when the table goes to a file and to
/// stderr otherwise.
struct Output {
    table: String,
    out: Option<PathBuf>,
    summary: Option<String>,
    warnings: Vec<String>,
}

impl Output {
    fn table(table: String, out: Option<PathBuf>) -> Self {
        Self {
            table,
            out,
            summary: None,
            warnings: Vec::new(),
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand, writing to
/// the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Paths(a) => cmd_paths(a),
        Command::Expectation(a) => cmd_expectation(a),
        Command::Minstep(a) => cmd_minstep(a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::Invariance(a) => cmd_invariance(a),
    };
    match result.and_then(|o| emit(o, stdout, stderr)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::RootNotFound { .. } | Error::NoConvergence(_) => {
            EXIT_NUMERIC
        }
        Error::InvalidArgument(_) | Error::Domain(_) | Error::Unsupported(_) | Error::Io(_) => {
            EXIT_USAGE
        }
    }
}

fn emit(o: Output, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    for w in &o.warnings {
        writeln!(stderr, "warning: {w}")?;
    }
    match &o.out {
        Some(path) => {
            fs::write(path, &o.table)
                .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
            if let Some(s) = &o.summary {
                writeln!(stdout, "{s}")?;
            }
        }
        None => {
            stdout.write_all(o.table.as_bytes())?;
            if let Some(s) = &o.summary {
                writeln!(stderr, "{s}")?;
            }
        }
    }
    stdout.flush()?;
    Ok(())
}

/// Splices the `key=value` lines of a `--config` file in right after the
/// subcommand name, so flags given on the command line come later and win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let tokens = read_config(&path)?;
    let mut skip_next = false;
    let mut sub = None;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let s = a.to_string_lossy();
        if s == "--config" {
            skip_next = true;
        } else if !s.starts_with('-') {
            sub = Some(i);
            break;
        }
    }
    let Some(sub) = sub else {
        return Ok(args);
    };
    let mut out = args[..=sub].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn read_config(path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key == "config" {
            return Err(invalid(format!(
                "{}:{}: invalid key '{key}'",
                path.display(),
                n + 1
            )));
        }
        tokens.push(OsString::from(format!("--{key}")));
        tokens.push(OsString::from(value));
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SchemeName {
    Em,
    Nsem,
    Bim,
}

impl SchemeName {
    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "em" => Ok(Self::Em),
            "nsem" => Ok(Self::Nsem),
            "bim" => Ok(Self::Bim),
            other => Err(invalid(format!(
                "unknown scheme '{other}', expected em, nsem or bim"
            ))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Em => "em",
            Self::Nsem => "nsem",
            Self::Bim => "bim",
        }
    }
}

/// Sorted, deduplicated scheme list, so column order never depends on flag order.
fn parse_scheme_list(s: &str) -> Result<Vec<SchemeName>> {
    let mut v = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(SchemeName::parse)
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(invalid("no scheme selected"));
    }
    Ok(v)
}

fn build_scheme(name: SchemeName, mu: f64, sigma: f64, w: &SchemeArgs) -> Result<SchemeSpec> {
    Ok(match name {
        SchemeName::Em => SchemeSpec::EulerMaruyama,
        SchemeName::Nsem => {
            let alpha = w.alpha.unwrap_or(if mu == 0.0 { 1.0 } else { mu.abs() });
            SchemeSpec::Nonstandard(Denominator::exponential(alpha)?)
        }
        SchemeName::Bim => SchemeSpec::BalancedImplicit(BimParams::new(
            w.c0.unwrap_or(mu.abs()),
            w.c1.unwrap_or(sigma),
        )?),
    })
}

/// `lo:hi:n` → `n` evenly spaced points from `lo` to `hi` inclusive.
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(invalid(format!("grid '{s}' is not of the form lo:hi:n")));
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad grid start '{lo}'")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad grid end '{hi}'")))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad grid size '{n}'")))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || n == 0 || (n == 1 && lo != hi) {
        return Err(invalid(format!(
            "grid '{s}' needs finite lo <= hi and n >= 1 (n = 1 only when lo = hi)"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

fn check_paths(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("--paths must be at least 2, got {n}")));
    }
    Ok(())
}

fn cmd_paths(a: PathsArgs) -> Result<Output> {
    let gbm = GbmModel::new(a.mu, a.sigma, a.y0, a.horizon)?;
    if a.steps == 0 {
        return Err(invalid("--steps must be at least 1"));
    }
    let names = parse_scheme_list(&a.schemes)?;
    let h = a.horizon / a.steps as f64;
    let path = BrownianPath::generate(SeedSpec::new(a.seed, 0), h, a.steps, 1)?;
    let times = path.times();
    let exact = gbm.exact_solution(path.values(), &times)?;
    let sde = gbm.to_sde();
    let mut columns = Vec::with_capacity(names.len());
    for &name in &names {
        let scheme = build_scheme(name, a.mu, a.sigma, &a.scheme)?;
        columns.push(integrate(&sde, &scheme, &path)?.states);
    }

    let mut table = String::from("t,exact");
    for name in &names {
        table.push(',');
        table.push_str(name.label());
    }
    table.push('\n');
    for k in 0..=a.steps {
        let mut row = vec![times[k], exact[k]];
        row.extend(columns.iter().map(|c| c[k]));
        table.push_str(&csv::row(&row));
    }
    Ok(Output::table(table, a.out))
}

fn cmd_expectation(a: ExpectationArgs) -> Result<Output> {
    let gbm = GbmModel::new(a.mu, a.sigma, a.y0, a.horizon)?;
    check_paths(a.paths)?;
    let names = parse_scheme_list(&a.schemes)?;
    let sde = gbm.to_sde();
    let mut warnings = Vec::new();
    let mut series = Vec::with_capacity(names.len());
    for &name in &names {
        let scheme = build_scheme(name, a.mu, a.sigma, &a.scheme)?;
        let s = mc_expectation(&sde, &scheme, a.h, a.paths, a.seed)?;
        if s.failed_paths == a.paths {
            return Err(Error::NonFinite {
                what: format!("state on every {} path", name.label()),
                step: None,
            });
        }
        if s.failed_paths > 0 {
            warnings.push(format!(
                "{}: {} of {} paths produced non-finite values and were excluded",
                name.label(),
                s.failed_paths,
                a.paths
            ));
        }
        series.push(s.first_component());
    }

    let times: Vec<f64> = (0..series[0].len()).map(|k| k as f64 * a.h).collect();
    let mut table = String::from("t,analytic");
    for name in &names {
        table.push_str(&format!(",{0}_mean,{0}_se", name.label()));
    }
    table.push('\n');
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![t, gbm.exact_expectation(t)?];
        for s in &series {
            row.push(s[k].mean);
            row.push(s[k].std_error);
        }
        table.push_str(&csv::row(&row));
    }
    let mut out = Output::table(table, a.out);
    out.warnings = warnings;
    Ok(out)
}

fn cmd_minstep(a: MinstepArgs) -> Result<Output> {
    if let Some(spec) = &a.ratio_sweep {
        let ratios = parse_grid(spec)?;
        if ratios[0] <= 0.0 {
            return Err(invalid("ratios must be positive"));
        }
        let mut table = String::from("ratio,h0_em,h0_nsem\n");
        for r in ratio_curve(a.lambda, &ratios, a.eps)? {
            table.push_str(&csv::row(&[r.ratio, r.h0_em, r.h0_nsem]));
        }
        return Ok(Output::table(table, a.out));
    }
    let line = match a.scheme.as_str() {
        "em" => format!("{}", min_step_em(a.lambda, a.sigma, a.eps)?.h0),
        "nsem" => format!("{}", min_step_nsem(a.lambda, a.sigma, a.eps)?.h0),
        "both" => format!(
            "{}, {}",
            min_step_em(a.lambda, a.sigma, a.eps)?.h0,
            min_step_nsem(a.lambda, a.sigma, a.eps)?.h0
        ),
        other => {
            return Err(invalid(format!(
                "unknown scheme '{other}', expected em, nsem or both"
            )))
        }
    };
    Ok(Output::table(line + "\n", a.out))
}

fn cmd_convergence(a: ConvergenceArgs) -> Result<Output> {
    let gbm = GbmModel::new(a.mu, a.sigma, a.y0, a.horizon)?;
    check_paths(a.paths)?;
    let scheme = build_scheme(SchemeName::parse(&a.scheme)?, a.mu, a.sigma, &a.weights)?;
    let curve = strong_error_curve(&gbm, &scheme, a.fine_steps, a.levels, a.paths, a.seed)?;

    let mut table = String::from("h,error\n");
    for (h, e) in curve.steps.iter().zip(&curve.errors) {
        table.push_str(&csv::row(&[*h, *e]));
    }
    let summary = match curve.fit {
        Some(f) => format!(
            "order {} ± {} ({} levels)",
            f.order, f.stderr, f.levels_used
        ),
        None => "order n/a: fewer than two levels with nonzero error".to_string(),
    };
    let mut out = Output::table(table, a.out);
    out.summary = Some(summary);
    if curve.failed_paths > 0 {
        out.warnings.push(format!(
            "{} of {} paths produced non-finite values and were excluded",
            curve.failed_paths, a.paths
        ));
    }
    Ok(out)
}

fn cmd_invariance(a: InvarianceArgs) -> Result<Output> {
    if !(a.lambda > 0.0 && a.lambda.is_finite()) {
        return Err(invalid(format!(
            "--lambda must be positive, got {}",
            a.lambda
        )));
    }
    let name = SchemeName::parse(&a.scheme)?;
    let gbm = GbmModel::decay(a.lambda, a.sigma, a.y0, a.horizon)?;
    check_paths(a.paths)?;
    let bounds = InvarianceBounds::gbm(a.lambda, a.sigma)?;
    // EM is the nonstandard step with the linear bound
    let bound = match name {
        SchemeName::Em => BoundFunction::Linear,
        SchemeName::Nsem | SchemeName::Bim => BoundFunction::Exponential,
    };
    let grid = match &a.h_grid {
        Some(spec) => parse_grid(spec)?,
        None => {
            let h0 = match name {
                SchemeName::Em => min_step_em(a.lambda, a.sigma, a.eps)?.h0,
                SchemeName::Nsem | SchemeName::Bim => min_step_nsem(a.lambda, a.sigma, a.eps)?.h0,
            };
            parse_grid(&format!("{}:{}:16", 0.5 * h0, 2.0 * h0))?
        }
    };
    if grid[0] <= 0.0 {
        return Err(invalid("step sizes must be positive"));
    }
    crate::analysis::alpha_of_epsilon(a.eps)?;
    let scheme = build_scheme(name, gbm.mu, a.sigma, &a.weights)?;
    let sde = gbm.to_sde();
    let domain = BoxDomain::nonnegative_orthant(1);
    let increment_bound = IncrementBound {
        bounds,
        bound: bound.clone(),
    };

    let mut table = String::from("h,analytic_prob,empirical_step_violation,exit_fraction\n");
    let mut failed = 0;
    for &h in &grid {
        let p = invariance_probability(&bounds, &bound, h)?;
        let stats = exit_statistics(
            &sde,
            &scheme,
            &domain,
            h,
            a.paths,
            a.seed,
            Some(&increment_bound),
        )?;
        failed += stats.failed_paths;
        table.push_str(&csv::row(&[
            h,
            p,
            stats.step_violation_fraction,
            stats.exit_fraction,
        ]));
    }
    let mut out = Output::table(table, a.out);
    if failed > 0 {
        out.warnings.push(format!(
            "{failed} path runs produced non-finite values and were excluded"
        ));
    }
    Ok(out)
}
