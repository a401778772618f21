//! The `divturan` command line: `bound`, `blocks`, `oracle` and `verify`.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 invalid flags or
//! input, 3 a resource limit was hit.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numtheory::{canonical_key, rooted_component};
use crate::oracle::{exact_reference_series, telescope_check};
use crate::patterns::{builtin_family, AdmissibleFamily, Builtin, VERIFIED_BUILTINS};
use crate::series::{evaluate, evaluate_with, BlockCache, SeriesEstimate, TruncationParams};
use crate::solver::{Activity, Mode, Solver};

/// Directory holding the default block cache (`blocks.tsv`) when `--cache` is absent.
pub const CACHE_DIR_VAR: &str = "DIVTURAN_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "divturan", version, about = "Certified bounds for pattern-free subsets of the divisor graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the truncated series and print the two-sided bound.
    Bound(BoundArgs),
    /// List the highest-weight blocks of a truncation.
    Blocks(BlocksArgs),
    /// Exhaustive f(n), q(n) and the telescoping check.
    Oracle(OracleArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct SeriesArgs {
    /// two-fork, r-fork:R, in-fork:R, chain:K, forest or file:PATH
    #[arg(long)]
    family: String,
    /// density, beta or pressure:Z
    #[arg(long, default_value = "density")]
    mode: String,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e8)]
    budget: f64,
    /// Block cache file (default: $DIVTURAN_CACHE_DIR/blocks.tsv if set)
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Recompute every triple in exact arithmetic (budget <= 1e4)
    #[arg(long)]
    exact_reference: bool,
}

#[derive(Debug, Args)]
struct BlocksArgs {
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    family: String,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Level::Quick)]
    level: Level,
    /// Block cache to read during the float-versus-exact suite
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Quick,
    Full,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ResourceLimit { .. } | Error::TooLarge(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Runs the command line `args` (program name first), writing results to `out`
/// and diagnostics to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Bound(a) => cmd_bound(&a, out),
        Command::Blocks(a) => cmd_blocks(&a, out),
        Command::Oracle(a) => cmd_oracle(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Parses the command-line mode names `density`, `beta` or `pressure:Z`.
pub fn parse_mode(text: &str) -> Result<Mode> {
    match text {
        "density" => Ok(Mode::Density),
        "beta" => Ok(Mode::Counting),
        _ => match text.strip_prefix("pressure:") {
            Some(z) => Ok(Mode::Partition(Activity::parse(z)?)),
            None => Err(Error::InvalidParameter(format!(
                "unknown mode {text:?} (expected density, beta or pressure:Z)"
            ))),
        },
    }
}

struct Setup {
    family: AdmissibleFamily,
    mode: Mode,
    params: TruncationParams,
    pool: rayon::ThreadPool,
}

fn setup(a: &SeriesArgs) -> Result<Setup, Failure> {
    let family = AdmissibleFamily::parse(&a.family)?;
    let mode = parse_mode(&a.mode)?;
    let params = TruncationParams::new(a.alpha, a.budget)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        builder = builder.num_threads(n as usize);
    }
    let pool = builder.build().map_err(|e| Failure {
        code: 3,
        message: format!("cannot start worker pool: {e}"),
    })?;
    Ok(Setup {
        family,
        mode,
        params,
        pool,
    })
}

fn open_cache(explicit: Option<&Path>) -> BlockCache {
    let from_env = std::env::var_os(CACHE_DIR_VAR).map(|dir| {
        let dir = PathBuf::from(dir);
        if let Err(e) = std::fs::create_dir_all(&dir) {
            log::warn!("cannot create cache directory {}: {e}", dir.display());
        }
        dir.join("blocks.tsv")
    });
    match explicit.map(Path::to_path_buf).or(from_env) {
        Some(path) => BlockCache::open(&path),
        None => BlockCache::in_memory(),
    }
}

/// Printed result of `bound`.
#[derive(Debug, Serialize)]
struct BoundOutput {
    #[serde(flatten)]
    estimate: SeriesEstimate,
    elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exp_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exp_upper: Option<f64>,
}

fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let start = Instant::now();
    let s = setup(&a.series)?;
    let mut estimate = if a.exact_reference {
        exact_estimate(&s)?
    } else {
        let cache = open_cache(a.series.cache.as_deref());
        s.pool.install(|| evaluate(&s.family, &s.mode, s.params, &cache))?
    };
    estimate.mode = a.series.mode.clone();
    let beta = matches!(s.mode, Mode::Counting);
    let output = BoundOutput {
        exp_lower: beta.then(|| estimate.lower.exp()),
        exp_upper: beta.then(|| estimate.upper.exp()),
        estimate,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&output).map_err(Error::from)? + "\n",
        Format::Csv => to_csv(&output),
    };
    out.write_all(text.as_bytes()).map_err(Error::from)?;
    Ok(())
}

// Same numbers as the float path, but every triple solved separately and all
// sums exact; `upper` is rounded from the exact value where the mode allows.
fn exact_estimate(s: &Setup) -> Result<SeriesEstimate> {
    let reference = exact_reference_series(&s.family, &s.mode, s.params)?;
    let m = s.mode.increment_bound();
    let w = reference.w_f64();
    let lower = reference.s();
    let upper = match (&reference.s_exact, &s.mode) {
        (Some(s_exact), Mode::Density) => (s_exact + (BigRational::one() - &reference.w))
            .to_f64()
            .unwrap_or(f64::NAN),
        _ => lower + m * (BigRational::one() - &reference.w).to_f64().unwrap_or(f64::NAN),
    }
    .min(m);
    let bound_violations = reference
        .groups
        .iter()
        .filter(|(rec, _)| !rec.satisfies_bounds(&s.mode))
        .count();
    Ok(SeriesEstimate {
        family: s.family.name().to_string(),
        mode: s.mode.label(),
        alpha: s.params.alpha,
        budget: s.params.budget,
        s: lower,
        w,
        m,
        lower,
        upper,
        blocks: reference.groups.len(),
        id_pairs: s.params.id_pairs().len(),
        terms: reference.terms,
        segments: reference.terms as usize,
        slack: 0.0,
        bound_violations,
    })
}

fn to_csv(o: &BoundOutput) -> String {
    let e = &o.estimate;
    let num = |x: f64| serde_json::to_string(&x).unwrap_or_default();
    let mut cols: Vec<(&str, String)> = vec![
        ("family", e.family.clone()),
        ("mode", e.mode.clone()),
        ("alpha", num(e.alpha)),
        ("budget", num(e.budget)),
        ("S", num(e.s)),
        ("W", num(e.w)),
        ("M", num(e.m)),
        ("lower", num(e.lower)),
        ("upper", num(e.upper)),
        ("blocks", e.blocks.to_string()),
        ("id_pairs", e.id_pairs.to_string()),
        ("terms", e.terms.to_string()),
        ("segments", e.segments.to_string()),
        ("slack", num(e.slack)),
        ("bound_violations", e.bound_violations.to_string()),
        ("elapsed_seconds", num(o.elapsed_seconds)),
    ];
    if let (Some(lo), Some(hi)) = (o.exp_lower, o.exp_upper) {
        cols.push(("exp_lower", num(lo)));
        cols.push(("exp_upper", num(hi)));
    }
    let quote = |v: &str| {
        if v.contains([',', '"', '\n']) {
            format!("\"{}\"", v.replace('"', "\"\""))
        } else {
            v.to_string()
        }
    };
    let header: Vec<&str> = cols.iter().map(|(k, _)| *k).collect();
    let values: Vec<String> = cols.iter().map(|(_, v)| quote(v)).collect();
    format!("{}\n{}\n", header.join(","), values.join(","))
}

fn cmd_blocks(a: &BlocksArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let s = setup(&a.series)?;
    let cache = open_cache(a.series.cache.as_deref());
    let solver = Solver::new(s.family.clone());
    let (_, mut summaries) = s.pool.install(|| evaluate_with(&solver, &s.mode, s.params, &cache))?;
    // stable: ties keep enumeration order
    summaries.sort_by(|x, y| y.weight.total_cmp(&x.weight));
    let column = match s.mode {
        Mode::Density => "g",
        Mode::Counting => "h",
        Mode::Partition(_) => "log_ratio",
    };
    let mut text = format!("key\tweight\t{column}\n");
    for b in summaries.iter().take(a.top) {
        text.push_str(&format!("{}\t{}\t{}\n", b.key, b.weight, b.increment));
    }
    out.write_all(text.as_bytes()).map_err(Error::from)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleOutput {
    n: u64,
    family: String,
    f: u32,
    q: String,
    telescope_pass: bool,
}

fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.n == 0 {
        return Err(invalid("--n must be positive"));
    }
    let family = AdmissibleFamily::parse(&a.family)?;
    let report = telescope_check(a.n, &family)?;
    let output = OracleOutput {
        n: a.n,
        family: report.family,
        f: report.f,
        q: report.q_decimal,
        telescope_pass: report.pass,
    };
    let text = serde_json::to_string_pretty(&output).map_err(Error::from)? + "\n";
    out.write_all(text.as_bytes()).map_err(Error::from)?;
    Ok(())
}

type SuiteResult = std::result::Result<String, String>;

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let full = a.level == Level::Full;
    let suites: [(&str, Box<dyn Fn() -> SuiteResult>); 5] = [
        ("weight identities", Box::new(move || suite_weights(if full { 50 } else { 20 }))),
        ("dilation", Box::new(suite_dilation)),
        ("telescoping", Box::new(move || suite_telescoping(if full { 18 } else { 10 }))),
        (
            "float vs rational",
            Box::new({
                let cache = a.cache.clone();
                move || suite_float_vs_rational(if full { 1e4 } else { 1e3 }, cache.as_deref())
            }),
        ),
        ("cache degradation", Box::new(suite_cache_degradation)),
    ];
    for (name, suite) in suites {
        let start = Instant::now();
        match suite() {
            Ok(summary) => {
                let line = format!("{name}: pass ({summary}, {:.2}s)\n", start.elapsed().as_secs_f64());
                out.write_all(line.as_bytes()).map_err(Error::from)?;
            }
            Err(detail) => {
                let line = format!("{name}: FAIL\n");
                out.write_all(line.as_bytes()).map_err(Error::from)?;
                return Err(Failure {
                    code: 1,
                    message: format!("{name}: {detail}"),
                });
            }
        }
    }
    Ok(())
}

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn suite_weights(limit: u64) -> SuiteResult {
    for i in 1..=limit {
        for d in 1..=limit {
            let sum = (i * d..(i + 1) * d).fold(BigRational::zero(), |acc, t| acc + ratio(1, t * (t + 1)));
            if sum != ratio(1, i * (i + 1) * d) {
                return Err(format!("sum over t of 1/(t(t+1)) for i={i}, d={d} is {sum}"));
            }
        }
    }
    Ok(format!("i, d <= {limit}"))
}

fn suite_dilation() -> SuiteResult {
    let mut checked = 0;
    for b in VERIFIED_BUILTINS {
        let family = builtin_family(b).map_err(|e| e.to_string())?;
        let solver = Solver::new(family);
        for (d, t) in [(1, 12), (2, 9), (3, 20), (6, 40), (5, 31)] {
            let c = rooted_component(d, t);
            for m in [2, 3, 7, 12] {
                let dilated = c.dilate(m);
                if canonical_key(&dilated) != canonical_key(&c) {
                    return Err(format!("key of component of {d} in [{d},{t}] changes under x{m}"));
                }
                for mode in [Mode::Density, Mode::Counting] {
                    let here = solver.solve_block(&c, &mode).map_err(|e| e.to_string())?;
                    let there = solver.solve_block(&dilated, &mode).map_err(|e| e.to_string())?;
                    if here.values != there.values {
                        return Err(format!("{b}: values of component of {d} in [{d},{t}] change under x{m}"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} dilations"))
}

fn suite_telescoping(max_n: u64) -> SuiteResult {
    let mut runs = 0;
    for b in VERIFIED_BUILTINS {
        let family = builtin_family(b).map_err(|e| e.to_string())?;
        for n in 1..=max_n {
            let report = telescope_check(n, &family).map_err(|e| e.to_string())?;
            if !report.pass {
                return Err(match report.first_failure {
                    Some(a) => format!("{b}, n={n}: increment at a={a} disagrees with exhaustive difference"),
                    None => format!("{b}, n={n}: sums do not telescope"),
                });
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs, n <= {max_n}"))
}

fn suite_float_vs_rational(max_budget: f64, cache: Option<&Path>) -> SuiteResult {
    let cache = open_cache(cache);
    let mut compared = 0;
    for b in VERIFIED_BUILTINS {
        let family = builtin_family(b).map_err(|e| e.to_string())?;
        for budget in [1.0, 10.0, 100.0, 1e3, 1e4].into_iter().filter(|&x| x <= max_budget) {
            let params = TruncationParams::new(10.0, budget).map_err(|e| e.to_string())?;
            for mode in [Mode::Density, Mode::Counting] {
                let float = evaluate(&family, &mode, params, &cache).map_err(|e| e.to_string())?;
                let exact = exact_reference_series(&family, &mode, params).map_err(|e| e.to_string())?;
                let (ds, dw) = ((float.s - exact.s()).abs(), (float.w - exact.w_f64()).abs());
                if ds > 1e-9 || dw > 1e-9 {
                    return Err(format!(
                        "{b} {} B={budget}: float S={} W={} vs exact S={} W={}",
                        mode.label(),
                        float.s,
                        float.w,
                        exact.s(),
                        exact.w_f64()
                    ));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} evaluations, budget <= {max_budget}"))
}

fn suite_cache_degradation() -> SuiteResult {
    let path = std::env::temp_dir().join(format!("divturan-verify-{}.tsv", std::process::id()));
    let family = builtin_family(Builtin::TwoFork).map_err(|e| e.to_string())?;
    let params = TruncationParams::new(10.0, 1e5).map_err(|e| e.to_string())?;
    let clean = evaluate(&family, &Mode::Density, params, &BlockCache::in_memory()).map_err(|e| e.to_string())?;
    let first = {
        let _ = std::fs::remove_file(&path);
        let cache = BlockCache::open(&path);
        evaluate(&family, &Mode::Density, params, &cache).map_err(|e| e.to_string())?
    };
    let mut text = std::fs::read_to_string(&path).unwrap_or_default();
    text.insert_str(0, "not a record\n\t\t\n");
    let lines = text.lines().count();
    text.push_str(&format!("{}\tdensity\t1,2,3\t1\t5\t0\t-\t-\n", family.family_hash()));
    text.push_str("deadbeef\tdensity\t1,2");
    let written = std::fs::write(&path, text);
    let reloaded = {
        let cache = BlockCache::open(&path);
        let est = evaluate(&family, &Mode::Density, params, &cache).map_err(|e| e.to_string())?;
        (est, cache.skipped_lines())
    };
    let _ = std::fs::remove_file(&path);
    written.map_err(|e| e.to_string())?;
    let (again, skipped) = reloaded;
    if first != clean || again != clean {
        return Err("estimate changed after reading a corrupted cache".into());
    }
    if skipped < 3 {
        return Err(format!("only {skipped} corrupt lines were rejected"));
    }
    Ok(format!("{skipped} corrupt lines skipped out of {}", lines + 2))
}
