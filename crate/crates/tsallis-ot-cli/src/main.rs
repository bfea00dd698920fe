//! Batch front end for the Tsallis-regularized transport library.
//!
//! Measures travel as JSON files (`{dim, atoms, weights}`), couplings as
//! CSV matrices validated against their marginals on load. Every output
//! is written atomically (temp file, then rename) and embeds or sits next
//! to a run manifest recording the subcommand, the resolved configuration,
//! input digests, the tool version, and a timestamp. Numeric CSV bodies
//! carry 17 significant digits and no timestamps, so reruns with equal
//! configurations are byte-identical at any thread count.
//!
//! Exit codes: 0 success, 1 usage or input validation failure, 2 numerical
//! failure, 3 an iterative solve that ran out of iterations (its outputs
//! are still written).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tsallis_ot::{
    build_cost, quantize_with_seed, rate_sweep, records_to_csv, shadow, sinkhorn_kl, solve_dual,
    solve_exact, summarize_sweep, CostFamily, Coupling, DiscreteMeasure, OtError, QParam,
    RateParams, Result, SolveConfig,
};

/// Environment variable holding the worker thread count for sweeps.
const THREADS_ENV: &str = "TSALLIS_OT_THREADS";

#[derive(Parser)]
#[command(
    name = "tsallis-ot",
    version,
    about = "Tsallis-regularized optimal transport on discrete measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one regularized (or, at epsilon 0, exact) transport problem
    Solve(SolveArgs),
    /// Sweep a geometric grid of strengths and record gaps vs envelopes
    Sweep(SweepArgs),
    /// Compress a measure to a fixed atom budget
    Quantize(QuantizeArgs),
    /// Push a coupling onto new marginals and audit the move
    ShadowCheck(ShadowCheckArgs),
    /// Tabulate gaps for several divergence orders side by side
    Compare(CompareArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CostKind {
    /// c(x, y) = sum_k |x_k - y_k|
    L1,
    /// c(x, y) = |x - y|^2
    L2sq,
}

impl CostKind {
    fn family(self) -> CostFamily {
        match self {
            CostKind::L1 => CostFamily::L1Sum,
            CostKind::L2sq => CostFamily::LpPower(2.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CostKind::L1 => "l1",
            CostKind::L2sq => "l2sq",
        }
    }
}

/// Geometric strength grid `start * ratio^k` for `k = 0..count`.
#[derive(Clone, Debug)]
struct EpsGrid {
    start: f64,
    ratio: f64,
    count: usize,
}

impl EpsGrid {
    fn eps(&self) -> Vec<f64> {
        (0..self.count)
            .map(|k| self.start * self.ratio.powi(k as i32))
            .collect()
    }

    fn as_json(&self) -> serde_json::Value {
        serde_json::json!({
            "start": self.start,
            "ratio": self.ratio,
            "count": self.count,
        })
    }
}

fn parse_grid(text: &str) -> std::result::Result<EpsGrid, String> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(String::from("expected start:ratio:count, e.g. 0.1:0.5:7"));
    }
    let start: f64 = parts[0].parse().map_err(|e| format!("bad start: {e}"))?;
    let ratio: f64 = parts[1].parse().map_err(|e| format!("bad ratio: {e}"))?;
    let count: usize = parts[2].parse().map_err(|e| format!("bad count: {e}"))?;
    if !(start > 0.0) || !start.is_finite() {
        return Err(format!("start must be positive and finite, got {start}"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(format!("ratio must lie in (0, 1), got {ratio}"));
    }
    if count == 0 {
        return Err(String::from("count must be at least 1"));
    }
    Ok(EpsGrid { start, ratio, count })
}

#[derive(Args)]
struct SolveArgs {
    /// Divergence order, q >= 1
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Regularization strength; 0 solves the unregularized program
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = CostKind::L1)]
    cost: CostKind,
    /// First marginal, measure JSON
    #[arg(long)]
    mu: PathBuf,
    /// Second marginal, measure JSON
    #[arg(long)]
    nu: PathBuf,
    /// Duality gap target, relative to the value scale
    #[arg(long, default_value_t = 1e-6)]
    tol_gap: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Report JSON path; the coupling CSV lands next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// First marginal, measure JSON
    #[arg(long)]
    mu: PathBuf,
    /// Second marginal, measure JSON
    #[arg(long)]
    nu: PathBuf,
    #[arg(long, value_enum, default_value_t = CostKind::L1)]
    cost: CostKind,
    /// Strength grid as start:ratio:count, e.g. 0.1:0.5:7
    #[arg(long, value_parser = parse_grid)]
    grid: EpsGrid,
    /// Divergence order, q >= 1
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Quantization exponent of the marginals, beta >= 1
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Cost Lipschitz constant entering the upper envelope
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    /// Quantization constant entering the upper envelope
    #[arg(long, default_value_t = 0.25)]
    quant_const: f64,
    /// Marginal dimension entering the rate exponent
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Grid points below this strength are excluded from band checks
    #[arg(long, default_value_t = 0.0)]
    band_floor: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_gap: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Records CSV path; manifest and summary JSON land next to it
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON path (default: {out stem}.summary.json)
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Measure JSON to compress
    #[arg(long = "in")]
    input: PathBuf,
    /// Atom budget
    #[arg(long)]
    n: usize,
    /// Wasserstein order of the compression error
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Offset for the multi-start initialization (dimension two and up)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quantized measure JSON path; the report lands next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShadowCheckArgs {
    /// Coupling CSV, validated against --mu1 and --mu2
    #[arg(long)]
    pi: PathBuf,
    /// First marginal of the coupling, measure JSON
    #[arg(long)]
    mu1: PathBuf,
    /// Second marginal of the coupling, measure JSON
    #[arg(long)]
    mu2: PathBuf,
    /// New first marginal; omitted means the first side stays put
    #[arg(long)]
    target1: Option<PathBuf>,
    /// New second marginal, measure JSON
    #[arg(long)]
    target2: PathBuf,
    /// Wasserstein order of the transport legs
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Divergence order, q >= 1
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Report JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// First marginal, measure JSON
    #[arg(long)]
    mu: PathBuf,
    /// Second marginal, measure JSON
    #[arg(long)]
    nu: PathBuf,
    #[arg(long, value_enum, default_value_t = CostKind::L1)]
    cost: CostKind,
    /// Divergence order; repeat the flag for one gap column per order
    #[arg(long = "q", required = true)]
    q: Vec<f64>,
    /// Strength grid as start:ratio:count, e.g. 0.1:0.5:7
    #[arg(long, value_parser = parse_grid)]
    grid: EpsGrid,
    #[arg(long, default_value_t = 1e-6)]
    tol_gap: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Gap table CSV path; the manifest lands next to it
    #[arg(long)]
    out: PathBuf,
}

// ====== manifest and file plumbing ======

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    version: &'static str,
    timestamp: String,
}

impl RunManifest {
    fn gather(
        subcommand: &'static str,
        config: serde_json::Value,
        inputs: &[&Path],
    ) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for path in inputs {
            digests.insert(path.display().to_string(), sha256_hex(path)?);
        }
        Ok(RunManifest {
            subcommand,
            config,
            inputs: digests,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })
    }
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).map_err(|e| OtError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(2 * digest.len());
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| OtError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Prefixes an error message with the file it came from.
fn located(path: &Path, err: OtError) -> OtError {
    let at = path.display();
    match err {
        OtError::Domain(m) => OtError::Domain(format!("{at}: {m}")),
        OtError::Usage(m) => OtError::Usage(format!("{at}: {m}")),
        OtError::Numerical(m) => OtError::Numerical(format!("{at}: {m}")),
    }
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    DiscreteMeasure::from_json(&read_text(path)?).map_err(|e| located(path, e))
}

/// Writes via a temp file in the target directory followed by a rename,
/// so readers never observe a half-written output.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| OtError::Usage(format!("output path {} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let fail = |e: std::io::Error| OtError::Usage(format!("cannot write {}: {e}", path.display()));
    fs::write(&tmp, contents).map_err(fail)?;
    fs::rename(&tmp, path).map_err(fail)
}

/// `report.json` with suffix `coupling.csv` becomes `report.coupling.csv`
/// next to it.
fn sibling(path: &Path, suffix: &str) -> Result<PathBuf> {
    let stem = path
        .file_stem()
        .ok_or_else(|| OtError::Usage(format!("output path {} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    Ok(path.with_file_name(format!("{stem}.{suffix}")))
}

fn render_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| OtError::Numerical(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    Ok(text)
}

// ====== subcommands ======

#[derive(Serialize)]
struct SolveOutput<'a> {
    method: &'static str,
    primal_value: f64,
    dual_value: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
    coupling: String,
    manifest: &'a RunManifest,
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    if !(args.epsilon >= 0.0) || !args.epsilon.is_finite() {
        return Err(OtError::Usage(format!(
            "epsilon must be finite and >= 0, got {}",
            args.epsilon
        )));
    }
    let q = QParam::new(args.q)?;
    let mu = load_measure(&args.mu)?;
    let nu = load_measure(&args.nu)?;
    let cost = build_cost(&mu, &nu, args.cost.family())?;

    let (coupling, method, primal_value, dual_value, gap, iterations, converged);
    if args.epsilon == 0.0 {
        let solution = solve_exact(&cost, &mu, &nu)?;
        method = "exact_lp";
        primal_value = solution.value;
        dual_value = solution.value;
        gap = 0.0;
        iterations = 0;
        converged = true;
        coupling = solution.coupling;
    } else {
        let cfg = SolveConfig::new(q, args.epsilon)?
            .with_tol_gap(args.tol_gap)?
            .with_max_iter(args.max_iter)?;
        let report = solve_dual(&cost, &mu, &nu, &cfg)?;
        method = "dual_ascent";
        primal_value = report.primal_value;
        dual_value = report.dual_value;
        gap = report.gap;
        iterations = report.iterations;
        converged = report.converged;
        coupling = report.coupling;
    }

    let coupling_path = sibling(&args.out, "coupling.csv")?;
    write_atomic(&coupling_path, &coupling.to_csv())?;

    let manifest = RunManifest::gather(
        "solve",
        serde_json::json!({
            "q": args.q,
            "epsilon": args.epsilon,
            "cost": args.cost.name(),
            "tol_gap": args.tol_gap,
            "max_iter": args.max_iter,
        }),
        &[&args.mu, &args.nu],
    )?;
    let output = SolveOutput {
        method,
        primal_value,
        dual_value,
        gap,
        iterations,
        converged,
        coupling: coupling_path.display().to_string(),
        manifest: &manifest,
    };
    write_atomic(&args.out, &render_json(&output)?)?;
    Ok(if converged { 0 } else { 3 })
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    slope: f64,
    r2: f64,
    band_violations: usize,
    banded_points: usize,
    records: String,
    manifest: &'a RunManifest,
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let q = QParam::new(args.q)?;
    let mu = load_measure(&args.mu)?;
    let nu = load_measure(&args.nu)?;
    let cost = build_cost(&mu, &nu, args.cost.family())?;
    let params = RateParams::new(q, args.beta, args.lipschitz, args.quant_const, args.d)?;
    let grid = args.grid.eps();
    let cfg = SolveConfig::new(q, grid[0])?
        .with_tol_gap(args.tol_gap)?
        .with_max_iter(args.max_iter)?;

    let records = rate_sweep(&mu, &nu, &cost, &params, &grid, &cfg)?;
    write_atomic(&args.out, &records_to_csv(&records))?;

    let manifest = RunManifest::gather(
        "sweep",
        serde_json::json!({
            "q": args.q,
            "beta": args.beta,
            "lipschitz": args.lipschitz,
            "quant_const": args.quant_const,
            "d": args.d,
            "cost": args.cost.name(),
            "grid": args.grid.as_json(),
            "band_floor": args.band_floor,
            "tol_gap": args.tol_gap,
            "max_iter": args.max_iter,
        }),
        &[&args.mu, &args.nu],
    )?;
    write_atomic(&sibling(&args.out, "manifest.json")?, &render_json(&manifest)?)?;

    let summary = summarize_sweep(&records, args.band_floor)?;
    let summary_path = match &args.summary {
        Some(path) => path.clone(),
        None => sibling(&args.out, "summary.json")?,
    };
    let output = SweepOutput {
        slope: summary.slope,
        r2: summary.r2,
        band_violations: summary.band_violations,
        banded_points: summary.banded_points,
        records: args.out.display().to_string(),
        manifest: &manifest,
    };
    write_atomic(&summary_path, &render_json(&output)?)?;
    Ok(if records.iter().all(|r| r.converged) { 0 } else { 3 })
}

#[derive(Serialize)]
struct QuantizeOutput<'a> {
    achieved_wp: f64,
    n: usize,
    p: f64,
    seed: u64,
    quantized: String,
    manifest: &'a RunManifest,
}

fn cmd_quantize(args: &QuantizeArgs) -> Result<i32> {
    let mu = load_measure(&args.input)?;
    let result = quantize_with_seed(&mu, args.n, args.p, args.seed)?;

    let mut measure_json = result.quantized.to_json();
    if !measure_json.ends_with('\n') {
        measure_json.push('\n');
    }
    write_atomic(&args.out, &measure_json)?;

    let manifest = RunManifest::gather(
        "quantize",
        serde_json::json!({
            "n": args.n,
            "p": args.p,
            "seed": args.seed,
        }),
        &[&args.input],
    )?;
    let output = QuantizeOutput {
        achieved_wp: result.achieved_wp,
        n: result.n,
        p: result.p,
        seed: args.seed,
        quantized: args.out.display().to_string(),
        manifest: &manifest,
    };
    write_atomic(&sibling(&args.out, "report.json")?, &render_json(&output)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct ShadowCheckOutput<'a> {
    wp_change: f64,
    split_residual: f64,
    divergence_before: f64,
    divergence_after: f64,
    contractive: bool,
    manifest: &'a RunManifest,
}

/// Exact transport leg from one marginal onto a target; the value is the
/// p-th power of the leg's Wasserstein distance.
fn optimal_leg(from: &DiscreteMeasure, to: &DiscreteMeasure, p: f64) -> Result<(Coupling, f64)> {
    let cost = build_cost(from, to, CostFamily::LpPower(p))?;
    let solution = solve_exact(&cost, from, to)?;
    Ok((solution.coupling, solution.value))
}

fn cmd_shadow_check(args: &ShadowCheckArgs) -> Result<i32> {
    if !(args.p >= 1.0) || !args.p.is_finite() {
        return Err(OtError::Usage(format!(
            "transport order must be finite and >= 1, got {}",
            args.p
        )));
    }
    let q = QParam::new(args.q)?;
    let mu1 = load_measure(&args.mu1)?;
    let mu2 = load_measure(&args.mu2)?;
    let weights = Coupling::weights_from_csv(&read_text(&args.pi)?).map_err(|e| located(&args.pi, e))?;
    let pi = Coupling::new(weights, mu1.clone(), mu2.clone()).map_err(|e| located(&args.pi, e))?;

    let (kappa2, v2) = optimal_leg(&mu2, &load_measure(&args.target2)?, args.p)?;
    let (kappa1, v1) = match &args.target1 {
        Some(path) => optimal_leg(&mu1, &load_measure(path)?, args.p)?,
        None => (Coupling::identity(&mu1), 0.0),
    };
    let result = shadow(&pi, &kappa1, &kappa2, args.p, q)?;
    let split_residual = (result.wp_change.powf(args.p) - (v1 + v2)).abs();

    let mut inputs: Vec<&Path> = vec![&args.pi, &args.mu1, &args.mu2, &args.target2];
    if let Some(path) = &args.target1 {
        inputs.push(path);
    }
    let manifest = RunManifest::gather(
        "shadow-check",
        serde_json::json!({
            "p": args.p,
            "q": args.q,
        }),
        &inputs,
    )?;
    let output = ShadowCheckOutput {
        wp_change: result.wp_change,
        split_residual,
        divergence_before: result.divergence_before,
        divergence_after: result.divergence_after,
        contractive: result.divergence_after <= result.divergence_before + 1e-9,
        manifest: &manifest,
    };
    write_atomic(&args.out, &render_json(&output)?)?;
    Ok(0)
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let orders: Vec<QParam> = args
        .q
        .iter()
        .map(|&v| QParam::new(v))
        .collect::<Result<_>>()?;
    let mu = load_measure(&args.mu)?;
    let nu = load_measure(&args.nu)?;
    let cost = build_cost(&mu, &nu, args.cost.family())?;
    let exact = solve_exact(&cost, &mu, &nu)?.value;

    let mut csv = String::from("epsilon");
    for qv in &args.q {
        csv.push_str(&format!(",gap[q={qv}]"));
    }
    csv.push('\n');
    let mut all_converged = true;
    for &eps in &args.grid.eps() {
        csv.push_str(&format!("{eps:.16e}"));
        for q in &orders {
            let cfg = SolveConfig::new(*q, eps)?
                .with_tol_gap(args.tol_gap)?
                .with_max_iter(args.max_iter)?;
            let report = if q.is_kl() {
                sinkhorn_kl(&cost, &mu, &nu, &cfg)?
            } else {
                solve_dual(&cost, &mu, &nu, &cfg)?
            };
            all_converged &= report.converged;
            csv.push_str(&format!(",{:.16e}", report.primal_value - exact));
        }
        csv.push('\n');
    }
    write_atomic(&args.out, &csv)?;

    let manifest = RunManifest::gather(
        "compare",
        serde_json::json!({
            "q": args.q,
            "cost": args.cost.name(),
            "grid": args.grid.as_json(),
            "tol_gap": args.tol_gap,
            "max_iter": args.max_iter,
        }),
        &[&args.mu, &args.nu],
    )?;
    write_atomic(&sibling(&args.out, "manifest.json")?, &render_json(&manifest)?)?;
    Ok(if all_converged { 0 } else { 3 })
}

// ====== entry point ======

fn configure_threads() -> Result<()> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let threads: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            OtError::Usage(format!("{THREADS_ENV} must be a positive integer, got {text:?}"))
        })?;
    // A pool may already exist in process-reuse scenarios; keep it then.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Quantize(args) => cmd_quantize(args),
        Command::ShadowCheck(args) => cmd_shadow_check(args),
        Command::Compare(args) => cmd_compare(args),
    });
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{err}");
            match err {
                OtError::Numerical(_) => 2,
                _ => 1,
            }
        }
    }
}

fn main() {
    std::process::exit(run());
}
