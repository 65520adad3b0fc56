//! `svf`: fit, forecast, backtest, simulate and scan from the command line.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use svf_core::dataio::{fmt_f64, load_csv, load_model, model_to_json, write_atomic};
use svf_core::dgp::{run_study, SimulationSpec};
use svf_core::forecast::{backtest, forecast, var_from_absolute_returns, var_from_ensemble, BacktestOptions};
use svf_core::mvine::build_structure;
use svf_core::numeric::acf;
use svf_core::pipeline::{contour_scan, fit, square_grid};
use svf_core::{ErrorKind, FamilySet, FitOptions, ForecastOptions, KChoice, Matrix, PanelData, SignSearch, SvfError};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Serialize)]
#[command(name = "svf", version, about = "Factor models with M-vine copula factors")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SVF_THREADS")]
    #[serde(skip)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Estimate factors, rotation and M-vine from a panel.
    Fit(FitArgs),
    /// Monte-Carlo predictive quantiles from a fitted model.
    Forecast(ForecastArgs),
    /// Expanding-window one-step VaR backtest.
    Backtest(BacktestArgs),
    /// Run a simulation study from a JSON design.
    Simulate(SimulateArgs),
    /// Objective over a grid of rotation angles (two factors).
    Scan(ScanArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Signs {
    Exhaustive,
    Identity,
}

impl From<Signs> for SignSearch {
    fn from(s: Signs) -> Self {
        match s {
            Signs::Exhaustive => SignSearch::Exhaustive,
            Signs::Identity => SignSearch::Identity,
        }
    }
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// Panel CSV, one column per series.
    #[arg(long)]
    data: PathBuf,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// Work with absolute values of the data.
    #[arg(long)]
    absolute: bool,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of factors: `auto` or a positive integer.
    #[arg(long, default_value = "auto")]
    k: String,
    /// Largest K considered by `--k auto`.
    #[arg(long, default_value_t = 8)]
    kmax: usize,
    /// Markov order of the M-vine.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Candidate copula families: `all` or a comma list.
    #[arg(long, default_value = "all")]
    families: String,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Signs::Exhaustive)]
    signs: Signs,
    /// Keep H = I.
    #[arg(long)]
    no_rotate: bool,
    /// Fit on the raw values instead of standardized columns.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Optional CSV of multi-start results near the optimum.
    #[arg(long)]
    #[serde(skip)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.10,0.90,0.95")]
    alphas: Vec<f64>,
    /// Series (0-based) to report; all when omitted.
    #[arg(long, value_delimiter = ',')]
    series: Vec<usize>,
    /// The model describes absolute values; VaR uses the symmetric rule.
    #[arg(long)]
    absolute: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BacktestArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Number of leading rows the model was fitted on.
    #[arg(long)]
    train_end: usize,
    /// Expanding window (the only supported scheme).
    #[arg(long, default_value_t = true)]
    expanding: bool,
    /// Keep the training sample as the factor margins.
    #[arg(long)]
    fixed_margins: bool,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.10,0.90,0.95")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    series: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// JSON simulation design.
    #[arg(long)]
    spec: PathBuf,
    /// Replications (overrides the design).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "all")]
    families: String,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Master seed of the estimation starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Signs::Exhaustive)]
    signs: Signs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ScanArgs {
    #[command(flatten)]
    input: InputArgs,
    /// The two data columns are the factors themselves (no PCA step).
    #[arg(long)]
    factors: bool,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value = "all")]
    families: String,
    #[arg(long, value_enum, default_value_t = Signs::Exhaustive)]
    signs: Signs,
    /// Grid step in radians.
    #[arg(long, default_value_t = PI / 32.0)]
    step: f64,
    /// Upper end of both angle ranges in radians.
    #[arg(long, default_value_t = PI)]
    upper: f64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(SvfError),
}

impl From<SvfError> for Failure {
    fn from(e: SvfError) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn report(kind: &str, tag: &str, message: &str) {
    let js = serde_json::json!({ "error": kind, "tag": tag, "message": message });
    eprintln!("{js}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            report("usage", "usage", &e.kind().to_string());
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("usage", "threads", &e.to_string());
            return ExitCode::from(1);
        }
    }
    let hash = config_hash(&cli);
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Forecast(a) => run_forecast(a, &hash),
        Command::Backtest(a) => run_backtest(a, &hash),
        Command::Simulate(a) => run_simulate(a, &hash),
        Command::Scan(a) => run_scan(a, &hash),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            report("usage", "invalid_argument", &msg);
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", 1),
                ErrorKind::Data => ("data", 2),
                ErrorKind::Numerical => ("numerical", 3),
            };
            report(kind, e.tag(), &e.to_string());
            ExitCode::from(code)
        }
    }
}

fn config_hash(cli: &Cli) -> String {
    let js = serde_json::to_string(&cli.command).expect("config serializes");
    hex::encode(Sha256::digest(js.as_bytes()))
}

fn meta_line(seed: u64, hash: &str) -> String {
    format!("# meta: version={VERSION} seed={seed} config_sha256={hash}\n")
}

fn families(s: &str) -> CliResult<FamilySet> {
    s.parse::<FamilySet>().map_err(Failure::Core)
}

fn load_panel(input: &InputArgs) -> CliResult<PanelData> {
    let mut panel = load_csv(&input.data, !input.no_header)?;
    if input.absolute {
        panel.values.apply(|x| *x = x.abs());
    }
    Ok(panel)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).map_err(Failure::Core)
}

fn run_fit(a: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let k = match a.k.as_str() {
        "auto" => KChoice::Auto { k_max: a.kmax },
        s => match s.parse::<usize>() {
            Ok(k) if k >= 1 => KChoice::Fixed(k),
            _ => return Err(Failure::Usage(format!("--k expects `auto` or a positive integer, got {s:?}"))),
        },
    };
    let panel = load_panel(&a.input)?;
    let panel = if a.raw { panel } else { panel.standardize()? };
    let opts = FitOptions {
        k,
        p: a.p,
        families: families(&a.families)?,
        starts: a.starts,
        seed: a.seed,
        sign_search: a.signs.into(),
        rotate: !a.no_rotate,
        ..FitOptions::default()
    };
    let model = fit(&panel, &opts)?;

    for j in 0..model.k() {
        let col: Vec<f64> = model.rotated_factors.column(j).iter().copied().collect();
        let line: Vec<String> = acf(&col, 20).iter().map(|r| format!("{r:.3}")).collect();
        eprintln!("acf factor {} lags 1-20: {}", j + 1, line.join(" "));
    }
    write_file(&a.out, &model_to_json(&model)?)?;
    if let Some(path) = &a.trace {
        let mut s = String::from("start,objective,evaluations,converged,angles,signs\n");
        for t in &model.trace {
            let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "{},{},{},{},{},{}", t.start, fmt_f64(t.objective), t.evaluations, t.converged, join(&t.angles), join(&t.signs));
        }
        write_file(path, &s)?;
    }
    println!(
        "objective={:.6} K={} p={} runtime={:.2}s",
        model.objective,
        model.k(),
        model.p(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn series_or_all(series: &[usize], n: usize) -> CliResult<Vec<usize>> {
    if let Some(&bad) = series.iter().find(|&&i| i >= n) {
        return Err(Failure::Usage(format!("series index {bad} out of range (N = {n})")));
    }
    Ok(if series.is_empty() { (0..n).collect() } else { series.to_vec() })
}

fn run_forecast(a: &ForecastArgs, hash: &str) -> CliResult<()> {
    let start = Instant::now();
    let model = load_model(&a.model)?;
    let mut ens = forecast(&model, &ForecastOptions { horizon: a.horizon, n_paths: a.paths, seed: a.seed })?;
    let n = ens.n_series;
    for (idx, x) in ens.paths.iter_mut().enumerate() {
        let i = idx % n;
        *x = *x * model.stdevs[i] + model.means[i];
    }
    let series = series_or_all(&a.series, n)?;
    let mut out = meta_line(a.seed, hash);
    out.push_str("step,series,name,alpha,var\n");
    for step in 0..a.horizon {
        for &i in &series {
            for &alpha in &a.alphas {
                let var = if a.absolute {
                    var_from_absolute_returns(&ens, i, step, alpha)?
                } else {
                    if !(alpha > 0.0 && alpha < 1.0) {
                        return Err(Failure::Usage(format!("alpha must lie in (0,1), got {alpha}")));
                    }
                    var_from_ensemble(&ens, i, step, alpha)
                };
                let _ = writeln!(out, "{},{},{},{},{}", step + 1, i, model.series_names[i], alpha, fmt_f64(var));
            }
        }
    }
    write_file(&a.out, &out)?;
    println!(
        "objective={:.6} K={} p={} runtime={:.2}s",
        model.objective,
        model.k(),
        model.p(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run_backtest(a: &BacktestArgs, hash: &str) -> CliResult<()> {
    let start = Instant::now();
    if !a.expanding {
        return Err(Failure::Usage("only the expanding window is supported".into()));
    }
    let model = load_model(&a.model)?;
    let raw = load_csv(&a.input.data, !a.input.no_header)?.values;
    let train = model.rotated_factors.nrows();
    if a.train_end != train {
        return Err(Failure::Core(SvfError::DimensionMismatch { expected: train, got: a.train_end }));
    }
    let n = raw.ncols();
    if n != model.means.len() {
        return Err(Failure::Core(SvfError::DimensionMismatch { expected: model.means.len(), got: n }));
    }
    let data = Matrix::from_fn(raw.nrows(), n, |t, i| {
        let x = if a.input.absolute { raw[(t, i)].abs() } else { raw[(t, i)] };
        (x - model.means[i]) / model.stdevs[i]
    });
    let opts = BacktestOptions {
        alphas: a.alphas.clone(),
        n_paths: a.paths,
        seed: a.seed,
        fixed_margins: a.fixed_margins,
        series: series_or_all(&a.series, n)?,
        absolute: a.input.absolute,
    };
    let rows = backtest(&model, &data, &raw, &opts)?;

    let mut out = meta_line(a.seed, hash);
    out.push_str("t,series,alpha,var,realized,score,violation\n");
    for r in &rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            r.series,
            r.alpha,
            fmt_f64(r.var),
            fmt_f64(r.realized),
            fmt_f64(r.score),
            u8::from(r.violation)
        );
    }
    write_file(&a.out, &out)?;
    for &alpha in &a.alphas {
        let sel: Vec<_> = rows.iter().filter(|r| r.alpha == alpha).collect();
        let hits = sel.iter().filter(|r| r.violation).count();
        let score = sel.iter().map(|r| r.score).sum::<f64>() / sel.len().max(1) as f64;
        eprintln!("alpha {alpha}: {hits} violations in {} forecasts, mean score {score:.6}", sel.len());
    }
    println!(
        "objective={:.6} K={} p={} runtime={:.2}s",
        model.objective,
        model.k(),
        model.p(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run_simulate(a: &SimulateArgs, hash: &str) -> CliResult<()> {
    let start = Instant::now();
    let text = std::fs::read_to_string(&a.spec).map_err(SvfError::from)?;
    let mut spec: SimulationSpec = serde_json::from_str(&text).map_err(SvfError::from)?;
    if let Some(r) = a.reps {
        spec.n_reps = r;
    }
    let opts = FitOptions {
        k: KChoice::Fixed(spec.truth.k()),
        p: spec.truth.p(),
        families: families(&a.families)?,
        starts: a.starts,
        seed: a.seed,
        sign_search: a.signs.into(),
        ..FitOptions::default()
    };
    let report = run_study(&spec, &opts)?;
    let mut out = meta_line(spec.seed, hash);
    out.push_str(&report.to_csv());
    write_file(&a.out, &out)?;
    println!(
        "mean_rmse_theta={:.6} K={} p={} reps={} runtime={:.2}s",
        report.mean_theta(),
        spec.truth.k(),
        spec.truth.p(),
        spec.n_reps,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run_scan(a: &ScanArgs, hash: &str) -> CliResult<()> {
    let start = Instant::now();
    if !(a.step > 0.0 && a.upper >= 0.0) {
        return Err(Failure::Usage("--step must be positive and --upper non-negative".into()));
    }
    let panel = load_panel(&a.input)?;
    let factors = if a.factors {
        if panel.n_series() != 2 {
            return Err(Failure::Core(SvfError::DimensionMismatch { expected: 2, got: panel.n_series() }));
        }
        panel.values
    } else {
        svf_core::pca_factors(&panel.standardize()?, 2)?.factors
    };
    let grid = square_grid(a.step, a.upper);
    let pts = contour_scan(&factors, &grid, &build_structure(2, a.p)?, &families(&a.families)?, a.signs.into())?;
    let mut out = meta_line(0, hash);
    out.push_str("theta1,theta2,objective\n");
    for q in &pts {
        let _ = writeln!(out, "{},{},{}", fmt_f64(q.theta1), fmt_f64(q.theta2), fmt_f64(q.objective));
    }
    write_file(&a.out, &out)?;
    let best = pts
        .iter()
        .filter(|q| q.objective.is_finite())
        .max_by(|x, y| x.objective.total_cmp(&y.objective))
        .ok_or_else(|| SvfError::Numerical("no finite objective on the grid".into()))?;
    println!(
        "objective={:.6} K=2 p={} argmax=({:.6},{:.6}) runtime={:.2}s",
        best.objective,
        a.p,
        best.theta1,
        best.theta2,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
