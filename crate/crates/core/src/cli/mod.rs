//! The `npt` command-line tool.

pub mod io;
pub mod model;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bw_geometry::{bw_distance, GdConfig, SpdMatrix};
use crate::error::NptError;
use crate::nonparanormal::{estimate, npt_distance, RawSample};
use crate::ot_oracle::{assignment_w2, PointCloud};
use crate::quantile_space::{QuantileGrid, Support, DEFAULT_GRID_SIZE};
use crate::regression::{fit_with_supports, DistributionalDataset, Method, NptFit, PredictorTable};
use crate::simulation::{run_experiment, Scenario, ScenarioKind};

use io::{format_sig12, read_long_samples, read_matrix, read_predictors, samples_for, write_atomic};
use model::{ModelFile, PredictionBlock, PredictionFile, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, files or data. Exit code 2.
    Input(String),
    /// Numerical failure on valid input. Exit code 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<NptError> for CliError {
    fn from(e: NptError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

/// Replaces positional subject indices in an error with the subject's id.
fn with_ids(e: NptError, ids: &[String]) -> CliError {
    if let NptError::Subject { index, source } = &e {
        if let Some(id) = ids.get(*index) {
            let msg = format!("id '{id}': {source}");
            return if e.is_input_error() {
                CliError::Input(msg)
            } else {
                CliError::Numeric(msg)
            };
        }
    }
    e.into()
}

#[derive(Debug, Parser)]
#[command(name = "npt", version, about = "Fréchet regression for multivariate distributional responses")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-subject responses and save a fitted model.
    Fit(FitArgs),
    /// Predict response distributions at new predictor values.
    Predict(PredictArgs),
    /// R² with permutation p-values (Westfall–Young min-p adjusted).
    Permtest(PermtestArgs),
    /// Run a simulation scenario and write per-replicate errors.
    Simulate(SimulateArgs),
    /// Distance between two inputs.
    Distance(DistanceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with header `id,z1,...,zp`.
    #[arg(long)]
    pub predictors: PathBuf,
    /// Long-format CSV with header `id,y1,...,yd`, one row per observation.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Npt)]
    pub method: MethodArg,
    /// Added to the predictor covariance diagonal when it is singular.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// `lo,hi` support for fitted marginals; give once for all or once per
    /// marginal. Leave a side empty for no bound.
    #[arg(long, allow_hyphen_values = true)]
    pub support: Vec<String>,
    #[arg(long, default_value_t = GdConfig::default().max_iter)]
    pub max_iter: usize,
    #[arg(long, default_value_t = GdConfig::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = GdConfig::default().step)]
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Npt,
    Marginal,
    Gaussian,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Npt => Method::Npt,
            MethodArg::Marginal => Method::Marginal,
            MethodArg::Gaussian => Method::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of predictor rows; the header row is skipped.
    #[arg(long)]
    pub at: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PermtestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of permutations.
    #[arg(long = "B", default_value_t = 2000)]
    pub b: usize,
    #[arg(long, env = "NPT_SEED")]
    pub seed: u64,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// d2-linear, d2-tanh or d10.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub n: usize,
    /// Observations per subject.
    #[arg(long = "N")]
    pub big_n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, env = "NPT_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
    /// Result CSV; a `<out>.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// NPT distance between the laws estimated from two sample CSVs.
    Npt,
    /// Bures–Wasserstein distance between two square-matrix CSVs.
    Bw,
    /// Exact W2 between two equal-size point-cloud CSVs.
    W2,
}

#[derive(Debug, Clone, Args)]
pub struct DistanceArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
}

/// Parses arguments and runs the command, returning text for stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Input("--threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Input(format!("cannot start {k} threads: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

fn dispatch(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Permtest(a) => cmd_permtest(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Distance(a) => cmd_distance(a),
    }
}

fn parse_support(s: &str) -> Result<Option<Support>, CliError> {
    let bad = || CliError::Input(format!("invalid --support '{s}' (expected lo,hi)"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let side = |t: &str, default: f64| -> Result<f64, CliError> {
        let t = t.trim();
        if t.is_empty() {
            Ok(default)
        } else {
            t.parse::<f64>().ok().filter(|v| !v.is_nan()).ok_or_else(bad)
        }
    };
    let support = Support::new(side(lo, f64::NEG_INFINITY)?, side(hi, f64::INFINITY)?)?;
    Ok(Some(support))
}

fn supports_for(specs: &[String], d: usize) -> Result<Vec<Option<Support>>, CliError> {
    let parsed = specs.iter().map(|s| parse_support(s)).collect::<Result<Vec<_>, _>>()?;
    match parsed.len() {
        0 => Ok(vec![None; d]),
        1 => Ok(vec![parsed[0]; d]),
        k if k == d => Ok(parsed),
        k => Err(CliError::Input(format!("got {k} --support values for {d} marginals"))),
    }
}

fn load_fit(a: &DataArgs) -> Result<(NptFit, Vec<String>), CliError> {
    let (ids, rows) = read_predictors(&a.predictors)?;
    let samples = samples_for(&ids, read_long_samples(&a.samples)?)?;
    let grid = QuantileGrid::new(a.grid)?;
    let cfg = GdConfig {
        step: a.step,
        max_iter: a.max_iter,
        tol: a.tol,
        ..GdConfig::default()
    };
    cfg.validate()?;
    let table = PredictorTable::new(rows, a.ridge)?;
    let ds = DistributionalDataset::from_samples(table, &samples, grid).map_err(|e| with_ids(e, &ids))?;
    let supports = supports_for(&a.support, ds.dim())?;
    let fit = fit_with_supports(&ds, &cfg, a.method.into(), supports).map_err(|e| with_ids(e, &ids))?;
    Ok((fit, ids))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Numeric(format!("cannot serialize output: {e}")))
}

fn cmd_fit(a: &FitArgs) -> Result<String, CliError> {
    let (fit, ids) = load_fit(&a.data)?;
    let json = to_json(&ModelFile::from_fit(&fit, &ids)?)?;
    write_atomic(&a.out, json.as_bytes())?;
    Ok(String::new())
}

pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: invalid model file: {e}", path.display())))
}

fn cmd_predict(a: &PredictArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let fit = model.to_fit().map_err(|e| with_ids(e, &model.ids()))?;
    let p = fit.dataset().predictors().p();
    let rows = read_matrix(&a.at)?;
    let mut predictions = Vec::with_capacity(rows.len());
    for (k, z) in rows.iter().enumerate() {
        if z.len() != p {
            return Err(CliError::Input(format!(
                "{}: row {} has {} predictors, the model expects {p}",
                a.at.display(),
                k + 1,
                z.len()
            )));
        }
        let pred = fit
            .predict(z)
            .map_err(|e| CliError::from(e).prefixed(&format!("prediction row {}", k + 1)))?;
        predictions.push(PredictionBlock::new(z, &pred));
    }
    let out = PredictionFile {
        format_version: FORMAT_VERSION,
        method: fit.method(),
        probabilities: fit.dataset().grid().points(),
        predictions,
    };
    write_atomic(&a.out, to_json(&out)?.as_bytes())?;
    Ok(String::new())
}

impl CliError {
    fn prefixed(self, ctx: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{ctx}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{ctx}: {m}")),
        }
    }
}

#[derive(Debug, Serialize)]
struct ComponentRow {
    component: String,
    r2: f64,
    raw_p: f64,
    adjusted_p: f64,
}

#[derive(Debug, Serialize)]
struct PermtestReport {
    method: Method,
    seed: u64,
    permutations: usize,
    replicates: usize,
    failed_replicates: usize,
    global_r2: f64,
    components: Vec<ComponentRow>,
}

fn cmd_permtest(a: &PermtestArgs) -> Result<String, CliError> {
    let (fit, ids) = load_fit(&a.data)?;
    let report = fit.permutation_test(a.b, a.seed).map_err(|e| with_ids(e, &ids))?;
    let inf = report
        .inference
        .as_ref()
        .ok_or_else(|| CliError::Numeric("permutation inference missing".into()))?;
    let mut names: Vec<String> = (1..=report.marginal.len()).map(|j| format!("y{j}")).collect();
    if report.latent.is_some() {
        names.push("latent".into());
    }
    let components = names
        .into_iter()
        .zip(report.components())
        .zip(inf.raw_p.iter().zip(&inf.adjusted_p))
        .map(|((component, r2), (&raw_p, &adjusted_p))| ComponentRow {
            component,
            r2,
            raw_p,
            adjusted_p,
        })
        .collect();
    let out = PermtestReport {
        method: fit.method(),
        seed: a.seed,
        permutations: a.b,
        replicates: inf.replicates,
        failed_replicates: inf.failed_replicates,
        global_r2: report.global,
        components,
    };
    let json = to_json(&out)?;
    match &a.out {
        Some(path) => {
            write_atomic(path, json.as_bytes())?;
            Ok(String::new())
        }
        None => Ok(json),
    }
}

#[derive(Debug, Serialize)]
struct SimulationMeta<'a> {
    scenario: String,
    settings: &'a Scenario,
    rows: usize,
    failed_replicates: usize,
    failures: &'a [crate::simulation::ReplicateFailure],
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let mut s = Scenario::new(kind, a.n, a.big_n, a.reps, a.seed)?;
    s.n_test = a.n_test;
    s.grid = a.grid;
    s.validate()?;
    let result = run_experiment(&s)?;
    let mut csv = String::from("rep,method,mspe_marg,mspe_corr\n");
    for r in &result.rows {
        csv.push_str(&format!("{},{},{:?},{:?}\n", r.rep, r.method, r.mspe_marg, r.mspe_corr));
    }
    let meta = SimulationMeta {
        scenario: kind.to_string(),
        settings: &s,
        rows: result.rows.len(),
        failed_replicates: result.failures.len(),
        failures: &result.failures,
    };
    write_atomic(&a.out, csv.as_bytes())?;
    write_atomic(&sidecar_path(&a.out), to_json(&meta)?.as_bytes())?;
    Ok(String::new())
}

fn cmd_distance(a: &DistanceArgs) -> Result<String, CliError> {
    let d = match a.metric {
        Metric::Npt => {
            let grid = QuantileGrid::new(a.grid)?;
            let load = |p: &Path| -> Result<_, CliError> {
                let s = RawSample::from_rows(&read_matrix(p)?)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                estimate(&s, grid).map_err(|e| CliError::from(e).prefixed(&p.display().to_string()))
            };
            npt_distance(&load(&a.a)?, &load(&a.b)?)?
        }
        Metric::Bw => {
            let load = |p: &Path| -> Result<_, CliError> {
                SpdMatrix::from_rows(&read_matrix(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
            };
            bw_distance(&load(&a.a)?, &load(&a.b)?)?
        }
        Metric::W2 => {
            let load = |p: &Path| -> Result<_, CliError> {
                PointCloud::from_rows(&read_matrix(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
            };
            assignment_w2(&load(&a.a)?, &load(&a.b)?)?
        }
    };
    Ok(format_sig12(d) + "\n")
}
