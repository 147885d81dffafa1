//! Command-line front end: dataset generation, single matchings, simulation
//! batches, sensitivity analysis of saved matchings and AC plot rendering.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime or
//! infeasible problem, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use pilotmatch::acplot::{emit_ac_data, parse_ac_csv, render_svg, SvgOptions};
use pilotmatch::datagen::{generate, satt_target, Scenario};
use pilotmatch::distance::build_distances;
use pilotmatch::estimate::{satt_1k, satt_full};
use pilotmatch::harness::{run_batch, write_outputs};
use pilotmatch::models::predict_linear;
use pilotmatch::pilot::{fit_prognostic, fit_propensity, match_with_ratio, prepare_pilot};
use pilotmatch::sensitivity::{max_gamma, DEFAULT_ALPHA, DEFAULT_TOL};
use pilotmatch::{
    Dataset, FeatureSpace, Features, KValue, MatchRatio, Matching, Method, ModelSpec, PilotOptions, ScenarioSpec,
    SimConfig, RNG_ALGORITHM, VERSION,
};

pub const SEED_ENV: &str = "PILOTMATCH_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<pilotmatch::Error> for CliError {
    fn from(e: pilotmatch::Error) -> Self {
        use pilotmatch::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) => CliError::Io(msg),
            E::Csv(ref c) if c.is_io_error() => CliError::Io(msg),
            E::Infeasible(_) | E::ModelFit(_) | E::Degenerate(_) | E::EmptyArm(_) | E::MissingTruth => {
                CliError::Runtime(msg)
            }
            _ => CliError::Usage(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "pilotmatch", about = "Prognostic-score pilot matching for observational studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated dataset CSV.
    Generate(GenerateArgs),
    /// Run one matching end to end and write its artifacts.
    Match(MatchArgs),
    /// Run a simulation batch from a JSON config.
    Simulate(SimulateArgs),
    /// Compute Γ* for a saved matching.
    Sensitivity(SensitivityArgs),
    /// Render an AC plot CSV as SVG.
    Acplot(AcplotArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    /// JSON file with `scenario` and `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario name when no config is given.
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "pilot")]
    pub method: Method,
    /// Controls per treated unit, or `full`.
    #[arg(long, default_value = "1")]
    pub k: KValue,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_model, default_value = "over_specified")]
    pub model: ModelSpec,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Full matching: minimum controls per treated unit.
    #[arg(long, default_value_t = 1.0)]
    pub min_ratio: f64,
    /// Full matching: maximum controls per treated unit (unbounded if unset).
    #[arg(long)]
    pub max_ratio: Option<f64>,
    /// Artifacts are written to `<prefix>_matching.csv`, `_estimate.json`,
    /// `_ac.csv` and `_ac.svg`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides `simulation.base_seed`.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub matching: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Also write the result JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AcplotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

fn parse_model(s: &str) -> Result<ModelSpec, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("unknown model {s:?} (expected over_specified, correctly_specified or lasso)"))
}

/// `generate` config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub seed: u64,
}

/// `simulate` config file: the batch definition plus output options.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))?;
        cfg.simulation.validate()?;
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    Dataset::from_csv_str(&read_text(path)?).map_err(|e| match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<PathBuf> {
    let (mut spec, config_seed) = match &args.config {
        Some(path) => {
            let cfg: GenerateConfig = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
            (cfg.scenario, cfg.seed)
        }
        None => (ScenarioSpec::defaults(args.scenario.unwrap_or(Scenario::Base)), 0),
    };
    if let Some(rho) = args.rho {
        spec.rho = rho;
    }
    if let Some(n) = args.n {
        spec.n = n;
    }
    spec.validate()?;
    let seed = args.seed.unwrap_or(config_seed);
    let ds = generate(&spec, seed)?;
    write_text(&args.out, &ds.to_csv_string())?;
    Ok(args.out.clone())
}

/// Paths of the four `match` artifacts.
#[derive(Debug, Clone)]
pub struct MatchArtifacts {
    pub matching_csv: PathBuf,
    pub estimate_json: PathBuf,
    pub ac_csv: PathBuf,
    pub ac_svg: PathBuf,
}

pub fn cmd_match(args: &MatchArgs) -> CliResult<MatchArtifacts> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let ratio = match args.k {
        KValue::Fixed(0) => return Err(CliError::Usage("k must be at least 1".into())),
        KValue::Fixed(k) => MatchRatio::Fixed(k),
        KValue::Full => {
            MatchRatio::Full { min_ratio: args.min_ratio, max_ratio: args.max_ratio.unwrap_or(f64::INFINITY) }
        }
    };
    let ds = read_dataset(&args.data)?;
    let opts = PilotOptions { model: args.model, ..PilotOptions::default() };

    let mut pilot_units = Vec::new();
    let mut audit = serde_json::Value::Null;
    let (matching, phi_hat, psi_hat) = match args.method {
        Method::Pilot => {
            let fit = prepare_pilot(&ds, args.seed, &opts)?;
            let matching = fit.match_analysis(ratio)?;
            pilot_units = fit.split.pilot.clone();
            let run = pilotmatch::PilotRun { fit, matching };
            audit = run.audit_json(&with_suffix(&args.out_prefix, "_matching.csv").display().to_string());
            (run.matching, run.fit.phi_hat, Some(run.fit.psi_hat))
        }
        Method::Propensity => {
            let phi = predict_linear(&fit_propensity(&ds, &opts)?, &ds.x)?;
            let dm = build_distances(&ds, Features::Propensity(&phi), None)?;
            (match_with_ratio(&dm, ratio)?, phi, None)
        }
        Method::Mahalanobis => {
            let dm = build_distances(&ds, Features::Raw(opts.model.columns()), None)?;
            let matching = match_with_ratio(&dm, ratio)?;
            let phi = predict_linear(&fit_propensity(&ds, &opts)?, &ds.x)?;
            (matching, phi, None)
        }
    };
    matching.check(&ds.t)?;

    let estimate = match args.k {
        KValue::Fixed(_) => satt_1k(&matching, &ds.y)?,
        KValue::Full => satt_full(&matching, &ds.y)?,
    };
    let sensitivity = match args.k {
        KValue::Fixed(_) => match max_gamma(&matching, &ds.y, args.alpha, args.tol) {
            Ok(s) => json!(s),
            Err(e) => json!({ "error": e.to_string() }),
        },
        KValue::Full => serde_json::Value::Null,
    };

    let (phi, psi, score_source) = match &ds.truth {
        Some(truth) => (truth.phi.clone(), truth.psi.clone(), "truth"),
        None => {
            let psi = match psi_hat {
                Some(p) => p,
                None => predict_linear(&fit_prognostic(&ds, &ds.control_indices(), &opts)?, &ds.x)?,
            };
            (phi_hat, psi, "estimated")
        }
    };

    let out = MatchArtifacts {
        matching_csv: with_suffix(&args.out_prefix, "_matching.csv"),
        estimate_json: with_suffix(&args.out_prefix, "_estimate.json"),
        ac_csv: with_suffix(&args.out_prefix, "_ac.csv"),
        ac_svg: with_suffix(&args.out_prefix, "_ac.svg"),
    };
    write_text(&out.matching_csv, &matching.to_csv_string())?;

    let report = json!({
        "version": VERSION,
        "rng_algorithm": RNG_ALGORITHM,
        "data": args.data.display().to_string(),
        "method": args.method,
        "k": args.k,
        "seed": args.seed,
        "model": args.model,
        "estimate": estimate,
        "satt_target": satt_target(&ds).ok(),
        "sensitivity": sensitivity,
        "pilot": audit,
        "ac_scores": score_source,
    });
    write_text(&out.estimate_json, &(serde_json::to_string_pretty(&report).expect("json value") + "\n"))?;

    let ac = emit_ac_data(&ds.t, &phi, &psi, Some(&matching), &pilot_units)?;
    write_text(&out.ac_csv, &ac)?;
    let title = format!("{} matching, k = {}", args.method, args.k);
    let svg = render_svg(&parse_ac_csv(&ac)?, &SvgOptions { title: Some(title), ..SvgOptions::default() });
    write_text(&out.ac_svg, &svg)?;
    Ok(out)
}

/// Loads a `simulate` config and applies command-line overrides.
/// Seed precedence: flag, then environment, then config.
pub fn resolve_run_config(args: &SimulateArgs) -> CliResult<(SimConfig, PathBuf, Option<usize>)> {
    let cfg = RunConfig::from_json(&read_text(&args.config)?)?;
    let mut sim = cfg.simulation;
    if let Some(seed) = args.seed {
        sim.base_seed = seed;
    }
    let dir = args
        .out
        .clone()
        .or(cfg.out_dir)
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set out_dir".into()))?;
    let jobs = args.jobs.or(cfg.jobs);
    if jobs == Some(0) {
        return Err(CliError::Usage("jobs must be at least 1".into()));
    }
    Ok((sim, dir, jobs))
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<PathBuf> {
    let (sim, dir, jobs) = resolve_run_config(args)?;
    let out = run_batch(&sim, jobs)?;
    write_outputs(&dir, &sim, &out)?;
    let failed = out.results.iter().filter(|r| !r.succeeded()).count();
    println!("{} replicate rows ({failed} failed) in {} cells written to {}", out.results.len(), out.cells.len(), dir.display());
    Ok(dir)
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> CliResult<pilotmatch::SensitivityResult> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let ds = read_dataset(&args.data)?;
    let matching = Matching::from_csv_str(&read_text(&args.matching)?, FeatureSpace::RawCovariates)?;
    matching.check(&ds.t)?;
    let res = max_gamma(&matching, &ds.y, args.alpha, args.tol)?;
    let text = serde_json::to_string_pretty(&res).expect("json value") + "\n";
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    print!("{text}");
    Ok(res)
}

pub fn cmd_acplot(args: &AcplotArgs) -> CliResult<PathBuf> {
    let rows = parse_ac_csv(&read_text(&args.input)?)?;
    let svg = render_svg(&rows, &SvgOptions { title: args.title.clone(), ..SvgOptions::default() });
    write_text(&args.out, &svg)?;
    Ok(args.out.clone())
}

pub fn version_line() -> String {
    format!("{VERSION} (rng {RNG_ALGORITHM})")
}

fn command() -> clap::Command {
    let version: &'static str = Box::leak(version_line().into_boxed_str());
    Cli::command().version(version)
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|p| println!("wrote {}", p.display())),
        Command::Match(a) => cmd_match(a).map(|o| {
            for p in [&o.matching_csv, &o.estimate_json, &o.ac_csv, &o.ac_svg] {
                println!("wrote {}", p.display());
            }
        }),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Sensitivity(a) => cmd_sensitivity(a).map(|_| ()),
        Command::Acplot(a) => cmd_acplot(a).map(|p| println!("wrote {}", p.display())),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
