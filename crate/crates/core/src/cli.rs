//! Command-line front end: `simulate`, `fit`, `estimate`, `report`, `verify`.
//!
//! Settings come from an optional TOML file (`--config`) with flags taking
//! precedence. Each subcommand writes into its own directory under `--out`
//! (`data/`, `fit/`, `estimate/`, `report/`) together with the resolved
//! configuration, and every output carries the configuration hash, the seed
//! and the crate version.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, validate_consistency, write_csv, CsvSchema, Dataset, Severity, StrataConfig, Stratum};
use crate::error::{Error, Result};
use crate::estimands::{
    itt_aggregate, itt_spce_direct, kaplan_meier, race_closed_form, race_from_draws, spce, strata_proportions,
    summarize, survival_posterior, time_grid, EffectCurve, DEFAULT_GRID_POINTS, DEFAULT_LEVEL,
};
use crate::io::{self, Meta};
use crate::likelihood::Posterior;
use crate::model::{Family, Model, PriorSpec};
use crate::sampler::{sample, HmcConfig};
use crate::simulate::{generate, preset, preset_names, write_truth_csv, SimScenario};
use crate::special::Rule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_WARNINGS: i32 = 3;

/// R-hat above this marks a fit as completed with warnings.
pub const RHAT_WARNING: f64 = 1.05;

const STANDARD_COLUMNS: [&str; 5] = ["id", "z", "d", "y", "censored"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integration {
    /// Incomplete-gamma closed form (Weibull only).
    #[default]
    Closed,
    /// Composite trapezoid rule on the fine grid.
    Trapezoid,
    /// Composite Simpson rule on the fine grid.
    Simpson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Weibull,
    Lognormal,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Weibull => Family::Weibull,
            FamilyArg::Lognormal => Family::LogNormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataBlock {
    /// Trial CSV; defaults to `<out>/data/data.csv`.
    pub path: Option<PathBuf>,
    pub standardize: bool,
    pub schema: CsvSchema,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            path: None,
            standardize: true,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub censoring_rate: Option<f64>,
    pub scenario: Option<SimScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub monotonicity: bool,
    pub exclusion_restriction: bool,
    pub family: Family,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            monotonicity: true,
            exclusion_restriction: true,
            family: Family::Weibull,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimandBlock {
    /// Upper end of the time grid; defaults to the largest observed time.
    pub t_max: Option<f64>,
    pub points: usize,
    pub integration: Integration,
    /// Intervals of the fine grid for numerical RACE.
    pub k: usize,
    /// Also write per-draw curve values.
    pub per_draw: bool,
}

impl Default for EstimandBlock {
    fn default() -> Self {
        Self {
            t_max: None,
            points: DEFAULT_GRID_POINTS,
            integration: Integration::Closed,
            k: 10_000,
            per_draw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataBlock,
    pub simulate: SimulateBlock,
    pub model: ModelBlock,
    pub prior: PriorSpec,
    pub hmc: HmcConfig,
    pub estimand: EstimandBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            data: DataBlock::default(),
            simulate: SimulateBlock::default(),
            model: ModelBlock::default(),
            prior: PriorSpec::default(),
            hmc: HmcConfig::default(),
            estimand: EstimandBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the configuration serialized with the output directory
    /// blanked, so moving a run does not change its hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn strata_config(&self) -> StrataConfig {
        StrataConfig::standard(self.model.monotonicity, self.model.exclusion_restriction)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn meta(&self) -> Result<Meta> {
        Ok(Meta::new(self.seed, self.hash()?))
    }
}

#[derive(Debug, Parser)]
#[command(name = "psurv", version, about = "Principal stratification survival analysis with HMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trial from a preset or a configured scenario.
    Simulate,
    /// Sample the posterior for a trial dataset.
    Fit,
    /// Compute survival curves and causal effects from fitted draws.
    Estimate,
    /// Assemble plot-ready panels and a summary table from estimates.
    Report,
    /// Check that hashes agree across all files of a run.
    Verify,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for simulation and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation preset name.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Trial CSV to fit.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Number of simulated units.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Rate of the exponential censoring time.
    #[arg(long = "censoring-rate", global = true)]
    pub censoring_rate: Option<f64>,
    /// Number of HMC chains.
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// Iterations per chain including warmup.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Warmup iterations per chain, discarded.
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// Fixed leapfrog step size; disables step-size adaptation.
    #[arg(long = "step-size", global = true)]
    pub step_size: Option<f64>,
    /// Tie outcome parameters across arms for never- and always-takers.
    #[arg(long, global = true, overrides_with = "no_er")]
    pub er: bool,
    /// Give every stratum-arm cell its own outcome parameters.
    #[arg(long = "no-er", global = true, overrides_with = "er")]
    pub no_er: bool,
    /// Exclude defiers.
    #[arg(long, global = true, overrides_with = "no_monotonicity")]
    pub monotonicity: bool,
    /// Keep defiers as a fourth stratum.
    #[arg(long = "no-monotonicity", global = true, overrides_with = "monotonicity")]
    pub no_monotonicity: bool,
    /// Outcome model family.
    #[arg(long, global = true, value_enum)]
    pub family: Option<FamilyArg>,
    /// How restricted mean survival is computed.
    #[arg(long, global = true, value_enum)]
    pub integration: Option<Integration>,
    /// Fine-grid intervals for numerical RACE.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Points on the estimand time grid.
    #[arg(long, global = true)]
    pub points: Option<usize>,
    /// End of the estimand time grid; defaults to the largest observed time.
    #[arg(long = "t-max", global = true)]
    pub t_max: Option<f64>,
    /// Write per-draw curve values as well as summaries.
    #[arg(long = "per-draw", global = true)]
    pub per_draw: bool,
}

fn flag_pair(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl Overrides {
    /// Load the configuration file (if any) and apply flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.preset {
            cfg.simulate.preset = Some(v.clone());
            cfg.simulate.scenario = None;
        }
        if let Some(v) = &self.data {
            cfg.data.path = Some(v.clone());
        }
        if let Some(v) = self.n {
            cfg.simulate.n = Some(v);
        }
        if let Some(v) = self.censoring_rate {
            cfg.simulate.censoring_rate = Some(v);
        }
        if let Some(v) = self.chains {
            cfg.hmc.chains = v;
        }
        if let Some(v) = self.iters {
            cfg.hmc.iterations = v;
        }
        if let Some(v) = self.warmup {
            cfg.hmc.warmup = v;
        }
        if let Some(v) = self.step_size {
            cfg.hmc.step_size = Some(v);
        }
        if let Some(v) = flag_pair(self.er, self.no_er) {
            cfg.model.exclusion_restriction = v;
        }
        if let Some(v) = flag_pair(self.monotonicity, self.no_monotonicity) {
            cfg.model.monotonicity = v;
        }
        if let Some(v) = self.family {
            cfg.model.family = v.into();
        }
        if let Some(v) = self.integration {
            cfg.estimand.integration = v;
        }
        if let Some(v) = self.k {
            cfg.estimand.k = v;
        }
        if let Some(v) = self.points {
            cfg.estimand.points = v;
        }
        if let Some(v) = self.t_max {
            cfg.estimand.t_max = Some(v);
        }
        if self.per_draw {
            cfg.estimand.per_draw = true;
        }
        cfg.hmc.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Outcome of a subcommand that did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Warnings,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::NonFinite { .. } | Error::Sampler(_) => EXIT_NUMERIC,
        _ => EXIT_USER,
    }
}

/// Parse arguments, run the subcommand and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let result = cli.overrides.resolve().and_then(|cfg| match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Estimate => cmd_estimate(&cfg),
        Command::Report => cmd_report(&cfg.out),
        Command::Verify => cmd_verify(&cfg.out),
    });
    match result {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Warnings) => EXIT_WARNINGS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    io::write_text(&dir.join("config.toml"), &cfg.to_toml()?)
}

fn resolve_scenario(cfg: &RunConfig) -> Result<SimScenario> {
    let mut s = match (&cfg.simulate.scenario, &cfg.simulate.preset) {
        (Some(s), _) => s.clone(),
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config(format!(
                "simulate needs --preset or a [simulate.scenario] table; available presets: {}",
                preset_names().join(", ")
            )))
        }
    };
    if let Some(n) = cfg.simulate.n {
        s.n = n;
    }
    if let Some(r) = cfg.simulate.censoring_rate {
        s.censoring_rate = r;
    }
    s.seed = cfg.seed;
    s.validate()?;
    Ok(s)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Status> {
    let scenario = resolve_scenario(cfg)?;
    let mut cfg = cfg.clone();
    cfg.simulate.scenario = Some(scenario.clone());
    let dir = cfg.stage_dir("data");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = cfg.meta()?;
    let (data, truth) = generate(&scenario)?;
    write_csv(&data, &dir.join("data.csv"), &meta.header_lines())?;
    write_truth_csv(&truth, &dir.join("truth.csv"), &meta.header_lines())?;
    write_config(&cfg, &dir)?;
    let events = data.units().iter().filter(|u| !u.censored).count();
    println!(
        "simulated {} units ({} observed failures) into {}",
        data.len(),
        events,
        dir.display()
    );
    Ok(Status::Ok)
}

/// Covariate columns of a CSV: everything besides the standard columns.
fn header_covariates(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(headers
        .iter()
        .filter(|h| !STANDARD_COLUMNS.contains(h))
        .map(str::to_string)
        .collect())
}

/// Load the trial data and the hash of the run that produced it, if recorded.
fn load_data(cfg: &RunConfig) -> Result<(Dataset, Option<String>)> {
    let (path, own) = match &cfg.data.path {
        Some(p) => (p.clone(), false),
        None => (cfg.stage_dir("data").join("data.csv"), true),
    };
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
        ));
    }
    let mut schema = cfg.data.schema.clone();
    if own && schema.covariates.is_empty() {
        schema.covariates = header_covariates(&path)?;
    }
    let data = load_csv(&path, &schema, cfg.data.standardize)?;
    let upstream = io::read_csv_meta(&path).ok().map(|m| m.config_hash);
    Ok((data, upstream))
}

fn build_model(cfg: &RunConfig, data: &Dataset) -> Model {
    Model::new(cfg.strata_config(), cfg.model.family, data.covariate_names().to_vec())
}

#[derive(Serialize)]
struct FitReport<'a> {
    param_names: &'a [String],
    rhat: &'a [f64],
    ess: &'a [f64],
    max_rhat: f64,
    min_ess: f64,
    divergences: &'a [usize],
    total_divergences: usize,
    warmup_divergences: &'a [usize],
    accept_stats: &'a [f64],
    step_sizes: &'a [f64],
    chains: usize,
    draws_per_chain: usize,
    layout_hash: String,
    data_diagnostics: Vec<crate::data::Diagnostic>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Status> {
    let (data, upstream) = load_data(cfg)?;
    let model = build_model(cfg, &data);
    let config = model.config().clone();
    let checks = validate_consistency(&data, &config);
    let errors: Vec<&str> = checks
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.as_str())
        .collect();
    if !errors.is_empty() {
        return Err(Error::InvalidData(errors.join("; ")));
    }
    for w in checks.iter().filter(|d| d.severity == Severity::Warning) {
        log::warn!("{}", w.message);
    }
    cfg.prior.validate()?;
    let target = Posterior::new(&data, &model, cfg.prior);
    let draws = sample(&target, &cfg.hmc)?;
    let diag = draws.diagnostics()?;

    let dir = cfg.stage_dir("fit");
    let mut meta = cfg.meta()?;
    meta.upstream_hash = upstream;
    meta.layout_hash = Some(model.layout_hash());
    io::write_draws_binary(&draws, &dir.join("draws.bin"), &meta)?;
    io::write_draws_csv(&draws, &dir.join("draws.csv"), &meta)?;
    io::write_traces_csv(&draws, &dir.join("traces.csv"), &meta)?;
    let report = FitReport {
        param_names: &diag.param_names,
        rhat: &diag.rhat,
        ess: &diag.ess,
        max_rhat: diag.max_rhat(),
        min_ess: diag.min_ess(),
        divergences: &diag.divergences,
        total_divergences: diag.total_divergences(),
        warmup_divergences: &draws.warmup_divergences,
        accept_stats: &diag.accept_stats,
        step_sizes: &diag.step_sizes,
        chains: draws.n_chains(),
        draws_per_chain: draws.draws_per_chain(),
        layout_hash: model.layout_hash(),
        data_diagnostics: checks,
    };
    io::write_json(&dir.join("diagnostics.json"), &meta, &report)?;
    write_config(cfg, &dir)?;
    println!(
        "fit {} draws: max R-hat {:.4}, min ESS {:.0}, {} divergences",
        draws.total_draws(),
        diag.max_rhat(),
        diag.min_ess(),
        diag.total_divergences()
    );
    if diag.total_divergences() > 0 || !(diag.max_rhat() <= RHAT_WARNING) {
        eprintln!(
            "warning: fit completed with {} divergent transitions and max R-hat {:.4}",
            diag.total_divergences(),
            diag.max_rhat()
        );
        return Ok(Status::Warnings);
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct IntervalSummary {
    stratum: String,
    mean: f64,
    lo: f64,
    hi: f64,
}

#[derive(Serialize)]
struct CurveExclusions {
    curve: String,
    excluded_draws: usize,
}

#[derive(Serialize)]
struct EstimateSummary {
    t_max: f64,
    points: usize,
    integration: Integration,
    k: Option<usize>,
    draws: usize,
    level: f64,
    strata_proportions: Vec<IntervalSummary>,
    exclusions: Vec<CurveExclusions>,
    itt_identity_max_abs_diff: f64,
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Status> {
    let draws_path = cfg.stage_dir("fit").join("draws.bin");
    let (draws, fit_meta) = io::read_draws_binary(&draws_path)?;
    let (data, _) = load_data(cfg)?;
    let model = build_model(cfg, &data);
    if fit_meta.layout_hash.as_deref() != Some(model.layout_hash().as_str()) {
        return Err(Error::Config(format!(
            "{} was fitted with a different parameter layout than the current configuration \
             (check --er/--no-er, --monotonicity/--no-monotonicity, --family and covariates)",
            draws_path.display()
        )));
    }
    let t_max = cfg.estimand.t_max.unwrap_or_else(|| data.max_time());
    let points = cfg.estimand.points;
    let times = time_grid(t_max, points)?;
    let mut integration = cfg.estimand.integration;
    if integration == Integration::Closed && model.family() != Family::Weibull {
        log::warn!("closed-form RACE needs the Weibull family; using the trapezoid rule");
        integration = Integration::Trapezoid;
    }

    let dir = cfg.stage_dir("estimate");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut meta = cfg.meta()?;
    meta.upstream_hash = Some(fit_meta.config_hash.clone());
    meta.layout_hash = Some(model.layout_hash());

    let strata: Vec<Stratum> = model.config().active().to_vec();
    let mut exclusions = Vec::new();
    let mut spces = Vec::new();
    let mut races = Vec::new();
    let mut all_curves = Vec::new();
    for &s in &strata {
        let c0 = survival_posterior(&data, &draws, &model, s, 0, &times)?;
        let c1 = survival_posterior(&data, &draws, &model, s, 1, &times)?;
        for c in [&c0, &c1] {
            let name = format!("survival_{}_z{}", s.name(), c.arm);
            io::write_survival_csv(&[c], &dir.join(format!("{name}.csv")), &meta)?;
            if cfg.estimand.per_draw {
                io::write_per_draw_csv(&times, &c.values, &dir.join("draws").join(format!("{name}.csv")), &meta)?;
            }
            exclusions.push(CurveExclusions {
                curve: name,
                excluded_draws: c.excluded.len(),
            });
        }
        let e = spce(&c1, &c0)?;
        io::write_effect_csv(&[&e], &dir.join(format!("spce_{}.csv", s.name())), &meta)?;
        let r = match integration {
            Integration::Closed => race_closed_form(&data, &draws, &model, s, &times)?,
            Integration::Trapezoid => {
                race_from_draws(&data, &draws, &model, s, t_max, points, cfg.estimand.k, Rule::Trapezoid)?
            }
            Integration::Simpson => {
                race_from_draws(&data, &draws, &model, s, t_max, points, cfg.estimand.k, Rule::Simpson)?
            }
        };
        io::write_effect_csv(&[&r], &dir.join(format!("race_{}.csv", s.name())), &meta)?;
        if cfg.estimand.per_draw {
            for eff in [&e, &r] {
                let name = format!("{}_{}.csv", eff.kind.name(), s.name());
                io::write_per_draw_csv(&times, &eff.values, &dir.join("draws").join(name), &meta)?;
            }
        }
        all_curves.push(c0);
        all_curves.push(c1);
        spces.push(e);
        races.push(r);
    }
    let refs: Vec<_> = all_curves.iter().collect();
    io::write_survival_csv(&refs, &dir.join("survival.csv"), &meta)?;

    let weights = strata_proportions(&data, &draws, &model)?;
    let itt_s = itt_aggregate(&spces, &weights)?;
    let itt_r = itt_aggregate(&races, &weights)?;
    io::write_effect_csv(&[&itt_s, &itt_r], &dir.join("itt.csv"), &meta)?;
    let direct = itt_spce_direct(&data, &draws, &model, &times)?;
    let identity = max_abs_diff(&itt_s, &direct);

    let mut km = Vec::new();
    for z in 0..2u8 {
        if data.arm_count(z) > 0 {
            km.push(kaplan_meier(&data, z)?);
        }
    }
    let km_refs: Vec<_> = km.iter().collect();
    io::write_km_csv(&km_refs, &dir.join("km.csv"), &meta)?;

    let props = summarize(&weights, strata.len(), DEFAULT_LEVEL);
    let summary = EstimateSummary {
        t_max,
        points,
        integration,
        k: (integration != Integration::Closed).then_some(cfg.estimand.k),
        draws: draws.total_draws(),
        level: DEFAULT_LEVEL,
        strata_proportions: strata
            .iter()
            .enumerate()
            .map(|(i, s)| IntervalSummary {
                stratum: s.name().to_string(),
                mean: props.mean[i],
                lo: props.lo[i],
                hi: props.hi[i],
            })
            .collect(),
        exclusions,
        itt_identity_max_abs_diff: identity,
    };
    io::write_json(&dir.join("summary.json"), &meta, &summary)?;
    write_config(cfg, &dir)?;
    println!("wrote estimates for {} strata into {}", strata.len(), dir.display());
    Ok(Status::Ok)
}

fn max_abs_diff(a: &EffectCurve, b: &EffectCurve) -> f64 {
    a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct CurveRow {
    key: String,
    time: f64,
    mean: f64,
    lo: f64,
    hi: f64,
}

/// Rows of a summary CSV (`..., time, mean, lo, hi`) keyed by the leading columns.
fn read_summary_rows(path: &Path, key_cols: usize) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: malformed row", path.display())))
        };
        out.push(CurveRow {
            key: (0..key_cols).filter_map(|i| rec.get(i)).collect::<Vec<_>>().join(","),
            time: num(key_cols)?,
            mean: num(key_cols + 1)?,
            lo: num(key_cols + 2)?,
            hi: num(key_cols + 3)?,
        });
    }
    Ok(out)
}

fn sorted_matches(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".csv"))
        })
        .collect();
    v.sort();
    Ok(v)
}

pub fn cmd_report(out: &Path) -> Result<Status> {
    let est = out.join("estimate");
    let summary_path = est.join("summary.json");
    let panels = if est.is_dir() { sorted_matches(&est, "survival_")? } else { Vec::new() };
    if panels.is_empty() || !summary_path.exists() {
        return Err(Error::io(
            &est,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no estimate outputs found; run `estimate` first"),
        ));
    }
    let est_meta = io::read_json_meta(&summary_path)?;
    let meta = Meta {
        upstream_hash: Some(est_meta.config_hash.clone()),
        ..est_meta.clone()
    };
    let dir = out.join("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut long = String::new();
    for p in &panels {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let panel = stem.trim_start_matches("survival_");
        let rows = read_summary_rows(p, 2)?;
        let mut body = String::new();
        for r in &rows {
            let line = format!("{panel},{},{},{},{},{}\n", r.key, r.time, r.mean, r.lo, r.hi);
            body.push_str(&line);
            long.push_str(&line);
        }
        let text = with_meta(&meta, "panel,stratum,arm,time,mean,lo,hi", &body);
        io::write_text(&dir.join(format!("panel_{panel}.csv")), &text)?;
    }
    io::write_text(&dir.join("curves_long.csv"), &with_meta(&meta, "panel,stratum,arm,time,mean,lo,hi", &long))?;

    let mut effect_rows = Vec::new();
    for prefix in ["spce_", "race_", "itt"] {
        for p in sorted_matches(&est, prefix)? {
            effect_rows.extend(read_summary_rows(&p, 2)?);
        }
    }
    let t_end = effect_rows.iter().map(|r| r.time).fold(0.0, f64::max);
    let mut csv_body = String::new();
    let mut txt = format!("{:<28} {:>10} {:>10} {:>10} {:>10}\n", "estimand,stratum", "time", "mean", "lo", "hi");
    let mut keys: Vec<&str> = effect_rows.iter().map(|r| r.key.as_str()).collect();
    keys.dedup();
    for key in keys {
        let rows: Vec<&CurveRow> = effect_rows.iter().filter(|r| r.key == key).collect();
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let target = frac * t_end;
            let Some(r) = rows
                .iter()
                .min_by(|a, b| (a.time - target).abs().total_cmp(&(b.time - target).abs()))
            else {
                continue;
            };
            csv_body.push_str(&format!("{key},{},{},{},{}\n", r.time, r.mean, r.lo, r.hi));
            txt.push_str(&format!(
                "{:<28} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                key, r.time, r.mean, r.lo, r.hi
            ));
        }
    }
    io::write_text(&dir.join("summary_table.csv"), &with_meta(&meta, "estimand,stratum,time,mean,lo,hi", &csv_body))?;
    let mut header = String::new();
    for l in meta.header_lines() {
        header.push_str(&format!("# {l}\n"));
    }
    io::write_text(&dir.join("summary_table.txt"), &(header + &txt))?;
    println!("wrote {} panels into {}", panels.len(), dir.display());
    Ok(Status::Ok)
}

fn with_meta(meta: &Meta, header: &str, body: &str) -> String {
    let mut s = String::new();
    for l in meta.header_lines() {
        s.push_str(&format!("# {l}\n"));
    }
    s.push_str(header);
    s.push('\n');
    s.push_str(body);
    s
}

fn file_meta(path: &Path) -> Result<Option<Meta>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    Ok(match ext {
        "csv" | "txt" => Some(io::read_csv_meta(path)?),
        "json" => Some(io::read_json_meta(path)?),
        "bin" => Some(io::read_draws_meta(path)?),
        _ => None,
    })
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Check hash consistency within each stage directory and across stages.
pub fn verify_run(out: &Path) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let mut stage_hash: Vec<(&str, String)> = Vec::new();
    let stages = ["data", "fit", "estimate", "report"];
    for stage in stages {
        let dir = out.join(stage);
        if !dir.is_dir() {
            continue;
        }
        let cfg_path = dir.join("config.toml");
        let mut expected = if cfg_path.exists() {
            let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
            Some(RunConfig::from_toml(&text)?.hash()?)
        } else {
            None
        };
        let mut upstreams = BTreeSet::new();
        let mut files = Vec::new();
        walk(&dir, &mut files)?;
        for f in files {
            let meta = match file_meta(&f) {
                Ok(Some(m)) => m,
                Ok(None) => continue,
                Err(e) => {
                    problems.push(format!("{}: unreadable metadata ({e})", f.display()));
                    continue;
                }
            };
            let exp = expected.get_or_insert_with(|| meta.config_hash.clone());
            if &meta.config_hash != exp {
                problems.push(format!("{}: config hash {} differs from {}", f.display(), meta.config_hash, exp));
            }
            if meta.version != io::VERSION {
                problems.push(format!("{}: written by version {}", f.display(), meta.version));
            }
            if let Some(u) = meta.upstream_hash {
                upstreams.insert(u);
            }
        }
        if let Some(prev) = stage_hash.last() {
            for u in &upstreams {
                if u != &prev.1 {
                    problems.push(format!("{stage}: upstream hash {u} does not match {} hash {}", prev.0, prev.1));
                }
            }
        }
        if upstreams.len() > 1 {
            problems.push(format!("{stage}: files disagree on their upstream hash"));
        }
        if let Some(h) = expected {
            stage_hash.push((stage, h));
        }
    }
    if stage_hash.is_empty() {
        return Err(Error::io(
            out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no run outputs found"),
        ));
    }
    Ok(problems)
}

pub fn cmd_verify(out: &Path) -> Result<Status> {
    let problems = verify_run(out)?;
    if problems.is_empty() {
        println!("{}: all hashes consistent", out.display());
        return Ok(Status::Ok);
    }
    for p in &problems {
        eprintln!("{p}");
    }
    Err(Error::Format(format!("{} hash inconsistencies", problems.len())))
}
