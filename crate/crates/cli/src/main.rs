//! `drcut` command-line front end.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use drcut::crossfit::{
    crossfit_curves, nuisance_error_norms, EstimatorSpec, OracleNuisances, PipelineConfig,
};
use drcut::experiment::{run_experiment, write_outputs, ExperimentConfig};
use drcut::io::{self, CurveRow};
use drcut::nuisance::{
    fit_hal_lite, fit_parametric_censoring, CensoringSurvival, HazardModel, OutcomeModel,
    Transition,
};
use drcut::pseudo::{ipcw_all, oracle_bias_diagnostic, transform_all, Variant};
use drcut::rdd::{binned_means, pair_pseudo, rdd_sensitivity, BoundarySide, RddConfig};
use drcut::sim::{observe_all, simulate_cohort, ScenarioConfig};
use drcut::smooth::{bandwidth_rule, local_linear_fit, smoother_weights, Kernel};
use drcut::truth::{solve_value_tables, TransitionHazards};
use drcut::{Error, Result};

#[derive(Parser)]
#[command(
    name = "drcut",
    version,
    about = "Doubly robust censoring unbiased transformations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an illness-death cohort and write it as long-format CSV.
    Simulate(SimulateArgs),
    /// Fit a censoring model (JSON) or an outcome model (value tables).
    FitNuisance(FitArgs),
    /// Build pseudo-outcomes for a cohort.
    Transform(TransformArgs),
    /// Local linear regression of pseudo-outcomes on the covariate.
    Regress(RegressArgs),
    /// K-fold cross-fitted estimator curves.
    Crossfit(CrossfitArgs),
    /// Fuzzy regression discontinuity on paired pseudo-outcomes.
    Rdd(RddArgs),
    /// Run a replication experiment.
    Experiment(ExperimentArgs),
    /// Bias diagnostic and nuisance error norms at one covariate value.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; the built-in scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        match &self.config {
            Some(p) => io::read_scenario(p),
            None => Ok(ScenarioConfig::default()),
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline TOML (bandwidth constant, kernel, epsilon, HAL settings).
    #[arg(long)]
    pipeline: Option<PathBuf>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.pipeline {
            Some(p) => io::read_toml(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Write full data (jumps after censoring and the censoring time).
    #[arg(long)]
    full: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CensKind {
    Oracle,
    Zero,
    Parametric,
    HalLite,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeKind {
    Oracle,
    Zero,
    HalLite,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Observed cohort CSV.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, conflicts_with = "outcome", required_unless_present = "outcome")]
    cens: Option<CensKind>,
    #[arg(long)]
    outcome: Option<OutcomeKind>,
    /// JSON for a censoring model, binary value tables for an outcome model.
    #[arg(long)]
    out: PathBuf,
    /// Also export the value tables as CSV.
    #[arg(long)]
    tables_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = ["ipcw", "dr", "oracle-dr"])]
    variant: String,
    /// Censoring model JSON, or `oracle` / `zero`.
    #[arg(long)]
    cens: Option<String>,
    /// Value tables file, or `oracle` / `zero`.
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Single evaluation point.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "grid")]
    w0: Option<f64>,
    /// Evaluation grid `lo:hi:points`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

impl GridArgs {
    fn points(&self) -> Result<Vec<f64>> {
        if let Some(w) = self.w0 {
            return Ok(vec![w]);
        }
        let spec = self.grid.as_deref().unwrap_or("-4:4:81");
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::Config(format!("grid must be lo:hi:points, got {spec:?}"));
        let [lo, hi, m] = parts.as_slice() else {
            return Err(bad());
        };
        let (lo, hi): (f64, f64) = (
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
        );
        let m: usize = m.parse().map_err(|_| bad())?;
        if m < 2 || lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(bad());
        }
        Ok(drcut::experiment::GridConfig { lo, hi, points: m }.nodes())
    }
}

#[derive(Args)]
struct RegressArgs {
    /// Pseudo-outcome CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Bandwidth; the rule `c n^(-1/4.5)` when omitted.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = PipelineConfig::default().bandwidth_c)]
    c: f64,
    #[arg(long, default_value = "epanechnikov")]
    kernel: Kernel,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrossfitArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Fold assignment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimator presets, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "dr-hal")]
    estimator: Vec<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// JSON with the fold and aggregated curves.
    #[arg(long)]
    out: PathBuf,
    /// Aggregated curve of the first estimator as CSV.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Right,
    Left,
}

#[derive(Args)]
struct RddArgs {
    /// Outcome pseudo-outcome CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Treatment pseudo-outcome CSV.
    #[arg(long)]
    treatment: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    w0: f64,
    /// One or more bandwidths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    h: Vec<f64>,
    /// Side that owns observations exactly at the threshold.
    #[arg(long, default_value = "right")]
    boundary: SideArg,
    #[arg(long, default_value_t = drcut::rdd::DEFAULT_FLOOR)]
    floor: f64,
    #[arg(long, default_value = "triangular")]
    kernel: Kernel,
    #[arg(long)]
    out: PathBuf,
    /// Binned outcome means for plotting.
    #[arg(long)]
    bins_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the sample sizes with a single n.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Cohort whose covariates define the smoother weights.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    cens: String,
    #[arg(long)]
    outcome: String,
    #[arg(long, allow_hyphen_values = true)]
    w0: f64,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    n_mc: usize,
    #[arg(long, default_value_t = 200)]
    per_point: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn oracle(scenario: &ScenarioConfig, pipeline: &PipelineConfig) -> Result<OracleNuisances> {
    OracleNuisances::new(scenario, &pipeline.table_grid(scenario), pipeline.epsilon)
}

fn load_censoring(
    spec: &str,
    scenario: &ScenarioConfig,
    epsilon: f64,
) -> Result<CensoringSurvival> {
    let model = match spec {
        "oracle" if !Path::new(spec).exists() => {
            HazardModel::oracle(Transition::Censoring, scenario)
        }
        "zero" if !Path::new(spec).exists() => HazardModel::zero(Transition::Censoring),
        path => io::read_hazard_model(Path::new(path))?,
    };
    CensoringSurvival::new(model, epsilon)
}

fn load_outcome(
    spec: &str,
    scenario: &ScenarioConfig,
    pipeline: &PipelineConfig,
) -> Result<OutcomeModel> {
    let grid = pipeline.table_grid(scenario);
    match spec {
        "oracle" if !Path::new(spec).exists() => Ok(OutcomeModel::new(
            solve_value_tables(&TransitionHazards::oracle(scenario), &grid)?,
            "oracle",
        )),
        "zero" if !Path::new(spec).exists() => Ok(OutcomeModel::new(
            solve_value_tables(&TransitionHazards::zero(), &grid)?,
            "zero",
        )),
        path => {
            let tables = io::read_tables(Path::new(path))?;
            let kind = tables.label.clone();
            Ok(OutcomeModel::new(tables, kind))
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = a.scenario.load()?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    let cohort = simulate_cohort(&scenario, a.n)?;
    let out = create(&a.out)?;
    if a.full {
        io::write_full_cohort(out, &cohort, scenario.eta)
    } else {
        io::write_observed_cohort(out, &observe_all(&cohort, scenario.eta), scenario.eta)
    }
}

fn fit_nuisance(a: FitArgs) -> Result<()> {
    let scenario = a.scenario.load()?;
    let pipeline = a.pipeline.load()?;
    let data = match &a.input {
        Some(p) => io::read_observed_cohort(p, scenario.eta)?,
        None => Vec::new(),
    };
    let needs_data = matches!(a.cens, Some(CensKind::Parametric | CensKind::HalLite))
        || matches!(a.outcome, Some(OutcomeKind::HalLite));
    if needs_data && data.is_empty() {
        return Err(Error::Config("fitting needs a cohort (--in)".into()));
    }
    if let Some(kind) = a.cens {
        let model = match kind {
            CensKind::Oracle => HazardModel::oracle(Transition::Censoring, &scenario),
            CensKind::Zero => HazardModel::zero(Transition::Censoring),
            CensKind::Parametric => fit_parametric_censoring(&data)?.model,
            CensKind::HalLite => fit_hal_lite(Transition::Censoring, &data, &pipeline.hal)?.model,
        };
        return io::write_json(&a.out, &model);
    }
    let (hazards, label) = match a.outcome.expect("clap requires one of --cens, --outcome") {
        OutcomeKind::Oracle => (TransitionHazards::oracle(&scenario), "oracle"),
        OutcomeKind::Zero => (TransitionHazards::zero(), "zero"),
        OutcomeKind::HalLite => (
            TransitionHazards {
                mu12: fit_hal_lite(Transition::HealthyToIll, &data, &pipeline.hal)?.model,
                mu13: fit_hal_lite(Transition::HealthyToDead, &data, &pipeline.hal)?.model,
                mu23: fit_hal_lite(Transition::IllToDead, &data, &pipeline.hal)?.model,
            },
            "hal-lite",
        ),
    };
    let mut tables = solve_value_tables(&hazards, &pipeline.table_grid(&scenario))?;
    tables.label = label.into();
    io::write_tables(&a.out, &tables)?;
    if let Some(p) = &a.tables_csv {
        io::write_tables_csv(create(p)?, &tables)?;
    }
    Ok(())
}

fn transform(a: TransformArgs) -> Result<()> {
    let scenario = a.scenario.load()?;
    let pipeline = a.pipeline.load()?;
    let data = io::read_observed_cohort(&a.input, scenario.eta)?;
    let variant: Variant = a.variant.parse()?;
    let (cens_spec, outcome_spec) = match variant {
        Variant::OracleDr => ("oracle".to_string(), Some("oracle".to_string())),
        _ => (
            a.cens
                .ok_or_else(|| Error::Config("--cens is required".into()))?,
            a.outcome,
        ),
    };
    let cens = load_censoring(&cens_spec, &scenario, pipeline.epsilon)?;
    let rows = match variant {
        Variant::Ipcw => ipcw_all(&data, &cens, scenario.eta),
        _ => {
            let spec =
                outcome_spec.ok_or_else(|| Error::Config("--outcome is required for dr".into()))?;
            let outcome = load_outcome(&spec, &scenario, &pipeline)?;
            transform_all(&data, variant, &cens, Some(&outcome), pipeline.quad_step)?
        }
    };
    io::write_pseudo(create(&a.out)?, &rows)
}

fn regress(a: RegressArgs) -> Result<()> {
    let rows = io::read_pseudo(&a.input)?;
    let ws: Vec<f64> = rows.iter().map(|r| r.w).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let h = match a.h {
        Some(h) => h,
        None => bandwidth_rule(ws.len(), a.c)?,
    };
    let curve = a
        .grid
        .points()?
        .into_iter()
        .map(|w0| {
            Ok(CurveRow::from_fit(
                &local_linear_fit(&ws, &ys, w0, h, a.kernel)?,
                a.level,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_curve(create(&a.out)?, &curve)
}

fn crossfit(a: CrossfitArgs) -> Result<()> {
    let scenario = a.scenario.load()?;
    let pipeline = a.pipeline.load()?;
    let data = io::read_observed_cohort(&a.input, scenario.eta)?;
    let specs = a
        .estimator
        .iter()
        .map(|e| EstimatorSpec::preset(e))
        .collect::<Result<Vec<_>>>()?;
    let grid = a.grid.points()?;
    let oracle = oracle(&scenario, &pipeline)?;
    let (curves, folds) = crossfit_curves(&data, a.k, a.seed, &specs, &grid, &oracle, &pipeline)?;
    io::write_json(
        &a.out,
        &json!({ "k": a.k, "seed": a.seed, "folds": folds, "curves": curves }),
    )?;
    if let Some(p) = &a.curve_csv {
        let c = &curves[0];
        let rows: Vec<CurveRow> = (0..grid.len())
            .map(|g| CurveRow::new(grid[g], c.estimate[g], c.se[g], a.level))
            .collect();
        io::write_curve(create(p)?, &rows)?;
    }
    Ok(())
}

fn rdd(a: RddArgs) -> Result<()> {
    let y = io::read_pseudo(&a.input)?;
    let t = io::read_pseudo(&a.treatment)?;
    let (ws, ys, as_) = pair_pseudo(&y, &t)?;
    let config = RddConfig {
        kernel: a.kernel,
        floor: a.floor,
        boundary: match a.boundary {
            SideArg::Right => BoundarySide::Right,
            SideArg::Left => BoundarySide::Left,
        },
    };
    let table = rdd_sensitivity(&ws, &ys, &as_, a.w0, &a.h, &config)?;
    let rows: Vec<_> = table
        .into_iter()
        .map(|(h, r)| match r {
            Ok(r) => json!({ "h": h, "result": r }),
            Err(e) => json!({ "h": h, "error": e.to_string(), "class": e.class() }),
        })
        .collect();
    io::write_json(&a.out, &rows)?;
    if let Some(p) = &a.bins_csv {
        let lo = ws.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = binned_means(&ws, &ys, lo, hi + 1e-9 * (hi - lo).abs().max(1.0), a.bins)?;
        let mut w = csv::Writer::from_writer(create(p)?);
        for b in bins {
            w.serialize(b)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut config: ExperimentConfig = match &a.config {
        Some(p) => io::read_toml(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = a.n {
        config.n = vec![n];
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(r) = a.replications {
        config.replications = r;
    }
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    let out = run_experiment(&config)?;
    write_outputs(&a.out, &out)?;
    for e in &out.summary.estimators {
        println!(
            "n={} {}: mean L2 {:.4} (sd {:.4}) over {} replications",
            e.n, e.estimator, e.l2_mean, e.l2_sd, e.replications
        );
    }
    if out.summary.failures > 0 {
        eprintln!(
            "{} replications failed; see replications.jsonl",
            out.summary.failures
        );
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let scenario = a.scenario.load()?;
    let pipeline = a.pipeline.load()?;
    let data = io::read_observed_cohort(&a.input, scenario.eta)?;
    let oracle = oracle(&scenario, &pipeline)?;
    let cens = load_censoring(&a.cens, &scenario, pipeline.epsilon)?;
    let outcome = load_outcome(&a.outcome, &scenario, &pipeline)?;
    let bias = oracle_bias_diagnostic(
        a.w0,
        &cens,
        &outcome.tables,
        &oracle.censoring,
        &oracle.outcome.tables,
        &scenario,
        a.n_mc,
        a.seed,
        pipeline.quad_step,
    )?;
    let ws: Vec<f64> = data.iter().map(|s| s.w).collect();
    let h = match a.h {
        Some(h) => h,
        None => bandwidth_rule(ws.len(), pipeline.bandwidth_c)?,
    };
    let weights = smoother_weights(&ws, a.w0, h, pipeline.kernel)?;
    let norms = nuisance_error_norms(
        &cens,
        &outcome.tables,
        &oracle,
        &ws,
        &weights.weights,
        a.per_point,
        a.seed,
        pipeline.quad_step,
    )?;
    io::write_json(
        &a.out,
        &json!({ "w0": a.w0, "h": h, "bias": bias, "norms": norms, "product": norms.outcome * norms.hazard }),
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::FitNuisance(a) => fit_nuisance(a),
        Command::Transform(a) => transform(a),
        Command::Regress(a) => regress(a),
        Command::Crossfit(a) => crossfit(a),
        Command::Rdd(a) => rdd(a),
        Command::Experiment(a) => experiment(a),
        Command::Diagnose(a) => diagnose(a),
    }
}

fn exit_code(class: &str) -> u8 {
    match class {
        "config" => 3,
        "parse" => 4,
        "io" => 5,
        "input" => 6,
        "fit" => 7,
        "numeric" => 8,
        "smoother" => 9,
        "rdd" => 10,
        _ => 11,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(exit_code(e.class()))
        }
    }
}
