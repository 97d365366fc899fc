//! Replication harness: simulate, cross-fit every estimator on a covariate
//! grid, and score the curves against the ODE truth.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{
    crossfit_curves, CrossFitCurve, EstimatorSpec, OracleNuisances, PipelineConfig,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sim::{observe_all, simulate_cohort, ScenarioConfig};
use crate::stats::{mean, normal_critical, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: -4.0,
            hi: 4.0,
            points: 81,
        }
    }
}

impl GridConfig {
    pub fn nodes(&self) -> Vec<f64> {
        let m = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.lo + i as f64 * (self.hi - self.lo) / m)
            .collect()
    }

    /// Index of the node closest to `w`.
    pub fn index_of(&self, w: f64) -> usize {
        let m = (self.points - 1) as f64;
        let i = ((w - self.lo) / (self.hi - self.lo) * m).round();
        i.clamp(0.0, m) as usize
    }
}

/// Thresholds of the replication checks, fixed by pilot runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Point at which coverage and SD are compared.
    pub w0: f64,
    pub coverage_lo: f64,
    pub coverage_hi: f64,
    pub coverage_gap: f64,
    /// Allowed relative gap between the mean L2 errors of dr-oracle and dr-hal.
    pub l2_similar: f64,
    /// Both DR errors must be below this fraction of ipcw-misspec's.
    pub l2_misspec_ratio: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            w0: -1.0,
            coverage_lo: 0.85,
            coverage_hi: 0.99,
            coverage_gap: 0.05,
            l2_similar: 0.15,
            l2_misspec_ratio: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub n: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub grid: GridConfig,
    pub levels: Vec<f64>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub pipeline: PipelineConfig,
    pub checks: CheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            n: vec![5000],
            replications: 200,
            estimators: ["dr-oracle", "dr-hal", "ipcw-misspec"]
                .map(String::from)
                .to_vec(),
            k: 2,
            seed: 20240601,
            grid: GridConfig::default(),
            levels: vec![0.9, 0.95, 0.99],
            workers: 0,
            pipeline: PipelineConfig::default(),
            checks: CheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator menu is empty".into()));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2 * self.k) {
            return Err(Error::Config(format!(
                "every n must be at least 2K = {}",
                2 * self.k
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("K must be >= 2, got {}", self.k)));
        }
        let g = &self.grid;
        if g.points < 2 || !(g.lo < g.hi) || g.lo < self.scenario.w_lo || g.hi > self.scenario.w_hi
        {
            return Err(Error::Config(format!(
                "grid [{}, {}] with {} points must lie in the covariate range",
                g.lo, g.hi, g.points
            )));
        }
        if self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(Error::Config("confidence levels must lie in (0, 1)".into()));
        }
        self.specs().map(|_| ())
    }

    pub fn specs(&self) -> Result<Vec<EstimatorSpec>> {
        self.estimators
            .iter()
            .map(|e| EstimatorSpec::preset(e))
            .collect()
    }
}

/// Square root of the trapezoid integral of the squared difference.
pub fn l2_error(grid: &[f64], estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if grid.len() != estimate.len() || grid.len() != truth.len() || grid.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "grid mismatch: {} nodes, {} estimates, {} truth values",
            grid.len(),
            estimate.len(),
            truth.len()
        )));
    }
    let d2: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).powi(2))
        .collect();
    let integral: f64 = grid
        .windows(2)
        .zip(d2.windows(2))
        .map(|(w, d)| 0.5 * (w[1] - w[0]) * (d[0] + d[1]))
        .sum();
    Ok(integral.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub estimator: String,
    pub l2: f64,
    pub curve: CrossFitCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorRecord>,
    pub error: Option<String>,
}

/// Aggregates of one estimator at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub n: usize,
    pub estimator: String,
    pub replications: usize,
    pub l2_mean: f64,
    pub l2_sd: f64,
    /// Per level, the empirical coverage at each grid point.
    pub coverage: Vec<LevelCoverage>,
    /// At the check point: SD of the cross-fitted and of the fold-0 estimates.
    pub sd_crossfit: f64,
    pub sd_single_split: f64,
    pub mean_estimate: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub level: f64,
    pub by_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub check_w0: f64,
    pub failures: usize,
    pub estimators: Vec<EstimatorSummary>,
}

impl ExperimentSummary {
    pub fn get(&self, n: usize, estimator: &str) -> Option<&EstimatorSummary> {
        self.estimators
            .iter()
            .find(|e| e.n == n && e.estimator == estimator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub records: Vec<ReplicationRecord>,
    pub summary: ExperimentSummary,
}

/// Seed of replication `rep` at sample size index `ni`.
pub fn replication_seed(master: u64, ni: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(master, ni as u64), rep as u64)
}

fn run_replication(
    config: &ExperimentConfig,
    specs: &[EstimatorSpec],
    oracle: &OracleNuisances,
    grid: &[f64],
    truth: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<EstimatorRecord>> {
    let scenario = ScenarioConfig {
        seed,
        ..config.scenario.clone()
    };
    let data = observe_all(&simulate_cohort(&scenario, n)?, scenario.eta);
    let (curves, _) = crossfit_curves(
        &data,
        config.k,
        derive_seed(seed, 1),
        specs,
        grid,
        oracle,
        &config.pipeline,
    )?;
    curves
        .into_iter()
        .map(|curve| {
            Ok(EstimatorRecord {
                estimator: curve.estimator.clone(),
                l2: l2_error(grid, &curve.estimate, truth)?,
                curve,
            })
        })
        .collect()
}

/// Run every replication. Failures are recorded and do not stop the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let specs = config.specs()?;
    let grid = config.grid.nodes();
    let oracle = OracleNuisances::new(
        &config.scenario,
        &config.pipeline.table_grid(&config.scenario),
        config.pipeline.epsilon,
    )?;
    let truth: Vec<f64> = grid
        .iter()
        .map(|&w| oracle.outcome.tables.marginal_truth(w))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..config.n.len())
        .flat_map(|ni| (0..config.replications).map(move |r| (ni, r)))
        .collect();
    let work = || -> Vec<ReplicationRecord> {
        jobs.par_iter()
            .map(|&(ni, rep)| {
                let n = config.n[ni];
                let seed = replication_seed(config.seed, ni, rep);
                let (estimators, error) =
                    match run_replication(config, &specs, &oracle, &grid, &truth, n, seed) {
                        Ok(e) => (e, None),
                        Err(e) => (Vec::new(), Some(format!("n={n} rep={rep}: {e}"))),
                    };
                ReplicationRecord {
                    n,
                    rep,
                    seed,
                    estimators,
                    error,
                }
            })
            .collect()
    };
    let records = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    let summary = summarize(config, &grid, &truth, &records);
    Ok(ExperimentOutput { records, summary })
}

pub fn summarize(
    config: &ExperimentConfig,
    grid: &[f64],
    truth: &[f64],
    records: &[ReplicationRecord],
) -> ExperimentSummary {
    let g0 = config.grid.index_of(config.checks.w0);
    let mut estimators = Vec::new();
    for &n in &config.n {
        for name in &config.estimators {
            let runs: Vec<&EstimatorRecord> = records
                .iter()
                .filter(|r| r.n == n && r.error.is_none())
                .flat_map(|r| r.estimators.iter().filter(|e| &e.estimator == name))
                .collect();
            let l2: Vec<f64> = runs.iter().map(|e| e.l2).collect();
            let coverage = config
                .levels
                .iter()
                .map(|&level| {
                    let z = normal_critical(level);
                    let by_point = (0..grid.len())
                        .map(|g| {
                            let hits = runs
                                .iter()
                                .filter(|e| {
                                    (e.curve.estimate[g] - truth[g]).abs() <= z * e.curve.se[g]
                                })
                                .count();
                            if runs.iter().all(|e| e.curve.se[g].is_finite()) {
                                hits as f64 / runs.len() as f64
                            } else {
                                f64::NAN
                            }
                        })
                        .collect();
                    LevelCoverage { level, by_point }
                })
                .collect();
            let cf: Vec<f64> = runs.iter().map(|e| e.curve.estimate[g0]).collect();
            let single: Vec<f64> = runs.iter().map(|e| e.curve.folds[0].estimate[g0]).collect();
            let ses: Vec<f64> = runs.iter().map(|e| e.curve.se[g0]).collect();
            estimators.push(EstimatorSummary {
                n,
                estimator: name.clone(),
                replications: runs.len(),
                l2_mean: mean(&l2),
                l2_sd: std_dev(&l2),
                coverage,
                sd_crossfit: std_dev(&cf),
                sd_single_split: std_dev(&single),
                mean_estimate: mean(&cf),
                mean_se: mean(&ses),
            });
        }
    }
    ExperimentSummary {
        grid: grid.to_vec(),
        truth: truth.to_vec(),
        check_w0: grid[g0],
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        estimators,
    }
}

/// Write `replications.jsonl`, `summary.json` and the CSV tables into `dir`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = BufWriter::new(File::create(dir.join("replications.jsonl"))?);
    for r in &out.records {
        serde_json::to_writer(&mut jsonl, r)?;
        writeln!(jsonl)?;
    }
    jsonl.flush()?;
    crate::io::write_json(&dir.join("summary.json"), &out.summary)?;

    let s = &out.summary;
    let mut truth = csv::Writer::from_path(dir.join("truth.csv"))?;
    truth.write_record(["w", "truth"])?;
    for (w, t) in s.grid.iter().zip(&s.truth) {
        truth.write_record([w.to_string(), t.to_string()])?;
    }
    truth.flush()?;

    let mut l2 = csv::Writer::from_path(dir.join("l2.csv"))?;
    l2.write_record(["n", "rep", "estimator", "l2"])?;
    let mut curves = csv::Writer::from_path(dir.join("curves.csv"))?;
    curves.write_record(["n", "rep", "estimator", "w", "estimate", "se"])?;
    for r in &out.records {
        for e in &r.estimators {
            l2.write_record([
                r.n.to_string(),
                r.rep.to_string(),
                e.estimator.clone(),
                e.l2.to_string(),
            ])?;
            for (g, w) in e.curve.grid.iter().enumerate() {
                curves.write_record([
                    r.n.to_string(),
                    r.rep.to_string(),
                    e.estimator.clone(),
                    w.to_string(),
                    e.curve.estimate[g].to_string(),
                    e.curve.se[g].to_string(),
                ])?;
            }
        }
    }
    l2.flush()?;
    curves.flush()?;

    let mut cov = csv::Writer::from_path(dir.join("coverage.csv"))?;
    cov.write_record(["n", "estimator", "level", "w", "coverage"])?;
    for e in &s.estimators {
        for lc in &e.coverage {
            for (w, c) in s.grid.iter().zip(&lc.by_point) {
                cov.write_record([
                    e.n.to_string(),
                    e.estimator.clone(),
                    lc.level.to_string(),
                    w.to_string(),
                    c.to_string(),
                ])?;
            }
        }
    }
    cov.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_closed_forms() {
        let grid = GridConfig::default().nodes();
        let truth: Vec<f64> = grid.iter().map(|w| w.sin()).collect();
        assert_eq!(l2_error(&grid, &truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.3).collect();
        assert!((l2_error(&grid, &shifted, &truth).unwrap() - 0.3 * 8f64.sqrt()).abs() < 1e-12);
        assert!(l2_error(&grid, &shifted[1..], &truth).is_err());
    }

    #[test]
    fn grid_nodes_hit_integers() {
        let g = GridConfig::default();
        let nodes = g.nodes();
        assert_eq!(nodes[g.index_of(-1.0)], -1.0);
        assert_eq!(nodes[40], 0.0);
        assert_eq!(*nodes.last().unwrap(), 4.0);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.replications = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.estimators.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.estimators.push("nope".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn small_run_is_reproducible() {
        let config = ExperimentConfig {
            n: vec![400],
            replications: 2,
            estimators: vec!["dr-oracle".into(), "ipcw-oracle".into()],
            grid: GridConfig {
                lo: -2.0,
                hi: 2.0,
                points: 5,
            },
            pipeline: PipelineConfig {
                table_w_step: 1.0,
                table_t_step: 0.05,
                table_s_step: 0.25,
                ..PipelineConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&ExperimentConfig {
            workers: 1,
            ..config
        })
        .unwrap();
        assert_eq!(a.summary.failures, 0);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let e = a.summary.get(400, "dr-oracle").unwrap();
        assert_eq!(e.replications, 2);
        assert!(e.l2_mean.is_finite() && e.l2_mean > 0.0);
    }
}
