//! Sample splitting and K-fold cross-fitting of the two-step estimator:
//! nuisances are fit out of fold, pseudo-outcomes are built and smoothed
//! in fold, and fold estimates are averaged.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{
    fit_hal_lite, fit_parametric_censoring, CensoringSurvival, HalConfig, HazardModel,
    OutcomeModel, Transition, DEFAULT_EPSILON,
};
use crate::pseudo::{dr_transform, ipcw, DEFAULT_QUAD_STEP};
use crate::quad::simpson_pieces;
use crate::rng;
use crate::sim::{simulate_with_covariate, ObservedSubject, ScenarioConfig};
use crate::smooth::{bandwidth_rule, local_linear_fit, Kernel, SmootherFit};
use crate::truth::{solve_value_tables, TableGrid, TransitionHazards, ValueTables};

/// Stream label of the fold shuffle.
const FOLD_STREAM: u64 = 0xF01D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringChoice {
    Oracle,
    Zero,
    Parametric,
    HalLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeChoice {
    Oracle,
    Zero,
    HalLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// `V1(0, w)` of the fitted outcome model, no second step.
    PlugIn,
    Ipcw,
    Dr,
}

/// One estimator of the regression curve `m(w)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub name: String,
    pub method: Method,
    pub censoring: CensoringChoice,
    pub outcome: OutcomeChoice,
}

impl EstimatorSpec {
    /// Named estimators of the simulation study.
    pub fn preset(name: &str) -> Result<Self> {
        use CensoringChoice as C;
        use Method as M;
        use OutcomeChoice as O;
        let (method, censoring, outcome) = match name {
            "plugin-lite" => (M::PlugIn, C::Zero, O::HalLite),
            "ipcw-oracle" => (M::Ipcw, C::Oracle, O::Zero),
            "ipcw-hal" => (M::Ipcw, C::HalLite, O::Zero),
            "ipcw-misspec" => (M::Ipcw, C::Parametric, O::Zero),
            "dr-oracle" => (M::Dr, C::Oracle, O::Oracle),
            "dr-hal" => (M::Dr, C::HalLite, O::HalLite),
            "dr-misspec" => (M::Dr, C::Parametric, O::HalLite),
            "dr-hal-zero-outcome" => (M::Dr, C::HalLite, O::Zero),
            "dr-misspec-zero-outcome" => (M::Dr, C::Parametric, O::Zero),
            other => return Err(Error::Config(format!("unknown estimator {other:?}"))),
        };
        Ok(EstimatorSpec {
            name: name.to_string(),
            method,
            censoring,
            outcome,
        })
    }

    pub const PRESETS: [&'static str; 9] = [
        "plugin-lite",
        "ipcw-oracle",
        "ipcw-hal",
        "ipcw-misspec",
        "dr-oracle",
        "dr-hal",
        "dr-misspec",
        "dr-hal-zero-outcome",
        "dr-misspec-zero-outcome",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Bandwidth constant `c` in `h = c n^(-1/4.5)`.
    pub bandwidth_c: f64,
    pub kernel: Kernel,
    pub epsilon: f64,
    pub quad_step: f64,
    pub hal: HalConfig,
    /// Covariate spacing of estimated outcome tables.
    pub table_w_step: f64,
    pub table_t_step: f64,
    pub table_s_step: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bandwidth_c: 8.0,
            kernel: Kernel::Epanechnikov,
            epsilon: DEFAULT_EPSILON,
            quad_step: DEFAULT_QUAD_STEP,
            hal: HalConfig::default(),
            table_w_step: 0.1,
            table_t_step: 0.005,
            table_s_step: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn table_grid(&self, scenario: &ScenarioConfig) -> TableGrid {
        TableGrid::uniform(
            scenario.eta,
            self.table_t_step,
            self.table_s_step,
            scenario.w_lo,
            scenario.w_hi,
            self.table_w_step,
        )
    }
}

/// The true nuisances, shared across folds and replications.
#[derive(Debug, Clone)]
pub struct OracleNuisances {
    pub scenario: ScenarioConfig,
    pub censoring: CensoringSurvival,
    pub outcome: OutcomeModel,
}

impl OracleNuisances {
    pub fn new(scenario: &ScenarioConfig, grid: &TableGrid, epsilon: f64) -> Result<Self> {
        let tables = solve_value_tables(&TransitionHazards::oracle(scenario), grid)?;
        Ok(OracleNuisances {
            scenario: scenario.clone(),
            censoring: CensoringSurvival::new(
                HazardModel::oracle(Transition::Censoring, scenario),
                epsilon,
            )?,
            outcome: OutcomeModel::new(tables, "oracle"),
        })
    }
}

/// Nuisance models fit on one training set, each fit on first use.
pub struct FoldNuisances<'a> {
    train: Vec<ObservedSubject>,
    oracle: &'a OracleNuisances,
    config: &'a PipelineConfig,
    hal_censoring: OnceLock<Result<CensoringSurvival>>,
    parametric: OnceLock<Result<CensoringSurvival>>,
    hal_outcome: OnceLock<Result<OutcomeModel>>,
    zero_outcome: OnceLock<Result<OutcomeModel>>,
    zero_censoring: OnceLock<Result<CensoringSurvival>>,
}

fn cached<T: Clone>(cell: &OnceLock<Result<T>>, fit: impl FnOnce() -> Result<T>) -> Result<T> {
    match cell.get_or_init(fit) {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::NuisanceFit(e.to_string())),
    }
}

impl<'a> FoldNuisances<'a> {
    pub fn new(
        train: Vec<ObservedSubject>,
        oracle: &'a OracleNuisances,
        config: &'a PipelineConfig,
    ) -> Self {
        FoldNuisances {
            train,
            oracle,
            config,
            hal_censoring: OnceLock::new(),
            parametric: OnceLock::new(),
            hal_outcome: OnceLock::new(),
            zero_outcome: OnceLock::new(),
            zero_censoring: OnceLock::new(),
        }
    }

    pub fn censoring(&self, choice: CensoringChoice) -> Result<CensoringSurvival> {
        let eps = self.config.epsilon;
        match choice {
            CensoringChoice::Oracle => Ok(self.oracle.censoring.clone()),
            CensoringChoice::Zero => cached(&self.zero_censoring, || {
                CensoringSurvival::new(HazardModel::zero(Transition::Censoring), eps)
            }),
            CensoringChoice::Parametric => cached(&self.parametric, || {
                CensoringSurvival::new(fit_parametric_censoring(&self.train)?.model, eps)
            }),
            CensoringChoice::HalLite => cached(&self.hal_censoring, || {
                let fit = fit_hal_lite(Transition::Censoring, &self.train, &self.config.hal)?;
                CensoringSurvival::new(fit.model, eps)
            }),
        }
    }

    pub fn outcome(&self, choice: OutcomeChoice) -> Result<OutcomeModel> {
        let grid = || self.config.table_grid(&self.oracle.scenario);
        match choice {
            OutcomeChoice::Oracle => Ok(self.oracle.outcome.clone()),
            OutcomeChoice::Zero => cached(&self.zero_outcome, || {
                // zero hazards give V1 = 0 and V2 = eta - t for every w
                let mut g = grid();
                g.w_nodes = vec![self.oracle.scenario.w_lo, self.oracle.scenario.w_hi];
                Ok(OutcomeModel::new(
                    solve_value_tables(&TransitionHazards::zero(), &g)?,
                    "zero",
                ))
            }),
            OutcomeChoice::HalLite => cached(&self.hal_outcome, || {
                let hc = &self.config.hal;
                let hazards = TransitionHazards {
                    mu12: fit_hal_lite(Transition::HealthyToIll, &self.train, hc)?.model,
                    mu13: fit_hal_lite(Transition::HealthyToDead, &self.train, hc)?.model,
                    mu23: fit_hal_lite(Transition::IllToDead, &self.train, hc)?.model,
                };
                Ok(OutcomeModel::new(
                    solve_value_tables(&hazards, &grid())?,
                    "hal-lite",
                ))
            }),
        }
    }
}

/// Pseudo-outcomes of `subjects` under `spec`.
pub fn pseudo_outcomes(
    spec: &EstimatorSpec,
    subjects: &[ObservedSubject],
    nuisances: &FoldNuisances<'_>,
    config: &PipelineConfig,
) -> Result<Vec<f64>> {
    let cens = nuisances.censoring(spec.censoring)?;
    let eta = nuisances.oracle.scenario.eta;
    match spec.method {
        Method::Ipcw => Ok(subjects.iter().map(|s| ipcw(s, &cens, eta)).collect()),
        Method::Dr => {
            let outcome = nuisances.outcome(spec.outcome)?;
            subjects
                .iter()
                .map(|s| dr_transform(s, &cens, &outcome.tables, config.quad_step))
                .collect()
        }
        Method::PlugIn => Err(Error::Config(format!(
            "{} has no pseudo-outcomes",
            spec.name
        ))),
    }
}

/// Estimate and SE of one fold on a grid of evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCurve {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub h: f64,
    pub n_eval: usize,
}

/// Fit the second step on `eval` with nuisances from `nuisances`.
pub fn fold_curve(
    spec: &EstimatorSpec,
    eval: &[ObservedSubject],
    nuisances: &FoldNuisances<'_>,
    grid: &[f64],
    config: &PipelineConfig,
) -> Result<FoldCurve> {
    let h = bandwidth_rule(eval.len(), config.bandwidth_c)?;
    if spec.method == Method::PlugIn {
        let outcome = nuisances.outcome(spec.outcome)?;
        let estimate = grid
            .iter()
            .map(|&w| outcome.tables.marginal_truth(w))
            .collect::<Result<_>>()?;
        return Ok(FoldCurve {
            estimate,
            se: vec![f64::NAN; grid.len()],
            h: f64::NAN,
            n_eval: eval.len(),
        });
    }
    let ys = pseudo_outcomes(spec, eval, nuisances, config)?;
    let ws: Vec<f64> = eval.iter().map(|s| s.w).collect();
    let fits: Vec<SmootherFit> = grid
        .iter()
        .map(|&w0| local_linear_fit(&ws, &ys, w0, h, config.kernel))
        .collect::<Result<_>>()?;
    Ok(FoldCurve {
        estimate: fits.iter().map(|f| f.estimate).collect(),
        se: fits.iter().map(|f| f.se).collect(),
        h,
        n_eval: eval.len(),
    })
}

/// Fold labels `0..k` from a seeded shuffle; sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, FOLD_STREAM));
    let mut folds = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

fn split(
    data: &[ObservedSubject],
    folds: &[usize],
    k: usize,
) -> (Vec<ObservedSubject>, Vec<ObservedSubject>) {
    let (mut eval, mut train) = (Vec::new(), Vec::new());
    for (s, &f) in data.iter().zip(folds) {
        if f == k {
            eval.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (eval, train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitResult {
    pub w0: f64,
    pub fold_estimates: Vec<f64>,
    pub fold_ses: Vec<f64>,
    pub cf_estimate: f64,
    pub cf_se: f64,
    pub k: usize,
    pub folds: Vec<usize>,
}

/// Cross-fitted curves of several estimators sharing nuisance fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitCurve {
    pub estimator: String,
    pub grid: Vec<f64>,
    pub folds: Vec<FoldCurve>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
}

impl CrossFitCurve {
    fn aggregate(estimator: String, grid: Vec<f64>, folds: Vec<FoldCurve>) -> Self {
        let k = folds.len() as f64;
        let (estimate, se) = (0..grid.len())
            .map(|g| {
                let (e, s) = aggregate(folds.iter().map(|f| (f.estimate[g], f.se[g])));
                (e, s / k.sqrt())
            })
            .unzip();
        CrossFitCurve {
            estimator,
            grid,
            folds,
            estimate,
            se,
        }
    }

    pub fn at(&self, g: usize) -> CrossFitResult {
        let fold_estimates: Vec<f64> = self.folds.iter().map(|f| f.estimate[g]).collect();
        let fold_ses: Vec<f64> = self.folds.iter().map(|f| f.se[g]).collect();
        CrossFitResult {
            w0: self.grid[g],
            cf_estimate: self.estimate[g],
            cf_se: self.se[g],
            k: fold_estimates.len(),
            fold_estimates,
            fold_ses,
            folds: Vec::new(),
        }
    }
}

/// Mean of the estimates and mean of the SEs.
fn aggregate(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut e, mut s, mut n) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        e += a;
        s += b;
        n += 1.0;
    }
    (e / n, s / n)
}

/// K-fold cross-fit of every estimator in `specs` on `grid`. Nuisances are
/// fit once per fold and shared by the estimators that use them.
pub fn crossfit_curves(
    data: &[ObservedSubject],
    k: usize,
    seed: u64,
    specs: &[EstimatorSpec],
    grid: &[f64],
    oracle: &OracleNuisances,
    config: &PipelineConfig,
) -> Result<(Vec<CrossFitCurve>, Vec<usize>)> {
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-fitting needs K >= 2, got {k}"
        )));
    }
    if data.len() < 2 * k {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot fill {k} folds",
            data.len()
        )));
    }
    let folds = fold_assignment(data.len(), k, seed);
    let mut per_spec: Vec<Vec<FoldCurve>> = vec![Vec::with_capacity(k); specs.len()];
    for fold in 0..k {
        let (eval, train) = split(data, &folds, fold);
        let nuisances = FoldNuisances::new(train, oracle, config);
        for (spec, out) in specs.iter().zip(per_spec.iter_mut()) {
            let curve =
                fold_curve(spec, &eval, &nuisances, grid, config).map_err(|e| e.in_fold(fold))?;
            out.push(curve);
        }
    }
    let curves = specs
        .iter()
        .zip(per_spec)
        .map(|(s, f)| CrossFitCurve::aggregate(s.name.clone(), grid.to_vec(), f))
        .collect();
    Ok((curves, folds))
}

/// K-fold cross-fitted estimate at a single point.
pub fn crossfit_estimate(
    data: &[ObservedSubject],
    k: usize,
    seed: u64,
    w0: f64,
    spec: &EstimatorSpec,
    oracle: &OracleNuisances,
    config: &PipelineConfig,
) -> Result<CrossFitResult> {
    let (curves, folds) = crossfit_curves(
        data,
        k,
        seed,
        std::slice::from_ref(spec),
        &[w0],
        oracle,
        config,
    )?;
    let mut r = curves[0].at(0);
    r.folds = folds;
    Ok(r)
}

/// Nuisances on one half, regression on the other: the fold-0 estimate of
/// a two-fold split.
pub fn sample_split_estimate(
    data: &[ObservedSubject],
    split_seed: u64,
    w0: f64,
    spec: &EstimatorSpec,
    oracle: &OracleNuisances,
    config: &PipelineConfig,
) -> Result<(f64, f64)> {
    let folds = fold_assignment(data.len(), 2, split_seed);
    let (eval, train) = split(data, &folds, 0);
    let nuisances = FoldNuisances::new(train, oracle, config);
    let c = fold_curve(spec, &eval, &nuisances, &[w0], config).map_err(|e| e.in_fold(0))?;
    Ok((c.estimate[0], c.se[0]))
}

/// Aggregate fold results: mean estimate and `mean(SE_k) / sqrt(K)`.
pub fn combine_folds(w0: f64, fold_estimates: Vec<f64>, fold_ses: Vec<f64>) -> CrossFitResult {
    let k = fold_estimates.len();
    let (e, s) = aggregate(fold_estimates.iter().copied().zip(fold_ses.iter().copied()));
    CrossFitResult {
        w0,
        cf_estimate: e,
        cf_se: s / (k as f64).sqrt(),
        k,
        fold_estimates,
        fold_ses,
        folds: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceErrorNorms {
    pub outcome: f64,
    pub hazard: f64,
}

/// Smoother-weighted L2 errors of the fitted nuisances,
///
/// ```text
/// outcome^2 = sum_i |p_i| E[ int_0^eta (E2 - E)[Y | X^u]^2 du | W_i ] / sum_i |p_i|
/// hazard^2  = sum_i |p_i| E[ int_0^eta (gamma1 - gamma)(u | X)^2 du | W_i ] / sum_i |p_i|
/// ```
///
/// with the conditional expectations over `X | W_i` estimated from
/// `per_point` simulated trajectories.
#[allow(clippy::too_many_arguments)]
pub fn nuisance_error_norms(
    cens: &CensoringSurvival,
    outcome: &ValueTables,
    oracle: &OracleNuisances,
    ws: &[f64],
    weights: &[f64],
    per_point: usize,
    seed: u64,
    quad_step: f64,
) -> Result<NuisanceErrorNorms> {
    if ws.len() != weights.len() {
        return Err(Error::InvalidInput(
            "covariates and weights differ in length".into(),
        ));
    }
    let scenario = &oracle.scenario;
    let truth = &oracle.outcome.tables;
    let true_cens = &oracle.censoring.model;
    let eta = scenario.eta;
    let total: f64 = weights.iter().map(|p| p.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("all smoother weights are zero".into()));
    }
    let (mut out_sq, mut haz_sq) = (0.0, 0.0);
    for (i, (&w, &p)) in ws.iter().zip(weights).enumerate() {
        if p == 0.0 {
            continue;
        }
        let (mut o, mut g) = (0.0, 0.0);
        {
            let tv = truth.at_w(w)?;
            let ev = outcome.at_w(w)?;
            for j in 0..per_point {
                let mut r = rng::stream(rng::derive_seed(seed, i as u64), j as u64);
                let _: f64 = r.random();
                let path = simulate_with_covariate(scenario, w, j, &mut r)?;
                let mut cuts = Vec::new();
                for piece in true_cens.active_pieces(&path, eta) {
                    cuts.push(piece.end);
                }
                cuts.extend(path.jumps.iter().skip(1).map(|j| j.time));
                cuts.sort_by(f64::total_cmp);
                let mut failure = None;
                o += simpson_pieces(
                    |u| match (
                        tv.conditional_expectation_before(&path, u),
                        ev.conditional_expectation_before(&path, u),
                    ) {
                        (Ok(a), Ok(b)) => (a - b).powi(2),
                        (Err(e), _) | (_, Err(e)) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    },
                    0.0,
                    eta,
                    &cuts,
                    quad_step,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                for piece in true_cens.active_pieces(&path, eta) {
                    let mut bp = Vec::new();
                    cens.model
                        .breakpoints(piece.start, piece.end, piece.entry, &mut bp);
                    true_cens.breakpoints(piece.start, piece.end, piece.entry, &mut bp);
                    bp.sort_by(f64::total_cmp);
                    g += simpson_pieces(
                        |u| {
                            let d = u - piece.entry;
                            (cens.model.rate(u, d, w) - true_cens.rate(u, d, w)).powi(2)
                        },
                        piece.start,
                        piece.end,
                        &bp,
                        quad_step,
                    );
                }
            }
            o /= per_point as f64;
            g /= per_point as f64;
        }
        out_sq += p.abs() * o;
        haz_sq += p.abs() * g;
    }
    Ok(NuisanceErrorNorms {
        outcome: (out_sq / total).sqrt(),
        hazard: (haz_sq / total).sqrt(),
    })
}
