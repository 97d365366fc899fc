//! HAL-lite: L1-penalized piecewise-exponential hazard regression on a
//! zero-order spline tensor basis.
//!
//! Exposure and events are aggregated exactly onto the cell grid, so the
//! Poisson working likelihood is a sum over cells. Coordinate descent
//! minimizes each coordinate in closed form, which keeps the penalized
//! objective monotone across sweeps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::basis::{Axis, Feature, Margin, PiecewiseHazard, TensorBasis};
use super::hazard::{HazardForm, HazardModel, Transition};
use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{ObservedSubject, StatePath};
use crate::stats::quantile_sorted;

/// Coefficients are kept inside `[-LOG_CAP, LOG_CAP]`; an empty cell would
/// otherwise drive its log-rate to minus infinity.
const LOG_CAP: f64 = 30.0;

/// Time at risk for one transition within one sojourn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtRiskSegment {
    pub subject: usize,
    pub start: f64,
    pub end: f64,
    /// Time the subject entered the source state.
    pub entry: f64,
    pub w: f64,
    /// Whether the sojourn ends with this transition.
    pub event: bool,
}

/// At-risk segments for `transition` from observed data.
pub fn at_risk_segments(transition: Transition, data: &[ObservedSubject]) -> Vec<AtRiskSegment> {
    let source = transition.source();
    let mut out = Vec::new();
    for (i, subj) in data.iter().enumerate() {
        let jumps = subj.jumps();
        for (k, soj) in subj.sojourns().enumerate() {
            if soj.state != source || soj.start >= subj.c {
                continue;
            }
            let end = soj.end.min(subj.c);
            let event = match transition.target() {
                None => subj.censored && soj.end > subj.c,
                Some(target) => {
                    soj.end <= subj.c && jumps.get(k + 1).is_some_and(|j| j.state == target)
                }
            };
            out.push(AtRiskSegment {
                subject: i,
                start: soj.start,
                end,
                entry: soj.start,
                w: subj.w,
                event,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalConfig {
    /// Knots per margin, placed at empirical quantiles.
    pub knots_per_margin: usize,
    /// Interaction order; `None` uses 2 for (time, W) hazards and 3 for the
    /// (time, duration, W) hazard.
    pub max_order: Option<usize>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    /// The penalty path stops after this many consecutive penalties without
    /// an improvement of the held-out likelihood.
    pub patience: usize,
    /// Refit the selected features without penalty (relaxed lasso); the
    /// cross-validation then scores the refits.
    pub relaxed: bool,
    pub seed: u64,
}

impl Default for HalConfig {
    fn default() -> Self {
        HalConfig {
            knots_per_margin: 8,
            max_order: None,
            n_lambda: 20,
            lambda_min_ratio: 1e-3,
            cv_folds: 5,
            tol: 1e-7,
            max_sweeps: 100_000,
            patience: 3,
            relaxed: false,
            seed: 17,
        }
    }
}

/// Axes used for each transition: duration matters only for the ill state.
pub fn default_axes(transition: Transition) -> Vec<Axis> {
    match transition {
        Transition::IllToDead => vec![Axis::Time, Axis::Duration, Axis::Covariate],
        _ => vec![Axis::Time, Axis::Covariate],
    }
}

/// Knots at empirical quantiles: event times for time, event durations for
/// duration and the at-risk covariate values for W.
pub fn quantile_basis(
    transition: Transition,
    segments: &[AtRiskSegment],
    knots_per_margin: usize,
    max_order: Option<usize>,
) -> TensorBasis {
    let axes = default_axes(transition);
    let events: Vec<&AtRiskSegment> = segments.iter().filter(|s| s.event).collect();
    let margins: Vec<Margin> = axes
        .iter()
        .map(|&axis| {
            let mut xs: Vec<f64> = match axis {
                Axis::Time if events.len() >= 2 => events.iter().map(|s| s.end).collect(),
                Axis::Time => segments.iter().map(|s| s.end).collect(),
                Axis::Duration if events.len() >= 2 => {
                    events.iter().map(|s| s.end - s.entry).collect()
                }
                Axis::Duration => segments.iter().map(|s| s.end - s.entry).collect(),
                Axis::Covariate => segments.iter().map(|s| s.w).collect(),
            };
            xs.sort_by(f64::total_cmp);
            let mut knots: Vec<f64> = Vec::new();
            if !xs.is_empty() {
                for j in 1..=knots_per_margin {
                    let q = quantile_sorted(&xs, j as f64 / (knots_per_margin + 1) as f64);
                    if knots.last().is_none_or(|&last| q > last) && q > xs[0] {
                        knots.push(q);
                    }
                }
            }
            Margin { axis, knots }
        })
        .collect();
    let order = max_order.unwrap_or(margins.len()).clamp(1, margins.len());
    TensorBasis {
        margins,
        max_order: order,
    }
}

/// Event counts and exposure per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub events: Vec<f64>,
    pub exposure: Vec<f64>,
}

impl CellStats {
    pub fn zeros(n_cells: usize) -> Self {
        CellStats {
            events: vec![0.0; n_cells],
            exposure: vec![0.0; n_cells],
        }
    }

    /// Split the segment where the time or duration crosses a knot; each
    /// piece lies in one cell. An event is credited to the cell of the last
    /// piece (left limit).
    pub fn add_segment(&mut self, basis: &TensorBasis, seg: &AtRiskSegment) {
        if !(seg.end > seg.start) {
            return;
        }
        let mut cuts = Vec::new();
        for m in &basis.margins {
            let shift = match m.axis {
                Axis::Time => 0.0,
                Axis::Duration => seg.entry,
                Axis::Covariate => continue,
            };
            cuts.extend(
                m.knots
                    .iter()
                    .map(|k| k + shift)
                    .filter(|&x| x > seg.start && x < seg.end),
            );
        }
        cuts.sort_by(f64::total_cmp);
        let mut left = seg.start;
        let mut last_cell = 0;
        for right in cuts.into_iter().chain(std::iter::once(seg.end)) {
            if right > left {
                let mid = 0.5 * (left + right);
                let cell = basis.cell_of(mid, mid - seg.entry, seg.w);
                self.exposure[cell] += right - left;
                last_cell = cell;
                left = right;
            }
        }
        if seg.event {
            self.events[last_cell] += 1.0;
        }
    }

    pub fn from_segments<'a>(
        basis: &TensorBasis,
        segments: impl IntoIterator<Item = &'a AtRiskSegment>,
    ) -> Self {
        let mut stats = CellStats::zeros(basis.n_cells());
        for s in segments {
            stats.add_segment(basis, s);
        }
        stats
    }

    pub fn total_events(&self) -> f64 {
        self.events.iter().sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }
}

/// Coordinate-descent solver for
/// `-(1/N) sum_c [D_c eta_c - E_c exp(eta_c)] + lambda * sum_f |beta_f|`.
#[derive(Debug, Clone)]
pub struct PoissonLasso {
    events: Vec<f64>,
    exposure: Vec<f64>,
    /// Cells with positive exposure, as indices into the full grid.
    cells: Vec<usize>,
    supports: Vec<Vec<u32>>,
    feature_events: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    total_events: f64,
    norm: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl PoissonLasso {
    /// `full_supports` are the feature supports on the full cell grid;
    /// `norm` is the number of subjects N.
    pub fn new(stats: &CellStats, full_supports: &[Vec<u32>], norm: f64) -> Result<Self> {
        let n_cells = stats.exposure.len();
        let mut local = vec![u32::MAX; n_cells];
        let mut cells = Vec::new();
        for (c, &e) in stats.exposure.iter().enumerate() {
            if e > 0.0 {
                local[c] = cells.len() as u32;
                cells.push(c);
            }
        }
        if cells.is_empty() {
            return Err(Error::EmptyDesign("all-zero exposure".into()));
        }
        let supports: Vec<Vec<u32>> = full_supports
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&c| local[c as usize])
                    .filter(|&l| l != u32::MAX)
                    .collect()
            })
            .collect();
        let events: Vec<f64> = cells.iter().map(|&c| stats.events[c]).collect();
        let exposure: Vec<f64> = cells.iter().map(|&c| stats.exposure[c]).collect();
        let feature_events = supports
            .iter()
            .map(|s| s.iter().map(|&l| events[l as usize]).sum())
            .collect();
        let total_events: f64 = events.iter().sum();
        let total_exposure: f64 = exposure.iter().sum();
        let intercept = if total_events > 0.0 {
            (total_events / total_exposure).ln().max(-LOG_CAP)
        } else {
            -LOG_CAP
        };
        let eta = vec![intercept; cells.len()];
        let mu = exposure.iter().map(|e| e * intercept.exp()).collect();
        Ok(PoissonLasso {
            events,
            exposure,
            cells,
            supports,
            feature_events,
            eta,
            mu,
            total_events,
            norm,
            intercept,
            beta: vec![0.0; full_supports.len()],
        })
    }

    /// Smallest lambda at which every penalized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let rate = self.intercept.exp();
        self.supports
            .iter()
            .zip(&self.feature_events)
            .map(|(s, d)| {
                let a: f64 = s.iter().map(|&l| self.exposure[l as usize] * rate).sum();
                (d - a).abs()
            })
            .fold(0.0, f64::max)
            / self.norm
    }

    pub fn objective(&self, lambda: f64) -> f64 {
        let nll: f64 = self
            .events
            .iter()
            .zip(&self.eta)
            .zip(&self.mu)
            .map(|((d, eta), mu)| mu - d * eta)
            .sum();
        nll / self.norm + lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn update_intercept(&mut self) -> f64 {
        let s: f64 = self.mu.iter().sum();
        let target = if self.total_events > 0.0 && s > 0.0 {
            (self.intercept + (self.total_events / s).ln()).clamp(-LOG_CAP, LOG_CAP)
        } else {
            -LOG_CAP
        };
        let delta = target - self.intercept;
        if delta == 0.0 {
            return 0.0;
        }
        self.intercept = target;
        let scale = delta.exp();
        for (eta, mu) in self.eta.iter_mut().zip(self.mu.iter_mut()) {
            *eta += delta;
            *mu *= scale;
        }
        s * (scale - 1.0).abs() / self.norm
    }

    fn update_feature(&mut self, f: usize, penalty: f64) -> f64 {
        let support = &self.supports[f];
        if support.is_empty() {
            return 0.0;
        }
        let old = self.beta[f];
        let a = support.iter().map(|&l| self.mu[l as usize]).sum::<f64>() * (-old).exp();
        let d = self.feature_events[f];
        let new = if a <= 0.0 {
            0.0
        } else if d - penalty > a {
            ((d - penalty) / a).ln()
        } else if d + penalty < a {
            if d + penalty > 0.0 {
                ((d + penalty) / a).ln()
            } else {
                -LOG_CAP
            }
        } else {
            0.0
        }
        .clamp(-LOG_CAP, LOG_CAP);
        let delta = new - old;
        if delta == 0.0 {
            return 0.0;
        }
        self.beta[f] = new;
        let scale = delta.exp();
        for &l in support {
            let l = l as usize;
            self.eta[l] += delta;
            self.mu[l] *= scale;
        }
        a * (new.exp() - old.exp()).abs() / self.norm
    }

    fn refresh_mu(&mut self) {
        for ((mu, e), eta) in self.mu.iter_mut().zip(&self.exposure).zip(&self.eta) {
            *mu = e * eta.exp();
        }
    }

    /// One cyclic pass over the intercept and either every feature or only
    /// the currently nonzero ones. Returns the largest change in fitted
    /// event mass per subject.
    pub fn sweep(&mut self, lambda: f64, active_only: bool) -> f64 {
        let penalty = lambda * self.norm;
        let mut max_change = self.update_intercept();
        for f in 0..self.beta.len() {
            if active_only && self.beta[f] == 0.0 {
                continue;
            }
            max_change = max_change.max(self.update_feature(f, penalty));
        }
        max_change
    }

    /// Run sweeps until the largest mass change is below `tol`, alternating
    /// active-set passes with full passes. Returns the number of sweeps.
    pub fn solve(&mut self, lambda: f64, tol: f64, max_sweeps: usize) -> Result<usize> {
        let mut sweeps = 0;
        loop {
            self.refresh_mu();
            let change = self.sweep(lambda, false);
            sweeps += 1;
            if change < tol {
                return Ok(sweeps);
            }
            loop {
                let change = self.sweep(lambda, true);
                sweeps += 1;
                if change < tol {
                    break;
                }
                if sweeps >= max_sweeps {
                    return Err(Error::NonConvergence {
                        iterations: sweeps,
                        residual: change,
                    });
                }
            }
        }
    }

    /// Maximum likelihood over the currently nonzero coefficients, keeping
    /// the others at zero.
    pub fn refit_active(&mut self, tol: f64, max_sweeps: usize) -> Result<usize> {
        for sweeps in 1..=max_sweeps {
            self.refresh_mu();
            let change = self.sweep(0.0, true);
            if change < tol {
                return Ok(sweeps);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_sweeps,
            residual: f64::NAN,
        })
    }

    /// Log-rate on every cell of the full grid.
    pub fn log_rates(&self, n_cells: usize, full_supports: &[Vec<u32>]) -> Vec<f64> {
        let mut out = vec![self.intercept; n_cells];
        for (b, s) in self.beta.iter().zip(full_supports) {
            if *b != 0.0 {
                for &c in s {
                    out[c as usize] += b;
                }
            }
        }
        out
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.cells
    }
}

/// Poisson log-likelihood of held-out cell statistics under given log-rates.
pub fn poisson_loglik(stats: &CellStats, log_rates: &[f64]) -> f64 {
    stats
        .events
        .iter()
        .zip(&stats.exposure)
        .zip(log_rates)
        .filter(|((_, e), _)| **e > 0.0)
        .map(|((d, e), l)| d * l - e * l.exp())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidated,
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub model: HazardModel,
    pub lambda: f64,
    /// `(lambda, summed held-out log-likelihood)` along the path when
    /// cross-validated.
    pub cv_path: Vec<(f64, f64)>,
}

fn lambda_grid(lmax: f64, config: &HalConfig) -> Vec<f64> {
    let n = config.n_lambda.max(1);
    let lmax = if lmax > 0.0 { lmax } else { 1e-12 };
    (0..n)
        .map(|i| {
            let frac = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            lmax * config.lambda_min_ratio.powf(frac)
        })
        .collect()
}

/// Fit a piecewise-exponential hazard with an L1 penalty on the indicator
/// tensor basis given by `basis`.
pub fn fit_piecewise_lasso_hazard(
    transition: Transition,
    segments: &[AtRiskSegment],
    basis: TensorBasis,
    lambda: LambdaChoice,
    config: &HalConfig,
) -> Result<LassoFit> {
    if segments.is_empty() {
        return Err(Error::EmptyDesign(format!(
            "no at-risk time for {}",
            transition.label()
        )));
    }
    basis.validate().map_err(Error::EmptyDesign)?;
    let features: Vec<Feature> = basis.features();
    let supports = basis.supports(&features);
    let n_cells = basis.n_cells();
    let n_subjects = {
        let mut ids: Vec<usize> = segments.iter().map(|s| s.subject).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    let stats = CellStats::from_segments(&basis, segments);
    if stats.total_exposure() <= 0.0 {
        return Err(Error::EmptyDesign("all-zero exposure".into()));
    }

    let (chosen, cv_path) = match lambda {
        LambdaChoice::Fixed(l) => (l, Vec::new()),
        LambdaChoice::CrossValidated => {
            let full = PoissonLasso::new(&stats, &supports, n_subjects as f64)?;
            let grid = lambda_grid(full.lambda_max(), config);
            let k = config.cv_folds.max(2);
            let mut ids: Vec<usize> = segments.iter().map(|s| s.subject).collect();
            ids.sort_unstable();
            ids.dedup();
            let mut perm = ids.clone();
            perm.shuffle(&mut rng::stream(config.seed, transition as u64));
            let mut fold_of = std::collections::HashMap::with_capacity(perm.len());
            for (pos, id) in perm.iter().enumerate() {
                fold_of.insert(*id, pos % k);
            }
            let mut folds = Vec::with_capacity(k);
            for fold in 0..k {
                let held = CellStats::from_segments(
                    &basis,
                    segments.iter().filter(|s| fold_of[&s.subject] == fold),
                );
                let train = CellStats::from_segments(
                    &basis,
                    segments.iter().filter(|s| fold_of[&s.subject] != fold),
                );
                let n_train = perm.iter().filter(|id| fold_of[*id] != fold).count();
                if let Ok(solver) = PoissonLasso::new(&train, &supports, n_train as f64) {
                    folds.push((solver, held));
                }
            }
            let mut score = Vec::with_capacity(grid.len());
            let mut best = f64::NEG_INFINITY;
            let mut since_best = 0;
            for &l in &grid {
                let mut total = 0.0;
                for (solver, held) in folds.iter_mut() {
                    solver.solve(l, config.tol, config.max_sweeps)?;
                    let rates = if config.relaxed {
                        let mut refit = solver.clone();
                        refit.refit_active(config.tol, config.max_sweeps)?;
                        refit.log_rates(n_cells, &supports)
                    } else {
                        solver.log_rates(n_cells, &supports)
                    };
                    total += poisson_loglik(held, &rates);
                }
                score.push(total);
                if total > best {
                    best = total;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        break;
                    }
                }
            }
            let grid = grid[..score.len()].to_vec();
            let best = score
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            (grid[best], grid.into_iter().zip(score).collect())
        }
    };

    let mut solver = PoissonLasso::new(&stats, &supports, n_subjects as f64)?;
    // warm start down the path to the chosen penalty
    for &(l, _) in cv_path.iter().take_while(|(l, _)| *l > chosen) {
        solver.solve(l, config.tol, config.max_sweeps)?;
    }
    solver.solve(chosen, config.tol, config.max_sweeps)?;
    if config.relaxed {
        solver.refit_active(config.tol, config.max_sweeps)?;
    }
    let hazard = PiecewiseHazard::new(basis, solver.intercept, solver.beta.clone())
        .map_err(Error::EmptyDesign)?;
    Ok(LassoFit {
        model: HazardModel {
            transition,
            form: HazardForm::PiecewiseLasso { hazard },
        },
        lambda: chosen,
        cv_path,
    })
}

/// Quantile basis plus cross-validated penalty: the default HAL-lite fit.
pub fn fit_hal_lite(
    transition: Transition,
    data: &[ObservedSubject],
    config: &HalConfig,
) -> Result<LassoFit> {
    let segments = at_risk_segments(transition, data);
    let basis = quantile_basis(
        transition,
        &segments,
        config.knots_per_margin,
        config.max_order,
    );
    fit_piecewise_lasso_hazard(
        transition,
        &segments,
        basis,
        LambdaChoice::CrossValidated,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{observe_all, simulate_cohort, ScenarioConfig};

    fn single_cell_basis(transition: Transition) -> TensorBasis {
        TensorBasis {
            margins: default_axes(transition)
                .into_iter()
                .map(|axis| Margin {
                    axis,
                    knots: vec![],
                })
                .collect(),
            max_order: 1,
        }
    }

    #[test]
    fn single_cell_is_occurrence_exposure_rate() {
        let cfg = ScenarioConfig::default();
        let data = observe_all(&simulate_cohort(&cfg, 2000).unwrap(), cfg.eta);
        let segs = at_risk_segments(Transition::Censoring, &data);
        let d = segs.iter().filter(|s| s.event).count() as f64;
        let e: f64 = segs.iter().map(|s| s.end - s.start).sum();
        let fit = fit_piecewise_lasso_hazard(
            Transition::Censoring,
            &segs,
            single_cell_basis(Transition::Censoring),
            LambdaChoice::Fixed(0.0),
            &HalConfig::default(),
        )
        .unwrap();
        let rate = fit.model.rate(1.0, 1.0, 0.0);
        assert!((rate - d / e).abs() < 1e-12 * rate);
    }

    #[test]
    fn relaxed_refit_removes_shrinkage() {
        let cfg = ScenarioConfig::default();
        let data = observe_all(&simulate_cohort(&cfg, 2000).unwrap(), cfg.eta);
        let segs = at_risk_segments(Transition::Censoring, &data);
        let basis = TensorBasis {
            margins: vec![
                Margin {
                    axis: Axis::Time,
                    knots: vec![],
                },
                Margin {
                    axis: Axis::Covariate,
                    knots: vec![0.0],
                },
            ],
            max_order: 1,
        };
        let upper = |s: &&AtRiskSegment| s.w >= 0.0;
        let d = segs.iter().filter(upper).filter(|s| s.event).count() as f64;
        let e: f64 = segs.iter().filter(upper).map(|s| s.end - s.start).sum();
        let fit = |relaxed| {
            let config = HalConfig {
                relaxed,
                ..HalConfig::default()
            };
            fit_piecewise_lasso_hazard(
                Transition::Censoring,
                &segs,
                basis.clone(),
                LambdaChoice::Fixed(1e-3),
                &config,
            )
            .unwrap()
            .model
            .rate(1.0, 0.0, 1.0)
        };
        assert!((fit(true) - d / e).abs() < 1e-6 * d / e);
        assert!((fit(false) - d / e).abs() > 1e-4 * d / e);
    }

    #[test]
    fn huge_lambda_shrinks_to_intercept() {
        let cfg = ScenarioConfig::default();
        let data = observe_all(&simulate_cohort(&cfg, 2000).unwrap(), cfg.eta);
        let segs = at_risk_segments(Transition::Censoring, &data);
        let basis = quantile_basis(Transition::Censoring, &segs, 8, None);
        let fit = fit_piecewise_lasso_hazard(
            Transition::Censoring,
            &segs,
            basis,
            LambdaChoice::Fixed(1e6),
            &HalConfig::default(),
        )
        .unwrap();
        let HazardForm::PiecewiseLasso { hazard } = &fit.model.form else {
            unreachable!()
        };
        assert!(hazard.coefficients().iter().all(|&b| b == 0.0));
        let d = segs.iter().filter(|s| s.event).count() as f64;
        let e: f64 = segs.iter().map(|s| s.end - s.start).sum();
        assert!((hazard.intercept().exp() - d / e).abs() < 1e-10);
    }

    #[test]
    fn empty_data_is_an_error() {
        let basis = single_cell_basis(Transition::Censoring);
        let r = fit_piecewise_lasso_hazard(
            Transition::Censoring,
            &[],
            basis,
            LambdaChoice::Fixed(0.0),
            &HalConfig::default(),
        );
        assert!(matches!(r, Err(Error::EmptyDesign(_))));
    }

    #[test]
    fn objective_is_monotone_across_sweeps() {
        let cfg = ScenarioConfig::default();
        let data = observe_all(&simulate_cohort(&cfg, 3000).unwrap(), cfg.eta);
        let segs = at_risk_segments(Transition::IllToDead, &data);
        let basis = quantile_basis(Transition::IllToDead, &segs, 6, None);
        let supports = basis.supports(&basis.features());
        let stats = CellStats::from_segments(&basis, &segs);
        let mut solver = PoissonLasso::new(&stats, &supports, 3000.0).unwrap();
        let lambda = solver.lambda_max() * 0.01;
        let mut last = solver.objective(lambda);
        for i in 0..200 {
            let change = solver.sweep(lambda, i % 3 != 0);
            let now = solver.objective(lambda);
            assert!(
                now <= last + 1e-12 * last.abs(),
                "sweep {i}: {now} > {last}"
            );
            last = now;
            if change < 1e-9 {
                break;
            }
        }
    }

    #[test]
    fn exposure_is_conserved_by_cell_split() {
        let cfg = ScenarioConfig::default();
        let data = observe_all(&simulate_cohort(&cfg, 500).unwrap(), cfg.eta);
        for tr in [Transition::Censoring, Transition::IllToDead] {
            let segs = at_risk_segments(tr, &data);
            let basis = quantile_basis(tr, &segs, 8, None);
            let stats = CellStats::from_segments(&basis, &segs);
            let e: f64 = segs.iter().map(|s| s.end - s.start).sum();
            assert!((stats.total_exposure() - e).abs() < 1e-9);
            let d = segs.iter().filter(|s| s.event).count() as f64;
            assert_eq!(stats.total_events(), d);
        }
    }
}
