//! Censoring unbiased transformations.
//!
//! For an observed subject `(C, X^C)` the doubly robust transform is
//!
//! ```text
//! Y* = Y 1(C >= eta) / S(eta)
//!    + 1(C < eta) E[Y | X^C] / S(C)
//!    - int_0^{C ^ eta} E[Y | X^u] gamma(u) / S(u) du
//! ```
//!
//! with `S` the censoring survival and `gamma` its hazard.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{CensoringSurvival, OutcomeModel};
use crate::quad::simpson_pieces;
use crate::rng;
use crate::sim::{simulate_with_covariate, ObservedSubject, OutcomeDuration, ScenarioConfig};
use crate::stats::McEstimate;
use crate::truth::{CovariateView, ValueTables};

pub const DEFAULT_QUAD_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ipcw,
    Dr,
    OracleDr,
    Causal,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Ipcw => "ipcw",
            Variant::Dr => "dr",
            Variant::OracleDr => "oracle-dr",
            Variant::Causal => "causal",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipcw" => Ok(Variant::Ipcw),
            "dr" => Ok(Variant::Dr),
            "oracle-dr" => Ok(Variant::OracleDr),
            "causal" => Ok(Variant::Causal),
            other => Err(Error::InvalidInput(format!(
                "unknown pseudo-outcome variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcome {
    pub id: usize,
    pub w: f64,
    pub variant: Variant,
    pub value: f64,
    pub censoring_kind: String,
    pub outcome_kind: String,
}

/// `Y 1(C >= eta) / S(eta | X)`.
pub fn ipcw(subject: &ObservedSubject, cens: &CensoringSurvival, eta: f64) -> f64 {
    match subject.outcome_duration(eta) {
        Some(y) if y != 0.0 => y / cens.survival(subject, eta),
        _ => 0.0,
    }
}

fn check_step(quad_step: f64) -> Result<()> {
    if quad_step > 0.0 && quad_step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "quadrature step must be positive, got {quad_step}"
        )))
    }
}

/// `int_0^{upto} E[Y | X^u] gamma(u) / S(u) du` over the pieces of the path
/// where the censoring hazard is active.
fn compensator(
    subject: &ObservedSubject,
    upto: f64,
    cens: &CensoringSurvival,
    view: &CovariateView<'_>,
    quad_step: f64,
) -> Result<f64> {
    let w = subject.w;
    let model = &cens.model;
    let mut total = 0.0;
    let mut cum_before = 0.0;
    let mut failure = None;
    for piece in model.active_pieces(subject, upto) {
        let mut cuts = Vec::new();
        model.breakpoints(piece.start, piece.end, piece.entry, &mut cuts);
        cuts.sort_by(f64::total_cmp);
        let integrand = |u: f64| {
            let rate = model.rate(u, u - piece.entry, w);
            if rate == 0.0 {
                return 0.0;
            }
            let cum = cum_before + model.integrate(piece.start, u, piece.entry, w);
            let surv = (-cum).exp().clamp(cens.epsilon, 1.0);
            match view.conditional_expectation_before(subject, u) {
                Ok(e) => e * rate / surv,
                Err(err) => {
                    failure.get_or_insert(err);
                    0.0
                }
            }
        };
        total += simpson_pieces(integrand, piece.start, piece.end, &cuts, quad_step);
        cum_before += model.integrate(piece.start, piece.end, piece.entry, w);
    }
    match failure {
        Some(err) => Err(err),
        None => Ok(total),
    }
}

/// The doubly robust transform with censoring model `cens` and outcome
/// tables `outcome`.
pub fn dr_transform(
    subject: &ObservedSubject,
    cens: &CensoringSurvival,
    outcome: &ValueTables,
    quad_step: f64,
) -> Result<f64> {
    check_step(quad_step)?;
    let eta = outcome.eta();
    let view = outcome.at_w(subject.w)?;
    let upto = subject.c.min(eta);
    let mut value = ipcw(subject, cens, eta);
    if subject.censored {
        let e = view.conditional_expectation_before(subject, subject.c)?;
        value += e / cens.survival(subject, subject.c);
    }
    value -= compensator(subject, upto, cens, &view, quad_step)?;
    Ok(value)
}

/// Treatment-augmented transform for arm `a`:
/// `1(A=a)/p * dr - (1(A=a) - p)/p * E[Y | W, A=a]`, with the propensity
/// `p = P(A = a | W)` clamped to `[eps_a, 1 - eps_a]`.
pub fn causal_transform(
    treated_as_a: bool,
    propensity: f64,
    dr_value: f64,
    baseline_outcome: f64,
    eps_a: f64,
) -> Result<f64> {
    let p = propensity.clamp(eps_a, 1.0 - eps_a);
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "propensity {propensity} must be positive"
        )));
    }
    let ind = if treated_as_a { 1.0 } else { 0.0 };
    Ok(ind / p * dr_value - (ind - p) / p * baseline_outcome)
}

/// Transform every subject in parallel.
pub fn transform_all(
    subjects: &[ObservedSubject],
    variant: Variant,
    cens: &CensoringSurvival,
    outcome: Option<&OutcomeModel>,
    quad_step: f64,
) -> Result<Vec<PseudoOutcome>> {
    let eta_outcome = outcome.map(|o| o.tables.eta());
    let outcome_kind = outcome.map_or_else(|| "none".to_string(), |o| o.kind.clone());
    subjects
        .par_iter()
        .map(|s| {
            let value = match (variant, outcome) {
                (Variant::Ipcw, _) => {
                    let eta = eta_outcome.ok_or_else(|| {
                        Error::InvalidInput("IPCW needs the horizon from an outcome model".into())
                    })?;
                    ipcw(s, cens, eta)
                }
                (Variant::Dr | Variant::OracleDr, Some(o)) => {
                    dr_transform(s, cens, &o.tables, quad_step)?
                }
                (Variant::Causal, _) => {
                    return Err(Error::InvalidInput(
                        "the causal transform needs treatment data; use causal_transform".into(),
                    ))
                }
                (_, None) => {
                    return Err(Error::InvalidInput(
                        "DR transform needs an outcome model".into(),
                    ))
                }
            };
            Ok(PseudoOutcome {
                id: s.id,
                w: s.w,
                variant,
                value,
                censoring_kind: cens.kind().to_string(),
                outcome_kind: outcome_kind.clone(),
            })
        })
        .collect()
}

/// Horizon-only IPCW transform for every subject.
pub fn ipcw_all(
    subjects: &[ObservedSubject],
    cens: &CensoringSurvival,
    eta: f64,
) -> Vec<PseudoOutcome> {
    subjects
        .par_iter()
        .map(|s| PseudoOutcome {
            id: s.id,
            w: s.w,
            variant: Variant::Ipcw,
            value: ipcw(s, cens, eta),
            censoring_kind: cens.kind().to_string(),
            outcome_kind: "none".into(),
        })
        .collect()
}

/// Monte Carlo estimate at `W = w` of the conditional bias of the DR
/// transform,
///
/// ```text
/// E[ int (E[Y|X^u] - E2[Y|X^u]) (gamma1 - gamma)(u) P(C >= u | X) / P1(C > u | X) du | W = w ]
/// ```
///
/// from `n_mc` full trajectories of the true process.
#[allow(clippy::too_many_arguments)]
pub fn oracle_bias_diagnostic(
    w: f64,
    cens1: &CensoringSurvival,
    outcome2: &ValueTables,
    true_cens: &CensoringSurvival,
    truth: &ValueTables,
    scenario: &ScenarioConfig,
    n_mc: usize,
    seed: u64,
    quad_step: f64,
) -> Result<McEstimate> {
    check_step(quad_step)?;
    let eta = truth.eta();
    let est_view = outcome2.at_w(w)?;
    let true_view = truth.at_w(w)?;
    let draws: Vec<f64> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            // consume the covariate draw so streams line up with cohort simulation
            let _: f64 = r.random();
            let path = simulate_with_covariate(scenario, w, i as usize, &mut r)?;
            let mut total = 0.0;
            let mut failure = None;
            for piece in true_cens.model.active_pieces(&path, eta) {
                let mut cuts = Vec::new();
                cens1
                    .model
                    .breakpoints(piece.start, piece.end, piece.entry, &mut cuts);
                true_cens
                    .model
                    .breakpoints(piece.start, piece.end, piece.entry, &mut cuts);
                cuts.sort_by(f64::total_cmp);
                let f = |u: f64| {
                    let d = piece.entry;
                    let g_hat = cens1.model.rate(u, u - d, w);
                    let g = true_cens.model.rate(u, u - d, w);
                    if g_hat == g {
                        return 0.0;
                    }
                    let diff = true_view
                        .conditional_expectation_before(&path, u)
                        .and_then(|a| Ok(a - est_view.conditional_expectation_before(&path, u)?));
                    match diff {
                        Ok(diff) => {
                            diff * (g_hat - g) * true_cens.survival(&path, u)
                                / cens1.survival(&path, u)
                        }
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                };
                total += simpson_pieces(f, piece.start, piece.end, &cuts, quad_step);
            }
            match failure {
                Some(e) => Err(e),
                None => Ok(total),
            }
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{HazardModel, Transition, DEFAULT_EPSILON};
    use crate::sim::{Jump, State};
    use crate::truth::{solve_value_tables, TableGrid, TransitionHazards};

    fn subject(w: f64, jumps: &[(f64, State)], c: f64) -> ObservedSubject {
        let mut all = vec![Jump {
            time: 0.0,
            state: State::Healthy,
        }];
        all.extend(jumps.iter().map(|&(time, state)| Jump { time, state }));
        ObservedSubject {
            id: 0,
            w,
            jumps: all,
            c: c.min(5.0),
            censored: c < 5.0,
        }
    }

    fn oracle_cens() -> CensoringSurvival {
        CensoringSurvival::new(
            HazardModel::oracle(Transition::Censoring, &ScenarioConfig::default()),
            DEFAULT_EPSILON,
        )
        .unwrap()
    }

    fn tables() -> ValueTables {
        let grid = TableGrid::uniform(5.0, 0.005, 0.05, -4.0, 4.0, 0.5);
        solve_value_tables(
            &TransitionHazards::oracle(&ScenarioConfig::default()),
            &grid,
        )
        .unwrap()
    }

    #[test]
    fn ipcw_examples() {
        let cens = oracle_cens();
        assert_eq!(
            ipcw(&subject(0.0, &[(1.0, State::Ill)], 2.0), &cens, 5.0),
            0.0
        );
        assert_eq!(ipcw(&subject(0.0, &[], 5.0), &cens, 5.0), 0.0);
        let v = ipcw(&subject(3.0, &[(2.0, State::Ill)], 5.0), &cens, 5.0);
        assert!((v - 3.0 / (-0.4f64).exp()).abs() < 1e-12);
        assert!((v - 4.4755).abs() < 1e-4);
    }

    #[test]
    fn zero_censoring_model_returns_y() {
        let cens = CensoringSurvival::new(HazardModel::zero(Transition::Censoring), 0.01).unwrap();
        let t = tables();
        let s = subject(1.0, &[(1.5, State::Ill), (3.25, State::Dead)], 5.0);
        assert_eq!(dr_transform(&s, &cens, &t, 0.01).unwrap(), 1.75);
    }

    #[test]
    fn censored_subject_matches_fine_quadrature() {
        let cens = oracle_cens();
        let t = tables();
        let s = subject(-0.7, &[], 3.3);
        let v = dr_transform(&s, &cens, &t, 0.01).unwrap();
        // brute force: plain trapezoid on a fine grid of the same formula
        let view = t.at_w(-0.7).unwrap();
        let n = 330_000;
        let h = 3.3 / n as f64;
        let rate = 0.2 * 0.6f64.exp();
        let mut integral = 0.0;
        for i in 0..=n {
            let u = i as f64 * h;
            let f = view.v1(u).unwrap() * rate / (-rate * u).exp();
            integral += if i == 0 || i == n { 0.5 * f } else { f };
        }
        integral *= h;
        let expect = view.v1(3.3).unwrap() / (-rate * 3.3).exp() - integral;
        assert!((v - expect).abs() < 1e-6, "{v} {expect}");
        let half = dr_transform(&s, &cens, &t, 0.005).unwrap();
        assert!((v - half).abs() < 1e-5);
    }

    #[test]
    fn zero_outcome_model_reduces_to_ipcw() {
        let cens = oracle_cens();
        let grid = TableGrid::uniform(5.0, 0.01, 0.05, -4.0, 4.0, 1.0);
        let zero = solve_value_tables(&TransitionHazards::zero(), &grid).unwrap();
        for s in [
            subject(0.3, &[], 2.0),
            subject(0.3, &[(1.0, State::Ill), (2.0, State::Dead)], 5.0),
            subject(-2.5, &[(1.0, State::Ill)], 5.0),
        ] {
            let dr = dr_transform(&s, &cens, &zero, 0.01).unwrap();
            assert!((dr - ipcw(&s, &cens, 5.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_reductions() {
        assert_eq!(causal_transform(true, 1.0, 2.5, 9.0, 0.0).unwrap(), 2.5);
        assert!((causal_transform(false, 0.3, 2.5, 1.7, 0.01).unwrap() - 1.7).abs() < 1e-15);
        assert!(causal_transform(true, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bad_step_rejected() {
        let s = subject(0.0, &[], 5.0);
        assert!(dr_transform(&s, &oracle_cens(), &tables(), 0.0).is_err());
    }
}
