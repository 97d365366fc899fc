use serde::{Deserialize, Serialize};

use super::basis::PiecewiseHazard;
use crate::quad::gauss_legendre_16;
use crate::sim::{ScenarioConfig, State, StatePath};

/// Which intensity a hazard model describes. The source state is where the
/// hazard is active; it is zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transition {
    Censoring,
    HealthyToIll,
    HealthyToDead,
    IllToDead,
}

impl Transition {
    pub fn source(self) -> State {
        match self {
            Transition::IllToDead => State::Ill,
            _ => State::Healthy,
        }
    }

    pub fn target(self) -> Option<State> {
        match self {
            Transition::Censoring => None,
            Transition::HealthyToIll => Some(State::Ill),
            Transition::HealthyToDead | Transition::IllToDead => Some(State::Dead),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Transition::Censoring => "censoring",
            Transition::HealthyToIll => "mu12",
            Transition::HealthyToDead => "mu13",
            Transition::IllToDead => "mu23",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HazardForm {
    /// Identically zero.
    Zero,
    /// The closed-form scenario hazard.
    Oracle { scenario: Box<ScenarioConfig> },
    /// `exp(beta0 + beta1 * t + beta2 * W)`.
    Parametric { beta: [f64; 3] },
    /// Penalized piecewise-exponential fit on an indicator tensor basis.
    PiecewiseLasso { hazard: PiecewiseHazard },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub transition: Transition,
    #[serde(flatten)]
    pub form: HazardForm,
}

/// A sojourn piece on which a hazard is active: `[start, end)` entered at `entry`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivePiece {
    pub start: f64,
    pub end: f64,
    pub entry: f64,
}

impl HazardModel {
    pub fn zero(transition: Transition) -> Self {
        HazardModel {
            transition,
            form: HazardForm::Zero,
        }
    }

    pub fn oracle(transition: Transition, scenario: &ScenarioConfig) -> Self {
        HazardModel {
            transition,
            form: HazardForm::Oracle {
                scenario: Box::new(scenario.clone()),
            },
        }
    }

    pub fn parametric(transition: Transition, beta: [f64; 3]) -> Self {
        HazardModel {
            transition,
            form: HazardForm::Parametric { beta },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.form {
            HazardForm::Zero => "zero",
            HazardForm::Oracle { .. } => "oracle",
            HazardForm::Parametric { .. } => "parametric",
            HazardForm::PiecewiseLasso { .. } => "piecewise-lasso",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match &self.form {
            HazardForm::Oracle { scenario } => scenario.validate().map_err(|e| e.to_string()),
            HazardForm::Parametric { beta } if beta.iter().any(|b| !b.is_finite()) => {
                Err("parametric coefficients must be finite".into())
            }
            _ => Ok(()),
        }
    }

    /// Rate at calendar time `t` for a subject in the source state who entered
    /// it at `t - duration`.
    #[inline]
    pub fn rate(&self, t: f64, duration: f64, w: f64) -> f64 {
        match &self.form {
            HazardForm::Zero => 0.0,
            HazardForm::Oracle { scenario } => match self.transition {
                Transition::Censoring => scenario.censoring.rate(w),
                Transition::HealthyToIll => scenario.mu12.rate(t, w),
                Transition::HealthyToDead => scenario.mu13.rate(t, w),
                Transition::IllToDead => scenario.mu23.rate(duration, w),
            },
            HazardForm::Parametric { beta } => (beta[0] + beta[1] * t + beta[2] * w).exp(),
            HazardForm::PiecewiseLasso { hazard } => hazard.rate(t, duration, w),
        }
    }

    /// Points in `(a, b)` where the rate is discontinuous or kinked along a
    /// sojourn entered at `entry`.
    pub fn breakpoints(&self, a: f64, b: f64, entry: f64, out: &mut Vec<f64>) {
        match &self.form {
            HazardForm::Zero | HazardForm::Parametric { .. } => {}
            HazardForm::Oracle { scenario } => {
                let x = match self.transition {
                    Transition::HealthyToIll => scenario.mu12.late_after,
                    Transition::IllToDead => entry + scenario.mu23.duration_cap,
                    _ => return,
                };
                if x > a && x < b {
                    out.push(x);
                }
            }
            HazardForm::PiecewiseLasso { hazard } => hazard.breakpoints(a, b, entry, out),
        }
    }

    /// `int_a^b rate(t, t - entry, w) dt` within a single sojourn.
    pub fn integrate(&self, a: f64, b: f64, entry: f64, w: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        match &self.form {
            HazardForm::Zero => 0.0,
            HazardForm::Oracle { scenario } if self.transition == Transition::Censoring => {
                scenario.censoring.rate(w) * (b - a)
            }
            HazardForm::Parametric { beta } => {
                let scale = (beta[0] + beta[1] * a + beta[2] * w).exp();
                let len = b - a;
                if beta[1] == 0.0 {
                    scale * len
                } else {
                    scale * (beta[1] * len).exp_m1() / beta[1]
                }
            }
            HazardForm::PiecewiseLasso { hazard } => {
                let mut cuts = Vec::new();
                hazard.breakpoints(a, b, entry, &mut cuts);
                cuts.sort_by(f64::total_cmp);
                let mut total = 0.0;
                let mut left = a;
                for right in cuts.into_iter().chain(std::iter::once(b)) {
                    if right > left {
                        let mid = 0.5 * (left + right);
                        total += hazard.rate(mid, mid - entry, w) * (right - left);
                        left = right;
                    }
                }
                total
            }
            HazardForm::Oracle { .. } => {
                let mut cuts = Vec::new();
                self.breakpoints(a, b, entry, &mut cuts);
                let mut total = 0.0;
                let mut left = a;
                for right in cuts.into_iter().chain(std::iter::once(b)) {
                    total += gauss_legendre_16(|t| self.rate(t, t - entry, w), left, right);
                    left = right;
                }
                total
            }
        }
    }

    /// Pieces of `[0, u)` on which the hazard is active along the path.
    pub fn active_pieces(&self, path: &impl StatePath, u: f64) -> Vec<ActivePiece> {
        let source = self.transition.source();
        path.sojourns()
            .filter(|s| s.state == source && s.start < u)
            .map(|s| ActivePiece {
                start: s.start,
                end: s.end.min(u),
                entry: s.start,
            })
            .collect()
    }

    /// Predictable intensity at `u`: uses the left limit of the path.
    pub fn rate_on_path(&self, path: &impl StatePath, u: f64) -> f64 {
        if path.state_before(u) != self.transition.source() {
            return 0.0;
        }
        let entry = path.entry_time_before(u);
        self.rate(u, u - entry, path.covariate())
    }

    /// Cumulative hazard `int_0^u rate dt` along the path.
    pub fn cumulative_on_path(&self, path: &impl StatePath, u: f64) -> f64 {
        let w = path.covariate();
        self.active_pieces(path, u)
            .iter()
            .map(|p| self.integrate(p.start, p.end, p.entry, w))
            .sum()
    }
}
