//! Illness-death trajectories with covariate-dependent transition hazards and
//! state-dependent censoring, simulated exactly by thinning.

mod path;
mod scenario;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub(crate) use path::validate_jumps;
pub use path::{Jump, PathHistory, Sojourn, Sojourns, State, StatePath};
pub use scenario::{CensoringParams, Mu12Params, Mu13Params, Mu23Params, ScenarioConfig};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// A complete trajectory on `[0, eta]` together with its latent censoring
/// time. `censor_time == inf` encodes `C >= eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullTrajectory {
    pub id: usize,
    pub w: f64,
    pub jumps: Vec<Jump>,
    pub censor_time: f64,
}

/// The observed data `(C, X^C)`: the path stopped at `c = min(C, eta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSubject {
    pub id: usize,
    pub w: f64,
    pub jumps: Vec<Jump>,
    pub c: f64,
    pub censored: bool,
}

impl StatePath for FullTrajectory {
    fn covariate(&self) -> f64 {
        self.w
    }
    fn jumps(&self) -> &[Jump] {
        &self.jumps
    }
}

impl StatePath for ObservedSubject {
    fn covariate(&self) -> f64 {
        self.w
    }
    fn jumps(&self) -> &[Jump] {
        &self.jumps
    }
}

/// Illness duration `Y = int_[0, eta) 1(Z(s) = 2) ds`, when identified.
pub trait OutcomeDuration {
    fn outcome_duration(&self, eta: f64) -> Option<f64>;
}

impl OutcomeDuration for FullTrajectory {
    fn outcome_duration(&self, eta: f64) -> Option<f64> {
        Some(self.illness_time_until(eta))
    }
}

impl OutcomeDuration for ObservedSubject {
    /// `None` for censored subjects: Y is not a function of `X^C` then.
    fn outcome_duration(&self, eta: f64) -> Option<f64> {
        (!self.censored).then(|| self.illness_time_until(eta))
    }
}

impl FullTrajectory {
    pub fn validate(&self, eta: f64) -> Result<()> {
        validate_jumps(&self.jumps).map_err(Error::InvalidInput)?;
        if self.jumps.last().is_some_and(|j| j.time > eta) {
            return Err(Error::InvalidInput(format!("jump after horizon {eta}")));
        }
        if !(self.censor_time > 0.0) {
            return Err(Error::InvalidInput("censor_time must be > 0".into()));
        }
        Ok(())
    }
}

impl ObservedSubject {
    pub fn validate(&self, eta: f64) -> Result<()> {
        validate_jumps(&self.jumps).map_err(Error::InvalidInput)?;
        if !(self.c > 0.0 && self.c <= eta) {
            return Err(Error::InvalidInput(format!(
                "observation end {} outside (0, {eta}]",
                self.c
            )));
        }
        if self.jumps.last().is_some_and(|j| j.time > self.c) {
            return Err(Error::InvalidInput("jump after the censoring time".into()));
        }
        if self.censored == (self.c >= eta) {
            return Err(Error::InvalidInput(
                "censored flag must equal (c < eta)".into(),
            ));
        }
        Ok(())
    }
}

/// Stop a full trajectory at `min(C, eta)`.
pub fn observe(full: &FullTrajectory, eta: f64) -> ObservedSubject {
    let censored = full.censor_time < eta;
    let c = full.censor_time.min(eta);
    let jumps = full.jumps.iter().copied().filter(|j| j.time <= c).collect();
    ObservedSubject {
        id: full.id,
        w: full.w,
        jumps,
        c,
        censored,
    }
}

/// Simulate subject `subject` of the cohort defined by `config`: W is drawn
/// from the covariate distribution, then `(Z, C) | W` by thinning. The random
/// stream is keyed by `(config.seed, subject)`.
pub fn simulate_subject(config: &ScenarioConfig, subject: u64) -> Result<FullTrajectory> {
    let mut rng = rng::stream(config.seed, subject);
    let w = config.w_lo + (config.w_hi - config.w_lo) * rng.random::<f64>();
    simulate_with_covariate(config, w, subject as usize, &mut rng)
}

/// Simulate `(Z, C) | W = w` from the initial healthy state.
pub fn simulate_with_covariate(
    config: &ScenarioConfig,
    w: f64,
    id: usize,
    rng: &mut StreamRng,
) -> Result<FullTrajectory> {
    let mut jumps = vec![Jump {
        time: 0.0,
        state: State::Healthy,
    }];
    let censor_time = thin(config, w, State::Healthy, 0.0, 0.0, true, rng, &mut jumps)?;
    Ok(FullTrajectory {
        id,
        w,
        jumps,
        censor_time,
    })
}

/// Continue a trajectory without censoring from `state` at time `start`,
/// having entered `state` at `entry`. Returns the jumps after `start`.
pub fn simulate_forward(
    config: &ScenarioConfig,
    w: f64,
    state: State,
    start: f64,
    entry: f64,
    rng: &mut StreamRng,
) -> Result<Vec<Jump>> {
    let mut jumps = Vec::new();
    thin(config, w, state, start, entry, false, rng, &mut jumps)?;
    Ok(jumps)
}

/// Simulate subjects `0..n` in parallel; identical output for any thread count.
pub fn simulate_cohort(config: &ScenarioConfig, n: usize) -> Result<Vec<FullTrajectory>> {
    config.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_subject(config, i))
        .collect()
}

pub fn observe_all(cohort: &[FullTrajectory], eta: f64) -> Vec<ObservedSubject> {
    cohort.iter().map(|f| observe(f, eta)).collect()
}

#[derive(Clone, Copy)]
enum Event {
    To(State),
    Censor,
}

/// Lewis-Ogata thinning over `[start, eta)`. Appends accepted transitions to
/// `jumps` and returns the censoring time (inf when none occurs before eta).
#[allow(clippy::too_many_arguments)]
fn thin(
    config: &ScenarioConfig,
    w: f64,
    mut state: State,
    start: f64,
    mut entry: f64,
    mut censor_pending: bool,
    rng: &mut StreamRng,
    jumps: &mut Vec<Jump>,
) -> Result<f64> {
    let eta = config.eta;
    let mut t = start;
    let mut censor_time = f64::INFINITY;
    let mut events: Vec<(Event, f64)> = Vec::with_capacity(3);
    'segments: while state != State::Dead {
        // Dominating rate on [t, eta] for the current state and censoring status.
        let bound = {
            let mut m = 0.0;
            match state {
                State::Healthy => {
                    m += config.mu12.sup(t, eta, w) + config.mu13.sup(t, eta, w);
                    if censor_pending {
                        m += config.censoring.rate(w);
                    }
                }
                State::Ill => m += config.mu23.sup(t, eta, entry, w),
                State::Dead => {}
            }
            m
        };
        if bound <= 0.0 {
            break;
        }
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / bound;
            if t >= eta {
                break 'segments;
            }
            events.clear();
            match state {
                State::Healthy => {
                    events.push((Event::To(State::Ill), config.mu12.rate(t, w)));
                    events.push((Event::To(State::Dead), config.mu13.rate(t, w)));
                    if censor_pending {
                        events.push((Event::Censor, config.censoring.rate(w)));
                    }
                }
                State::Ill => events.push((Event::To(State::Dead), config.mu23.rate(t - entry, w))),
                State::Dead => unreachable!(),
            }
            let total: f64 = events.iter().map(|e| e.1).sum();
            if total > bound * (1.0 + 1e-12) {
                return Err(Error::ThinningBound {
                    time: t,
                    rate: total,
                    bound,
                });
            }
            let mut v = rng.random::<f64>() * bound;
            if v >= total {
                continue;
            }
            let mut chosen = events[events.len() - 1].0;
            for &(ev, rate) in &events {
                if v < rate {
                    chosen = ev;
                    break;
                }
                v -= rate;
            }
            match chosen {
                Event::To(next) => {
                    jumps.push(Jump {
                        time: t,
                        state: next,
                    });
                    state = next;
                    entry = t;
                }
                Event::Censor => {
                    censor_time = t;
                    censor_pending = false;
                }
            }
            continue 'segments;
        }
    }
    Ok(censor_time)
}
