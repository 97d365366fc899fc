use serde::{Deserialize, Serialize};

/// States of the irreversible illness-death model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    Healthy,
    Ill,
    Dead,
}

impl State {
    pub fn number(self) -> u8 {
        match self {
            State::Healthy => 1,
            State::Ill => 2,
            State::Dead => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<State> {
        match n {
            1 => Some(State::Healthy),
            2 => Some(State::Ill),
            3 => Some(State::Dead),
            _ => None,
        }
    }

    /// Allowed direct transitions: 1->2, 1->3, 2->3.
    pub fn can_jump_to(self, next: State) -> bool {
        matches!(
            (self, next),
            (State::Healthy, State::Ill)
                | (State::Healthy, State::Dead)
                | (State::Ill, State::Dead)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub state: State,
}

/// Piecewise-constant state path with a baseline covariate. `jumps()` always
/// starts with `(0, Healthy)`; states are right-continuous.
pub trait StatePath {
    fn covariate(&self) -> f64;
    fn jumps(&self) -> &[Jump];

    /// State at `t`, including a jump occurring exactly at `t`.
    fn state_at(&self, t: f64) -> State {
        last_at_or_before(self.jumps(), t).state
    }

    /// Left limit of the state at `t`.
    fn state_before(&self, t: f64) -> State {
        last_strictly_before(self.jumps(), t).state
    }

    /// Time of the latest jump at or before `t` (the paper's S(t)).
    fn entry_time_at(&self, t: f64) -> f64 {
        last_at_or_before(self.jumps(), t).time
    }

    fn entry_time_before(&self, t: f64) -> f64 {
        last_strictly_before(self.jumps(), t).time
    }

    /// Lebesgue measure of `{s < u : state(s) = Ill}`.
    fn illness_time_until(&self, u: f64) -> f64 {
        self.sojourns()
            .filter(|s| s.state == State::Ill)
            .map(|s| (s.end.min(u) - s.start).max(0.0))
            .sum()
    }

    /// Sojourns `(state, start, end)`; the final sojourn ends at +inf.
    fn sojourns(&self) -> Sojourns<'_> {
        Sojourns {
            jumps: self.jumps(),
            next: 0,
        }
    }

    /// Time the path leaves `Healthy`, or +inf.
    fn healthy_exit(&self) -> f64 {
        self.jumps().get(1).map_or(f64::INFINITY, |j| j.time)
    }
}

fn last_at_or_before(jumps: &[Jump], t: f64) -> Jump {
    let k = jumps.partition_point(|j| j.time <= t);
    jumps[k.saturating_sub(1)]
}

fn last_strictly_before(jumps: &[Jump], t: f64) -> Jump {
    let k = jumps.partition_point(|j| j.time < t);
    jumps[k.saturating_sub(1)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sojourn {
    pub state: State,
    pub start: f64,
    pub end: f64,
}

pub struct Sojourns<'a> {
    jumps: &'a [Jump],
    next: usize,
}

impl Iterator for Sojourns<'_> {
    type Item = Sojourn;

    fn next(&mut self) -> Option<Sojourn> {
        let j = *self.jumps.get(self.next)?;
        self.next += 1;
        let end = self.jumps.get(self.next).map_or(f64::INFINITY, |n| n.time);
        Some(Sojourn {
            state: j.state,
            start: j.time,
            end,
        })
    }
}

/// A bare path, handy for building conditioning histories by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathHistory {
    pub w: f64,
    pub jumps: Vec<Jump>,
}

impl PathHistory {
    pub fn healthy(w: f64) -> Self {
        PathHistory {
            w,
            jumps: vec![Jump {
                time: 0.0,
                state: State::Healthy,
            }],
        }
    }

    pub fn with_jump(mut self, time: f64, state: State) -> Self {
        self.jumps.push(Jump { time, state });
        self
    }
}

impl StatePath for PathHistory {
    fn covariate(&self) -> f64 {
        self.w
    }
    fn jumps(&self) -> &[Jump] {
        &self.jumps
    }
}

/// Checks the structural invariants shared by every path: starts healthy at
/// 0, strictly increasing times, irreversible allowed transitions.
pub(crate) fn validate_jumps(jumps: &[Jump]) -> Result<(), String> {
    let first = jumps.first().ok_or("path has no initial state")?;
    if first.time != 0.0 || first.state != State::Healthy {
        return Err("path must start in state 1 at time 0".into());
    }
    for pair in jumps.windows(2) {
        if !(pair[1].time > pair[0].time) || !pair[1].time.is_finite() {
            return Err(format!(
                "jump times must be finite and strictly increasing ({} then {})",
                pair[0].time, pair[1].time
            ));
        }
        if !pair[0].state.can_jump_to(pair[1].state) {
            return Err(format!(
                "transition {}->{} is not allowed",
                pair[0].state.number(),
                pair[1].state.number()
            ));
        }
    }
    Ok(())
}
