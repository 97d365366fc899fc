//! Conditional expected illness durations from the backward value equations
//!
//! ```text
//! dV2/dt = -1 + mu23(t, t - s, w) V2        V2(eta, s, w) = 0
//! dV1/dt = (mu12 + mu13) V1 - mu12 V2(t, t, w)   V1(eta, w) = 0
//! ```
//!
//! solved backward in time with classical RK4. `V1(0, w)` is the regression
//! function `m(w) = E[Y | W = w]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{HazardModel, Transition};
use crate::sim::{ScenarioConfig, State, StatePath};

/// The three transition intensities of the illness-death model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionHazards {
    pub mu12: HazardModel,
    pub mu13: HazardModel,
    pub mu23: HazardModel,
}

impl TransitionHazards {
    pub fn oracle(scenario: &ScenarioConfig) -> Self {
        TransitionHazards {
            mu12: HazardModel::oracle(Transition::HealthyToIll, scenario),
            mu13: HazardModel::oracle(Transition::HealthyToDead, scenario),
            mu23: HazardModel::oracle(Transition::IllToDead, scenario),
        }
    }

    pub fn zero() -> Self {
        TransitionHazards {
            mu12: HazardModel::zero(Transition::HealthyToIll),
            mu13: HazardModel::zero(Transition::HealthyToDead),
            mu23: HazardModel::zero(Transition::IllToDead),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = [
            (&self.mu12, Transition::HealthyToIll),
            (&self.mu13, Transition::HealthyToDead),
            (&self.mu23, Transition::IllToDead),
        ];
        for (m, t) in expect {
            if m.transition != t {
                return Err(Error::Config(format!(
                    "expected a {} model, got {}",
                    t.label(),
                    m.transition.label()
                )));
            }
            m.validate().map_err(Error::Config)?;
        }
        Ok(())
    }
}

/// Discretization of the value tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub eta: f64,
    /// RK4 step in t.
    pub t_step: f64,
    /// Spacing of the jump-time grid, also the storage step of V2 in t.
    pub s_step: f64,
    /// Sorted covariate nodes.
    pub w_nodes: Vec<f64>,
}

impl Default for TableGrid {
    fn default() -> Self {
        TableGrid::uniform(5.0, 0.005, 0.05, -4.0, 4.0, 0.1)
    }
}

impl TableGrid {
    pub fn uniform(eta: f64, t_step: f64, s_step: f64, w_lo: f64, w_hi: f64, w_step: f64) -> Self {
        let n = ((w_hi - w_lo) / w_step).round().max(1.0) as usize;
        let w_nodes = (0..=n)
            .map(|i| w_lo + i as f64 * (w_hi - w_lo) / n as f64)
            .collect();
        TableGrid {
            eta,
            t_step,
            s_step,
            w_nodes,
        }
    }

    /// Same time grid, covariate nodes at the given points only.
    pub fn at_points(&self, points: &[f64]) -> Self {
        let mut w_nodes = points.to_vec();
        w_nodes.sort_by(f64::total_cmp);
        w_nodes.dedup();
        TableGrid {
            w_nodes,
            ..self.clone()
        }
    }

    /// Same grid with the RK4 step halved.
    pub fn refined(&self) -> Self {
        TableGrid {
            t_step: self.t_step / 2.0,
            ..self.clone()
        }
    }

    fn ratio(x: f64, step: f64) -> Option<usize> {
        let r = x / step;
        let n = r.round();
        ((r - n).abs() < 1e-9 * r.max(1.0) && n >= 1.0).then_some(n as usize)
    }

    /// Number of RK4 steps on `[0, eta]`.
    pub fn n_fine(&self) -> usize {
        Self::ratio(self.eta, self.t_step).unwrap_or(0)
    }

    /// Number of jump-grid intervals on `[0, eta]`.
    pub fn n_coarse(&self) -> usize {
        Self::ratio(self.eta, self.s_step).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.t_step > 0.0 && self.s_step > 0.0) {
            return Err(Error::Config("table steps must be positive".into()));
        }
        if Self::ratio(self.eta, self.s_step).is_none_or(|m| m < 3) {
            return Err(Error::Config(
                "eta must be at least three whole multiples of s_step".into(),
            ));
        }
        if Self::ratio(self.s_step, self.t_step).is_none() {
            return Err(Error::Config(
                "s_step must be a whole multiple of t_step".into(),
            ));
        }
        if self.w_nodes.is_empty() || self.w_nodes.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config(
                "covariate nodes must be finite and nonempty".into(),
            ));
        }
        if self.w_nodes.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config(
                "covariate nodes must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Gridded solutions of the value equations.
///
/// V1 is kept at every RK4 node. V2 is kept on the square `(t_k, s_j)` jump
/// grid, each slice `s_j` solved down to `s_{j-1}` with the duration clamped
/// at zero, so bilinear interpolation near the diagonal stays inside solved
/// values. Slopes are stored next to values for cubic Hermite interpolation
/// in t.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub grid: TableGrid,
    pub label: String,
    pub(crate) v1: Vec<f64>,
    pub(crate) dv1: Vec<f64>,
    pub(crate) v2: Vec<f64>,
    pub(crate) dv2: Vec<f64>,
}

struct Slab {
    v1: Vec<f64>,
    dv1: Vec<f64>,
    v2: Vec<f64>,
    dv2: Vec<f64>,
}

fn checked(rate: f64, t: f64, s: f64, w: f64) -> Result<f64> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(rate)
    } else {
        Err(Error::NonFiniteHazard { t, s, w })
    }
}

/// One backward RK4 step from `t1` to `t1 - h`. Hazards are evaluated
/// strictly inside the step so jumps at grid nodes take the correct side.
fn rk4_back(f: &mut impl FnMut(f64, f64) -> Result<f64>, t1: f64, h: f64, y: f64) -> Result<f64> {
    let nudge = 1e-10 * h;
    let hi = t1 - nudge;
    let mid = t1 - 0.5 * h;
    let lo = t1 - h + nudge;
    let k1 = f(hi, y)?;
    let k2 = f(mid, y - 0.5 * h * k1)?;
    let k3 = f(mid, y - 0.5 * h * k2)?;
    let k4 = f(lo, y - h * k3)?;
    Ok(y - h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0)
}

/// Cubic Lagrange interpolation of the diagonal `V2(s_j, s_j)`.
fn diagonal(diag: &[f64], s_step: f64, eta: f64, t: f64) -> f64 {
    let m = diag.len() - 1;
    let j0 = ((t / s_step).floor() as isize - 1).clamp(0, m as isize - 3) as usize;
    let mut acc = 0.0;
    for a in 0..4 {
        let xa = (j0 + a) as f64 * s_step;
        let mut l = 1.0;
        for b in 0..4 {
            if a != b {
                let xb = (j0 + b) as f64 * s_step;
                l *= (t - xb) / (xa - xb);
            }
        }
        acc += l * diag[j0 + a];
    }
    acc.clamp(0.0, (eta - t).max(0.0))
}

fn solve_slab(h: &TransitionHazards, grid: &TableGrid, w: f64) -> Result<Slab> {
    let n = grid.n_fine();
    let m = grid.n_coarse();
    let r = n / m;
    let dt = grid.eta / n as f64;
    let node = |k: usize| if k == n { grid.eta } else { k as f64 * dt };
    let coarse = |k: usize| {
        if k == m {
            grid.eta
        } else {
            k as f64 * grid.s_step
        }
    };

    let mut v2 = vec![0.0; (m + 1) * (m + 1)];
    let mut dv2 = vec![0.0; (m + 1) * (m + 1)];
    let mut diag = vec![0.0; m + 1];
    for j in 0..=m {
        let s = coarse(j);
        let mut f = |t: f64, v: f64| -> Result<f64> {
            let rate = checked(h.mu23.rate(t, (t - s).max(0.0), w), t, s, w)?;
            Ok(-1.0 + rate * v)
        };
        let lowest = j.saturating_sub(1) * r;
        let mut y = 0.0;
        let row = j * (m + 1);
        v2[row + m] = 0.0;
        dv2[row + m] = f(grid.eta, 0.0)?;
        for k in (lowest..n).rev() {
            y = rk4_back(&mut f, node(k + 1), dt, y)?;
            if k % r == 0 {
                let kc = k / r;
                v2[row + kc] = y;
                dv2[row + kc] = f(node(k), y)?;
            }
        }
        diag[j] = v2[row + j];
    }

    let mut v1 = vec![0.0; n + 1];
    let mut dv1 = vec![0.0; n + 1];
    let mut f = |t: f64, v: f64| -> Result<f64> {
        let a = checked(h.mu12.rate(t, t, w), t, 0.0, w)?;
        let b = checked(h.mu13.rate(t, t, w), t, 0.0, w)?;
        Ok((a + b) * v - a * diagonal(&diag, grid.s_step, grid.eta, t))
    };
    dv1[n] = f(grid.eta, 0.0)?;
    let mut y = 0.0;
    for k in (0..n).rev() {
        y = rk4_back(&mut f, node(k + 1), dt, y)?;
        v1[k] = y;
        dv1[k] = f(node(k), y)?;
    }
    Ok(Slab { v1, dv1, v2, dv2 })
}

/// Solve the value equations for the given hazards on `grid`, in parallel
/// over covariate nodes.
pub fn solve_value_tables(hazards: &TransitionHazards, grid: &TableGrid) -> Result<ValueTables> {
    hazards.validate()?;
    grid.validate()?;
    let slabs: Vec<Slab> = grid
        .w_nodes
        .par_iter()
        .map(|&w| solve_slab(hazards, grid, w))
        .collect::<Result<_>>()?;
    let label = format!(
        "{}/{}/{}",
        hazards.mu12.kind(),
        hazards.mu13.kind(),
        hazards.mu23.kind()
    );
    let mut t = ValueTables {
        grid: grid.clone(),
        label,
        v1: Vec::new(),
        dv1: Vec::new(),
        v2: Vec::new(),
        dv2: Vec::new(),
    };
    for s in slabs {
        t.v1.extend(s.v1);
        t.dv1.extend(s.dv1);
        t.v2.extend(s.v2);
        t.dv2.extend(s.dv2);
    }
    Ok(t)
}

#[inline]
fn hermite(t: f64, t0: f64, step: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let x = (t - t0) / step;
    let x2 = x * x;
    let x3 = x2 * x;
    (2.0 * x3 - 3.0 * x2 + 1.0) * y0
        + (x3 - 2.0 * x2 + x) * step * d0
        + (-2.0 * x3 + 3.0 * x2) * y1
        + (x3 - x2) * step * d1
}

/// Tables restricted to one covariate value: the neighbouring nodes and the
/// linear interpolation weight between them.
#[derive(Debug, Clone, Copy)]
pub struct CovariateView<'a> {
    tables: &'a ValueTables,
    lower: usize,
    frac: f64,
}

impl ValueTables {
    /// Reassemble tables from raw arrays, checking their shapes.
    pub fn from_parts(
        grid: TableGrid,
        label: String,
        v1: Vec<f64>,
        dv1: Vec<f64>,
        v2: Vec<f64>,
        dv2: Vec<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        let nw = grid.w_nodes.len();
        let n1 = (grid.n_fine() + 1) * nw;
        let m = grid.n_coarse() + 1;
        let n2 = m * m * nw;
        if v1.len() != n1 || dv1.len() != n1 || v2.len() != n2 || dv2.len() != n2 {
            return Err(Error::InvalidInput(
                "value table arrays have the wrong size".into(),
            ));
        }
        Ok(ValueTables {
            grid,
            label,
            v1,
            dv1,
            v2,
            dv2,
        })
    }

    pub fn parts(&self) -> [&[f64]; 4] {
        [&self.v1, &self.dv1, &self.v2, &self.dv2]
    }

    pub fn eta(&self) -> f64 {
        self.grid.eta
    }

    pub fn at_w(&self, w: f64) -> Result<CovariateView<'_>> {
        let nodes = &self.grid.w_nodes;
        let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
        let tol = 1e-9 * (1.0 + w.abs());
        if !(w >= first - tol && w <= last + tol) {
            return Err(Error::OutOfRange(format!(
                "covariate {w} outside table nodes [{first}, {last}]"
            )));
        }
        if nodes.len() == 1 {
            return Ok(CovariateView {
                tables: self,
                lower: 0,
                frac: 0.0,
            });
        }
        let lower = nodes
            .partition_point(|&x| x <= w)
            .saturating_sub(1)
            .min(nodes.len() - 2);
        let frac = ((w - nodes[lower]) / (nodes[lower + 1] - nodes[lower])).clamp(0.0, 1.0);
        Ok(CovariateView {
            tables: self,
            lower,
            frac,
        })
    }

    pub fn v1(&self, t: f64, w: f64) -> Result<f64> {
        self.at_w(w)?.v1(t)
    }

    pub fn v2(&self, t: f64, s: f64, w: f64) -> Result<f64> {
        self.at_w(w)?.v2(t, s)
    }

    /// `m(w) = V1(0, w)`.
    pub fn marginal_truth(&self, w: f64) -> Result<f64> {
        self.v1(0.0, w)
    }

    /// `E[Y | X^u]`: accrued illness time plus the value of the state
    /// occupied at `u`.
    pub fn conditional_expectation(&self, path: &impl StatePath, u: f64) -> Result<f64> {
        self.at_w(path.covariate())?
            .conditional_expectation(path, u)
    }
}

impl CovariateView<'_> {
    fn check_time(&self, t: f64) -> Result<f64> {
        let eta = self.tables.grid.eta;
        if !(t >= -1e-12 && t <= eta + 1e-9) {
            return Err(Error::OutOfRange(format!("time {t} outside [0, {eta}]")));
        }
        Ok(t.clamp(0.0, eta))
    }

    fn v1_node(&self, i: usize, t: f64) -> f64 {
        let g = &self.tables.grid;
        let n = g.n_fine();
        let dt = g.eta / n as f64;
        let k = ((t / dt).floor() as usize).min(n - 1);
        let base = i * (n + 1);
        let (v, d) = (&self.tables.v1[base..], &self.tables.dv1[base..]);
        hermite(t, k as f64 * dt, dt, v[k], d[k], v[k + 1], d[k + 1])
    }

    fn v2_node(&self, i: usize, t: f64, s: f64) -> f64 {
        let g = &self.tables.grid;
        let m = g.n_coarse();
        let step = g.eta / m as f64;
        let j = ((s / step).floor() as usize).min(m - 1);
        let lam = (s / step - j as f64).clamp(0.0, 1.0);
        let k = ((t / step).floor() as usize).max(j).min(m - 1);
        let base = i * (m + 1) * (m + 1);
        let slice = |jj: usize| {
            let row = base + jj * (m + 1);
            let (v, d) = (&self.tables.v2[row..], &self.tables.dv2[row..]);
            hermite(t, k as f64 * step, step, v[k], d[k], v[k + 1], d[k + 1])
        };
        if lam == 0.0 {
            slice(j)
        } else {
            (1.0 - lam) * slice(j) + lam * slice(j + 1)
        }
    }

    fn blend(&self, f: impl Fn(usize) -> f64) -> f64 {
        if self.frac == 0.0 {
            f(self.lower)
        } else {
            (1.0 - self.frac) * f(self.lower) + self.frac * f(self.lower + 1)
        }
    }

    /// Expected remaining illness time from the healthy state at `t`.
    pub fn v1(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        let eta = self.tables.grid.eta;
        Ok(self.blend(|i| self.v1_node(i, t)).clamp(0.0, eta - t))
    }

    /// Expected remaining illness time at `t` after entering illness at `s`.
    pub fn v2(&self, t: f64, s: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        if !(s >= 0.0 && s <= t + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "entry time {s} outside [0, {t}]"
            )));
        }
        let s = s.min(t);
        let eta = self.tables.grid.eta;
        Ok(self.blend(|i| self.v2_node(i, t, s)).clamp(0.0, eta - t))
    }

    pub fn value(&self, state: State, t: f64, entry: f64) -> Result<f64> {
        match state {
            State::Healthy => self.v1(t),
            State::Ill => self.v2(t, entry),
            State::Dead => self.check_time(t).map(|_| 0.0),
        }
    }

    /// `E[Y | X^u]` using the path state at `u` (right-continuous).
    pub fn conditional_expectation(&self, path: &impl StatePath, u: f64) -> Result<f64> {
        let accrued = path.illness_time_until(u);
        Ok(accrued + self.value(path.state_at(u), u, path.entry_time_at(u))?)
    }

    /// `E[Y | X^{u-}]`: the state just before `u`, ignoring a jump at `u`.
    pub fn conditional_expectation_before(&self, path: &impl StatePath, u: f64) -> Result<f64> {
        let accrued = path.illness_time_until(u);
        Ok(accrued + self.value(path.state_before(u), u, path.entry_time_before(u))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::PathHistory;

    fn small_grid() -> TableGrid {
        TableGrid::uniform(5.0, 0.005, 0.05, -4.0, 4.0, 1.0)
    }

    #[test]
    fn zero_mu23_gives_remaining_time() {
        let mut scen = ScenarioConfig::default();
        scen.mu23.base = 0.0;
        let t = solve_value_tables(&TransitionHazards::oracle(&scen), &small_grid()).unwrap();
        for &(tt, s, w) in &[
            (0.0, 0.0, 0.0),
            (2.33, 1.07, -1.5),
            (4.99, 0.2, 3.7),
            (5.0, 5.0, 4.0),
        ] {
            assert!((t.v2(tt, s, w).unwrap() - (5.0 - tt)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_illness_gives_zero() {
        let mut scen = ScenarioConfig::default();
        scen.mu12.base = 0.0;
        scen.mu13.base = 0.0;
        let t = solve_value_tables(&TransitionHazards::oracle(&scen), &small_grid()).unwrap();
        for w in [-4.0, -0.3, 2.0] {
            for tt in [0.0, 1.234, 5.0] {
                assert_eq!(t.v1(tt, w).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn terminal_conditions_and_bounds() {
        let t = solve_value_tables(
            &TransitionHazards::oracle(&ScenarioConfig::default()),
            &small_grid(),
        )
        .unwrap();
        for w in [-4.0, -1.0, 0.5, 4.0] {
            assert_eq!(t.v1(5.0, w).unwrap(), 0.0);
            assert_eq!(t.v2(5.0, 2.0, w).unwrap(), 0.0);
            for k in 0..=100 {
                let tt = k as f64 * 0.05;
                let v1 = t.v1(tt, w).unwrap();
                assert!((0.0..=5.0 - tt).contains(&v1));
                for s in [0.0, tt / 2.0, tt] {
                    let v2 = t.v2(tt, s, w).unwrap();
                    assert!((0.0..=5.0 - tt + 1e-15).contains(&v2));
                }
            }
        }
        for (i, _) in t.grid.w_nodes.iter().enumerate() {
            let n = t.grid.n_fine();
            assert_eq!(t.v1[i * (n + 1) + n], 0.0);
        }
    }

    #[test]
    fn expectation_by_state() {
        let t = solve_value_tables(
            &TransitionHazards::oracle(&ScenarioConfig::default()),
            &small_grid(),
        )
        .unwrap();
        let dead = PathHistory::healthy(0.0)
            .with_jump(1.0, State::Ill)
            .with_jump(1.75, State::Dead);
        assert!((t.conditional_expectation(&dead, 3.0).unwrap() - 0.75).abs() < 1e-15);
        let ill = PathHistory::healthy(0.0).with_jump(1.0, State::Ill);
        let e = t.conditional_expectation(&ill, 2.0).unwrap();
        assert!((e - 1.0 - t.v2(2.0, 1.0, 0.0).unwrap()).abs() < 1e-15);
        assert!((t.conditional_expectation(&ill, 5.0).unwrap() - 4.0).abs() < 1e-15);
        // a jump at u is seen by the right-continuous version only
        let left = t
            .at_w(0.0)
            .unwrap()
            .conditional_expectation_before(&ill, 1.0)
            .unwrap();
        assert!((left - t.v1(1.0, 0.0).unwrap()).abs() < 1e-15);
        assert!(t.conditional_expectation(&ill, 5.5).is_err());
    }

    #[test]
    fn rk4_error_shrinks_with_step() {
        let scen = ScenarioConfig::default();
        let h = TransitionHazards::oracle(&scen);
        let coarse = TableGrid::uniform(5.0, 0.05, 0.05, -1.0, 1.0, 1.0);
        let a = solve_value_tables(&h, &coarse).unwrap();
        let b = solve_value_tables(&h, &coarse.refined()).unwrap();
        let c = solve_value_tables(&h, &coarse.refined().refined()).unwrap();
        for w in [-1.0, 0.0, 1.0] {
            let (va, vb, vc) = (
                a.marginal_truth(w).unwrap(),
                b.marginal_truth(w).unwrap(),
                c.marginal_truth(w).unwrap(),
            );
            let ratio = (va - vb).abs() / (vb - vc).abs();
            assert!(ratio > 10.0, "w={w}: ratio {ratio}");
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let mut g = small_grid();
        g.s_step = 0.0033;
        assert!(solve_value_tables(&TransitionHazards::zero(), &g).is_err());
    }
}
