//! Local linear regression with explicit smoother weights.
//!
//! The fit at `w0` is `sum_i p_i(w0) y_i` with
//! `p_i = K_i (S2 - S1 d_i) / (S0 S2 - S1^2)`, `d_i = w_i - w0`,
//! `S_k = sum_i K_i d_i^k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_critical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
}

impl Kernel {
    /// Kernel value at `u = (w - w0) / h`; zero outside `[-1, 1]`.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
            Kernel::Triangular => 1.0 - a,
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "triangular" => Ok(Kernel::Triangular),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Which observations enter the window around `w0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    Both,
    /// `w0 <= w <= w0 + h`
    Right,
    /// `w0 - h <= w < w0`
    Left,
    /// `w0 < w <= w0 + h`
    RightOpen,
    /// `w0 - h <= w <= w0`
    LeftClosed,
}

impl Side {
    #[inline]
    fn admits(self, d: f64) -> bool {
        match self {
            Side::Both => true,
            Side::Right => d >= 0.0,
            Side::Left => d < 0.0,
            Side::RightOpen => d > 0.0,
            Side::LeftClosed => d <= 0.0,
        }
    }
}

/// What to do when the slope is not identified in the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Error,
    LocalConstant,
}

/// `h = c * n^(-1/4.5)`.
pub fn bandwidth_rule(n: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "bandwidth rule needs n >= 2, got {n}"
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth constant must be positive, got {c}"
        )));
    }
    Ok(c * (n as f64).powf(-1.0 / 4.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherWeights {
    /// One weight per input point; zero outside the window.
    pub weights: Vec<f64>,
    /// Slope weights: `sum_i q_i y_i` is the fitted slope.
    pub slope_weights: Vec<f64>,
    pub in_window: usize,
    /// The slope was not identified and a local constant fit was used.
    pub local_constant: bool,
}

fn weights_impl(
    ws: &[f64],
    w0: f64,
    h: f64,
    kernel: Kernel,
    side: Side,
    policy: DegeneratePolicy,
) -> Result<SmootherWeights> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    let n = ws.len();
    let mut k = vec![0.0; n];
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut in_window = 0;
    for (i, &w) in ws.iter().enumerate() {
        let d = w - w0;
        if !side.admits(d) {
            continue;
        }
        let kw = kernel.weight(d / h);
        if kw > 0.0 {
            k[i] = kw;
            s0 += kw;
            s1 += kw * d;
            s2 += kw * d * d;
            in_window += 1;
        }
    }
    if in_window == 0 {
        return Err(Error::EmptyWindow { w0, h });
    }
    let det = s0 * s2 - s1 * s1;
    // weighted variance of d relative to h^2
    let degenerate = in_window < 2 || det <= 1e-12 * s0 * s0 * h * h;
    if degenerate {
        if policy == DegeneratePolicy::Error {
            return Err(Error::SingularDesign { w0 });
        }
        let weights = k.iter().map(|kw| kw / s0).collect();
        return Ok(SmootherWeights {
            weights,
            slope_weights: vec![0.0; n],
            in_window,
            local_constant: true,
        });
    }
    let mut weights = vec![0.0; n];
    let mut slope_weights = vec![0.0; n];
    for i in 0..n {
        if k[i] > 0.0 {
            let d = ws[i] - w0;
            weights[i] = k[i] * (s2 - s1 * d) / det;
            slope_weights[i] = k[i] * (s0 * d - s1) / det;
        }
    }
    Ok(SmootherWeights {
        weights,
        slope_weights,
        in_window,
        local_constant: false,
    })
}

/// Smoother weights at `w0`; a window whose slope is unidentified falls back
/// to local constant weights.
pub fn smoother_weights(ws: &[f64], w0: f64, h: f64, kernel: Kernel) -> Result<SmootherWeights> {
    weights_impl(
        ws,
        w0,
        h,
        kernel,
        Side::Both,
        DegeneratePolicy::LocalConstant,
    )
}

pub fn one_sided_weights(
    ws: &[f64],
    w0: f64,
    h: f64,
    kernel: Kernel,
    side: Side,
    policy: DegeneratePolicy,
) -> Result<SmootherWeights> {
    weights_impl(ws, w0, h, kernel, side, policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherFit {
    pub w0: f64,
    pub estimate: f64,
    pub slope: f64,
    pub se: f64,
    pub h: f64,
    pub weights: Vec<f64>,
    pub sum_abs_weights: f64,
    pub in_window: usize,
    pub local_constant: bool,
}

impl SmootherFit {
    pub fn ci(&self, level: f64) -> (f64, f64) {
        let z = normal_critical(level);
        (self.estimate - z * self.se, self.estimate + z * self.se)
    }

    pub fn covers(&self, truth: f64, level: f64) -> bool {
        let (lo, hi) = self.ci(level);
        lo <= truth && truth <= hi
    }

    /// Local linear residuals `y_i - (a + b d_i)` for in-window points.
    pub fn residuals(&self, ws: &[f64], ys: &[f64]) -> Vec<f64> {
        ws.iter()
            .zip(ys)
            .zip(&self.weights)
            .map(|((w, y), p)| {
                if *p == 0.0 {
                    0.0
                } else {
                    y - self.estimate - self.slope * (w - self.w0)
                }
            })
            .collect()
    }
}

fn fit_with_weights(ws: &[f64], ys: &[f64], w0: f64, h: f64, sw: SmootherWeights) -> SmootherFit {
    let estimate: f64 = sw.weights.iter().zip(ys).map(|(p, y)| p * y).sum();
    let slope: f64 = sw.slope_weights.iter().zip(ys).map(|(q, y)| q * y).sum();
    let mut var = 0.0;
    for ((p, w), y) in sw.weights.iter().zip(ws).zip(ys) {
        if *p != 0.0 {
            let r = y - estimate - slope * (w - w0);
            var += p * p * r * r;
        }
    }
    let sum_abs_weights = sw.weights.iter().map(|p| p.abs()).sum();
    SmootherFit {
        w0,
        estimate,
        slope,
        se: var.sqrt(),
        h,
        weights: sw.weights,
        sum_abs_weights,
        in_window: sw.in_window,
        local_constant: sw.local_constant,
    }
}

/// Kernel-weighted least squares line at `w0`; the SE is the
/// heteroskedasticity-robust sandwich `sqrt(sum p_i^2 r_i^2)`.
pub fn local_linear_fit(
    ws: &[f64],
    ys: &[f64],
    w0: f64,
    h: f64,
    kernel: Kernel,
) -> Result<SmootherFit> {
    local_linear_fit_with(ws, ys, w0, h, kernel, Side::Both, DegeneratePolicy::Error)
}

pub fn local_linear_fit_with(
    ws: &[f64],
    ys: &[f64],
    w0: f64,
    h: f64,
    kernel: Kernel,
    side: Side,
    policy: DegeneratePolicy,
) -> Result<SmootherFit> {
    if ws.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "{} covariates but {} responses",
            ws.len(),
            ys.len()
        )));
    }
    let sw = weights_impl(ws, w0, h, kernel, side, policy)?;
    Ok(fit_with_weights(ws, ys, w0, h, sw))
}

/// Fits at every point of `grid`, in parallel.
pub fn local_linear_curve(
    ws: &[f64],
    ys: &[f64],
    grid: &[f64],
    h: f64,
    kernel: Kernel,
) -> Result<Vec<SmootherFit>> {
    grid.par_iter()
        .map(|&w0| local_linear_fit(ws, ys, w0, h, kernel))
        .collect()
}
