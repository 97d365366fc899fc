//! Zero-order (indicator) spline tensor basis and the piecewise-constant
//! hazard it induces.
//!
//! A feature is a product `prod_m 1(x_m >= knot_{m, k_m})` over a subset of the
//! margins; with every subset up to the full interaction order the model is
//! saturated on the cell grid, so the log-hazard is constant on each cell.

use serde::{Deserialize, Serialize};

/// Largest cell grid accepted from untrusted model files.
pub const MAX_CELLS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Calendar time since baseline.
    Time,
    /// Time since entering the current state.
    Duration,
    /// Baseline covariate W.
    Covariate,
}

impl Axis {
    #[inline]
    pub fn pick(self, t: f64, duration: f64, w: f64) -> f64 {
        match self {
            Axis::Time => t,
            Axis::Duration => duration,
            Axis::Covariate => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub axis: Axis,
    pub knots: Vec<f64>,
}

impl Margin {
    #[inline]
    pub fn index(&self, x: f64) -> usize {
        self.knots.partition_point(|&k| k <= x)
    }
}

/// One basis function: `(margin, knot index)` pairs, one per margin involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub terms: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasis {
    pub margins: Vec<Margin>,
    pub max_order: usize,
}

impl TensorBasis {
    pub fn validate(&self) -> Result<(), String> {
        if self.margins.is_empty() {
            return Err("basis has no margins".into());
        }
        for (i, m) in self.margins.iter().enumerate() {
            if self.margins[..i].iter().any(|o| o.axis == m.axis) {
                return Err(format!("axis {:?} appears twice", m.axis));
            }
            if m.knots.iter().any(|k| !k.is_finite()) {
                return Err("knots must be finite".into());
            }
            if m.knots.windows(2).any(|p| !(p[1] > p[0])) {
                return Err("knots must be strictly increasing".into());
            }
        }
        if self.max_order == 0 || self.max_order > self.margins.len() {
            return Err(format!(
                "max_order {} must be in 1..={}",
                self.max_order,
                self.margins.len()
            ));
        }
        let mut cells: usize = 1;
        for m in &self.margins {
            cells = cells
                .checked_mul(m.knots.len() + 1)
                .filter(|&c| c <= MAX_CELLS)
                .ok_or("cell grid too large")?;
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.margins.iter().map(|m| m.knots.len() + 1).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.dims().iter().product()
    }

    /// Features in canonical order: margin subsets by increasing size, then
    /// lexicographically; knot combinations in row-major order.
    pub fn features(&self) -> Vec<Feature> {
        let p = self.margins.len();
        let mut subsets: Vec<Vec<usize>> = (1u32..(1 << p))
            .map(|mask| (0..p).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>())
            .filter(|s| s.len() <= self.max_order)
            .collect();
        subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let mut out = Vec::new();
        for subset in subsets {
            let sizes: Vec<usize> = subset
                .iter()
                .map(|&m| self.margins[m].knots.len())
                .collect();
            if sizes.contains(&0) {
                continue;
            }
            let mut counter = vec![0usize; subset.len()];
            'odometer: loop {
                out.push(Feature {
                    terms: subset
                        .iter()
                        .copied()
                        .zip(counter.iter().copied())
                        .collect(),
                });
                let mut pos = subset.len();
                loop {
                    if pos == 0 {
                        break 'odometer;
                    }
                    pos -= 1;
                    counter[pos] += 1;
                    if counter[pos] < sizes[pos] {
                        continue 'odometer;
                    }
                    counter[pos] = 0;
                }
            }
        }
        out
    }

    pub fn n_features(&self) -> usize {
        self.features().len()
    }

    /// Cell containing the point, row-major with the last margin fastest.
    #[inline]
    pub fn cell_of(&self, t: f64, duration: f64, w: f64) -> usize {
        let mut cell = 0;
        for m in &self.margins {
            cell = cell * (m.knots.len() + 1) + m.index(m.axis.pick(t, duration, w));
        }
        cell
    }

    /// Per-margin indices of a flattened cell.
    pub fn unflatten(&self, mut cell: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut idx = vec![0; dims.len()];
        for (slot, d) in idx.iter_mut().zip(&dims).rev() {
            *slot = cell % d;
            cell /= d;
        }
        idx
    }

    /// For each feature, the cells on which it equals one.
    pub fn supports(&self, features: &[Feature]) -> Vec<Vec<u32>> {
        let n = self.n_cells();
        let cell_idx: Vec<Vec<usize>> = (0..n).map(|c| self.unflatten(c)).collect();
        features
            .iter()
            .map(|f| {
                (0..n)
                    .filter(|&c| f.terms.iter().all(|&(m, k)| cell_idx[c][m] > k))
                    .map(|c| c as u32)
                    .collect()
            })
            .collect()
    }
}

/// Piecewise-constant hazard on the tensor cell grid:
/// `log rate = intercept + sum_f coefficient_f * feature_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseRepr", into = "PiecewiseRepr")]
pub struct PiecewiseHazard {
    basis: TensorBasis,
    intercept: f64,
    coefficients: Vec<f64>,
    cell_rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseRepr {
    basis: TensorBasis,
    intercept: f64,
    /// In the canonical feature order of [`TensorBasis::features`].
    coefficients: Vec<f64>,
}

impl TryFrom<PiecewiseRepr> for PiecewiseHazard {
    type Error = String;

    fn try_from(r: PiecewiseRepr) -> Result<Self, String> {
        PiecewiseHazard::new(r.basis, r.intercept, r.coefficients)
    }
}

impl From<PiecewiseHazard> for PiecewiseRepr {
    fn from(h: PiecewiseHazard) -> Self {
        PiecewiseRepr {
            basis: h.basis,
            intercept: h.intercept,
            coefficients: h.coefficients,
        }
    }
}

impl PiecewiseHazard {
    pub fn new(basis: TensorBasis, intercept: f64, coefficients: Vec<f64>) -> Result<Self, String> {
        basis.validate()?;
        let features = basis.features();
        if coefficients.len() != features.len() {
            return Err(format!(
                "expected {} coefficients, got {}",
                features.len(),
                coefficients.len()
            ));
        }
        if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err("coefficients must be finite".into());
        }
        let supports = basis.supports(&features);
        let mut log_rates = vec![intercept; basis.n_cells()];
        for (beta, support) in coefficients.iter().zip(&supports) {
            if *beta != 0.0 {
                for &c in support {
                    log_rates[c as usize] += beta;
                }
            }
        }
        let cell_rates = log_rates.iter().map(|l| l.exp()).collect();
        Ok(PiecewiseHazard {
            basis,
            intercept,
            coefficients,
            cell_rates,
        })
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    #[inline]
    pub fn rate(&self, t: f64, duration: f64, w: f64) -> f64 {
        self.cell_rates[self.basis.cell_of(t, duration, w)]
    }

    pub fn cell_rates(&self) -> &[f64] {
        &self.cell_rates
    }

    /// Points in `(a, b)` where the rate can change along a sojourn entered at
    /// `entry`.
    pub fn breakpoints(&self, a: f64, b: f64, entry: f64, out: &mut Vec<f64>) {
        for m in &self.basis.margins {
            let shift = match m.axis {
                Axis::Time => 0.0,
                Axis::Duration => entry,
                Axis::Covariate => continue,
            };
            out.extend(
                m.knots
                    .iter()
                    .map(|k| k + shift)
                    .filter(|&x| x > a && x < b),
            );
        }
    }
}
