//! Log-linear censoring hazard `exp(b0 + b1 t + b2 W)` active in the healthy
//! state, fitted by Newton's method on the exact continuous-time likelihood.

use super::hazard::{HazardModel, Transition};
use super::lasso::{at_risk_segments, AtRiskSegment};
use crate::error::{Error, Result};
use crate::quad::gauss_legendre_16;
use crate::sim::ObservedSubject;

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ParametricFit {
    pub model: HazardModel,
    pub beta: [f64; 3],
    /// Inverse observed information.
    pub covariance: [[f64; 3]; 3],
    pub iterations: usize,
    pub log_likelihood: f64,
}

/// Average log-likelihood, score and Hessian at `beta`.
fn derivatives(
    segs: &[AtRiskSegment],
    beta: &[f64; 3],
    norm: f64,
) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let mut ll = 0.0;
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for s in segs {
        if s.event {
            let x = [1.0, s.end, s.w];
            ll += beta[0] + beta[1] * s.end + beta[2] * s.w;
            for j in 0..3 {
                g[j] += x[j];
            }
        }
        let rate = |t: f64| (beta[0] + beta[1] * t + beta[2] * s.w).exp();
        let m0 = gauss_legendre_16(rate, s.start, s.end);
        let m1 = gauss_legendre_16(|t| t * rate(t), s.start, s.end);
        let m2 = gauss_legendre_16(|t| t * t * rate(t), s.start, s.end);
        ll -= m0;
        let w = s.w;
        // m[j][k] = int x_j x_k rate
        let m = [
            [m0, m1, w * m0],
            [m1, m2, w * m1],
            [w * m0, w * m1, w * w * m0],
        ];
        for j in 0..3 {
            g[j] -= m[j][0];
            for k in 0..3 {
                h[j][k] -= m[j][k];
            }
        }
    }
    for (gj, hj) in g.iter_mut().zip(h.iter_mut()) {
        *gj /= norm;
        hj.iter_mut().for_each(|x| *x /= norm);
    }
    (ll / norm, g, h)
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(a)?;
    Some(std::array::from_fn(|i| {
        (0..3).map(|j| inv[i][j] * b[j]).sum()
    }))
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]
    };
    let det = a[0][0] * c(0, 0) + a[0][1] * c(0, 1) + a[0][2] * c(0, 2);
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    Some(std::array::from_fn(|i| {
        std::array::from_fn(|j| c(j, i) / det)
    }))
}

/// Censoring log-likelihood `sum log gamma(C_i) - sum int gamma` over healthy
/// at-risk time.
pub fn log_likelihood(data: &[ObservedSubject], beta: &[f64; 3]) -> f64 {
    let segs = at_risk_segments(Transition::Censoring, data);
    derivatives(&segs, beta, 1.0).0
}

pub fn fit_parametric_censoring(data: &[ObservedSubject]) -> Result<ParametricFit> {
    let segs = at_risk_segments(Transition::Censoring, data);
    let events = segs.iter().filter(|s| s.event).count();
    if events == 0 {
        return Err(Error::NoCensoringEvents);
    }
    let exposure: f64 = segs.iter().map(|s| s.end - s.start).sum();
    let norm = data.len().max(1) as f64;
    let mut beta = [(events as f64 / exposure).ln(), 0.0, 0.0];
    let (mut ll, mut g, mut h) = derivatives(&segs, &beta, norm);
    let mut gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut iterations = 0;
    while gnorm >= GRAD_TOL {
        if iterations == MAX_ITER {
            return Err(Error::NonConvergence {
                iterations,
                residual: gnorm,
            });
        }
        iterations += 1;
        let neg_h: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| -h[i][j]));
        let step = solve3(&neg_h, &g).ok_or(Error::NonConvergence {
            iterations,
            residual: gnorm,
        })?;
        let mut t = 1.0;
        loop {
            let cand: [f64; 3] = std::array::from_fn(|i| beta[i] + t * step[i]);
            let next = derivatives(&segs, &cand, norm);
            if next.0.is_finite() && next.0 >= ll - 1e-14 * ll.abs() || t < 1e-10 {
                beta = cand;
                (ll, g, h) = next;
                break;
            }
            t *= 0.5;
        }
        gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let neg_h: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| -h[i][j] * norm));
    let covariance = invert3(&neg_h).unwrap_or([[f64::NAN; 3]; 3]);
    Ok(ParametricFit {
        model: HazardModel::parametric(Transition::Censoring, beta),
        beta,
        covariance,
        iterations,
        log_likelihood: ll * norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{observe_all, simulate_cohort, ScenarioConfig};

    fn data(cfg: &ScenarioConfig, n: usize) -> Vec<ObservedSubject> {
        observe_all(&simulate_cohort(cfg, n).unwrap(), cfg.eta)
    }

    #[test]
    fn score_vanishes_at_optimum() {
        let cfg = ScenarioConfig::default();
        let d = data(&cfg, 3000);
        let fit = fit_parametric_censoring(&d).unwrap();
        let eps = 1e-5;
        for j in 0..3 {
            let mut up = fit.beta;
            let mut dn = fit.beta;
            up[j] += eps;
            dn[j] -= eps;
            let fd = (log_likelihood(&d, &up) - log_likelihood(&d, &dn)) / (2.0 * eps);
            assert!(fd.abs() < 1e-5 * d.len() as f64, "coordinate {j}: {fd}");
        }
        let segs = at_risk_segments(Transition::Censoring, &d);
        let (_, g, h) = derivatives(&segs, &[-1.0, 0.2, 0.1], 1.0);
        for j in 0..3 {
            let mut up = [-1.0, 0.2, 0.1];
            let mut dn = up;
            up[j] += eps;
            dn[j] -= eps;
            let fd =
                (derivatives(&segs, &up, 1.0).0 - derivatives(&segs, &dn, 1.0).0) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-5 * g[j].abs().max(1.0));
            let fdg = (derivatives(&segs, &up, 1.0).1[j] - derivatives(&segs, &dn, 1.0).1[j])
                / (2.0 * eps);
            assert!((fdg - h[j][j]).abs() < 1e-5 * h[j][j].abs());
        }
    }

    #[test]
    fn recovers_constant_rate() {
        let mut cfg = ScenarioConfig::default();
        cfg.censoring.band_coef = 0.0;
        let fit = fit_parametric_censoring(&data(&cfg, 8000)).unwrap();
        let se = fit.covariance[0][0].sqrt();
        assert!(
            (fit.beta[0] - 0.2f64.ln()).abs() < 3.0 * se,
            "{:?} se {se}",
            fit.beta
        );
    }

    #[test]
    fn no_censoring_is_an_error() {
        let cfg = ScenarioConfig::default().without_censoring();
        let r = fit_parametric_censoring(&data(&cfg, 200));
        assert!(matches!(r, Err(Error::NoCensoringEvents)));
    }
}
