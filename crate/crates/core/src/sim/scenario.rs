//! Scenario parameters and the closed-form hazards of the simulation design.
//!
//! Defaults reproduce the illness-death scenario with horizon 5,
//! `W ~ Uniform(-4, 4)` and state-dependent censoring.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Healthy -> ill:
/// `base * exp(cos_coef*cos(pi W/2) + late_coef*1(t > late_after) + w_coef*W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mu12Params {
    pub base: f64,
    pub cos_coef: f64,
    pub late_coef: f64,
    pub late_after: f64,
    pub w_coef: f64,
}

impl Default for Mu12Params {
    fn default() -> Self {
        Mu12Params {
            base: 0.3,
            cos_coef: 0.15,
            late_coef: 0.15,
            late_after: 2.5,
            w_coef: -0.05,
        }
    }
}

impl Mu12Params {
    fn covariate_part(&self, w: f64) -> f64 {
        self.base * (self.cos_coef * (PI * w / 2.0).cos() + self.w_coef * w).exp()
    }

    pub fn rate(&self, t: f64, w: f64) -> f64 {
        let late = if t > self.late_after {
            self.late_coef
        } else {
            0.0
        };
        self.covariate_part(w) * late.exp()
    }

    /// Supremum over `t` in `[a, b]`.
    pub fn sup(&self, a: f64, b: f64, w: f64) -> f64 {
        let early = a <= self.late_after;
        let late = b > self.late_after;
        let factor = match (early, late) {
            (true, true) => self.late_coef.max(0.0),
            (true, false) => 0.0,
            (false, _) => self.late_coef,
        };
        self.covariate_part(w) * factor.exp()
    }
}

/// Healthy -> dead: `base * exp(sin_coef*sin(pi W/2) + t_coef*t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mu13Params {
    pub base: f64,
    pub sin_coef: f64,
    pub t_coef: f64,
}

impl Default for Mu13Params {
    fn default() -> Self {
        Mu13Params {
            base: 0.1,
            sin_coef: 0.3,
            t_coef: 0.05,
        }
    }
}

impl Mu13Params {
    pub fn rate(&self, t: f64, w: f64) -> f64 {
        self.base * (self.sin_coef * (PI * w / 2.0).sin() + self.t_coef * t).exp()
    }

    pub fn sup(&self, a: f64, b: f64, w: f64) -> f64 {
        self.rate(a, w).max(self.rate(b, w))
    }
}

/// Ill -> dead:
/// `base * exp(duration_coef * min(t - S(t), duration_cap) * P(min(W, w_cap)))`
/// with `P` the polynomial given by `poly` (constant term first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mu23Params {
    pub base: f64,
    pub duration_coef: f64,
    pub duration_cap: f64,
    pub w_cap: f64,
    pub poly: Vec<f64>,
}

impl Default for Mu23Params {
    fn default() -> Self {
        Mu23Params {
            base: 1.0,
            duration_coef: -0.75,
            duration_cap: 3.0,
            w_cap: 3.0,
            poly: vec![1.07, 0.09, -0.024, -0.014, 0.001, 0.00065],
        }
    }
}

impl Mu23Params {
    pub fn slope(&self, w: f64) -> f64 {
        let wbar = w.min(self.w_cap);
        let p = self.poly.iter().rev().fold(0.0, |acc, c| acc * wbar + c);
        self.duration_coef * p
    }

    /// Rate given calendar time and duration since entering the ill state.
    /// Negative durations are treated as zero.
    pub fn rate(&self, duration: f64, w: f64) -> f64 {
        let d = duration.max(0.0).min(self.duration_cap);
        self.base * (self.slope(w) * d).exp()
    }

    /// Supremum over `t` in `[a, b]` for a subject who entered at `entry`;
    /// the rate is monotone in the duration, so an endpoint attains it.
    pub fn sup(&self, a: f64, b: f64, entry: f64, w: f64) -> f64 {
        self.rate(a - entry, w).max(self.rate(b - entry, w))
    }
}

/// Censoring: `1(Z(t) = 1) * base * exp(band_coef * 1(band_lo <= W < band_hi))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensoringParams {
    pub base: f64,
    pub band_coef: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl Default for CensoringParams {
    fn default() -> Self {
        CensoringParams {
            base: 0.2,
            band_coef: 0.6,
            band_lo: -2.0,
            band_hi: 2.0,
        }
    }
}

impl CensoringParams {
    /// Rate while healthy; zero in the other states.
    pub fn rate(&self, w: f64) -> f64 {
        let in_band = self.band_lo <= w && w < self.band_hi;
        self.base * if in_band { self.band_coef.exp() } else { 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Time horizon.
    pub eta: f64,
    pub w_lo: f64,
    pub w_hi: f64,
    pub seed: u64,
    pub mu12: Mu12Params,
    pub mu13: Mu13Params,
    pub mu23: Mu23Params,
    pub censoring: CensoringParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            eta: 5.0,
            w_lo: -4.0,
            w_hi: 4.0,
            seed: 1,
            mu12: Mu12Params::default(),
            mu13: Mu13Params::default(),
            mu23: Mu23Params::default(),
            censoring: CensoringParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.w_lo < self.w_hi && self.w_lo.is_finite() && self.w_hi.is_finite()) {
            return Err(Error::Config(format!(
                "covariate range must satisfy w_lo < w_hi, got [{}, {}]",
                self.w_lo, self.w_hi
            )));
        }
        let bases = [
            ("mu12.base", self.mu12.base),
            ("mu13.base", self.mu13.base),
            ("mu23.base", self.mu23.base),
            ("censoring.base", self.censoring.base),
        ];
        for (name, v) in bases {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let coefs = [
            self.mu12.cos_coef,
            self.mu12.late_coef,
            self.mu12.late_after,
            self.mu12.w_coef,
            self.mu13.sin_coef,
            self.mu13.t_coef,
            self.mu23.duration_coef,
            self.mu23.duration_cap,
            self.mu23.w_cap,
            self.censoring.band_coef,
            self.censoring.band_lo,
            self.censoring.band_hi,
        ];
        if coefs.iter().chain(&self.mu23.poly).any(|c| !c.is_finite()) {
            return Err(Error::Config("hazard coefficients must be finite".into()));
        }
        if self.mu23.duration_cap < 0.0 {
            return Err(Error::Config("mu23.duration_cap must be >= 0".into()));
        }
        Ok(())
    }

    /// Same scenario with every transition hazard switched off.
    pub fn without_transitions(mut self) -> Self {
        self.mu12.base = 0.0;
        self.mu13.base = 0.0;
        self.mu23.base = 0.0;
        self
    }

    pub fn without_censoring(mut self) -> Self {
        self.censoring.base = 0.0;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg =
            ScenarioConfig::from_toml_str("seed = 9\n[censoring]\nband_coef = 0.0\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.censoring.band_coef, 0.0);
        assert_eq!(cfg.mu12, Mu12Params::default());
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(ScenarioConfig::from_toml_str("eta = 0.0").is_err());
        assert!(ScenarioConfig::from_toml_str("w_lo = 1.0\nw_hi = 1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("[mu12]\nbase = -1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn censoring_band_is_half_open() {
        let c = CensoringParams::default();
        assert!((c.rate(-2.0) - 0.2 * 0.6f64.exp()).abs() < 1e-15);
        assert!((c.rate(2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sups_dominate_on_a_grid() {
        let cfg = ScenarioConfig::default();
        for &w in &[-4.0, -1.3, 0.0, 2.9, 3.5] {
            for &(a, b) in &[(0.0, 5.0), (2.6, 5.0), (0.0, 2.5), (1.0, 3.0)] {
                let s12 = cfg.mu12.sup(a, b, w);
                let s13 = cfg.mu13.sup(a, b, w);
                let s23 = cfg.mu23.sup(a, b, 0.5, w);
                for i in 0..=100 {
                    let t = a + (b - a) * i as f64 / 100.0;
                    assert!(cfg.mu12.rate(t, w) <= s12 * (1.0 + 1e-14));
                    assert!(cfg.mu13.rate(t, w) <= s13 * (1.0 + 1e-14));
                    assert!(cfg.mu23.rate(t - 0.5, w) <= s23 * (1.0 + 1e-14));
                }
            }
        }
    }
}
