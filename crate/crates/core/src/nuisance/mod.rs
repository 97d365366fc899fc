//! Nuisance models: censoring and transition hazards, censoring survival and
//! plug-in outcome models.

mod basis;
mod hazard;
pub mod lasso;
mod outcome;
pub mod parametric;
mod survival;

pub use basis::{Axis, Feature, Margin, PiecewiseHazard, TensorBasis};
pub use hazard::{ActivePiece, HazardForm, HazardModel, Transition};
pub use lasso::{
    at_risk_segments, fit_hal_lite, fit_piecewise_lasso_hazard, quantile_basis, AtRiskSegment,
    HalConfig, LambdaChoice, LassoFit,
};
pub use outcome::{plug_in_outcome_model, OutcomeModel};
pub use parametric::{fit_parametric_censoring, ParametricFit};
pub use survival::{CensoringSurvival, DEFAULT_EPSILON};
