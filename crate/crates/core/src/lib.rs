//! Sharp bounds on counterfactual policy transforms in partially identified
//! structural models with finite supports, robust policy choice by the
//! epsilon-maximin empirical (eME) rule, and finite-sample guarantees based on
//! empirical Rademacher complexity.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: supports, grids, set-valued maps, moments and the penalized integrand.
//! - [`envelope`]: lower and upper envelope functions of a weighted measure.
//! - [`complexity`]: Rademacher complexity of the lower-integrand class.
//! - [`decision`]: the eME rule and its certificate.
//! - [`levelset`]: inner and outer empirical level sets of worst-case regret.
//! - [`models`]: builders for program evaluation and simultaneous discrete choice.
//! - [`oracle`], [`lp`]: brute-force identified set by linear programming.
//! - [`io`], [`experiment`]: documents, CSV files and Monte Carlo drivers.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod decision;
pub mod envelope;
pub mod error;
pub mod experiment;
pub mod io;
pub mod levelset;
pub mod lp;
pub mod model;
pub mod models;
pub mod oracle;
mod search;
#[cfg(test)]
mod testutil;

/// Version tag written into every JSON document.
pub const SPEC_VERSION: &str = "1";

pub use complexity::{
    empirical_covering_number, hlb_complexity, mean_rademacher_complexity, rademacher_complexity,
    restrict_hlb, ComplexityEstimate, RademacherDraw, RestrictedClass,
};
pub use decision::{certificate_cn, eme_select, true_regret, Certificate};
pub use envelope::{
    envelope_curve, lower_envelope, lower_envelope_without_penalty, upper_envelope, EnvelopeCurve,
    EnvelopeValue, WeightedMeasure,
};
pub use error::{Error, Result};
pub use levelset::{
    delta_star, empirical_regret_curve, flat_transform, level_set, level_set_sandwich, sharp_transform,
    step_bound, t_sequence, DeltaSchedule, LevelSetResult, StepBound,
};
pub use model::{
    h_integrand, mu_star, validate_model, Atom, ErrorBoundConstants, ModelParts, Policy, PolicyGrid,
    Sample, SearchOptions, Side, StructuralModel, SupportSpec, ThetaGrid, ValidationReport,
};
pub use oracle::{oracle_envelope, OracleDistribution, OracleOptions, OracleValue};
