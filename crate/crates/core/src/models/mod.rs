//! Builders for the two worked models and their known-truth simulators.

pub mod dgp;
pub mod program_eval;
pub mod sdc;

pub use dgp::{simulate_dgp, EquilibriumSelection, LatentMass, ProgramEvalTruth, SdcTruth, Truth};
pub use program_eval::{build_program_evaluation, program_evaluation_moment_count, ProgramEvalConfig};
pub use sdc::{build_sdc, build_sdc_with_tau, sdc_moment_count, sdc_tau_hat, SdcBuild, SdcConfig};
