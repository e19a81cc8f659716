//! Lower and upper envelope functions under population or empirical weights.
//!
//! `I_lb(gamma) = inf_theta max_lambda sum_{(y,z)} w(y,z) h_lb(y,z,theta,gamma,lambda)`
//! and the mirror image for `I_ub`. Theta is enumerated over its grid, ties
//! going to the first index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sample, Side, StructuralModel, SupportSpec};

/// Probability weights over the observed cells (y-major, see [`SupportSpec::cell`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedMeasure {
    weights: Vec<f64>,
}

impl WeightedMeasure {
    pub fn new(support: &SupportSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != support.n_cells() {
            return Err(Error::contract(format!(
                "measure has {} weights, support has {} cells",
                weights.len(),
                support.n_cells()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightedMeasure { weights })
    }

    /// Normalizes non-negative masses to sum to one.
    pub fn from_masses(support: &SupportSpec, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::contract("masses must have a positive finite total"));
        }
        WeightedMeasure::new(support, masses.into_iter().map(|m| m / total).collect())
    }

    /// The empirical measure of a sample.
    pub fn empirical(support: &SupportSpec, sample: &Sample) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::contract("sample is empty"));
        }
        let n = sample.n() as f64;
        let weights = sample
            .cell_counts(support)
            .into_iter()
            .map(|c| c as f64 / n)
            .collect();
        Ok(WeightedMeasure { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &WeightedMeasure, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || self.weights.len() != other.weights.len() {
            return Err(Error::contract("mixture weight outside [0, 1] or mismatched supports"));
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        Ok(WeightedMeasure { weights })
    }
}

/// Optimal value of one envelope problem with its optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeValue {
    pub value: f64,
    /// Optimizing theta index (argmin for the lower envelope, argmax for the upper).
    pub theta: usize,
    /// Optimal multipliers at that theta.
    pub lambda: Vec<bool>,
    /// Multipliers came from coordinate ascent rather than enumeration.
    pub heuristic: bool,
}

fn check_gamma(model: &StructuralModel, gamma: usize) -> Result<()> {
    if gamma >= model.policies().len() {
        return Err(Error::contract(format!("policy index {gamma} out of range")));
    }
    Ok(())
}

/// Solves `inf_theta max_lambda` on the lower-side table for arbitrary
/// non-negative weights. Returns the value in lower-side units.
fn solve(model: &StructuralModel, side: Side, weights: &[f64], gamma: usize) -> Result<EnvelopeValue> {
    let tab = model.tabulation(side)?;
    let mut best: Option<EnvelopeValue> = None;
    for t in 0..model.theta().len() {
        let b = tab.block(t, gamma);
        let cand = if b.finite_on(weights) {
            let ch = b.search(weights, true, tab.opts());
            EnvelopeValue {
                value: ch.value,
                theta: t,
                lambda: ch.lambda,
                heuristic: ch.heuristic,
            }
        } else {
            EnvelopeValue {
                value: f64::INFINITY,
                theta: t,
                lambda: vec![false; model.n_moments()],
                heuristic: false,
            }
        };
        if best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
    }
    Ok(best.expect("theta grid is non-empty"))
}

pub(crate) fn lower_from_weights(model: &StructuralModel, weights: &[f64], gamma: usize) -> Result<EnvelopeValue> {
    solve(model, Side::Lower, weights, gamma)
}

pub(crate) fn upper_from_weights(model: &StructuralModel, weights: &[f64], gamma: usize) -> Result<EnvelopeValue> {
    let mut v = solve(model, Side::Upper, weights, gamma)?;
    v.value = -v.value;
    Ok(v)
}

/// `I_lb(gamma)`: infimum over theta of the maximum over binary multipliers of
/// the integrated lower integrand.
pub fn lower_envelope(model: &StructuralModel, measure: &WeightedMeasure, gamma: usize) -> Result<EnvelopeValue> {
    check_gamma(model, gamma)?;
    check_measure(model, measure)?;
    lower_from_weights(model, measure.weights(), gamma)
}

/// `I_ub(gamma)`: supremum over theta of the minimum over binary multipliers of
/// the integrated upper integrand.
pub fn upper_envelope(model: &StructuralModel, measure: &WeightedMeasure, gamma: usize) -> Result<EnvelopeValue> {
    check_gamma(model, gamma)?;
    check_measure(model, measure)?;
    upper_from_weights(model, measure.weights(), gamma)
}

/// Lower envelope with every multiplier held at zero.
pub fn lower_envelope_without_penalty(
    model: &StructuralModel,
    measure: &WeightedMeasure,
    gamma: usize,
) -> Result<EnvelopeValue> {
    check_gamma(model, gamma)?;
    check_measure(model, measure)?;
    let tab = model.tabulation(Side::Lower)?;
    let w = measure.weights();
    let zeros = vec![false; model.n_moments()];
    let mut best: Option<EnvelopeValue> = None;
    for t in 0..model.theta().len() {
        let b = tab.block(t, gamma);
        let value = if b.finite_on(w) { b.evaluate(w, &zeros) } else { f64::INFINITY };
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(EnvelopeValue {
                value,
                theta: t,
                lambda: zeros.clone(),
                heuristic: false,
            });
        }
    }
    Ok(best.expect("theta grid is non-empty"))
}

fn check_measure(model: &StructuralModel, measure: &WeightedMeasure) -> Result<()> {
    if measure.weights().len() != model.support().n_cells() {
        return Err(Error::contract("measure does not match the model's support"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRecord {
    pub gamma_id: String,
    pub gamma: usize,
    pub i_lb: f64,
    pub i_ub: f64,
    pub theta_lb: usize,
    pub theta_ub: usize,
    pub lambda_lb: Vec<bool>,
    pub lambda_ub: Vec<bool>,
    pub heuristic: bool,
}

/// Both envelopes for every policy, ordered by policy id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCurve {
    pub records: Vec<EnvelopeRecord>,
}

impl EnvelopeCurve {
    pub fn get(&self, gamma_id: &str) -> Option<&EnvelopeRecord> {
        self.records.iter().find(|r| r.gamma_id == gamma_id)
    }
}

pub fn envelope_curve(model: &StructuralModel, measure: &WeightedMeasure) -> Result<EnvelopeCurve> {
    check_measure(model, measure)?;
    let w = measure.weights();
    let mut records = (0..model.policies().len())
        .into_par_iter()
        .map(|g| {
            let id = model.policies().policies[g].id.clone();
            let ctx = format!("policy {id}");
            let lo = lower_from_weights(model, w, g).map_err(|e| e.context(&ctx))?;
            let hi = upper_from_weights(model, w, g).map_err(|e| e.context(&ctx))?;
            Ok(EnvelopeRecord {
                gamma_id: id.clone(),
                gamma: g,
                i_lb: lo.value,
                i_ub: hi.value,
                theta_lb: lo.theta,
                theta_ub: hi.theta,
                lambda_lb: lo.lambda,
                lambda_ub: hi.lambda,
                heuristic: lo.heuristic || hi.heuristic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.gamma_id.cmp(&b.gamma_id));
    Ok(EnvelopeCurve { records })
}

/// Lower envelope of every policy in declared order.
pub fn lower_curve(model: &StructuralModel, measure: &WeightedMeasure) -> Result<Vec<f64>> {
    check_measure(model, measure)?;
    lower_values(model, measure.weights())
}

pub(crate) fn lower_values(model: &StructuralModel, weights: &[f64]) -> Result<Vec<f64>> {
    (0..model.policies().len())
        .into_par_iter()
        .map(|g| lower_from_weights(model, weights, g).map(|v| v.value))
        .collect()
}
