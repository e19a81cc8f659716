//! The epsilon-maximin empirical rule and its finite-sample certificate.

use serde::{Deserialize, Serialize};

use crate::complexity::{hlb_complexity, RademacherDraw};
use crate::envelope::{lower_curve, WeightedMeasure};
use crate::error::{Error, Result};
use crate::model::{Sample, StructuralModel};

/// Default tolerance of the eME rule: a thousandth of the objective's range.
pub fn default_epsilon(model: &StructuralModel) -> f64 {
    let o = model.objective();
    let range = o.phi_ub - o.phi_lb;
    if range > 0.0 {
        1e-3 * range
    } else {
        1e-3
    }
}

/// First index attaining the largest finite value.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the policy chosen by the eME rule: the exact maximizer of the
/// empirical lower envelope, first index on ties. Policies whose envelope is
/// not finite are not admissible.
pub fn eme_select(model: &StructuralModel, sample: &Sample, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::contract("epsilon must be positive"));
    }
    let measure = WeightedMeasure::empirical(model.support(), sample)?;
    let values = lower_curve(model, &measure)?;
    let pick = argmax_first(&values).ok_or(Error::NoAdmissiblePolicy)?;
    let top = values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(values[pick] + epsilon >= top);
    Ok(pick)
}

/// `4 r_n + sqrt(72 ln(2 / (2 - kappa)) h_bar^2 / n) + 5 epsilon`.
pub fn certificate_formula(r_n: f64, h_bar: f64, n: usize, kappa: f64, epsilon: f64) -> f64 {
    4.0 * r_n + (72.0 * (2.0 / (2.0 - kappa)).ln() * h_bar * h_bar / n as f64).sqrt() + 5.0 * epsilon
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gamma_hat: String,
    pub gamma_index: usize,
    pub c_n: f64,
    pub r_n: f64,
    pub h_bar: f64,
    pub n: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// False when members of the complexity class were dropped as non-finite.
    pub valid: bool,
    pub dropped_rows: u128,
    pub class_rows: u128,
    pub heuristic: bool,
}

impl Certificate {
    /// Recomputes `c_n` from the stored fields.
    pub fn recompute(&self) -> f64 {
        certificate_formula(self.r_n, self.h_bar, self.n, self.kappa, self.epsilon)
    }
}

/// With probability at least kappa over samples, the maximin shortfall of the
/// eME choice is at most `c_n`.
pub fn certificate_cn(
    model: &StructuralModel,
    sample: &Sample,
    kappa: f64,
    epsilon: f64,
    seed: u64,
) -> Result<Certificate> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::contract("kappa must lie in (0, 1)"));
    }
    let g = eme_select(model, sample, epsilon)?;
    certificate_for(model, sample, g, kappa, epsilon, seed)
}

pub(crate) fn certificate_for(
    model: &StructuralModel,
    sample: &Sample,
    gamma: usize,
    kappa: f64,
    epsilon: f64,
    seed: u64,
) -> Result<Certificate> {
    let n = sample.n();
    let draw = RademacherDraw::from_seed(n, seed);
    let all: Vec<usize> = (0..model.policies().len()).collect();
    let est = hlb_complexity(model, sample, &all, &draw, false)?;
    let h_bar = model.h_bar();
    Ok(Certificate {
        gamma_hat: model.policies().policies[gamma].id.clone(),
        gamma_index: gamma,
        c_n: certificate_formula(est.r_n, h_bar, n, kappa, epsilon),
        r_n: est.r_n,
        h_bar,
        n,
        kappa,
        epsilon,
        seed,
        valid: est.dropped == 0,
        dropped_rows: est.dropped,
        class_rows: est.rows,
        heuristic: est.heuristic,
    })
}

/// `max_g I_lb(g) - I_lb(gamma)` under the population measure.
pub fn true_regret(model: &StructuralModel, population: &WeightedMeasure, gamma: usize) -> Result<f64> {
    if gamma >= model.policies().len() {
        return Err(Error::contract(format!("policy index {gamma} out of range")));
    }
    let values = lower_curve(model, population)?;
    Ok(regrets(&values)?[gamma])
}

/// Regret of every entry relative to the largest finite entry. Non-finite
/// entries get +inf regret.
pub fn regrets(values: &[f64]) -> Result<Vec<f64>> {
    let top = argmax_first(values).map(|i| values[i]).ok_or(Error::NoAdmissiblePolicy)?;
    Ok(values
        .iter()
        .map(|&v| if v.is_finite() { (top - v).max(0.0) } else { f64::INFINITY })
        .collect())
}
