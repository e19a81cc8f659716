//! The delta-level-set procedure: empirical regrets, the step bound `T_n`,
//! its flat and sharp transforms, the threshold `delta*`, and the inner and
//! outer empirical level sets that sandwich the true level set.

use serde::{Deserialize, Serialize};

use crate::complexity::{hlb_complexity, sub_seed, RademacherDraw};
use crate::decision::regrets;
use crate::envelope::{lower_curve, WeightedMeasure};
use crate::error::{Error, Result};
use crate::model::{Sample, StructuralModel};

/// `max_g lb_n(g) - lb_n(gamma)` for every policy, in declared order.
pub fn empirical_regret_curve(model: &StructuralModel, sample: &Sample) -> Result<Vec<f64>> {
    let measure = WeightedMeasure::empirical(model.support(), sample)?;
    regrets(&lower_curve(model, &measure)?)
}

/// Indices with regret at most `delta`.
pub fn level_set(regrets: &[f64], delta: f64) -> Result<Vec<usize>> {
    if !(delta >= 0.0) {
        return Err(Error::contract("level-set threshold must be non-negative"));
    }
    Ok(regrets
        .iter()
        .enumerate()
        .filter(|(_, &r)| r <= delta)
        .map(|(i, _)| i)
        .collect())
}

/// `t_j = sqrt(5 ln(c2 j))` with `c2 = (3 / (2 (1 - kappa)))^(2/5)`.
pub fn t_sequence(j: usize, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::contract("kappa must lie in (0, 1)"));
    }
    let c2 = (3.0 / (2.0 * (1.0 - kappa))).powf(0.4);
    if j == 0 || c2 * j as f64 <= 1.0 {
        let min_j = (1.0 / c2).floor() as usize + 1;
        return Err(Error::contract(format!(
            "t_j undefined for j = {j}; smallest admissible j is {min_j}"
        )));
    }
    Ok((5.0 * (c2 * j as f64).ln()).sqrt())
}

/// Strictly decreasing positive thresholds with the sandwich constants
/// `a > 1` and `b = 2 - 1/a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    deltas: Vec<f64>,
    a: f64,
    b: f64,
}

impl DeltaSchedule {
    pub fn new(deltas: Vec<f64>, a: f64) -> Result<Self> {
        if !(a > 1.0) || !a.is_finite() {
            return Err(Error::contract("a must be a finite real above 1"));
        }
        if deltas.is_empty() {
            return Err(Error::contract("schedule is empty"));
        }
        if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::contract("schedule entries must be finite and positive"));
        }
        if deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::contract("schedule must be strictly decreasing"));
        }
        Ok(DeltaSchedule {
            deltas,
            a,
            b: 2.0 - 1.0 / a,
        })
    }

    /// `delta_j = delta_0 q^j` for j < terms.
    pub fn geometric(delta0: f64, q: f64, terms: usize, a: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::contract("geometric ratio must lie in (0, 1)"));
        }
        DeltaSchedule::new((0..terms).map(|j| delta0 * q.powi(j as i32)).collect(), a)
    }

    /// Default: ratio 0.9, 40 terms, `delta_0 = 1.01 * 2 h_bar / (1 - 1/a)`.
    pub fn default_for(h_bar: f64, a: f64) -> Result<Self> {
        if !(a > 1.0) {
            return Err(Error::contract("a must exceed 1"));
        }
        DeltaSchedule::geometric(1.01 * 2.0 * h_bar / (1.0 - 1.0 / a), 0.9, 40, a)
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Requires `(1 - 1/a) delta_0 > 2 h_bar`.
    pub fn check(&self, h_bar: f64) -> Result<()> {
        let lhs = (1.0 - 1.0 / self.a) * self.deltas[0];
        if !(lhs > 2.0 * h_bar) {
            return Err(Error::contract(format!(
                "schedule start too small: (1 - 1/a) * delta_0 = {lhs} must exceed 2 * h_bar = {}",
                2.0 * h_bar
            )));
        }
        Ok(())
    }
}

/// One step `(lower, upper] -> value` of `T_n`. The last step extends down to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInterval {
    pub j: usize,
    pub lower: f64,
    pub upper: f64,
    pub value: f64,
    pub subset_size: usize,
    pub r_n: f64,
    pub seed: u64,
    pub dropped_rows: u128,
}

/// Left-continuous step function, zero above the first threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBound {
    pub intervals: Vec<StepInterval>,
}

impl StepBound {
    /// Step function with the given thresholds (strictly decreasing) and values.
    pub fn from_values(deltas: &[f64], values: &[f64]) -> Result<Self> {
        if deltas.len() != values.len() || deltas.is_empty() {
            return Err(Error::contract("thresholds and values must be non-empty and aligned"));
        }
        if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::contract("thresholds must be positive and strictly decreasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract("step values must be finite and non-negative"));
        }
        let intervals = deltas
            .iter()
            .zip(values)
            .enumerate()
            .map(|(j, (&upper, &value))| StepInterval {
                j,
                lower: deltas.get(j + 1).copied().unwrap_or(0.0),
                upper,
                value,
                subset_size: 0,
                r_n: 0.0,
                seed: 0,
                dropped_rows: 0,
            })
            .collect();
        Ok(StepBound { intervals })
    }

    pub fn delta0(&self) -> f64 {
        self.intervals[0].upper
    }

    /// `T_n(delta)` for `delta > 0`.
    pub fn value_at(&self, delta: f64) -> f64 {
        self.intervals
            .iter()
            .find(|iv| delta > iv.lower && delta <= iv.upper)
            .map_or(0.0, |iv| iv.value)
    }
}

/// Builds `T_n` on the schedule. Interval j uses the difference class over the
/// empirical level set at `b * delta_j` with its own Rademacher draw seeded by
/// `(seed, j)`: `T_j = 2 R_n + 3 t_j (2 h_bar) / sqrt(n)`, and `T_0 = 2 R_n` over
/// all policies.
pub fn step_bound(
    model: &StructuralModel,
    sample: &Sample,
    schedule: &DeltaSchedule,
    kappa: f64,
    seed: u64,
) -> Result<StepBound> {
    let h_bar = model.h_bar();
    schedule.check(h_bar)?;
    let regrets = empirical_regret_curve(model, sample)?;
    let n = sample.n();
    let h_prime = 2.0 * h_bar;
    let all: Vec<usize> = (0..model.policies().len()).collect();
    let deltas = schedule.deltas();
    let mut intervals = Vec::with_capacity(deltas.len());
    for (j, &dj) in deltas.iter().enumerate() {
        let subset = if j == 0 {
            all.clone()
        } else {
            level_set(&regrets, schedule.b() * dj)?
        };
        if subset.is_empty() {
            return Err(Error::contract(format!("interval {j} has an empty policy subset")));
        }
        let s = sub_seed(seed, j as u64);
        let draw = RademacherDraw::from_seed(n, s);
        let est = hlb_complexity(model, sample, &subset, &draw, true)
            .map_err(|e| e.context(&format!("interval {j}")))?;
        let t_term = if j == 0 {
            0.0
        } else {
            3.0 * t_sequence(j, kappa)? * h_prime / (n as f64).sqrt()
        };
        intervals.push(StepInterval {
            j,
            lower: deltas.get(j + 1).copied().unwrap_or(0.0),
            upper: dj,
            value: 2.0 * est.r_n + t_term,
            subset_size: subset.len(),
            r_n: est.r_n,
            seed: s,
            dropped_rows: est.dropped,
        });
    }
    Ok(StepBound { intervals })
}

/// `sup_{delta >= sigma} T_n(delta) / delta`, evaluated per step at the left end
/// `max(sigma, lower)`. The supremum need not be attained.
pub fn flat_transform(step: &StepBound, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::contract("sigma must be positive"));
    }
    Ok(step
        .intervals
        .iter()
        .filter(|iv| iv.upper >= sigma)
        .map(|iv| iv.value / sigma.max(iv.lower))
        .fold(0.0, f64::max))
}

/// `inf { sigma > 0 : flat(sigma) <= eta }`. Step j excludes every sigma below
/// `min(upper_j, T_j / eta)` whenever `T_j / lower_j > eta`; the infimum is the
/// largest such bound. Returns +inf when no sigma up to the first threshold
/// qualifies.
pub fn sharp_transform(step: &StepBound, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::contract("eta must be positive"));
    }
    let mut inf: f64 = 0.0;
    for iv in &step.intervals {
        // Same quotient as in the flat transform, so sharp(flat(sigma)) <= sigma holds in floating point.
        let binds = iv.value > 0.0 && (iv.lower == 0.0 || iv.value / iv.lower > eta);
        if binds {
            inf = inf.max(iv.upper.min(iv.value / eta));
        }
    }
    if inf >= step.delta0() && flat_transform(step, step.delta0())? > eta {
        return Ok(f64::INFINITY);
    }
    Ok(inf)
}

/// `sharp(1 - 1/a) + margin`.
pub fn delta_star(step: &StepBound, a: f64, margin: f64) -> Result<f64> {
    if !(a > 1.0) || !(margin > 0.0) {
        return Err(Error::contract("require a > 1 and margin > 0"));
    }
    let s = sharp_transform(step, 1.0 - 1.0 / a)?;
    if s.is_infinite() {
        return Err(Error::Unbounded(format!(
            "flat transform exceeds 1 - 1/a = {} at delta_0 = {}",
            1.0 - 1.0 / a,
            step.delta0()
        )));
    }
    Ok(s + margin)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetResult {
    pub delta_star: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub margin: f64,
    pub seed: u64,
    /// Empirical level set at `delta / a`.
    pub inner: Vec<String>,
    /// Empirical level set at `b * delta`.
    pub outer: Vec<String>,
    pub inner_index: Vec<usize>,
    pub outer_index: Vec<usize>,
    pub regrets: Vec<f64>,
    pub trace: StepBound,
}

/// With probability at least kappa, `inner` is contained in the true level set
/// at `delta`, which is contained in `outer`. `delta` defaults to `a * delta*`
/// and must not be smaller.
#[allow(clippy::too_many_arguments)]
pub fn level_set_sandwich(
    model: &StructuralModel,
    sample: &Sample,
    kappa: f64,
    a: f64,
    delta: Option<f64>,
    seed: u64,
    schedule: Option<&DeltaSchedule>,
    margin: f64,
) -> Result<LevelSetResult> {
    let owned;
    let schedule = match schedule {
        Some(s) => {
            if (s.a() - a).abs() > 0.0 {
                return Err(Error::contract("schedule was built for a different a"));
            }
            s
        }
        None => {
            owned = DeltaSchedule::default_for(model.h_bar(), a)?;
            &owned
        }
    };
    let trace = step_bound(model, sample, schedule, kappa, seed)?;
    let ds = delta_star(&trace, a, margin)?;
    let required = a * ds;
    let delta = delta.unwrap_or(required);
    if !(delta >= required) {
        return Err(Error::DeltaBelowThreshold {
            delta,
            delta_star: ds,
            required,
        });
    }
    let regrets = empirical_regret_curve(model, sample)?;
    let b = schedule.b();
    let inner_index = level_set(&regrets, delta / a)?;
    let outer_index = level_set(&regrets, b * delta)?;
    let ids = |ix: &[usize]| -> Vec<String> {
        ix.iter().map(|&g| model.policies().policies[g].id.clone()).collect()
    };
    Ok(LevelSetResult {
        delta_star: ds,
        delta,
        a,
        b,
        kappa,
        margin,
        seed,
        inner: ids(&inner_index),
        outer: ids(&outer_index),
        inner_index,
        outer_index,
        regrets,
        trace,
    })
}
