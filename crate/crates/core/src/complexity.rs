//! Empirical Rademacher complexity of the lower-integrand class and a greedy
//! covering-number diagnostic.
//!
//! Two routes compute the same complexity. [`restrict_hlb`] materializes the
//! class on the sample, one row per (theta, gamma, lambda), and
//! [`rademacher_complexity`] takes the supremum row by row. For realistic moment
//! counts the row count is astronomically large, so [`hlb_complexity`] works on
//! the tabulated integrand instead: a sample enters only through signed cell
//! totals of the Rademacher signs, and the supremum over lambda is the same
//! multiplier search as in the envelope problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{h_integrand, Sample, Side, StructuralModel};

/// Rademacher signs for one sample, reproducible from the seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RademacherDraw {
    pub signs: Vec<i8>,
    pub seed: u64,
}

impl RademacherDraw {
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        RademacherDraw { signs, seed }
    }

    pub fn new(signs: Vec<i8>, seed: u64) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::contract("Rademacher signs must be +1 or -1"));
        }
        Ok(RademacherDraw { signs, seed })
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    /// The draw with every sign flipped.
    pub fn negated(&self) -> Self {
        RademacherDraw {
            signs: self.signs.iter().map(|s| -s).collect(),
            seed: self.seed,
        }
    }
}

/// A function class restricted to a sample: one row per member, one column per
/// observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedClass {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    /// Declared bound on |entry|.
    pub bound: f64,
    /// Members dropped because they were non-finite somewhere on the sample.
    pub dropped: usize,
}

impl RestrictedClass {
    /// Row-major values.
    pub fn new(values: Vec<f64>, n_rows: usize, n_cols: usize, bound: f64) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::contract("class values do not match its dimensions"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > bound * (1.0 + 1e-12)) {
            return Err(Error::contract(format!("class entry {v} is non-finite or exceeds the bound {bound}")));
        }
        Ok(RestrictedClass {
            values,
            n_rows,
            n_cols,
            bound,
            dropped: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// The class closed under negation.
    pub fn symmetrized(&self) -> Self {
        let mut values = self.values.clone();
        values.extend(self.values.iter().map(|v| -v));
        RestrictedClass {
            values,
            n_rows: 2 * self.n_rows,
            n_cols: self.n_cols,
            bound: self.bound,
            dropped: self.dropped,
        }
    }
}

/// `sup_rows |(1/n) sum_i signs_i * value_{row,i}|`.
pub fn rademacher_complexity(class: &RestrictedClass, draw: &RademacherDraw) -> Result<f64> {
    if draw.len() != class.n_cols {
        return Err(Error::contract(format!(
            "draw has {} signs, class has {} columns",
            draw.len(),
            class.n_cols
        )));
    }
    if class.n_rows == 0 || class.n_cols == 0 {
        return Err(Error::contract("class is empty"));
    }
    let n = class.n_cols as f64;
    let mut best: f64 = 0.0;
    for r in 0..class.n_rows {
        let s: f64 = class
            .row(r)
            .iter()
            .zip(&draw.signs)
            .map(|(v, &e)| f64::from(e) * v)
            .sum();
        best = best.max((s / n).abs());
    }
    Ok(best)
}

/// Average complexity over `draws` seeded draws. Diagnostic only; certificates
/// use a single draw.
pub fn mean_rademacher_complexity(class: &RestrictedClass, seed: u64, draws: usize) -> Result<f64> {
    if draws == 0 {
        return Err(Error::contract("at least one draw is required"));
    }
    let mut total = 0.0;
    for k in 0..draws {
        let draw = RademacherDraw::from_seed(class.n_cols, sub_seed(seed, k as u64));
        total += rademacher_complexity(class, &draw)?;
    }
    Ok(total / draws as f64)
}

/// Deterministic child seed for index `k`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.gen()
}

/// Largest materialized class, in entries.
const CLASS_ENTRY_LIMIT: u128 = 1 << 26;

/// Materializes the lower-integrand class on a sample: rows are all
/// (theta, gamma, lambda) with gamma in `policy_subset` (theta slowest, lambda
/// fastest, lambda read as a binary number with lambda_1 the lowest bit), or
/// all ordered pairs of such rows as differences. Rows that are non-finite on
/// some observation are dropped and counted.
pub fn restrict_hlb(
    model: &StructuralModel,
    sample: &Sample,
    policy_subset: &[usize],
    include_differences: bool,
) -> Result<RestrictedClass> {
    if policy_subset.is_empty() {
        return Err(Error::contract("policy subset is empty"));
    }
    if let Some(g) = policy_subset.iter().find(|&&g| g >= model.policies().len()) {
        return Err(Error::contract(format!("policy index {g} out of range")));
    }
    let j = model.n_moments();
    let n = sample.n();
    let base_rows = (model.theta().len() * policy_subset.len()) as u128 * (1u128 << j.min(100));
    let rows = if include_differences { base_rows * base_rows } else { base_rows };
    if j >= 64 || rows * n as u128 > CLASS_ENTRY_LIMIT {
        return Err(Error::Budget(format!(
            "materializing {rows} class rows over {n} observations exceeds the size limit"
        )));
    }

    let support = model.support();
    let cells = sample.cells(support);
    let mut used: Vec<usize> = cells.clone();
    used.sort_unstable();
    used.dedup();

    let mut singles: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for t in 0..model.theta().len() {
        for &g in policy_subset {
            for mask in 0..(1u64 << j) {
                let lambda: Vec<bool> = (0..j).map(|k| mask >> k & 1 == 1).collect();
                let mut by_cell = vec![0.0; support.n_cells()];
                let mut finite = true;
                for &c in &used {
                    let (y, z) = support.cell_parts(c);
                    let h = h_integrand(model, y, z, t, g, &lambda, Side::Lower)?;
                    finite &= h.is_finite();
                    by_cell[c] = h;
                }
                if finite {
                    singles.push(cells.iter().map(|&c| by_cell[c]).collect());
                } else {
                    dropped += 1;
                }
            }
        }
    }

    let h_bar = model.h_bar();
    let mut class = if include_differences {
        let k = singles.len();
        let mut values = Vec::with_capacity(k * k * n);
        for a in &singles {
            for b in &singles {
                values.extend(a.iter().zip(b).map(|(x, y)| x - y));
            }
        }
        let total = singles.len() + dropped;
        dropped = total * total - k * k;
        RestrictedClass::new(values, k * k, n, 2.0 * h_bar)?
    } else {
        let k = singles.len();
        RestrictedClass::new(singles.concat(), k, n, h_bar)?
    };
    class.dropped = dropped;
    Ok(class)
}

/// Greedy farthest-point cover under `||f - g|| = sqrt(mean_i (f_i - g_i)^2)`.
/// Returns the number of centers needed so that every row lies within `eps` of
/// one. This is an upper bound on the covering number, not the covering number.
pub fn empirical_covering_number(class: &RestrictedClass, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::contract("covering radius must be positive"));
    }
    if class.n_rows == 0 {
        return Ok(0);
    }
    let dist = |a: usize, b: usize| -> f64 {
        let s: f64 = class
            .row(a)
            .iter()
            .zip(class.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (s / class.n_cols.max(1) as f64).sqrt()
    };
    let mut nearest: Vec<f64> = (0..class.n_rows).map(|r| dist(r, 0)).collect();
    let mut centers = 1;
    loop {
        let (far, d) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        if d <= eps {
            return Ok(centers);
        }
        centers += 1;
        for (r, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(dist(r, far));
        }
    }
}

/// Complexity of the lower-integrand class computed on the tabulated integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub r_n: f64,
    /// Members of the class, finite or not.
    pub rows: u128,
    /// Members dropped as non-finite on the sample.
    pub dropped: u128,
    pub seed: u64,
    pub differences: bool,
    /// Some multiplier searches used coordinate ascent.
    pub heuristic: bool,
}

/// Extremes of `S(row) = sum_i signs_i h(row; psi_i)` over finite rows.
struct Extremes {
    max: f64,
    min: f64,
    rows: u128,
    dropped: u128,
    heuristic: bool,
}

fn class_extremes(
    model: &StructuralModel,
    used: &[bool],
    signed: &[f64],
    policy_subset: &[usize],
) -> Result<Extremes> {
    let tab = model.tabulation(Side::Lower)?;
    let per_block: u128 = if model.n_moments() >= 127 {
        u128::MAX
    } else {
        1u128 << model.n_moments()
    };
    let mut ex = Extremes {
        max: f64::NEG_INFINITY,
        min: f64::INFINITY,
        rows: 0,
        dropped: 0,
        heuristic: false,
    };
    for t in 0..model.theta().len() {
        for &g in policy_subset {
            ex.rows = ex.rows.saturating_add(per_block);
            let b = tab.block(t, g);
            if !b.finite_on_cells(used) {
                ex.dropped = ex.dropped.saturating_add(per_block);
                continue;
            }
            let hi = b.search(signed, true, tab.opts());
            let lo = b.search(signed, false, tab.opts());
            ex.heuristic |= hi.heuristic || lo.heuristic;
            ex.max = ex.max.max(hi.value);
            ex.min = ex.min.min(lo.value);
        }
    }
    Ok(ex)
}

/// Rademacher complexity of the lower-integrand class over `policy_subset`,
/// plain (`sup |S|/n`) or of its difference class (`(max S - min S)/n`).
pub fn hlb_complexity(
    model: &StructuralModel,
    sample: &Sample,
    policy_subset: &[usize],
    draw: &RademacherDraw,
    differences: bool,
) -> Result<ComplexityEstimate> {
    if policy_subset.is_empty() {
        return Err(Error::contract("policy subset is empty"));
    }
    if let Some(g) = policy_subset.iter().find(|&&g| g >= model.policies().len()) {
        return Err(Error::contract(format!("policy index {g} out of range")));
    }
    if draw.len() != sample.n() || sample.is_empty() {
        return Err(Error::contract(format!(
            "draw has {} signs, sample has {} rows",
            draw.len(),
            sample.n()
        )));
    }
    let support = model.support();
    let mut signed = vec![0.0; support.n_cells()];
    let mut used = vec![false; support.n_cells()];
    for (c, &e) in sample.cells(support).iter().zip(&draw.signs) {
        signed[*c] += f64::from(e);
        used[*c] = true;
    }
    let ex = class_extremes(model, &used, &signed, policy_subset)?;
    if ex.rows == ex.dropped {
        return Err(Error::contract("every class member is non-finite on the sample"));
    }
    let n = sample.n() as f64;
    let r_n = if differences {
        (ex.max - ex.min) / n
    } else {
        ex.max.abs().max(ex.min.abs()) / n
    };
    Ok(ComplexityEstimate {
        r_n,
        rows: if differences { ex.rows.saturating_mul(ex.rows) } else { ex.rows },
        dropped: if differences {
            let kept = ex.rows - ex.dropped;
            ex.rows.saturating_mul(ex.rows) - kept.saturating_mul(kept)
        } else {
            ex.dropped
        },
        seed: draw.seed,
        differences,
        heuristic: ex.heuristic,
    })
}
