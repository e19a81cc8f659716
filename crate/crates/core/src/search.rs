//! Tabulated integrand and the search over binary multipliers.
//!
//! For a fixed (theta, gamma) the weighted integral of the lower integrand is
//!
//! ```text
//! F(lambda) = sum_c w_c * min_{p in c} [ base_p + mu * sum_j lambda_j m_j(p) ]
//! ```
//!
//! Moments that are constant over the latent points of every cell (for this
//! theta and gamma) pull out of the inner minimum and enter linearly, so their
//! multipliers are chosen in closed form. Only the latent-dependent moments are
//! enumerated. The upper side is the lower side applied to `-phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{SearchOptions, Side, StructuralModel};

/// Entries kept per cached block table.
const BLOCK_TABLE_LIMIT: usize = 1 << 20;
/// Entries kept across all cached tables of one side.
const TOTAL_TABLE_LIMIT: usize = 1 << 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Exact,
    Heuristic,
}

/// A latent point of one cell: signed objective plus scaled dependent moments.
struct Point {
    base: f64,
    pen: Vec<f64>,
}

pub(crate) struct Block {
    n_moments: usize,
    dep: Vec<usize>,
    indep: Vec<usize>,
    /// Per cell: no latent point with a non-empty counterfactual set.
    infinite: Vec<bool>,
    /// `indep_vals[c * indep.len() + k]` = mu * m_{indep[k]} on cell c.
    indep_vals: Vec<f64>,
    points: Vec<Vec<Point>>,
    /// `table[c * 2^dep + mask]`, present for small exact blocks.
    table: Option<Vec<f64>>,
    mode: Mode,
    stream: u64,
}

/// Best multiplier for one block.
#[derive(Clone, Debug)]
pub(crate) struct Choice {
    pub value: f64,
    pub lambda: Vec<bool>,
    pub heuristic: bool,
}

pub(crate) struct Tabulation {
    n_gamma: usize,
    blocks: Vec<Block>,
    opts: SearchOptions,
}

impl Tabulation {
    pub fn build(model: &StructuralModel, side: Side) -> Result<Self> {
        let n_theta = model.theta().len();
        let n_gamma = model.policies().len();
        let opts = *model.search();
        let mut blocks = Vec::with_capacity(n_theta * n_gamma);
        let mut cached = 0usize;
        for t in 0..n_theta {
            for g in 0..n_gamma {
                let mut b = Block::build(model, side, t, g)?;
                b.stream = (t * n_gamma + g) as u64;
                let d = b.dep.len();
                let exact_ok = d <= opts.exact_max_moments
                    && d < 63
                    && (n_theta as u128) << d <= opts.budget as u128;
                b.mode = if exact_ok {
                    Mode::Exact
                } else if opts.heuristic {
                    Mode::Heuristic
                } else {
                    return Err(Error::Budget(format!(
                        "{d} latent-dependent moments at theta {t}: |Theta| * 2^{d} exceeds budget {} or the exact limit of {} moments; enable the heuristic search",
                        opts.budget, opts.exact_max_moments
                    )));
                };
                if b.mode == Mode::Exact {
                    let size = b.points.len() << d;
                    if size <= BLOCK_TABLE_LIMIT && cached + size <= TOTAL_TABLE_LIMIT {
                        b.build_table();
                        cached += size;
                    }
                }
                blocks.push(b);
            }
        }
        Ok(Tabulation {
            n_gamma,
            blocks,
            opts,
        })
    }

    pub fn block(&self, theta: usize, gamma: usize) -> &Block {
        &self.blocks[theta * self.n_gamma + gamma]
    }

    pub fn opts(&self) -> &SearchOptions {
        &self.opts
    }
}

impl Block {
    fn build(model: &StructuralModel, side: Side, theta: usize, gamma: usize) -> Result<Self> {
        let s = model.support();
        let nz = s.z_atoms.len();
        let n_cells = s.n_cells();
        let j_total = model.n_moments();
        let mu = model.mu_star();
        let sign = match side {
            Side::Lower => 1.0,
            Side::Upper => -1.0,
        };

        // Full moment vectors per point first; dependence is decided afterwards.
        let mut raw: Vec<Vec<(f64, Vec<f64>)>> = Vec::with_capacity(n_cells);
        for c in 0..n_cells {
            let (y, z) = (c / nz, c % nz);
            let mut pts = Vec::new();
            for u in model.gminus(y, z, theta) {
                let stars = model.gstar(y, z, u, theta, gamma);
                if stars.is_empty() {
                    continue;
                }
                let base = stars
                    .iter()
                    .map(|&st| sign * model.phi(st, y, z, u))
                    .fold(f64::INFINITY, f64::min);
                let m: Vec<f64> = (0..j_total).map(|j| model.moment(j, y, z, u, theta)).collect();
                if !base.is_finite() || m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "non-finite objective or moment at y={y}, z={z}, u={u}, theta={theta}"
                    )));
                }
                pts.push((base, m));
            }
            raw.push(pts);
        }

        let mut dep = Vec::new();
        let mut indep = Vec::new();
        for j in 0..j_total {
            let varies = raw
                .iter()
                .any(|pts| pts.iter().any(|(_, m)| m[j] != pts[0].1[j]));
            if varies {
                dep.push(j);
            } else {
                indep.push(j);
            }
        }

        let infinite: Vec<bool> = raw.iter().map(|p| p.is_empty()).collect();
        let mut indep_vals = vec![0.0; n_cells * indep.len()];
        for (c, pts) in raw.iter().enumerate() {
            if let Some((_, m)) = pts.first() {
                for (k, &j) in indep.iter().enumerate() {
                    indep_vals[c * indep.len() + k] = mu * m[j];
                }
            }
        }
        let points = raw
            .into_iter()
            .map(|pts| {
                pts.into_iter()
                    .map(|(base, m)| Point {
                        base,
                        pen: dep.iter().map(|&j| mu * m[j]).collect(),
                    })
                    .collect()
            })
            .collect();

        Ok(Block {
            n_moments: j_total,
            dep,
            indep,
            infinite,
            indep_vals,
            points,
            table: None,
            mode: Mode::Exact,
            stream: 0,
        })
    }

    fn build_table(&mut self) {
        let d = self.dep.len();
        let m = 1usize << d;
        let mut table = vec![f64::INFINITY; self.points.len() * m];
        let mut pen = vec![0.0; m];
        for (c, pts) in self.points.iter().enumerate() {
            let row = &mut table[c * m..(c + 1) * m];
            for p in pts {
                // Subset sums: drop the lowest set bit to reach a smaller mask.
                pen[0] = 0.0;
                for mask in 1..m {
                    let low = mask.trailing_zeros() as usize;
                    pen[mask] = pen[mask & (mask - 1)] + p.pen[low];
                }
                for (slot, &q) in row.iter_mut().zip(&pen) {
                    let v = p.base + q;
                    if v < *slot {
                        *slot = v;
                    }
                }
            }
        }
        self.table = Some(table);
    }

    /// True when every cell with non-zero weight has a finite integrand.
    pub fn finite_on(&self, weights: &[f64]) -> bool {
        weights
            .iter()
            .zip(&self.infinite)
            .all(|(&w, &inf)| w == 0.0 || !inf)
    }

    /// True when every listed cell has a finite integrand.
    pub fn finite_on_cells(&self, used: &[bool]) -> bool {
        used.iter().zip(&self.infinite).all(|(&u, &inf)| !u || !inf)
    }

    /// Optimizes the weighted integral over lambda. Requires `finite_on(weights)`.
    /// Ties go to the smallest lambda read as a binary number with lambda_1 the
    /// lowest bit.
    pub fn search(&self, weights: &[f64], maximize: bool, opts: &SearchOptions) -> Choice {
        debug_assert!(self.finite_on(weights));
        let sgn = if maximize { 1.0 } else { -1.0 };
        let (dep_val, bits) = match self.mode {
            Mode::Exact => {
                let (v, mask) = match &self.table {
                    Some(t) => self.scan_table(t, weights, sgn),
                    None => self.scan_gray(weights, sgn),
                };
                (v, (0..self.dep.len()).map(|k| mask >> k & 1 == 1).collect())
            }
            Mode::Heuristic => self.ascend(weights, sgn, opts),
        };

        let mut lambda = vec![false; self.n_moments];
        for (&j, &b) in self.dep.iter().zip(&bits) {
            lambda[j] = b;
        }
        let ni = self.indep.len();
        let mut value = sgn * dep_val;
        for (k, &j) in self.indep.iter().enumerate() {
            let coef: f64 = weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(c, &w)| w * self.indep_vals[c * ni + k])
                .sum();
            if sgn * coef > 0.0 {
                lambda[j] = true;
                value += coef;
            }
        }
        Choice {
            value,
            lambda,
            heuristic: self.mode == Mode::Heuristic,
        }
    }

    /// Returns (best of sgn * F, mask).
    fn scan_table(&self, table: &[f64], weights: &[f64], sgn: f64) -> (f64, u64) {
        let m = 1usize << self.dep.len();
        let mut total = vec![0.0; m];
        for (c, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &v) in total.iter_mut().zip(&table[c * m..(c + 1) * m]) {
                *t += w * v;
            }
        }
        let mut best = (f64::NEG_INFINITY, 0u64);
        for (mask, &t) in total.iter().enumerate() {
            let v = sgn * t;
            if v > best.0 {
                best = (v, mask as u64);
            }
        }
        best
    }

    fn scan_gray(&self, weights: &[f64], sgn: f64) -> (f64, u64) {
        let d = self.dep.len();
        let mut vals: Vec<Vec<f64>> = self
            .points
            .iter()
            .map(|pts| pts.iter().map(|p| p.base).collect())
            .collect();
        let eval = |vals: &[Vec<f64>]| -> f64 {
            let mut total = 0.0;
            for (c, v) in vals.iter().enumerate() {
                if weights[c] != 0.0 {
                    total += weights[c] * v.iter().copied().fold(f64::INFINITY, f64::min);
                }
            }
            sgn * total
        };
        let mut best = (eval(&vals), 0u64);
        let mut gray = 0u64;
        for i in 1u64..(1u64 << d) {
            let bit = i.trailing_zeros() as usize;
            gray ^= 1 << bit;
            let on = gray >> bit & 1 == 1;
            for (c, pts) in self.points.iter().enumerate() {
                for (slot, p) in vals[c].iter_mut().zip(pts) {
                    if on {
                        *slot += p.pen[bit];
                    } else {
                        *slot -= p.pen[bit];
                    }
                }
            }
            let v = eval(&vals);
            if v > best.0 || (v == best.0 && gray < best.1) {
                best = (v, gray);
            }
        }
        best
    }

    /// Coordinate ascent from the zero mask plus seeded random starts.
    fn ascend(&self, weights: &[f64], sgn: f64, opts: &SearchOptions) -> (f64, Vec<bool>) {
        let d = self.dep.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(self.stream);
        let mut best: Option<(f64, Vec<bool>)> = None;
        for r in 0..opts.restarts.max(1) {
            let mut bits: Vec<bool> = if r == 0 {
                vec![false; d]
            } else {
                (0..d).map(|_| rng.gen::<bool>()).collect()
            };
            let mut cur = sgn * self.dep_value_bits(weights, &bits);
            loop {
                let mut improved = false;
                for k in 0..d {
                    bits[k] = !bits[k];
                    let v = sgn * self.dep_value_bits(weights, &bits);
                    if v > cur {
                        cur = v;
                        improved = true;
                    } else {
                        bits[k] = !bits[k];
                    }
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().is_none_or(|(b, _)| cur > *b) {
                best = Some((cur, bits));
            }
        }
        best.expect("at least one restart")
    }

    fn dep_value_bits(&self, weights: &[f64], bits: &[bool]) -> f64 {
        let mut total = 0.0;
        for (c, pts) in self.points.iter().enumerate() {
            let w = weights[c];
            if w == 0.0 {
                continue;
            }
            let mut best = f64::INFINITY;
            for p in pts {
                let v = p.base
                    + p.pen
                        .iter()
                        .zip(bits)
                        .filter(|(_, &b)| b)
                        .map(|(q, _)| q)
                        .sum::<f64>();
                best = best.min(v);
            }
            total += w * best;
        }
        total
    }

    /// Weighted integral at a given multiplier vector.
    pub fn evaluate(&self, weights: &[f64], lambda: &[bool]) -> f64 {
        debug_assert!(self.finite_on(weights));
        let bits: Vec<bool> = self.dep.iter().map(|&j| lambda[j]).collect();
        let ni = self.indep.len();
        let mut v = self.dep_value_bits(weights, &bits);
        for (k, &j) in self.indep.iter().enumerate() {
            if lambda[j] {
                for (c, &w) in weights.iter().enumerate() {
                    if w != 0.0 {
                        v += w * self.indep_vals[c * ni + k];
                    }
                }
            }
        }
        v
    }

    #[cfg(test)]
    pub fn dep_len(&self) -> usize {
        self.dep.len()
    }

    #[cfg(test)]
    pub fn direct(&self, weights: &[f64], mask: u64) -> f64 {
        let bits: Vec<bool> = (0..self.dep.len()).map(|k| mask >> k & 1 == 1).collect();
        self.dep_value_bits(weights, &bits)
    }
}
