//! Small dense linear programs: a two-phase tableau simplex with Bland's rule,
//! and exhaustive basis enumeration for cross-checking tiny instances.
//!
//! Problems are `min c.x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub`, `x >= 0`.

// Dense tableau code reads best with explicit row and column indices.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

/// Pivot and feasibility tolerance.
pub const LP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.c.len();
        if self.a_eq.len() != self.b_eq.len() || self.a_ub.len() != self.b_ub.len() {
            return Err(Error::contract("constraint rows and right-hand sides differ in number"));
        }
        if self.a_eq.iter().chain(&self.a_ub).any(|r| r.len() != n) {
            return Err(Error::contract("constraint row length differs from the objective"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c)
            || !finite(&self.b_eq)
            || !finite(&self.b_ub)
            || !self.a_eq.iter().chain(&self.a_ub).all(|r| finite(r))
        {
            return Err(Error::contract("linear program has non-finite data"));
        }
        Ok(())
    }

    /// Equality form with one slack per inequality and non-negative right-hand sides.
    fn standard_form(&self) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
        let n = self.c.len();
        let k = self.a_ub.len();
        let mut rows = Vec::with_capacity(self.a_eq.len() + k);
        let mut rhs = Vec::with_capacity(self.a_eq.len() + k);
        for (r, &b) in self.a_eq.iter().zip(&self.b_eq) {
            let mut row = r.clone();
            row.resize(n + k, 0.0);
            rows.push(row);
            rhs.push(b);
        }
        for (i, (r, &b)) in self.a_ub.iter().zip(&self.b_ub).enumerate() {
            let mut row = r.clone();
            row.resize(n + k, 0.0);
            row[n + i] = 1.0;
            rows.push(row);
            rhs.push(b);
        }
        for (row, b) in rows.iter_mut().zip(rhs.iter_mut()) {
            if *b < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                *b = -*b;
            }
        }
        (rows, rhs, n + k)
    }
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    m: usize,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        self.t[r].iter_mut().for_each(|v| *v /= p);
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Bland's rule on the columns in `allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let obj = self.m;
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.t[obj][j] < -LP_TOL) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i][enter];
                if a > LP_TOL {
                    let ratio = self.t[i][self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - LP_TOL
                                || (ratio <= lr + LP_TOL && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, enter),
            }
        }
    }
}

/// Two-phase simplex.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.check()?;
    let (rows, rhs, nv) = lp.standard_form();
    let m = rows.len();
    let cols = nv + m;
    let mut t = Vec::with_capacity(m + 1);
    for (i, (row, &b)) in rows.iter().zip(&rhs).enumerate() {
        let mut r = row.clone();
        r.resize(cols + 1, 0.0);
        r[nv + i] = 1.0;
        r[cols] = b;
        t.push(r);
    }
    // Phase-one objective: sum of artificials, expressed in non-basic terms.
    let mut obj = vec![0.0; cols + 1];
    for r in &t {
        for j in 0..nv {
            obj[j] -= r[j];
        }
        obj[cols] -= r[cols];
    }
    t.push(obj);
    let mut tab = Tableau {
        t,
        basis: (nv..nv + m).collect(),
        m,
        cols,
    };
    tab.optimize(cols);
    if -tab.t[m][cols] > LP_TOL * (1.0 + rhs.iter().map(|b| b.abs()).sum::<f64>()) {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive artificials out of the basis; rows where that is impossible are redundant.
    let mut keep = vec![true; m];
    for i in 0..m {
        if tab.basis[i] >= nv {
            match (0..nv).find(|&j| tab.t[i][j].abs() > LP_TOL) {
                Some(j) => tab.pivot(i, j),
                None => keep[i] = false,
            }
        }
    }
    let mut t2: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        if keep[i] {
            let mut r: Vec<f64> = tab.t[i][..nv].to_vec();
            r.push(tab.t[i][cols]);
            t2.push(r);
            basis.push(tab.basis[i]);
        }
    }
    let m2 = t2.len();
    let mut obj = vec![0.0; nv + 1];
    obj[..lp.c.len()].copy_from_slice(&lp.c);
    for (r, &b) in t2.iter().zip(&basis) {
        let cb = obj[b];
        if cb != 0.0 {
            for j in 0..=nv {
                obj[j] -= cb * r[j];
            }
        }
    }
    t2.push(obj);
    let mut tab = Tableau {
        t: t2,
        basis,
        m: m2,
        cols: nv,
    };
    if !tab.optimize(nv) {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; nv];
    for (i, &b) in tab.basis.iter().enumerate() {
        x[b] = tab.t[i][nv];
    }
    x.truncate(lp.c.len());
    let value = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { value, x })
}

/// Exhaustive search over bases of the equality form. Refuses when the
/// number of candidate bases exceeds `max_bases`. Unboundedness is not
/// detected; callers use it on bounded problems only.
pub fn solve_by_vertices(lp: &LinearProgram, max_bases: u64) -> Result<LpOutcome> {
    lp.check()?;
    let (rows, rhs, nv) = lp.standard_form();
    let (rows, rhs) = match independent_rows(rows, rhs) {
        Some(p) => p,
        None => return Ok(LpOutcome::Infeasible),
    };
    let m = rows.len();
    if m == 0 {
        // Only x = 0 is a vertex of the non-negative orthant.
        return Ok(LpOutcome::Optimal {
            value: 0.0,
            x: vec![0.0; lp.c.len()],
        });
    }
    if binomial(nv as u64, m as u64).is_none_or(|b| b > max_bases) {
        return Err(Error::Budget(format!("C({nv}, {m}) bases exceed {max_bases}")));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        let a: Vec<Vec<f64>> = rows.iter().map(|r| pick.iter().map(|&j| r[j]).collect()).collect();
        if let Some(xb) = gauss_solve(a, rhs.clone()) {
            if xb.iter().all(|&v| v >= -LP_TOL) {
                let mut x = vec![0.0; nv];
                for (&j, &v) in pick.iter().zip(&xb) {
                    x[j] = v.max(0.0);
                }
                let val: f64 = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                if best.as_ref().is_none_or(|(b, _)| val < *b) {
                    x.truncate(lp.c.len());
                    best = Some((val, x));
                }
            }
        }
        if !next_combination(&mut pick, nv) {
            break;
        }
    }
    Ok(match best {
        Some((value, x)) => LpOutcome::Optimal { value, x },
        None => LpOutcome::Infeasible,
    })
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Drops linearly dependent rows of `[A | b]`; `None` if the system is inconsistent.
fn independent_rows(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = rows.first().map_or(0, Vec::len);
    let mut work: Vec<Vec<f64>> = rows
        .iter()
        .zip(&rhs)
        .map(|(r, &b)| {
            let mut v = r.clone();
            v.push(b);
            v
        })
        .collect();
    let mut keep = Vec::new();
    let mut reduced: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, row) in work.iter_mut().enumerate() {
        for (p, piv) in &reduced {
            let f = row[*p];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(piv) {
                    *v -= f * pv;
                }
            }
        }
        let lead = (0..n).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
        match lead {
            Some(p) if row[p].abs() > LP_TOL => {
                let d = row[p];
                row.iter_mut().for_each(|v| *v /= d);
                reduced.push((p, row.clone()));
                keep.push(i);
            }
            _ => {
                if row[n].abs() > LP_TOL {
                    return None;
                }
            }
        }
    }
    Some((
        keep.iter().map(|&i| rows[i].clone()).collect(),
        keep.iter().map(|&i| rhs[i]).collect(),
    ))
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let p = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() <= 1e-12 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for i in col + 1..m {
            let f = a[i][col] / a[col][col];
            if f != 0.0 {
                for k in col..m {
                    a[i][k] -= f * a[col][k];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}
