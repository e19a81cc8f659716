//! Brute-force identified set. For every parameter candidate the lowest and
//! highest value of the policy transform over joint distributions of
//! `(U, Y*)` given the observed cell are found by linear programming, subject
//! to support restrictions and every moment inequality. The envelopes must
//! reproduce these values, which is what this module exists to check.

use serde::{Deserialize, Serialize};

use crate::envelope::WeightedMeasure;
use crate::error::{Error, Result};
use crate::lp::{solve, solve_by_vertices, LinearProgram, LpOutcome, LP_TOL};
use crate::model::{Side, StructuralModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    /// Largest number of LP variables for one parameter candidate.
    pub max_variables: usize,
    /// Largest `|Theta| * |policies| * variables` handled per call.
    pub max_work: u64,
    /// Solve by basis enumeration when the number of bases stays below this;
    /// larger programs go to the simplex routine. Zero disables enumeration.
    pub vertex_limit: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_variables: 4000,
            max_work: 50_000_000,
            vertex_limit: 2000,
        }
    }
}

/// Conditional laws attaining an oracle bound at one parameter candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDistribution {
    pub theta: usize,
    /// Per observed cell, a law over the u grid; `None` for cells without mass.
    pub u_given_cell: Vec<Option<Vec<f64>>>,
    /// `(cell, u, law over ystar atoms)` for every (cell, u) with positive mass.
    pub ystar_given: Vec<(usize, usize, Vec<f64>)>,
}

impl OracleDistribution {
    /// Checks normalization and that all mass lies inside the set-valued maps.
    pub fn violations(&self, model: &StructuralModel, gamma: usize) -> Vec<String> {
        let s = model.support();
        let mut out = Vec::new();
        for (c, law) in self.u_given_cell.iter().enumerate() {
            let Some(law) = law else { continue };
            let (y, z) = s.cell_parts(c);
            let allowed = model.gminus(y, z, self.theta);
            let total: f64 = law.iter().sum();
            if (total - 1.0).abs() > 1e-7 || law.iter().any(|&p| p < -1e-9) {
                out.push(format!("cell {c}: u law sums to {total}"));
            }
            for (u, &p) in law.iter().enumerate() {
                if p > 1e-9 && !allowed.contains(&u) {
                    out.push(format!("cell {c}: mass {p} on u={u} outside the factual set"));
                }
            }
        }
        for (c, u, law) in &self.ystar_given {
            let (y, z) = s.cell_parts(*c);
            let allowed = model.gstar(y, z, *u, self.theta, gamma);
            let total: f64 = law.iter().sum();
            if (total - 1.0).abs() > 1e-7 {
                out.push(format!("cell {c}, u={u}: ystar law sums to {total}"));
            }
            for (k, &p) in law.iter().enumerate() {
                if p > 1e-9 && !allowed.contains(&k) {
                    out.push(format!("cell {c}, u={u}: mass on ystar={k} outside the counterfactual set"));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub gamma_id: String,
    pub lb: f64,
    pub ub: f64,
    /// Some parameter candidate admits a distribution meeting every moment.
    pub feasible: bool,
    pub feasible_thetas: Vec<usize>,
    pub witness_lb: Option<OracleDistribution>,
    pub witness_ub: Option<OracleDistribution>,
}

/// LP variables for one (theta, gamma): triples (cell, u, ystar).
struct Program {
    lp: LinearProgram,
    vars: Vec<(usize, usize, usize)>,
}

fn build_program(
    model: &StructuralModel,
    weights: &[f64],
    theta: usize,
    gamma: usize,
    side: Side,
    opts: &OracleOptions,
) -> Result<Option<Program>> {
    let s = model.support();
    let mut vars = Vec::new();
    let mut cells = Vec::new();
    for (c, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let (y, z) = s.cell_parts(c);
        let before = vars.len();
        for u in model.gminus(y, z, theta) {
            for st in model.gstar(y, z, u, theta, gamma) {
                vars.push((c, u, st));
            }
        }
        if vars.len() == before {
            // Positive mass with nowhere to go.
            return Ok(None);
        }
        if vars.len() > opts.max_variables {
            return Err(Error::Budget(format!(
                "oracle program exceeds {} variables",
                opts.max_variables
            )));
        }
        cells.push((c, w, before, vars.len()));
    }
    let nv = vars.len();
    let sign = match side {
        Side::Lower => 1.0,
        Side::Upper => -1.0,
    };
    let c: Vec<f64> = vars
        .iter()
        .map(|&(cell, u, st)| {
            let (y, z) = s.cell_parts(cell);
            sign * model.phi(st, y, z, u)
        })
        .collect();
    let mut a_eq = Vec::with_capacity(cells.len());
    let mut b_eq = Vec::with_capacity(cells.len());
    for &(_, w, lo, hi) in &cells {
        let mut row = vec![0.0; nv];
        row[lo..hi].iter_mut().for_each(|v| *v = 1.0);
        a_eq.push(row);
        b_eq.push(w);
    }
    let mut a_ub = Vec::with_capacity(model.n_moments());
    for j in 0..model.n_moments() {
        let row: Vec<f64> = vars
            .iter()
            .map(|&(cell, u, _)| {
                let (y, z) = s.cell_parts(cell);
                model.moment(j, y, z, u, theta)
            })
            .collect();
        a_ub.push(row);
    }
    let b_ub = vec![0.0; a_ub.len()];
    Ok(Some(Program {
        lp: LinearProgram {
            c,
            a_eq,
            b_eq,
            a_ub,
            b_ub,
        },
        vars,
    }))
}

fn witness(model: &StructuralModel, weights: &[f64], theta: usize, vars: &[(usize, usize, usize)], x: &[f64]) -> OracleDistribution {
    let s = model.support();
    let nu = s.u_grid.len();
    let ns = s.ystar_atoms.len();
    let mut u_given_cell: Vec<Option<Vec<f64>>> = weights
        .iter()
        .map(|&w| if w > 0.0 { Some(vec![0.0; nu]) } else { None })
        .collect();
    let mut joint: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
    for (&(c, u, st), &q) in vars.iter().zip(x) {
        let q = q.max(0.0);
        if let Some(law) = u_given_cell[c].as_mut() {
            law[u] += q / weights[c];
        }
        joint.entry((c, u)).or_insert_with(|| vec![0.0; ns])[st] += q;
    }
    let ystar_given = joint
        .into_iter()
        .filter_map(|((c, u), v)| {
            let tot: f64 = v.iter().sum();
            (tot > LP_TOL).then(|| (c, u, v.iter().map(|q| q / tot).collect()))
        })
        .collect();
    OracleDistribution {
        theta,
        u_given_cell,
        ystar_given,
    }
}

/// Optimal value of one side at one parameter candidate, with the optimal
/// conditional laws; `None` when the candidate admits no distribution.
pub fn oracle_theta(
    model: &StructuralModel,
    measure: &WeightedMeasure,
    theta: usize,
    gamma: usize,
    side: Side,
    opts: &OracleOptions,
) -> Result<Option<(f64, OracleDistribution)>> {
    let w = measure.weights();
    if w.len() != model.support().n_cells() {
        return Err(Error::contract("measure does not match the model support"));
    }
    let Some(prog) = build_program(model, w, theta, gamma, side, opts)? else {
        return Ok(None);
    };
    let out = if opts.vertex_limit > 0 {
        match solve_by_vertices(&prog.lp, opts.vertex_limit) {
            Err(Error::Budget(_)) => solve(&prog.lp)?,
            other => other?,
        }
    } else {
        solve(&prog.lp)?
    };
    match out {
        LpOutcome::Optimal { value, x } => {
            let v = match side {
                Side::Lower => value,
                Side::Upper => -value,
            };
            Ok(Some((v, witness(model, w, theta, &prog.vars, &x))))
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::InvalidModel("oracle program is unbounded".into())),
    }
}

/// Identified-set bounds for one policy: min and max over feasible
/// candidates; `(-inf, +inf, false)` when no candidate is feasible.
pub fn oracle_envelope(
    model: &StructuralModel,
    measure: &WeightedMeasure,
    gamma: usize,
    opts: &OracleOptions,
) -> Result<OracleValue> {
    if gamma >= model.policies().len() {
        return Err(Error::contract(format!("policy index {gamma} out of range")));
    }
    check_work(model, measure, opts, 1)?;
    let mut lb: Option<(f64, OracleDistribution)> = None;
    let mut ub: Option<(f64, OracleDistribution)> = None;
    let mut feasible_thetas = Vec::new();
    for t in 0..model.theta().len() {
        let Some(lo) = oracle_theta(model, measure, t, gamma, Side::Lower, opts)? else {
            continue;
        };
        let hi = oracle_theta(model, measure, t, gamma, Side::Upper, opts)?
            .ok_or_else(|| Error::InvalidModel("feasibility differs between sides".into()))?;
        feasible_thetas.push(t);
        if lb.as_ref().is_none_or(|(v, _)| lo.0 < *v) {
            lb = Some(lo);
        }
        if ub.as_ref().is_none_or(|(v, _)| hi.0 > *v) {
            ub = Some(hi);
        }
    }
    let gamma_id = model.policies().policies[gamma].id.clone();
    Ok(match (lb, ub) {
        (Some((l, wl)), Some((u, wu))) => OracleValue {
            gamma_id,
            lb: l,
            ub: u,
            feasible: true,
            feasible_thetas,
            witness_lb: Some(wl),
            witness_ub: Some(wu),
        },
        _ => OracleValue {
            gamma_id,
            lb: f64::NEG_INFINITY,
            ub: f64::INFINITY,
            feasible: false,
            feasible_thetas,
            witness_lb: None,
            witness_ub: None,
        },
    })
}

/// Oracle bounds for every policy in declared order.
pub fn oracle_curve(model: &StructuralModel, measure: &WeightedMeasure, opts: &OracleOptions) -> Result<Vec<OracleValue>> {
    check_work(model, measure, opts, model.policies().len())?;
    (0..model.policies().len())
        .map(|g| oracle_envelope(model, measure, g, opts))
        .collect()
}

fn check_work(model: &StructuralModel, measure: &WeightedMeasure, opts: &OracleOptions, policies: usize) -> Result<()> {
    let s = model.support();
    let active = measure.weights().iter().filter(|&&w| w > 0.0).count() as u64;
    let per = active * s.u_grid.len() as u64 * s.ystar_atoms.len() as u64;
    let work = per
        .saturating_mul(model.theta().len() as u64)
        .saturating_mul(policies as u64);
    if work > opts.max_work {
        return Err(Error::Budget(format!(
            "oracle work {work} exceeds the budget {}",
            opts.max_work
        )));
    }
    Ok(())
}

/// Objective value and moment vector of one (u, ystar) choice.
type Choice = (f64, Vec<f64>);

/// Best value over degenerate selections: one (u, ystar) pair per active cell,
/// restricted to selections satisfying every moment. Enumerates the product of
/// per-cell choices up to `max_selections`.
pub fn best_degenerate_selection(
    model: &StructuralModel,
    measure: &WeightedMeasure,
    theta: usize,
    gamma: usize,
    side: Side,
    max_selections: u64,
) -> Result<Option<f64>> {
    let s = model.support();
    let w = measure.weights();
    // Per active cell: its weight and every (objective, moment vector) option.
    let mut choices: Vec<(f64, Vec<Choice>)> = Vec::new();
    let mut count: u64 = 1;
    for (c, &wc) in w.iter().enumerate() {
        if wc <= 0.0 {
            continue;
        }
        let (y, z) = s.cell_parts(c);
        let mut opts = Vec::new();
        for u in model.gminus(y, z, theta) {
            let ms: Vec<f64> = (0..model.n_moments()).map(|j| model.moment(j, y, z, u, theta)).collect();
            for st in model.gstar(y, z, u, theta, gamma) {
                opts.push((model.phi(st, y, z, u), ms.clone()));
            }
        }
        if opts.is_empty() {
            return Ok(None);
        }
        count = count.saturating_mul(opts.len() as u64);
        if count > max_selections {
            return Err(Error::Budget(format!("more than {max_selections} degenerate selections")));
        }
        choices.push((wc, opts));
    }
    let jn = model.n_moments();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; choices.len()];
    loop {
        let mut val = 0.0;
        let mut mom = vec![0.0; jn];
        for (k, &i) in idx.iter().enumerate() {
            let (wc, opts) = &choices[k];
            val += wc * opts[i].0;
            for (m, v) in mom.iter_mut().zip(&opts[i].1) {
                *m += wc * v;
            }
        }
        if mom.iter().all(|&m| m <= 1e-12) {
            best = Some(match (best, side) {
                (None, _) => val,
                (Some(b), Side::Lower) => b.min(val),
                (Some(b), Side::Upper) => b.max(val),
            });
        }
        // Odometer over the per-cell choices.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < choices[k].1.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{lower_envelope, upper_envelope};
    use crate::testutil::{moment, one_cell, random_model, random_weights, two_point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(model: &StructuralModel) -> WeightedMeasure {
        WeightedMeasure::new(model.support(), vec![1.0]).unwrap()
    }

    #[test]
    fn without_moments_the_bounds_are_the_objective_range() {
        let m = one_cell(2, 3, &[0.2, 0.5, 0.9], 1).to_model(None).unwrap();
        let v = oracle_envelope(&m, &unit(&m), 0, &OracleOptions::default()).unwrap();
        assert!(v.feasible);
        assert!((v.lb - 0.2).abs() < 1e-12 && (v.ub - 0.9).abs() < 1e-12);
        assert_eq!(v.feasible_thetas, vec![0, 1]);
        assert!(v.witness_lb.unwrap().violations(&m, 0).is_empty());
        let w = unit(&m);
        assert!((lower_envelope(&m, &w, 0).unwrap().value - v.lb).abs() < 1e-12);
        assert!((upper_envelope(&m, &w, 0).unwrap().value - v.ub).abs() < 1e-12);
    }

    // Mass p on the first point meets the moment iff 0.2 p - 0.1 (1 - p) <= 0,
    // so the lowest mean is 0.7 - 0.4 / 3.
    #[test]
    fn moment_restricts_the_mixture() {
        let m = two_point(1, 1.0);
        let v = oracle_envelope(&m, &unit(&m), 0, &OracleOptions::default()).unwrap();
        assert!((v.lb - (0.7 - 0.4 / 3.0)).abs() < 1e-9, "{}", v.lb);
        assert!((v.ub - 0.7).abs() < 1e-9);
        let wit = v.witness_lb.unwrap();
        assert!(wit.violations(&m, 0).is_empty());
        let law = wit.u_given_cell[0].as_ref().unwrap();
        assert!((law[0] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn always_violated_moment_is_infeasible() {
        let mut t = one_cell(1, 2, &[0.3, 0.7], 1);
        t.moments = vec![moment("m", &[0.1, 0.1])];
        let m = t.to_model(None).unwrap();
        let v = oracle_envelope(&m, &unit(&m), 0, &OracleOptions::default()).unwrap();
        assert!(!v.feasible);
        assert_eq!((v.lb, v.ub), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(v.feasible_thetas.is_empty());
    }

    #[test]
    fn lp_matches_degenerate_selection_without_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = random_model(&mut rng, 0);
            let w = WeightedMeasure::new(m.support(), random_weights(&mut rng, 4)).unwrap();
            for t in 0..m.theta().len() {
                for g in 0..m.policies().len() {
                    for side in [Side::Lower, Side::Upper] {
                        let lp = oracle_theta(&m, &w, t, g, side, &OracleOptions::default()).unwrap().unwrap().0;
                        let sel = best_degenerate_selection(&m, &w, t, g, side, 1 << 20).unwrap().unwrap();
                        assert!((lp - sel).abs() < 1e-9, "{lp} vs {sel}");
                    }
                }
            }
        }
    }

    #[test]
    fn vertex_enumeration_agrees_with_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, 1);
        let w = WeightedMeasure::new(m.support(), random_weights(&mut rng, 4)).unwrap();
        let opts = OracleOptions {
            vertex_limit: 1 << 24,
            ..Default::default()
        };
        let simplex = OracleOptions {
            vertex_limit: 0,
            ..Default::default()
        };
        let a = oracle_curve(&m, &w, &simplex).unwrap();
        let b = oracle_curve(&m, &w, &opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.feasible, y.feasible);
            if x.feasible {
                assert!((x.lb - y.lb).abs() < 1e-7 && (x.ub - y.ub).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn envelopes_contain_the_identified_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_model(&mut rng, 2);
            let w = WeightedMeasure::new(m.support(), random_weights(&mut rng, 4)).unwrap();
            for (g, v) in oracle_curve(&m, &w, &OracleOptions::default()).unwrap().iter().enumerate() {
                if v.feasible {
                    assert!(lower_envelope(&m, &w, g).unwrap().value <= v.lb + 1e-9);
                    assert!(upper_envelope(&m, &w, g).unwrap().value >= v.ub - 1e-9);
                }
            }
        }
    }

    #[test]
    fn work_budget() {
        let m = two_point(1, 1.0);
        let opts = OracleOptions {
            max_work: 1,
            ..Default::default()
        };
        assert!(matches!(oracle_curve(&m, &unit(&m), &opts), Err(Error::Budget(_))));
        assert!(oracle_envelope(&m, &unit(&m), 5, &OracleOptions::default()).is_err());
    }
}
