//! Instance generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use policybound::envelope::WeightedMeasure;
use policybound::io::{TabulatedModel, TabulatedMoment};
use policybound::lp::{solve, LinearProgram};
use policybound::models::{LatentMass, ProgramEvalConfig, ProgramEvalTruth, Truth};
use policybound::{Atom, ErrorBoundConstants, Policy, StructuralModel};
use rand::Rng;

/// Two instrument cells, one covariate cell, outcomes on {0, .5, 1}, 5-point
/// latent grid, three propensity levels: 9 propensity pairs times 2 instrument
/// shares, so 18 parameter candidates and 4 policies.
pub fn tiny_pe_config() -> ProgramEvalConfig {
    serde_json::from_value(serde_json::json!({
        "z0_atoms": ["a", "b"],
        "x_atoms": ["x"],
        "y_lb": 0.0,
        "y_ub": 1.0,
        "outcome_grid_points": 3,
        "u_grid_points": 5,
        "g_grid_points": 3
    }))
    .unwrap()
}

/// Random truth on [`tiny_pe_config`] whose propensity and instrument share
/// are on the parameter grid, so the identified set is non-empty.
pub fn random_tiny_truth<R: Rng>(rng: &mut R) -> Truth {
    let g0: Vec<f64> = (0..2).map(|_| [0.0, 0.5, 1.0][rng.gen_range(0..3)]).collect();
    let z_probs = if rng.gen::<bool>() {
        vec![1.0 / 3.0, 2.0 / 3.0]
    } else {
        vec![2.0 / 3.0, 1.0 / 3.0]
    };
    // P(U <= 1/2) = 1/2 keeps the index-cdf moments satisfiable at the grid levels.
    let s1: f64 = rng.gen_range(0.05..0.95);
    let s2: f64 = rng.gen_range(0.05..0.95);
    let umass = [(0.25, 0.5 * s1), (0.5, 0.5 * (1.0 - s1)), (0.75, 0.5 * s2), (1.0, 0.5 * (1.0 - s2))];
    let grid = [0.0, 0.5, 1.0];
    let mut latent = Vec::new();
    for &(u, pu) in &umass {
        let w: Vec<f64> = (0..9).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        for (k, wk) in w.iter().enumerate() {
            latent.push(LatentMass {
                u0: grid[k / 3],
                u1: grid[k % 3],
                u,
                prob: pu * wk / s,
            });
        }
    }
    Truth::ProgramEvaluation(ProgramEvalTruth {
        config: tiny_pe_config(),
        g0,
        z_probs,
        latent,
    })
}

/// Truth used by the Monte Carlo checks: propensities 1/4 and 3/4 on a
/// five-level grid, instrument shares (1/3, 2/3), U uniform on four points.
/// Population lower envelopes are (1/4, 5/24, 5/24, 1/6), so the best policy
/// is unique and its nearest rivals trail by 1/24.
pub fn mc_truth() -> Truth {
    let config: ProgramEvalConfig = serde_json::from_value(serde_json::json!({
        "z0_atoms": ["lo", "hi"],
        "x_atoms": ["x"],
        "y_lb": 0.0,
        "y_ub": 1.0,
        "outcome_grid_points": 3,
        "u_grid_points": 5,
        "g_grid_points": 5
    }))
    .unwrap();
    let points = [
        (0.0, 0.0, 0.25, 0.25),
        (0.0, 0.0, 0.5, 0.125),
        (1.0, 0.0, 0.5, 0.125),
        (1.0, 0.0, 0.75, 0.25),
        (1.0, 0.0, 1.0, 0.25),
    ];
    let latent = points
        .iter()
        .map(|&(u0, u1, u, prob)| LatentMass { u0, u1, u, prob })
        .collect();
    Truth::ProgramEvaluation(ProgramEvalTruth {
        config,
        g0: vec![0.25, 0.75],
        z_probs: vec![1.0 / 3.0, 2.0 / 3.0],
        latent,
    })
}

fn atoms(prefix: &str, k: usize) -> Vec<Atom> {
    (0..k).map(|i| Atom::new(format!("{prefix}{i}"), vec![i as f64])).collect()
}

fn nonempty_subset<R: Rng>(rng: &mut R, k: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..k).filter(|_| rng.gen::<bool>()).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Shape of a random tabulated model.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub ny: usize,
    pub nz: usize,
    pub nu: usize,
    pub nstar: usize,
    pub ntheta: usize,
    pub npol: usize,
    pub moments: usize,
}

impl Shape {
    pub fn small() -> Self {
        Shape {
            ny: 2,
            nz: 2,
            nu: 3,
            nstar: 2,
            ntheta: 3,
            npol: 2,
            moments: 2,
        }
    }

    pub fn cells(&self) -> usize {
        self.ny * self.nz
    }
}

/// Random model with non-empty set values, objective in [0, 1] and moments in
/// [-1, 1]. With `slack` every moment is strictly negative everywhere.
pub fn random_tabulated<R: Rng>(rng: &mut R, s: Shape, slack: bool) -> TabulatedModel {
    let cells = s.cells();
    let gminus = (0..s.ntheta)
        .map(|_| (0..cells).map(|_| nonempty_subset(rng, s.nu)).collect())
        .collect();
    let gstar = (0..s.ntheta)
        .map(|_| {
            (0..s.npol)
                .map(|_| {
                    (0..cells)
                        .map(|_| (0..s.nu).map(|_| nonempty_subset(rng, s.nstar)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let phi = (0..s.nstar * cells * s.nu).map(|_| rng.gen_range(0.0..1.0)).collect();
    let moments = (0..s.moments)
        .map(|j| TabulatedMoment {
            label: format!("m{j}"),
            bound: 1.0,
            values: (0..s.ntheta * cells * s.nu)
                .map(|_| if slack { rng.gen_range(-1.0..-0.01) } else { rng.gen_range(-1.0..1.0) })
                .collect(),
        })
        .collect();
    TabulatedModel {
        y_atoms: atoms("y", s.ny),
        z_atoms: atoms("z", s.nz),
        ystar_atoms: atoms("s", s.nstar),
        u_grid: atoms("u", s.nu),
        theta: (0..s.ntheta).map(|t| vec![t as f64]).collect(),
        policies: (0..s.npol)
            .map(|g| Policy {
                id: format!("p{g}"),
                map: vec![],
            })
            .collect(),
        gminus,
        gstar,
        phi,
        phi_lb: 0.0,
        phi_ub: 1.0,
        moments,
        constants: ErrorBoundConstants {
            c1: 1.0,
            c2: 1.0,
            delta: 1.0,
        },
        search: Default::default(),
        schema: Default::default(),
    }
}

/// Random degenerate model: no moments and single-valued maps that do not
/// depend on the parameter, so both envelopes equal the integral of phi.
pub fn random_degenerate<R: Rng>(rng: &mut R) -> TabulatedModel {
    let s = Shape {
        ny: rng.gen_range(1..4),
        nz: rng.gen_range(1..4),
        nu: rng.gen_range(1..5),
        nstar: rng.gen_range(1..4),
        ntheta: rng.gen_range(1..4),
        npol: rng.gen_range(1..4),
        moments: 0,
    };
    let mut m = random_tabulated(rng, s, false);
    let gm: Vec<Vec<usize>> = (0..s.cells()).map(|_| vec![rng.gen_range(0..s.nu)]).collect();
    m.gminus = vec![gm; s.ntheta];
    let gs: Vec<Vec<Vec<Vec<usize>>>> = (0..s.npol)
        .map(|_| {
            (0..s.cells())
                .map(|_| (0..s.nu).map(|_| vec![rng.gen_range(0..s.nstar)]).collect())
                .collect()
        })
        .collect();
    m.gstar = vec![gs; s.ntheta];
    m
}

pub fn random_weights<R: Rng>(rng: &mut R, cells: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>() + 0.01).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// `min` over distributions of selections of `E phi + mu * sum_j max(E m_j, 0)`
/// at one parameter, as a linear program with slack variables. This is the
/// penalty with continuous multipliers in `[0, mu]`, the exact-penalty
/// counterpart of the binary-multiplier envelope. +inf when a weighted cell
/// has no admissible selection.
pub fn continuous_penalty_lower(
    model: &StructuralModel,
    measure: &WeightedMeasure,
    theta: usize,
    gamma: usize,
    mu: f64,
) -> f64 {
    let s = model.support();
    let mut vars = Vec::new();
    let mut blocks = Vec::new();
    for (c, &wc) in measure.weights().iter().enumerate() {
        if wc <= 0.0 {
            continue;
        }
        let (y, z) = s.cell_parts(c);
        let start = vars.len();
        for u in model.gminus(y, z, theta) {
            for st in model.gstar(y, z, u, theta, gamma) {
                vars.push((c, u, st));
            }
        }
        if vars.len() == start {
            return f64::INFINITY;
        }
        blocks.push((wc, start, vars.len()));
    }
    let j = model.n_moments();
    let nv = vars.len() + j;
    let mut c: Vec<f64> = vars
        .iter()
        .map(|&(cc, u, st)| {
            let (y, z) = s.cell_parts(cc);
            model.phi(st, y, z, u)
        })
        .collect();
    c.extend(std::iter::repeat_n(mu, j));
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    for &(wc, lo, hi) in &blocks {
        let mut row = vec![0.0; nv];
        row[lo..hi].iter_mut().for_each(|v| *v = 1.0);
        a_eq.push(row);
        b_eq.push(wc);
    }
    let a_ub = (0..j)
        .map(|jj| {
            let mut row: Vec<f64> = vars
                .iter()
                .map(|&(cc, u, _)| {
                    let (y, z) = s.cell_parts(cc);
                    model.moment(jj, y, z, u, theta)
                })
                .collect();
            row.resize(nv, 0.0);
            row[vars.len() + jj] = -1.0;
            row
        })
        .collect();
    let lp = LinearProgram {
        c,
        a_eq,
        b_eq,
        a_ub,
        b_ub: vec![0.0; j],
    };
    solve(&lp).unwrap().value().expect("penalty problem is feasible and bounded")
}
