//! Hand-checkable tabulated models for unit tests.

use crate::io::{TabulatedModel, TabulatedMoment};
use crate::model::{h_integrand, Atom, ErrorBoundConstants, Policy, Side, StructuralModel};

pub(crate) fn atoms(prefix: &str, k: usize) -> Vec<Atom> {
    (0..k).map(|i| Atom::new(format!("{prefix}{i}"), vec![i as f64])).collect()
}

/// One observed cell, every latent point admissible, latent point u mapped to
/// counterfactual `u % nstar`, objective given per counterfactual atom.
pub(crate) fn one_cell(ntheta: usize, nu: usize, phi: &[f64], npol: usize) -> TabulatedModel {
    let nstar = phi.len();
    TabulatedModel {
        y_atoms: atoms("y", 1),
        z_atoms: atoms("z", 1),
        ystar_atoms: atoms("s", nstar),
        u_grid: atoms("u", nu),
        theta: (0..ntheta).map(|t| vec![t as f64]).collect(),
        policies: (0..npol)
            .map(|g| Policy {
                id: format!("p{g}"),
                map: vec![],
            })
            .collect(),
        gminus: vec![vec![(0..nu).collect()]; ntheta],
        gstar: vec![vec![vec![(0..nu).map(|u| vec![u % nstar]).collect()]; npol]; ntheta],
        phi: phi.to_vec(),
        phi_lb: 0.0,
        phi_ub: 1.0,
        moments: vec![],
        constants: ErrorBoundConstants {
            c1: 1.0,
            c2: 1.0,
            delta: 1.0,
        },
        search: Default::default(),
        schema: Default::default(),
    }
}

pub(crate) fn moment(label: &str, values: &[f64]) -> TabulatedMoment {
    TabulatedMoment {
        label: label.into(),
        bound: 1.0,
        values: values.to_vec(),
    }
}

/// Two latent points with objective 0.3 and 0.7 and one moment, +0.2 and
/// -0.1 at the first parameter. A second parameter, when asked for, has the
/// moment at -0.2 on both points.
pub(crate) fn two_point(ntheta: usize, mu: f64) -> StructuralModel {
    let mut m = one_cell(ntheta, 2, &[0.3, 0.7], 1);
    let mut vals = vec![0.2, -0.1];
    if ntheta > 1 {
        vals.extend([-0.2, -0.2]);
    }
    m.moments = vec![moment("m1", &vals)];
    m.to_model(Some(mu)).unwrap()
}

/// Random model on a small grid: non-empty set values, objective in [0, 1],
/// `moments` moments in [-1, 1].
pub(crate) fn random_model<R: rand::Rng>(rng: &mut R, moments: usize) -> StructuralModel {
    let (ny, nz, nu, ns, nt, ng) = (2, 2, 3, 2, 3, 2);
    let cells = ny * nz;
    let mut subset = |k: usize| loop {
        let s: Vec<usize> = (0..k).filter(|_| rng.gen::<bool>()).collect();
        if !s.is_empty() {
            break s;
        }
    };
    let gminus = (0..nt).map(|_| (0..cells).map(|_| subset(nu)).collect()).collect();
    let gstar = (0..nt)
        .map(|_| {
            (0..ng)
                .map(|_| (0..cells).map(|_| (0..nu).map(|_| subset(ns)).collect()).collect())
                .collect()
        })
        .collect();
    let mut t = one_cell(nt, nu, &[0.0; 2], ng);
    t.y_atoms = atoms("y", ny);
    t.z_atoms = atoms("z", nz);
    t.gminus = gminus;
    t.gstar = gstar;
    t.phi = (0..ns * cells * nu).map(|_| rng.gen_range(0.0..1.0)).collect();
    t.moments = (0..moments)
        .map(|j| {
            let vals: Vec<f64> = (0..nt * cells * nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
            moment(&format!("m{j}"), &vals)
        })
        .collect();
    t.to_model(None).unwrap()
}

pub(crate) fn random_weights<R: rand::Rng>(rng: &mut R, cells: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Literal evaluation of one envelope: every parameter, every binary
/// multiplier, the integrand cell by cell.
pub(crate) fn brute_envelope(model: &StructuralModel, weights: &[f64], gamma: usize, side: Side) -> f64 {
    let j = model.n_moments();
    let s = model.support();
    let mut outer = match side {
        Side::Lower => f64::INFINITY,
        Side::Upper => f64::NEG_INFINITY,
    };
    for t in 0..model.theta().len() {
        let mut inner = match side {
            Side::Lower => f64::NEG_INFINITY,
            Side::Upper => f64::INFINITY,
        };
        for mask in 0..1u32 << j {
            let lambda: Vec<bool> = (0..j).map(|k| mask >> k & 1 == 1).collect();
            let mut total = 0.0;
            for (c, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    let (y, z) = s.cell_parts(c);
                    total += w * h_integrand(model, y, z, t, gamma, &lambda, side).unwrap();
                }
            }
            inner = match side {
                Side::Lower => inner.max(total),
                Side::Upper => inner.min(total),
            };
        }
        outer = match side {
            Side::Lower => outer.min(inner),
            Side::Upper => outer.max(inner),
        };
    }
    outer
}
