//! Known data-generating processes for the two builders: exact population
//! measures and seeded i.i.d. samples. Row i is drawn from its own ChaCha
//! stream keyed by (seed, i), so samples are reproducible and prefix-stable.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envelope::WeightedMeasure;
use crate::error::{Error, Result};
use crate::model::{Sample, StructuralModel};
use crate::models::program_eval::{build_program_evaluation, grid_index, PeLayout, ProgramEvalConfig};
use crate::models::sdc::{build_sdc_with_tau, sdc_tau_from_weights, SdcConfig, SdcLayout};

/// One joint latent point `(U0, U1, U)` with its probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMass {
    pub u0: f64,
    pub u1: f64,
    pub u: f64,
    pub prob: f64,
}

/// Program-evaluation truth: `D = 1{U <= g0(Z)}`, `Y = U_D`, latent draws
/// independent of the instrument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramEvalTruth {
    pub config: ProgramEvalConfig,
    /// Propensity per instrument cell, in `z0`-major order.
    pub g0: Vec<f64>,
    pub z_probs: Vec<f64>,
    pub latent: Vec<LatentMass>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumSelection {
    /// Uniform over the equilibrium set.
    #[default]
    Uniform,
    /// The equilibrium with the smallest profile index.
    First,
}

/// SDC truth: i.i.d. instruments and latent costs per player, equilibrium
/// selected by `selection`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdcTruth {
    pub config: SdcConfig,
    /// Coefficients of the true parameter in grid order.
    pub theta0: Vec<f64>,
    /// Distribution of one player's instrument.
    pub z_probs: Vec<f64>,
    /// `(value, probability)` of one player's latent cost.
    pub u_dist: Vec<(f64, f64)>,
    #[serde(default)]
    pub selection: EquilibriumSelection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    ProgramEvaluation(ProgramEvalTruth),
    Sdc(SdcTruth),
}

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Build(format!("{name} must be non-empty and non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Build(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Map from cell masses to a sample-independent measure; tiny negative
/// rounding is impossible here since masses are sums of products.
fn measure_from(model: &StructuralModel, masses: Vec<f64>) -> Result<WeightedMeasure> {
    WeightedMeasure::from_masses(model.support(), masses)
}

impl ProgramEvalTruth {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let nz = self.config.n_z();
        if self.g0.len() != nz || self.z_probs.len() != nz {
            return Err(Error::Build(format!("g0 and z_probs need {nz} entries")));
        }
        if self.g0.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Build("g0 must lie in [0, 1]".into()));
        }
        check_probs("z_probs", &self.z_probs)?;
        check_probs("latent probabilities", &self.latent.iter().map(|l| l.prob).collect::<Vec<_>>())?;
        let yg = self.config.outcome_grid();
        let ug = self.config.u_grid();
        for l in &self.latent {
            if grid_index(&yg, l.u0).is_none() || grid_index(&yg, l.u1).is_none() {
                return Err(Error::Build(format!("latent outcome ({}, {}) is off the outcome grid", l.u0, l.u1)));
            }
            if grid_index(&ug, l.u).is_none() {
                return Err(Error::Build(format!("latent index {} is off the u grid", l.u)));
            }
        }
        Ok(())
    }

    /// Observed cell (y index, z index) for one instrument cell and latent point.
    fn observe(&self, lay: &PeLayout, yg: &[f64], z: usize, l: &LatentMass) -> (usize, usize) {
        let d = usize::from(l.u <= self.g0[z]);
        let y = if d == 1 { l.u1 } else { l.u0 };
        let yi = grid_index(yg, y).expect("validated on grid");
        (lay.y_index(yi, d), z)
    }
}

impl SdcTruth {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let cfg = &self.config;
        if self.theta0.len() != cfg.players * cfg.n_coef() {
            return Err(Error::Build(format!(
                "theta0 needs {} coefficients",
                cfg.players * cfg.n_coef()
            )));
        }
        if self.z_probs.len() != cfg.z_atoms.len() {
            return Err(Error::Build("z_probs needs one entry per instrument atom".into()));
        }
        check_probs("z_probs", &self.z_probs)?;
        check_probs("latent probabilities", &self.u_dist.iter().map(|p| p.1).collect::<Vec<_>>())?;
        if self.u_dist.iter().any(|p| !(-1.0..=1.0).contains(&p.0)) {
            return Err(Error::Build("latent costs must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    fn layout(&self) -> SdcLayout {
        SdcLayout {
            k: self.config.players,
            nz1: self.config.z_atoms.len(),
            nu1: self.u_dist.len(),
        }
    }

    /// Equilibrium profiles at instrument profile z and latent profile u.
    fn equilibria(&self, lay: &SdcLayout, z: usize, u: usize) -> Vec<usize> {
        let cfg = &self.config;
        let p = cfg.n_coef();
        (0..lay.n_profiles())
            .filter(|&ys| {
                (0..lay.k).all(|k| {
                    let coefs = &self.theta0[k * p..(k + 1) * p];
                    let others = lay.others_bits(ys, k).count_ones() as usize;
                    let pi = cfg.payoff(coefs, lay.z_of(z, k), others);
                    (pi >= self.u_dist[lay.u_of(u, k)].0) == (lay.action(ys, k) == 1)
                })
            })
            .collect()
    }

    fn n_z(&self) -> usize {
        self.config.z_atoms.len().pow(self.config.players as u32)
    }

    fn z_prob(&self, lay: &SdcLayout, z: usize) -> f64 {
        (0..lay.k).map(|k| self.z_probs[lay.z_of(z, k)]).product()
    }

    fn u_prob(&self, lay: &SdcLayout, u: usize) -> f64 {
        (0..lay.k).map(|k| self.u_dist[lay.u_of(u, k)].1).product()
    }

    /// Exact masses over (profile, instrument profile) cells, y-major.
    pub fn population_masses(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let lay = self.layout();
        let nz = self.n_z();
        let nu = self.u_dist.len().pow(lay.k as u32);
        let mut masses = vec![0.0; lay.n_profiles() * nz];
        for z in 0..nz {
            let pz = self.z_prob(&lay, z);
            for u in 0..nu {
                let pu = self.u_prob(&lay, u);
                let eq = self.equilibria(&lay, z, u);
                if eq.is_empty() {
                    return Err(Error::Build(format!("true system has no equilibrium at z={z}, u={u}")));
                }
                match self.selection {
                    EquilibriumSelection::Uniform => {
                        let share = pz * pu / eq.len() as f64;
                        for y in eq {
                            masses[y * nz + z] += share;
                        }
                    }
                    EquilibriumSelection::First => masses[eq[0] * nz + z] += pz * pu,
                }
            }
        }
        Ok(masses)
    }
}

impl Truth {
    pub fn validate(&self) -> Result<()> {
        match self {
            Truth::ProgramEvaluation(t) => t.validate(),
            Truth::Sdc(t) => t.validate(),
        }
    }

    /// The model this truth is evaluated against. SDC models take their
    /// margin from the population measure.
    pub fn build_model(&self) -> Result<StructuralModel> {
        match self {
            Truth::ProgramEvaluation(t) => {
                t.validate()?;
                build_program_evaluation(&t.config)
            }
            Truth::Sdc(t) => {
                let tau = sdc_tau_from_weights(&t.config, &t.population_masses()?)?;
                Ok(build_sdc_with_tau(&t.config, tau)?.model)
            }
        }
    }

    /// Exact population measure on the model's observed cells.
    pub fn population(&self, model: &StructuralModel) -> Result<WeightedMeasure> {
        match self {
            Truth::ProgramEvaluation(t) => {
                t.validate()?;
                let lay = PeLayout::new(&t.config);
                let yg = t.config.outcome_grid();
                let s = model.support();
                let mut masses = vec![0.0; s.n_cells()];
                for z in 0..lay.nz {
                    for l in &t.latent {
                        let (y, zc) = t.observe(&lay, &yg, z, l);
                        masses[s.cell(y, zc)] += t.z_probs[z] * l.prob;
                    }
                }
                measure_from(model, masses)
            }
            Truth::Sdc(t) => measure_from(model, t.population_masses()?),
        }
    }
}

/// n i.i.d. draws of (y, z) as atom indices of the matching builder's model.
pub fn simulate_dgp(truth: &Truth, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::contract("sample size must be positive"));
    }
    truth.validate()?;
    let rng_for = |i: usize| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(i as u64);
        r
    };
    let mut rows = Vec::with_capacity(n);
    match truth {
        Truth::ProgramEvaluation(t) => {
            let lay = PeLayout::new(&t.config);
            let yg = t.config.outcome_grid();
            let zd = WeightedIndex::new(&t.z_probs).map_err(|e| Error::Build(e.to_string()))?;
            let ld = WeightedIndex::new(t.latent.iter().map(|l| l.prob))
                .map_err(|e| Error::Build(e.to_string()))?;
            for i in 0..n {
                let mut r = rng_for(i);
                let z = zd.sample(&mut r);
                let l = &t.latent[ld.sample(&mut r)];
                rows.push(t.observe(&lay, &yg, z, l));
            }
        }
        Truth::Sdc(t) => {
            let lay = t.layout();
            let zd = WeightedIndex::new(&t.z_probs).map_err(|e| Error::Build(e.to_string()))?;
            let ud = WeightedIndex::new(t.u_dist.iter().map(|p| p.1))
                .map_err(|e| Error::Build(e.to_string()))?;
            for i in 0..n {
                let mut r = rng_for(i);
                let mut z = 0;
                let mut u = 0;
                for _ in 0..lay.k {
                    z = z * lay.nz1 + zd.sample(&mut r);
                    u = u * lay.nu1 + ud.sample(&mut r);
                }
                let eq = t.equilibria(&lay, z, u);
                if eq.is_empty() {
                    return Err(Error::Build(format!("true system has no equilibrium at row {i}")));
                }
                let y = match t.selection {
                    EquilibriumSelection::Uniform => {
                        eq[WeightedIndex::new(vec![1.0; eq.len()]).expect("non-empty").sample(&mut r)]
                    }
                    EquilibriumSelection::First => eq[0],
                };
                rows.push((y, z));
            }
        }
    }
    Ok(Sample { rows })
}
