//! Simultaneous discrete choice: K players with binary actions. Player k acts
//! iff its latent cost `u_k` lies below its payoff index
//! `pi_k(z_k, y_{-k}; theta) = sum_b theta_{k,b} f_b(z_k) [+ theta_{k,int} * sum_{-k} y]`.
//! A policy moves every player's `(z_k, y_{-k})` to a new pair; counterfactual
//! outcomes are the equilibria of the moved system, which may be empty.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envelope::WeightedMeasure;
use crate::error::{Error, Result};
use crate::model::{
    Atom, CounterfactualMap, ErrorBoundConstants, FactualMap, MomentSpec, ModelParts, Objective,
    Policy, PolicyGrid, SampleSchema, SearchOptions, StructuralModel, SupportSpec, ThetaGrid,
};
use crate::models::program_eval::{even_grid, GRID_TOL};

/// Longest list of incoherent cells kept in a build report.
const MAX_WARNED: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdcConfig {
    pub players: usize,
    /// Support of each player's own instrument.
    pub z_atoms: Vec<String>,
    /// Basis values `f_b(z)` per instrument atom.
    pub features: Vec<Vec<f64>>,
    /// Adds a coefficient on the number of other players that act.
    #[serde(default)]
    pub interaction: bool,
    /// Values every coefficient ranges over.
    pub coef_grid: Vec<f64>,
    pub l0: f64,
    pub l_prime: f64,
    pub l: f64,
    /// Evenly spaced latent points per player on `[-1, 1]`; attainable payoff
    /// indices are added so every threshold lies on the grid.
    pub u_grid_points: usize,
    /// 1-based player whose action the objective counts.
    #[serde(default = "one")]
    pub target_player: usize,
    /// Explicit policy tables on the `(z_k, y_{-k})` domain; all maps by default.
    #[serde(default)]
    pub policies: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub mu_star: Option<f64>,
    #[serde(default)]
    pub search: SearchOptions,
}

fn one() -> usize {
    1
}

impl SdcConfig {
    pub fn n_coef(&self) -> usize {
        self.features.first().map_or(0, Vec::len) + usize::from(self.interaction)
    }

    /// Size of the policy domain: own instrument times the others' actions.
    pub fn domain(&self) -> usize {
        self.z_atoms.len() << (self.players - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Build(m));
        if self.players == 0 || self.players > 8 {
            return bad(format!("players must lie in 1..=8 (got {})", self.players));
        }
        if self.z_atoms.is_empty() || self.features.len() != self.z_atoms.len() {
            return bad("need one feature vector per instrument atom".into());
        }
        let nb = self.features[0].len();
        if self.features.iter().any(|f| f.len() != nb || f.iter().any(|v| !v.is_finite())) {
            return bad("feature vectors must be finite and of equal length".into());
        }
        if self.n_coef() == 0 || self.coef_grid.is_empty() {
            return bad("need at least one coefficient and a non-empty coefficient grid".into());
        }
        if !(self.l0 > 0.0 && self.l_prime > 0.0 && self.l_prime <= self.l && self.l.is_finite()) {
            return bad(format!(
                "need L0 > 0 and 0 < L' <= L (got {}, {}, {})",
                self.l0, self.l_prime, self.l
            ));
        }
        if self.u_grid_points < 2 {
            return bad("u_grid_points must be at least 2".into());
        }
        if self.target_player == 0 || self.target_player > self.players {
            return bad(format!("target_player must lie in 1..={}", self.players));
        }
        let max_abs_coef = self.coef_grid.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let max_basis = self
            .features
            .iter()
            .map(|f| f.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let reach = max_abs_coef * (max_basis + if self.interaction { (self.players - 1) as f64 } else { 0.0 });
        if reach > 1.0 + GRID_TOL {
            // The bound is crude; check exactly before refusing.
            for th in 0..self.n_theta()? {
                let coefs = self.theta_coefs(th);
                for c in &coefs {
                    for z in 0..self.z_atoms.len() {
                        for others in 0..self.players {
                            let p = self.payoff(c, z, others);
                            if p.abs() > 1.0 + GRID_TOL {
                                return bad(format!("payoff index {p} leaves [-1, 1]"));
                            }
                        }
                    }
                }
            }
        }
        let d = self.domain();
        if let Some(ps) = &self.policies {
            if ps.is_empty() || ps.iter().any(|m| m.len() != d || m.iter().any(|&v| v >= d)) {
                return bad(format!("policy tables must map {d} domain points into the domain"));
            }
        }
        Ok(())
    }

    pub fn n_theta(&self) -> Result<usize> {
        let dims = (self.players * self.n_coef()) as u32;
        (self.coef_grid.len() as u128)
            .checked_pow(dims)
            .filter(|&n| n <= 1 << 22)
            .map(|n| n as usize)
            .ok_or_else(|| Error::Budget(format!("{}^{dims} parameter candidates", self.coef_grid.len())))
    }

    /// Coefficients per player; the first coefficient varies slowest.
    pub fn theta_coefs(&self, theta: usize) -> Vec<Vec<f64>> {
        let p = self.n_coef();
        let dims = self.players * p;
        let ng = self.coef_grid.len();
        let mut flat = vec![0.0; dims];
        let mut code = theta;
        for slot in flat.iter_mut().rev() {
            *slot = self.coef_grid[code % ng];
            code /= ng;
        }
        flat.chunks(p).map(|c| c.to_vec()).collect()
    }

    /// Payoff index for one player's coefficients at own instrument `z` with
    /// `others` of the remaining players acting.
    pub fn payoff(&self, coefs: &[f64], z: usize, others: usize) -> f64 {
        let f = &self.features[z];
        let mut p: f64 = f.iter().zip(coefs).map(|(a, b)| a * b).sum();
        if self.interaction {
            p += coefs[f.len()] * others as f64;
        }
        p
    }
}

/// Index arithmetic for action profiles, instrument profiles and latent points.
#[derive(Clone, Debug)]
pub(crate) struct SdcLayout {
    pub k: usize,
    pub nz1: usize,
    pub nu1: usize,
}

impl SdcLayout {
    /// Action of player k in a profile index; player 1 is the most significant bit.
    pub fn action(&self, y: usize, k: usize) -> usize {
        (y >> (self.k - 1 - k)) & 1
    }

    /// Others' actions of player k packed in player order.
    pub fn others_bits(&self, y: usize, k: usize) -> usize {
        let mut b = 0;
        for i in (0..self.k).filter(|&i| i != k) {
            b = (b << 1) | self.action(y, i);
        }
        b
    }

    pub fn z_of(&self, z: usize, k: usize) -> usize {
        (z / self.nz1.pow((self.k - 1 - k) as u32)) % self.nz1
    }

    pub fn u_of(&self, u: usize, k: usize) -> usize {
        (u / self.nu1.pow((self.k - 1 - k) as u32)) % self.nu1
    }

    pub fn n_profiles(&self) -> usize {
        1 << self.k
    }
}

/// Counts the moments: two families over player, own instrument, others'
/// actions, and the shifted pair.
pub fn sdc_moment_count(players: usize, n_z: usize) -> usize {
    let others = 1usize << (players - 1);
    2 * players * n_z * n_z * others * others
}

/// A built SDC model with its plug-in margin and coherency report.
#[derive(Debug)]
pub struct SdcBuild {
    pub model: StructuralModel,
    pub tau_hat: f64,
    /// Cells where some policy leaves the moved system without an equilibrium.
    pub incoherent_cells: Vec<String>,
    pub incoherent_count: usize,
}

/// `min |0.5 - P(Y_k = 1 | Z_k = z, Y_{-k} = y)|` over conditioning cells with
/// positive mass; zero gaps are skipped.
pub fn sdc_tau_hat(cfg: &SdcConfig, measure: &WeightedMeasure) -> Result<f64> {
    sdc_tau_from_weights(cfg, measure.weights())
}

/// As [`sdc_tau_hat`] on raw cell masses (y-major).
pub fn sdc_tau_from_weights(cfg: &SdcConfig, w: &[f64]) -> Result<f64> {
    cfg.validate()?;
    let lay = layout(cfg);
    let nz = lay.nz1.pow(cfg.players as u32);
    if w.len() != lay.n_profiles() * nz {
        return Err(Error::contract("measure does not match the SDC support"));
    }
    let others = 1usize << (cfg.players - 1);
    let mut tau = f64::INFINITY;
    for k in 0..cfg.players {
        let mut mass = vec![0.0; lay.nz1 * others];
        let mut acts = vec![0.0; lay.nz1 * others];
        for y in 0..lay.n_profiles() {
            for z in 0..nz {
                let m = w[y * nz + z];
                let key = lay.z_of(z, k) * others + lay.others_bits(y, k);
                mass[key] += m;
                if lay.action(y, k) == 1 {
                    acts[key] += m;
                }
            }
        }
        for (m, a) in mass.iter().zip(&acts) {
            if *m > 0.0 {
                let gap = (0.5 - a / m).abs();
                if gap > 0.0 {
                    tau = tau.min(gap);
                }
            }
        }
    }
    if !tau.is_finite() {
        return Err(Error::Build(
            "degenerate tau: every conditional choice probability equals 0.5".into(),
        ));
    }
    Ok(tau)
}

fn layout(cfg: &SdcConfig) -> SdcLayout {
    SdcLayout {
        k: cfg.players,
        nz1: cfg.z_atoms.len(),
        nu1: cfg.u_grid_points,
    }
}

/// Per-player latent grid: even points on [-1, 1] plus every attainable
/// payoff index, sorted and deduplicated.
pub fn sdc_u_grid(cfg: &SdcConfig) -> Result<Vec<f64>> {
    let mut pts = even_grid(-1.0, 1.0, cfg.u_grid_points);
    for th in 0..cfg.n_theta()? {
        for coefs in cfg.theta_coefs(th) {
            for z in 0..cfg.z_atoms.len() {
                for others in 0..cfg.players {
                    pts.push(cfg.payoff(&coefs, z, others));
                }
            }
        }
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| (*a - *b).abs() <= GRID_TOL);
    Ok(pts)
}

/// Builds the model with the plug-in margin computed from `measure`.
pub fn build_sdc(cfg: &SdcConfig, measure: &WeightedMeasure) -> Result<SdcBuild> {
    let tau = sdc_tau_hat(cfg, measure)?;
    build_sdc_with_tau(cfg, tau)
}

/// Builds the model with a given margin `tau_hat > 0`.
pub fn build_sdc_with_tau(cfg: &SdcConfig, tau_hat: f64) -> Result<SdcBuild> {
    cfg.validate()?;
    if !(tau_hat > 0.0 && tau_hat <= 0.5) {
        return Err(Error::Build(format!("tau_hat must lie in (0, 0.5] (got {tau_hat})")));
    }
    let kp = cfg.players;
    let ugrid1 = Arc::new(sdc_u_grid(cfg)?);
    let mut lay = layout(cfg);
    lay.nu1 = ugrid1.len();
    let nz1 = lay.nz1;
    let nz = nz1.pow(kp as u32);
    let nu = (lay.nu1 as u128).pow(kp as u32);
    if nu > 1 << 20 {
        return Err(Error::Budget(format!("{nu} latent points")));
    }
    let nu = nu as usize;
    let n_theta = cfg.n_theta()?;
    let others_n = 1usize << (kp - 1);
    let domain = cfg.domain();

    // payoff[th][k][z1 * others_n + bits], evaluated on the domain of (z_k, y_{-k}).
    let payoff: Arc<Vec<Vec<Vec<f64>>>> = Arc::new(
        (0..n_theta)
            .map(|th| {
                cfg.theta_coefs(th)
                    .iter()
                    .map(|c| {
                        (0..domain)
                            .map(|d| cfg.payoff(c, d / others_n, (d % others_n).count_ones() as usize))
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    );

    let profile_label = |y: usize| -> String {
        (0..kp).map(|k| lay.action(y, k).to_string()).collect::<Vec<_>>().join("|")
    };
    let y_atoms: Vec<Atom> = (0..lay.n_profiles())
        .map(|y| Atom::new(profile_label(y), (0..kp).map(|k| lay.action(y, k) as f64).collect()))
        .collect();
    let ystar_atoms = y_atoms.clone();
    let z_atoms: Vec<Atom> = (0..nz)
        .map(|z| {
            let idx: Vec<usize> = (0..kp).map(|k| lay.z_of(z, k)).collect();
            Atom::new(
                idx.iter().map(|&i| cfg.z_atoms[i].as_str()).collect::<Vec<_>>().join("|"),
                idx.iter().map(|&i| i as f64).collect(),
            )
        })
        .collect();
    let u_grid: Vec<Atom> = (0..nu)
        .map(|u| {
            let v: Vec<f64> = (0..kp).map(|k| ugrid1[lay.u_of(u, k)]).collect();
            Atom::new(v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("|"), v)
        })
        .collect();
    let candidates: Vec<Vec<f64>> = (0..n_theta).map(|th| cfg.theta_coefs(th).concat()).collect();

    let policies = match &cfg.policies {
        Some(tables) => PolicyGrid {
            policies: tables
                .iter()
                .map(|m| Policy {
                    id: format!("g[{}]", m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
                    map: m.clone(),
                })
                .collect(),
        },
        None => PolicyGrid::all_maps(domain)?,
    };
    let maps: Arc<Vec<Vec<usize>>> = Arc::new(policies.policies.iter().map(|p| p.map.clone()).collect());

    let gminus = {
        let lay = lay.clone();
        let payoff = Arc::clone(&payoff);
        let ugrid1 = Arc::clone(&ugrid1);
        FactualMap(Arc::new(move |y: usize, z: usize, th: usize| {
            // Allowed latent indices per player, then their product.
            let allowed: Vec<Vec<usize>> = (0..lay.k)
                .map(|k| {
                    let d = lay.z_of(z, k) * (1 << (lay.k - 1)) + lay.others_bits(y, k);
                    let p = payoff[th][k][d];
                    (0..lay.nu1)
                        .filter(|&i| {
                            let v = ugrid1[i];
                            if lay.action(y, k) == 1 {
                                v <= p + GRID_TOL
                            } else {
                                v >= p - GRID_TOL
                            }
                        })
                        .collect()
                })
                .collect();
            let mut out = vec![0usize];
            for a in &allowed {
                out = out.iter().flat_map(|&base| a.iter().map(move |&i| base * lay.nu1 + i)).collect();
            }
            out
        }))
    };

    let equilibria = {
        let lay = lay.clone();
        let payoff = Arc::clone(&payoff);
        let ugrid1 = Arc::clone(&ugrid1);
        let maps = Arc::clone(&maps);
        Arc::new(move |z: usize, u: usize, th: usize, gamma: usize| -> Vec<usize> {
            let map = &maps[gamma];
            (0..lay.n_profiles())
                .filter(|&ys| {
                    (0..lay.k).all(|k| {
                        let d = lay.z_of(z, k) * (1 << (lay.k - 1)) + lay.others_bits(ys, k);
                        let p = payoff[th][k][map[d]];
                        let acts = p >= ugrid1[lay.u_of(u, k)] - GRID_TOL;
                        acts == (lay.action(ys, k) == 1)
                    })
                })
                .collect()
        })
    };
    let gstar = {
        let eq = Arc::clone(&equilibria);
        CounterfactualMap(Arc::new(move |_y: usize, z: usize, u: usize, th: usize, gamma: usize| {
            eq(z, u, th, gamma)
        }))
    };

    let target = cfg.target_player - 1;
    let phi = {
        let lay = lay.clone();
        Arc::new(move |ystar: usize, _y: usize, _z: usize, _u: usize| lay.action(ystar, target) as f64)
    };

    let l0 = cfg.l0;
    let mut moments = Vec::with_capacity(sdc_moment_count(kp, nz1));
    for k in 0..kp {
        for zc in 0..nz1 {
            for yc in 0..others_n {
                for zp in 0..nz1 {
                    for yp in 0..others_n {
                        let d = zp * others_n + yp;
                        for fam in 0..2 {
                            let lay = lay.clone();
                            let payoff = Arc::clone(&payoff);
                            let ugrid1 = Arc::clone(&ugrid1);
                            moments.push(MomentSpec {
                                label: format!(
                                    "{}[k={},z={},y-={yc:b},z'={},y'-={yp:b}]",
                                    if fam == 0 { "act_margin" } else { "idle_margin" },
                                    k + 1,
                                    cfg.z_atoms[zc],
                                    cfg.z_atoms[zp]
                                ),
                                bound: 0.5 + l0,
                                eval: Arc::new(move |y: usize, z: usize, u: usize, th: usize| {
                                    if lay.z_of(z, k) != zc || lay.others_bits(y, k) != yc {
                                        return 0.0;
                                    }
                                    let p = payoff[th][k][d];
                                    let a = if ugrid1[lay.u_of(u, k)] <= p + GRID_TOL { 1.0 } else { 0.0 };
                                    if fam == 0 {
                                        a - (l0 * p).max(0.0) - 0.5
                                    } else {
                                        0.5 - a - (-l0 * p).max(0.0)
                                    }
                                }),
                            });
                        }
                    }
                }
            }
        }
    }

    let y_columns = (1..=kp).map(|k| format!("y{k}")).collect();
    let z_columns = (1..=kp).map(|k| format!("z{k}")).collect();
    let parts = ModelParts {
        support: SupportSpec {
            y_atoms,
            z_atoms,
            ystar_atoms,
            u_grid,
            grid_resolution: vec![lay.nu1; kp],
        },
        theta: ThetaGrid { candidates },
        policies,
        moments,
        gminus,
        gstar,
        objective: Objective {
            phi,
            phi_lb: 0.0,
            phi_ub: 1.0,
        },
        constants: ErrorBoundConstants {
            c1: cfg.l0 * cfg.l_prime,
            c2: cfg.l0 * cfg.l,
            delta: tau_hat / (cfg.l0 * cfg.l_prime),
        },
        search: cfg.search,
        schema: SampleSchema { y_columns, z_columns },
    };
    let model = StructuralModel::new(parts, cfg.mu_star)?;

    let mut incoherent = Vec::new();
    let mut count = 0usize;
    for z in 0..nz {
        for u in 0..nu {
            for th in 0..n_theta {
                for g in 0..model.policies().len() {
                    if equilibria(z, u, th, g).is_empty() {
                        count += 1;
                        if incoherent.len() < MAX_WARNED {
                            incoherent.push(format!(
                                "z={}, u={}, theta={th}, policy={}",
                                model.support().z_atoms[z].label,
                                model.support().u_grid[u].label,
                                model.policies().policies[g].id
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(SdcBuild {
        model,
        tau_hat,
        incoherent_cells: incoherent,
        incoherent_count: count,
    })
}
