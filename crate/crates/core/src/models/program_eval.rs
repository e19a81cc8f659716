//! Program evaluation with a binary treatment chosen by a threshold-crossing
//! rule. Observed `(Y, D)` and instruments `Z = (Z0, X)`; latent potential
//! outcomes `U0, U1` on an outcome grid and a uniform index `U` on `[0, 1]`.
//! Treatment is `D = 1{U <= g(Z)}`; a policy reassigns the instrument, so the
//! counterfactual treatment is `1{U <= g(gamma(Z))}`.
//!
//! The parameter is `(g, t)`: a propensity level per instrument cell and an
//! auxiliary instrument distribution `t` that pins the mean-independence
//! restrictions on `U0, U1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Atom, CounterfactualMap, ErrorBoundConstants, FactualMap, MomentSpec, ModelParts, Objective,
    PolicyGrid, SampleSchema, SearchOptions, StructuralModel, SupportSpec, ThetaGrid,
};

/// Grid points are matched to values within this tolerance.
pub(crate) const GRID_TOL: f64 = 1e-9;

fn default_t_resolution() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramEvalConfig {
    pub z0_atoms: Vec<String>,
    pub x_atoms: Vec<String>,
    pub y_lb: f64,
    pub y_ub: f64,
    pub outcome_grid_points: usize,
    pub u_grid_points: usize,
    pub g_grid_points: usize,
    /// Denominator of the simplex grid for the instrument distribution `t`.
    #[serde(default = "default_t_resolution")]
    pub t_resolution: usize,
    /// Error-bound radius; defaults to `y_ub - y_lb`, which puts the penalty floor at 1.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub mu_star: Option<f64>,
    #[serde(default)]
    pub search: SearchOptions,
}

impl ProgramEvalConfig {
    pub fn n_z(&self) -> usize {
        self.z0_atoms.len() * self.x_atoms.len()
    }

    pub fn outcome_grid(&self) -> Vec<f64> {
        even_grid(self.y_lb, self.y_ub, self.outcome_grid_points)
    }

    pub fn u_grid(&self) -> Vec<f64> {
        even_grid(0.0, 1.0, self.u_grid_points)
    }

    pub fn g_levels(&self) -> Vec<f64> {
        even_grid(0.0, 1.0, self.g_grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Build(m));
        if self.z0_atoms.is_empty() || self.x_atoms.is_empty() {
            return bad("instrument and covariate supports must be non-empty".into());
        }
        if !(self.y_lb.is_finite() && self.y_ub.is_finite() && self.y_lb < self.y_ub) {
            return bad(format!("need finite y_lb < y_ub (got {}, {})", self.y_lb, self.y_ub));
        }
        for (name, v) in [
            ("outcome_grid_points", self.outcome_grid_points),
            ("u_grid_points", self.u_grid_points),
            ("g_grid_points", self.g_grid_points),
        ] {
            if v < 2 {
                return bad(format!("{name} must be at least 2 (got {v})"));
            }
        }
        if self.t_resolution < self.n_z() {
            return bad(format!(
                "t_resolution {} cannot give every one of the {} instrument cells positive mass",
                self.t_resolution,
                self.n_z()
            ));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta must be positive (got {d})"));
            }
        }
        Ok(())
    }

    /// Index into the u grid of every g level; errors if a level is off the grid.
    pub fn g_positions(&self) -> Result<Vec<usize>> {
        let ug = self.u_grid();
        self.g_levels()
            .iter()
            .map(|&g| {
                grid_index(&ug, g).ok_or_else(|| {
                    Error::Build(format!(
                        "u grid with {} points does not contain the g level {g}; use u_grid_points - 1 divisible by g_grid_points - 1",
                        self.u_grid_points
                    ))
                })
            })
            .collect()
    }

    /// All compositions of `t_resolution` into `n_z` positive parts, scaled to sum to one.
    pub fn t_grid(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(self.n_z());
        compositions(self.t_resolution, self.n_z(), &mut cur, &mut out);
        let r = self.t_resolution as f64;
        out.into_iter()
            .map(|c| c.into_iter().map(|k| k as f64 / r).collect())
            .collect()
    }
}

fn compositions(total: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        if total >= 1 {
            cur.push(total);
            out.push(cur.clone());
            cur.pop();
        }
        return;
    }
    for k in 1..total {
        if total - k < parts - 1 {
            break;
        }
        cur.push(k);
        compositions(total - k, parts - 1, cur, out);
        cur.pop();
    }
}

/// `points` evenly spaced values from `lo` to `hi`, endpoints exact.
pub fn even_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let m = (points - 1) as f64;
    (0..points)
        .map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / m })
        .collect()
}

pub(crate) fn grid_index(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - v).abs() <= GRID_TOL)
}

/// Index arithmetic shared by the builder, the truth and the simulator.
#[derive(Clone, Debug)]
pub(crate) struct PeLayout {
    pub ny: usize,
    pub nx: usize,
    pub nz: usize,
    pub nu: usize,
    pub n_t: usize,
    pub n_g: usize,
}

impl PeLayout {
    pub fn new(cfg: &ProgramEvalConfig) -> Self {
        PeLayout {
            ny: cfg.outcome_grid_points,
            nx: cfg.x_atoms.len(),
            nz: cfg.n_z(),
            nu: cfg.u_grid_points,
            n_t: cfg.t_grid().len(),
            n_g: cfg.g_grid_points,
        }
    }

    /// Observed y atom for outcome index and treatment.
    pub fn y_index(&self, yi: usize, d: usize) -> usize {
        yi * 2 + d
    }

    pub fn x_of(&self, z: usize) -> usize {
        z % self.nx
    }

    pub fn u_index(&self, i0: usize, i1: usize, iu: usize) -> usize {
        (i0 * self.ny + i1) * self.nu + iu
    }

    pub fn u_parts(&self, u: usize) -> (usize, usize, usize) {
        (u / (self.ny * self.nu), (u / self.nu) % self.ny, u % self.nu)
    }

    /// (g level per cell, t vector index) of a theta index. The first cell's
    /// level varies slowest.
    pub fn theta_parts(&self, theta: usize) -> (Vec<usize>, usize) {
        let ti = theta % self.n_t;
        let mut code = theta / self.n_t;
        let mut levels = vec![0; self.nz];
        for slot in levels.iter_mut().rev() {
            *slot = code % self.n_g;
            code /= self.n_g;
        }
        (levels, ti)
    }
}

/// Number of moments: ten per instrument cell.
pub fn program_evaluation_moment_count(n_z0: usize, n_x: usize) -> usize {
    10 * n_z0 * n_x
}

pub fn build_program_evaluation(cfg: &ProgramEvalConfig) -> Result<StructuralModel> {
    cfg.validate()?;
    let g_pos = Arc::new(cfg.g_positions()?);
    let lay = PeLayout::new(cfg);
    let n_theta = (lay.n_g as u128).pow(lay.nz as u32) * lay.n_t as u128;
    if n_theta > 1 << 22 {
        return Err(Error::Budget(format!("{n_theta} parameter candidates")));
    }
    let ygrid = Arc::new(cfg.outcome_grid());
    let ugrid = Arc::new(cfg.u_grid());
    let g_levels = cfg.g_levels();
    let t_grid = Arc::new(cfg.t_grid());

    let mut y_atoms = Vec::with_capacity(lay.ny * 2);
    for &y in ygrid.iter() {
        for d in 0..2 {
            y_atoms.push(Atom::new(format!("{y}|{d}"), vec![y, d as f64]));
        }
    }
    let ystar_atoms = y_atoms.clone();
    let mut z_atoms = Vec::with_capacity(lay.nz);
    for (a, z0) in cfg.z0_atoms.iter().enumerate() {
        for (b, x) in cfg.x_atoms.iter().enumerate() {
            z_atoms.push(Atom::new(format!("{z0}|{x}"), vec![a as f64, b as f64]));
        }
    }
    let mut u_grid = Vec::with_capacity(lay.ny * lay.ny * lay.nu);
    for &u0 in ygrid.iter() {
        for &u1 in ygrid.iter() {
            for &u in ugrid.iter() {
                u_grid.push(Atom::new(format!("{u0}|{u1}|{u}"), vec![u0, u1, u]));
            }
        }
    }

    let mut candidates = Vec::with_capacity(n_theta as usize);
    for th in 0..n_theta as usize {
        let (levels, ti) = lay.theta_parts(th);
        let mut v: Vec<f64> = levels.iter().map(|&l| g_levels[l]).collect();
        v.extend_from_slice(&t_grid[ti]);
        candidates.push(v);
    }

    // Per theta: u-grid position of g(z) for every z, and t(z).
    let theta_g: Arc<Vec<Vec<usize>>> = Arc::new(
        (0..n_theta as usize)
            .map(|th| lay.theta_parts(th).0.iter().map(|&l| g_pos[l]).collect())
            .collect(),
    );
    let theta_t: Arc<Vec<Vec<f64>>> = Arc::new(
        (0..n_theta as usize)
            .map(|th| t_grid[lay.theta_parts(th).1].clone())
            .collect(),
    );

    let gminus = {
        let lay = lay.clone();
        let theta_g = Arc::clone(&theta_g);
        FactualMap(Arc::new(move |y: usize, z: usize, th: usize| {
            let (yi, d) = (y / 2, y % 2);
            let gp = theta_g[th][z];
            let mut out = Vec::new();
            if d == 0 {
                for i1 in 0..lay.ny {
                    for iu in gp..lay.nu {
                        out.push(lay.u_index(yi, i1, iu));
                    }
                }
            } else {
                for i0 in 0..lay.ny {
                    for iu in 0..=gp {
                        out.push(lay.u_index(i0, yi, iu));
                    }
                }
            }
            out.sort_unstable();
            out
        }))
    };

    let policies = PolicyGrid::all_maps(lay.nz)?;
    let maps: Arc<Vec<Vec<usize>>> = Arc::new(policies.policies.iter().map(|p| p.map.clone()).collect());
    let gstar = {
        let lay = lay.clone();
        let theta_g = Arc::clone(&theta_g);
        CounterfactualMap(Arc::new(move |_y: usize, z: usize, u: usize, th: usize, gamma: usize| {
            let (i0, i1, iu) = lay.u_parts(u);
            let target = maps[gamma][z];
            if iu <= theta_g[th][target] {
                vec![lay.y_index(i1, 1)]
            } else {
                vec![lay.y_index(i0, 0)]
            }
        }))
    };

    let phi = {
        let ygrid = Arc::clone(&ygrid);
        Arc::new(move |ystar: usize, _y: usize, _z: usize, _u: usize| ygrid[ystar / 2])
    };

    let ybound = cfg.y_lb.abs().max(cfg.y_ub.abs());
    let mut moments = Vec::with_capacity(program_evaluation_moment_count(cfg.z0_atoms.len(), lay.nx));
    for zc in 0..lay.nz {
        let label = &z_atoms[zc].label;
        let xc = lay.x_of(zc);
        let same_x: Vec<usize> = (0..lay.nz).filter(|&z| lay.x_of(z) == xc).collect();
        for sign in [1.0, -1.0] {
            let gl = Arc::clone(&theta_g);
            let ug = Arc::clone(&ugrid);
            moments.push(MomentSpec {
                label: format!("{}propensity[{label}]", sign_tag(sign)),
                bound: 1.0,
                eval: Arc::new(move |y: usize, z: usize, _u: usize, th: usize| {
                    if z != zc {
                        return 0.0;
                    }
                    sign * ((y % 2) as f64 - ug[gl[th][zc]])
                }),
            });
        }
        for sign in [1.0, -1.0] {
            let gl = Arc::clone(&theta_g);
            let ug = Arc::clone(&ugrid);
            let lay = lay.clone();
            moments.push(MomentSpec {
                label: format!("{}index_cdf[{label}]", sign_tag(sign)),
                bound: 1.0,
                eval: Arc::new(move |_y: usize, z: usize, u: usize, th: usize| {
                    if lay.x_of(z) != xc {
                        return 0.0;
                    }
                    let gp = gl[th][zc];
                    let below = if lay.u_parts(u).2 <= gp { 1.0 } else { 0.0 };
                    sign * (below - ug[gp])
                }),
            });
        }
        for sign in [1.0, -1.0] {
            let tt = Arc::clone(&theta_t);
            moments.push(MomentSpec {
                label: format!("{}instrument_share[{label}]", sign_tag(sign)),
                bound: 1.0,
                eval: Arc::new(move |_y: usize, z: usize, _u: usize, th: usize| {
                    let hit = if z == zc { 1.0 } else { 0.0 };
                    sign * (tt[th][zc] - hit)
                }),
            });
        }
        for sign in [1.0, -1.0] {
            for d in 0..2 {
                let tt = Arc::clone(&theta_t);
                let yg = Arc::clone(&ygrid);
                let lay = lay.clone();
                let same_x = same_x.clone();
                moments.push(MomentSpec {
                    label: format!("{}mean_independence_u{d}[{label}]", sign_tag(sign)),
                    bound: ybound,
                    eval: Arc::new(move |_y: usize, z: usize, u: usize, th: usize| {
                        let (i0, i1, _) = lay.u_parts(u);
                        let ud = yg[if d == 0 { i0 } else { i1 }];
                        let t = &tt[th];
                        let share_x: f64 = same_x.iter().map(|&k| t[k]).sum();
                        let a = if z == zc { share_x } else { 0.0 };
                        let b = if lay.x_of(z) == xc { t[zc] } else { 0.0 };
                        sign * ud * (a - b)
                    }),
                });
            }
        }
    }

    let parts = ModelParts {
        support: SupportSpec {
            y_atoms,
            z_atoms,
            ystar_atoms,
            u_grid,
            grid_resolution: vec![lay.ny, lay.ny, lay.nu],
        },
        theta: ThetaGrid { candidates },
        policies,
        moments,
        gminus,
        gstar,
        objective: Objective {
            phi,
            phi_lb: cfg.y_lb,
            phi_ub: cfg.y_ub,
        },
        constants: ErrorBoundConstants {
            c1: 1.0,
            c2: 1.0,
            delta: cfg.delta.unwrap_or(cfg.y_ub - cfg.y_lb),
        },
        search: cfg.search,
        schema: SampleSchema {
            y_columns: vec!["y".into(), "d".into()],
            z_columns: vec!["z0".into(), "x".into()],
        },
    };
    StructuralModel::new(parts, cfg.mu_star)
}

fn sign_tag(sign: f64) -> &'static str {
    if sign > 0.0 {
        "+"
    } else {
        "-"
    }
}
