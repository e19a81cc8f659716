//! Finite structural models: supports, parameter and policy grids, the
//! set-valued factual and counterfactual maps, moments, and the penalized
//! integrand whose integral gives the envelope functions.
//!
//! Every primitive is evaluated on indices into the declared atom lists, so a
//! model is a bundle of pure functions over a finite grid.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::Tabulation;

/// A labelled support point. Labels are what sample files refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub label: String,
    pub coords: Vec<f64>,
}

impl Atom {
    pub fn new(label: impl Into<String>, coords: Vec<f64>) -> Self {
        Atom {
            label: label.into(),
            coords,
        }
    }

    /// A scalar atom labelled by its value.
    pub fn scalar(v: f64) -> Self {
        Atom::new(format_value(v), vec![v])
    }
}

/// Canonical text form of a real used for atom labels.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportSpec {
    pub y_atoms: Vec<Atom>,
    pub z_atoms: Vec<Atom>,
    pub ystar_atoms: Vec<Atom>,
    pub u_grid: Vec<Atom>,
    /// Points per latent coordinate, informational.
    pub grid_resolution: Vec<usize>,
}

impl SupportSpec {
    pub fn n_cells(&self) -> usize {
        self.y_atoms.len() * self.z_atoms.len()
    }

    /// Cell index of an observed pair; cells are ordered y-major.
    pub fn cell(&self, y: usize, z: usize) -> usize {
        y * self.z_atoms.len() + z
    }

    pub fn cell_parts(&self, cell: usize) -> (usize, usize) {
        (cell / self.z_atoms.len(), cell % self.z_atoms.len())
    }

    fn violations(&self, out: &mut Vec<String>) {
        for (name, atoms) in [
            ("y_atoms", &self.y_atoms),
            ("z_atoms", &self.z_atoms),
            ("ystar_atoms", &self.ystar_atoms),
            ("u_grid", &self.u_grid),
        ] {
            if atoms.is_empty() {
                out.push(format!("{name} is empty"));
            }
            let mut labels = HashSet::new();
            for a in atoms.iter() {
                if !labels.insert(a.label.as_str()) {
                    out.push(format!("{name} has duplicate label {:?}", a.label));
                }
                if a.coords.iter().any(|c| !c.is_finite()) {
                    out.push(format!("{name} atom {:?} has non-finite coordinates", a.label));
                }
            }
            for i in 0..atoms.len() {
                for k in i + 1..atoms.len() {
                    if atoms[i].coords == atoms[k].coords && !atoms[i].coords.is_empty() {
                        out.push(format!(
                            "{name} atoms {:?} and {:?} coincide",
                            atoms[i].label, atoms[k].label
                        ));
                    }
                }
            }
        }
    }
}

/// Finite parameter grid; each candidate is a stacked real vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub candidates: Vec<Vec<f64>>,
}

impl ThetaGrid {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Sup-norm distance between two candidates.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.candidates[a]
            .iter()
            .zip(&self.candidates[b])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    /// Map table on the policy's domain (z atoms for most models); may be empty
    /// for models whose counterfactual map does not consult it.
    pub map: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyGrid {
    pub policies: Vec<Policy>,
}

impl PolicyGrid {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.policies.iter().position(|p| p.id == id)
    }

    /// All maps from a domain of size `domain` into itself, in lexicographic order
    /// of their tables. Ids list the images, e.g. `g[0,1]`.
    pub fn all_maps(domain: usize) -> Result<Self> {
        let count = (domain as u32)
            .checked_pow(domain as u32)
            .filter(|&c| c <= 1 << 20)
            .ok_or_else(|| Error::Budget(format!("{domain}^{domain} policies")))?;
        let mut policies = Vec::with_capacity(count as usize);
        for mut code in 0..count as usize {
            let mut map = vec![0; domain];
            for slot in map.iter_mut().rev() {
                *slot = code % domain;
                code /= domain;
            }
            let id = format!(
                "g[{}]",
                map.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            );
            policies.push(Policy { id, map });
        }
        Ok(PolicyGrid { policies })
    }
}

pub type MomentFn = Arc<dyn Fn(usize, usize, usize, usize) -> f64 + Send + Sync>;
pub type FactualFn = Arc<dyn Fn(usize, usize, usize) -> Vec<usize> + Send + Sync>;
pub type CounterfactualFn = Arc<dyn Fn(usize, usize, usize, usize, usize) -> Vec<usize> + Send + Sync>;
pub type PhiFn = Arc<dyn Fn(usize, usize, usize, usize) -> f64 + Send + Sync>;

/// One moment inequality `E[m(y, z, u, theta)] <= 0` with a declared bound on |m|.
#[derive(Clone)]
pub struct MomentSpec {
    pub label: String,
    pub bound: f64,
    /// Evaluated at (y, z, u, theta) indices.
    pub eval: MomentFn,
}

impl fmt::Debug for MomentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentSpec")
            .field("label", &self.label)
            .field("bound", &self.bound)
            .finish()
    }
}

/// Latent points consistent with an observation: (y, z, theta) -> u indices.
#[derive(Clone)]
pub struct FactualMap(pub FactualFn);

/// Counterfactual outcomes: (y, z, u, theta, gamma) -> ystar indices.
#[derive(Clone)]
pub struct CounterfactualMap(pub CounterfactualFn);

#[derive(Clone)]
pub struct Objective {
    /// Evaluated at (ystar, y, z, u) indices.
    pub phi: PhiFn,
    pub phi_lb: f64,
    pub phi_ub: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
}

/// Controls the search over binary multipliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Largest number of latent-dependent moments searched exhaustively.
    pub exact_max_moments: usize,
    /// Exhaustive search runs only while |Theta| * 2^J stays within this budget.
    pub budget: u64,
    /// Fall back to coordinate ascent instead of refusing.
    pub heuristic: bool,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            exact_max_moments: 20,
            budget: 1 << 32,
            heuristic: false,
            restarts: 8,
            seed: 0,
        }
    }
}

/// Column names that make up the y and z atoms in sample files. Atom labels
/// join one value per column with `|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSchema {
    pub y_columns: Vec<String>,
    pub z_columns: Vec<String>,
}

impl Default for SampleSchema {
    fn default() -> Self {
        SampleSchema {
            y_columns: vec!["y".into()],
            z_columns: vec!["z".into()],
        }
    }
}

/// Everything needed to assemble a [`StructuralModel`].
#[derive(Clone)]
pub struct ModelParts {
    pub support: SupportSpec,
    pub theta: ThetaGrid,
    pub policies: PolicyGrid,
    pub moments: Vec<MomentSpec>,
    pub gminus: FactualMap,
    pub gstar: CounterfactualMap,
    pub objective: Objective,
    pub constants: ErrorBoundConstants,
    pub search: SearchOptions,
    pub schema: SampleSchema,
}

/// Immutable finite structural model. The penalty weight is fixed at build.
pub struct StructuralModel {
    parts: ModelParts,
    mu_star: f64,
    tabulations: [OnceLock<std::result::Result<Arc<Tabulation>, String>>; 2],
}

impl fmt::Debug for StructuralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StructuralModel")
            .field("cells", &self.parts.support.n_cells())
            .field("u_grid", &self.parts.support.u_grid.len())
            .field("theta", &self.parts.theta.len())
            .field("policies", &self.parts.policies.len())
            .field("moments", &self.parts.moments.len())
            .field("mu_star", &self.mu_star)
            .finish()
    }
}

/// Which envelope an evaluation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub(crate) fn slot(self) -> usize {
        match self {
            Side::Lower => 0,
            Side::Upper => 1,
        }
    }
}

/// Smallest admissible penalty: `max{C2/C1, (phi_ub - phi_lb)/(C1 * delta)}`.
pub fn mu_star(constants: &ErrorBoundConstants, objective: &Objective) -> Result<f64> {
    let ErrorBoundConstants { c1, c2, delta } = *constants;
    let vals = [c1, c2, delta, objective.phi_lb, objective.phi_ub];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite constants or objective bounds".into()));
    }
    if c1 <= 0.0 || delta <= 0.0 || c2 < 0.0 {
        return Err(Error::InvalidModel(format!(
            "error-bound constants must satisfy C1 > 0, delta > 0, C2 >= 0 (got {c1}, {delta}, {c2})"
        )));
    }
    if objective.phi_ub < objective.phi_lb {
        return Err(Error::InvalidModel("phi_ub < phi_lb".into()));
    }
    Ok(f64::max(c2 / c1, (objective.phi_ub - objective.phi_lb) / (c1 * delta)))
}

impl StructuralModel {
    /// Assemble a model. `mu_star` defaults to the floor; an explicit value must not
    /// fall below it.
    pub fn new(parts: ModelParts, mu_star: Option<f64>) -> Result<Self> {
        let floor = self::mu_star(&parts.constants, &parts.objective)?;
        let mu = match mu_star {
            None => floor,
            Some(m) if !m.is_finite() => {
                return Err(Error::InvalidModel("mu_star must be finite".into()))
            }
            Some(m) if m < floor * (1.0 - 1e-12) => {
                return Err(Error::InvalidModel(format!(
                    "mu_star {m} is below the required floor {floor}"
                )))
            }
            Some(m) => m,
        };
        if parts.theta.is_empty() || parts.policies.is_empty() {
            return Err(Error::InvalidModel("theta grid and policy grid must be non-empty".into()));
        }
        Ok(Self::new_unchecked(parts, mu))
    }

    /// Assemble without checking the penalty floor; [`validate_model`] reports
    /// any violation.
    pub fn new_unchecked(parts: ModelParts, mu_star: f64) -> Self {
        StructuralModel {
            parts,
            mu_star,
            tabulations: [OnceLock::new(), OnceLock::new()],
        }
    }

    /// Same primitives with a different penalty (still subject to the floor).
    pub fn with_mu_star(&self, mu_star: f64) -> Result<Self> {
        StructuralModel::new(self.parts.clone(), Some(mu_star))
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn support(&self) -> &SupportSpec {
        &self.parts.support
    }

    pub fn theta(&self) -> &ThetaGrid {
        &self.parts.theta
    }

    pub fn policies(&self) -> &PolicyGrid {
        &self.parts.policies
    }

    pub fn moments(&self) -> &[MomentSpec] {
        &self.parts.moments
    }

    pub fn objective(&self) -> &Objective {
        &self.parts.objective
    }

    pub fn constants(&self) -> &ErrorBoundConstants {
        &self.parts.constants
    }

    pub fn search(&self) -> &SearchOptions {
        &self.parts.search
    }

    pub fn schema(&self) -> &SampleSchema {
        &self.parts.schema
    }

    pub fn mu_star(&self) -> f64 {
        self.mu_star
    }

    pub fn n_moments(&self) -> usize {
        self.parts.moments.len()
    }

    pub fn gminus(&self, y: usize, z: usize, theta: usize) -> Vec<usize> {
        (self.parts.gminus.0)(y, z, theta)
    }

    pub fn gstar(&self, y: usize, z: usize, u: usize, theta: usize, gamma: usize) -> Vec<usize> {
        (self.parts.gstar.0)(y, z, u, theta, gamma)
    }

    pub fn phi(&self, ystar: usize, y: usize, z: usize, u: usize) -> f64 {
        (self.parts.objective.phi)(ystar, y, z, u)
    }

    pub fn moment(&self, j: usize, y: usize, z: usize, u: usize, theta: usize) -> f64 {
        (self.parts.moments[j].eval)(y, z, u, theta)
    }

    /// Uniform bound on |h|: `max(|phi_lb|, |phi_ub|) + mu_star * sum_j Mbar_j`.
    pub fn h_bar(&self) -> f64 {
        let o = &self.parts.objective;
        let msum: f64 = self.parts.moments.iter().map(|m| m.bound).sum();
        f64::max(o.phi_lb.abs(), o.phi_ub.abs()) + self.mu_star * msum
    }

    /// Cached integrand tables for one side, built on first use.
    pub(crate) fn tabulation(&self, side: Side) -> Result<Arc<Tabulation>> {
        let slot = &self.tabulations[side.slot()];
        let built = slot.get_or_init(|| {
            Tabulation::build(self, side)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        });
        match built {
            Ok(t) => Ok(Arc::clone(t)),
            Err(msg) => Err(if msg.starts_with("enumeration budget") {
                Error::Budget(msg.clone())
            } else {
                Error::InvalidModel(msg.clone())
            }),
        }
    }

    fn check_indices(&self, y: usize, z: usize, theta: usize, gamma: usize) -> Result<()> {
        let s = &self.parts.support;
        if y >= s.y_atoms.len()
            || z >= s.z_atoms.len()
            || theta >= self.parts.theta.len()
            || gamma >= self.parts.policies.len()
        {
            return Err(Error::contract(format!(
                "index out of range: y={y}, z={z}, theta={theta}, gamma={gamma}"
            )));
        }
        Ok(())
    }
}

/// Penalized integrand at one observed cell.
///
/// Lower side: `inf_{u in G-} [ inf_{y* in G*} phi + mu * sum_j lambda_j m_j ]`,
/// upper side: `sup_{u in G-} [ sup_{y* in G*} phi - mu * sum_j lambda_j m_j ]`.
/// Empty sets give +inf (lower) and -inf (upper).
pub fn h_integrand(
    model: &StructuralModel,
    y: usize,
    z: usize,
    theta: usize,
    gamma: usize,
    lambda: &[bool],
    side: Side,
) -> Result<f64> {
    model.check_indices(y, z, theta, gamma)?;
    if lambda.len() != model.n_moments() {
        return Err(Error::contract(format!(
            "lambda has length {}, model has {} moments",
            lambda.len(),
            model.n_moments()
        )));
    }
    let mu = model.mu_star();
    let mut best = match side {
        Side::Lower => f64::INFINITY,
        Side::Upper => f64::NEG_INFINITY,
    };
    for u in model.gminus(y, z, theta) {
        let stars = model.gstar(y, z, u, theta, gamma);
        if stars.is_empty() {
            continue;
        }
        let phis = stars.iter().map(|&s| model.phi(s, y, z, u));
        let penalty: f64 = lambda
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(j, _)| model.moment(j, y, z, u, theta))
            .sum::<f64>()
            * mu;
        match side {
            Side::Lower => {
                let v = phis.fold(f64::INFINITY, f64::min) + penalty;
                best = best.min(v);
            }
            Side::Upper => {
                let v = phis.fold(f64::NEG_INFINITY, f64::max) - penalty;
                best = best.max(v);
            }
        }
    }
    Ok(best)
}

/// Outcome of [`validate_model`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<String>,
}

/// Longest list of offending cells reported per check.
const MAX_LISTED: usize = 20;

/// Exhaustively checks every declared invariant of a model. Never fails; the
/// report carries the violations.
pub fn validate_model(model: &StructuralModel) -> ValidationReport {
    let mut v = Vec::new();
    let p = &model.parts;
    p.support.violations(&mut v);

    if p.theta.is_empty() {
        v.push("theta grid is empty".into());
    }
    if let Some(first) = p.theta.candidates.first() {
        for (i, c) in p.theta.candidates.iter().enumerate() {
            if c.len() != first.len() {
                v.push(format!("theta candidate {i} has dimension {} (expected {})", c.len(), first.len()));
            }
            if c.iter().any(|x| !x.is_finite()) {
                v.push(format!("theta candidate {i} is not finite"));
            }
        }
    }
    if p.policies.is_empty() {
        v.push("policy grid is empty".into());
    }
    let mut ids = HashSet::new();
    for pol in &p.policies.policies {
        if !ids.insert(pol.id.as_str()) {
            v.push(format!("duplicate policy id {:?}", pol.id));
        }
    }

    let floor = match mu_star(&p.constants, &p.objective) {
        Ok(f) => Some(f),
        Err(e) => {
            v.push(e.to_string());
            None
        }
    };
    if let Some(f) = floor {
        if !(model.mu_star >= f * (1.0 - 1e-12)) {
            v.push(format!("mu_star below required floor: {} < {f}", model.mu_star));
        }
    }
    for (j, m) in p.moments.iter().enumerate() {
        if !(m.bound > 0.0 && m.bound.is_finite()) {
            v.push(format!("moment {j} ({}) has non-positive bound {}", m.label, m.bound));
        }
    }

    let s = &p.support;
    if v.iter().any(|x| x.contains("is empty")) {
        return ValidationReport { passed: false, violations: v };
    }
    let (ny, nz, nu, ns) = (s.y_atoms.len(), s.z_atoms.len(), s.u_grid.len(), s.ystar_atoms.len());

    let mut phi_bad = Vec::new();
    for ys in 0..ns {
        for y in 0..ny {
            for z in 0..nz {
                for u in 0..nu {
                    let f = model.phi(ys, y, z, u);
                    if !(f >= p.objective.phi_lb && f <= p.objective.phi_ub) {
                        phi_bad.push(format!("(ystar={ys}, y={y}, z={z}, u={u}): phi={f}"));
                    }
                }
            }
        }
    }
    push_listed(&mut v, "phi outside [phi_lb, phi_ub]", phi_bad);

    let mut map_bad = Vec::new();
    for y in 0..ny {
        for z in 0..nz {
            for t in 0..p.theta.len() {
                let us = model.gminus(y, z, t);
                for &u in &us {
                    if u >= nu {
                        map_bad.push(format!("G- (y={y}, z={z}, theta={t}) returns u={u}"));
                        continue;
                    }
                    for g in 0..p.policies.len() {
                        for st in model.gstar(y, z, u, t, g) {
                            if st >= ns {
                                map_bad.push(format!(
                                    "G* (y={y}, z={z}, u={u}, theta={t}, gamma={g}) returns ystar={st}"
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    push_listed(&mut v, "set-valued map outside its grid", map_bad);

    for (j, m) in p.moments.iter().enumerate() {
        let mut bad = Vec::new();
        for y in 0..ny {
            for z in 0..nz {
                for u in 0..nu {
                    for t in 0..p.theta.len() {
                        let val = (m.eval)(y, z, u, t);
                        if !(val.abs() <= m.bound * (1.0 + 1e-12)) {
                            bad.push(format!("(y={y}, z={z}, u={u}, theta={t}): m={val}"));
                        }
                    }
                }
            }
        }
        push_listed(&mut v, &format!("moment {j} ({}) exceeds its bound {}", m.label, m.bound), bad);
    }

    ValidationReport {
        passed: v.is_empty(),
        violations: v,
    }
}

fn push_listed(out: &mut Vec<String>, what: &str, cells: Vec<String>) {
    if cells.is_empty() {
        return;
    }
    let shown: Vec<_> = cells.iter().take(MAX_LISTED).cloned().collect();
    let more = cells.len().saturating_sub(MAX_LISTED);
    let tail = if more > 0 { format!(" (+{more} more)") } else { String::new() };
    out.push(format!("{what} at {}{tail}", shown.join("; ")));
}

/// n observations of (y, z), stored as atom indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub rows: Vec<(usize, usize)>,
}

impl Sample {
    pub fn new(support: &SupportSpec, rows: Vec<(usize, usize)>) -> Result<Self> {
        for (i, &(y, z)) in rows.iter().enumerate() {
            if y >= support.y_atoms.len() || z >= support.z_atoms.len() {
                return Err(Error::contract(format!("sample row {i} is off the support grid")));
            }
        }
        Ok(Sample { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Cell index of every row.
    pub fn cells(&self, support: &SupportSpec) -> Vec<usize> {
        self.rows.iter().map(|&(y, z)| support.cell(y, z)).collect()
    }

    pub fn cell_counts(&self, support: &SupportSpec) -> Vec<usize> {
        let mut counts = vec![0; support.n_cells()];
        for c in self.cells(support) {
            counts[c] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{moment, one_cell, two_point};

    fn objective(lb: f64, ub: f64) -> Objective {
        Objective {
            phi: Arc::new(|_, _, _, _| 0.0),
            phi_lb: lb,
            phi_ub: ub,
        }
    }

    fn constants(c1: f64, c2: f64, delta: f64) -> ErrorBoundConstants {
        ErrorBoundConstants { c1, c2, delta }
    }

    #[test]
    fn penalty_floor_examples() {
        assert_eq!(mu_star(&constants(1.0, 1.0, 0.5), &objective(0.0, 1.0)).unwrap(), 2.0);
        assert_eq!(mu_star(&constants(1.0, 1.0, 1.0), &objective(0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(mu_star(&constants(1.0, 1.0, 4.0), &objective(-1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(mu_star(&constants(2.0, 0.0, 2.0), &objective(0.0, 1.0)).unwrap(), 0.25);
    }

    #[test]
    fn penalty_floor_rejects_bad_constants() {
        for c in [constants(f64::NAN, 1.0, 1.0), constants(0.0, 1.0, 1.0), constants(1.0, 1.0, 0.0)] {
            assert!(matches!(mu_star(&c, &objective(0.0, 1.0)), Err(Error::InvalidModel(_))));
        }
        assert!(mu_star(&constants(1.0, 1.0, 1.0), &objective(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn integrand_two_latent_points() {
        let m = two_point(1, 2.0);
        let on = h_integrand(&m, 0, 0, 0, 0, &[true], Side::Lower).unwrap();
        assert!((on - 0.5).abs() < 1e-15, "{on}");
        let off = h_integrand(&m, 0, 0, 0, 0, &[false], Side::Lower).unwrap();
        assert!((off - 0.3).abs() < 1e-15, "{off}");
        // Upper side mirrors: sup of phi minus the penalty.
        let up = h_integrand(&m, 0, 0, 0, 0, &[true], Side::Upper).unwrap();
        assert!((up - 0.9).abs() < 1e-15, "{up}");
    }

    #[test]
    fn integrand_empty_sets_follow_the_extended_convention() {
        let mut t = one_cell(1, 2, &[0.3, 0.7], 1);
        t.gminus = vec![vec![vec![]]];
        let m = t.to_model(None).unwrap();
        assert_eq!(h_integrand(&m, 0, 0, 0, 0, &[], Side::Lower).unwrap(), f64::INFINITY);
        assert_eq!(h_integrand(&m, 0, 0, 0, 0, &[], Side::Upper).unwrap(), f64::NEG_INFINITY);

        let mut t = one_cell(1, 2, &[0.3, 0.7], 1);
        t.gstar[0][0][0] = vec![vec![], vec![1]];
        let m = t.to_model(None).unwrap();
        // Latent point 0 has no counterfactual and is skipped.
        assert_eq!(h_integrand(&m, 0, 0, 0, 0, &[], Side::Lower).unwrap(), 0.7);
    }

    #[test]
    fn integrand_checks_indices_and_multiplier_length() {
        let m = two_point(1, 2.0);
        assert!(matches!(h_integrand(&m, 1, 0, 0, 0, &[true], Side::Lower), Err(Error::Contract(_))));
        assert!(matches!(h_integrand(&m, 0, 0, 0, 0, &[], Side::Lower), Err(Error::Contract(_))));
    }

    #[test]
    fn explicit_penalty_below_floor_is_refused() {
        let t = one_cell(1, 2, &[0.3, 0.7], 1);
        assert!(matches!(t.to_model(Some(0.5)), Err(Error::InvalidModel(_))));
        assert_eq!(t.to_model(None).unwrap().mu_star(), 1.0);
        assert_eq!(t.to_model(Some(3.0)).unwrap().mu_star(), 3.0);
    }

    #[test]
    fn validation_passes_on_a_well_formed_model() {
        let r = validate_model(&two_point(2, 2.0));
        assert!(r.passed, "{:?}", r.violations);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn validation_reports_a_penalty_below_the_floor() {
        let mut t = one_cell(1, 2, &[0.3, 0.7], 1);
        t.constants = constants(1.0, 1.0, 0.5);
        let parts = t.to_model(None).unwrap().parts().clone();
        let r = validate_model(&StructuralModel::new_unchecked(parts, 0.5));
        assert!(!r.passed);
        assert!(r.violations.iter().any(|v| v.contains("mu_star below required floor")), "{:?}", r.violations);
    }

    #[test]
    fn validation_lists_the_cell_where_a_moment_breaks_its_bound() {
        let mut t = one_cell(1, 2, &[0.3, 0.7], 1);
        t.moments = vec![moment("m1", &[0.5, 1.5])];
        let r = validate_model(&t.to_model(None).unwrap());
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 1, "{:?}", r.violations);
        assert!(r.violations[0].contains("(y=0, z=0, u=1, theta=0)"), "{}", r.violations[0]);
    }

    #[test]
    fn validation_catches_out_of_grid_maps_and_objective() {
        let mut t = one_cell(1, 2, &[0.3, 1.7], 1);
        t.gminus = vec![vec![vec![0, 5]]];
        let r = validate_model(&t.to_model(None).unwrap());
        assert!(r.violations.iter().any(|v| v.contains("phi outside")));
        assert!(r.violations.iter().any(|v| v.contains("returns u=5")));
    }

    #[test]
    fn all_maps_enumerates_in_lexicographic_order() {
        let g = PolicyGrid::all_maps(2).unwrap();
        let ids: Vec<&str> = g.policies.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["g[0,0]", "g[0,1]", "g[1,0]", "g[1,1]"]);
        assert_eq!(PolicyGrid::all_maps(3).unwrap().len(), 27);
        assert!(matches!(PolicyGrid::all_maps(9), Err(Error::Budget(_))));
    }

    #[test]
    fn h_bar_adds_weighted_moment_bounds() {
        let m = two_point(1, 2.0);
        assert_eq!(m.h_bar(), 1.0 + 2.0 * 1.0);
    }

    #[test]
    fn sample_rejects_rows_off_the_grid() {
        let m = two_point(1, 2.0);
        assert!(Sample::new(m.support(), vec![(0, 0), (0, 1)]).is_err());
        let s = Sample::new(m.support(), vec![(0, 0), (0, 0)]).unwrap();
        assert_eq!(s.cell_counts(m.support()), vec![2]);
    }
}
