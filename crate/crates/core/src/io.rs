//! Model documents, explicit tabulated models, and CSV ingestion and output.
//!
//! A model document is JSON with a `spec_version`, a `kind` tag and the
//! kind's payload:
//!
//! ```json
//! {"spec_version": "1", "kind": "program_evaluation", "config": { ... }}
//! {"spec_version": "1", "kind": "sdc", "config": { ... }, "tau_hat": 0.25}
//! {"spec_version": "1", "kind": "tabulated", "model": { ... }}
//! ```
//!
//! Sample files carry one column per schema entry; each row's y label is the
//! `|`-join of its y columns and likewise for z. Labels must match atom labels
//! exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envelope::{EnvelopeCurve, WeightedMeasure};
use crate::error::{Error, Result};
use crate::model::{
    Atom, CounterfactualMap, ErrorBoundConstants, FactualMap, MomentSpec, ModelParts, Objective,
    Policy, PolicyGrid, Sample, SampleSchema, SearchOptions, StructuralModel, SupportSpec, ThetaGrid,
};
use crate::models::{build_program_evaluation, build_sdc_with_tau, ProgramEvalConfig, SdcConfig};
use crate::SPEC_VERSION;

/// One moment given by its values on `(theta, cell, u)`, flattened in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedMoment {
    pub label: String,
    pub bound: f64,
    pub values: Vec<f64>,
}

/// A model given entirely by explicit tables. Cells are ordered y-major
/// (`cell = y * |z atoms| + z`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedModel {
    pub y_atoms: Vec<Atom>,
    pub z_atoms: Vec<Atom>,
    pub ystar_atoms: Vec<Atom>,
    pub u_grid: Vec<Atom>,
    pub theta: Vec<Vec<f64>>,
    pub policies: Vec<Policy>,
    /// `gminus[theta][cell]`: latent indices consistent with the cell.
    pub gminus: Vec<Vec<Vec<usize>>>,
    /// `gstar[theta][gamma][cell][u]`: counterfactual indices.
    pub gstar: Vec<Vec<Vec<Vec<Vec<usize>>>>>,
    /// Either one value per ystar atom, or values on `(ystar, cell, u)` flattened.
    pub phi: Vec<f64>,
    pub phi_lb: f64,
    pub phi_ub: f64,
    #[serde(default)]
    pub moments: Vec<TabulatedMoment>,
    pub constants: ErrorBoundConstants,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub schema: SampleSchema,
}

impl TabulatedModel {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let (nt, ng) = (self.theta.len(), self.policies.len());
        let cells = self.y_atoms.len() * self.z_atoms.len();
        let (nu, ns) = (self.u_grid.len(), self.ystar_atoms.len());
        if self.gminus.len() != nt || self.gminus.iter().any(|t| t.len() != cells) {
            return bad(format!("gminus must be {nt} x {cells}"));
        }
        if self.gstar.len() != nt
            || self
                .gstar
                .iter()
                .any(|t| t.len() != ng || t.iter().any(|g| g.len() != cells || g.iter().any(|c| c.len() != nu)))
        {
            return bad(format!("gstar must be {nt} x {ng} x {cells} x {nu}"));
        }
        if self.phi.len() != ns && self.phi.len() != ns * cells * nu {
            return bad(format!("phi needs {ns} or {} entries", ns * cells * nu));
        }
        for m in &self.moments {
            if m.values.len() != nt * cells * nu {
                return bad(format!("moment {:?} needs {} values", m.label, nt * cells * nu));
            }
        }
        Ok(())
    }

    pub fn to_model(&self, mu_star: Option<f64>) -> Result<StructuralModel> {
        self.check()?;
        let nz = self.z_atoms.len();
        let cells = self.y_atoms.len() * nz;
        let nu = self.u_grid.len();
        let gm = Arc::new(self.gminus.clone());
        let gs = Arc::new(self.gstar.clone());
        let phi_tab = Arc::new(self.phi.clone());
        let per_star = self.phi.len() == self.ystar_atoms.len();
        let moments = self
            .moments
            .iter()
            .map(|m| {
                let vals = Arc::new(m.values.clone());
                MomentSpec {
                    label: m.label.clone(),
                    bound: m.bound,
                    eval: Arc::new(move |y: usize, z: usize, u: usize, t: usize| {
                        vals[(t * cells + y * nz + z) * nu + u]
                    }),
                }
            })
            .collect();
        let parts = ModelParts {
            support: SupportSpec {
                y_atoms: self.y_atoms.clone(),
                z_atoms: self.z_atoms.clone(),
                ystar_atoms: self.ystar_atoms.clone(),
                u_grid: self.u_grid.clone(),
                grid_resolution: vec![nu],
            },
            theta: ThetaGrid {
                candidates: self.theta.clone(),
            },
            policies: PolicyGrid {
                policies: self.policies.clone(),
            },
            moments,
            gminus: FactualMap(Arc::new(move |y: usize, z: usize, t: usize| gm[t][y * nz + z].clone())),
            gstar: CounterfactualMap(Arc::new(move |y: usize, z: usize, u: usize, t: usize, g: usize| {
                gs[t][g][y * nz + z][u].clone()
            })),
            objective: Objective {
                phi: Arc::new(move |s: usize, y: usize, z: usize, u: usize| {
                    if per_star {
                        phi_tab[s]
                    } else {
                        phi_tab[(s * cells + y * nz + z) * nu + u]
                    }
                }),
                phi_lb: self.phi_lb,
                phi_ub: self.phi_ub,
            },
            constants: self.constants,
            search: self.search,
            schema: self.schema.clone(),
        };
        StructuralModel::new(parts, mu_star)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    ProgramEvaluation {
        config: ProgramEvalConfig,
    },
    Sdc {
        config: SdcConfig,
        /// Plug-in margin; filled in by `build` from a sample.
        #[serde(default)]
        tau_hat: Option<f64>,
    },
    Tabulated {
        model: TabulatedModel,
        #[serde(default)]
        mu_star: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default = "spec_version")]
    pub spec_version: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

fn spec_version() -> String {
    SPEC_VERSION.to_string()
}

impl ModelDocument {
    pub fn new(spec: ModelSpec) -> Self {
        ModelDocument {
            spec_version: spec_version(),
            spec,
        }
    }

    pub fn build(&self) -> Result<StructuralModel> {
        match &self.spec {
            ModelSpec::ProgramEvaluation { config } => build_program_evaluation(config),
            ModelSpec::Sdc { config, tau_hat } => {
                let tau = tau_hat.ok_or_else(|| {
                    Error::Build("sdc document has no tau_hat; run `build` with a sample first".into())
                })?;
                Ok(build_sdc_with_tau(config, tau)?.model)
            }
            ModelSpec::Tabulated { model, mu_star } => model.to_model(*mu_star),
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut s = String::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn load_model(path: &Path) -> Result<StructuralModel> {
    read_json::<ModelDocument>(path)?.build()
}

/// Wraps a serializable value with the `spec_version` field.
pub fn versioned<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("spec_version".into(), SPEC_VERSION.into());
            Ok(v)
        }
        None => Ok(serde_json::json!({ "spec_version": SPEC_VERSION, "value": v })),
    }
}

fn label_index(atoms: &[Atom]) -> HashMap<&str, usize> {
    atoms.iter().enumerate().map(|(i, a)| (a.label.as_str(), i)).collect()
}

fn column_positions(headers: &csv::StringRecord, wanted: &[String]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers.iter().position(|h| h == w).ok_or_else(|| {
                Error::contract(format!(
                    "missing column {w:?} (have {})",
                    headers.iter().collect::<Vec<_>>().join(",")
                ))
            })
        })
        .collect()
}

/// Atom indices of one row, erroring on labels outside the support.
fn row_cell(
    rec: &csv::StringRecord,
    line: usize,
    ycols: &[usize],
    zcols: &[usize],
    ymap: &HashMap<&str, usize>,
    zmap: &HashMap<&str, usize>,
) -> Result<(usize, usize)> {
    let join = |cols: &[usize]| cols.iter().map(|&c| rec.get(c).unwrap_or("").trim()).collect::<Vec<_>>().join("|");
    let yl = join(ycols);
    let zl = join(zcols);
    let y = *ymap
        .get(yl.as_str())
        .ok_or_else(|| Error::contract(format!("row {line}: y label {yl:?} is not a support atom")))?;
    let z = *zmap
        .get(zl.as_str())
        .ok_or_else(|| Error::contract(format!("row {line}: z label {zl:?} is not a support atom")))?;
    Ok((y, z))
}

pub fn read_sample_from<R: Read>(model: &StructuralModel, reader: R) -> Result<Sample> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let schema = model.schema();
    let ycols = column_positions(&headers, &schema.y_columns)?;
    let zcols = column_positions(&headers, &schema.z_columns)?;
    let s = model.support();
    let (ymap, zmap) = (label_index(&s.y_atoms), label_index(&s.z_atoms));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        rows.push(row_cell(&rec?, i + 2, &ycols, &zcols, &ymap, &zmap)?);
    }
    if rows.is_empty() {
        return Err(Error::contract("sample file has no rows"));
    }
    Sample::new(s, rows)
}

pub fn read_sample(model: &StructuralModel, path: &Path) -> Result<Sample> {
    read_sample_from(model, std::fs::File::open(path)?)
}

/// Population weights: schema columns plus `weight`. Repeated cells add up;
/// weights must sum to one.
pub fn read_weights(model: &StructuralModel, path: &Path) -> Result<WeightedMeasure> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let schema = model.schema();
    let ycols = column_positions(&headers, &schema.y_columns)?;
    let zcols = column_positions(&headers, &schema.z_columns)?;
    let wcol = column_positions(&headers, &["weight".to_string()])?[0];
    let s = model.support();
    let (ymap, zmap) = (label_index(&s.y_atoms), label_index(&s.z_atoms));
    let mut w = vec![0.0; s.n_cells()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (y, z) = row_cell(&rec, i + 2, &ycols, &zcols, &ymap, &zmap)?;
        let v: f64 = rec
            .get(wcol)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::contract(format!("row {}: weight is not a number", i + 2)))?;
        w[s.cell(y, z)] += v;
    }
    WeightedMeasure::new(s, w)
}

/// Splits an atom label back into one value per schema column.
fn split_label(label: &str, columns: usize) -> Vec<String> {
    let parts: Vec<String> = label.split('|').map(str::to_string).collect();
    if parts.len() == columns {
        parts
    } else {
        vec![label.to_string()]
    }
}

pub fn write_sample<W: Write>(model: &StructuralModel, sample: &Sample, out: W) -> Result<()> {
    let schema = model.schema();
    let s = model.support();
    let mut w = csv::Writer::from_writer(out);
    let mut header = schema.y_columns.clone();
    header.extend(schema.z_columns.iter().cloned());
    w.write_record(&header)?;
    for &(y, z) in &sample.rows {
        let mut rec = split_label(&s.y_atoms[y].label, schema.y_columns.len());
        rec.extend(split_label(&s.z_atoms[z].label, schema.z_columns.len()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: gamma_id, i_lb, i_ub, theta_lb, theta_ub (theta indices).
pub fn write_envelope_csv<W: Write>(curve: &EnvelopeCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma_id", "i_lb", "i_ub", "theta_lb", "theta_ub"])?;
    for r in &curve.records {
        w.write_record([
            r.gamma_id.clone(),
            format!("{}", r.i_lb),
            format!("{}", r.i_ub),
            r.theta_lb.to_string(),
            r.theta_ub.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A single column of positive reals, with or without a `delta` header.
pub fn read_schedule(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(0).unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::contract(format!("schedule row {} is not a number", i + 1))),
        }
    }
    Ok(out)
}
