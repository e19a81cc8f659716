//! Monte Carlo drivers that check the finite-sample guarantees against a
//! known truth. Every replication draws its own sample and Rademacher signs
//! from sub-seeds of the experiment seed, so reports are reproducible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::sub_seed;
use crate::decision::{certificate_for, default_epsilon, eme_select, regrets};
use crate::envelope::lower_curve;
use crate::error::{Error, Result};
use crate::levelset::{level_set, level_set_sandwich};
use crate::model::StructuralModel;
use crate::models::{simulate_dgp, Truth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Certificate,
    Sandwich,
    EmeContainment,
    Rate,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "certificate" => Ok(ExperimentKind::Certificate),
            "sandwich" => Ok(ExperimentKind::Sandwich),
            "eme-containment" => Ok(ExperimentKind::EmeContainment),
            "rate" => Ok(ExperimentKind::Rate),
            other => Err(Error::contract(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    /// Sandwich constant `a > 1`.
    pub a: f64,
    /// eME tolerance; defaults to a thousandth of the objective range.
    pub epsilon: Option<f64>,
    /// Added to the sharp transform; defaults to the eME tolerance.
    pub margin: Option<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            a: 2.0,
            epsilon: None,
            margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub gamma_hat: String,
    pub true_regret: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covered: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Inner set inside the true level set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_ok: Option<bool>,
    /// True level set inside the outer set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_ok: Option<bool>,
    /// Chosen policy inside the true level set; only when epsilon <= delta*.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eme_contained: Option<bool>,
}

impl Replication {
    pub fn sandwich_ok(&self) -> Option<bool> {
        Some(self.inner_ok? && self.outer_ok?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub reps: usize,
    pub mean_regret: f64,
    pub certificate_coverage: Option<f64>,
    pub sandwich_coverage: Option<f64>,
    pub eme_containment: Option<f64>,
    /// Replications where the containment check applied.
    pub eme_checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sample sizes used in the fit.
    pub n_used: Vec<usize>,
    /// Sample sizes dropped because their mean regret was exactly zero.
    pub n_excluded: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub kappa: f64,
    pub reps: usize,
    pub n_list: Vec<usize>,
    pub options: ExperimentOptions,
    pub epsilon: f64,
    pub true_regrets: Vec<f64>,
    pub summaries: Vec<NSummary>,
    pub rate: Option<RateFit>,
    pub replications: Vec<Replication>,
}

/// Seed of replication `rep` at the `ni`-th sample size.
pub fn replication_seed(seed: u64, ni: usize, rep: usize) -> u64 {
    sub_seed(sub_seed(seed, ni as u64), rep as u64)
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    kind: ExperimentKind,
    model: &StructuralModel,
    truth: &Truth,
    true_regrets: &[f64],
    n: usize,
    rep: usize,
    seed: u64,
    kappa: f64,
    epsilon: f64,
    margin: f64,
    a: f64,
) -> Result<Replication> {
    let sample = simulate_dgp(truth, n, sub_seed(seed, 0))?;
    let g = eme_select(model, &sample, epsilon)?;
    let mut r = Replication {
        n,
        rep,
        seed,
        gamma_hat: model.policies().policies[g].id.clone(),
        true_regret: true_regrets[g],
        c_n: None,
        covered: None,
        delta_star: None,
        delta: None,
        inner_ok: None,
        outer_ok: None,
        eme_contained: None,
    };
    match kind {
        ExperimentKind::Certificate => {
            let cert = certificate_for(model, &sample, g, kappa, epsilon, sub_seed(seed, 1))?;
            r.covered = Some(true_regrets[g] <= cert.c_n);
            r.c_n = Some(cert.c_n);
        }
        ExperimentKind::Sandwich | ExperimentKind::EmeContainment => {
            let res = level_set_sandwich(model, &sample, kappa, a, None, sub_seed(seed, 1), None, margin)?;
            let truth_set = level_set(true_regrets, res.delta)?;
            r.inner_ok = Some(res.inner_index.iter().all(|i| truth_set.contains(i)));
            r.outer_ok = Some(truth_set.iter().all(|i| res.outer_index.contains(i)));
            if epsilon <= res.delta_star {
                r.eme_contained = Some(truth_set.contains(&g));
            }
            r.delta_star = Some(res.delta_star);
            r.delta = Some(res.delta);
        }
        ExperimentKind::Rate => {}
    }
    Ok(r)
}

fn rate_of(flags: impl Iterator<Item = Option<bool>>) -> (Option<f64>, usize) {
    let (mut hit, mut tot) = (0usize, 0usize);
    for f in flags.flatten() {
        tot += 1;
        hit += usize::from(f);
    }
    ((tot > 0).then(|| hit as f64 / tot as f64), tot)
}

/// Least-squares slope of `ln(mean regret)` on `ln n`. Sizes with zero mean
/// regret have no logarithm and are left out; `None` with fewer than two
/// usable sizes.
pub fn fit_rate(summaries: &[NSummary]) -> Option<RateFit> {
    let (used, excluded): (Vec<&NSummary>, Vec<&NSummary>) = summaries.iter().partition(|s| s.mean_regret > 0.0);
    if used.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = used.iter().map(|s| (s.n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|s| s.mean_regret.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(RateFit {
        slope,
        intercept: my - slope * mx,
        n_used: used.iter().map(|s| s.n).collect(),
        n_excluded: excluded.iter().map(|s| s.n).collect(),
    })
}

/// Runs `reps` replications at every sample size and aggregates coverage.
pub fn run_coverage_experiment(
    kind: ExperimentKind,
    truth: &Truth,
    n_list: &[usize],
    reps: usize,
    kappa: f64,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    if reps == 0 || n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::contract("need reps >= 1 and positive sample sizes"));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::contract("kappa must lie in (0, 1)"));
    }
    let model = truth.build_model()?;
    let population = truth.population(&model)?;
    let true_regrets = regrets(&lower_curve(&model, &population)?)?;
    let epsilon = options.epsilon.unwrap_or_else(|| default_epsilon(&model));
    let margin = options.margin.unwrap_or(epsilon);

    let jobs: Vec<(usize, usize)> = (0..n_list.len()).flat_map(|ni| (0..reps).map(move |r| (ni, r))).collect();
    let replications = jobs
        .par_iter()
        .map(|&(ni, rep)| {
            let s = replication_seed(seed, ni, rep);
            replicate(kind, &model, truth, &true_regrets, n_list[ni], rep, s, kappa, epsilon, margin, options.a)
                .map_err(|e| Error::Replication {
                    seed: s,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries: Vec<NSummary> = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let rs = &replications[ni * reps..(ni + 1) * reps];
            let (cert, _) = rate_of(rs.iter().map(|r| r.covered));
            let (sand, _) = rate_of(rs.iter().map(|r| r.sandwich_ok()));
            let (eme, checked) = rate_of(rs.iter().map(|r| r.eme_contained));
            NSummary {
                n,
                reps,
                mean_regret: rs.iter().map(|r| r.true_regret).sum::<f64>() / reps as f64,
                certificate_coverage: cert,
                sandwich_coverage: sand,
                eme_containment: eme,
                eme_checked: checked,
            }
        })
        .collect();
    let rate = match kind {
        ExperimentKind::Rate => fit_rate(&summaries),
        _ => None,
    };
    Ok(ExperimentReport {
        kind,
        seed,
        kappa,
        reps,
        n_list: n_list.to_vec(),
        options: *options,
        epsilon,
        true_regrets,
        summaries,
        rate,
        replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LatentMass, ProgramEvalTruth};

    fn summary(n: usize, mean_regret: f64) -> NSummary {
        NSummary {
            n,
            reps: 1,
            mean_regret,
            certificate_coverage: None,
            sandwich_coverage: None,
            eme_containment: None,
            eme_checked: 0,
        }
    }

    #[test]
    fn rate_fit_recovers_a_power_law() {
        let s: Vec<NSummary> = [100, 400, 1600].iter().map(|&n| summary(n, 2.0 / (n as f64).sqrt())).collect();
        let fit = fit_rate(&s).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
        assert!(fit.n_excluded.is_empty());
    }

    #[test]
    fn rate_fit_drops_zero_regret() {
        let s = vec![summary(10, 0.1), summary(20, 0.05), summary(40, 0.0)];
        let fit = fit_rate(&s).unwrap();
        assert_eq!(fit.n_used, vec![10, 20]);
        assert_eq!(fit.n_excluded, vec![40]);
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit_rate(&s[1..]).is_none());
    }

    fn truth() -> Truth {
        let config = serde_json::from_value(serde_json::json!({
            "z0_atoms": ["lo", "hi"], "x_atoms": ["x"], "y_lb": 0.0, "y_ub": 1.0,
            "outcome_grid_points": 3, "u_grid_points": 5, "g_grid_points": 3
        }))
        .unwrap();
        Truth::ProgramEvaluation(ProgramEvalTruth {
            config,
            g0: vec![0.5, 1.0],
            z_probs: vec![0.5, 0.5],
            latent: vec![
                LatentMass { u0: 0.0, u1: 1.0, u: 0.25, prob: 0.5 },
                LatentMass { u0: 0.5, u1: 0.5, u: 0.75, prob: 0.5 },
            ],
        })
    }

    #[test]
    fn reports_are_reproducible() {
        let opts = ExperimentOptions::default();
        let a = run_coverage_experiment(ExperimentKind::Certificate, &truth(), &[50, 100], 3, 0.9, 11, &opts).unwrap();
        let b = run_coverage_experiment(ExperimentKind::Certificate, &truth(), &[50, 100], 3, 0.9, 11, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replications.len(), 6);
        assert_eq!(a.summaries[1].n, 100);
        assert!(a.summaries.iter().all(|s| s.certificate_coverage.is_some()));
        assert_ne!(replication_seed(11, 0, 1), replication_seed(11, 1, 0));
    }

    #[test]
    fn sandwich_run_fills_containment_flags() {
        let r = run_coverage_experiment(
            ExperimentKind::Sandwich,
            &truth(),
            &[80],
            2,
            0.9,
            1,
            &ExperimentOptions::default(),
        )
        .unwrap();
        assert!(r.replications.iter().all(|x| x.sandwich_ok().is_some() && x.delta_star.is_some()));
        assert!(r.summaries[0].sandwich_coverage.is_some());
    }

    #[test]
    fn argument_errors() {
        let o = ExperimentOptions::default();
        assert!(run_coverage_experiment(ExperimentKind::Rate, &truth(), &[], 1, 0.9, 0, &o).is_err());
        assert!(run_coverage_experiment(ExperimentKind::Rate, &truth(), &[10], 0, 0.9, 0, &o).is_err());
        assert!(run_coverage_experiment(ExperimentKind::Rate, &truth(), &[10], 1, 1.0, 0, &o).is_err());
        assert!("bogus".parse::<ExperimentKind>().is_err());
        assert_eq!("eme-containment".parse::<ExperimentKind>().unwrap(), ExperimentKind::EmeContainment);
    }
}
