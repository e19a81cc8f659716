//! Command-line front end. Exit codes: 0 on success, 3 when a computation is
//! refused for exceeding a budget, 2 for every other error.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use policybound::complexity::{hlb_complexity, RademacherDraw};
use policybound::decision::{certificate_cn, default_epsilon, eme_select};
use policybound::envelope::{envelope_curve, WeightedMeasure};
use policybound::experiment::{run_coverage_experiment, ExperimentKind, ExperimentOptions};
use policybound::io::{
    load_model, read_json, read_sample, read_schedule, read_weights, versioned, write_envelope_csv, write_sample,
    ModelDocument, ModelSpec,
};
use policybound::levelset::{level_set_sandwich, DeltaSchedule};
use policybound::model::{validate_model, StructuralModel};
use policybound::models::{build_sdc, simulate_dgp, Truth};
use policybound::oracle::{oracle_curve, OracleOptions};
use policybound::{Error, Result};

#[derive(Parser)]
#[command(name = "policybound", version, about = "Bounds, maximin choice and certificates for policy transforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Model document (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Sample CSV; columns follow the model's schema.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Lower and upper envelopes for every policy.
    Envelope {
        #[command(flatten)]
        common: Common,
        /// Population weights CSV (schema columns plus `weight`) instead of a sample.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// The policy chosen by the eME rule.
    Decide {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// eME choice with its finite-sample certificate.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.9)]
        kappa: f64,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Inner and outer empirical level sets.
    Levelset {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.9)]
        kappa: f64,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        /// Requested threshold; defaults to a * delta*.
        #[arg(long)]
        delta: Option<f64>,
        /// CSV with one threshold per row, strictly decreasing.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Added to the sharp transform; defaults to the eME tolerance.
        #[arg(long)]
        margin: Option<f64>,
        /// Where to write the step-bound trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Empirical Rademacher complexity of the lower-integrand class.
    Complexity {
        #[command(flatten)]
        common: Common,
        /// Use the class of pairwise differences.
        #[arg(long)]
        differences: bool,
    },
    /// Turn a builder configuration into a model document.
    Build {
        /// Configuration document: `{"kind": "program_evaluation" | "sdc", "config": {...}}`.
        #[arg(long)]
        config: PathBuf,
        /// Sample used for the SDC plug-in margin.
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a sample from a known truth.
    Simulate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identified-set bounds by linear programming (small models only).
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Monte Carlo coverage experiment against a known truth.
    Experiment {
        #[arg(long)]
        truth: PathBuf,
        /// certificate, sandwich, eme-containment or rate.
        #[arg(long)]
        kind: ExperimentKind,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0.9)]
        kappa: f64,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every declared invariant of a model.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, &versioned(value)?)?;
    writeln!(w)?;
    Ok(())
}

fn need_sample(model: &StructuralModel, sample: &Option<PathBuf>) -> Result<policybound::Sample> {
    let p = sample
        .as_ref()
        .ok_or_else(|| Error::Contract("--sample is required".into()))?;
    read_sample(model, p)
}

fn measure_from(model: &StructuralModel, sample: &Option<PathBuf>, weights: &Option<PathBuf>) -> Result<WeightedMeasure> {
    match (sample, weights) {
        (Some(_), Some(_)) => Err(Error::Contract("give either --sample or --weights, not both".into())),
        (_, Some(w)) => read_weights(model, w),
        (s, None) => WeightedMeasure::empirical(model.support(), &need_sample(model, s)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Envelope { common, weights, format } => {
            let model = load_model(&common.model)?;
            let measure = measure_from(&model, &common.sample, &weights)?;
            let curve = envelope_curve(&model, &measure)?;
            match format {
                Format::Csv => write_envelope_csv(&curve, sink(&common.out)?),
                Format::Json => emit_json(&curve, &common.out),
            }
        }
        Command::Decide { common, epsilon } => {
            let model = load_model(&common.model)?;
            let sample = need_sample(&model, &common.sample)?;
            let eps = epsilon.unwrap_or_else(|| default_epsilon(&model));
            let g = eme_select(&model, &sample, eps)?;
            let id = &model.policies().policies[g].id;
            emit_json(&serde_json::json!({ "gamma_hat": id, "gamma_index": g, "epsilon": eps }), &common.out)
        }
        Command::Certify { common, kappa, epsilon } => {
            let model = load_model(&common.model)?;
            let sample = need_sample(&model, &common.sample)?;
            let eps = epsilon.unwrap_or_else(|| default_epsilon(&model));
            emit_json(&certificate_cn(&model, &sample, kappa, eps, common.seed)?, &common.out)
        }
        Command::Levelset {
            common,
            kappa,
            a,
            delta,
            schedule,
            margin,
            trace,
        } => {
            let model = load_model(&common.model)?;
            let sample = need_sample(&model, &common.sample)?;
            let sched = match schedule {
                Some(p) => Some(DeltaSchedule::new(read_schedule(&p)?, a)?),
                None => None,
            };
            let margin = margin.unwrap_or_else(|| default_epsilon(&model));
            let res = level_set_sandwich(&model, &sample, kappa, a, delta, common.seed, sched.as_ref(), margin)?;
            if let Some(p) = trace {
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(["j", "delta_j", "t_j", "subset_size"])?;
                for iv in &res.trace.intervals {
                    w.write_record([
                        iv.j.to_string(),
                        format!("{}", iv.upper),
                        format!("{}", iv.value),
                        iv.subset_size.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            emit_json(&res, &common.out)
        }
        Command::Complexity { common, differences } => {
            let model = load_model(&common.model)?;
            let sample = need_sample(&model, &common.sample)?;
            let all: Vec<usize> = (0..model.policies().len()).collect();
            let draw = RademacherDraw::from_seed(sample.n(), common.seed);
            let est = hlb_complexity(&model, &sample, &all, &draw, differences)?;
            emit_json(&est, &common.out)
        }
        Command::Build { config, sample, out } => {
            let mut doc: ModelDocument = read_json(&config)?;
            if let ModelSpec::Sdc { config, tau_hat } = &mut doc.spec {
                if let Some(p) = &sample {
                    // Any margin builds the support needed to read the sample.
                    let probe = policybound::models::build_sdc_with_tau(config, 0.5)?.model;
                    let measure = WeightedMeasure::empirical(probe.support(), &read_sample(&probe, p)?)?;
                    let built = build_sdc(config, &measure)?;
                    for c in &built.incoherent_cells {
                        eprintln!("warning: no equilibrium at {c}");
                    }
                    if built.incoherent_count > built.incoherent_cells.len() {
                        eprintln!(
                            "warning: {} more cells without equilibrium",
                            built.incoherent_count - built.incoherent_cells.len()
                        );
                    }
                    *tau_hat = Some(built.tau_hat);
                }
            }
            let model = doc.build()?;
            let report = validate_model(&model);
            if !report.passed {
                return Err(Error::InvalidModel(report.violations.join("; ")));
            }
            doc.spec_version = policybound::SPEC_VERSION.into();
            let mut w = sink(&out)?;
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
            Ok(())
        }
        Command::Simulate { truth, n, seed, out } => {
            let truth: Truth = read_json(&truth)?;
            let model = truth.build_model()?;
            let sample = simulate_dgp(&truth, n, seed)?;
            write_sample(&model, &sample, sink(&out)?)
        }
        Command::Oracle { common, weights, format } => {
            let model = load_model(&common.model)?;
            let measure = measure_from(&model, &common.sample, &weights)?;
            let values = oracle_curve(&model, &measure, &OracleOptions::default())?;
            match format {
                Format::Json => emit_json(&serde_json::json!({ "policies": values }), &common.out),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(sink(&common.out)?);
                    w.write_record(["gamma_id", "lb", "ub", "feasible"])?;
                    for v in &values {
                        w.write_record([v.gamma_id.clone(), format!("{}", v.lb), format!("{}", v.ub), v.feasible.to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                }
            }
        }
        Command::Experiment {
            truth,
            kind,
            n,
            reps,
            kappa,
            a,
            epsilon,
            seed,
            out,
        } => {
            let truth: Truth = read_json(&truth)?;
            let opts = ExperimentOptions {
                a,
                epsilon,
                margin: None,
            };
            emit_json(&run_coverage_experiment(kind, &truth, &n, reps, kappa, seed, &opts)?, &out)
        }
        Command::Validate { model, out } => {
            let doc: ModelDocument = read_json(&model)?;
            emit_json(&validate_model(&doc.build()?), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
