use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transformesh::cohort::{Cohort, Split};
use transformesh::config::KeyValues;
use transformesh::experiment::Protocol;
use transformesh::pipeline;
use transformesh::training::toy_gradcheck;
use transformesh::Result;

#[derive(Parser)]
#[command(name = "transformesh", version, about = "Longitudinal mesh modeling with spiral convolutions and a masked transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn load(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::new("<defaults>"),
        };
        kv.apply_overrides(&self.overrides)?;
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort archive.
    GenerateCohort {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Build (or refresh) the template hierarchy cache of a cohort.
    BuildHierarchy {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        rebuild_hierarchy: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train a model on the cohort's training split.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        rebuild_hierarchy: bool,
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run the evaluation protocols for a trained run.
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// interpolation, extrapolation, trajectory or all.
        #[arg(long, default_value = "all")]
        protocol: String,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "best")]
        checkpoint: String,
    },
    /// Export per-vertex error heatmaps for progressors.
    Anomaly {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "best")]
        checkpoint: String,
    },
    /// Finite-difference check of the full loss on a toy problem.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateCohort { out, settings } => {
            let cohort = pipeline::generate(&out, &settings.load()?)?;
            let stats = cohort.visit_stats();
            println!(
                "wrote {} subjects to {} (mean visits {:.3}, complete {:.3})",
                cohort.subjects.len(),
                out.display(),
                stats.mean_visits,
                stats.complete_fraction
            );
        }
        Command::BuildHierarchy {
            cohort,
            rebuild_hierarchy,
            settings,
        } => {
            let kv = settings.load()?;
            kv.reject_unknown(&pipeline::train_keys())?;
            let loaded = Cohort::load(&cohort)?;
            let h = pipeline::hierarchy(&cohort, &loaded, &pipeline::model_config(&kv)?, rebuild_hierarchy)?;
            let sizes: Vec<String> = (0..h.n_levels()).map(|k| h.n_vertices(k).to_string()).collect();
            println!("levels {} key {}", sizes.join(" -> "), h.key());
        }
        Command::Train {
            cohort,
            run,
            rebuild_hierarchy,
            quiet,
            settings,
        } => {
            let report = pipeline::train(&cohort, &run, &settings.load()?, rebuild_hierarchy, &mut |e| {
                if !quiet {
                    println!("epoch {} train {:.6} val {:.6}", e.epoch, e.train_loss, e.val_loss);
                }
                Ok(())
            })?;
            println!("best epoch {} loss {:.6}", report.best_epoch, report.best_loss);
        }
        Command::Evaluate {
            cohort,
            run,
            results,
            protocol,
            split,
            checkpoint,
        } => {
            let protocols = if protocol == "all" {
                Protocol::ALL.to_vec()
            } else {
                vec![protocol.parse().map_err(|m: String| config_error("protocol", m))?]
            };
            for r in pipeline::evaluate(&cohort, &run, &results, &protocols, split, &checkpoint)? {
                println!(
                    "{}: median {:.4} mad {:.4} (x10^2) over {} subjects, {} skipped",
                    r.protocol,
                    100.0 * r.median,
                    100.0 * r.mad,
                    r.subjects.len(),
                    r.skipped.len()
                );
            }
        }
        Command::Anomaly {
            cohort,
            run,
            results,
            checkpoint,
        } => {
            let report = pipeline::anomaly(&cohort, &run, &results, &checkpoint)?;
            println!(
                "{} progressors, {:.3} with inside/outside error ratio >= 1.5",
                report.subjects.len(),
                report.fraction_at_least(1.5)
            );
        }
        Command::Gradcheck { seed, step, tolerance } => {
            let r = toy_gradcheck(seed, step)?;
            println!("checked {} entries, max relative error {:.3e}", r.checked, r.max_relative_error);
            if r.max_relative_error > tolerance {
                return Err(transformesh::Error::Validation(format!(
                    "max relative error {:.3e} exceeds {tolerance:e}",
                    r.max_relative_error
                )));
            }
        }
    }
    Ok(())
}

fn config_error(key: &str, msg: String) -> transformesh::Error {
    transformesh::Error::Config {
        file: "<command line>".into(),
        key: key.into(),
        msg,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}

