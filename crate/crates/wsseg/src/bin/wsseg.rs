//! Command-line front end for the weakly supervised segmentation label
//! pipeline. Exit codes: 0 on success, 1 for validation or configuration
//! errors, 2 when per-image failures occurred (or a gradient check failed).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsseg::config::{load_overlay, PipelineConfig};
use wsseg::gradcheck;
use wsseg::manifest::PipelineManifest;
use wsseg::pipeline::{
    run_cam, run_eval, run_losses, run_pseudo, run_refine, BatchOutcome, ImageFailure,
};
use wsseg::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(
    name = "wsseg",
    about = "Weakly supervised segmentation label pipeline: CAMs, relation losses, pseudo labels, refinement, and mIoU evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize attention tensors into CAM tensors (one .wsst per image).
    Cam {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the CAM tensors.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate the combined loss per image and report JSON lines.
    Losses {
        #[arg(long)]
        manifest: PathBuf,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML overrides for weights and thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate initial pseudo-label PNGs from CAM tensors plus saliency.
    Pseudo {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding the CAM tensors written by `cam`.
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Refine predicted label maps with tags and initial pseudo labels.
    Refine {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of predicted label PNGs.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of initial pseudo-label PNGs.
        #[arg(long)]
        initial: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score predictions against ground truth with mean IoU.
    Eval {
        /// Directory of predicted label PNGs (no ignore labels).
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth label PNGs (may contain 255).
        #[arg(long)]
        gt: PathBuf,
        /// Number of foreground classes.
        #[arg(long)]
        classes: usize,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic dataset.
    Synth {
        /// Output directory for the dataset tree.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// TOML spec file; defaults are used for unset fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Convenience overrides applied after the spec file.
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        shrinkage: Option<f64>,
        #[arg(long)]
        saliency_noise: Option<f64>,
    },
    /// Verify the analytic loss gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        seed: u64,
        /// Number of randomized fixtures.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Maximum allowed per-term relative error.
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> wsseg::Result<ExitCode> {
    match command {
        Command::Cam { manifest, out, jobs } => {
            let manifest = PipelineManifest::load(manifest)?;
            let outcome = run_cam(&manifest, &out, jobs)?;
            finish_batch(outcome)
        }
        Command::Losses {
            manifest,
            out,
            config,
            jobs,
        } => {
            let manifest = PipelineManifest::load(manifest)?;
            let config = effective_config(&manifest, config.as_deref())?;
            let report = run_losses(&manifest, &config, jobs)?;
            emit(out.as_deref(), &report.to_jsonl())?;
            finish_batch(BatchOutcome {
                processed: report.records.len(),
                failures: report.failures,
            })
        }
        Command::Pseudo {
            manifest,
            cams,
            out,
            config,
            jobs,
        } => {
            let manifest = PipelineManifest::load(manifest)?;
            let config = effective_config(&manifest, config.as_deref())?;
            let outcome = run_pseudo(&manifest, &cams, &config, &out, jobs)?;
            finish_batch(outcome)
        }
        Command::Refine {
            manifest,
            pred,
            initial,
            out,
            jobs,
        } => {
            let manifest = PipelineManifest::load(manifest)?;
            let outcome = run_refine(&manifest, &pred, &initial, &out, jobs)?;
            finish_batch(outcome)
        }
        Command::Eval {
            pred,
            gt,
            classes,
            out,
        } => {
            if classes == 0 {
                return Err(wsseg::Error::Validation {
                    context: "eval".to_string(),
                    problems: vec!["classes must be at least 1".to_string()],
                });
            }
            let (report, failures) = run_eval(&pred, &gt, classes)?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            emit(out.as_deref(), &text)?;
            finish_batch(BatchOutcome {
                processed: 0,
                failures,
            })
        }
        Command::Synth {
            out,
            seed,
            spec,
            images,
            shrinkage,
            saliency_noise,
        } => {
            let mut spec = match spec {
                Some(path) => SynthSpec::load(path)?,
                None => SynthSpec::default(),
            };
            if let Some(v) = images {
                spec.images = v;
            }
            if let Some(v) = shrinkage {
                spec.shrinkage = v;
            }
            if let Some(v) = saliency_noise {
                spec.saliency_noise = v;
            }
            let dataset = synth::generate(&spec, seed, &out)?;
            println!(
                "wrote {} images under {}",
                dataset.images,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            seed,
            trials,
            tolerance,
            out,
        } => {
            let report = gradcheck::run(seed, trials, tolerance)?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            emit(out.as_deref(), &text)?;
            if report.passed {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "gradient check failed for terms: {}",
                    report.failing_terms.join(", ")
                );
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn effective_config(
    manifest: &PipelineManifest,
    overlay_path: Option<&Path>,
) -> wsseg::Result<PipelineConfig> {
    let mut config = PipelineConfig::from_manifest(manifest);
    if let Some(path) = overlay_path {
        config.apply(&load_overlay(path)?);
    }
    config.validate()?;
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> wsseg::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| wsseg::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn finish_batch(outcome: BatchOutcome) -> wsseg::Result<ExitCode> {
    if outcome.ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &outcome.failures {
            report_failure(failure);
        }
        Ok(ExitCode::from(2))
    }
}

fn report_failure(failure: &ImageFailure) {
    eprintln!(
        "{}",
        serde_json::to_string(failure).expect("failure record serializes")
    );
}
