//! `sqa` command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::calibration::{CalibrationSet, GroupBy};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::eval::{read_predictions, render_predictions, MetricKind, ReportFormat};
use crate::io::write_atomic;
use crate::manifest::synth::{write_corpus, SynthConfig};
use crate::manifest::{load_manifest, summarize, Manifest, Provenance, Split};
use crate::model::ModelKind;
use crate::pipeline;
use crate::scores::Dimension;

/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(
    name = "sqa",
    version,
    about = "Non-intrusive speech quality assessment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute log-Mel feature files for every manifest row.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config; only `n_mels` is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Train a model on the train split, validating on val.
    Train {
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature directory from `featurize`; audio is decoded when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Training history CSV (default: `<out>.history.csv`).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Score manifest rows with a checkpoint.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Only rows of this split (train, val or test).
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Fit monotone cubic calibration maps per group.
    Calibrate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// `language` or `none`.
        #[arg(long, default_value = "language", value_parser = parse_group)]
        group: GroupBy,
        /// Comma-separated dimensions, or `all`.
        #[arg(long, default_value = "mos", value_parser = parse_dims)]
        dims: DimList,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-language PCC and RMSE tables with range rows.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Language excluded from the range row and listed first.
        #[arg(long, default_value = "ENG")]
        reference: String,
        /// Report file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "markdown", value_parser = parse_format)]
        format: ReportFormat,
        /// `pcc`, `rmse` or `both`.
        #[arg(long, default_value = "both")]
        metric: String,
        /// Only count labels of this provenance (`subjective` or `objective`).
        #[arg(long, value_parser = parse_provenance)]
        provenance: Option<Provenance>,
    },
    /// Finite-difference gradient checks of primitives and both models.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Per-language sample and condition counts of a manifest.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
        /// Also require every audio file to exist.
        #[arg(long)]
        check_audio: bool,
    },
    /// Write a SYNTHETIC corpus (tones with scripted degradations and
    /// rule-derived labels) for tests and demos.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        duration_s: f64,
        /// Comma-separated language codes, assigned round-robin.
        #[arg(long, default_value = "ENG")]
        languages: String,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0.15)]
        val_fraction: f64,
    },
}

#[derive(Clone, Debug)]
struct DimList(Vec<Dimension>);

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn parse_group(s: &str) -> Result<GroupBy, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_provenance(s: &str) -> Result<Provenance, String> {
    s.parse()
}

fn parse_dims(s: &str) -> Result<DimList, String> {
    if s == "all" {
        return Ok(DimList(Dimension::ALL.to_vec()));
    }
    s.split(',')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .map(DimList)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg.with_env_seed()?)
}

fn load(path: &Path) -> Result<Manifest> {
    load_manifest(path).with_context(|| format!("manifest {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Featurize {
            manifest,
            out,
            config,
            jobs,
        } => {
            let cfg = load_config(config.as_deref())?;
            let m = load(&manifest)?;
            let n = pipeline::with_jobs(jobs, || pipeline::featurize(&m, &out, cfg.n_mels))??;
            eprintln!("wrote {n} feature files to {}", out.display());
        }
        Command::Train {
            model,
            config,
            manifest,
            out,
            features,
            history,
            jobs,
        } => {
            let cfg = load_config(config.as_deref())?;
            let m = load(&manifest)?;
            let result = pipeline::with_jobs(jobs, || pipeline::train(model, &cfg, &m, features))??;
            let history_path = history.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".history.csv");
                PathBuf::from(p)
            });
            write(&history_path, &result.history.to_csv())?;
            result.checkpoint.save(&out)?;
            eprintln!(
                "trained {model} for {} epochs (best epoch {}), checkpoint {}",
                result.history.epochs.len(),
                result.history.best_epoch,
                out.display()
            );
        }
        Command::Predict {
            ckpt,
            manifest,
            out,
            features,
            split,
            jobs,
        } => {
            let c = Checkpoint::load(&ckpt)?;
            let m = load(&manifest)?;
            let records =
                pipeline::with_jobs(jobs, || pipeline::predict(&c, &m, features, split))??;
            write(&out, &render_predictions(&records))?;
            eprintln!("wrote {} predictions to {}", records.len(), out.display());
        }
        Command::Calibrate {
            pred,
            labels,
            group,
            dims,
            out,
        } => {
            let preds = read_predictions(&pred).map_err(anyhow::Error::msg)?;
            let m = load(&labels)?;
            let set = pipeline::calibrate(&preds, &m, group, &dims.0)?;
            write(&out, &set.render())?;
            eprintln!(
                "wrote {} calibration maps to {}",
                set.maps.len(),
                out.display()
            );
        }
        Command::Evaluate {
            pred,
            labels,
            calibration,
            reference,
            out,
            format,
            metric,
            provenance,
        } => {
            let metrics: Vec<MetricKind> = match metric.as_str() {
                "both" => vec![MetricKind::Pcc, MetricKind::Rmse],
                other => vec![other.parse().map_err(anyhow::Error::msg)?],
            };
            let preds = read_predictions(&pred).map_err(anyhow::Error::msg)?;
            let m = load(&labels)?;
            let set = calibration
                .as_deref()
                .map(CalibrationSet::read)
                .transpose()?;
            let (pcc, rmse) = pipeline::evaluate_predictions(
                &preds,
                &m,
                set.as_ref().map(|s| (s, GroupBy::Language)),
                &reference,
                provenance,
            )?;
            let text = metrics
                .iter()
                .map(|k| match k {
                    MetricKind::Pcc => pcc.render(format),
                    MetricKind::Rmse => rmse.render(format),
                })
                .collect::<Vec<_>>()
                .join("\n");
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Gradcheck { config, jobs } => {
            let cfg = load_config(config.as_deref())?;
            let checks = pipeline::with_jobs(jobs, || pipeline::run_gradcheck(&cfg))??;
            let mut worst: f64 = 0.0;
            for c in &checks {
                println!(
                    "{:<40} {:>4} coords  max rel error {:.3e}",
                    c.name, c.checked, c.max_rel_error
                );
                worst = worst.max(c.max_rel_error);
            }
            println!("max relative error: {worst:.3e}");
            if !(worst < GRADCHECK_TOLERANCE) {
                bail!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
            }
        }
        Command::Summarize {
            manifest,
            check_audio,
        } => {
            let m = load(&manifest)?;
            if check_audio {
                m.validate_audio()?;
            }
            print!("{}", summarize(&m).render());
        }
        Command::Synth {
            out,
            clips,
            seed,
            duration_s,
            languages,
            train_fraction,
            val_fraction,
        } => {
            let cfg = SynthConfig {
                clips,
                seed,
                duration_s,
                languages: languages
                    .split(',')
                    .map(|l| l.trim().to_ascii_uppercase())
                    .collect(),
                train_fraction,
                val_fraction,
            };
            let m = write_corpus(&out, &cfg)?;
            eprintln!("wrote {} synthetic clips to {}", m.len(), out.display());
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
