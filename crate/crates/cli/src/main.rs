//! `loadassoc`: command-line driver for the association-mining and
//! forecasting pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use loadassoc_core::association::AssociationConfig;
use loadassoc_core::clustering::AttachRule;
use loadassoc_core::features::{select_features, FeatureTable};
use loadassoc_core::pipeline::{stages, KMode, Pipeline, PipelineConfig, Stage, ROOT_ENV};
use loadassoc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "loadassoc", version, about = "Appliance association mining and day-ahead load forecasting")]
struct Cli {
    /// Pipeline config (TOML). Keys set in the file override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest metered CSV files into a dataset directory.
    Ingest {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic household from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exclude low-power channels and extract start-up/shut-down events.
    Events {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        on_threshold: Option<f64>,
        #[arg(long)]
        min_duration: Option<usize>,
        #[arg(long)]
        exclude_below: Option<f64>,
        #[arg(long)]
        peak_quantile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine the pairwise association matrix.
    Associate {
        #[arg(long)]
        events: PathBuf,
        /// Target window, seconds.
        #[arg(long)]
        te: Option<i64>,
        /// Candidate window, seconds.
        #[arg(long)]
        ts: Option<i64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral clustering of an association matrix.
    Cluster {
        #[arg(long)]
        q: PathBuf,
        /// `auto` or a fixed count.
        #[arg(long)]
        k: Option<KMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cluster index (0-based) or `smallest`.
        #[arg(long)]
        attach_excluded: Option<AttachRule>,
        /// Events directory whose exclusion list is attached to a cluster.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance-correlation table and per-target feature selection.
    Dcc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one forecaster per cluster plus the overall model.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// `dcc.csv` (selected with `--threshold`) or `selection.json`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        window_days: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Day-ahead forecasts from trained models.
    Forecast {
        #[arg(long)]
        models: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Day to forecast (repeatable). Defaults to every test day.
        #[arg(long)]
        date: Vec<NaiveDate>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score forecasts against ground truth.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run pipeline stages in order under an artifact root.
    Run {
        #[arg(long, env = ROOT_ENV, default_value = "artifacts")]
        root: PathBuf,
        #[arg(long, default_value = "ingest")]
        from: Stage,
        #[arg(long, default_value = "evaluate")]
        to: Stage,
        /// Rerun stages even when their artifacts are current.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Forecast grid step, seconds.
    #[arg(long)]
    step: Option<i64>,
    #[arg(long)]
    train_months: Option<u32>,
}

impl SplitArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.forecast.step, self.step);
        set(&mut cfg.forecast.train_months, self.train_months);
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Flags first, then the config file, then validation.
fn resolve(flags: PipelineConfig, file: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match file {
        Some(path) => flags.overlay_file(path)?,
        None => flags,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    let file = cli.config.as_deref();
    match cli.command {
        Command::Ingest { data, schema, out } => {
            resolve(cfg, file)?;
            let gaps = stages::ingest(&data, &schema, &out)?;
            print_json(&gaps);
        }
        Command::Synth { spec, out } => {
            resolve(cfg, file)?;
            stages::synth(&spec, &out)?;
        }
        Command::Events {
            input,
            on_threshold,
            min_duration,
            exclude_below,
            peak_quantile,
            out,
        } => {
            set(&mut cfg.events.on_threshold, on_threshold);
            set(&mut cfg.events.min_duration, min_duration);
            set(&mut cfg.events.exclude_below, exclude_below);
            set(&mut cfg.events.peak_quantile, peak_quantile);
            let e = resolve(cfg, file)?.events;
            let p = stages::EventParams {
                on_threshold: e.on_threshold,
                min_duration: e.min_duration,
                exclude_below: e.exclude_below,
                peak_quantile: e.peak_quantile,
            };
            let manifest = stages::events(&input, &p, &out)?;
            print_json(&manifest.exclusion);
        }
        Command::Associate { events, te, ts, out } => {
            set(&mut cfg.association.target_window, te);
            set(&mut cfg.association.candidate_window, ts);
            let a = resolve(cfg, file)?.association;
            let a = AssociationConfig::new(a.target_window, a.candidate_window)?;
            stages::associate(&events, &a, &out)?;
        }
        Command::Cluster {
            q,
            k,
            seed,
            attach_excluded,
            events,
            out,
        } => {
            set(&mut cfg.clustering.k, k);
            set(&mut cfg.clustering.seed, seed);
            set(&mut cfg.clustering.attach_excluded, attach_excluded);
            let c = resolve(cfg, file)?.clustering;
            let excluded = match events {
                Some(dir) => stages::excluded_channels(&dir)?,
                None => Vec::new(),
            };
            let result = stages::cluster(&q, c.k, c.seed, c.attach_excluded, excluded, &out)?;
            println!("k = {}", result.k);
        }
        Command::Dcc {
            input,
            clusters,
            threshold,
            split,
            out,
        } => {
            set(&mut cfg.features.threshold, threshold);
            split.apply(&mut cfg);
            let cfg = resolve(cfg, file)?;
            let (_, selection) = stages::dcc(&input, &clusters, &cfg.forecast, cfg.features.threshold, &out)?;
            print_json(&selection);
        }
        Command::Train {
            input,
            clusters,
            features,
            threshold,
            split,
            window_days,
            epochs,
            seed,
            out,
        } => {
            set(&mut cfg.features.threshold, threshold);
            split.apply(&mut cfg);
            set(&mut cfg.forecast.window_days, window_days);
            set(&mut cfg.forecast.train.max_epochs, epochs);
            set(&mut cfg.forecast.seed, seed);
            let cfg = resolve(cfg, file)?;
            let selection = if features.extension().is_some_and(|e| e == "json") {
                stages::read_selection(&features)?
            } else {
                select_features(&FeatureTable::read_csv(&features)?, cfg.features.threshold)?
            };
            let index = stages::train(&input, &clusters, &selection, &cfg.forecast, &out)?;
            print_json(&index.training);
        }
        Command::Forecast {
            models,
            input,
            date,
            out,
        } => {
            resolve(cfg, file)?;
            let dates = (!date.is_empty()).then_some(date.as_slice());
            let rows = stages::forecast(&models, &input, dates, &out)?;
            println!("{} forecast rows", rows.len());
        }
        Command::Evaluate { forecasts, truth, out } => {
            resolve(cfg, file)?;
            let report = stages::evaluate(&forecasts, &truth, &out)?;
            print_json(&report);
        }
        Command::Run { root, from, to, force } => {
            let Some(path) = file else {
                return Err(Error::Config("`run` needs --config".into()));
            };
            let pipeline = Pipeline::new(resolve(cfg, Some(path))?, root)?;
            for o in pipeline.run(from, to, force)? {
                println!("{:<10} {}", o.stage.name(), if o.skipped { "up to date" } else { "done" });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
