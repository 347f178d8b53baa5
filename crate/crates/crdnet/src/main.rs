//! Command-line front end: dataset generation, training, evaluation,
//! decoding, activation-curve export, and the five-strategy comparison
//! suite. Exit code is zero only when the requested run completes.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crdnet::ctc::{beam_search_decode, greedy_decode};
use crdnet::features::{log_mel, read_fbnk_file, read_wav};
use crdnet::harness::{
    default_suite_config, export_activation_curves, generate_micro_language,
    generate_micro_language_audio, read_dataset, run_experiment, run_placement_sweep, run_suite,
    write_dataset, ExperimentConfig,
};
use crdnet::model::{CrdModel, Placement};
use crdnet::training::{evaluate, DecodeMode};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "crdnet",
    about = "Multilingual CTC recognition with per-language adaptive activations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key=value experiment config file; omit to use the built-in
    /// five-language suite defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset generation/split seed (overrides the config file).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Training strategy: fs | bn | cl | ml | cl_ml.
    #[arg(long)]
    strategy: Option<String>,
    /// Adaptive slot placement, e.g. "2GRU,1DNN" or "none".
    #[arg(long)]
    placement: Option<String>,
    /// Target-phase epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Source pre-training epochs.
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Trace-norm weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Synthesize audio and run the log-Mel front end instead of emitting
    /// feature-space prototypes directly.
    #[arg(long)]
    audio: bool,
}

impl ConfigArgs {
    fn resolve(&self, default_out: &str) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::parse_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => default_suite_config(PathBuf::from(default_out)),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        if let Some(seed) = self.data_seed {
            cfg.data_seed = seed;
        }
        if let Some(strategy) = &self.strategy {
            let parsed = crdnet::training::Strategy::parse(strategy)
                .with_context(|| format!("unknown strategy {strategy:?}"))?;
            cfg.strategy = parsed;
            cfg.training.strategy = parsed;
        }
        if let Some(placement) = &self.placement {
            cfg.placement = Placement::parse(placement)?;
        }
        if let Some(epochs) = self.epochs {
            cfg.training.epochs = epochs;
        }
        if let Some(epochs) = self.pretrain_epochs {
            cfg.pretrain_epochs = epochs;
        }
        if let Some(alpha) = self.alpha {
            cfg.training.alpha = alpha;
        }
        if self.audio {
            cfg.audio_mode = true;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured micro-language datasets to disk.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run one experiment with the configured strategy.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        /// Model checkpoint (.crdm).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (.mld) produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Language to evaluate (defaults to the dataset's language).
        #[arg(long)]
        language: Option<String>,
        /// Beam width; 0 selects greedy decoding.
        #[arg(long, default_value_t = 10)]
        beam: usize,
        /// Evaluate the held-out quarter of the 3:1 split instead of the
        /// whole file.
        #[arg(long)]
        test_split: Option<u64>,
    },
    /// Decode a single utterance from a feature file (or WAV).
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature file in FBNK format.
        #[arg(long, conflicts_with = "wav")]
        features: Option<PathBuf>,
        /// Mono 16-bit PCM WAV; runs the log-Mel front end first.
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        language: String,
        /// Beam width; 0 selects greedy decoding.
        #[arg(long, default_value_t = 10)]
        beam: usize,
    },
    /// Export per-language activation curves from a checkpoint.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Adaptive layer label, e.g. gru2 or fc1.
        #[arg(long)]
        layer: String,
        /// Comma-separated language names; defaults to all registered.
        #[arg(long)]
        languages: Option<String>,
        /// Sample range as lo:hi.
        #[arg(long, default_value = "-3:3")]
        range: String,
        #[arg(long, default_value_t = 601)]
        points: usize,
        #[arg(long, default_value = "curves")]
        out: PathBuf,
    },
    /// Run the five-strategy comparison on identical data seeds.
    Suite {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also sweep adaptive-slot placements (cross-lingual strategy).
        #[arg(long)]
        placement_sweep: bool,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { config } => {
            let cfg = config.resolve("runs/data")?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            for lang in &cfg.languages {
                let dataset = if cfg.audio_mode {
                    generate_micro_language_audio(
                        &lang.spec,
                        cfg.utterances_per_language,
                        cfg.data_seed,
                    )?
                } else {
                    generate_micro_language(
                        &lang.spec,
                        cfg.utterances_per_language,
                        cfg.data_seed,
                    )?
                };
                let path = cfg.out_dir.join(format!("{}.mld", lang.spec.name));
                write_dataset(&path, &dataset)?;
                println!(
                    "wrote {} ({} utterances, vocab {})",
                    path.display(),
                    dataset.utterances.len(),
                    dataset.language.vocab_size()
                );
            }
        }
        Command::Train { config } => {
            let cfg = config.resolve("runs/train")?;
            let report = run_experiment(&cfg)?;
            println!("strategy = {}", report.strategy.label());
            for (lang, ter) in &report.ter {
                println!("ter.{lang} = {ter:.4}");
            }
            println!("summary: {}", report.summary_path.display());
        }
        Command::Eval {
            checkpoint,
            data,
            language,
            beam,
            test_split,
        } => {
            let model = CrdModel::load(&checkpoint)?;
            let dataset = read_dataset(&data)?;
            let language = language.unwrap_or_else(|| dataset.language.name.clone());
            let utterances = match test_split {
                Some(seed) => dataset.split(seed).1.utterances,
                None => dataset.utterances,
            };
            let mode = if beam == 0 { DecodeMode::Greedy } else { DecodeMode::Beam(beam) };
            let summary = evaluate(&model, &language, &utterances, mode)?;
            println!("language = {language}");
            println!("utterances = {}", utterances.len());
            println!("mean_ctc_loss = {:.4}", summary.mean_loss);
            println!("ter = {:.4}", summary.ter);
        }
        Command::Decode {
            checkpoint,
            features,
            wav,
            language,
            beam,
        } => {
            let model = CrdModel::load(&checkpoint)?;
            let feats = match (features, wav) {
                (Some(path), None) => read_fbnk_file(&path, &language)?,
                (None, Some(path)) => {
                    let clip = read_wav(&path)?;
                    log_mel(&clip, &language)?
                }
                _ => bail!("exactly one of --features or --wav is required"),
            };
            let log_post = model.forward(&feats.frames, &language)?;
            let tokens = if beam == 0 {
                greedy_decode(&log_post)
            } else {
                beam_search_decode(&log_post, beam)
            };
            let lang_idx = model.language_index(&language)?;
            let vocab = &model.language(lang_idx).vocab;
            let spelled: Vec<&str> = tokens.iter().map(|&t| vocab[t].as_str()).collect();
            println!("{}", spelled.join(" "));
        }
        Command::ExportCurves {
            checkpoint,
            layer,
            languages,
            range,
            points,
            out,
        } => {
            let model = CrdModel::load(&checkpoint)?;
            let names: Vec<String> = match languages {
                Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
                None => model.languages.iter().map(|l| l.name.clone()).collect(),
            };
            let (lo, hi) = range
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
                .with_context(|| format!("bad range {range:?}; expected lo:hi"))?;
            let paths = export_activation_curves(&model, &layer, &names, (lo, hi), points, &out)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Suite {
            config,
            placement_sweep,
        } => {
            let cfg = config.resolve("runs/suite")?;
            let reports = run_suite(&cfg)?;
            println!("strategy\ttarget\tter");
            for report in &reports {
                for (lang, ter) in &report.ter {
                    println!("{}\t{}\t{:.4}", report.strategy.label(), lang, ter);
                }
            }
            if placement_sweep {
                let placements = [
                    Placement::parse("1GRU,1DNN")?,
                    Placement::parse("2GRU,1DNN")?,
                    Placement::parse("3GRU,1DNN")?,
                ];
                let mut sweep_cfg = cfg.clone();
                sweep_cfg.preset = crdnet::model::Preset::Large;
                let reports = run_placement_sweep(&sweep_cfg, &placements)?;
                for report in &reports {
                    for (lang, ter) in &report.ter {
                        println!(
                            "placement {}\t{}\t{:.4}",
                            report.placement.label(),
                            lang,
                            ter
                        );
                    }
                }
            }
        }
    }
    Ok(())
}
