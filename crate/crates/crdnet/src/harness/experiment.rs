//! Experiment orchestration: dataset preparation, strategy dispatch,
//! held-out evaluation, and the machine-readable summary/metrics outputs.
//!
//! Summaries are line-oriented `key = value` records so runs can be
//! compared with plain diff. A summary is written with `status =
//! incomplete` before training starts and rewritten with `status =
//! complete` at the end; an aborted run therefore leaves a flagged file
//! behind.

use super::config::{ExperimentConfig, Role};
use super::{generate_micro_language, generate_micro_language_audio, Dataset, HarnessError};
use crate::activations::AplActivation;
use crate::model::{CrdModel, Placement, SlotRef};
use crate::training::{
    evaluate, finetune_cross_lingual, pretrain_sources, train_bottleneck_baseline,
    train_from_scratch, train_multilingual, write_metrics, DecodeMode, LanguageData, MetricRow,
    Strategy, TrainReport,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Machine-readable outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub strategy: Strategy,
    pub placement: Placement,
    /// Final beam-search TER per language on the held-out split.
    pub ter: BTreeMap<String, f64>,
    /// Total trace norm after each epoch of the final training phase.
    pub trace_norm_trajectory: Vec<f64>,
    pub metrics: Vec<MetricRow>,
    pub summary_path: PathBuf,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

fn stage<T, E: std::fmt::Display>(name: &'static str, r: Result<T, E>) -> Result<T, HarnessError> {
    r.map_err(|e| HarnessError::Stage {
        stage: name,
        message: e.to_string(),
    })
}

struct PreparedLanguage {
    role: Role,
    train: Dataset,
    test: Dataset,
}

impl PreparedLanguage {
    fn data(&self, eval_cap: usize) -> LanguageData<'_> {
        let eval = if eval_cap == 0 {
            &self.test.utterances[..]
        } else {
            &self.test.utterances[..eval_cap.min(self.test.utterances.len())]
        };
        LanguageData::new(&self.train.language, &self.train.utterances, eval)
    }

    fn name(&self) -> &str {
        &self.train.language.name
    }
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<Vec<PreparedLanguage>, HarnessError> {
    cfg.languages
        .iter()
        .map(|lang| {
            let dataset = if cfg.audio_mode {
                generate_micro_language_audio(
                    &lang.spec,
                    cfg.utterances_per_language,
                    cfg.data_seed,
                )?
            } else {
                generate_micro_language(&lang.spec, cfg.utterances_per_language, cfg.data_seed)?
            };
            let (train, test) = dataset.split(cfg.data_seed);
            Ok(PreparedLanguage {
                role: lang.role,
                train,
                test,
            })
        })
        .collect()
}

/// Trace-norm value after each epoch, taken from one phase's metric rows.
/// Loads a reusable phase-1 checkpoint and verifies it matches the
/// configuration and source language set.
fn load_compatible_pretrain(
    path: &Path,
    cfg: &ExperimentConfig,
    source_names: &[&str],
) -> Result<CrdModel, HarnessError> {
    let model = CrdModel::load(path)?;
    let names: Vec<&str> = model.languages.iter().map(|l| l.name.as_str()).collect();
    let compatible = model.preset == cfg.preset
        && model.placement == cfg.placement
        && model.apl_units == cfg.apl_units
        && model.bottleneck_index.is_none()
        && names == source_names;
    if !compatible {
        return Err(HarnessError::BadConfig(format!(
            "pretrain checkpoint {} does not match the experiment configuration",
            path.display()
        )));
    }
    Ok(model)
}

fn trajectory(report: &TrainReport) -> Vec<f64> {
    let mut out = Vec::new();
    let mut seen = 0usize;
    for row in &report.metrics {
        if row.epoch > seen {
            out.push(row.trace_norm_total);
            seen = row.epoch;
        }
    }
    out
}

/// Runs one experiment (one strategy over the configured language set).
/// Writes `metrics.tsv`, checkpoints, and `summary.txt` under the output
/// directory, and returns the parsed report. Reruns with identical
/// configuration overwrite identical outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    stage("config", cfg.validate().map_err(|e| e.to_string()))?;
    stage("setup", std::fs::create_dir_all(&cfg.out_dir))?;
    let summary_path = cfg.out_dir.join("summary.txt");
    write_summary(&summary_path, cfg, "incomplete", &BTreeMap::new(), &[], &BTreeMap::new())?;

    let prepared = stage("data", prepare_data(cfg))?;
    let sources: Vec<&PreparedLanguage> =
        prepared.iter().filter(|p| p.role == Role::Source).collect();
    let targets: Vec<&PreparedLanguage> =
        prepared.iter().filter(|p| p.role == Role::Target).collect();

    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut checkpoints: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut ter: BTreeMap<String, f64> = BTreeMap::new();
    let mut final_trajectory: Vec<f64> = Vec::new();

    let pretrain_cfg = cfg
        .training
        .clone()
        .with_epochs(cfg.pretrain_epochs.max(1));
    let train_cfg = cfg.training.clone();
    let base_seed = cfg.training.seed;

    let eval_final =
        |model: &CrdModel, who: &PreparedLanguage, ter: &mut BTreeMap<String, f64>| {
            let summary = evaluate(
                model,
                who.name(),
                &who.test.utterances,
                DecodeMode::Beam(cfg.beam_width),
            )?;
            ter.insert(who.name().to_string(), summary.ter);
            Ok::<(), HarnessError>(())
        };

    match cfg.strategy {
        Strategy::FromScratch => {
            for target in &targets {
                let mut model = stage(
                    "build",
                    CrdModel::build(
                        cfg.preset,
                        cfg.placement,
                        &[target.train.language.clone()],
                        cfg.apl_units,
                        base_seed,
                    ),
                )?;
                let report = stage(
                    "train",
                    train_from_scratch(&mut model, &target.data(cfg.metrics_eval_cap), &train_cfg),
                )?;
                final_trajectory = trajectory(&report);
                metrics.extend(report.metrics);
                stage("eval", eval_final(&model, target, &mut ter))?;
                let path = cfg.out_dir.join(format!("model_{}.crdm", target.name()));
                stage("report", model.save(&path))?;
                checkpoints.insert(target.name().to_string(), path);
            }
        }
        Strategy::Bottleneck => {
            let langs: Vec<_> = sources.iter().map(|s| s.train.language.clone()).collect();
            let mut base = stage(
                "build",
                CrdModel::build(cfg.preset, Placement::none(), &langs, cfg.apl_units, base_seed),
            )?;
            stage(
                "build",
                base.insert_bottleneck(crate::model::BOTTLENECK_DIM, base_seed ^ 0xb0),
            )?;
            let source_data: Vec<LanguageData> = sources.iter().map(|s| s.data(cfg.metrics_eval_cap)).collect();
            let mut bn_pretrain_cfg = cfg
                .training
                .clone()
                .with_epochs(cfg.bn_pretrain_epochs.max(1));
            bn_pretrain_cfg.batch_size = cfg.bn_pretrain_batch.max(1);
            let report = stage(
                "train",
                pretrain_sources(&mut base, &source_data, &bn_pretrain_cfg),
            )?;
            metrics.extend(report.metrics);
            let pre_path = cfg.out_dir.join("model_pretrain.crdm");
            stage("report", base.save(&pre_path))?;
            checkpoints.insert("pretrain".to_string(), pre_path);

            for target in &targets {
                let mut model = base.clone();
                stage(
                    "train",
                    model.register_language(
                        sources[0].name(),
                        target.train.language.clone(),
                        base_seed ^ super::name_hash(target.name()),
                    ),
                )?;
                let report = stage(
                    "train",
                    train_bottleneck_baseline(&mut model, &target.data(cfg.metrics_eval_cap), &train_cfg, false),
                )?;
                final_trajectory = trajectory(&report);
                metrics.extend(report.metrics);
                stage("eval", eval_final(&model, target, &mut ter))?;
                let path = cfg.out_dir.join(format!("model_{}.crdm", target.name()));
                stage("report", model.save(&path))?;
                checkpoints.insert(target.name().to_string(), path);
            }
        }
        Strategy::CrossLingual => {
            let source_names: Vec<&str> = sources.iter().map(|s| s.name()).collect();
            let base = match &cfg.pretrain_checkpoint {
                Some(path) => stage(
                    "build",
                    load_compatible_pretrain(path, cfg, &source_names).map_err(|e| e.to_string()),
                )?,
                None => {
                    let langs: Vec<_> =
                        sources.iter().map(|s| s.train.language.clone()).collect();
                    let mut base = stage(
                        "build",
                        CrdModel::build(
                            cfg.preset,
                            cfg.placement,
                            &langs,
                            cfg.apl_units,
                            base_seed,
                        ),
                    )?;
                    let source_data: Vec<LanguageData> =
                        sources.iter().map(|s| s.data(cfg.metrics_eval_cap)).collect();
                    let report =
                        stage("train", pretrain_sources(&mut base, &source_data, &pretrain_cfg))?;
                    metrics.extend(report.metrics);
                    base
                }
            };
            let pre_path = cfg.out_dir.join("model_pretrain.crdm");
            stage("report", base.save(&pre_path))?;
            checkpoints.insert("pretrain".to_string(), pre_path);

            for target in &targets {
                let mut model = base.clone();
                stage(
                    "train",
                    model.register_language(
                        sources[0].name(),
                        target.train.language.clone(),
                        base_seed ^ super::name_hash(target.name()),
                    ),
                )?;
                let report = stage(
                    "train",
                    finetune_cross_lingual(&mut model, &target.data(cfg.metrics_eval_cap), &train_cfg),
                )?;
                final_trajectory = trajectory(&report);
                metrics.extend(report.metrics);
                stage("eval", eval_final(&model, target, &mut ter))?;
                let path = cfg.out_dir.join(format!("model_{}.crdm", target.name()));
                stage("report", model.save(&path))?;
                checkpoints.insert(target.name().to_string(), path);
            }
        }
        Strategy::Multilingual => {
            let langs: Vec<_> = prepared.iter().map(|p| p.train.language.clone()).collect();
            let mut model = stage(
                "build",
                CrdModel::build(cfg.preset, cfg.placement, &langs, cfg.apl_units, base_seed),
            )?;
            let all_data: Vec<LanguageData> = prepared.iter().map(|p| p.data(cfg.metrics_eval_cap)).collect();
            let report = stage("train", train_multilingual(&mut model, &all_data, &train_cfg))?;
            final_trajectory = trajectory(&report);
            metrics.extend(report.metrics);
            for lang in &prepared {
                stage("eval", eval_final(&model, lang, &mut ter))?;
            }
            let path = cfg.out_dir.join("model_joint.crdm");
            stage("report", model.save(&path))?;
            checkpoints.insert("joint".to_string(), path);
        }
        Strategy::Combined => {
            let source_names: Vec<&str> = sources.iter().map(|s| s.name()).collect();
            let mut model = match &cfg.pretrain_checkpoint {
                Some(path) => stage(
                    "build",
                    load_compatible_pretrain(path, cfg, &source_names).map_err(|e| e.to_string()),
                )?,
                None => {
                    let langs: Vec<_> =
                        sources.iter().map(|s| s.train.language.clone()).collect();
                    let mut model = stage(
                        "build",
                        CrdModel::build(
                            cfg.preset,
                            cfg.placement,
                            &langs,
                            cfg.apl_units,
                            base_seed,
                        ),
                    )?;
                    let source_data: Vec<LanguageData> =
                        sources.iter().map(|s| s.data(cfg.metrics_eval_cap)).collect();
                    let report =
                        stage("train", pretrain_sources(&mut model, &source_data, &pretrain_cfg))?;
                    metrics.extend(report.metrics);
                    model
                }
            };
            let pre_path = cfg.out_dir.join("model_pretrain.crdm");
            stage("report", model.save(&pre_path))?;
            checkpoints.insert("pretrain".to_string(), pre_path);

            for target in &targets {
                stage(
                    "train",
                    model.register_language(
                        sources[0].name(),
                        target.train.language.clone(),
                        base_seed ^ super::name_hash(target.name()),
                    ),
                )?;
            }
            let all_data: Vec<LanguageData> = prepared.iter().map(|p| p.data(cfg.metrics_eval_cap)).collect();
            let report = stage("train", train_multilingual(&mut model, &all_data, &train_cfg))?;
            final_trajectory = trajectory(&report);
            metrics.extend(report.metrics);
            for lang in &prepared {
                stage("eval", eval_final(&model, lang, &mut ter))?;
            }
            let path = cfg.out_dir.join("model_joint.crdm");
            stage("report", model.save(&path))?;
            checkpoints.insert("joint".to_string(), path);
        }
    }

    stage(
        "report",
        write_metrics(&cfg.out_dir.join("metrics.tsv"), &metrics).map_err(|e| e.to_string()),
    )?;
    write_summary(
        &summary_path,
        cfg,
        "complete",
        &ter,
        &final_trajectory,
        &checkpoints,
    )?;

    Ok(ExperimentReport {
        strategy: cfg.strategy,
        placement: cfg.placement,
        ter,
        trace_norm_trajectory: final_trajectory,
        metrics,
        summary_path,
        checkpoints,
    })
}

/// Runs all five strategies on identical data seeds; one summary each under
/// `<out_dir>/<strategy>/`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>, HarnessError> {
    let mut cl_pretrain: Option<PathBuf> = None;
    let mut reports = Vec::new();
    for strategy in Strategy::all() {
        let mut sub = cfg.clone();
        sub.strategy = strategy;
        sub.training.strategy = strategy;
        sub.out_dir = cfg.out_dir.join(strategy.label());
        if strategy == Strategy::Combined && sub.pretrain_checkpoint.is_none() {
            // CL and CL&ML share an identical phase 1 (same seed, sources,
            // and config), so the CL checkpoint is reused as a pure cache.
            sub.pretrain_checkpoint = cl_pretrain.clone();
        }
        let report = run_experiment(&sub)?;
        if strategy == Strategy::CrossLingual {
            cl_pretrain = report.checkpoints.get("pretrain").cloned();
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Runs the cross-lingual strategy once per placement; one summary each
/// under `<out_dir>/placement_<label>/`.
pub fn run_placement_sweep(
    cfg: &ExperimentConfig,
    placements: &[Placement],
) -> Result<Vec<ExperimentReport>, HarnessError> {
    placements
        .iter()
        .map(|&placement| {
            let mut sub = cfg.clone();
            sub.strategy = Strategy::CrossLingual;
            sub.training.strategy = Strategy::CrossLingual;
            sub.placement = placement;
            sub.out_dir = cfg
                .out_dir
                .join(format!("placement_{}", placement.label().replace(',', "_")));
            run_experiment(&sub)
        })
        .collect()
}

fn write_summary(
    path: &Path,
    cfg: &ExperimentConfig,
    status: &str,
    ter: &BTreeMap<String, f64>,
    trace_trajectory: &[f64],
    checkpoints: &BTreeMap<String, PathBuf>,
) -> Result<(), HarnessError> {
    let mut text = String::new();
    let _ = writeln!(text, "strategy = {}", cfg.strategy.label());
    let _ = writeln!(text, "preset = {}", cfg.preset.label());
    let _ = writeln!(text, "placement = {}", cfg.placement.label());
    let _ = writeln!(text, "train_seed = {}", cfg.training.seed);
    let _ = writeln!(text, "data_seed = {}", cfg.data_seed);
    let _ = writeln!(text, "alpha = {}", cfg.training.alpha);
    let _ = writeln!(text, "epochs = {}", cfg.training.epochs);
    let _ = writeln!(text, "pretrain_epochs = {}", cfg.pretrain_epochs);
    let _ = writeln!(text, "beam_width = {}", cfg.beam_width);
    let languages: Vec<&str> = cfg.languages.iter().map(|l| l.spec.name.as_str()).collect();
    let _ = writeln!(text, "languages = {}", languages.join(","));
    let _ = writeln!(text, "status = {status}");
    for (lang, value) in ter {
        let _ = writeln!(text, "ter.{lang} = {value:.6}");
    }
    for (i, value) in trace_trajectory.iter().enumerate() {
        let _ = writeln!(text, "trace_norm.{} = {value:.9}", i + 1);
    }
    for (label, p) in checkpoints {
        // Paths relative to the run directory keep summaries diff-friendly.
        let shown = p.strip_prefix(&cfg.out_dir).unwrap_or(p);
        let _ = writeln!(text, "checkpoint.{label} = {}", shown.display());
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(text.as_bytes())?;
    Ok(())
}

fn parse_slot_label(model: &CrdModel, label: &str) -> Result<SlotRef, HarnessError> {
    let lower = label.trim().to_ascii_lowercase();
    let slot = if let Some(idx) = lower.strip_prefix("gru") {
        idx.parse::<usize>().ok().and_then(|i| i.checked_sub(1)).map(SlotRef::Gru)
    } else if let Some(idx) = lower.strip_prefix("fc").or_else(|| lower.strip_prefix("dnn")) {
        idx.parse::<usize>().ok().and_then(|i| i.checked_sub(1)).map(SlotRef::Fc)
    } else {
        None
    };
    let slot = slot.ok_or_else(|| {
        HarnessError::BadConfig(format!(
            "cannot parse layer label {label:?}; expected gruN or fcN"
        ))
    })?;
    let exists = match slot {
        SlotRef::Gru(i) => i < model.gru.len(),
        SlotRef::Fc(i) => i < model.fc.len(),
    };
    if !exists || !model.slot(slot).is_adaptive() {
        return Err(HarnessError::BadConfig(format!(
            "layer {label:?} has no adaptive activation slot"
        )));
    }
    Ok(slot)
}

/// Evenly spaced sample grid over [lo, hi].
pub(crate) fn sample_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Writes one activation-curve TSV per language (two-line header naming the
/// layer and language, then x<TAB>F(x) rows) plus the fixed-ReLU reference
/// curve. Returns the written paths.
pub fn export_activation_curves(
    model: &CrdModel,
    layer_label: &str,
    languages: &[String],
    range: (f64, f64),
    points: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let slot_ref = parse_slot_label(model, layer_label)?;
    std::fs::create_dir_all(out_dir)?;
    let xs = sample_grid(range.0, range.1, points);
    let mut written = Vec::new();

    let write_curve = |name: &str, values: Vec<(f64, f64)>| -> Result<PathBuf, HarnessError> {
        let path = out_dir.join(format!("{}_{}.tsv", layer_label, name));
        let mut text = String::new();
        let _ = writeln!(text, "# layer: {layer_label}");
        let _ = writeln!(text, "# language: {name}");
        for (x, y) in values {
            let _ = writeln!(text, "{x:.9}\t{y:.9}");
        }
        std::fs::write(&path, text)?;
        Ok(path)
    };

    for lang in languages {
        let idx = model.language_index(lang)?;
        let act = model.activation(slot_ref, idx).ok_or_else(|| {
            HarnessError::BadConfig(format!("no activation for language {lang:?}"))
        })?;
        written.push(write_curve(lang, act.curve(&xs))?);
    }
    let relu_curve: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x.max(0.0))).collect();
    written.push(write_curve("relu", relu_curve)?);
    Ok(written)
}

/// Largest pointwise gap between two activation curves on an evenly spaced
/// grid.
pub fn max_pointwise_curve_distance(
    a: &AplActivation,
    b: &AplActivation,
    range: (f64, f64),
    points: usize,
) -> f64 {
    sample_grid(range.0, range.1, points)
        .into_iter()
        .fold(0.0, |acc, x| acc.max((a.eval(x) - b.eval(x)).abs()))
}
