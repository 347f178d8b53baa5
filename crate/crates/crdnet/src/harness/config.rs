//! Plain-text key=value experiment configuration.
//!
//! Top-level keys (one per line, `#` starts a comment):
//!
//! ```text
//! preset = small            # small | large
//! placement = 1GRU,1DNN     # adaptive slot placement, or "none"
//! strategy = cl             # fs | bn | cl | ml | cl_ml
//! seed = 42                 # training seed
//! data_seed = 7             # dataset generation/split seed
//! epochs = 3                # target-phase epochs (FS, fine-tuning, ML)
//! pretrain_epochs = 3       # source pre-training epochs
//! batch_size = 10
//! bn_pretrain_epochs = 10   # bottleneck baseline phase-1 budget
//! bn_pretrain_batch = 10
//! pretrain_checkpoint = runs/cl/model_pretrain.crdm   # optional phase-1 reuse
//! metrics_eval_cap = 64     # held-out utterances per metric row (0 = all)
//! alpha = 0.01
//! learning_rate = 0.001
//! beta1 = 0.9
//! beta2 = 0.98
//! clip_lo = -1.0
//! clip_hi = 1.0
//! apl_units = 5
//! utterances = 400          # per language; split 3:1 into train/test
//! beam_width = 10
//! audio = false             # synthesize audio and run the log-Mel front end
//! out_dir = runs/demo
//! ```
//!
//! Each language is declared by dotted keys, in file order:
//!
//! ```text
//! lang.src_a.role = source          # source | target
//! lang.src_a.vocab_size = 12
//! lang.src_a.seed = 101             # its own family (or perturbation) seed
//! lang.src_a.parent_seed = 900      # optional: parent prototype family
//! lang.src_a.perturb_std = 0.12     # with parent_seed: relatedness scale
//! lang.src_a.noise_std = 0.35
//! lang.src_a.frames_per_token = 2..3
//! lang.src_a.utterance_length = 2..5
//! ```

use super::{HarnessError, MicroLanguageSpec, Relatedness};
use crate::model::{Placement, Preset};
use crate::training::{Strategy, TrainingConfig};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone)]
pub struct LanguageRole {
    pub spec: MicroLanguageSpec,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub placement: Placement,
    pub strategy: Strategy,
    pub languages: Vec<LanguageRole>,
    /// Utterances generated per language; split 3:1 into train/test.
    pub utterances_per_language: usize,
    pub apl_units: usize,
    pub audio_mode: bool,
    pub beam_width: usize,
    pub pretrain_epochs: usize,
    /// The bottleneck baseline pre-trains with its own budget: the extra
    /// narrow layer under the uniform 1/sqrt(fan_in) init makes its
    /// CTC warm-up much slower, so it gets more (smaller) steps.
    pub bn_pretrain_epochs: usize,
    pub bn_pretrain_batch: usize,
    /// Reuse an existing compatible pre-trained checkpoint for the CL /
    /// CL&ML phase 1 instead of training it again.
    pub pretrain_checkpoint: Option<PathBuf>,
    /// Per-epoch metric rows evaluate at most this many held-out utterances
    /// (0 = the whole split). Final summary TERs always use the full split.
    pub metrics_eval_cap: usize,
    pub data_seed: u64,
    pub training: TrainingConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn sources(&self) -> Vec<&LanguageRole> {
        self.languages.iter().filter(|l| l.role == Role::Source).collect()
    }

    pub fn targets(&self) -> Vec<&LanguageRole> {
        self.languages.iter().filter(|l| l.role == Role::Target).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.languages.is_empty() {
            return Err(HarnessError::BadConfig("no languages declared".into()));
        }
        let mut names = std::collections::HashSet::new();
        for lang in &self.languages {
            lang.spec.validate()?;
            if !names.insert(lang.spec.name.clone()) {
                return Err(HarnessError::BadConfig(format!(
                    "language {:?} declared twice",
                    lang.spec.name
                )));
            }
        }
        if self.utterances_per_language < 4 {
            return Err(HarnessError::BadConfig(
                "utterances must be at least 4 for a 3:1 split".into(),
            ));
        }
        if self.targets().is_empty() {
            return Err(HarnessError::BadConfig("at least one target language".into()));
        }
        match self.strategy {
            Strategy::FromScratch => {}
            _ => {
                if self.sources().is_empty() {
                    return Err(HarnessError::BadConfig(format!(
                        "strategy {} needs at least one source language",
                        self.strategy.label()
                    )));
                }
            }
        }
        self.training
            .validate()
            .map_err(|e| HarnessError::BadConfig(e.to_string()))?;
        Ok(())
    }

    /// Parses the documented key=value format.
    pub fn parse_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = default_suite_config(PathBuf::from("runs/experiment"));
        cfg.languages.clear();

        let mut lang_order: Vec<String> = Vec::new();
        let mut lang_kv: std::collections::HashMap<String, Vec<(String, String)>> =
            std::collections::HashMap::new();

        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::BadConfig(format!("line {}: expected key = value", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if let Some(rest) = key.strip_prefix("lang.") {
                let (name, field) = rest.split_once('.').ok_or_else(|| {
                    HarnessError::BadConfig(format!(
                        "line {}: language keys look like lang.<name>.<field>",
                        line_no + 1
                    ))
                })?;
                if !lang_kv.contains_key(name) {
                    lang_order.push(name.to_string());
                    lang_kv.insert(name.to_string(), Vec::new());
                }
                lang_kv
                    .get_mut(name)
                    .expect("inserted above")
                    .push((field.to_string(), value.to_string()));
                continue;
            }
            apply_top_level(&mut cfg, key, value)
                .map_err(|msg| HarnessError::BadConfig(format!("line {}: {msg}", line_no + 1)))?;
        }

        for name in lang_order {
            let fields = lang_kv.remove(&name).expect("collected");
            cfg.languages.push(parse_language(&name, &fields)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }
}

fn apply_top_level(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number {v:?}"));
    let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| format!("bad count {v:?}"));
    let parse_u64 = |v: &str| v.parse::<u64>().map_err(|_| format!("bad seed {v:?}"));
    let parse_bool = |v: &str| match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("bad boolean {other:?}")),
    };
    match key {
        "preset" => {
            cfg.preset = Preset::parse(value).ok_or_else(|| format!("unknown preset {value:?}"))?;
        }
        "placement" => {
            cfg.placement = Placement::parse(value).map_err(|e| e.to_string())?;
        }
        "strategy" => {
            cfg.strategy = Strategy::parse(value)
                .ok_or_else(|| format!("unknown strategy {value:?}"))?;
            cfg.training.strategy = cfg.strategy;
        }
        "seed" => cfg.training.seed = parse_u64(value)?,
        "data_seed" => cfg.data_seed = parse_u64(value)?,
        "epochs" => cfg.training.epochs = parse_usize(value)?,
        "pretrain_epochs" => cfg.pretrain_epochs = parse_usize(value)?,
        "bn_pretrain_epochs" => cfg.bn_pretrain_epochs = parse_usize(value)?,
        "bn_pretrain_batch" => cfg.bn_pretrain_batch = parse_usize(value)?,
        "pretrain_checkpoint" => cfg.pretrain_checkpoint = Some(PathBuf::from(value)),
        "metrics_eval_cap" => cfg.metrics_eval_cap = parse_usize(value)?,
        "batch_size" => cfg.training.batch_size = parse_usize(value)?,
        "alpha" => cfg.training.alpha = parse_f64(value)?,
        "learning_rate" => cfg.training.learning_rate = parse_f64(value)?,
        "beta1" => cfg.training.beta1 = parse_f64(value)?,
        "beta2" => cfg.training.beta2 = parse_f64(value)?,
        "clip_lo" => cfg.training.clip_lo = parse_f64(value)?,
        "clip_hi" => cfg.training.clip_hi = parse_f64(value)?,
        "apl_units" => cfg.apl_units = parse_usize(value)?,
        "utterances" => cfg.utterances_per_language = parse_usize(value)?,
        "beam_width" => cfg.beam_width = parse_usize(value)?,
        "audio" => cfg.audio_mode = parse_bool(value)?,
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

fn parse_range(value: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| format!("expected min..max, got {value:?}"))?;
    let lo = lo.trim().parse::<usize>().map_err(|_| format!("bad range {value:?}"))?;
    let hi = hi.trim().parse::<usize>().map_err(|_| format!("bad range {value:?}"))?;
    Ok((lo, hi))
}

fn parse_language(name: &str, fields: &[(String, String)]) -> Result<LanguageRole, HarnessError> {
    let mut role = None;
    let mut spec = MicroLanguageSpec {
        name: name.to_string(),
        vocab_size: 10,
        family_seed: 0,
        relatedness: None,
        frames_per_token: (2, 3),
        noise_std: 0.3,
        utterance_length: (2, 5),
    };
    let mut parent_seed: Option<u64> = None;
    let mut perturb_std: Option<f64> = None;
    for (field, value) in fields {
        let err = |msg: String| HarnessError::BadConfig(format!("lang.{name}.{field}: {msg}"));
        match field.as_str() {
            "role" => {
                role = Some(match value.as_str() {
                    "source" => Role::Source,
                    "target" => Role::Target,
                    other => return Err(err(format!("unknown role {other:?}"))),
                });
            }
            "vocab_size" => {
                spec.vocab_size = value.parse().map_err(|_| err(format!("bad count {value:?}")))?;
            }
            "seed" => {
                spec.family_seed = value.parse().map_err(|_| err(format!("bad seed {value:?}")))?;
            }
            "parent_seed" => {
                parent_seed =
                    Some(value.parse().map_err(|_| err(format!("bad seed {value:?}")))?);
            }
            "perturb_std" => {
                perturb_std =
                    Some(value.parse().map_err(|_| err(format!("bad number {value:?}")))?);
            }
            "noise_std" => {
                spec.noise_std = value.parse().map_err(|_| err(format!("bad number {value:?}")))?;
            }
            "frames_per_token" => {
                spec.frames_per_token = parse_range(value).map_err(err)?;
            }
            "utterance_length" => {
                spec.utterance_length = parse_range(value).map_err(err)?;
            }
            other => return Err(err(format!("unknown field {other:?}"))),
        }
    }
    if let Some(parent) = parent_seed {
        spec.relatedness = Some(Relatedness {
            parent_seed: parent,
            perturb_std: perturb_std.unwrap_or(0.1),
        });
    } else if perturb_std.is_some() {
        return Err(HarnessError::BadConfig(format!(
            "lang.{name}: perturb_std requires parent_seed"
        )));
    }
    let role = role.ok_or_else(|| {
        HarnessError::BadConfig(format!("lang.{name}: missing role (source|target)"))
    })?;
    Ok(LanguageRole { spec, role })
}

/// The default desk-scale suite: three related source languages, one
/// related target, one unrelated target; 400 utterances per language split
/// 3:1.
pub fn default_suite_config(out_dir: PathBuf) -> ExperimentConfig {
    let parent = 1000u64;
    let related = |name: &str, seed: u64, role: Role| LanguageRole {
        spec: MicroLanguageSpec {
            name: name.to_string(),
            vocab_size: 12,
            family_seed: seed,
            relatedness: Some(Relatedness {
                parent_seed: parent,
                perturb_std: 0.12,
            }),
            frames_per_token: (2, 3),
            noise_std: 0.35,
            utterance_length: (2, 4),
        },
        role,
    };
    let unrelated_target = LanguageRole {
        spec: MicroLanguageSpec {
            name: "tgt_far".to_string(),
            vocab_size: 12,
            family_seed: 2000,
            relatedness: None,
            frames_per_token: (2, 3),
            noise_std: 0.35,
            utterance_length: (2, 4),
        },
        role: Role::Target,
    };
    let mut training = TrainingConfig::new(Strategy::Combined, 42);
    training.epochs = 3;
    ExperimentConfig {
        preset: Preset::Small,
        placement: Preset::Small.default_placement(),
        strategy: Strategy::Combined,
        languages: vec![
            related("src_a", 1, Role::Source),
            related("src_b", 2, Role::Source),
            related("src_c", 3, Role::Source),
            related("tgt_rel", 4, Role::Target),
            unrelated_target,
        ],
        utterances_per_language: 400,
        apl_units: 5,
        audio_mode: false,
        beam_width: 10,
        pretrain_epochs: 3,
        bn_pretrain_epochs: 10,
        bn_pretrain_batch: 10,
        pretrain_checkpoint: None,
        metrics_eval_cap: 64,
        data_seed: 7,
        training,
        out_dir,
    }
}
