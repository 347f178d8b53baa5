//! Experiment front end: synthetic micro-language generation, dataset
//! persistence, token-error-rate evaluation, experiment orchestration, and
//! activation-curve export.
//!
//! A micro-language is a set of token prototypes in 40-dimensional feature
//! space. Utterances are token sequences emitted as repeated prototype
//! frames plus Gaussian noise. Related languages share a parent prototype
//! family, differing by small per-language perturbations, which is the
//! desk-scale stand-in for genuinely related natural languages.

mod config;
mod datafile;
mod experiment;

pub use config::{default_suite_config, ExperimentConfig, LanguageRole, Role};
pub use datafile::{read_dataset, write_dataset};
pub use experiment::{
    export_activation_curves, max_pointwise_curve_distance, run_experiment, run_placement_sweep,
    run_suite, ExperimentReport,
};

use crate::ctc::{CtcError, LabelSequence};
use crate::features::{FeatureError, FeatureSequence, HOP_MS, MEL_BANDS};
use crate::model::{Language, ModelError};
use crate::numeric::Matrix;
use crate::training::TrainError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid micro-language spec: {0}")]
    BadSpec(String),
    #[error("reference and hypothesis lists differ in length: {refs} vs {hyps}")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ties a language to its parent prototype family.
#[derive(Debug, Clone, PartialEq)]
pub struct Relatedness {
    pub parent_seed: u64,
    pub perturb_std: f64,
}

/// Recipe for one synthetic micro-language.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLanguageSpec {
    pub name: String,
    /// Token count excluding the blank.
    pub vocab_size: usize,
    /// Seed of the language's own prototype family (or of its perturbation
    /// when a parent is set).
    pub family_seed: u64,
    pub relatedness: Option<Relatedness>,
    pub frames_per_token: (usize, usize),
    pub noise_std: f64,
    pub utterance_length: (usize, usize),
}

impl MicroLanguageSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::BadSpec(format!("{}: {msg}", self.name)));
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2");
        }
        if self.noise_std < 0.0 {
            return fail("noise_std must be nonnegative");
        }
        if self.frames_per_token.0 < 1 || self.frames_per_token.0 > self.frames_per_token.1 {
            return fail("frames_per_token range must satisfy 1 <= min <= max");
        }
        if self.utterance_length.0 < 1 || self.utterance_length.0 > self.utterance_length.1 {
            return fail("utterance_length range must satisfy 1 <= min <= max");
        }
        if let Some(rel) = &self.relatedness {
            if rel.perturb_std < 0.0 {
                return fail("perturb_std must be nonnegative");
            }
        }
        Ok(())
    }
}

/// One training/evaluation example.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub features: FeatureSequence,
    pub labels: LabelSequence,
}

/// A generated micro-language corpus.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub language: Language,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    /// Deterministic 3:1 train/test split: a seeded permutation of the
    /// utterances with the first three quarters taken for training.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.utterances.len()).collect();
        let mix = seed ^ name_hash(&self.language.name);
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let train_count = self.utterances.len() * 3 / 4;
        let pick = |idx: &[usize]| Dataset {
            language: self.language.clone(),
            utterances: idx.iter().map(|&i| self.utterances[i].clone()).collect(),
        };
        (pick(&order[..train_count]), pick(&order[train_count..]))
    }
}

fn name_hash(name: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn sample_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("finite std").sample(rng)
}

/// The 40-dimensional prototype of every token. Related languages draw from
/// the parent family seed and add per-language N(0, perturb_std^2) offsets.
pub fn token_prototypes(spec: &MicroLanguageSpec) -> Result<Vec<Vec<f64>>, HarnessError> {
    spec.validate()?;
    let base_seed = spec
        .relatedness
        .as_ref()
        .map(|r| r.parent_seed)
        .unwrap_or(spec.family_seed);
    let mut base_rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_mul(0x2545F4914F6CDD1D));
    let mut prototypes: Vec<Vec<f64>> = (0..spec.vocab_size)
        .map(|_| (0..MEL_BANDS).map(|_| sample_normal(&mut base_rng, 1.0)).collect())
        .collect();
    if let Some(rel) = &spec.relatedness {
        let mut child_rng =
            ChaCha8Rng::seed_from_u64(spec.family_seed.wrapping_mul(0x9E3779B97F4A7C15) ^ 0x5bd1);
        for proto in &mut prototypes {
            for value in proto.iter_mut() {
                *value += sample_normal(&mut child_rng, rel.perturb_std);
            }
        }
    }
    Ok(prototypes)
}

/// Generates `count` utterances: token sequences sampled uniformly, each
/// token emitted as a run of noisy prototype frames. Identical arguments
/// produce identical bytes.
pub fn generate_micro_language(
    spec: &MicroLanguageSpec,
    count: usize,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    if count == 0 {
        return Err(HarnessError::BadSpec("count must be at least 1".into()));
    }
    let prototypes = token_prototypes(spec)?;
    let language = Language::synthetic(&spec.name, spec.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&spec.name));

    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(spec.utterance_length.0..=spec.utterance_length.1);
        let tokens: Vec<usize> = (0..len)
            .map(|_| rng.random_range(1..=spec.vocab_size))
            .collect();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for &token in &tokens {
            let frames = rng.random_range(spec.frames_per_token.0..=spec.frames_per_token.1);
            let proto = &prototypes[token - 1];
            for _ in 0..frames {
                rows.push(
                    proto
                        .iter()
                        .map(|&p| p + sample_normal(&mut rng, spec.noise_std))
                        .collect(),
                );
            }
        }
        let frames = Matrix::from_rows(&rows).expect("uniform row widths");
        utterances.push(Utterance {
            features: FeatureSequence {
                frames,
                frame_shift: HOP_MS / 1000.0,
                language: spec.name.clone(),
            },
            labels: LabelSequence::new(tokens, spec.name.clone()),
        });
    }
    Ok(Dataset { language, utterances })
}

/// Audio-mode generation: each token becomes a pure tone whose frequency is
/// derived from the prototype family, synthesized at 8 kHz and run through
/// the log-Mel front end. Exercises the audio pipeline end to end.
pub fn generate_micro_language_audio(
    spec: &MicroLanguageSpec,
    count: usize,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    if count == 0 {
        return Err(HarnessError::BadSpec("count must be at least 1".into()));
    }
    let sample_rate = 8000u32;
    let hop = 80usize; // 10 ms
    let win = 200usize; // 25 ms

    // Tone frequencies: evenly spread over the telephone band with a small
    // seed-derived jitter per family.
    let base_seed = spec
        .relatedness
        .as_ref()
        .map(|r| r.parent_seed)
        .unwrap_or(spec.family_seed);
    let mut freq_rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_mul(0x9E3779B97F4A7C15));
    let freqs: Vec<f64> = (0..spec.vocab_size)
        .map(|k| {
            let center = 300.0 + (k as f64 + 1.0) * 3000.0 / (spec.vocab_size as f64 + 1.0);
            center + freq_rng.random_range(-15.0..15.0)
        })
        .collect();

    let language = Language::synthetic(&spec.name, spec.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&spec.name) ^ 0xa0d10);
    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(spec.utterance_length.0..=spec.utterance_length.1);
        let tokens: Vec<usize> = (0..len)
            .map(|_| rng.random_range(1..=spec.vocab_size))
            .collect();
        let mut samples = Vec::new();
        for &token in &tokens {
            let frames = rng.random_range(spec.frames_per_token.0..=spec.frames_per_token.1);
            let dur = frames * hop;
            let freq = freqs[token - 1];
            for i in 0..dur {
                let t = i as f64 / sample_rate as f64;
                let tone = 0.4 * (2.0 * std::f64::consts::PI * freq * t).sin();
                samples.push(tone + sample_normal(&mut rng, spec.noise_std * 0.05));
            }
        }
        // Tail so the last hop still fills a whole analysis window.
        samples.extend(std::iter::repeat(0.0).take(win - hop));
        let clip = crate::features::AudioClip {
            samples,
            sample_rate,
        };
        let features = crate::features::log_mel(&clip, &spec.name)?;
        utterances.push(Utterance {
            features,
            labels: LabelSequence::new(tokens, spec.name.clone()),
        });
    }
    Ok(Dataset { language, utterances })
}

/// Levenshtein distance with unit insertion/deletion/substitution costs.
fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

/// Corpus token error rate: total edit distance over total reference length.
pub fn token_error_rate(
    refs: &[LabelSequence],
    hyps: &[Vec<usize>],
) -> Result<f64, HarnessError> {
    if refs.len() != hyps.len() {
        return Err(HarnessError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let mut edits = 0usize;
    let mut total = 0usize;
    for (r, h) in refs.iter().zip(hyps) {
        edits += levenshtein(&r.tokens, h);
        total += r.tokens.len();
    }
    Ok(edits as f64 / total.max(1) as f64)
}
