//! Loss composition, the optimizer, and the five training strategies:
//! from-scratch (FS), bottleneck transfer (BN), cross-lingual activation
//! replacement (CL), multilingual joint training (ML), and the CL&ML
//! combination.
//!
//! The multilingual objective sums per-language CTC losses plus
//! `alpha * trace_norm(lambda_n)` per adaptive layer, where `lambda_n`
//! stacks every language's coefficient vector; minimizing the trace norm
//! pushes the stack toward low rank and therefore toward shared structure
//! across languages.

mod adam;
mod loops;
mod strategies;

pub use adam::{adam_step, AdamState, ADAM_EPSILON};
pub use loops::{
    batch_gradients, batch_gradients_serial, evaluate, DecodeMode, EvalSummary, TrainableSet,
};
pub use strategies::{
    finetune_cross_lingual, pretrain_sources, train_bottleneck_baseline, train_combined,
    train_cross_lingual, train_from_scratch, train_multilingual, LanguageData,
};

use crate::ctc::CtcError;
use crate::model::{CrdModel, ModelError, SlotRef};
use crate::numeric::{gram_singular_values, svd_small, Matrix, NumericError};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

/// Threshold below which a singular value contributes nothing to the
/// trace-norm subgradient.
pub const SUBGRADIENT_SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("parameter/gradient/state length mismatch: {params}/{grads}/{state}")]
    ShapeMismatch {
        params: usize,
        grads: usize,
        state: usize,
    },
    #[error("dataset for language {0:?} is empty")]
    EmptyDataset(String),
    #[error("no source languages given")]
    NoSources,
    #[error("model has no bottleneck layer")]
    NoBottleneck,
    #[error("frozen parameters changed during epoch {epoch}")]
    FrozenParametersChanged { epoch: usize },
    #[error("language {language:?} is missing an activation in slot {slot}")]
    MissingActivation { language: String, slot: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The five training strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FromScratch,
    Bottleneck,
    CrossLingual,
    Multilingual,
    Combined,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::FromScratch => "fs",
            Strategy::Bottleneck => "bn",
            Strategy::CrossLingual => "cl",
            Strategy::Multilingual => "ml",
            Strategy::Combined => "cl_ml",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fs" | "from-scratch" | "from_scratch" => Some(Strategy::FromScratch),
            "bn" | "bottleneck" => Some(Strategy::Bottleneck),
            "cl" | "cross-lingual" | "cross_lingual" => Some(Strategy::CrossLingual),
            "ml" | "multilingual" => Some(Strategy::Multilingual),
            "cl_ml" | "clml" | "cl&ml" | "combined" => Some(Strategy::Combined),
            _ => None,
        }
    }

    pub fn all() -> [Strategy; 5] {
        [
            Strategy::FromScratch,
            Strategy::Bottleneck,
            Strategy::CrossLingual,
            Strategy::Multilingual,
            Strategy::Combined,
        ]
    }
}

/// Hyperparameters for one training phase.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub strategy: Strategy,
    /// Weight of the trace-norm relatedness term.
    pub alpha: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingConfig {
    /// Defaults: Adam at 0.001 with betas (0.9, 0.98), gradients clipped to
    /// [-1, 1], alpha 0.01.
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        TrainingConfig {
            strategy,
            alpha: 0.01,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.98,
            clip_lo: -1.0,
            clip_hi: 1.0,
            epochs: 4,
            batch_size: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(TrainError::BadConfig(msg.to_string()))
            }
        };
        check(self.beta1 > 0.0 && self.beta1 < 1.0, "beta1 must be in (0,1)")?;
        check(self.beta2 > 0.0 && self.beta2 < 1.0, "beta2 must be in (0,1)")?;
        check(self.clip_lo < self.clip_hi, "clip_lo must be below clip_hi")?;
        check(self.alpha >= 0.0, "alpha must be nonnegative")?;
        check(self.learning_rate > 0.0, "learning rate must be positive")?;
        check(self.epochs > 0, "epochs must be positive")?;
        check(self.batch_size > 0, "batch size must be positive")?;
        Ok(())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Nuclear norm: the sum of singular values. Falls back to the Gram-matrix
/// eigenvalue route if the Jacobi iteration fails to converge.
pub fn trace_norm(lambda_matrix: &Matrix) -> Result<f64, TrainError> {
    match svd_small(lambda_matrix) {
        Ok(svd) => Ok(svd.singular_values.iter().sum()),
        Err(NumericError::SvdNonConvergence { .. }) => {
            Ok(gram_singular_values(lambda_matrix)?.iter().sum())
        }
        Err(e) => Err(e.into()),
    }
}

/// A subgradient of the nuclear norm: `U V^T` over singular directions with
/// sigma above the floor; zero directions contribute zero.
pub fn trace_norm_subgradient(lambda_matrix: &Matrix) -> Result<Matrix, TrainError> {
    let svd = svd_small(lambda_matrix)?;
    let mut out = Matrix::zeros(lambda_matrix.rows(), lambda_matrix.cols());
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= SUBGRADIENT_SIGMA_FLOOR {
            continue;
        }
        for i in 0..out.rows() {
            let ui = svd.u.get(i, k);
            for j in 0..out.cols() {
                let v = out.get(i, j) + ui * svd.v.get(j, k);
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}

/// Sum of trace norms of the stacked coefficient matrices, one per
/// adaptive layer.
pub fn total_trace_norm(model: &CrdModel) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for slot_ref in model.adaptive_slots() {
        if let Some(stack) = model.stacked_lambda(slot_ref) {
            total += trace_norm(&stack)?;
        }
    }
    Ok(total)
}

/// The multilingual objective: sum of per-language CTC losses plus
/// `alpha` times the total trace norm over adaptive layers.
pub fn multilingual_loss(
    ctc_losses: &BTreeMap<String, f64>,
    model: &CrdModel,
    alpha: f64,
) -> Result<f64, TrainError> {
    for name in ctc_losses.keys() {
        model.language_index(name)?;
    }
    for slot_ref in model.adaptive_slots() {
        if let crate::activations::ActivationSlot::Adaptive { per_language } =
            model.slot(slot_ref)
        {
            if per_language.len() != model.languages.len() {
                let missing = model.languages[per_language.len()].name.clone();
                return Err(TrainError::MissingActivation {
                    language: missing,
                    slot: SlotRef::label(&slot_ref),
                });
            }
        }
    }
    let base: f64 = ctc_losses.values().sum();
    Ok(base + alpha * total_trace_norm(model)?)
}

/// One evaluation record: written as tab-separated
/// epoch, language, split, ctc_loss, trace_norm_total, ter.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub language: String,
    pub split: String,
    pub ctc_loss: f64,
    pub trace_norm_total: f64,
    pub ter: f64,
}

impl MetricRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.language, self.split, self.ctc_loss, self.trace_norm_total, self.ter
        )
    }
}

/// Outcome of one training phase.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    /// Hash of the frozen parameter block after every epoch (first entry is
    /// the pre-training hash); empty when nothing is frozen.
    pub frozen_hashes: Vec<String>,
}

impl TrainReport {
    pub fn merge(mut self, other: TrainReport) -> TrainReport {
        self.metrics.extend(other.metrics);
        self.frozen_hashes.extend(other.frozen_hashes);
        self
    }
}

pub fn write_metrics(path: &std::path::Path, rows: &[MetricRow]) -> Result<(), TrainError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        writeln!(file, "{}", row.to_tsv())?;
    }
    Ok(())
}
