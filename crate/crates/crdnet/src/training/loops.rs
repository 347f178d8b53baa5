//! The inner training loop: round-robin language scheduling, data-parallel
//! per-example gradients against a frozen parameter snapshot, fixed-order
//! reduction, gradient masking for frozen blocks, and per-epoch evaluation.
//!
//! With the `parallel` feature the per-example map runs on rayon; results
//! are collected in input order and reduced sequentially, so checkpoints
//! are bit-identical with and without the feature.

use super::{adam_step, AdamState, MetricRow, TrainError, TrainReport, TrainingConfig};
use crate::ctc::{beam_search_decode, ctc_log_prob, ctc_loss, greedy_decode};
use crate::harness::{token_error_rate, Utterance};
use crate::model::{BackwardScope, BlockId, CrdModel, ModelGrads};
use crate::training::{total_trace_norm, trace_norm_subgradient};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which parameter blocks a phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableSet {
    /// Everything.
    All,
    /// Only one language's activations and head (cross-lingual fine-tuning).
    LanguageOnly(usize),
    /// FC layers strictly above the bottleneck plus one language's head.
    AboveBottleneck { bottleneck: usize, language: usize },
}

impl TrainableSet {
    pub fn allows(&self, id: &BlockId) -> bool {
        match self {
            TrainableSet::All => true,
            TrainableSet::LanguageOnly(lang) => id.language() == Some(*lang),
            TrainableSet::AboveBottleneck { bottleneck, language } => match id {
                BlockId::FcW(i) | BlockId::FcB(i) => i > bottleneck,
                BlockId::HeadW(l) | BlockId::HeadB(l) => l == language,
                _ => false,
            },
        }
    }

    pub fn backward_scope(&self) -> BackwardScope {
        match self {
            TrainableSet::All => BackwardScope::Full,
            TrainableSet::LanguageOnly(_) => BackwardScope::ActivationsAndHead,
            TrainableSet::AboveBottleneck { .. } => BackwardScope::AboveBottleneck,
        }
    }

    /// Anything frozen at all?
    pub fn freezes(&self) -> bool {
        !matches!(self, TrainableSet::All)
    }
}

type ForwardResult = Result<(crate::model::ForwardCache, crate::ctc::CtcResult), TrainError>;

fn forward_and_loss(model: &CrdModel, lang: usize, utterance: &Utterance) -> ForwardResult {
    let cache = model.forward_cached_idx(&utterance.features.frames, lang)?;
    let ctc = ctc_loss(&cache.log_post, &utterance.labels)?;
    Ok((cache, ctc))
}

/// Mean gradient and mean CTC loss over a batch, sequential reference path.
pub fn batch_gradients_serial(
    model: &CrdModel,
    lang: usize,
    batch: &[&Utterance],
    scope: BackwardScope,
) -> Result<(ModelGrads, f64), TrainError> {
    let forwards: Vec<ForwardResult> = batch
        .iter()
        .map(|utt| forward_and_loss(model, lang, utt))
        .collect();
    reduce_batch(model, scope, batch.len(), forwards)
}

/// Mean gradient and mean CTC loss over a batch. The forward and loss
/// passes run data-parallel when the `parallel` feature is enabled; the
/// backward accumulation always runs sequentially in batch order, so
/// results are bit-identical with or without the feature and across thread
/// counts.
pub fn batch_gradients(
    model: &CrdModel,
    lang: usize,
    batch: &[&Utterance],
    scope: BackwardScope,
) -> Result<(ModelGrads, f64), TrainError> {
    #[cfg(feature = "parallel")]
    {
        let forwards: Vec<ForwardResult> = batch
            .par_iter()
            .map(|utt| forward_and_loss(model, lang, utt))
            .collect();
        reduce_batch(model, scope, batch.len(), forwards)
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch_gradients_serial(model, lang, batch, scope)
    }
}

fn reduce_batch(
    model: &CrdModel,
    scope: BackwardScope,
    batch_len: usize,
    forwards: Vec<ForwardResult>,
) -> Result<(ModelGrads, f64), TrainError> {
    let mut total = ModelGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    for result in forwards {
        let (cache, ctc) = result?;
        model.backward_into(&cache, &ctc.grad_logits, scope, &mut total);
        loss_sum += ctc.loss;
    }
    let scale = 1.0 / batch_len.max(1) as f64;
    total.scale(scale);
    Ok((total, loss_sum * scale))
}

#[derive(Debug, Clone, Copy)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Evaluation result on one dataset split.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub mean_loss: f64,
    pub ter: f64,
}

/// Forward-only evaluation: mean CTC loss and token error rate under the
/// given decoder.
pub fn evaluate(
    model: &CrdModel,
    language: &str,
    data: &[Utterance],
    mode: DecodeMode,
) -> Result<EvalSummary, TrainError> {
    let lang = model.language_index(language)?;
    let map_one = |utt: &Utterance| -> Result<(f64, Vec<usize>), TrainError> {
        let cache = model.forward_cached_idx(&utt.features.frames, lang)?;
        let loss = -ctc_log_prob(&cache.log_post, &utt.labels.tokens)?;
        let hyp = match mode {
            DecodeMode::Greedy => greedy_decode(&cache.log_post),
            DecodeMode::Beam(width) => beam_search_decode(&cache.log_post, width),
        };
        Ok((loss, hyp))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(f64, Vec<usize>), TrainError>> =
        data.par_iter().map(map_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(f64, Vec<usize>), TrainError>> = data.iter().map(map_one).collect();

    let mut losses = 0.0;
    let mut hyps = Vec::with_capacity(data.len());
    for r in results {
        let (loss, hyp) = r?;
        losses += loss;
        hyps.push(hyp);
    }
    let refs: Vec<_> = data.iter().map(|u| u.labels.clone()).collect();
    let ter = token_error_rate(&refs, &hyps).map_err(|e| TrainError::BadConfig(e.to_string()))?;
    Ok(EvalSummary {
        mean_loss: losses / data.len().max(1) as f64,
        ter,
    })
}

/// Per-language training and evaluation slices, resolved to model indices.
pub(crate) struct LoopLanguage<'a> {
    pub index: usize,
    pub name: String,
    pub train: &'a [Utterance],
    pub eval: &'a [Utterance],
}

pub(crate) struct LoopOptions {
    /// Trace-norm weight; zero disables the regularizer.
    pub alpha: f64,
    pub trainable: TrainableSet,
}

/// Round-robin training loop shared by every strategy.
pub(crate) fn run_loop(
    model: &mut CrdModel,
    languages: &[LoopLanguage],
    opts: &LoopOptions,
    cfg: &TrainingConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    for lang in languages {
        if lang.train.is_empty() {
            return Err(TrainError::EmptyDataset(lang.name.clone()));
        }
    }
    let scope = opts.trainable.backward_scope();
    let layout = model.param_layout();
    let trainable_mask: Vec<bool> = {
        let mut mask = vec![false; model.parameter_count()];
        for block in &layout {
            if opts.trainable.allows(&block.id) {
                mask[block.offset..block.offset + block.len].fill(true);
            }
        }
        mask
    };
    let frozen_filter = |id: &BlockId| !opts.trainable.allows(id);

    let mut report = TrainReport::default();
    if opts.trainable.freezes() {
        report.frozen_hashes.push(model.hash_blocks(frozen_filter));
    }

    let mut params = model.param_vector();
    let mut state = AdamState::new(params.len());
    let slots = model.adaptive_slots();
    let regularize = opts.alpha > 0.0 && !slots.is_empty();

    for epoch in 0..cfg.epochs {
        // Deterministic per-(epoch, language) shuffles.
        let mut orders: Vec<Vec<usize>> = Vec::with_capacity(languages.len());
        for (pos, lang) in languages.iter().enumerate() {
            let mix = cfg
                .seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add((epoch as u64) << 20)
                .wrapping_add(pos as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix);
            let mut order: Vec<usize> = (0..lang.train.len()).collect();
            order.shuffle(&mut rng);
            orders.push(order);
        }
        let max_batches = orders
            .iter()
            .map(|o| o.len().div_ceil(cfg.batch_size))
            .max()
            .unwrap_or(0);

        // Strict round robin over languages within each batch step.
        for step in 0..max_batches {
            for (pos, lang) in languages.iter().enumerate() {
                let order = &orders[pos];
                let start = step * cfg.batch_size;
                if start >= order.len() {
                    continue;
                }
                let end = (start + cfg.batch_size).min(order.len());
                let batch: Vec<&Utterance> =
                    order[start..end].iter().map(|&i| &lang.train[i]).collect();
                let (mut grads, _loss) = batch_gradients(model, lang.index, &batch, scope)?;

                if regularize {
                    for (s, slot_ref) in slots.iter().enumerate() {
                        let stack = model
                            .stacked_lambda(*slot_ref)
                            .expect("adaptive slot has languages");
                        let sub = trace_norm_subgradient(&stack)?;
                        for l in 0..model.languages.len() {
                            for (i, g) in grads.apl_lambda[l][s].iter_mut().enumerate() {
                                *g += opts.alpha * sub.get(l, i);
                            }
                        }
                    }
                }

                let mut grad_vec = grads.to_vector(model);
                for (g, &keep) in grad_vec.iter_mut().zip(&trainable_mask) {
                    if !keep {
                        *g = 0.0;
                    }
                }
                adam_step(&mut params, &grad_vec, &mut state, cfg)?;
                model.load_param_vector(&params)?;
            }
        }

        // Per-epoch metrics on the held-out split; greedy decoding keeps the
        // loop cheap (final reports use beam search).
        let trace_total = total_trace_norm(model)?;
        for lang in languages {
            if lang.eval.is_empty() {
                continue;
            }
            let summary = evaluate(model, &lang.name, lang.eval, DecodeMode::Greedy)?;
            report.metrics.push(MetricRow {
                epoch: epoch + 1,
                language: lang.name.clone(),
                split: "test".to_string(),
                ctc_loss: summary.mean_loss,
                trace_norm_total: trace_total,
                ter: summary.ter,
            });
        }
        if opts.trainable.freezes() {
            let hash = model.hash_blocks(frozen_filter);
            if hash != report.frozen_hashes[0] {
                return Err(TrainError::FrozenParametersChanged { epoch: epoch + 1 });
            }
            report.frozen_hashes.push(hash);
        }
    }
    Ok(report)
}

pub(crate) fn resolve_languages<'a>(
    model: &CrdModel,
    data: &[super::LanguageData<'a>],
) -> Result<Vec<LoopLanguage<'a>>, TrainError> {
    data.iter()
        .map(|ld| {
            let index = model.language_index(&ld.language.name)?;
            Ok(LoopLanguage {
                index,
                name: ld.language.name.clone(),
                train: ld.train,
                eval: ld.eval,
            })
        })
        .collect()
}
