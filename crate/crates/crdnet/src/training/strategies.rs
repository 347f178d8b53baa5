//! The five training strategies built on the shared loop.
//!
//! FS trains everything on one target. CL pre-trains on sources, registers
//! the target (fresh activations and head, shared weights untouched), and
//! fine-tunes only the target's activations and head. ML trains every
//! language jointly with the trace-norm relatedness term. CL&ML runs the
//! CL pre-training phase and then the ML loop over sources plus targets
//! with shared weights unfrozen. BN is the classical transfer baseline:
//! pre-train with fixed ReLU slots and a bottleneck, then freeze through
//! the bottleneck and train the layers above it for the target.

use super::loops::{resolve_languages, run_loop, LoopOptions, TrainableSet};
use super::{TrainError, TrainReport, TrainingConfig};
use crate::harness::Utterance;
use crate::model::{CrdModel, FcLayer, Language};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One language's data for a training phase.
pub struct LanguageData<'a> {
    pub language: &'a Language,
    pub train: &'a [Utterance],
    pub eval: &'a [Utterance],
}

impl<'a> LanguageData<'a> {
    pub fn new(language: &'a Language, train: &'a [Utterance], eval: &'a [Utterance]) -> Self {
        LanguageData { language, train, eval }
    }
}

/// Deterministic per-language registration seed.
fn registration_seed(base: u64, name: &str) -> u64 {
    let mut h = base ^ 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// FS: train all parameters on the target language alone.
pub fn train_from_scratch(
    model: &mut CrdModel,
    target: &LanguageData,
    cfg: &TrainingConfig,
) -> Result<TrainReport, TrainError> {
    let langs = resolve_languages(model, std::slice::from_ref(target))?;
    run_loop(
        model,
        &langs,
        &LoopOptions { alpha: 0.0, trainable: TrainableSet::All },
        cfg,
    )
}

/// Pre-training on the source languages. Multiple sources run the
/// multilingual loss (CTC sum plus trace-norm term); a single source reduces
/// to plain from-scratch training on it.
pub fn pretrain_sources(
    model: &mut CrdModel,
    sources: &[LanguageData],
    cfg: &TrainingConfig,
) -> Result<TrainReport, TrainError> {
    if sources.is_empty() {
        return Err(TrainError::NoSources);
    }
    let langs = resolve_languages(model, sources)?;
    let alpha = if sources.len() > 1 { cfg.alpha } else { 0.0 };
    run_loop(
        model,
        &langs,
        &LoopOptions { alpha, trainable: TrainableSet::All },
        cfg,
    )
}

/// CL fine-tuning: only the target's activation parameters and head train;
/// every shared weight and every other language's parameters stay frozen
/// (verified by hash each epoch).
pub fn finetune_cross_lingual(
    model: &mut CrdModel,
    target: &LanguageData,
    cfg: &TrainingConfig,
) -> Result<TrainReport, TrainError> {
    let index = model.language_index(&target.language.name)?;
    let langs = resolve_languages(model, std::slice::from_ref(target))?;
    run_loop(
        model,
        &langs,
        &LoopOptions {
            alpha: 0.0,
            trainable: TrainableSet::LanguageOnly(index),
        },
        cfg,
    )
}

/// Full CL pipeline: pre-train on sources, register the target, fine-tune
/// its activations and head. Returns the pre-training and fine-tuning
/// reports.
pub fn train_cross_lingual(
    model: &mut CrdModel,
    sources: &[LanguageData],
    target: &LanguageData,
    pretrain_cfg: &TrainingConfig,
    cfg: &TrainingConfig,
) -> Result<(TrainReport, TrainReport), TrainError> {
    let pre = pretrain_sources(model, sources, pretrain_cfg)?;
    let source_name = sources[0].language.name.clone();
    model.register_language(
        &source_name,
        target.language.clone(),
        registration_seed(cfg.seed, &target.language.name),
    )?;
    let fine = finetune_cross_lingual(model, target, cfg)?;
    Ok((pre, fine))
}

/// ML: joint round-robin training over every given language with the
/// trace-norm relatedness term weighted by `cfg.alpha`.
pub fn train_multilingual(
    model: &mut CrdModel,
    languages: &[LanguageData],
    cfg: &TrainingConfig,
) -> Result<TrainReport, TrainError> {
    if languages.is_empty() {
        return Err(TrainError::NoSources);
    }
    let langs = resolve_languages(model, languages)?;
    run_loop(
        model,
        &langs,
        &LoopOptions {
            alpha: cfg.alpha,
            trainable: TrainableSet::All,
        },
        cfg,
    )
}

/// CL&ML: pre-train on sources, register the targets, then run the
/// multilingual loop over sources plus targets with shared weights training.
pub fn train_combined(
    model: &mut CrdModel,
    sources: &[LanguageData],
    targets: &[LanguageData],
    pretrain_cfg: &TrainingConfig,
    cfg: &TrainingConfig,
) -> Result<(TrainReport, TrainReport), TrainError> {
    let pre = pretrain_sources(model, sources, pretrain_cfg)?;
    let source_name = sources[0].language.name.clone();
    for target in targets {
        model.register_language(
            &source_name,
            target.language.clone(),
            registration_seed(cfg.seed, &target.language.name),
        )?;
    }
    let mut all: Vec<LanguageData> = Vec::with_capacity(sources.len() + targets.len());
    for s in sources {
        all.push(LanguageData::new(s.language, s.train, s.eval));
    }
    for t in targets {
        all.push(LanguageData::new(t.language, t.train, t.eval));
    }
    let joint = train_multilingual(model, &all, cfg)?;
    Ok((pre, joint))
}

/// BN phase 2: freeze everything up to and including the bottleneck, train
/// the FC layers above it plus the target head. `reinit_upper` restarts the
/// upper layers from fresh values instead of continuing from pre-trained
/// ones.
pub fn train_bottleneck_baseline(
    model: &mut CrdModel,
    target: &LanguageData,
    cfg: &TrainingConfig,
    reinit_upper: bool,
) -> Result<TrainReport, TrainError> {
    let bottleneck = model.bottleneck_index.ok_or(TrainError::NoBottleneck)?;
    let index = model.language_index(&target.language.name)?;
    if reinit_upper {
        let mut rng = ChaCha8Rng::seed_from_u64(registration_seed(cfg.seed, "upper-reinit"));
        for i in bottleneck + 1..model.fc.len() {
            let layer = &model.fc[i];
            model.fc[i] = FcLayer::init(
                layer.input_size(),
                layer.output_size(),
                layer.slot.clone(),
                &mut rng,
            );
        }
    }
    let langs = resolve_languages(model, std::slice::from_ref(target))?;
    run_loop(
        model,
        &langs,
        &LoopOptions {
            alpha: 0.0,
            trainable: TrainableSet::AboveBottleneck {
                bottleneck,
                language: index,
            },
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_micro_language, MicroLanguageSpec};
    use crate::model::{Placement, Preset, BOTTLENECK_DIM};
    use crate::training::Strategy;

    fn quick_spec(name: &str, seed: u64) -> MicroLanguageSpec {
        MicroLanguageSpec {
            name: name.to_string(),
            vocab_size: 4,
            family_seed: seed,
            relatedness: None,
            frames_per_token: (2, 3),
            noise_std: 0.1,
            utterance_length: (1, 3),
        }
    }

    fn quick_cfg() -> TrainingConfig {
        let mut cfg = TrainingConfig::new(Strategy::FromScratch, 5);
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg
    }

    #[test]
    fn fs_is_deterministic_and_reduces_loss() {
        let spec = quick_spec("solo", 11);
        let data = generate_micro_language(&spec, 24, 7).unwrap();
        let (train, test) = data.split(3);

        let run = || {
            let mut model = CrdModel::build(
                Preset::Small,
                Preset::Small.default_placement(),
                &[train.language.clone()],
                3,
                99,
            )
            .unwrap();
            let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
            let report = train_from_scratch(&mut model, &ld, &quick_cfg()).unwrap();
            (model.param_vector(), report)
        };
        let (params_a, report_a) = run();
        let (params_b, _) = run();
        assert_eq!(params_a, params_b, "same seed must give identical weights");
        assert_eq!(report_a.metrics.len(), 1);
        assert!(report_a.frozen_hashes.is_empty());
    }

    #[test]
    fn cl_finetune_freezes_shared_weights() {
        let src_spec = quick_spec("src", 3);
        let tgt_spec = quick_spec("tgt", 4);
        let src = generate_micro_language(&src_spec, 16, 1).unwrap();
        let tgt = generate_micro_language(&tgt_spec, 16, 2).unwrap();
        let (src_train, src_test) = src.split(3);
        let (tgt_train, tgt_test) = tgt.split(3);

        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[src_train.language.clone()],
            3,
            7,
        )
        .unwrap();
        let sources = [LanguageData::new(
            &src_train.language,
            &src_train.utterances,
            &src_test.utterances,
        )];
        let target =
            LanguageData::new(&tgt_train.language, &tgt_train.utterances, &tgt_test.utterances);
        let (_, fine) =
            train_cross_lingual(&mut model, &sources, &target, &quick_cfg(), &quick_cfg())
                .unwrap();

        // Hash recorded before training and after each epoch, all equal.
        assert_eq!(fine.frozen_hashes.len(), 2);
        assert_eq!(fine.frozen_hashes[0], fine.frozen_hashes[1]);

        // Source evaluation is unchanged by target fine-tuning (isolation):
        // the shared weights and source head are frozen, so a source forward
        // pass hits only frozen parameters.
        let shared = model.shared_param_hash();
        let target_idx = model.language_index("tgt").unwrap();
        let ld = LanguageData::new(&tgt_train.language, &tgt_train.utterances, &[]);
        let _ = finetune_cross_lingual(&mut model, &ld, &quick_cfg()).unwrap();
        assert_eq!(model.shared_param_hash(), shared);
        let _ = target_idx;
    }

    #[test]
    fn bn_phase2_freezes_through_bottleneck() {
        let src_spec = quick_spec("s1", 21);
        let tgt_spec = quick_spec("t1", 22);
        let src = generate_micro_language(&src_spec, 16, 1).unwrap();
        let tgt = generate_micro_language(&tgt_spec, 16, 2).unwrap();
        let (src_train, src_test) = src.split(3);
        let (tgt_train, tgt_test) = tgt.split(3);

        let mut model = CrdModel::build(
            Preset::Small,
            Placement::none(),
            &[src_train.language.clone()],
            3,
            7,
        )
        .unwrap();
        model.insert_bottleneck(BOTTLENECK_DIM, 8).unwrap();
        let sources = [LanguageData::new(
            &src_train.language,
            &src_train.utterances,
            &src_test.utterances,
        )];
        pretrain_sources(&mut model, &sources, &quick_cfg()).unwrap();
        model
            .register_language("s1", tgt_train.language.clone(), 55)
            .unwrap();

        let conv_before = model.hash_blocks(|id| matches!(id, crate::model::BlockId::ConvW(_)));
        let target =
            LanguageData::new(&tgt_train.language, &tgt_train.utterances, &tgt_test.utterances);
        let report = train_bottleneck_baseline(&mut model, &target, &quick_cfg(), false).unwrap();
        assert!(report.frozen_hashes.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(
            model.hash_blocks(|id| matches!(id, crate::model::BlockId::ConvW(_))),
            conv_before
        );
    }

    #[test]
    fn bn_without_bottleneck_errors() {
        let spec = quick_spec("x", 1);
        let data = generate_micro_language(&spec, 8, 1).unwrap();
        let (train, test) = data.split(3);
        let mut model = CrdModel::build(
            Preset::Small,
            Placement::none(),
            &[train.language.clone()],
            3,
            7,
        )
        .unwrap();
        let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
        assert!(matches!(
            train_bottleneck_baseline(&mut model, &ld, &quick_cfg(), false),
            Err(TrainError::NoBottleneck)
        ));
    }

    #[test]
    fn ml_single_language_alpha_zero_matches_fs_bitwise() {
        let spec = quick_spec("solo", 31);
        let data = generate_micro_language(&spec, 16, 3).unwrap();
        let (train, test) = data.split(3);

        let build = || {
            CrdModel::build(
                Preset::Small,
                Preset::Small.default_placement(),
                &[train.language.clone()],
                3,
                77,
            )
            .unwrap()
        };
        let cfg = quick_cfg().with_alpha(0.0);

        let mut fs_model = build();
        let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
        train_from_scratch(&mut fs_model, &ld, &cfg).unwrap();

        let mut ml_model = build();
        let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
        train_multilingual(&mut ml_model, std::slice::from_ref(&ld), &cfg).unwrap();

        assert_eq!(fs_model.param_vector(), ml_model.param_vector());
    }

    #[test]
    fn fs_first_epoch_reduces_loss_over_three_seeds() {
        // Learnable easy task: mean test loss after one epoch sits below the
        // untrained model's loss, averaged over three seeds.
        let mut spec = quick_spec("easy", 41);
        spec.noise_std = 0.1;
        spec.vocab_size = 3;
        let data = generate_micro_language(&spec, 40, 11).unwrap();
        let (train, test) = data.split(3);
        let mut initial_sum = 0.0;
        let mut trained_sum = 0.0;
        for seed in [1u64, 2, 3] {
            let mut model = CrdModel::build(
                Preset::Small,
                Preset::Small.default_placement(),
                &[train.language.clone()],
                3,
                seed,
            )
            .unwrap();
            let before = crate::training::evaluate(
                &model,
                "easy",
                &test.utterances,
                crate::training::DecodeMode::Greedy,
            )
            .unwrap()
            .mean_loss;
            let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
            let cfg = quick_cfg().with_seed(seed);
            let report = train_from_scratch(&mut model, &ld, &cfg).unwrap();
            initial_sum += before;
            trained_sum += report.metrics.last().unwrap().ctc_loss;
        }
        assert!(
            trained_sum < initial_sum,
            "mean epoch-1 loss {trained_sum} must undercut initial {initial_sum}"
        );
    }

    #[test]
    fn fs_memorizes_a_small_corpus() {
        // Capacity check: 50 easy utterances are memorized almost exactly.
        let mut spec = quick_spec("memo", 77);
        spec.noise_std = 0.05;
        spec.vocab_size = 4;
        spec.utterance_length = (1, 2);
        let train = generate_micro_language(&spec, 50, 21).unwrap();
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[train.language.clone()],
            3,
            5,
        )
        .unwrap();
        let mut cfg = quick_cfg();
        cfg.epochs = 8;
        cfg.batch_size = 5;
        // Evaluate on the training split itself.
        let ld = LanguageData::new(&train.language, &train.utterances, &train.utterances);
        let report = train_from_scratch(&mut model, &ld, &cfg).unwrap();
        let final_ter = report.metrics.last().unwrap().ter;
        assert!(final_ter <= 0.1, "train TER {final_ter} should approach zero");
    }

    #[test]
    fn single_source_pretraining_equals_from_scratch_bitwise() {
        let spec = quick_spec("solo", 61);
        let data = generate_micro_language(&spec, 16, 9).unwrap();
        let (train, test) = data.split(3);
        let build = || {
            CrdModel::build(
                Preset::Small,
                Preset::Small.default_placement(),
                &[train.language.clone()],
                3,
                17,
            )
            .unwrap()
        };
        let cfg = quick_cfg();
        let mut fs_model = build();
        let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
        train_from_scratch(&mut fs_model, &ld, &cfg).unwrap();
        let mut pre_model = build();
        let ld = LanguageData::new(&train.language, &train.utterances, &test.utterances);
        pretrain_sources(&mut pre_model, std::slice::from_ref(&ld), &cfg).unwrap();
        assert_eq!(fs_model.param_vector(), pre_model.param_vector());
    }

    #[test]
    fn cl_finetuning_leaves_source_eval_loss_unchanged() {
        let src_spec = quick_spec("srcx", 71);
        let tgt_spec = quick_spec("tgtx", 72);
        let src = generate_micro_language(&src_spec, 16, 1).unwrap();
        let tgt = generate_micro_language(&tgt_spec, 16, 2).unwrap();
        let (src_train, src_test) = src.split(3);
        let (tgt_train, tgt_test) = tgt.split(3);
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[src_train.language.clone()],
            3,
            7,
        )
        .unwrap();
        let sources = [LanguageData::new(
            &src_train.language,
            &src_train.utterances,
            &src_test.utterances,
        )];
        pretrain_sources(&mut model, &sources, &quick_cfg()).unwrap();
        model
            .register_language("srcx", tgt_train.language.clone(), 55)
            .unwrap();
        let eval_src = |m: &CrdModel| {
            crate::training::evaluate(
                m,
                "srcx",
                &src_test.utterances,
                crate::training::DecodeMode::Greedy,
            )
            .unwrap()
            .mean_loss
        };
        let before = eval_src(&model);
        let target =
            LanguageData::new(&tgt_train.language, &tgt_train.utterances, &tgt_test.utterances);
        finetune_cross_lingual(&mut model, &target, &quick_cfg()).unwrap();
        let after = eval_src(&model);
        assert_eq!(before.to_bits(), after.to_bits(), "source loss must be untouched");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = quick_spec("x", 1);
        let data = generate_micro_language(&spec, 8, 1).unwrap();
        let (train, _) = data.split(3);
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[train.language.clone()],
            3,
            7,
        )
        .unwrap();
        let ld = LanguageData::new(&train.language, &[], &[]);
        assert!(matches!(
            train_from_scratch(&mut model, &ld, &quick_cfg()),
            Err(TrainError::EmptyDataset(_))
        ));
    }
}
