//! Rough per-phase timing of the training step on the small preset.
//! `cargo run -p crdnet --example profile_steps`

use crdnet::ctc::ctc_loss;
use crdnet::harness::{generate_micro_language, MicroLanguageSpec, Utterance};
use crdnet::model::{BackwardScope, CrdModel, Preset};
use crdnet::training::{batch_gradients, batch_gradients_serial};
use std::time::Instant;

fn main() {
    let spec = MicroLanguageSpec {
        name: "prof".into(),
        vocab_size: 12,
        family_seed: 5,
        relatedness: None,
        frames_per_token: (2, 2),
        noise_std: 0.3,
        utterance_length: (3, 3),
    };
    let dataset = generate_micro_language(&spec, 32, 3).unwrap();
    let model = CrdModel::build(
        Preset::Small,
        Preset::Small.default_placement(),
        &[dataset.language.clone()],
        5,
        42,
    )
    .unwrap();

    let reps = 40;
    let t0 = Instant::now();
    let mut caches = Vec::new();
    for _ in 0..reps {
        caches.clear();
        for utt in &dataset.utterances {
            caches.push(model.forward_with_cache(&utt.features.frames, "prof").unwrap());
        }
    }
    let fwd = t0.elapsed();

    let t0 = Instant::now();
    let mut ctcs = Vec::new();
    for _ in 0..reps {
        ctcs.clear();
        for (cache, utt) in caches.iter().zip(&dataset.utterances) {
            ctcs.push(ctc_loss(&cache.log_post, &utt.labels).unwrap());
        }
    }
    let ctc_time = t0.elapsed();

    let batch: Vec<&Utterance> = dataset.utterances.iter().collect();
    let t0 = Instant::now();
    for _ in 0..reps {
        batch_gradients_serial(&model, 0, &batch, BackwardScope::Full).unwrap();
    }
    let serial = t0.elapsed();

    let t0 = Instant::now();
    for _ in 0..reps {
        batch_gradients(&model, 0, &batch, BackwardScope::Full).unwrap();
    }
    let parallel = t0.elapsed();

    let t0 = Instant::now();
    for _ in 0..reps {
        batch_gradients(&model, 0, &batch, BackwardScope::ActivationsAndHead).unwrap();
    }
    let act_scope = t0.elapsed();

    let n = (reps * dataset.utterances.len()) as f64;
    println!("T=6 frames, small preset, per example:");
    println!("  forward              {:8.1} us", fwd.as_secs_f64() / n * 1e6);
    println!("  ctc loss             {:8.1} us", ctc_time.as_secs_f64() / n * 1e6);
    println!("  full step (serial)   {:8.1} us", serial.as_secs_f64() / n * 1e6);
    println!("  full step (parallel) {:8.1} us", parallel.as_secs_f64() / n * 1e6);
    println!("  act-scope step       {:8.1} us", act_scope.as_secs_f64() / n * 1e6);
}
