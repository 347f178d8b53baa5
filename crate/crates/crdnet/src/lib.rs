//! Multilingual CTC sequence recognition with per-language adaptive
//! piecewise-linear activations.
//!
//! The crate implements a CNN-BiGRU-DNN acoustic model whose weights and
//! biases are shared across languages while each language owns its own
//! activation parameters and output head, a CTC loss with analytic
//! gradients, the training strategies built on top (from-scratch,
//! bottleneck transfer, cross-lingual activation replacement, multilingual
//! joint training with a trace-norm relatedness regularizer, and their
//! combination), a log-Mel audio front end, and a synthetic micro-language
//! harness for desk-scale experiments.
//!
//! Batch gradient computation is data-parallel via rayon when the `parallel`
//! feature (on by default) is enabled; gradients are reduced in a fixed
//! order either way, so results are bit-identical across thread counts.

pub mod activations;
pub mod ctc;
pub mod features;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod training;
