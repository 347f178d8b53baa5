//! Forward evaluation with cached intermediates and the manual backward
//! pass that produces exact gradients for every trainable parameter.

use super::layers::{GruDirCache, GruDirGrads};
use super::{CrdModel, ModelError, SlotRef};
use crate::activations::ActivationSlot;
use crate::features::MEL_BANDS;
use crate::numeric::{stable_log_softmax, Matrix, Tensor3};

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub language: usize,
    conv_inputs: Vec<Tensor3>,
    conv_pre: Vec<Tensor3>,
    rnn_input: Matrix,
    gru_caches: Vec<(GruDirCache, GruDirCache)>,
    gru_outputs: Vec<Matrix>,
    fc_pre: Vec<Matrix>,
    fc_outputs: Vec<Matrix>,
    pub logits: Matrix,
    pub log_post: Matrix,
}

/// How far the backward pass descends and which gradients it accumulates.
///
/// `Full` trains everything. `ActivationsAndHead` computes only the current
/// language's APL and head gradients (the cross-lingual fine-tuning set),
/// descending just deep enough to reach the lowest adaptive slot.
/// `AboveBottleneck` computes gradients for the FC layers above the
/// bottleneck plus the head, never descending past the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardScope {
    Full,
    ActivationsAndHead,
    AboveBottleneck,
}

/// Gradient accumulators shaped exactly like the model's parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub conv_w: Vec<Vec<f64>>,
    pub gru: Vec<(GruDirGrads, GruDirGrads)>,
    pub fc_w: Vec<Matrix>,
    pub fc_b: Vec<Vec<f64>>,
    pub head_w: Vec<Matrix>,
    pub head_b: Vec<Vec<f64>>,
    /// Indexed [language][adaptive slot][unit].
    pub apl_lambda: Vec<Vec<Vec<f64>>>,
    pub apl_break: Vec<Vec<Vec<f64>>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &CrdModel) -> Self {
        let slots = model.adaptive_slots();
        let units = model.apl_units;
        ModelGrads {
            conv_w: model.conv.iter().map(|l| vec![0.0; l.weight_len()]).collect(),
            gru: model
                .gru
                .iter()
                .map(|l| (GruDirGrads::zeros_like(&l.fwd), GruDirGrads::zeros_like(&l.bwd)))
                .collect(),
            fc_w: model
                .fc
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            fc_b: model.fc.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            head_w: model
                .heads
                .iter()
                .map(|h| Matrix::zeros(h.weight.rows(), h.weight.cols()))
                .collect(),
            head_b: model.heads.iter().map(|h| vec![0.0; h.bias.len()]).collect(),
            apl_lambda: vec![vec![vec![0.0; units]; slots.len()]; model.languages.len()],
            apl_break: vec![vec![vec![0.0; units]; slots.len()]; model.languages.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        fn add(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.conv_w.iter_mut().zip(&other.conv_w) {
            add(a, b);
        }
        for ((af, ab), (bf, bb)) in self.gru.iter_mut().zip(&other.gru) {
            for (a, b) in [(af, bf), (ab, bb)] {
                a.w_update.add_assign(&b.w_update);
                a.w_reset.add_assign(&b.w_reset);
                a.w_cand.add_assign(&b.w_cand);
                a.u_update.add_assign(&b.u_update);
                a.u_reset.add_assign(&b.u_reset);
                a.u_cand.add_assign(&b.u_cand);
                add(&mut a.b_update, &b.b_update);
                add(&mut a.b_reset, &b.b_reset);
                add(&mut a.b_cand, &b.b_cand);
            }
        }
        for (a, b) in self.fc_w.iter_mut().zip(&other.fc_w) {
            a.add_assign(b);
        }
        for (a, b) in self.fc_b.iter_mut().zip(&other.fc_b) {
            add(a, b);
        }
        for (a, b) in self.head_w.iter_mut().zip(&other.head_w) {
            a.add_assign(b);
        }
        for (a, b) in self.head_b.iter_mut().zip(&other.head_b) {
            add(a, b);
        }
        for (a, b) in self.apl_lambda.iter_mut().zip(&other.apl_lambda) {
            for (x, y) in a.iter_mut().zip(b) {
                add(x, y);
            }
        }
        for (a, b) in self.apl_break.iter_mut().zip(&other.apl_break) {
            for (x, y) in a.iter_mut().zip(b) {
                add(x, y);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        fn scale(a: &mut [f64], f: f64) {
            for x in a {
                *x *= f;
            }
        }
        for a in &mut self.conv_w {
            scale(a, factor);
        }
        for (f, b) in &mut self.gru {
            for dir in [f, b] {
                dir.w_update.scale(factor);
                dir.w_reset.scale(factor);
                dir.w_cand.scale(factor);
                dir.u_update.scale(factor);
                dir.u_reset.scale(factor);
                dir.u_cand.scale(factor);
                scale(&mut dir.b_update, factor);
                scale(&mut dir.b_reset, factor);
                scale(&mut dir.b_cand, factor);
            }
        }
        for a in &mut self.fc_w {
            a.scale(factor);
        }
        for a in &mut self.fc_b {
            scale(a, factor);
        }
        for a in &mut self.head_w {
            a.scale(factor);
        }
        for a in &mut self.head_b {
            scale(a, factor);
        }
        for lang in &mut self.apl_lambda {
            for s in lang {
                scale(s, factor);
            }
        }
        for lang in &mut self.apl_break {
            for s in lang {
                scale(s, factor);
            }
        }
    }

    fn block_data(&self, id: super::BlockId) -> &[f64] {
        use super::{BlockId, Gate};
        match id {
            BlockId::ConvW(i) => &self.conv_w[i],
            BlockId::GruW { layer, reverse, gate, recurrent } => {
                let dir = if reverse { &self.gru[layer].1 } else { &self.gru[layer].0 };
                match (gate, recurrent) {
                    (Gate::Update, false) => dir.w_update.data(),
                    (Gate::Reset, false) => dir.w_reset.data(),
                    (Gate::Cand, false) => dir.w_cand.data(),
                    (Gate::Update, true) => dir.u_update.data(),
                    (Gate::Reset, true) => dir.u_reset.data(),
                    (Gate::Cand, true) => dir.u_cand.data(),
                }
            }
            BlockId::GruB { layer, reverse, gate } => {
                let dir = if reverse { &self.gru[layer].1 } else { &self.gru[layer].0 };
                match gate {
                    Gate::Update => &dir.b_update,
                    Gate::Reset => &dir.b_reset,
                    Gate::Cand => &dir.b_cand,
                }
            }
            BlockId::FcW(i) => self.fc_w[i].data(),
            BlockId::FcB(i) => &self.fc_b[i],
            BlockId::HeadW(l) => self.head_w[l].data(),
            BlockId::HeadB(l) => &self.head_b[l],
            BlockId::AplLambda { language, slot } => &self.apl_lambda[language][slot],
            BlockId::AplBreak { language, slot } => &self.apl_break[language][slot],
        }
    }

    /// Flattens to the model's canonical parameter layout.
    pub fn to_vector(&self, model: &CrdModel) -> Vec<f64> {
        let layout = model.param_layout();
        let mut out = Vec::with_capacity(layout.iter().map(|b| b.len).sum());
        for block in &layout {
            out.extend_from_slice(self.block_data(block.id));
        }
        out
    }
}

/// dPre for a slot activation, optionally accumulating APL parameter grads.
fn slot_backward(
    slot: &ActivationSlot,
    language: usize,
    pre: &Matrix,
    upstream: &Matrix,
    mut apl: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
) -> Matrix {
    let mut d_pre = Matrix::zeros(pre.rows(), pre.cols());
    match slot {
        ActivationSlot::FixedRelu => {
            for t in 0..pre.rows() {
                let p = pre.row(t);
                let u = upstream.row(t);
                let d = d_pre.row_mut(t);
                for j in 0..p.len() {
                    if p[j] > 0.0 {
                        d[j] = u[j];
                    }
                }
            }
        }
        ActivationSlot::Adaptive { per_language } => {
            let act = &per_language[language];
            for t in 0..pre.rows() {
                let p = pre.row(t);
                let u = upstream.row(t);
                let d = d_pre.row_mut(t);
                for j in 0..p.len() {
                    let x = p[j];
                    let up = u[j];
                    let mut dx = if x > 0.0 { 1.0 } else { 0.0 };
                    for (i, (&l, &b)) in
                        act.lambda.iter().zip(&act.breakpoints).enumerate()
                    {
                        let hinge = b - x;
                        if hinge > 0.0 {
                            dx -= l;
                            if let Some((dl, db)) = apl.as_mut() {
                                dl[i] += up * hinge;
                                db[i] += up * l;
                            }
                        }
                    }
                    d[j] = up * dx;
                }
            }
        }
    }
    d_pre
}

fn apply_slot(slot: &ActivationSlot, language: usize, pre: &Matrix) -> Matrix {
    match slot {
        ActivationSlot::FixedRelu => {
            Matrix::from_fn(pre.rows(), pre.cols(), |i, j| pre.get(i, j).max(0.0))
        }
        ActivationSlot::Adaptive { per_language } => per_language[language].eval_matrix(pre),
    }
}

impl CrdModel {
    /// Log-posteriors (T x V) for one utterance under one language.
    pub fn forward(&self, frames: &Matrix, language: &str) -> Result<Matrix, ModelError> {
        Ok(self.forward_with_cache(frames, language)?.log_post)
    }

    pub fn forward_with_cache(
        &self,
        frames: &Matrix,
        language: &str,
    ) -> Result<ForwardCache, ModelError> {
        let lang = self.language_index(language)?;
        self.forward_cached_idx(frames, lang)
    }

    pub(crate) fn forward_cached_idx(
        &self,
        frames: &Matrix,
        lang: usize,
    ) -> Result<ForwardCache, ModelError> {
        if frames.cols() != MEL_BANDS {
            return Err(ModelError::BadInputWidth {
                got: frames.cols(),
                expected: MEL_BANDS,
            });
        }
        if frames.rows() == 0 {
            return Err(ModelError::EmptyInput);
        }
        let time = frames.rows();

        // Conv stack over (time, freq, channel).
        let mut tensor = Tensor3::zeros(time, MEL_BANDS, 1);
        for t in 0..time {
            for f in 0..MEL_BANDS {
                *tensor.at_mut(t, f, 0) = frames.get(t, f);
            }
        }
        let mut conv_inputs = Vec::with_capacity(self.conv.len());
        let mut conv_pre = Vec::with_capacity(self.conv.len());
        for layer in &self.conv {
            let pre = layer.forward_raw(&tensor);
            conv_inputs.push(tensor);
            let mut out = pre.clone();
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
            conv_pre.push(pre);
            tensor = out;
        }

        // Flatten (freq, channel) per frame, frequency-major.
        let width = tensor.freq * tensor.channels;
        let mut rnn_input = Matrix::zeros(time, width);
        for t in 0..time {
            let row = rnn_input.row_mut(t);
            for f in 0..tensor.freq {
                for c in 0..tensor.channels {
                    row[f * tensor.channels + c] = tensor.at(t, f, c);
                }
            }
        }

        // BiGRU stack: per-direction activation, then elementwise sum.
        let mut gru_caches = Vec::with_capacity(self.gru.len());
        let mut gru_outputs: Vec<Matrix> = Vec::with_capacity(self.gru.len());
        for (i, layer) in self.gru.iter().enumerate() {
            let input = if i == 0 { &rnn_input } else { &gru_outputs[i - 1] };
            let fwd = layer.fwd.forward(input, false);
            let bwd = layer.bwd.forward(input, true);
            let mut out = apply_slot(&layer.slot, lang, &fwd.hidden);
            out.add_assign(&apply_slot(&layer.slot, lang, &bwd.hidden));
            gru_caches.push((fwd, bwd));
            gru_outputs.push(out);
        }

        // FC stack (bottleneck included at its position).
        let mut fc_pre = Vec::with_capacity(self.fc.len());
        let mut fc_outputs: Vec<Matrix> = Vec::with_capacity(self.fc.len());
        for (i, layer) in self.fc.iter().enumerate() {
            let input = if i == 0 {
                gru_outputs.last().expect("preset has GRU layers")
            } else {
                &fc_outputs[i - 1]
            };
            let pre = layer.forward_raw(input);
            let out = apply_slot(&layer.slot, lang, &pre);
            fc_pre.push(pre);
            fc_outputs.push(out);
        }

        // Language head and per-frame log-softmax.
        let head = &self.heads[lang];
        let head_input = fc_outputs.last().expect("preset has FC layers");
        let mut logits = head_input.matmul_transpose_b(&head.weight).expect("shape");
        for t in 0..time {
            let row = logits.row_mut(t);
            for (v, b) in row.iter_mut().zip(&head.bias) {
                *v += b;
            }
        }
        let mut log_post = Matrix::zeros(time, head.weight.rows());
        for t in 0..time {
            let row = stable_log_softmax(logits.row(t)).expect("vocab is nonempty");
            log_post.row_mut(t).copy_from_slice(&row);
        }

        Ok(ForwardCache {
            language: lang,
            conv_inputs,
            conv_pre,
            rnn_input,
            gru_caches,
            gru_outputs,
            fc_pre,
            fc_outputs,
            logits,
            log_post,
        })
    }

    /// Backward pass from a gradient on the head logits. Returns accumulators
    /// holding the gradient of the scalar loss that produced `grad_logits`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Matrix,
        scope: BackwardScope,
    ) -> ModelGrads {
        let mut grads = ModelGrads::zeros_like(self);
        self.backward_into(cache, grad_logits, scope, &mut grads);
        grads
    }

    /// Backward pass accumulating into an existing gradient buffer; the sum
    /// over examples lands in the same order as summing per-example buffers,
    /// so batched results are bit-identical either way.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_logits: &Matrix,
        scope: BackwardScope,
        grads: &mut ModelGrads,
    ) {
        let lang = cache.language;
        let slots = self.adaptive_slots();
        let slot_pos = |wanted: SlotRef| slots.iter().position(|s| *s == wanted);

        // Head.
        let head = &self.heads[lang];
        let head_input = cache.fc_outputs.last().expect("fc stack");
        grads.head_w[lang]
            .add_assign(&grad_logits.matmul_transpose_a(head_input).expect("shape"));
        for t in 0..grad_logits.rows() {
            for (b, g) in grads.head_b[lang].iter_mut().zip(grad_logits.row(t)) {
                *b += *g;
            }
        }
        let mut upstream = grad_logits.matmul(&head.weight).expect("shape");

        // FC stack, top down.
        let fc_stop = match scope {
            BackwardScope::AboveBottleneck => {
                self.bottleneck_index.map(|b| b + 1).unwrap_or(0)
            }
            _ => 0,
        };
        let shared_weight_grads = !matches!(scope, BackwardScope::ActivationsAndHead);
        let mut reached_stop = false;
        for i in (0..self.fc.len()).rev() {
            if i < fc_stop {
                reached_stop = true;
                break;
            }
            let layer = &self.fc[i];
            let apl = if layer.slot.is_adaptive() {
                let pos = slot_pos(SlotRef::Fc(i)).expect("slot enumerated");
                let (lams, brks) = split_apl(grads, lang);
                Some((&mut lams[pos], &mut brks[pos]))
            } else {
                None
            };
            let d_pre = slot_backward(&layer.slot, lang, &cache.fc_pre[i], &upstream, apl);
            let input: &Matrix = if i == 0 {
                cache.gru_outputs.last().expect("gru stack")
            } else {
                &cache.fc_outputs[i - 1]
            };
            if shared_weight_grads {
                grads.fc_w[i]
                    .add_assign(&d_pre.matmul_transpose_a(input).expect("shape"));
                for t in 0..d_pre.rows() {
                    for (b, g) in grads.fc_b[i].iter_mut().zip(d_pre.row(t)) {
                        *b += *g;
                    }
                }
            }
            let need_input_grad = match scope {
                BackwardScope::Full => true,
                BackwardScope::AboveBottleneck => i > fc_stop,
                BackwardScope::ActivationsAndHead => {
                    // Keep descending only while adaptive slots remain below.
                    i > 0 || self.placement.gru_from_top > 0
                }
            };
            if need_input_grad {
                upstream = d_pre.matmul(&layer.weight).expect("shape");
            } else {
                reached_stop = true;
                break;
            }
        }
        if matches!(scope, BackwardScope::AboveBottleneck) || reached_stop {
            return;
        }
        if matches!(scope, BackwardScope::ActivationsAndHead) && self.placement.gru_from_top == 0 {
            return;
        }

        // GRU stack, top down. In the activations-only scope we descend as
        // far as the lowest adaptive layer, whose slot gradient needs no
        // recurrence of its own.
        let lowest_adaptive_gru = self.gru.iter().position(|l| l.slot.is_adaptive());
        for i in (0..self.gru.len()).rev() {
            let layer = &self.gru[i];
            let input: &Matrix = if i == 0 {
                &cache.rnn_input
            } else {
                &cache.gru_outputs[i - 1]
            };
            let (fwd_cache, bwd_cache) = &cache.gru_caches[i];

            let stop_here = matches!(scope, BackwardScope::ActivationsAndHead)
                && Some(i) == lowest_adaptive_gru;

            let mut dx_total: Option<Matrix> = None;
            for (dir, dir_cache, reverse, which) in [
                (&layer.fwd, fwd_cache, false, 0usize),
                (&layer.bwd, bwd_cache, true, 1usize),
            ] {
                let apl = if layer.slot.is_adaptive() {
                    let pos = slot_pos(SlotRef::Gru(i)).expect("slot enumerated");
                    let (lams, brks) = split_apl(grads, lang);
                    Some((&mut lams[pos], &mut brks[pos]))
                } else {
                    None
                };
                let d_hidden =
                    slot_backward(&layer.slot, lang, &dir_cache.hidden, &upstream, apl);
                if stop_here {
                    continue;
                }
                let dir_grads = if shared_weight_grads {
                    let pair = &mut grads.gru[i];
                    Some(if which == 0 { &mut pair.0 } else { &mut pair.1 })
                } else {
                    None
                };
                let want_dx = i > 0 || matches!(scope, BackwardScope::Full);
                let dx = dir.backward(input, dir_cache, &d_hidden, reverse, dir_grads, want_dx);
                if let Some(dx) = dx {
                    match dx_total.as_mut() {
                        None => dx_total = Some(dx),
                        Some(total) => total.add_assign(&dx),
                    }
                }
            }
            if stop_here {
                return;
            }
            match dx_total {
                Some(dx) => upstream = dx,
                None => return, // conv gradients not requested
            }
        }

        // Conv stack: unflatten the sequence gradient back to a tensor.
        let last = cache
            .conv_pre
            .last()
            .expect("preset has conv layers");
        let (freq, channels) = (last.freq, last.channels);
        let mut d_tensor = Tensor3::zeros(upstream.rows(), freq, channels);
        for t in 0..upstream.rows() {
            let row = upstream.row(t);
            for f in 0..freq {
                for c in 0..channels {
                    *d_tensor.at_mut(t, f, c) = row[f * channels + c];
                }
            }
        }
        for i in (0..self.conv.len()).rev() {
            let layer = &self.conv[i];
            let pre = &cache.conv_pre[i];
            // ReLU mask on the pre-activation.
            for (d, p) in d_tensor.data_mut().iter_mut().zip(pre.data()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
            let dx = layer.backward_raw(
                &cache.conv_inputs[i],
                &d_tensor,
                Some(&mut grads.conv_w[i]),
                i > 0,
            );
            match dx {
                Some(dx) => d_tensor = dx,
                None => break,
            }
        }
    }
}

/// Borrow helper: the APL gradient tables for one language.
fn split_apl(
    grads: &mut ModelGrads,
    language: usize,
) -> (&mut Vec<Vec<f64>>, &mut Vec<Vec<f64>>) {
    (
        &mut grads.apl_lambda[language],
        &mut grads.apl_break[language],
    )
}
