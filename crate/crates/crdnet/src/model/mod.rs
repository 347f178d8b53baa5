//! The CRD (CNN-BiGRU-DNN) acoustic model with per-language activation
//! slots and per-language output heads.
//!
//! Convolution and recurrent weights, biases, and fully connected layers are
//! shared by every registered language; each language owns only the APL
//! parameters in the adaptive slots and its output head. The time axis is
//! never downsampled (stride 1, "same" padding), so the output sequence
//! length always equals the input frame count; frequency is halved per conv
//! layer.

mod checkpoint;
mod forward;
mod layers;

pub use forward::{BackwardScope, ForwardCache, ModelGrads};
pub use layers::{BiGruLayer, ConvLayer, FcLayer, GruDirCache, GruDirGrads, GruDirection, Head};

use crate::activations::{ActivationSlot, AplActivation};
use crate::features::MEL_BANDS;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BLANK_TOKEN: &str = "<blank>";
pub const BOTTLENECK_DIM: usize = 80;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("language {0:?} is not registered")]
    UnknownLanguage(String),
    #[error("language {0:?} is already registered")]
    DuplicateLanguage(String),
    #[error("placement {placement} refers to layers outside the preset ({gru} GRU, {fc} FC)")]
    PlacementOutOfRange {
        placement: String,
        gru: usize,
        fc: usize,
    },
    #[error("cannot parse placement {0:?}; expected forms like \"2GRU,1DNN\" or \"none\"")]
    BadPlacement(String),
    #[error("at least one language is required")]
    NoLanguages,
    #[error("vocabulary must start with the blank token {BLANK_TOKEN:?}")]
    BadVocab,
    #[error("model already has a bottleneck layer")]
    BottleneckPresent,
    #[error("a bottleneck needs at least two fully connected layers")]
    TooFewFcLayers,
    #[error("input has {got} feature columns, expected {expected}")]
    BadInputWidth { got: usize, expected: usize },
    #[error("input must contain at least one frame")]
    EmptyInput,
    #[error("parameter vector has {got} entries, expected {expected}")]
    BadParameterVector { got: usize, expected: usize },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A language name plus its ordered vocabulary; index 0 is always the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Language {
    pub name: String,
    pub vocab: Vec<String>,
}

impl Language {
    pub fn new(name: impl Into<String>, vocab: Vec<String>) -> Result<Self, ModelError> {
        if vocab.is_empty()
            || vocab[0] != BLANK_TOKEN
            || vocab.iter().skip(1).any(|t| t == BLANK_TOKEN)
        {
            return Err(ModelError::BadVocab);
        }
        Ok(Language {
            name: name.into(),
            vocab,
        })
    }

    /// A synthetic vocabulary of `token_count` tokens after the blank.
    pub fn synthetic(name: impl Into<String>, token_count: usize) -> Self {
        let mut vocab = vec![BLANK_TOKEN.to_string()];
        vocab.extend((1..=token_count).map(|i| format!("t{i:02}")));
        Language {
            name: name.into(),
            vocab,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Small,
    Large,
}

impl Preset {
    pub fn conv_count(self) -> usize {
        match self {
            Preset::Small => 2,
            Preset::Large => 3,
        }
    }

    pub fn conv_channels(self) -> usize {
        match self {
            Preset::Small => 32,
            Preset::Large => 64,
        }
    }

    pub fn gru_count(self) -> usize {
        match self {
            Preset::Small => 2,
            Preset::Large => 3,
        }
    }

    pub fn gru_hidden(self) -> usize {
        match self {
            Preset::Small => 128,
            Preset::Large => 256,
        }
    }

    pub fn fc_count(self) -> usize {
        2
    }

    pub fn fc_width(self) -> usize {
        1024
    }

    /// Adaptive slots the preset uses by default: last GRU plus first FC for
    /// the small model, last two GRUs plus first FC for the large one.
    pub fn default_placement(self) -> Placement {
        match self {
            Preset::Small => Placement {
                gru_from_top: 1,
                fc_from_bottom: 1,
            },
            Preset::Large => Placement {
                gru_from_top: 2,
                fc_from_bottom: 1,
            },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Option<Preset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" | "crd-small" => Some(Preset::Small),
            "large" | "crd-large" => Some(Preset::Large),
            _ => None,
        }
    }
}

/// Which layers carry adaptive activations: the top `gru_from_top` GRU
/// layers and the bottom `fc_from_bottom` fully connected layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub gru_from_top: usize,
    pub fc_from_bottom: usize,
}

impl Placement {
    pub fn none() -> Self {
        Placement {
            gru_from_top: 0,
            fc_from_bottom: 0,
        }
    }

    /// Parses labels of the form "2GRU,1DNN" (case-insensitive); "none"
    /// disables adaptive slots entirely.
    pub fn parse(s: &str) -> Result<Placement, ModelError> {
        let cleaned = s.trim().to_ascii_uppercase();
        if cleaned == "NONE" {
            return Ok(Placement::none());
        }
        let mut gru = None;
        let mut fc = None;
        for part in cleaned.split(',') {
            let part = part.trim();
            if let Some(count) = part.strip_suffix("GRU") {
                gru = count.trim().parse::<usize>().ok();
                if gru.is_none() {
                    return Err(ModelError::BadPlacement(s.to_string()));
                }
            } else if let Some(count) = part.strip_suffix("DNN").or_else(|| part.strip_suffix("FC"))
            {
                fc = count.trim().parse::<usize>().ok();
                if fc.is_none() {
                    return Err(ModelError::BadPlacement(s.to_string()));
                }
            } else if !part.is_empty() {
                return Err(ModelError::BadPlacement(s.to_string()));
            }
        }
        match (gru, fc) {
            (None, None) => Err(ModelError::BadPlacement(s.to_string())),
            (g, f) => Ok(Placement {
                gru_from_top: g.unwrap_or(0),
                fc_from_bottom: f.unwrap_or(0),
            }),
        }
    }

    pub fn label(&self) -> String {
        if self.gru_from_top == 0 && self.fc_from_bottom == 0 {
            "none".to_string()
        } else {
            format!("{}GRU,{}DNN", self.gru_from_top, self.fc_from_bottom)
        }
    }
}

/// Where an adaptive slot lives inside the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRef {
    Gru(usize),
    Fc(usize),
}

impl SlotRef {
    pub fn label(&self) -> String {
        match self {
            SlotRef::Gru(i) => format!("gru{}", i + 1),
            SlotRef::Fc(i) => format!("fc{}", i + 1),
        }
    }
}

/// Identifier of one contiguous parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    ConvW(usize),
    GruW { layer: usize, reverse: bool, gate: Gate, recurrent: bool },
    GruB { layer: usize, reverse: bool, gate: Gate },
    FcW(usize),
    FcB(usize),
    HeadW(usize),
    HeadB(usize),
    AplLambda { language: usize, slot: usize },
    AplBreak { language: usize, slot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Update,
    Reset,
    Cand,
}

impl BlockId {
    /// Shared blocks are the conv/GRU/FC weights and biases every language
    /// sees; everything else is language-owned.
    pub fn is_shared(&self) -> bool {
        matches!(
            self,
            BlockId::ConvW(_)
                | BlockId::GruW { .. }
                | BlockId::GruB { .. }
                | BlockId::FcW(_)
                | BlockId::FcB(_)
        )
    }

    pub fn language(&self) -> Option<usize> {
        match self {
            BlockId::HeadW(l) | BlockId::HeadB(l) => Some(*l),
            BlockId::AplLambda { language, .. } | BlockId::AplBreak { language, .. } => {
                Some(*language)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub id: BlockId,
    pub offset: usize,
    pub len: usize,
}

/// The shared-weight multilingual acoustic model.
#[derive(Debug, Clone)]
pub struct CrdModel {
    pub preset: Preset,
    pub placement: Placement,
    pub conv: Vec<ConvLayer>,
    pub gru: Vec<BiGruLayer>,
    pub fc: Vec<FcLayer>,
    pub bottleneck_index: Option<usize>,
    pub languages: Vec<Language>,
    pub heads: Vec<Head>,
    pub apl_units: usize,
}

impl CrdModel {
    /// Builds a preset stack with adaptive slots where the placement says and
    /// one fresh head (plus per-slot activation) per language.
    pub fn build(
        preset: Preset,
        placement: Placement,
        languages: &[Language],
        apl_units: usize,
        seed: u64,
    ) -> Result<CrdModel, ModelError> {
        if languages.is_empty() {
            return Err(ModelError::NoLanguages);
        }
        if placement.gru_from_top > preset.gru_count()
            || placement.fc_from_bottom > preset.fc_count()
        {
            return Err(ModelError::PlacementOutOfRange {
                placement: placement.label(),
                gru: preset.gru_count(),
                fc: preset.fc_count(),
            });
        }
        let mut names = std::collections::HashSet::new();
        for lang in languages {
            if !names.insert(lang.name.clone()) {
                return Err(ModelError::DuplicateLanguage(lang.name.clone()));
            }
            if lang.vocab.is_empty() || lang.vocab[0] != BLANK_TOKEN {
                return Err(ModelError::BadVocab);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lang_count = languages.len();

        let mut conv = Vec::with_capacity(preset.conv_count());
        let mut freq = MEL_BANDS;
        let mut channels = 1;
        for _ in 0..preset.conv_count() {
            conv.push(ConvLayer::init(channels, preset.conv_channels(), &mut rng));
            channels = preset.conv_channels();
            freq = ConvLayer::out_freq(freq);
        }
        let rnn_input = freq * channels;

        let adaptive_slot = |adaptive: bool| {
            if adaptive {
                ActivationSlot::Adaptive {
                    per_language: Vec::new(),
                }
            } else {
                ActivationSlot::FixedRelu
            }
        };

        let mut gru = Vec::with_capacity(preset.gru_count());
        let mut width = rnn_input;
        for i in 0..preset.gru_count() {
            let adaptive = i >= preset.gru_count() - placement.gru_from_top;
            gru.push(BiGruLayer::init(
                width,
                preset.gru_hidden(),
                adaptive_slot(adaptive),
                &mut rng,
            ));
            width = preset.gru_hidden();
        }

        let mut fc = Vec::with_capacity(preset.fc_count());
        for i in 0..preset.fc_count() {
            let adaptive = i < placement.fc_from_bottom;
            fc.push(FcLayer::init(
                width,
                preset.fc_width(),
                adaptive_slot(adaptive),
                &mut rng,
            ));
            width = preset.fc_width();
        }

        let mut model = CrdModel {
            preset,
            placement,
            conv,
            gru,
            fc,
            bottleneck_index: None,
            languages: Vec::with_capacity(lang_count),
            heads: Vec::with_capacity(lang_count),
            apl_units,
        };
        for lang in languages {
            model.push_language(lang.clone(), &mut rng);
        }
        Ok(model)
    }

    fn push_language(&mut self, language: Language, rng: &mut ChaCha8Rng) {
        let width = self.fc.last().map(FcLayer::output_size).unwrap_or(0);
        self.heads
            .push(Head::init(width, language.vocab_size(), rng));
        let units = self.apl_units;
        for slot in self.slots_mut() {
            if let ActivationSlot::Adaptive { per_language } = slot {
                per_language.push(AplActivation::init(units, rng));
            }
        }
        self.languages.push(language);
    }

    fn slots_mut(&mut self) -> impl Iterator<Item = &mut ActivationSlot> {
        self.gru
            .iter_mut()
            .map(|l| &mut l.slot)
            .chain(self.fc.iter_mut().map(|l| &mut l.slot))
    }

    pub fn language_index(&self, name: &str) -> Result<usize, ModelError> {
        self.languages
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownLanguage(name.to_string()))
    }

    pub fn language(&self, index: usize) -> &Language {
        &self.languages[index]
    }

    /// Adaptive slot locations in canonical order (GRU layers bottom-up,
    /// then FC layers bottom-up).
    pub fn adaptive_slots(&self) -> Vec<SlotRef> {
        let mut refs = Vec::new();
        for (i, layer) in self.gru.iter().enumerate() {
            if layer.slot.is_adaptive() {
                refs.push(SlotRef::Gru(i));
            }
        }
        for (i, layer) in self.fc.iter().enumerate() {
            if layer.slot.is_adaptive() {
                refs.push(SlotRef::Fc(i));
            }
        }
        refs
    }

    pub fn slot(&self, slot_ref: SlotRef) -> &ActivationSlot {
        match slot_ref {
            SlotRef::Gru(i) => &self.gru[i].slot,
            SlotRef::Fc(i) => &self.fc[i].slot,
        }
    }

    pub fn slot_mut(&mut self, slot_ref: SlotRef) -> &mut ActivationSlot {
        match slot_ref {
            SlotRef::Gru(i) => &mut self.gru[i].slot,
            SlotRef::Fc(i) => &mut self.fc[i].slot,
        }
    }

    /// The APL activation for one (slot, language) pair, if that slot is
    /// adaptive.
    pub fn activation(&self, slot_ref: SlotRef, language: usize) -> Option<&AplActivation> {
        self.slot(slot_ref).language_activation(language)
    }

    /// Registers a new target language: every adaptive slot gains a freshly
    /// initialized activation for it and a fresh head is created, while all
    /// shared weights and other languages' parameters stay untouched.
    pub fn register_language(
        &mut self,
        source: &str,
        target: Language,
        seed: u64,
    ) -> Result<(), ModelError> {
        self.language_index(source)?;
        if self.language_index(&target.name).is_ok() {
            return Err(ModelError::DuplicateLanguage(target.name));
        }
        if target.vocab.is_empty() || target.vocab[0] != BLANK_TOKEN {
            return Err(ModelError::BadVocab);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.push_language(target, &mut rng);
        Ok(())
    }

    /// Inserts a fixed-ReLU bottleneck of width `dim` between the first and
    /// second FC layers; the layer above is re-created at the new width.
    pub fn insert_bottleneck(&mut self, dim: usize, seed: u64) -> Result<(), ModelError> {
        if self.bottleneck_index.is_some() {
            return Err(ModelError::BottleneckPresent);
        }
        if self.fc.len() < 2 {
            return Err(ModelError::TooFewFcLayers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let below_width = self.fc[0].output_size();
        let above_width = self.fc[1].output_size();
        let above_slot = self.fc[1].slot.clone();
        let bottleneck = FcLayer::init(below_width, dim, ActivationSlot::FixedRelu, &mut rng);
        let rebuilt_above = FcLayer::init(dim, above_width, above_slot, &mut rng);
        self.fc[1] = rebuilt_above;
        self.fc.insert(1, bottleneck);
        self.bottleneck_index = Some(1);
        Ok(())
    }

    /// Total number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.param_layout().iter().map(|b| b.len).sum()
    }

    /// Trainable parameters owned by one language: its activations plus its
    /// head.
    pub fn language_parameter_count(&self, language: usize) -> usize {
        self.param_layout()
            .iter()
            .filter(|b| b.id.language() == Some(language))
            .map(|b| b.len)
            .sum()
    }

    /// Canonical parameter layout; the flat vector functions, the gradient
    /// container, and the optimizer all follow this order.
    pub fn param_layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |id: BlockId, len: usize, blocks: &mut Vec<ParamBlock>| {
            blocks.push(ParamBlock { id, offset, len });
            offset += len;
        };
        for (i, layer) in self.conv.iter().enumerate() {
            push(BlockId::ConvW(i), layer.weight_len(), &mut blocks);
        }
        for (i, layer) in self.gru.iter().enumerate() {
            for (reverse, dir) in [(false, &layer.fwd), (true, &layer.bwd)] {
                for (gate, w, u, b) in [
                    (Gate::Update, &dir.w_update, &dir.u_update, &dir.b_update),
                    (Gate::Reset, &dir.w_reset, &dir.u_reset, &dir.b_reset),
                    (Gate::Cand, &dir.w_cand, &dir.u_cand, &dir.b_cand),
                ] {
                    push(
                        BlockId::GruW { layer: i, reverse, gate, recurrent: false },
                        w.data().len(),
                        &mut blocks,
                    );
                    push(
                        BlockId::GruW { layer: i, reverse, gate, recurrent: true },
                        u.data().len(),
                        &mut blocks,
                    );
                    push(BlockId::GruB { layer: i, reverse, gate }, b.len(), &mut blocks);
                }
            }
        }
        for (i, layer) in self.fc.iter().enumerate() {
            push(BlockId::FcW(i), layer.weight.data().len(), &mut blocks);
            push(BlockId::FcB(i), layer.bias.len(), &mut blocks);
        }
        for (l, head) in self.heads.iter().enumerate() {
            push(BlockId::HeadW(l), head.weight.data().len(), &mut blocks);
            push(BlockId::HeadB(l), head.bias.len(), &mut blocks);
        }
        let slots = self.adaptive_slots();
        for l in 0..self.languages.len() {
            for (s, slot_ref) in slots.iter().enumerate() {
                let act = self
                    .activation(*slot_ref, l)
                    .expect("adaptive slots carry every registered language");
                push(BlockId::AplLambda { language: l, slot: s }, act.lambda.len(), &mut blocks);
                push(
                    BlockId::AplBreak { language: l, slot: s },
                    act.breakpoints.len(),
                    &mut blocks,
                );
            }
        }
        blocks
    }

    pub fn block_data(&self, id: BlockId) -> &[f64] {
        match id {
            BlockId::ConvW(i) => &self.conv[i].weight,
            BlockId::GruW { layer, reverse, gate, recurrent } => {
                let dir = if reverse { &self.gru[layer].bwd } else { &self.gru[layer].fwd };
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
                let dir = if reverse { &self.gru[layer].bwd } else { &self.gru[layer].fwd };
                match gate {
                    Gate::Update => &dir.b_update,
                    Gate::Reset => &dir.b_reset,
                    Gate::Cand => &dir.b_cand,
                }
            }
            BlockId::FcW(i) => self.fc[i].weight.data(),
            BlockId::FcB(i) => &self.fc[i].bias,
            BlockId::HeadW(l) => self.heads[l].weight.data(),
            BlockId::HeadB(l) => &self.heads[l].bias,
            BlockId::AplLambda { language, slot } => {
                let slot_ref = self.adaptive_slots()[slot];
                &self.activation(slot_ref, language).expect("populated").lambda
            }
            BlockId::AplBreak { language, slot } => {
                let slot_ref = self.adaptive_slots()[slot];
                &self
                    .activation(slot_ref, language)
                    .expect("populated")
                    .breakpoints
            }
        }
    }

    fn block_data_mut(&mut self, id: BlockId) -> &mut [f64] {
        match id {
            BlockId::ConvW(i) => &mut self.conv[i].weight,
            BlockId::GruW { layer, reverse, gate, recurrent } => {
                let dir = if reverse {
                    &mut self.gru[layer].bwd
                } else {
                    &mut self.gru[layer].fwd
                };
                match (gate, recurrent) {
                    (Gate::Update, false) => dir.w_update.data_mut(),
                    (Gate::Reset, false) => dir.w_reset.data_mut(),
                    (Gate::Cand, false) => dir.w_cand.data_mut(),
                    (Gate::Update, true) => dir.u_update.data_mut(),
                    (Gate::Reset, true) => dir.u_reset.data_mut(),
                    (Gate::Cand, true) => dir.u_cand.data_mut(),
                }
            }
            BlockId::GruB { layer, reverse, gate } => {
                let dir = if reverse {
                    &mut self.gru[layer].bwd
                } else {
                    &mut self.gru[layer].fwd
                };
                match gate {
                    Gate::Update => &mut dir.b_update,
                    Gate::Reset => &mut dir.b_reset,
                    Gate::Cand => &mut dir.b_cand,
                }
            }
            BlockId::FcW(i) => self.fc[i].weight.data_mut(),
            BlockId::FcB(i) => &mut self.fc[i].bias,
            BlockId::HeadW(l) => self.heads[l].weight.data_mut(),
            BlockId::HeadB(l) => &mut self.heads[l].bias,
            BlockId::AplLambda { language, slot } => {
                let slot_ref = self.adaptive_slots()[slot];
                match self.slot_mut(slot_ref) {
                    ActivationSlot::Adaptive { per_language } => {
                        &mut per_language[language].lambda
                    }
                    ActivationSlot::FixedRelu => unreachable!("slot is adaptive"),
                }
            }
            BlockId::AplBreak { language, slot } => {
                let slot_ref = self.adaptive_slots()[slot];
                match self.slot_mut(slot_ref) {
                    ActivationSlot::Adaptive { per_language } => {
                        &mut per_language[language].breakpoints
                    }
                    ActivationSlot::FixedRelu => unreachable!("slot is adaptive"),
                }
            }
        }
    }

    /// All parameters flattened in canonical layout order.
    pub fn param_vector(&self) -> Vec<f64> {
        let layout = self.param_layout();
        let mut out = Vec::with_capacity(layout.iter().map(|b| b.len).sum());
        for block in &layout {
            out.extend_from_slice(self.block_data(block.id));
        }
        out
    }

    pub fn load_param_vector(&mut self, params: &[f64]) -> Result<(), ModelError> {
        let layout = self.param_layout();
        let expected: usize = layout.iter().map(|b| b.len).sum();
        if params.len() != expected {
            return Err(ModelError::BadParameterVector {
                got: params.len(),
                expected,
            });
        }
        for block in &layout {
            self.block_data_mut(block.id)
                .copy_from_slice(&params[block.offset..block.offset + block.len]);
        }
        Ok(())
    }

    /// SHA-256 over the selected parameter blocks' raw bytes, in layout order.
    pub fn hash_blocks(&self, select: impl Fn(&BlockId) -> bool) -> String {
        let mut hasher = Sha256::new();
        for block in self.param_layout() {
            if select(&block.id) {
                for v in self.block_data(block.id) {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Hash of the weights and biases shared across languages.
    pub fn shared_param_hash(&self) -> String {
        self.hash_blocks(BlockId::is_shared)
    }

    /// Stacked coefficient matrix (languages x units) for one adaptive slot.
    pub fn stacked_lambda(&self, slot_ref: SlotRef) -> Option<crate::numeric::Matrix> {
        match self.slot(slot_ref) {
            ActivationSlot::FixedRelu => None,
            ActivationSlot::Adaptive { per_language } => {
                if per_language.is_empty() {
                    return None;
                }
                let m = per_language[0].unit_count();
                Some(crate::numeric::Matrix::from_fn(
                    per_language.len(),
                    m,
                    |l, i| per_language[l].lambda[i],
                ))
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<CrdModel, ModelError> {
        checkpoint::load(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_langs() -> Vec<Language> {
        vec![
            Language::synthetic("alpha", 8),
            Language::synthetic("beta", 6),
        ]
    }

    #[test]
    fn small_preset_matches_table_shape() {
        let model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &two_langs(),
            5,
            1,
        )
        .unwrap();
        assert_eq!(model.conv.len(), 2);
        assert_eq!(model.gru.len(), 2);
        assert_eq!(model.fc.len(), 2);
        assert_eq!(model.heads.len(), 2);
        assert_eq!(model.adaptive_slots(), vec![SlotRef::Gru(1), SlotRef::Fc(0)]);
        assert_eq!(model.gru[0].input_size, 320); // 10 freq bins x 32 channels
        assert_eq!(model.gru[0].hidden_size, 128);
        assert_eq!(model.fc[0].output_size(), 1024);
        assert_eq!(model.heads[0].weight.rows(), 9); // 8 tokens + blank
    }

    #[test]
    fn large_preset_has_three_adaptive_slots() {
        let model = CrdModel::build(
            Preset::Large,
            Preset::Large.default_placement(),
            &two_langs(),
            5,
            1,
        )
        .unwrap();
        assert_eq!(model.conv.len(), 3);
        assert_eq!(model.gru.len(), 3);
        assert_eq!(
            model.adaptive_slots(),
            vec![SlotRef::Gru(1), SlotRef::Gru(2), SlotRef::Fc(0)]
        );
        assert_eq!(model.gru[0].input_size, 320); // 5 freq bins x 64 channels
    }

    #[test]
    fn full_gru_placement_covers_all_layers() {
        let placement = Placement::parse("3GRU,1DNN").unwrap();
        let model = CrdModel::build(Preset::Large, placement, &two_langs(), 5, 1).unwrap();
        assert_eq!(
            model.adaptive_slots(),
            vec![SlotRef::Gru(0), SlotRef::Gru(1), SlotRef::Gru(2), SlotRef::Fc(0)]
        );
    }

    #[test]
    fn placement_beyond_preset_is_rejected() {
        let placement = Placement::parse("3GRU,1DNN").unwrap();
        assert!(matches!(
            CrdModel::build(Preset::Small, placement, &two_langs(), 5, 1),
            Err(ModelError::PlacementOutOfRange { .. })
        ));
    }

    #[test]
    fn placement_parsing() {
        assert_eq!(
            Placement::parse("2GRU,1DNN").unwrap(),
            Placement { gru_from_top: 2, fc_from_bottom: 1 }
        );
        assert_eq!(Placement::parse("none").unwrap(), Placement::none());
        assert_eq!(Placement::parse("1gru , 1dnn").unwrap().label(), "1GRU,1DNN");
        assert!(Placement::parse("banana").is_err());
    }

    #[test]
    fn bottleneck_changes_parameter_count_by_closed_form() {
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &two_langs(),
            5,
            3,
        )
        .unwrap();
        let before = model.parameter_count();
        model.insert_bottleneck(BOTTLENECK_DIM, 4).unwrap();
        let after = model.parameter_count();
        let expected_delta = (1024 * 80 + 80) + (80 * 1024 + 1024) - (1024 * 1024 + 1024);
        assert_eq!(after as i64 - before as i64, expected_delta as i64);
        assert_eq!(model.fc.len(), 3);
        assert_eq!(model.fc[1].output_size(), 80);
        assert_eq!(model.fc[2].input_size(), 80);
        assert_eq!(model.fc[2].output_size(), 1024);
        assert!(matches!(
            model.insert_bottleneck(BOTTLENECK_DIM, 5),
            Err(ModelError::BottleneckPresent)
        ));
    }

    #[test]
    fn register_language_isolates_existing_ones() {
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[Language::synthetic("src", 8)],
            5,
            7,
        )
        .unwrap();
        let shared_before = model.shared_param_hash();
        let src_head_before = model.heads[0].clone();
        model
            .register_language("src", Language::synthetic("tgt", 6), 99)
            .unwrap();
        assert_eq!(model.shared_param_hash(), shared_before);
        assert_eq!(model.heads[0], src_head_before);
        assert_eq!(model.languages.len(), 2);
        // Fresh target activations are near ReLU.
        for slot_ref in model.adaptive_slots() {
            let act = model.activation(slot_ref, 1).unwrap();
            assert!(act.lambda.iter().all(|l| l.abs() < 0.05));
        }
        // Registering the same language again fails.
        assert!(matches!(
            model.register_language("src", Language::synthetic("tgt", 6), 1),
            Err(ModelError::DuplicateLanguage(_))
        ));
        // Unknown source fails.
        assert!(matches!(
            model.register_language("nope", Language::synthetic("other", 6), 1),
            Err(ModelError::UnknownLanguage(_))
        ));
    }

    #[test]
    fn target_trainable_parameter_enumeration() {
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[Language::synthetic("src", 8)],
            5,
            7,
        )
        .unwrap();
        model
            .register_language("src", Language::synthetic("tgt", 6), 99)
            .unwrap();
        let target = model.language_index("tgt").unwrap();
        let slots = model.adaptive_slots().len();
        let vocab = model.languages[target].vocab_size();
        let head_params = 1024 * vocab + vocab;
        assert_eq!(
            model.language_parameter_count(target),
            slots * 2 * 5 + head_params
        );
    }

    #[test]
    fn param_vector_round_trips() {
        let model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &two_langs(),
            5,
            11,
        )
        .unwrap();
        let params = model.param_vector();
        assert_eq!(params.len(), model.parameter_count());
        let mut clone = model.clone();
        clone.load_param_vector(&params).unwrap();
        assert_eq!(clone.param_vector(), params);
        // Wrong length is rejected.
        assert!(matches!(
            clone.load_param_vector(&params[1..]),
            Err(ModelError::BadParameterVector { .. })
        ));
    }

    #[test]
    fn shared_hash_ignores_language_parameters() {
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &two_langs(),
            5,
            13,
        )
        .unwrap();
        let before = model.shared_param_hash();
        // Mutate one language's lambda.
        let slot_ref = model.adaptive_slots()[0];
        if let ActivationSlot::Adaptive { per_language } = model.slot_mut(slot_ref) {
            per_language[0].lambda[0] += 1.0;
        }
        model.heads[1].bias[0] += 3.0;
        assert_eq!(model.shared_param_hash(), before);
        // But mutating a shared weight changes it.
        model.fc[0].bias[0] += 1.0;
        assert_ne!(model.shared_param_hash(), before);
    }

    #[test]
    fn vocab_must_lead_with_blank() {
        assert!(Language::new("x", vec!["a".into()]).is_err());
        assert!(Language::new("x", vec![BLANK_TOKEN.into(), "a".into()]).is_ok());
        let twice = vec![BLANK_TOKEN.into(), BLANK_TOKEN.into()];
        assert!(Language::new("x", twice).is_err());
        let synth = Language::synthetic("x", 3);
        assert_eq!(synth.vocab.len(), 4);
        assert_eq!(synth.vocab[0], BLANK_TOKEN);
    }
}
