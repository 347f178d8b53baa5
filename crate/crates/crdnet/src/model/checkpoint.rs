//! Self-describing binary checkpoint format.
//!
//! Layout (all integers little-endian): magic "CRDM", format version, preset
//! tag, placement, APL unit count, bottleneck marker, then a layer table
//! with kinds and shapes followed by the shared parameters, and finally one
//! record per language holding its name, vocabulary, head, and the APL
//! coefficients for every adaptive slot. Round trips are bit-exact.

use super::layers::{BiGruLayer, ConvLayer, FcLayer, GruDirection, Head, CONV_KERNEL};
use super::{CrdModel, Language, ModelError, Placement, Preset};
use crate::activations::{ActivationSlot, AplActivation};
use crate::numeric::Matrix;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CRDM";
const VERSION: u32 = 1;

const SLOT_FIXED: u8 = 0;
const SLOT_ADAPTIVE: u8 = 1;

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::MalformedCheckpoint(msg.into())
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<(), ModelError> {
        Ok(self.inner.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<(), ModelError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<(), ModelError> {
        for v in vs {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn string(&mut self, s: &str) -> Result<(), ModelError> {
        self.u32(s.len() as u32)?;
        Ok(self.inner.write_all(s.as_bytes())?)
    }
    fn matrix(&mut self, m: &Matrix) -> Result<(), ModelError> {
        self.u32(m.rows() as u32)?;
        self.u32(m.cols() as u32)?;
        self.f64s(m.data())
    }
    fn slot_kind(&mut self, slot: &ActivationSlot) -> Result<(), ModelError> {
        self.u8(if slot.is_adaptive() { SLOT_ADAPTIVE } else { SLOT_FIXED })
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, ModelError> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(count);
        let mut b = [0u8; 8];
        for _ in 0..count {
            self.inner.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
    fn string(&mut self) -> Result<String, ModelError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| bad("invalid utf-8 string"))
    }
    fn matrix(&mut self) -> Result<Matrix, ModelError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f64s(rows * cols)?;
        Matrix::from_vec(rows, cols, data).map_err(|_| bad("matrix shape mismatch"))
    }
    fn slot_kind(&mut self) -> Result<bool, ModelError> {
        match self.u8()? {
            SLOT_FIXED => Ok(false),
            SLOT_ADAPTIVE => Ok(true),
            other => Err(bad(format!("unknown slot kind {other}"))),
        }
    }
}

fn write_direction<W: Write>(w: &mut Writer<W>, dir: &GruDirection) -> Result<(), ModelError> {
    w.matrix(&dir.w_update)?;
    w.matrix(&dir.w_reset)?;
    w.matrix(&dir.w_cand)?;
    w.matrix(&dir.u_update)?;
    w.matrix(&dir.u_reset)?;
    w.matrix(&dir.u_cand)?;
    w.u32(dir.b_update.len() as u32)?;
    w.f64s(&dir.b_update)?;
    w.f64s(&dir.b_reset)?;
    w.f64s(&dir.b_cand)
}

fn read_direction<R: Read>(r: &mut Reader<R>) -> Result<GruDirection, ModelError> {
    let w_update = r.matrix()?;
    let w_reset = r.matrix()?;
    let w_cand = r.matrix()?;
    let u_update = r.matrix()?;
    let u_reset = r.matrix()?;
    let u_cand = r.matrix()?;
    let blen = r.u32()? as usize;
    Ok(GruDirection {
        w_update,
        w_reset,
        w_cand,
        u_update,
        u_reset,
        u_cand,
        b_update: r.f64s(blen)?,
        b_reset: r.f64s(blen)?,
        b_cand: r.f64s(blen)?,
    })
}

pub fn save(model: &CrdModel, path: &Path) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    w.inner.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(match model.preset {
        Preset::Small => 0,
        Preset::Large => 1,
    })?;
    w.u32(model.placement.gru_from_top as u32)?;
    w.u32(model.placement.fc_from_bottom as u32)?;
    w.u32(model.apl_units as u32)?;
    match model.bottleneck_index {
        None => w.u8(0)?,
        Some(idx) => {
            w.u8(1)?;
            w.u32(idx as u32)?;
        }
    }

    w.u32(model.conv.len() as u32)?;
    for layer in &model.conv {
        w.u32(layer.out_channels as u32)?;
        w.u32(layer.in_channels as u32)?;
        w.slot_kind(&layer.slot)?;
        w.f64s(&layer.weight)?;
    }
    w.u32(model.gru.len() as u32)?;
    for layer in &model.gru {
        w.u32(layer.input_size as u32)?;
        w.u32(layer.hidden_size as u32)?;
        w.slot_kind(&layer.slot)?;
        write_direction(&mut w, &layer.fwd)?;
        write_direction(&mut w, &layer.bwd)?;
    }
    w.u32(model.fc.len() as u32)?;
    for layer in &model.fc {
        w.slot_kind(&layer.slot)?;
        w.matrix(&layer.weight)?;
        w.f64s(&layer.bias)?;
    }

    w.u32(model.languages.len() as u32)?;
    let slots = model.adaptive_slots();
    for (l, lang) in model.languages.iter().enumerate() {
        w.string(&lang.name)?;
        w.u32(lang.vocab.len() as u32)?;
        for token in &lang.vocab {
            w.string(token)?;
        }
        w.matrix(&model.heads[l].weight)?;
        w.f64s(&model.heads[l].bias)?;
        w.u32(slots.len() as u32)?;
        for slot_ref in &slots {
            let act = model
                .activation(*slot_ref, l)
                .expect("adaptive slots hold every language");
            w.u32(act.unit_count() as u32)?;
            w.f64s(&act.lambda)?;
            w.f64s(&act.breakpoints)?;
        }
    }
    w.inner.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CrdModel, ModelError> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let preset = match r.u8()? {
        0 => Preset::Small,
        1 => Preset::Large,
        other => return Err(bad(format!("unknown preset tag {other}"))),
    };
    let placement = Placement {
        gru_from_top: r.u32()? as usize,
        fc_from_bottom: r.u32()? as usize,
    };
    let apl_units = r.u32()? as usize;
    let bottleneck_index = if r.u8()? == 1 {
        Some(r.u32()? as usize)
    } else {
        None
    };

    let conv_count = r.u32()? as usize;
    let mut conv = Vec::with_capacity(conv_count);
    for _ in 0..conv_count {
        let out_channels = r.u32()? as usize;
        let in_channels = r.u32()? as usize;
        let adaptive = r.slot_kind()?;
        let weight = r.f64s(out_channels * in_channels * CONV_KERNEL * CONV_KERNEL)?;
        conv.push(ConvLayer {
            out_channels,
            in_channels,
            weight,
            slot: if adaptive {
                ActivationSlot::Adaptive { per_language: Vec::new() }
            } else {
                ActivationSlot::FixedRelu
            },
        });
    }
    let gru_count = r.u32()? as usize;
    let mut gru = Vec::with_capacity(gru_count);
    for _ in 0..gru_count {
        let input_size = r.u32()? as usize;
        let hidden_size = r.u32()? as usize;
        let adaptive = r.slot_kind()?;
        let fwd = read_direction(&mut r)?;
        let bwd = read_direction(&mut r)?;
        gru.push(BiGruLayer {
            input_size,
            hidden_size,
            fwd,
            bwd,
            slot: if adaptive {
                ActivationSlot::Adaptive { per_language: Vec::new() }
            } else {
                ActivationSlot::FixedRelu
            },
        });
    }
    let fc_count = r.u32()? as usize;
    let mut fc = Vec::with_capacity(fc_count);
    for _ in 0..fc_count {
        let adaptive = r.slot_kind()?;
        let weight = r.matrix()?;
        let bias = r.f64s(weight.rows())?;
        fc.push(FcLayer {
            weight,
            bias,
            slot: if adaptive {
                ActivationSlot::Adaptive { per_language: Vec::new() }
            } else {
                ActivationSlot::FixedRelu
            },
        });
    }

    let mut model = CrdModel {
        preset,
        placement,
        conv,
        gru,
        fc,
        bottleneck_index,
        languages: Vec::new(),
        heads: Vec::new(),
        apl_units,
    };

    let lang_count = r.u32()? as usize;
    for _ in 0..lang_count {
        let name = r.string()?;
        let vocab_len = r.u32()? as usize;
        let mut vocab = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            vocab.push(r.string()?);
        }
        let weight = r.matrix()?;
        let bias = r.f64s(weight.rows())?;
        let slot_count = r.u32()? as usize;
        let expected_slots = model.adaptive_slots();
        if slot_count != expected_slots.len() {
            return Err(bad(format!(
                "language {name} lists {slot_count} slots, model has {}",
                expected_slots.len()
            )));
        }
        let mut acts = Vec::with_capacity(slot_count);
        for _ in 0..slot_count {
            let m = r.u32()? as usize;
            let lambda = r.f64s(m)?;
            let breakpoints = r.f64s(m)?;
            acts.push(
                AplActivation::new(lambda, breakpoints)
                    .map_err(|e| bad(format!("activation record: {e}")))?,
            );
        }
        model.languages.push(Language { name, vocab });
        model.heads.push(Head { weight, bias });
        for (slot_ref, act) in expected_slots.iter().zip(acts) {
            if let ActivationSlot::Adaptive { per_language } = model.slot_mut(*slot_ref) {
                per_language.push(act);
            }
        }
    }
    // Every adaptive slot must now carry one activation per language.
    for slot_ref in model.adaptive_slots() {
        if let ActivationSlot::Adaptive { per_language } = model.slot(slot_ref) {
            if per_language.len() != model.languages.len() {
                return Err(bad("adaptive slot missing a language record"));
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BOTTLENECK_DIM;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = CrdModel::build(
            Preset::Small,
            Preset::Small.default_placement(),
            &[Language::synthetic("a", 5), Language::synthetic("b", 7)],
            4,
            77,
        )
        .unwrap();
        model.insert_bottleneck(BOTTLENECK_DIM, 78).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.crdm");
        model.save(&path).unwrap();
        let loaded = CrdModel::load(&path).unwrap();

        assert_eq!(loaded.param_vector(), model.param_vector());
        assert_eq!(loaded.languages, model.languages);
        assert_eq!(loaded.bottleneck_index, model.bottleneck_index);
        assert_eq!(loaded.placement, model.placement);

        // Saving the loaded model reproduces identical bytes.
        let path2 = dir.path().join("model2.crdm");
        loaded.save(&path2).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.crdm");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            CrdModel::load(&path),
            Err(ModelError::MalformedCheckpoint(_))
        ));
    }
}
