//! Binary dataset container: magic "MLDS", version, language record, then
//! one label block plus one embedded feature ("FBNK") block per utterance.

use super::{Dataset, HarnessError, Utterance};
use crate::ctc::LabelSequence;
use crate::features::{read_fbnk, write_fbnk};
use crate::model::Language;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MLDS";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::MalformedDataset(msg.into())
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_string(&mut w, &dataset.language.name)?;
    w.write_all(&(dataset.language.vocab.len() as u32).to_le_bytes())?;
    for token in &dataset.language.vocab {
        write_string(&mut w, token)?;
    }
    w.write_all(&(dataset.utterances.len() as u32).to_le_bytes())?;
    for utt in &dataset.utterances {
        w.write_all(&(utt.labels.tokens.len() as u32).to_le_bytes())?;
        for &t in &utt.labels.tokens {
            w.write_all(&(t as u32).to_le_bytes())?;
        }
        write_fbnk(&mut w, &utt.features)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, HarnessError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let name = read_string(&mut r)?;
    let vocab_len = read_u32(&mut r)? as usize;
    let mut vocab = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        vocab.push(read_string(&mut r)?);
    }
    let language = Language::new(&name, vocab).map_err(|e| bad(e.to_string()))?;
    let count = read_u32(&mut r)? as usize;
    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let label_len = read_u32(&mut r)? as usize;
        let mut tokens = Vec::with_capacity(label_len);
        for _ in 0..label_len {
            tokens.push(read_u32(&mut r)? as usize);
        }
        let features = read_fbnk(&mut r, &name)?;
        utterances.push(Utterance {
            features,
            labels: LabelSequence::new(tokens, name.clone()),
        });
    }
    Ok(Dataset { language, utterances })
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<(), HarnessError> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String, HarnessError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("invalid utf-8"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, HarnessError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_micro_language, MicroLanguageSpec};

    #[test]
    fn dataset_round_trip_and_byte_determinism() {
        let spec = MicroLanguageSpec {
            name: "rt".into(),
            vocab_size: 5,
            family_seed: 3,
            relatedness: None,
            frames_per_token: (2, 3),
            noise_std: 0.1,
            utterance_length: (1, 4),
        };
        let ds = generate_micro_language(&spec, 9, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.mld");
        let path_b = dir.path().join("b.mld");
        write_dataset(&path_a, &ds).unwrap();
        write_dataset(&path_b, &ds).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());

        let back = read_dataset(&path_a).unwrap();
        assert_eq!(back.language, ds.language);
        assert_eq!(back.utterances.len(), ds.utterances.len());
        for (a, b) in back.utterances.iter().zip(&ds.utterances) {
            assert_eq!(a.labels.tokens, b.labels.tokens);
            assert_eq!(a.features.frames.data(), b.features.frames.data());
            assert_eq!(a.features.frame_shift.to_bits(), b.features.frame_shift.to_bits());
        }
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.mld");
        std::fs::write(&path, b"nonsense").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
