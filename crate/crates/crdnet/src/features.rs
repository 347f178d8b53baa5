//! Log-Mel filterbank front end.
//!
//! Converts raw audio into 40-dimensional log-Mel frames using a 25 ms
//! sliding window with a 10 ms shift. Conventions the pipeline fixes (and
//! that telephone-bandwidth audio at 8 kHz motivates): Hamming analysis
//! window, FFT size = next power of two above the window length, a 1e-10
//! energy floor before the natural log, no pre-emphasis and no mean
//! normalization.

use crate::numeric::Matrix;
use rustfft::{num_complex::Complex, FftPlanner};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MEL_BANDS: usize = 40;
pub const WINDOW_MS: f64 = 25.0;
pub const HOP_MS: f64 = 10.0;
pub const ENERGY_FLOOR: f64 = 1e-10;
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

const FBNK_MAGIC: &[u8; 4] = b"FBNK";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("audio too short: {samples} samples, one window needs {window}")]
    AudioTooShort { samples: usize, window: usize },
    #[error("window ({window_ms} ms) must be at least the hop ({hop_ms} ms) and both positive")]
    BadFraming { window_ms: f64, hop_ms: f64 },
    #[error("unsupported sample rate {0} Hz (expected 8000 or 16000)")]
    UnsupportedSampleRate(u32),
    #[error("empty audio clip")]
    EmptyClip,
    #[error("malformed wav file: {0}")]
    MalformedWav(String),
    #[error("malformed feature file: {0}")]
    MalformedFeatureFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// A T x 40 matrix of log-Mel energies for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Matrix,
    pub frame_shift: f64,
    pub language: String,
}

impl FeatureSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hamming,
    Rectangular,
}

fn window_coefficients(window: Window, len: usize) -> Vec<f64> {
    match window {
        Window::Rectangular => vec![1.0; len],
        Window::Hamming => (0..len)
            .map(|n| {
                0.54 - 0.46
                    * (2.0 * std::f64::consts::PI * n as f64 / (len as f64 - 1.0)).cos()
            })
            .collect(),
    }
}

/// Number of frames for a signal of `len` samples: `1 + floor((len - win) / hop)`.
pub fn frame_count(len: usize, win_samples: usize, hop_samples: usize) -> usize {
    if len < win_samples {
        0
    } else {
        1 + (len - win_samples) / hop_samples
    }
}

/// Slices the clip into overlapping frames and applies the analysis window.
pub fn frame_signal(
    clip: &AudioClip,
    window_ms: f64,
    hop_ms: f64,
    window: Window,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    if !(hop_ms > 0.0) || window_ms < hop_ms {
        return Err(FeatureError::BadFraming { window_ms, hop_ms });
    }
    if clip.samples.is_empty() {
        return Err(FeatureError::EmptyClip);
    }
    let win = (window_ms * clip.sample_rate as f64 / 1000.0).round() as usize;
    let hop = (hop_ms * clip.sample_rate as f64 / 1000.0).round() as usize;
    if clip.samples.len() < win {
        return Err(FeatureError::AudioTooShort {
            samples: clip.samples.len(),
            window: win,
        });
    }
    let coeffs = window_coefficients(window, win);
    let count = frame_count(clip.samples.len(), win, hop);
    let mut frames = Vec::with_capacity(count);
    for f in 0..count {
        let start = f * hop;
        let frame: Vec<f64> = clip.samples[start..start + win]
            .iter()
            .zip(&coeffs)
            .map(|(s, w)| s * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// Triangular Mel filters spanning [0, sample_rate / 2]; one row per band,
/// one column per FFT bin up to the Nyquist bin.
pub fn mel_filterbank(sample_rate: u32, fft_size: usize) -> Vec<Vec<f64>> {
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_points: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| {
            let mel = hz_to_mel(0.0)
                + (hz_to_mel(nyquist) - hz_to_mel(0.0)) * i as f64 / (MEL_BANDS + 1) as f64;
            mel_to_hz(mel) * fft_size as f64 / sample_rate as f64
        })
        .collect();

    let mut bank = Vec::with_capacity(MEL_BANDS);
    for i in 0..MEL_BANDS {
        let (left, center, right) = (mel_points[i], mel_points[i + 1], mel_points[i + 2]);
        let mut filter = vec![0.0; bins];
        for (bin, weight) in filter.iter_mut().enumerate() {
            let f = bin as f64;
            if f >= left && f < center && center > left {
                *weight = (f - left) / (center - left);
            } else if f >= center && f <= right && right > center {
                *weight = (right - f) / (right - center);
            }
        }
        bank.push(filter);
    }
    bank
}

/// Center frequency in Hz of each Mel band.
pub fn mel_filter_centers_hz(sample_rate: u32) -> Vec<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    (1..=MEL_BANDS)
        .map(|i| {
            let mel = hz_to_mel(0.0)
                + (hz_to_mel(nyquist) - hz_to_mel(0.0)) * i as f64 / (MEL_BANDS + 1) as f64;
            mel_to_hz(mel)
        })
        .collect()
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Full front end: framing, power spectrum, Mel integration, floored log.
pub fn log_mel(clip: &AudioClip, language: &str) -> Result<FeatureSequence, FeatureError> {
    if clip.sample_rate != 8000 && clip.sample_rate != 16000 {
        return Err(FeatureError::UnsupportedSampleRate(clip.sample_rate));
    }
    let frames = frame_signal(clip, WINDOW_MS, HOP_MS, Window::Hamming)?;
    let win = frames[0].len();
    let fft_size = win.next_power_of_two();
    let bins = fft_size / 2 + 1;
    let bank = mel_filterbank(clip.sample_rate, fft_size);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);

    let mut out = Matrix::zeros(frames.len(), MEL_BANDS);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for (t, frame) in frames.iter().enumerate() {
        for (slot, &s) in buf.iter_mut().zip(frame.iter()) {
            *slot = Complex::new(s, 0.0);
        }
        for slot in buf.iter_mut().skip(frame.len()) {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
        let row = out.row_mut(t);
        for (band, filter) in bank.iter().enumerate() {
            let mut energy = 0.0;
            for (w, p) in filter.iter().zip(&power) {
                energy += w * p;
            }
            row[band] = energy.max(ENERGY_FLOOR).ln();
        }
    }
    Ok(FeatureSequence {
        frames: out,
        frame_shift: HOP_MS / 1000.0,
        language: language.to_string(),
    })
}

/// Reads a mono 16-bit signed little-endian PCM WAV file.
pub fn read_wav(path: &Path) -> Result<AudioClip, FeatureError> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: &str| FeatureError::MalformedWav(msg.to_string());
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| bad("chunk overruns file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad("expected mono 16-bit PCM"));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let sample_rate = sample_rate.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip { samples, sample_rate })
}

/// Writes a FeatureSequence as a flat binary file: "FBNK", u32 frame count,
/// u32 band count, f64 frame shift, then row-major f64 frames.
pub fn write_fbnk<W: Write>(writer: &mut W, feats: &FeatureSequence) -> Result<(), FeatureError> {
    writer.write_all(FBNK_MAGIC)?;
    writer.write_all(&(feats.frames.rows() as u32).to_le_bytes())?;
    writer.write_all(&(feats.frames.cols() as u32).to_le_bytes())?;
    writer.write_all(&feats.frame_shift.to_le_bytes())?;
    for v in feats.frames.data() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_fbnk<R: Read>(reader: &mut R, language: &str) -> Result<FeatureSequence, FeatureError> {
    let bad = |msg: &str| FeatureError::MalformedFeatureFile(msg.to_string());
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != FBNK_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    reader.read_exact(&mut u32buf)?;
    let frames = u32::from_le_bytes(u32buf) as usize;
    reader.read_exact(&mut u32buf)?;
    let bands = u32::from_le_bytes(u32buf) as usize;
    if bands != MEL_BANDS {
        return Err(bad("unexpected band count"));
    }
    let mut f64buf = [0u8; 8];
    reader.read_exact(&mut f64buf)?;
    let frame_shift = f64::from_le_bytes(f64buf);
    let mut data = Vec::with_capacity(frames * bands);
    for _ in 0..frames * bands {
        reader.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    Ok(FeatureSequence {
        frames: Matrix::from_vec(frames, bands, data)
            .map_err(|_| bad("truncated frame data"))?,
        frame_shift,
        language: language.to_string(),
    })
}

pub fn write_fbnk_file(path: &Path, feats: &FeatureSequence) -> Result<(), FeatureError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_fbnk(&mut file, feats)
}

pub fn read_fbnk_file(path: &Path, language: &str) -> Result<FeatureSequence, FeatureError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_fbnk(&mut file, language)
}
