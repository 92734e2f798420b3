//! Audio ingestion and frame-level acoustic features.
//!
//! Accepts 16 kHz mono PCM16 WAV only; anything else is rejected rather than
//! resampled so numerics stay bit-stable across platforms. Features are three
//! hand-computable values per frame: log-energy, zero-crossing rate, and
//! delta-log-energy.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::{frame_count, write_atomic};

/// The only accepted input sample rate.
pub const SUPPORTED_SAMPLE_RATE: u32 = 16_000;

/// Energy floor added inside the log so silence maps to a finite constant,
/// ln(1e-10) = -23.0258509...
pub const ENERGY_FLOOR: f64 = 1e-10;

/// Default frame hop in seconds.
pub const DEFAULT_HOP_S: f64 = 0.1;

/// Default analysis window in seconds.
pub const DEFAULT_WIN_S: f64 = 0.1;

/// Number of features per frame produced by [`extract_features`].
pub const FEATURE_DIM: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("clip has no samples")]
    EmptyClip,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A mono 16 kHz audio clip with samples normalized to [-1.0, 1.0].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Per-frame acoustic feature matrix with hop/duration metadata.
///
/// Invariants: `frames.len() == ceil(duration_s / hop_s)`, every row has
/// `dim` entries, and all values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub id: String,
    pub hop_s: f64,
    pub dim: usize,
    pub duration_s: f64,
    pub frames: Vec<Vec<f64>>,
}

impl FrameFeatures {
    /// Number of frames (T).
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.hop_s > 0.0) || !self.hop_s.is_finite() {
            return Err(AudioError::Schema(format!(
                "hop_s must be positive, got {}",
                self.hop_s
            )));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(AudioError::Schema(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if self.dim == 0 {
            return Err(AudioError::Schema("dim must be at least 1".into()));
        }
        let expected = frame_count(self.duration_s, self.hop_s);
        if self.frames.len() != expected {
            return Err(AudioError::Schema(format!(
                "frame count {} does not match ceil(duration/hop) = {}",
                self.frames.len(),
                expected
            )));
        }
        for (t, row) in self.frames.iter().enumerate() {
            if row.len() != self.dim {
                return Err(AudioError::Schema(format!(
                    "ragged frame {}: expected {} features, got {}",
                    t,
                    self.dim,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(AudioError::Schema(format!(
                    "non-finite value in frame {}",
                    t
                )));
            }
        }
        Ok(())
    }
}

/// Load a RIFF/WAV file. Only PCM 16-bit little-endian, mono, 16 kHz is
/// accepted; samples are normalized by 32768 and the id is the file stem.
pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".to_string());
    parse_wav(&bytes, id)
}

fn parse_wav(bytes: &[u8], id: String) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::CorruptFile(
            "file shorter than RIFF header".into(),
        ));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::CorruptFile("missing RIFF/WAVE magic".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let chunk_id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| AudioError::CorruptFile("chunk size overflow".into()))?;
        if body_end > bytes.len() {
            return Err(AudioError::CorruptFile(format!(
                "truncated chunk {:?}",
                String::from_utf8_lossy(chunk_id)
            )));
        }
        let body = &bytes[body_start..body_end];
        match chunk_id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::CorruptFile(
                        "fmt chunk shorter than 16 bytes".into(),
                    ));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned: odd sizes carry a pad byte
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::CorruptFile("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::CorruptFile("missing data chunk".into()))?;

    if format != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "audio format {} (only PCM = 1 supported)",
            format
        )));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (only mono supported)",
            channels
        )));
    }
    if rate != SUPPORTED_SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {} (only {} supported, no resampling)",
            rate, SUPPORTED_SAMPLE_RATE
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} bits per sample (only 16 supported)",
            bits
        )));
    }
    if data.len() % 2 != 0 {
        return Err(AudioError::CorruptFile(
            "data chunk is not whole 16-bit samples".into(),
        ));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Ok(AudioClip {
        id,
        sample_rate: rate,
        samples,
    })
}

/// Extract per-frame features on a grid anchored at t = 0 with half-open
/// windows `[t*hop, t*hop + win)`; the final partial window is clamped to the
/// clip end, not dropped. Features per frame:
/// log-energy `ln(mean(s^2) + 1e-10)`, zero-crossing rate, and
/// delta-log-energy versus the previous frame (0 for frame 0).
pub fn extract_features(
    clip: &AudioClip,
    hop_s: f64,
    win_s: f64,
) -> Result<FrameFeatures, AudioError> {
    if clip.samples.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    if !(hop_s > 0.0) || !hop_s.is_finite() {
        return Err(AudioError::InvalidParams(format!(
            "hop_s must be positive, got {}",
            hop_s
        )));
    }
    if !(win_s >= hop_s) || !win_s.is_finite() {
        return Err(AudioError::InvalidParams(format!(
            "win_s must be at least hop_s, got win_s={} hop_s={}",
            win_s, hop_s
        )));
    }

    let n = clip.samples.len();
    let rate = clip.sample_rate as f64;
    let duration_s = clip.duration_s();
    let t_frames = frame_count(duration_s, hop_s);

    let mut frames = Vec::with_capacity(t_frames);
    let mut prev_log_energy = 0.0f64;
    for t in 0..t_frames {
        let t0 = t as f64 * hop_s;
        let start = ((t0 * rate).round() as usize).min(n - 1);
        let end = (((t0 + win_s) * rate).round() as usize).clamp(start + 1, n);
        let window = &clip.samples[start..end];

        let mean_sq =
            window.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / window.len() as f64;
        let log_energy = (mean_sq + ENERGY_FLOOR).ln();
        let zcr = zero_crossing_rate(window);
        let delta = if t == 0 {
            0.0
        } else {
            log_energy - prev_log_energy
        };
        prev_log_energy = log_energy;
        frames.push(vec![log_energy, zcr, delta]);
    }

    Ok(FrameFeatures {
        id: clip.id.clone(),
        hop_s,
        dim: FEATURE_DIM,
        duration_s,
        frames,
    })
}

/// Crossings per sample step, with sign(0) inheriting the previous sign so a
/// zero sample never flips and all-zero windows score 0.
fn zero_crossing_rate(window: &[f32]) -> f64 {
    if window.len() < 2 {
        return 0.0;
    }
    let mut crossings = 0usize;
    let mut prev = 0i8;
    for &s in window {
        let cur = if s > 0.0 {
            1
        } else if s < 0.0 {
            -1
        } else {
            prev
        };
        if prev != 0 && cur != prev {
            crossings += 1;
        }
        prev = cur;
    }
    crossings as f64 / (window.len() - 1) as f64
}

/// Read a Feature JSON file (see the writer for the format).
pub fn load_features_json(path: &Path) -> Result<FrameFeatures, AudioError> {
    let text = std::fs::read_to_string(path)?;
    let features: FrameFeatures =
        serde_json::from_str(&text).map_err(|e| AudioError::Schema(e.to_string()))?;
    features.validate()?;
    Ok(features)
}

/// Write a Feature JSON file:
/// `{"id": str, "hop_s": num, "dim": int, "duration_s": num, "frames": [[num,...],...]}`
/// with numbers as shortest round-trip decimal doubles. Round-trips with
/// [`load_features_json`] bit-exactly for finite doubles.
pub fn save_features_json(features: &FrameFeatures, path: &Path) -> Result<(), AudioError> {
    features.validate()?;
    let text = serde_json::to_string(features).map_err(|e| AudioError::Schema(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
