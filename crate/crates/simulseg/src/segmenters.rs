//! Baseline segmentation strategies and candidate perturbation.
//!
//! All constructors funnel through [`Segmentation::new`], which checks the
//! type invariants: strictly increasing boundaries in (0, duration], final
//! boundary exactly at the clip end, and every segment at least as long as
//! the recorded minimum-length floor.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{FrameFeatures, ENERGY_FLOOR};
use crate::util::TIME_EPS;

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("chunk length must be positive, got {0}")]
    NonPositiveChunk(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("time {time} beyond clip duration {duration}")]
    OutOfRange { time: f64, duration: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A half-open chunk of the clip, `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

/// Strictly increasing boundary times over a clip. Each boundary ends a
/// segment; the last boundary equals the clip duration, so the segments
/// `[prev, next)` (with prev starting at 0) cover the clip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    clip_duration_s: f64,
    boundaries: Vec<f64>,
    min_seg_floor: f64,
}

impl Segmentation {
    /// Validate and construct. `min_seg_floor` records the minimum segment
    /// length guaranteed at construction; constructors that cannot guarantee
    /// their nominal minimum near the clip end (forced breaks, final append)
    /// record the realized minimum instead.
    pub fn new(
        clip_duration_s: f64,
        boundaries: Vec<f64>,
        min_seg_floor: f64,
    ) -> Result<Self, SegmentError> {
        if !(clip_duration_s > 0.0) || !clip_duration_s.is_finite() {
            return Err(SegmentError::InvalidSegmentation(format!(
                "clip duration must be positive, got {}",
                clip_duration_s
            )));
        }
        if boundaries.is_empty() {
            return Err(SegmentError::InvalidSegmentation(
                "boundary list must at least contain the clip end".into(),
            ));
        }
        let mut boundaries = boundaries;
        let last = *boundaries.last().unwrap();
        if (last - clip_duration_s).abs() > TIME_EPS {
            return Err(SegmentError::InvalidSegmentation(format!(
                "final boundary {} must equal clip duration {}",
                last, clip_duration_s
            )));
        }
        *boundaries.last_mut().unwrap() = clip_duration_s;
        let mut prev = 0.0f64;
        for &b in &boundaries {
            if !b.is_finite() || b <= 0.0 {
                return Err(SegmentError::InvalidSegmentation(format!(
                    "boundary {} outside (0, duration]",
                    b
                )));
            }
            if b <= prev {
                return Err(SegmentError::InvalidSegmentation(format!(
                    "boundaries not strictly increasing at {}",
                    b
                )));
            }
            if b - prev < min_seg_floor - TIME_EPS {
                return Err(SegmentError::InvalidSegmentation(format!(
                    "segment [{}, {}) shorter than floor {}",
                    prev, b, min_seg_floor
                )));
            }
            prev = b;
        }
        Ok(Self {
            clip_duration_s,
            boundaries,
            min_seg_floor,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.clip_duration_s
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn min_seg_floor(&self) -> f64 {
        self.min_seg_floor
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        let starts = std::iter::once(0.0).chain(self.boundaries.iter().copied());
        starts
            .zip(self.boundaries.iter().copied())
            .map(|(start_s, end_s)| Segment { start_s, end_s })
    }
}

/// Boundaries at `chunk_s, 2*chunk_s, ...` plus the clip end if it is not
/// already a multiple.
pub fn fixed_length(clip_duration_s: f64, chunk_s: f64) -> Result<Segmentation, SegmentError> {
    if !(chunk_s > 0.0) || !chunk_s.is_finite() {
        return Err(SegmentError::NonPositiveChunk(chunk_s));
    }
    if !(clip_duration_s > 0.0) || !clip_duration_s.is_finite() {
        return Err(SegmentError::InvalidParams(format!(
            "clip duration must be positive, got {}",
            clip_duration_s
        )));
    }
    let mut boundaries = Vec::new();
    let mut k = 1u64;
    loop {
        let b = k as f64 * chunk_s;
        if b < clip_duration_s - TIME_EPS {
            boundaries.push(b);
            k += 1;
        } else {
            break;
        }
    }
    boundaries.push(clip_duration_s);
    Segmentation::new(clip_duration_s, boundaries, 0.0)
}

/// Energy-threshold VAD settings. A frame is silent when its log-energy is
/// below `ln(1e-10) + energy_floor_offset_nats`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VadConfig {
    pub energy_floor_offset_nats: f64,
    pub min_silence_s: f64,
    pub min_seg_s: f64,
    pub max_seg_s: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            energy_floor_offset_nats: 2.0,
            min_silence_s: 0.3,
            min_seg_s: 1.0,
            max_seg_s: 10.0,
        }
    }
}

/// Segment on energy-threshold silence: maximal silent runs at least
/// `min_silence_s` long propose a boundary at the run's midpoint frame;
/// proposals closer than `min_seg_s` to the previous boundary are dropped;
/// whenever an open segment would exceed `max_seg_s` a forced boundary is
/// inserted exactly `max_seg_s` after the previous one; the clip end is
/// always the final boundary.
pub fn vad_segment(
    features: &FrameFeatures,
    cfg: &VadConfig,
) -> Result<Segmentation, SegmentError> {
    let hop = features.hop_s;
    if cfg.min_silence_s < hop - TIME_EPS {
        return Err(SegmentError::InvalidParams(format!(
            "min_silence_s {} must be at least the frame hop {}",
            cfg.min_silence_s, hop
        )));
    }
    if !(cfg.min_seg_s > 0.0) || !(cfg.min_seg_s < cfg.max_seg_s) {
        return Err(SegmentError::InvalidParams(format!(
            "need 0 < min_seg_s < max_seg_s, got {} and {}",
            cfg.min_seg_s, cfg.max_seg_s
        )));
    }
    if features.dim == 0 || features.is_empty() {
        return Err(SegmentError::InvalidParams("features are empty".into()));
    }

    let threshold = ENERGY_FLOOR.ln() + cfg.energy_floor_offset_nats;
    let silent: Vec<bool> = features
        .frames
        .iter()
        .map(|row| row[0] < threshold)
        .collect();

    // midpoints of maximal silent runs of sufficient duration
    let mut proposals = Vec::new();
    let mut run_start: Option<usize> = None;
    for t in 0..=silent.len() {
        let is_silent = t < silent.len() && silent[t];
        match (run_start, is_silent) {
            (None, true) => run_start = Some(t),
            (Some(i), false) => {
                if (t - i) as f64 * hop >= cfg.min_silence_s - TIME_EPS {
                    proposals.push(((i + t) / 2) as f64 * hop);
                }
                run_start = None;
            }
            _ => {}
        }
    }

    let duration = features.duration_s;
    let boundaries = schedule_boundaries(duration, &proposals, cfg.min_seg_s, cfg.max_seg_s);
    let floor = realized_floor(&boundaries, cfg.min_seg_s);
    Segmentation::new(duration, boundaries, floor)
}

/// Walk proposals in time order, interleaving forced breaks on the exact
/// `anchor + k*max_seg` grid so that with no proposals the output matches
/// `fixed_length(duration, max_seg)` bit-for-bit.
fn schedule_boundaries(duration: f64, proposals: &[f64], min_seg: f64, max_seg: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut prev = 0.0f64;
    let mut anchor = 0.0f64; // last accepted proposal (or clip start)
    let mut forced = 0u64; // forced breaks since anchor
    for &p in proposals {
        if p <= 0.0 || p >= duration - TIME_EPS {
            continue;
        }
        loop {
            let next_forced = anchor + (forced + 1) as f64 * max_seg;
            if p - prev > max_seg + TIME_EPS {
                out.push(next_forced);
                prev = next_forced;
                forced += 1;
            } else {
                break;
            }
        }
        if p - prev >= min_seg - TIME_EPS {
            out.push(p);
            prev = p;
            anchor = p;
            forced = 0;
        }
    }
    loop {
        let next_forced = anchor + (forced + 1) as f64 * max_seg;
        if duration - prev > max_seg + TIME_EPS {
            out.push(next_forced);
            prev = next_forced;
            forced += 1;
        } else {
            break;
        }
    }
    out.push(duration);
    out
}

/// The largest floor the boundary list actually satisfies, capped at the
/// nominal minimum. Forced tails near the clip end can undercut the nominal
/// value, and the recorded floor must hold for every segment.
fn realized_floor(boundaries: &[f64], nominal: f64) -> f64 {
    let mut floor = nominal;
    let mut prev = 0.0;
    for &b in boundaries {
        floor = floor.min(b - prev);
        prev = b;
    }
    floor.max(0.0)
}

/// Import a Segment TSV file (`start_s<TAB>end_s` lines, ascending).
/// Gaps between listed segments are merged into the preceding segment, so
/// the boundary between consecutive segments is the next segment's start;
/// the final boundary is forced to the clip end.
pub fn load_external_segmentation(
    path: &Path,
    clip_duration_s: f64,
) -> Result<Segmentation, SegmentError> {
    if !(clip_duration_s > 0.0) || !clip_duration_s.is_finite() {
        return Err(SegmentError::InvalidParams(format!(
            "clip duration must be positive, got {}",
            clip_duration_s
        )));
    }
    let text = std::fs::read_to_string(path)?;
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (start, end) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(SegmentError::Schema(format!(
                    "line {}: expected start<TAB>end",
                    lineno + 1
                )))
            }
        };
        let start: f64 = start.trim().parse().map_err(|_| {
            SegmentError::Schema(format!("line {}: bad start time {:?}", lineno + 1, start))
        })?;
        let end: f64 = end.trim().parse().map_err(|_| {
            SegmentError::Schema(format!("line {}: bad end time {:?}", lineno + 1, end))
        })?;
        if !start.is_finite() || !end.is_finite() || start < 0.0 || start >= end {
            return Err(SegmentError::Schema(format!(
                "line {}: invalid span {} .. {}",
                lineno + 1,
                start,
                end
            )));
        }
        if end > clip_duration_s + 1e-6 {
            return Err(SegmentError::OutOfRange {
                time: end,
                duration: clip_duration_s,
            });
        }
        if let Some(&(_, prev_end)) = spans.last() {
            if start < prev_end - TIME_EPS {
                return Err(SegmentError::Schema(format!(
                    "line {}: segment start {} overlaps previous end {}",
                    lineno + 1,
                    start,
                    prev_end
                )));
            }
        }
        spans.push((start, end));
    }
    if spans.is_empty() {
        return Err(SegmentError::Schema("no segments in file".into()));
    }
    let mut boundaries: Vec<f64> = spans.iter().skip(1).map(|&(start, _)| start).collect();
    boundaries.retain(|&b| b > 0.0 && b < clip_duration_s - TIME_EPS);
    boundaries.push(clip_duration_s);
    Segmentation::new(clip_duration_s, boundaries, 0.0)
        .map_err(|e| SegmentError::Schema(e.to_string()))
}

/// Shift each non-final boundary by a deterministic pseudo-random offset
/// uniform in [-jitter_s, +jitter_s], then re-sort, clamp into the open clip
/// interval, dedupe, and drop boundaries violating the input's min-length
/// floor. The final boundary is unchanged.
pub fn perturb_segmentation(seg: &Segmentation, jitter_s: f64, seed: u64) -> Segmentation {
    let duration = seg.duration_s();
    let floor = seg.min_seg_floor();
    let jitter = jitter_s.max(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let interior = &seg.boundaries()[..seg.boundaries().len() - 1];
    let mut moved: Vec<f64> = interior
        .iter()
        .map(|&b| {
            let offset = (rng.gen::<f64>() * 2.0 - 1.0) * jitter;
            (b + offset).clamp(TIME_EPS, duration - TIME_EPS)
        })
        .collect();
    moved.sort_by(|a, b| a.partial_cmp(b).unwrap());
    moved.dedup();

    let mut kept = Vec::with_capacity(moved.len() + 1);
    let mut prev = 0.0f64;
    for b in moved {
        if b - prev >= floor - TIME_EPS && duration - b >= floor - TIME_EPS {
            kept.push(b);
            prev = b;
        }
    }
    kept.push(duration);
    Segmentation::new(duration, kept, floor).expect("perturbation preserves invariants")
}
