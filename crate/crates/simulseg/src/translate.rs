//! The segmentation-translation loop: stream completed chunks to a
//! translator backend and collect a timestamped emission trace.
//!
//! Two backends exist. The oracle is a deterministic synthetic translator
//! whose quality degrades exactly when a clause is split across a segment
//! edge, which makes talk-level BLEU an exact function of boundary
//! placement. The adapter speaks newline-delimited JSON over a byte stream
//! and is the seam for a real translation model.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::mpsc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, FrameFeatures};
use crate::policy::{decode_streaming, DecodeConfig, PolicyError, PolicyParams};
use crate::segmenters::{
    fixed_length, vad_segment, Segment, SegmentError, Segmentation, VadConfig,
};
use crate::util::write_atomic;

/// Token emitted in place of the dictionary image when a clause is split
/// across a segment edge.
pub const CORRUPT_TOKEN: &str = "\u{22a5}"; // ⊥

#[derive(Debug, thiserror::Error)]
pub enum TranslateError {
    #[error("translator failure: {0}")]
    TranslatorFailure(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One timed source word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub token: String,
    pub t0: f64,
    pub t1: f64,
}

/// A synthetic talk: timed source words grouped into clauses, a reference
/// translation, and the word-for-word dictionary that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTalk {
    pub id: String,
    pub duration_s: f64,
    pub words: Vec<Word>,
    pub clauses: Vec<(usize, usize)>,
    pub reference: Vec<String>,
    pub dictionary: BTreeMap<String, String>,
}

impl OracleTalk {
    pub fn validate(&self) -> Result<(), TranslateError> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(TranslateError::Schema("duration must be positive".into()));
        }
        let mut prev_end = 0.0f64;
        for (i, w) in self.words.iter().enumerate() {
            if !(w.t0 >= prev_end - 1e-9) || !(w.t1 > w.t0) || w.t1 > self.duration_s + 1e-6 {
                return Err(TranslateError::Schema(format!(
                    "word {} has invalid times [{}, {})",
                    i, w.t0, w.t1
                )));
            }
            prev_end = w.t1;
        }
        let mut next = 0usize;
        for &(i, j) in &self.clauses {
            if i != next || j <= i || j > self.words.len() {
                return Err(TranslateError::Schema(format!(
                    "clauses do not partition the word list at [{}, {})",
                    i, j
                )));
            }
            next = j;
        }
        if next != self.words.len() {
            return Err(TranslateError::Schema(
                "clauses do not cover all words".into(),
            ));
        }
        let expected: Vec<&String> = self
            .words
            .iter()
            .map(|w| {
                self.dictionary.get(&w.token).ok_or_else(|| {
                    TranslateError::Schema(format!("word {:?} missing from dictionary", w.token))
                })
            })
            .collect::<Result<_, _>>()?;
        if expected.len() != self.reference.len()
            || expected.iter().zip(&self.reference).any(|(a, b)| *a != b)
        {
            return Err(TranslateError::Schema(
                "reference does not equal the dictionary image of the words".into(),
            ));
        }
        Ok(())
    }

    /// True if the segment edges split the clause: some of its word
    /// midpoints fall inside `[start, end)` and some outside.
    fn clause_is_split(&self, clause: (usize, usize), seg: &Segment) -> bool {
        let inside = (clause.0..clause.1)
            .filter(|&w| self.word_in_segment(w, seg))
            .count();
        inside > 0 && inside < clause.1 - clause.0
    }

    fn word_in_segment(&self, w: usize, seg: &Segment) -> bool {
        let mid = (self.words[w].t0 + self.words[w].t1) / 2.0;
        mid >= seg.start_s && mid < seg.end_s
    }
}

/// Translate one segment with the oracle: words whose midpoint lies in
/// `[start, end)` are emitted, word-for-word via the dictionary when their
/// clause is wholly contained, or as the corruption token when the clause is
/// split across the segment edge.
pub fn oracle_translate(segment: &Segment, talk: &OracleTalk) -> Vec<String> {
    let mut out = Vec::new();
    for &clause in &talk.clauses {
        let split = talk.clause_is_split(clause, segment);
        for w in clause.0..clause.1 {
            if talk.word_in_segment(w, segment) {
                if split {
                    out.push(CORRUPT_TOKEN.to_string());
                } else {
                    out.push(
                        talk.dictionary
                            .get(&talk.words[w].token)
                            .expect("talk validated: every word has a dictionary image")
                            .clone(),
                    );
                }
            }
        }
    }
    out
}

/// A token with its emission time on the simulated wall clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub token: String,
    pub emit_ms: f64,
}

/// The timestamped output of the segmentation-translation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTrace {
    pub tokens: Vec<Emission>,
    pub source_duration_ms: f64,
}

impl EmissionTrace {
    pub fn hypothesis(&self) -> Vec<String> {
        self.tokens.iter().map(|e| e.token.clone()).collect()
    }
}

/// Emission timing model: a fixed per-chunk translator delay plus an
/// optional per-token pacing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub fixed_delay_ms: f64,
    pub per_token_ms: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            fixed_delay_ms: 200.0,
            per_token_ms: 0.0,
        }
    }
}

/// Where the pipeline gets its segmentation from. Non-streaming sources
/// decide each boundary the moment the audio reaches it (decision time =
/// boundary time); the policy decodes on its sliding-window schedule.
pub enum SegmentSource<'a> {
    Precomputed(&'a Segmentation),
    Fixed {
        chunk_s: f64,
    },
    Vad(&'a VadConfig),
    Policy {
        params: &'a PolicyParams,
        decode: &'a DecodeConfig,
    },
}

impl SegmentSource<'_> {
    pub fn run(
        &self,
        features: &FrameFeatures,
    ) -> Result<(Segmentation, Vec<f64>), TranslateError> {
        match self {
            SegmentSource::Precomputed(seg) => Ok(((*seg).clone(), seg.boundaries().to_vec())),
            SegmentSource::Fixed { chunk_s } => {
                let seg = fixed_length(features.duration_s, *chunk_s)?;
                let decisions = seg.boundaries().to_vec();
                Ok((seg, decisions))
            }
            SegmentSource::Vad(cfg) => {
                let seg = vad_segment(features, cfg)?;
                let decisions = seg.boundaries().to_vec();
                Ok((seg, decisions))
            }
            SegmentSource::Policy { params, decode } => {
                Ok(decode_streaming(params, features, decode)?)
            }
        }
    }
}

/// Translation backend for the pipeline.
pub enum TranslatorBackend<'a> {
    Oracle,
    Adapter(&'a mut AdapterSession),
}

/// Run the segmentation-translation loop: obtain a segmentation with
/// per-boundary decision times, translate each completed chunk in order, and
/// emit its tokens at `decision_ms + fixed_delay_ms + k * per_token_ms`.
/// Chunks are emitted strictly in order, so a token never precedes one from
/// an earlier chunk.
pub fn run_pipeline(
    features: &FrameFeatures,
    talk: &OracleTalk,
    source: &SegmentSource,
    translator: &mut TranslatorBackend,
    timing: &TimingConfig,
) -> Result<(EmissionTrace, Segmentation), TranslateError> {
    let (seg, decisions) = source.run(features)?;
    let mut tokens = Vec::new();
    let mut last_emit = 0.0f64;
    for (i, segment) in seg.segments().enumerate() {
        let translated = match translator {
            TranslatorBackend::Oracle => oracle_translate(&segment, talk),
            TranslatorBackend::Adapter(session) => session.translate(&segment, None)?,
        };
        let base = decisions[i] * 1000.0 + timing.fixed_delay_ms;
        for (k, token) in translated.into_iter().enumerate() {
            let at = (base + k as f64 * timing.per_token_ms).max(last_emit);
            tokens.push(Emission { token, emit_ms: at });
            last_emit = at;
        }
    }
    Ok((
        EmissionTrace {
            tokens,
            source_duration_ms: features.duration_s * 1000.0,
        },
        seg,
    ))
}

/// Read a Talk JSON file.
pub fn load_talk_json(path: &Path) -> Result<OracleTalk, TranslateError> {
    let text = std::fs::read_to_string(path)?;
    let talk: OracleTalk =
        serde_json::from_str(&text).map_err(|e| TranslateError::Schema(e.to_string()))?;
    talk.validate()?;
    Ok(talk)
}

/// Write a Talk JSON file; round-trips with [`load_talk_json`].
pub fn save_talk_json(talk: &OracleTalk, path: &Path) -> Result<(), TranslateError> {
    talk.validate()?;
    let text = serde_json::to_string(talk).map_err(|e| TranslateError::Schema(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct AdapterRequest<'a> {
    id: u64,
    start_s: f64,
    end_s: f64,
    audio_b64: Option<String>,
    src: &'a str,
    tgt: &'a str,
}

#[derive(Deserialize)]
struct AdapterResponse {
    id: u64,
    tokens: Vec<String>,
}

/// A strict request/response session over newline-delimited JSON. Requests
/// carry an id; the next response line must answer exactly that id, so a
/// slow backend cannot silently reorder segments.
pub struct AdapterSession {
    writer: Box<dyn Write + Send>,
    lines: mpsc::Receiver<io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    src_lang: String,
    tgt_lang: String,
}

impl AdapterSession {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    /// Wrap a byte stream pair. A reader thread feeds response lines through
    /// a channel so requests can time out.
    pub fn new(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        src_lang: &str,
        tgt_lang: &str,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let buf = BufReader::new(reader);
            for line in buf.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Box::new(writer),
            lines: rx,
            next_id: 0,
            timeout: Self::DEFAULT_TIMEOUT,
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
        }
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Send one request for the segment and await the matching response.
    /// When a clip is supplied, the segment's samples are sent as
    /// base64-encoded PCM16LE; otherwise `audio_b64` is null.
    pub fn translate(
        &mut self,
        segment: &Segment,
        clip: Option<&AudioClip>,
    ) -> Result<Vec<String>, TranslateError> {
        let id = self.next_id;
        self.next_id += 1;
        let audio_b64 = clip.map(|c| encode_segment_audio(c, segment));
        let request = AdapterRequest {
            id,
            start_s: segment.start_s,
            end_s: segment.end_s,
            audio_b64,
            src: &self.src_lang,
            tgt: &self.tgt_lang,
        };
        let mut line = serde_json::to_vec(&request)
            .map_err(|e| TranslateError::Protocol(format!("request encoding: {}", e)))?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| TranslateError::TranslatorFailure(format!("write failed: {}", e)))?;

        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                return Err(TranslateError::TranslatorFailure(format!(
                    "read failed: {}",
                    e
                )))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(TranslateError::TranslatorFailure(format!(
                    "timed out after {:?} waiting for response {}",
                    self.timeout, id
                )))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(TranslateError::TranslatorFailure(
                    "adapter closed the stream".into(),
                ))
            }
        };
        let response: AdapterResponse = serde_json::from_str(&line)
            .map_err(|e| TranslateError::TranslatorFailure(format!("malformed response: {}", e)))?;
        if response.id != id {
            return Err(TranslateError::Protocol(format!(
                "response id {} does not match request id {}",
                response.id, id
            )));
        }
        Ok(response.tokens)
    }
}

/// Translate one segment through an adapter session.
pub fn adapter_translate(
    segment: &Segment,
    clip: &AudioClip,
    session: &mut AdapterSession,
) -> Result<Vec<String>, TranslateError> {
    session.translate(segment, Some(clip))
}

fn encode_segment_audio(clip: &AudioClip, segment: &Segment) -> String {
    let rate = clip.sample_rate as f64;
    let start = ((segment.start_s * rate).round() as usize).min(clip.samples.len());
    let end = ((segment.end_s * rate).round() as usize).clamp(start, clip.samples.len());
    let mut bytes = Vec::with_capacity((end - start) * 2);
    for &s in &clip.samples[start..end] {
        let v = (s * 32768.0).clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
