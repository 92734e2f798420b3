//! Translation quality (BLEU) and latency (AL, LAAL) metrics, plus
//! latency-quality tradeoff sweeps with a CSV emitter.
//!
//! BLEU uses modified n-gram precisions up to 4-grams with an explicit
//! smoothing rule: a zero precision is floored to `1/(2*H_n)` where `H_n` is
//! the hypothesis n-gram count, and a hypothesis too short to have any
//! n-gram scores 0 outright. Corpus BLEU pools n-gram counts over talks
//! (micro-average).

use std::collections::HashMap;
use std::path::Path;

use crate::audio::FrameFeatures;
use crate::translate::{
    run_pipeline, EmissionTrace, OracleTalk, SegmentSource, TimingConfig, TranslateError,
    TranslatorBackend,
};
use crate::util::write_atomic;

/// Largest n-gram order used by BLEU.
pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("reference must be non-empty")]
    EmptyReference,
    #[error("emission trace must be non-empty")]
    EmptyTrace,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Pipeline(#[from] TranslateError),
}

/// Pooled n-gram statistics for corpus-level (micro-averaged) BLEU.
#[derive(Debug, Clone, Default)]
pub struct BleuAccumulator {
    clipped: [u64; BLEU_MAX_N],
    totals: [u64; BLEU_MAX_N],
    hyp_len: u64,
    ref_len: u64,
}

impl BleuAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, hypothesis: &[String], reference: &[String]) -> Result<(), MetricError> {
        if reference.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        self.hyp_len += hypothesis.len() as u64;
        self.ref_len += reference.len() as u64;
        for n in 1..=BLEU_MAX_N {
            if hypothesis.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_insert(0) += 1;
                }
            }
            let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
            for gram in hypothesis.windows(n) {
                *hyp_counts.entry(gram).or_insert(0) += 1;
            }
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                self.clipped[n - 1] += count.min(clip);
                self.totals[n - 1] += count;
            }
        }
        Ok(())
    }

    /// BLEU in [0, 100]. Exactly 100 when every pooled precision is 1 and
    /// the hypothesis is at least as long as the reference.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0f64;
        for n in 1..=BLEU_MAX_N {
            let total = self.totals[n - 1];
            if total == 0 {
                return 0.0; // no n-grams of this order at all
            }
            let p = if self.clipped[n - 1] == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                self.clipped[n - 1] as f64 / total as f64
            };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        bp * (log_sum / BLEU_MAX_N as f64).exp() * 100.0
    }
}

/// Sentence/talk-level BLEU of one hypothesis against one reference.
pub fn bleu(hypothesis: &[String], reference: &[String]) -> Result<f64, MetricError> {
    let mut acc = BleuAccumulator::new();
    acc.add(hypothesis, reference)?;
    Ok(acc.score())
}

fn lagging(trace: &EmissionTrace, ideal_len: usize) -> f64 {
    let t_ms = trace.source_duration_ms;
    let cutoff = trace
        .tokens
        .iter()
        .position(|e| e.emit_ms >= t_ms)
        .map(|i| i + 1)
        .unwrap_or(trace.tokens.len());
    let mut sum = 0.0f64;
    for (i, e) in trace.tokens[..cutoff].iter().enumerate() {
        sum += e.emit_ms - i as f64 * t_ms / ideal_len as f64;
    }
    sum / cutoff as f64
}

/// Average lagging in milliseconds: with `d_i` the emission time of token i
/// (1-indexed), `T` the source duration, and `tau` the first index emitted
/// at or after `T` (or `|Y|` if none), AL is the mean over the first `tau`
/// tokens of `d_i - (i-1) * T / ref_len`.
pub fn average_lagging(trace: &EmissionTrace, ref_len: usize) -> Result<f64, MetricError> {
    if trace.tokens.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    if ref_len == 0 {
        return Err(MetricError::InvalidParams(
            "ref_len must be at least 1".into(),
        ));
    }
    Ok(lagging(trace, ref_len))
}

/// Length-adaptive average lagging: identical to AL but the ideal schedule
/// divides the source over `max(|Y|, ref_len)` tokens, so over-long
/// hypotheses are not rewarded. The streaming variant is this formula
/// applied to a whole talk's concatenated trace against the talk-level
/// reference length.
pub fn laal(trace: &EmissionTrace, ref_len: usize) -> Result<f64, MetricError> {
    if trace.tokens.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    if ref_len == 0 {
        return Err(MetricError::InvalidParams(
            "ref_len must be at least 1".into(),
        ));
    }
    Ok(lagging(trace, ref_len.max(trace.tokens.len())))
}

/// One point on a latency-quality tradeoff curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub system: String,
    pub knob: f64,
    pub bleu: f64,
    pub latency_ms: f64,
}

/// A system swept over a knob grid. The knob is the chunk length for fixed,
/// the minimum silence for VAD, and the decision threshold for the policy.
pub struct SweepSystem {
    pub label: String,
    pub segmenter: SweepSegmenter,
    pub knobs: Vec<f64>,
}

pub enum SweepSegmenter {
    Fixed,
    Vad(crate::segmenters::VadConfig),
    Policy {
        params: crate::policy::PolicyParams,
        decode: crate::policy::DecodeConfig,
    },
}

/// Evaluate every (system, knob) cell over the corpus: corpus-level BLEU
/// (pooled n-gram counts) and unweighted mean LAAL over talks. Points come
/// back sorted by (system, knob).
pub fn sweep_tradeoff(
    corpus: &[(FrameFeatures, OracleTalk)],
    systems: &[SweepSystem],
    timing: &TimingConfig,
) -> Result<Vec<TradeoffPoint>, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::InvalidParams(
            "corpus must be non-empty".into(),
        ));
    }
    let mut points = Vec::new();
    for system in systems {
        for &knob in &system.knobs {
            let mut acc = BleuAccumulator::new();
            let mut laal_sum = 0.0f64;
            for (features, talk) in corpus {
                let vad_cfg;
                let decode_cfg;
                let source = match &system.segmenter {
                    SweepSegmenter::Fixed => SegmentSource::Fixed { chunk_s: knob },
                    SweepSegmenter::Vad(base) => {
                        vad_cfg = crate::segmenters::VadConfig {
                            min_silence_s: knob,
                            ..base.clone()
                        };
                        SegmentSource::Vad(&vad_cfg)
                    }
                    SweepSegmenter::Policy { params, decode } => {
                        decode_cfg = crate::policy::DecodeConfig {
                            threshold: knob,
                            ..decode.clone()
                        };
                        SegmentSource::Policy {
                            params,
                            decode: &decode_cfg,
                        }
                    }
                };
                let (trace, _) = run_pipeline(
                    features,
                    talk,
                    &source,
                    &mut TranslatorBackend::Oracle,
                    timing,
                )?;
                acc.add(&trace.hypothesis(), &talk.reference)?;
                laal_sum += laal(&trace, talk.reference.len())?;
            }
            points.push(TradeoffPoint {
                system: system.label.clone(),
                knob,
                bleu: acc.score(),
                latency_ms: laal_sum / corpus.len() as f64,
            });
        }
    }
    points.sort_by(|a, b| {
        a.system
            .cmp(&b.system)
            .then(a.knob.partial_cmp(&b.knob).expect("knobs are finite"))
    });
    Ok(points)
}

/// Render tradeoff points as CSV: header `system,knob,bleu,latency_ms`,
/// rows sorted by (system, knob), '.' decimal, LF line endings.
pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut rows = points.to_vec();
    rows.sort_by(|a, b| {
        a.system
            .cmp(&b.system)
            .then(a.knob.partial_cmp(&b.knob).expect("knobs are finite"))
    });
    let mut out = String::from("system,knob,bleu,latency_ms\n");
    for p in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.system, p.knob, p.bleu, p.latency_ms
        ));
    }
    out
}

/// Write the tradeoff CSV atomically.
pub fn save_tradeoff_csv(points: &[TradeoffPoint], path: &Path) -> Result<(), MetricError> {
    write_atomic(path, tradeoff_csv(points).as_bytes())
        .map_err(|e| MetricError::Pipeline(TranslateError::Io(e)))
}
