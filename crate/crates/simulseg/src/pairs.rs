//! Preference-pair construction: generate candidate segmentations per
//! utterance, score each by translation quality and latency through the
//! oracle pipeline, and pair up candidates whose scalar scores are separated
//! by at least a margin, the better one preferred.

use std::collections::HashSet;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::FrameFeatures;
use crate::metrics::{laal, BleuAccumulator, MetricError};
use crate::policy::labels_from_segmentation;
use crate::segmenters::{
    fixed_length, load_external_segmentation, perturb_segmentation, vad_segment, SegmentError,
    Segmentation, VadConfig,
};
use crate::translate::{
    run_pipeline, OracleTalk, SegmentSource, TimingConfig, TranslateError, TranslatorBackend,
};

#[derive(Debug, thiserror::Error)]
pub enum PairError {
    #[error(transparent)]
    Segmentation(#[from] SegmentError),
    #[error(transparent)]
    Pipeline(#[from] TranslateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Candidate generation settings: fixed-length chunk grid, VAD settings, and
/// deterministic jitter for perturbed variants of each base candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub chunk_lengths_s: Vec<f64>,
    pub vad: VadConfig,
    pub perturbations_per_base: usize,
    pub jitter_s: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            chunk_lengths_s: vec![3.0, 5.0, 8.0],
            vad: VadConfig::default(),
            perturbations_per_base: 2,
            jitter_s: 0.5,
            seed: 0,
        }
    }
}

/// Scoring and pairing settings. The scalar score is
/// `bleu - lambda * (laal_ms / 1000)`; pairs need a scalar gap of at least
/// `min_margin`, and each utterance contributes at most
/// `max_pairs_per_utterance` pairs (largest gaps first).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub lambda_bleu_per_s: f64,
    pub min_margin: f64,
    pub max_pairs_per_utterance: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            lambda_bleu_per_s: 2.0,
            min_margin: 1.0,
            max_pairs_per_utterance: 10,
        }
    }
}

/// Quality/latency score of one candidate segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub bleu: f64,
    pub laal_ms: f64,
    pub scalar: f64,
}

impl CandidateScore {
    pub fn new(bleu: f64, laal_ms: f64, lambda_bleu_per_s: f64) -> Self {
        Self {
            bleu,
            laal_ms,
            scalar: bleu - lambda_bleu_per_s * (laal_ms / 1000.0),
        }
    }
}

/// A (preferred, dispreferred) segmentation pair for one utterance, with the
/// scores that ranked them and the provenance tags of both candidates.
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub talk_id: String,
    pub preferred: Segmentation,
    pub dispreferred: Segmentation,
    pub score_pref: CandidateScore,
    pub score_dispref: CandidateScore,
    pub tags: (String, String),
}

/// Generate tagged candidates: fixed-length at each configured chunk
/// length, VAD, any external segmentations, plus deterministic jittered
/// variants of each base. Candidates whose label vectors coincide are
/// deduplicated (first occurrence wins), so the result depends only on the
/// inputs and the seed.
pub fn generate_candidates(
    features: &FrameFeatures,
    external_paths: &[PathBuf],
    cfg: &GenConfig,
) -> Result<Vec<(String, Segmentation)>, PairError> {
    let duration = features.duration_s;
    let mut base: Vec<(String, Segmentation)> = Vec::new();
    for &chunk in &cfg.chunk_lengths_s {
        base.push((format!("fixed-{}s", chunk), fixed_length(duration, chunk)?));
    }
    base.push(("vad".to_string(), vad_segment(features, &cfg.vad)?));
    for path in external_paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "external".into());
        base.push((
            format!("external-{}", stem),
            load_external_segmentation(path, duration)?,
        ));
    }

    let mut all = base.clone();
    for (i, (tag, seg)) in base.iter().enumerate() {
        for p in 0..cfg.perturbations_per_base {
            let seed = cfg.seed ^ ((i as u64) << 16) ^ (p as u64 + 1);
            all.push((
                format!("{}+jitter{}", tag, p),
                perturb_segmentation(seg, cfg.jitter_s, seed),
            ));
        }
    }

    let t_frames = features.len();
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut out = Vec::with_capacity(all.len());
    for (tag, seg) in all {
        let labels = labels_from_segmentation(&seg, features.hop_s, t_frames);
        if seen.insert(labels) {
            out.push((tag, seg));
        }
    }
    Ok(out)
}

/// Score one candidate by running the segmentation-translation loop: BLEU of
/// the emitted hypothesis against the talk reference, streaming LAAL of the
/// trace, and the scalar combination.
pub fn score_candidate(
    seg: &Segmentation,
    talk: &OracleTalk,
    features: &FrameFeatures,
    translator: &mut TranslatorBackend,
    timing: &TimingConfig,
    lambda_bleu_per_s: f64,
) -> Result<CandidateScore, PairError> {
    let (trace, _) = run_pipeline(
        features,
        talk,
        &SegmentSource::Precomputed(seg),
        translator,
        timing,
    )?;
    let mut acc = BleuAccumulator::new();
    acc.add(&trace.hypothesis(), &talk.reference)?;
    let latency = laal(&trace, talk.reference.len())?;
    Ok(CandidateScore::new(acc.score(), latency, lambda_bleu_per_s))
}

/// Build all preference pairs from a scored candidate list: every unordered
/// pair with a scalar gap of at least the margin and differing label
/// vectors, the higher-scoring candidate preferred, largest gaps kept up to
/// the per-utterance cap. Assembly is order-independent: candidates are
/// sorted by tag before enumeration.
pub fn build_pairs(
    talk_id: &str,
    features: &FrameFeatures,
    scored: &[(String, Segmentation, CandidateScore)],
    cfg: &PairConfig,
) -> Vec<PreferencePair> {
    let mut by_tag: Vec<&(String, Segmentation, CandidateScore)> = scored.iter().collect();
    by_tag.sort_by(|a, b| a.0.cmp(&b.0));

    let t_frames = features.len();
    let labels: Vec<Vec<bool>> = by_tag
        .iter()
        .map(|(_, seg, _)| labels_from_segmentation(seg, features.hop_s, t_frames))
        .collect();

    let mut pairs: Vec<(f64, PreferencePair)> = Vec::new();
    for i in 0..by_tag.len() {
        for j in (i + 1)..by_tag.len() {
            if labels[i] == labels[j] {
                continue;
            }
            let gap = (by_tag[i].2.scalar - by_tag[j].2.scalar).abs();
            if gap < cfg.min_margin {
                continue;
            }
            let (win, lose) = if by_tag[i].2.scalar >= by_tag[j].2.scalar {
                (by_tag[i], by_tag[j])
            } else {
                (by_tag[j], by_tag[i])
            };
            pairs.push((
                gap,
                PreferencePair {
                    talk_id: talk_id.to_string(),
                    preferred: win.1.clone(),
                    dispreferred: lose.1.clone(),
                    score_pref: win.2,
                    score_dispref: lose.2,
                    tags: (win.0.clone(), lose.0.clone()),
                },
            ));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("scores are finite")
            .then_with(|| a.1.tags.cmp(&b.1.tags))
    });
    pairs.truncate(cfg.max_pairs_per_utterance);
    pairs.into_iter().map(|(_, p)| p).collect()
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    bleu: f64,
    laal_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    talk_id: String,
    pref: Vec<f64>,
    dispref: Vec<f64>,
    score_pref: ScoreRecord,
    score_dispref: ScoreRecord,
    tags: (String, String),
}

/// Write pairs as JSONL, one pair per line. Boundary lists are in seconds;
/// the clip duration is the final boundary.
pub fn save_pairs(pairs: &[PreferencePair], path: &Path) -> Result<(), PairError> {
    let mut buf = Vec::new();
    for p in pairs {
        let record = PairRecord {
            talk_id: p.talk_id.clone(),
            pref: p.preferred.boundaries().to_vec(),
            dispref: p.dispreferred.boundaries().to_vec(),
            score_pref: ScoreRecord {
                bleu: p.score_pref.bleu,
                laal_ms: p.score_pref.laal_ms,
            },
            score_dispref: ScoreRecord {
                bleu: p.score_dispref.bleu,
                laal_ms: p.score_dispref.laal_ms,
            },
            tags: p.tags.clone(),
        };
        serde_json::to_writer(&mut buf, &record).map_err(|e| PairError::Schema(e.to_string()))?;
        buf.push(b'\n');
    }
    crate::util::write_atomic(path, &buf)?;
    Ok(())
}

/// Read a pairs JSONL file, recomputing scalar scores with the configured
/// lambda and enforcing the pair invariants: a scalar gap of at least the
/// margin and differing boundary lists.
pub fn load_pairs(path: &Path, cfg: &PairConfig) -> Result<Vec<PreferencePair>, PairError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line)
            .map_err(|e| PairError::Schema(format!("line {}: {}", lineno + 1, e)))?;
        let pair = pair_from_record(record, cfg)
            .map_err(|e| PairError::Schema(format!("line {}: {}", lineno + 1, e)))?;
        out.push(pair);
    }
    Ok(out)
}

fn pair_from_record(record: PairRecord, cfg: &PairConfig) -> Result<PreferencePair, String> {
    let duration = *record
        .pref
        .last()
        .ok_or_else(|| "empty preferred boundary list".to_string())?;
    let dis_duration = *record
        .dispref
        .last()
        .ok_or_else(|| "empty dispreferred boundary list".to_string())?;
    if (duration - dis_duration).abs() > 1e-9 {
        return Err(format!(
            "mismatched clip durations {} and {}",
            duration, dis_duration
        ));
    }
    if record.pref == record.dispref {
        return Err("preferred and dispreferred segmentations are identical".into());
    }
    let preferred = Segmentation::new(duration, record.pref, 0.0).map_err(|e| e.to_string())?;
    let dispreferred =
        Segmentation::new(duration, record.dispref, 0.0).map_err(|e| e.to_string())?;
    let score_pref = CandidateScore::new(
        record.score_pref.bleu,
        record.score_pref.laal_ms,
        cfg.lambda_bleu_per_s,
    );
    let score_dispref = CandidateScore::new(
        record.score_dispref.bleu,
        record.score_dispref.laal_ms,
        cfg.lambda_bleu_per_s,
    );
    if score_pref.scalar < score_dispref.scalar + cfg.min_margin - 1e-9 {
        return Err(format!(
            "scalar gap {} below margin {}",
            score_pref.scalar - score_dispref.scalar,
            cfg.min_margin
        ));
    }
    Ok(PreferencePair {
        talk_id: record.talk_id,
        preferred,
        dispreferred,
        score_pref,
        score_dispref,
        tags: record.tags,
    })
}

/// Full per-talk pass: generate candidates, score them with the oracle
/// translator, and build pairs.
pub fn pairs_for_talk(
    features: &FrameFeatures,
    talk: &OracleTalk,
    external_paths: &[PathBuf],
    gen: &GenConfig,
    pairing: &PairConfig,
    timing: &TimingConfig,
) -> Result<Vec<PreferencePair>, PairError> {
    let candidates = generate_candidates(features, external_paths, gen)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (tag, seg) in candidates {
        let score = score_candidate(
            &seg,
            talk,
            features,
            &mut TranslatorBackend::Oracle,
            timing,
            pairing.lambda_bleu_per_s,
        )?;
        scored.push((tag, seg, score));
    }
    Ok(build_pairs(&talk.id, features, &scored, pairing))
}
