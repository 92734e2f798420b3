//! Synthetic corpus generation: talks with timed words grouped into clauses
//! separated by silence, plus frame features generated directly on the same
//! timeline (no waveform synthesis), so the speech/silence contrast is
//! controlled and clause gaps are recoverable by the energy VAD.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    load_features_json, save_features_json, AudioError, FrameFeatures, ENERGY_FLOOR,
};
use crate::segmenters::Segmentation;
use crate::translate::{load_talk_json, save_talk_json, OracleTalk, TranslateError, Word};
use crate::util::frame_count;

/// Log-energy of synthetic speech frames before noise.
const SPEECH_LOG_ENERGY: f64 = -2.0;
/// Trailing silence appended after the last word. At hop 0.1 a half-open
/// 0.2 s interval holds exactly two frame midpoints, one short of the VAD's
/// detectable run, so the tail never proposes a boundary.
const TRAILING_SILENCE_S: f64 = 0.2;
/// Shortest inter-clause silence the generator may be asked to produce.
const MIN_DETECTABLE_SILENCE_S: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Talk(#[from] TranslateError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Corpus shape parameters. Clause lengths, word durations, and inter-clause
/// silences are sampled uniformly from the given ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_talks: usize,
    pub mean_clauses_per_talk: usize,
    pub clause_words_min: usize,
    pub clause_words_max: usize,
    pub word_duration_min_s: f64,
    pub word_duration_max_s: f64,
    pub silence_min_s: f64,
    pub silence_max_s: f64,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_talks: 50,
            mean_clauses_per_talk: 8,
            clause_words_min: 3,
            clause_words_max: 8,
            word_duration_min_s: 0.2,
            word_duration_max_s: 0.5,
            silence_min_s: 0.3,
            silence_max_s: 0.8,
            vocab_size: 200,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_talks == 0 {
            return Err(SynthError::InvalidSpec("n_talks must be at least 1".into()));
        }
        if self.mean_clauses_per_talk == 0 {
            return Err(SynthError::InvalidSpec(
                "mean_clauses_per_talk must be at least 1".into(),
            ));
        }
        if self.clause_words_min == 0 || self.clause_words_min > self.clause_words_max {
            return Err(SynthError::InvalidSpec("bad clause word range".into()));
        }
        if !(self.word_duration_min_s > 0.0) || self.word_duration_min_s > self.word_duration_max_s
        {
            return Err(SynthError::InvalidSpec("bad word duration range".into()));
        }
        if self.silence_min_s < MIN_DETECTABLE_SILENCE_S - 1e-9 {
            return Err(SynthError::InvalidSpec(format!(
                "silence_min_s {} below the VAD-detectable floor {}",
                self.silence_min_s, MIN_DETECTABLE_SILENCE_S
            )));
        }
        if self.silence_min_s > self.silence_max_s {
            return Err(SynthError::InvalidSpec("bad silence range".into()));
        }
        if self.vocab_size == 0 {
            return Err(SynthError::InvalidSpec(
                "vocab_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Generate one talk and its features from the rng stream.
fn generate_talk(
    spec: &SynthSpec,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> (OracleTalk, FrameFeatures) {
    let id = format!("talk{:04}", index);
    let lo = spec.mean_clauses_per_talk.saturating_sub(2).max(1);
    let hi = spec.mean_clauses_per_talk + 2;
    let n_clauses = rng.gen_range(lo..=hi);

    let mut words: Vec<Word> = Vec::new();
    let mut clauses: Vec<(usize, usize)> = Vec::new();
    let mut dictionary: BTreeMap<String, String> = BTreeMap::new();
    let mut t = 0.0f64;
    for c in 0..n_clauses {
        if c > 0 {
            t += rng.gen_range(spec.silence_min_s..=spec.silence_max_s);
        }
        let start = words.len();
        let n_words = rng.gen_range(spec.clause_words_min..=spec.clause_words_max);
        for _ in 0..n_words {
            let token = format!("w{}", rng.gen_range(0..spec.vocab_size));
            dictionary
                .entry(token.clone())
                .or_insert_with(|| format!("t_{}", token));
            let dur = rng.gen_range(spec.word_duration_min_s..=spec.word_duration_max_s);
            words.push(Word {
                token,
                t0: t,
                t1: t + dur,
            });
            t += dur;
        }
        clauses.push((start, words.len()));
    }
    let duration_s = t + TRAILING_SILENCE_S;
    let reference = words.iter().map(|w| dictionary[&w.token].clone()).collect();
    let talk = OracleTalk {
        id: id.clone(),
        duration_s,
        words,
        clauses,
        reference,
        dictionary,
    };

    let hop = crate::audio::DEFAULT_HOP_S;
    let t_frames = frame_count(duration_s, hop);
    let mut frames = Vec::with_capacity(t_frames);
    let mut prev_log_e = 0.0f64;
    let mut word_idx = 0usize;
    for f in 0..t_frames {
        let mid = f as f64 * hop + hop / 2.0;
        while word_idx < talk.words.len() && talk.words[word_idx].t1 <= mid {
            word_idx += 1;
        }
        let speech = word_idx < talk.words.len()
            && mid >= talk.words[word_idx].t0
            && mid < talk.words[word_idx].t1;
        let (log_e, zcr) = if speech {
            (
                SPEECH_LOG_ENERGY + (rng.gen::<f64>() * 2.0 - 1.0) * 0.3,
                0.05 + rng.gen::<f64>() * 0.3,
            )
        } else {
            (
                ENERGY_FLOOR.ln() + (rng.gen::<f64>() * 2.0 - 1.0) * 0.1,
                0.0,
            )
        };
        let delta = if f == 0 { 0.0 } else { log_e - prev_log_e };
        prev_log_e = log_e;
        frames.push(vec![log_e, zcr, delta]);
    }
    let features = FrameFeatures {
        id,
        hop_s: hop,
        dim: crate::audio::FEATURE_DIM,
        duration_s,
        frames,
    };
    (talk, features)
}

/// Generate the corpus in memory: `n_talks` (talk, features) pairs, fully
/// determined by the `SynthSpec` (including its seed).
pub fn synth_corpus_in_memory(
    spec: &SynthSpec,
) -> Result<Vec<(OracleTalk, FrameFeatures)>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_talks);
    for i in 0..spec.n_talks {
        let (talk, features) = generate_talk(spec, i, &mut rng);
        talk.validate()?;
        features.validate()?;
        out.push((talk, features));
    }
    Ok(out)
}

/// Generate the corpus on disk: `<id>.talk.json` and `<id>.features.json`
/// per talk under `out_dir`. Returns the talk ids in order.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<String>, SynthError> {
    let corpus = synth_corpus_in_memory(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let mut ids = Vec::with_capacity(corpus.len());
    for (talk, features) in &corpus {
        save_talk_json(talk, &out_dir.join(format!("{}.talk.json", talk.id)))?;
        save_features_json(
            features,
            &out_dir.join(format!("{}.features.json", talk.id)),
        )?;
        ids.push(talk.id.clone());
    }
    Ok(ids)
}

/// Load a corpus directory written by [`synth_corpus`] (or following the
/// same layout), sorted by talk id.
pub fn load_corpus(dir: &Path) -> Result<Vec<(FrameFeatures, OracleTalk)>, SynthError> {
    let mut talk_paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with(".talk.json"))
        })
        .collect();
    talk_paths.sort();
    if talk_paths.is_empty() {
        return Err(SynthError::InvalidSpec(format!(
            "no *.talk.json files under {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(talk_paths.len());
    for talk_path in talk_paths {
        let talk = load_talk_json(&talk_path)?;
        let name = talk_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .replace(".talk.json", ".features.json");
        let features = load_features_json(&talk_path.with_file_name(name))?;
        out.push((features, talk));
    }
    Ok(out)
}

/// Ground-truth clause-aligned segmentation: one boundary at the midpoint of
/// each inter-clause gap, plus the clip end.
pub fn clause_aligned_segmentation(talk: &OracleTalk) -> Segmentation {
    let mut bounds = Vec::with_capacity(talk.clauses.len());
    for pair in talk.clauses.windows(2) {
        let gap_start = talk.words[pair[0].1 - 1].t1;
        let gap_end = talk.words[pair[1].0].t0;
        bounds.push((gap_start + gap_end) / 2.0);
    }
    bounds.push(talk.duration_s);
    Segmentation::new(talk.duration_s, bounds, 0.0)
        .expect("generated clause gaps give a valid segmentation")
}

/// Inter-clause gap intervals `(start, end)` of a talk.
pub fn clause_gaps(talk: &OracleTalk) -> Vec<(f64, f64)> {
    talk.clauses
        .windows(2)
        .map(|pair| (talk.words[pair[0].1 - 1].t1, talk.words[pair[1].0].t0))
        .collect()
}
