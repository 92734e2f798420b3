//! The trainable boundary policy: per-frame boundary logits from a linear
//! scorer over a +-c frame context window, sequence log-likelihood under an
//! independent-Bernoulli factorization, and sliding-window next-breakpoint
//! streaming decoding.
//!
//! The policy interface (features in, logits out) is the seam where a larger
//! scorer could be substituted.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FrameFeatures;
use crate::segmenters::{SegmentError, Segmentation};
use crate::util::{containing_frame, log_sigmoid, sigmoid, write_atomic, TIME_EPS};

/// Default context radius in frames for the linear scorer.
pub const DEFAULT_CONTEXT_FRAMES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("dimension mismatch: params expect {expected}, features have {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Weights of the per-frame boundary scorer. The weight vector concatenates
/// one block of `feature_dim` weights per context offset, `-c..=c` in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub context_frames: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PolicyParams {
    pub fn weight_len(context_frames: usize, feature_dim: usize) -> usize {
        (2 * context_frames + 1) * feature_dim
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let expected = Self::weight_len(self.context_frames, self.feature_dim);
        if self.weights.len() != expected {
            return Err(PolicyError::Schema(format!(
                "weight length {} does not match (2c+1)*d = {}",
                self.weights.len(),
                expected
            )));
        }
        if self.feature_dim == 0 {
            return Err(PolicyError::Schema("feature_dim must be at least 1".into()));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::Schema("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Sliding-window decoding configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub threshold: f64,
    pub min_seg_s: f64,
    pub max_seg_s: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            window_s: 4.0,
            hop_s: 2.0,
            threshold: 0.5,
            min_seg_s: 1.0,
            max_seg_s: 10.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(PolicyError::InvalidParams(format!(
                "need 0 < hop_s <= window_s, got {} and {}",
                self.hop_s, self.window_s
            )));
        }
        if !(self.min_seg_s > 0.0 && self.min_seg_s < self.max_seg_s) {
            return Err(PolicyError::InvalidParams(format!(
                "need 0 < min_seg_s < max_seg_s, got {} and {}",
                self.min_seg_s, self.max_seg_s
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PolicyError::InvalidParams(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Fresh parameters: weights uniform in [-0.01, 0.01] drawn deterministically
/// from the seed, bias -2.0 so the untrained policy is biased against cutting.
pub fn init_policy(feature_dim: usize, context_frames: usize, seed: u64) -> PolicyParams {
    assert!(feature_dim >= 1, "feature_dim must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..PolicyParams::weight_len(context_frames, feature_dim))
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * 0.01)
        .collect();
    PolicyParams {
        context_frames,
        feature_dim,
        weights,
        bias: -2.0,
    }
}

/// Per-frame boundary logits: `logit_t = w . phi(t) + bias`, where `phi(t)`
/// concatenates frames t-c..t+c with out-of-range frames as zero vectors.
pub fn boundary_logits(
    params: &PolicyParams,
    features: &FrameFeatures,
) -> Result<Vec<f64>, PolicyError> {
    params.validate()?;
    if features.dim != params.feature_dim {
        return Err(PolicyError::DimensionMismatch {
            expected: params.feature_dim,
            got: features.dim,
        });
    }
    let c = params.context_frames as isize;
    let d = params.feature_dim;
    let t_total = features.len() as isize;
    let mut logits = Vec::with_capacity(features.len());
    for t in 0..t_total {
        let mut acc = params.bias;
        for (k, offset) in (-c..=c).enumerate() {
            let idx = t + offset;
            if idx < 0 || idx >= t_total {
                continue;
            }
            let row = &features.frames[idx as usize];
            let block = &params.weights[k * d..(k + 1) * d];
            for j in 0..d {
                acc += block[j] * row[j];
            }
        }
        logits.push(acc);
    }
    Ok(logits)
}

/// Binary label vector of length `t_frames`: 1 at the frame whose window
/// contains each boundary except the final clip-end one, clamped to
/// [0, T-1]; boundaries mapping to the same frame collapse to a single 1.
pub fn labels_from_segmentation(seg: &Segmentation, hop_s: f64, t_frames: usize) -> Vec<bool> {
    let mut labels = vec![false; t_frames];
    if t_frames == 0 {
        return labels;
    }
    let interior = &seg.boundaries()[..seg.boundaries().len() - 1];
    for &b in interior {
        let frame = containing_frame(b, hop_s).min(t_frames - 1);
        labels[frame] = true;
    }
    labels
}

/// Sequence log-likelihood under the per-frame Bernoulli factorization:
/// `sum_t [y_t ln p_t + (1 - y_t) ln(1 - p_t)]` with `p_t = sigmoid(logit_t)`,
/// computed via log-sigmoid identities so nothing overflows for |logit| up
/// to 1e4.
pub fn seg_log_prob(
    params: &PolicyParams,
    features: &FrameFeatures,
    seg: &Segmentation,
) -> Result<f64, PolicyError> {
    let logits = boundary_logits(params, features)?;
    let labels = labels_from_segmentation(seg, features.hop_s, features.len());
    Ok(logits
        .iter()
        .zip(&labels)
        .map(|(&l, &y)| if y { log_sigmoid(l) } else { log_sigmoid(-l) })
        .sum())
}

/// Gradient of [`seg_log_prob`] in parameter space. The residual at frame t
/// is `y_t - p_t`; it propagates through the linear scorer to each context
/// block and the bias.
pub fn seg_log_prob_grad(
    params: &PolicyParams,
    features: &FrameFeatures,
    seg: &Segmentation,
) -> Result<(Vec<f64>, f64), PolicyError> {
    let logits = boundary_logits(params, features)?;
    let labels = labels_from_segmentation(seg, features.hop_s, features.len());
    let c = params.context_frames as isize;
    let d = params.feature_dim;
    let t_total = features.len() as isize;
    let mut grad_w = vec![0.0f64; params.weights.len()];
    let mut grad_b = 0.0f64;
    for t in 0..t_total {
        let y = if labels[t as usize] { 1.0 } else { 0.0 };
        let r = y - sigmoid(logits[t as usize]);
        grad_b += r;
        for (k, offset) in (-c..=c).enumerate() {
            let idx = t + offset;
            if idx < 0 || idx >= t_total {
                continue;
            }
            let row = &features.frames[idx as usize];
            let block = &mut grad_w[k * d..(k + 1) * d];
            for j in 0..d {
                block[j] += r * row[j];
            }
        }
    }
    Ok((grad_w, grad_b))
}

/// Streaming decode: simulate frame arrival on a wall clock that ticks at
/// multiples of `cfg.hop_s` once a full window has been heard, plus a final
/// tick at the clip end. Within the open segment, visible not-yet-scanned
/// frames at least `min_seg_s` past the previous boundary are scanned in
/// temporal order; the first frame whose boundary probability reaches the
/// threshold fixes a boundary at that frame's time, decided at the current
/// tick. If an open segment reaches `max_seg_s` with no crossing, a boundary
/// is forced exactly `max_seg_s` after the previous one, decided at the first
/// tick by which that point has been heard. Returns the segmentation and one
/// decision time per boundary (clip end decided at the clip duration).
pub fn decode_streaming(
    params: &PolicyParams,
    features: &FrameFeatures,
    cfg: &DecodeConfig,
) -> Result<(Segmentation, Vec<f64>), PolicyError> {
    cfg.validate()?;
    let logits = boundary_logits(params, features)?;
    let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let hop_f = features.hop_s;
    let t_total = features.len();
    let duration = features.duration_s;

    let mut ticks: Vec<f64> = Vec::new();
    let mut k = ((cfg.window_s / cfg.hop_s) - TIME_EPS).ceil().max(1.0) as u64;
    loop {
        let t = k as f64 * cfg.hop_s;
        if t < duration - TIME_EPS {
            ticks.push(t);
            k += 1;
        } else {
            break;
        }
    }
    ticks.push(duration); // end of stream: everything is visible

    let mut boundaries: Vec<f64> = Vec::new();
    let mut decisions: Vec<f64> = Vec::new();
    let mut prev = 0.0f64; // last boundary time
    let mut anchor = 0.0f64; // last threshold boundary (forced-break grid origin)
    let mut forced = 0u64; // forced breaks since anchor
    let mut next_scan = 0usize; // first frame not yet scanned

    for &tick in &ticks {
        let visible = if tick >= duration - TIME_EPS {
            t_total
        } else {
            (((tick / hop_f) + TIME_EPS).floor() as usize).min(t_total)
        };
        loop {
            let forced_at = anchor + (forced + 1) as f64 * cfg.max_seg_s;
            let mut fired = false;
            while next_scan < visible {
                let ft = next_scan as f64 * hop_f;
                if ft > forced_at - TIME_EPS {
                    // every frame before the forced point has been scanned
                    // with no crossing; the segment has reached max_seg
                    boundaries.push(forced_at);
                    decisions.push(tick);
                    prev = forced_at;
                    forced += 1;
                    fired = true;
                    break;
                }
                if ft >= prev + cfg.min_seg_s - TIME_EPS && probs[next_scan] >= cfg.threshold {
                    boundaries.push(ft);
                    decisions.push(tick);
                    prev = ft;
                    anchor = ft;
                    forced = 0;
                    next_scan += 1;
                    fired = true;
                    break;
                }
                next_scan += 1;
            }
            if fired {
                continue; // rescan remaining visible frames for the next segment
            }
            // no crossing among visible frames; force if the segment end has
            // been fully heard anyway
            let heard = tick.min(duration);
            if heard >= forced_at - TIME_EPS && forced_at < duration - TIME_EPS {
                boundaries.push(forced_at);
                decisions.push(tick);
                prev = forced_at;
                forced += 1;
                continue;
            }
            break;
        }
    }

    boundaries.push(duration);
    decisions.push(duration);
    let floor = {
        let mut f: f64 = cfg.min_seg_s;
        let mut p = 0.0;
        for &b in &boundaries {
            f = f.min(b - p);
            p = b;
        }
        f.max(0.0)
    };
    let seg = Segmentation::new(duration, boundaries, floor)?;
    Ok((seg, decisions))
}

/// Read a policy JSON file
/// (`{"context_frames": int, "feature_dim": int, "weights": [num,...], "bias": num}`).
pub fn load_policy_json(path: &Path) -> Result<PolicyParams, PolicyError> {
    let text = std::fs::read_to_string(path)?;
    let params: PolicyParams =
        serde_json::from_str(&text).map_err(|e| PolicyError::Schema(e.to_string()))?;
    params.validate()?;
    Ok(params)
}

/// Write a policy JSON file; round-trips with [`load_policy_json`].
pub fn save_policy_json(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    params.validate()?;
    let text = serde_json::to_string(params).map_err(|e| PolicyError::Schema(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenters::fixed_length;

    fn features(frames: Vec<Vec<f64>>, hop: f64) -> FrameFeatures {
        FrameFeatures {
            id: "t".into(),
            hop_s: hop,
            dim: frames[0].len(),
            duration_s: frames.len() as f64 * hop,
            frames,
        }
    }

    fn scalar_features(logits: &[f64]) -> FrameFeatures {
        features(logits.iter().map(|&v| vec![v]).collect(), 0.1)
    }

    /// c=0, d=1, w=[1], b=0: the features ARE the logits.
    fn passthrough() -> PolicyParams {
        PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![1.0],
            bias: 0.0,
        }
    }

    #[test]
    fn init_is_deterministic_with_expected_shape() {
        let a = init_policy(3, 2, 42);
        let b = init_policy(3, 2, 42);
        assert_eq!(a, b);
        assert_eq!(a.weights.len(), 15);
        assert_eq!(a.bias, -2.0);
        assert!(a.weights.iter().all(|w| w.abs() <= 0.01));
        let c = init_policy(3, 2, 43);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn fresh_params_keep_boundary_probabilities_low_on_unit_scale_features() {
        // |w . phi| <= 0.01 * 27 for features bounded by 1, so every logit is
        // within 0.27 of -2 and sigma(-1.73) = 0.1505 < 0.2.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let f = features(frames, 0.1);
        for seed in 0..20 {
            let params = init_policy(3, 4, seed);
            let logits = boundary_logits(&params, &f).unwrap();
            assert!(logits.iter().all(|&l| sigmoid(l) < 0.2));
        }
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let params = PolicyParams {
            context_frames: 2,
            feature_dim: 3,
            weights: vec![0.0; 15],
            bias: -1.25,
        };
        let f = features((0..10).map(|t| vec![t as f64, 1.0, -2.0]).collect(), 0.1);
        let logits = boundary_logits(&params, &f).unwrap();
        assert!(logits.iter().all(|&l| l == -1.25));
    }

    #[test]
    fn context_zero_unit_weight_is_a_dot_product_identity() {
        let params = PolicyParams {
            context_frames: 0,
            feature_dim: 3,
            weights: vec![1.0, 0.0, 0.0],
            bias: 0.5,
        };
        let f = features(
            (0..6).map(|t| vec![t as f64 * 0.3, 9.0, 9.0]).collect(),
            0.1,
        );
        let logits = boundary_logits(&params, &f).unwrap();
        for (t, &l) in logits.iter().enumerate() {
            assert!((l - (t as f64 * 0.3 + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_frames_match_brute_force_zero_padded_dot_product() {
        // 5 frames, c=2: every frame has some out-of-range context
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let f = features(frames.clone(), 0.1);
        let weights: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() - 0.5).collect();
        let params = PolicyParams {
            context_frames: 2,
            feature_dim: 2,
            weights: weights.clone(),
            bias: 0.7,
        };
        let logits = boundary_logits(&params, &f).unwrap();
        for t in 0..5i64 {
            let mut expected = 0.7;
            for (k, off) in (-2i64..=2).enumerate() {
                let idx = t + off;
                if (0..5).contains(&idx) {
                    for j in 0..2 {
                        expected += weights[k * 2 + j] * frames[idx as usize][j];
                    }
                }
            }
            assert!(logits[t as usize].is_finite());
            assert!((logits[t as usize] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let params = init_policy(4, 1, 0);
        let f = scalar_features(&[0.0; 10]);
        assert!(matches!(
            boundary_logits(&params, &f),
            Err(PolicyError::DimensionMismatch {
                expected: 4,
                got: 1
            })
        ));
    }

    #[test]
    fn labels_exclude_final_boundary() {
        let seg = Segmentation::new(10.0, vec![3.0, 6.0, 10.0], 0.0).unwrap();
        let labels = labels_from_segmentation(&seg, 0.1, 100);
        let ones: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(ones, vec![30, 60]);
    }

    #[test]
    fn labels_single_segment_is_all_zero() {
        let seg = Segmentation::new(10.0, vec![10.0], 0.0).unwrap();
        assert!(labels_from_segmentation(&seg, 0.1, 100).iter().all(|&y| !y));
    }

    #[test]
    fn labels_collapse_boundaries_in_the_same_frame() {
        let seg = Segmentation::new(10.0, vec![3.04, 3.06, 10.0], 0.0).unwrap();
        let labels = labels_from_segmentation(&seg, 0.1, 100);
        let ones: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(ones, vec![30]);
    }

    #[test]
    fn log_prob_of_uniform_policy_is_t_ln_half() {
        let params = PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![0.0],
            bias: 0.0,
        };
        let f = scalar_features(&[3.0; 100]);
        let seg = fixed_length(f.duration_s, 3.0).unwrap();
        let lp = seg_log_prob(&params, &f, &seg).unwrap();
        assert!((lp - 100.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp - (-69.31471805599453)).abs() < 1e-10);
    }

    #[test]
    fn saturated_correct_policy_has_log_prob_near_zero() {
        // boundary at 3.0 -> frame 30; logits +50 there, -50 elsewhere
        let logits: Vec<f64> = (0..100)
            .map(|t| if t == 30 { 50.0 } else { -50.0 })
            .collect();
        let f = scalar_features(&logits);
        let seg = Segmentation::new(10.0, vec![3.0, 10.0], 0.0).unwrap();
        let lp = seg_log_prob(&passthrough(), &f, &seg).unwrap();
        assert!(lp <= 0.0);
        assert!(lp.abs() < 1e-15);
    }

    #[test]
    fn log_prob_matches_direct_space_oracle_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rng.gen_range(2usize..=20);
            let frames: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..3).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let f = features(frames, 0.1);
            let params = {
                let mut p = init_policy(3, 1, rng.gen());
                for w in &mut p.weights {
                    *w = rng.gen::<f64>() - 0.5;
                }
                p.bias = rng.gen::<f64>() - 0.5;
                p
            };
            let n_bounds = rng.gen_range(0usize..t.min(3));
            let mut bs: Vec<f64> = (0..n_bounds)
                .map(|_| (rng.gen_range(1..t) as f64) * 0.1)
                .collect();
            bs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bs.dedup();
            bs.push(f.duration_s);
            let seg = Segmentation::new(f.duration_s, bs, 0.0).unwrap();

            // oracle: product of Bernoulli probabilities in direct space
            let logits = boundary_logits(&params, &f).unwrap();
            let labels = labels_from_segmentation(&seg, 0.1, t);
            let mut product = 1.0f64;
            for (l, &y) in logits.iter().zip(&labels) {
                let p = 1.0 / (1.0 + (-l).exp());
                product *= if y { p } else { 1.0 - p };
            }

            let lp = seg_log_prob(&params, &f, &seg).unwrap();
            assert!(lp <= 0.0);
            assert!((lp - product.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn log_prob_gradient_ascends() {
        // a small step along the gradient strictly increases seg_log_prob
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let t = rng.gen_range(5usize..=30);
            let frames: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let f = features(frames, 0.1);
            let params = init_policy(3, 2, rng.gen());
            let seg = fixed_length(f.duration_s, 0.7).unwrap();
            let (gw, gb) = seg_log_prob_grad(&params, &f, &seg).unwrap();
            if gw.iter().all(|g| g.abs() < 1e-12) && gb.abs() < 1e-12 {
                continue;
            }
            let mut stepped = params.clone();
            for (w, g) in stepped.weights.iter_mut().zip(&gw) {
                *w += 1e-6 * g;
            }
            stepped.bias += 1e-6 * gb;
            let before = seg_log_prob(&params, &f, &seg).unwrap();
            let after = seg_log_prob(&stepped, &f, &seg).unwrap();
            assert!(after > before);
        }
    }

    fn low_prob_params() -> PolicyParams {
        PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![0.0],
            bias: -10.0,
        }
    }

    #[test]
    fn decode_forced_breaks_match_fixed_length() {
        let f = scalar_features(&[0.0; 250]); // 25 s, all probabilities tiny
        let (seg, decisions) =
            decode_streaming(&low_prob_params(), &f, &DecodeConfig::default()).unwrap();
        assert_eq!(
            seg.boundaries(),
            fixed_length(25.0, 10.0).unwrap().boundaries()
        );
        assert_eq!(seg.boundaries(), &[10.0, 20.0, 25.0]);
        assert_eq!(decisions, vec![10.0, 20.0, 25.0]);
    }

    #[test]
    fn decode_single_crossing_decided_at_first_covering_window() {
        // frame 35 (3.5 s) above threshold; window 4, hop 2 -> decided at 4.0
        let logits: Vec<f64> = (0..100)
            .map(|t| if t == 35 { 10.0 } else { -10.0 })
            .collect();
        let f = scalar_features(&logits);
        let (seg, decisions) =
            decode_streaming(&passthrough(), &f, &DecodeConfig::default()).unwrap();
        assert_eq!(seg.boundaries(), &[3.5, 10.0]);
        assert_eq!(decisions, vec![4.0, 10.0]);
    }

    #[test]
    fn decode_is_deterministic_and_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let f = scalar_features(&logits);
        let (seg_a, dec_a) =
            decode_streaming(&passthrough(), &f, &DecodeConfig::default()).unwrap();
        let (seg_b, dec_b) =
            decode_streaming(&passthrough(), &f, &DecodeConfig::default()).unwrap();
        assert_eq!(seg_a.boundaries(), seg_b.boundaries());
        assert_eq!(dec_a, dec_b);
        for (b, d) in seg_a.boundaries().iter().zip(&dec_a) {
            assert!(d >= b, "decision {} before boundary {}", d, b);
        }
        for pair in dec_a.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }

    #[test]
    fn decode_respects_min_seg() {
        // crossings at every frame; min_seg forces 1 s spacing
        let f = scalar_features(&[10.0; 100]);
        let (seg, _) = decode_streaming(&passthrough(), &f, &DecodeConfig::default()).unwrap();
        let mut prev = 0.0;
        for &b in &seg.boundaries()[..seg.boundaries().len() - 1] {
            assert!(b - prev >= 1.0 - 1e-9);
            prev = b;
        }
    }

    #[test]
    fn decode_boundaries_invariant_to_hop_refinement_for_isolated_peaks() {
        // crossings isolated by more than window_s
        let mut logits = vec![-10.0f64; 300];
        for &t in &[41usize, 112, 199, 260] {
            logits[t] = 10.0;
        }
        let f = scalar_features(&logits);
        let coarse = DecodeConfig::default();
        let fine = DecodeConfig {
            hop_s: 0.5,
            ..DecodeConfig::default()
        };
        let (seg_a, _) = decode_streaming(&passthrough(), &f, &coarse).unwrap();
        let (seg_b, _) = decode_streaming(&passthrough(), &f, &fine).unwrap();
        assert_eq!(seg_a.boundaries(), seg_b.boundaries());
    }

    #[test]
    fn policy_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let params = init_policy(3, 4, 42);
        save_policy_json(&params, &path).unwrap();
        let loaded = load_policy_json(&path).unwrap();
        assert_eq!(params, loaded);
        let bytes1 = std::fs::read(&path).unwrap();
        save_policy_json(&loaded, &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn policy_json_rejects_wrong_weight_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"context_frames":1,"feature_dim":3,"weights":[0.0,0.0],"bias":-2.0}"#,
        )
        .unwrap();
        assert!(matches!(
            load_policy_json(&path),
            Err(PolicyError::Schema(_))
        ));
    }
}
