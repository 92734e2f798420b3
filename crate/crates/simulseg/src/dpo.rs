//! Direct preference optimization of the boundary policy.
//!
//! The loss on one pair is `-ln sigmoid(beta * (log pi(y_pref|x) -
//! log pi(y_dispref|x)))`, computed in soft-plus form so saturated pairs
//! cannot overflow. There is no reference-policy term: the objective is
//! reference-free. Training runs sequential single-pair AdamW steps, which
//! together with seeded shuffling makes results bit-reproducible.

use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FrameFeatures;
use crate::policy::{seg_log_prob, seg_log_prob_grad, PolicyError, PolicyParams};
use crate::segmenters::Segmentation;
use crate::util::{sigmoid, softplus, write_atomic};

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("training requires at least one pair")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Training hyperparameters. Batch size is fixed at 1: updates are
/// sequential, one pair per optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            epochs: 5,
            batch_size: 1,
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        if !(self.beta > 0.0) {
            return Err(DpoError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.epochs < 1 {
            return Err(DpoError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size != 1 {
            return Err(DpoError::InvalidConfig(format!(
                "batch_size is fixed at 1, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(DpoError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One training example: features plus the preferred and dispreferred
/// segmentations of the same utterance.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub features: &'a FrameFeatures,
    pub preferred: &'a Segmentation,
    pub dispreferred: &'a Segmentation,
}

/// Gradient with the same shape as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            weights: vec![0.0; params.weights.len()],
            bias: 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .fold(self.bias.abs(), |m, w| m.max(w.abs()))
    }
}

/// Log-probability gap `delta = log pi(y_pref|x) - log pi(y_dispref|x)`.
pub fn log_prob_gap(params: &PolicyParams, pair: &PairExample) -> Result<f64, DpoError> {
    let lp_pref = seg_log_prob(params, pair.features, pair.preferred)?;
    let lp_dis = seg_log_prob(params, pair.features, pair.dispreferred)?;
    Ok(lp_pref - lp_dis)
}

/// `-ln sigmoid(beta * delta)`, evaluated as `ln(1 + e^(-beta*delta))`.
/// Always non-negative; exactly ln 2 when the gap is zero.
pub fn dpo_loss(params: &PolicyParams, pair: &PairExample, beta: f64) -> Result<f64, DpoError> {
    let delta = log_prob_gap(params, pair)?;
    Ok(softplus(-beta * delta))
}

/// Analytic gradient of [`dpo_loss`]: with `z = beta * delta`,
/// `dL/dtheta = -sigmoid(-z) * beta * (d delta / d theta)`.
pub fn dpo_grad(
    params: &PolicyParams,
    pair: &PairExample,
    beta: f64,
) -> Result<Gradient, DpoError> {
    let delta = log_prob_gap(params, pair)?;
    let (gw_pref, gb_pref) = seg_log_prob_grad(params, pair.features, pair.preferred)?;
    let (gw_dis, gb_dis) = seg_log_prob_grad(params, pair.features, pair.dispreferred)?;
    let scale = -sigmoid(-beta * delta) * beta;
    let weights = gw_pref
        .iter()
        .zip(&gw_dis)
        .map(|(p, d)| scale * (p - d))
        .collect();
    let bias = scale * (gb_pref - gb_dis);
    Ok(Gradient { weights, bias })
}

/// AdamW first/second-moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<f64>,
    v_weights: Vec<f64>,
    m_bias: f64,
    v_bias: f64,
    step: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        Self {
            m_weights: vec![0.0; params.weights.len()],
            v_weights: vec![0.0; params.weights.len()],
            m_bias: 0.0,
            v_bias: 0.0,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with bias-corrected moments. Decoupled weight decay is
/// applied to the weights only; the bias carries the cut/no-cut prior and is
/// not decayed.
pub fn adamw_step(
    state: &mut AdamState,
    params: &mut PolicyParams,
    grad: &Gradient,
    cfg: &DpoConfig,
) {
    debug_assert_eq!(grad.weights.len(), params.weights.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);

    for i in 0..params.weights.len() {
        let g = grad.weights[i];
        state.m_weights[i] = cfg.adam_beta1 * state.m_weights[i] + (1.0 - cfg.adam_beta1) * g;
        state.v_weights[i] = cfg.adam_beta2 * state.v_weights[i] + (1.0 - cfg.adam_beta2) * g * g;
        let m_hat = state.m_weights[i] / bc1;
        let v_hat = state.v_weights[i] / bc2;
        params.weights[i] -= cfg.learning_rate
            * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + cfg.weight_decay * params.weights[i]);
    }
    state.m_bias = cfg.adam_beta1 * state.m_bias + (1.0 - cfg.adam_beta1) * grad.bias;
    state.v_bias = cfg.adam_beta2 * state.v_bias + (1.0 - cfg.adam_beta2) * grad.bias * grad.bias;
    let m_hat = state.m_bias / bc1;
    let v_hat = state.v_bias / bc2;
    params.bias -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
}

/// Per-epoch mean losses plus the settings that produced them. Serialized as
/// `{"epoch_loss": [num,...], "pairs": int, "config": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub pairs: usize,
    pub config: DpoConfig,
}

/// Train the policy: for each epoch, iterate the pairs in a seed-shuffled
/// order, one optimizer step per pair, recording the mean loss per epoch
/// (evaluated at the parameters each pair was visited with).
pub fn train(
    params: PolicyParams,
    pairs: &[PairExample],
    cfg: &DpoConfig,
) -> Result<(PolicyParams, TrainReport), DpoError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(DpoError::EmptyDataset);
    }
    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for &i in &order {
            let pair = &pairs[i];
            total += dpo_loss(&params, pair, cfg.beta)?;
            let grad = dpo_grad(&params, pair, cfg.beta)?;
            adamw_step(&mut state, &mut params, &grad, cfg);
        }
        epoch_loss.push(total / pairs.len() as f64);
    }

    let report = TrainReport {
        epoch_loss,
        pairs: pairs.len(),
        config: cfg.clone(),
    };
    Ok((params, report))
}

/// Write a training report JSON file.
pub fn save_report_json(report: &TrainReport, path: &Path) -> Result<(), DpoError> {
    let text = serde_json::to_string(report).map_err(|e| DpoError::Schema(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_policy;
    use rand::Rng;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn features(frames: Vec<Vec<f64>>) -> FrameFeatures {
        FrameFeatures {
            id: "t".into(),
            hop_s: 0.1,
            dim: frames[0].len(),
            duration_s: frames.len() as f64 * 0.1,
            frames,
        }
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        max_t: usize,
        context: usize,
    ) -> (FrameFeatures, PolicyParams, Segmentation, Segmentation) {
        let t = rng.gen_range(4usize..=max_t);
        let frames: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let f = features(frames);
        let mut params = init_policy(3, context, rng.gen());
        for w in &mut params.weights {
            *w = rng.gen::<f64>() * 0.6 - 0.3;
        }
        params.bias = rng.gen::<f64>() * 2.0 - 1.0;
        let seg_a = random_segmentation(rng, &f);
        let mut seg_b = random_segmentation(rng, &f);
        // ensure the label vectors differ so delta is not structurally zero
        let mut guard = 0;
        while crate::policy::labels_from_segmentation(&seg_a, 0.1, t)
            == crate::policy::labels_from_segmentation(&seg_b, 0.1, t)
        {
            seg_b = random_segmentation(rng, &f);
            guard += 1;
            if guard > 100 {
                break;
            }
        }
        (f, params, seg_a, seg_b)
    }

    fn random_segmentation(rng: &mut ChaCha8Rng, f: &FrameFeatures) -> Segmentation {
        let t = f.len();
        let n = rng.gen_range(0usize..=3.min(t - 1));
        let mut bs: Vec<f64> = (0..n).map(|_| rng.gen_range(1..t) as f64 * 0.1).collect();
        bs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bs.dedup();
        bs.retain(|&b| b < f.duration_s - 1e-9);
        bs.push(f.duration_s);
        Segmentation::new(f.duration_s, bs, 0.0).unwrap()
    }

    #[test]
    fn equal_segmentations_give_ln_2() {
        let f = features((0..30).map(|t| vec![t as f64 * 0.1, 0.5, -0.5]).collect());
        let params = init_policy(3, 2, 1);
        let seg = crate::segmenters::fixed_length(f.duration_s, 1.0).unwrap();
        let pair = PairExample {
            features: &f,
            preferred: &seg,
            dispreferred: &seg,
        };
        for &beta in &[0.1, 0.5, 1.0, 4.0] {
            let loss = dpo_loss(&params, &pair, beta).unwrap();
            assert!((loss - LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_values_via_logit_construction() {
        // c=0, d=1, w=[1], b=0: logits are the feature values. A pair whose
        // label vectors differ at exactly one frame has delta equal to that
        // frame's logit.
        let params = PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![1.0],
            bias: 0.0,
        };
        let mut vals = vec![0.0f64; 30];
        vals[10] = 2.0;
        let f = features(vals.iter().map(|&v| vec![v]).collect());
        let with = Segmentation::new(3.0, vec![1.0, 3.0], 0.0).unwrap(); // label at frame 10
        let without = Segmentation::new(3.0, vec![3.0], 0.0).unwrap();
        let pair = PairExample {
            features: &f,
            preferred: &with,
            dispreferred: &without,
        };
        assert!((log_prob_gap(&params, &pair).unwrap() - 2.0).abs() < 1e-12);
        // beta=1, delta=2 -> ln(1+e^-2)
        let loss = dpo_loss(&params, &pair, 1.0).unwrap();
        assert!((loss - 0.1269280110429726).abs() < 1e-12);
        // beta=2, delta=1: halve the logit
        let mut vals2 = vec![0.0f64; 30];
        vals2[10] = 1.0;
        let f2 = features(vals2.iter().map(|&v| vec![v]).collect());
        let pair2 = PairExample {
            features: &f2,
            preferred: &with,
            dispreferred: &without,
        };
        let loss2 = dpo_loss(&params, &pair2, 2.0).unwrap();
        assert!((loss2 - 0.1269280110429726).abs() < 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_beta_delta_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let (f, params, a, b) = random_instance(&mut rng, 40, 2);
            let pair = PairExample {
                features: &f,
                preferred: &a,
                dispreferred: &b,
            };
            let beta = rng.gen_range(0.1..3.0);
            let loss = dpo_loss(&params, &pair, beta).unwrap();
            assert!(loss >= 0.0);
            // halving every logit halves delta exactly in exact arithmetic;
            // (beta, delta) and (2beta, delta/2) must agree
            let mut halved = params.clone();
            for w in &mut halved.weights {
                *w *= 0.5;
            }
            halved.bias *= 0.5;
            let loss_halved = dpo_loss(&halved, &pair, 2.0 * beta).unwrap();
            assert!(
                (loss - loss_halved).abs() < 1e-9,
                "{} vs {}",
                loss,
                loss_halved
            );
        }
    }

    #[test]
    fn identical_pair_has_zero_gradient() {
        let f = features((0..20).map(|t| vec![(t % 5) as f64, 0.2, -0.1]).collect());
        let params = init_policy(3, 1, 3);
        let seg = crate::segmenters::fixed_length(f.duration_s, 0.5).unwrap();
        let pair = PairExample {
            features: &f,
            preferred: &seg,
            dispreferred: &seg,
        };
        let grad = dpo_grad(&params, &pair, 0.5).unwrap();
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn saturated_pair_has_vanishing_gradient() {
        // push delta so large that sigmoid(-beta*delta) underflows
        let params = PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![1.0],
            bias: 0.0,
        };
        let mut vals = [0.0f64; 20];
        vals[5] = 100.0;
        let f = features(vals.iter().map(|&v| vec![v]).collect());
        let with = Segmentation::new(2.0, vec![0.5, 2.0], 0.0).unwrap();
        let without = Segmentation::new(2.0, vec![2.0], 0.0).unwrap();
        let pair = PairExample {
            features: &f,
            preferred: &with,
            dispreferred: &without,
        };
        let grad = dpo_grad(&params, &pair, 1.0).unwrap();
        assert!(grad.max_abs() < 1e-15);
    }

    /// Central finite differences of the loss over all coordinates.
    fn finite_diff_grad(params: &PolicyParams, pair: &PairExample, beta: f64, h: f64) -> Gradient {
        let mut grad = Gradient::zeros_like(params);
        for i in 0..params.weights.len() {
            let mut plus = params.clone();
            plus.weights[i] += h;
            let mut minus = params.clone();
            minus.weights[i] -= h;
            grad.weights[i] = (dpo_loss(&plus, pair, beta).unwrap()
                - dpo_loss(&minus, pair, beta).unwrap())
                / (2.0 * h);
        }
        let mut plus = params.clone();
        plus.bias += h;
        let mut minus = params.clone();
        minus.bias -= h;
        grad.bias = (dpo_loss(&plus, pair, beta).unwrap() - dpo_loss(&minus, pair, beta).unwrap())
            / (2.0 * h);
        grad
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut worst = 0.0f64;
        for i in 0..100 {
            let context = (i % 5).min(4);
            let (f, params, a, b) = random_instance(&mut rng, 50, context);
            let pair = PairExample {
                features: &f,
                preferred: &a,
                dispreferred: &b,
            };
            let beta = rng.gen_range(0.2..2.0);
            let analytic = dpo_grad(&params, &pair, beta).unwrap();
            let numeric = finite_diff_grad(&params, &pair, beta, 1e-5);
            let mut max_abs_diff = (analytic.bias - numeric.bias).abs();
            let mut scale = numeric.bias.abs();
            for (ga, gn) in analytic.weights.iter().zip(&numeric.weights) {
                max_abs_diff = max_abs_diff.max((ga - gn).abs());
                scale = scale.max(gn.abs());
            }
            let rel = max_abs_diff / scale.max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "worst relative error {}", worst);
    }

    #[test]
    fn plain_descent_step_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..100 {
            let (f, params, a, b) = random_instance(&mut rng, 30, 2);
            let pair = PairExample {
                features: &f,
                preferred: &a,
                dispreferred: &b,
            };
            let beta = rng.gen_range(0.2..2.0);
            let before = dpo_loss(&params, &pair, beta).unwrap();
            let grad = dpo_grad(&params, &pair, beta).unwrap();
            let lr = 1e-3;
            let mut stepped = params.clone();
            for (w, g) in stepped.weights.iter_mut().zip(&grad.weights) {
                *w -= lr * g;
            }
            stepped.bias -= lr * grad.bias;
            let after = dpo_loss(&stepped, &pair, beta).unwrap();
            assert!(
                after <= before + 1e-12,
                "loss rose from {} to {}",
                before,
                after
            );
        }
    }

    #[test]
    fn adamw_zero_gradient_zero_decay_is_identity() {
        let mut params = init_policy(3, 2, 4);
        let original = params.clone();
        let mut state = AdamState::new(&params);
        let grad = Gradient::zeros_like(&params);
        let cfg = DpoConfig {
            weight_decay: 0.0,
            ..DpoConfig::default()
        };
        adamw_step(&mut state, &mut params, &grad, &cfg);
        assert_eq!(params, original);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adamw_first_step_matches_hand_evaluated_formulas() {
        let cfg = DpoConfig::default();
        let mut params = PolicyParams {
            context_frames: 0,
            feature_dim: 2,
            weights: vec![0.4, -0.3],
            bias: -2.0,
        };
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let grad = Gradient {
            weights: vec![0.02, -5.0],
            bias: 0.75,
        };
        adamw_step(&mut state, &mut params, &grad, &cfg);
        // at t=1: m_hat = g, v_hat = g^2, so the Adam term is
        // -lr * g / (|g| + eps), plus -lr * wd * w on the weights
        for i in 0..2 {
            let g: f64 = grad.weights[i];
            let expected = before.weights[i]
                - cfg.learning_rate * (g / (g.abs() + cfg.adam_eps))
                - cfg.learning_rate * cfg.weight_decay * before.weights[i];
            assert!((params.weights[i] - expected).abs() < 1e-15);
            // and that is within eps of -lr * sign(g)
            assert!(
                (params.weights[i] - before.weights[i]
                    + cfg.learning_rate * cfg.weight_decay * before.weights[i]
                    + cfg.learning_rate * g.signum())
                .abs()
                    < cfg.learning_rate * 1e-5
            );
        }
        let gb: f64 = grad.bias;
        let expected_bias = before.bias - cfg.learning_rate * (gb / (gb.abs() + cfg.adam_eps));
        assert!((params.bias - expected_bias).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic_and_descends_on_a_separable_pair() {
        // one separable pair: preferred cuts at the high-logit frame,
        // dispreferred cuts elsewhere
        let mut vals = vec![-0.5f64; 40];
        vals[20] = 1.5;
        let f = features(vals.iter().map(|&v| vec![v]).collect());
        let pref = Segmentation::new(4.0, vec![2.0, 4.0], 0.0).unwrap();
        let dis = Segmentation::new(4.0, vec![1.0, 4.0], 0.0).unwrap();
        let pairs = vec![PairExample {
            features: &f,
            preferred: &pref,
            dispreferred: &dis,
        }];
        let params = PolicyParams {
            context_frames: 0,
            feature_dim: 1,
            weights: vec![0.0],
            bias: -2.0,
        };
        let cfg = DpoConfig {
            learning_rate: 1e-3,
            ..DpoConfig::default()
        };
        let (trained_a, report_a) = train(params.clone(), &pairs, &cfg).unwrap();
        let (trained_b, report_b) = train(params, &pairs, &cfg).unwrap();
        assert_eq!(trained_a, trained_b);
        assert_eq!(report_a.epoch_loss, report_b.epoch_loss);
        assert_eq!(report_a.pairs, 1);
        assert_eq!(report_a.epoch_loss.len(), 5);
        assert!(report_a.epoch_loss[4] < report_a.epoch_loss[0]);
    }

    #[test]
    fn empty_dataset_and_bad_configs_are_rejected() {
        let params = init_policy(3, 1, 0);
        assert!(matches!(
            train(params.clone(), &[], &DpoConfig::default()),
            Err(DpoError::EmptyDataset)
        ));
        let zero_epochs = DpoConfig {
            epochs: 0,
            ..DpoConfig::default()
        };
        assert!(zero_epochs.validate().is_err());
        let bad_batch = DpoConfig {
            batch_size: 8,
            ..DpoConfig::default()
        };
        assert!(bad_batch.validate().is_err());
        let bad_beta = DpoConfig {
            beta: 0.0,
            ..DpoConfig::default()
        };
        assert!(bad_beta.validate().is_err());
    }
}
