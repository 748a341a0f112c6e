//! Router state featurization and offline PPO training of the router policy.
//!
//! The router is a 12 → 32 → 2 tanh network over a fixed numeric summary of
//! the search state. Training treats every logged decision as a one-step
//! contextual bandit: the reward is the score that followed the decision,
//! z-scored within its source dataset, and the importance ratio is taken
//! against the logged behavior probability.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{pearson, Frame, Task};
use crate::memory::{Decision, MemoryPool};
use crate::pipeline::FeatureSet;

pub const STATE_DIM: usize = 12;
pub const HIDDEN: usize = 32;
pub const ACTIONS: usize = 2;
/// Live features considered by the correlation summaries.
pub const CORR_SAMPLE: usize = 30;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite gradient at epoch {epoch}, minibatch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize },
    #[error("policy file has unsupported version or layout: {0}")]
    VersionMismatch(String),
    #[error("invalid PPO configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fixed-length numeric summary of the search state:
///
/// | idx | component |
/// |-----|-----------|
/// | 0 | live / base feature-count ratio |
/// | 1 | ln(base count) |
/// | 2 | step fraction j/n |
/// | 3 | iteration fraction i/m |
/// | 4 | current score |
/// | 5 | best score so far |
/// | 6 | score delta vs previous step |
/// | 7 | mean \|pairwise corr\| among sampled live features |
/// | 8 | mean \|corr with target\| over sampled live features |
/// | 9 | fraction of live features that are derived |
/// | 10 | task flag (0 regression, 1 classification) |
/// | 11 | last decision (0 generate, 1 select, −1 none) |
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouterState(pub [f64; STATE_DIM]);

impl RouterState {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Where the search is, for featurization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SearchProgress {
    pub iteration: usize,
    pub iterations: usize,
    pub step: usize,
    pub steps: usize,
    pub current_score: Option<f64>,
    pub best_score: Option<f64>,
    pub previous_score: Option<f64>,
    pub last_decision: Option<Decision>,
}

/// Mean |pairwise corr| and mean |corr with target| over `columns`.
pub fn correlation_summaries(columns: &[Vec<f64>], target: &[f64]) -> (f64, f64) {
    let d = columns.len();
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..d {
        for j in (i + 1)..d {
            pair_sum += pearson(&columns[i], &columns[j]).abs();
            pairs += 1;
        }
    }
    let pairwise = if pairs > 0 {
        pair_sum / pairs as f64
    } else {
        0.0
    };
    let target_corr = if d > 0 {
        columns
            .iter()
            .map(|c| pearson(c, target).abs())
            .sum::<f64>()
            / d as f64
    } else {
        0.0
    };
    (pairwise, target_corr)
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        (num as f64 / den as f64).clamp(0.0, 1.0)
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

pub fn featurize(frame: &Frame, set: &FeatureSet, progress: &SearchProgress) -> RouterState {
    let base = set.base().len().max(1);
    let live = set.live();
    let sampled: Vec<Vec<f64>> = live
        .iter()
        .take(CORR_SAMPLE)
        .filter_map(|e| e.evaluate(frame).ok())
        .collect();
    let (pairwise, target_corr) = correlation_summaries(&sampled, frame.target());
    let current = progress.current_score.unwrap_or(0.0);
    let delta = match (progress.current_score, progress.previous_score) {
        (Some(c), Some(p)) => c - p,
        _ => 0.0,
    };
    let s = [
        live.len() as f64 / base as f64,
        (base as f64).ln(),
        fraction(progress.step, progress.steps),
        fraction(progress.iteration, progress.iterations),
        current,
        progress.best_score.unwrap_or(0.0),
        delta,
        pairwise,
        target_corr,
        fraction(set.derived_live_count(), live.len()),
        if frame.task() == Task::Classification {
            1.0
        } else {
            0.0
        },
        progress.last_decision.map_or(-1.0, |d| d.index() as f64),
    ];
    RouterState(s.map(finite_or_zero))
}

/// One logged decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSample {
    pub state: RouterState,
    pub action: usize,
    pub behavior_prob: f64,
    pub score: f64,
    /// Source dataset; advantages are normalized within each group.
    #[serde(default)]
    pub group: String,
}

/// One sample per routed record of the pool (the baseline record carries
/// no decision and is skipped).
pub fn collect(pool: &MemoryPool) -> Vec<OfflineSample> {
    pool.records()
        .filter_map(|r| {
            let d = r.decision?;
            Some(OfflineSample {
                state: r.state,
                action: d.index(),
                behavior_prob: r.behavior_prob.clamp(1e-6, 1.0 - 1e-6),
                score: r.score,
                group: r.dataset.clone(),
            })
        })
        .collect()
}

/// Scores z-scored within each group: (score − mean) / (std + 1e-8).
pub fn advantages(samples: &[OfflineSample]) -> Result<Vec<f64>, RlError> {
    if samples.len() < 2 {
        return Err(RlError::TooFewSamples(samples.len()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.group.as_str()).or_default().push(i);
    }
    let mut out = vec![0.0; samples.len()];
    for members in groups.values() {
        let n = members.len() as f64;
        let mean = members.iter().map(|&i| samples[i].score).sum::<f64>() / n;
        let var = members
            .iter()
            .map(|&i| (samples[i].score - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        for &i in members {
            out[i] = (samples[i].score - mean) / (std + 1e-8);
        }
    }
    Ok(out)
}

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * STATE_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + ACTIONS * HIDDEN;
pub const N_PARAMS: usize = B2 + ACTIONS;

/// Two-layer tanh policy with a softmax over {generate, select}.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: Vec<f64>,
    seed: u64,
}

struct Forward {
    hidden: [f64; HIDDEN],
    probs: [f64; ACTIONS],
}

impl PolicyNet {
    /// Hidden weights ~ U(±1/√12); output weights ~ U(±0.01) so the untrained
    /// policy starts close to uniform; biases zero.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; N_PARAMS];
        let bound = 1.0 / (STATE_DIM as f64).sqrt();
        for p in &mut params[W1..B1] {
            *p = rng.gen_range(-bound..bound);
        }
        for p in &mut params[W2..B2] {
            *p = rng.gen_range(-0.01..0.01);
        }
        Self { params, seed }
    }

    pub fn from_params(params: Vec<f64>, seed: u64) -> Option<Self> {
        (params.len() == N_PARAMS && params.iter().all(|p| p.is_finite()))
            .then_some(Self { params, seed })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn forward(&self, state: &RouterState) -> Forward {
        let p = &self.params;
        let mut hidden = [0.0; HIDDEN];
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &p[W1 + h * STATE_DIM..W1 + (h + 1) * STATE_DIM];
            let pre: f64 = row.iter().zip(&state.0).map(|(w, x)| w * x).sum::<f64>() + p[B1 + h];
            *out = pre.tanh();
        }
        let mut logits = [0.0; ACTIONS];
        for (o, z) in logits.iter_mut().enumerate() {
            let row = &p[W2 + o * HIDDEN..W2 + (o + 1) * HIDDEN];
            *z = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + p[B2 + o];
        }
        Forward {
            hidden,
            probs: softmax(logits),
        }
    }

    pub fn probs(&self, state: &RouterState) -> [f64; ACTIONS] {
        self.forward(state).probs
    }

    /// Most likely action index.
    pub fn greedy(&self, state: &RouterState) -> usize {
        let p = self.probs(state);
        usize::from(p[1] > p[0])
    }

    /// Clipped surrogate plus entropy bonus, averaged over `batch`, and its
    /// gradient with respect to the flat parameter vector.
    pub fn objective_and_gradient(
        &self,
        samples: &[OfflineSample],
        advantages: &[f64],
        batch: &[usize],
        clip: f64,
        entropy_coef: f64,
    ) -> (f64, Vec<f64>) {
        let p = &self.params;
        let mut grad = vec![0.0; N_PARAMS];
        let mut total = 0.0;
        for &i in batch {
            let s = &samples[i];
            let adv = advantages[i];
            let fw = self.forward(&s.state);
            let probs = fw.probs;
            let ratio = probs[s.action] / s.behavior_prob;
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
            let surrogate = (ratio * adv).min(clipped * adv);
            let entropy: f64 = -probs.iter().map(|q| q * q.ln()).sum::<f64>();
            total += surrogate + entropy_coef * entropy;

            let unclipped = if adv >= 0.0 {
                ratio <= 1.0 + clip
            } else {
                ratio >= 1.0 - clip
            };
            let mut g_logits = [0.0; ACTIONS];
            for (k, g) in g_logits.iter_mut().enumerate() {
                if unclipped {
                    let indicator = if k == s.action { 1.0 } else { 0.0 };
                    *g += adv * ratio * (indicator - probs[k]);
                }
                *g -= entropy_coef * probs[k] * (probs[k].ln() + entropy);
            }

            let mut g_hidden = [0.0; HIDDEN];
            for (o, g) in g_logits.iter().enumerate() {
                for h in 0..HIDDEN {
                    grad[W2 + o * HIDDEN + h] += g * fw.hidden[h];
                    g_hidden[h] += g * p[W2 + o * HIDDEN + h];
                }
                grad[B2 + o] += g;
            }
            for h in 0..HIDDEN {
                let g_pre = g_hidden[h] * (1.0 - fw.hidden[h] * fw.hidden[h]);
                for (x, w) in s
                    .state
                    .0
                    .iter()
                    .zip(&mut grad[W1 + h * STATE_DIM..W1 + (h + 1) * STATE_DIM])
                {
                    *w += g_pre * x;
                }
                grad[B1 + h] += g_pre;
            }
        }
        let m = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        (total / m, grad)
    }

    /// Same objective, value only; used by finite-difference checks.
    pub fn objective(
        &self,
        samples: &[OfflineSample],
        advantages: &[f64],
        batch: &[usize],
        clip: f64,
        entropy_coef: f64,
    ) -> f64 {
        self.objective_and_gradient(samples, advantages, batch, clip, entropy_coef)
            .0
    }

    pub fn with_params(&self, params: Vec<f64>) -> Self {
        Self {
            params,
            seed: self.seed,
        }
    }

    const MAGIC: &'static [u8; 4] = b"FFPN";
    const VERSION: u32 = 1;

    /// Versioned binary layout: magic, version, dims (in, hidden, out),
    /// seed, parameter count, then little-endian f64 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + N_PARAMS * 8);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        for d in [STATE_DIM, HIDDEN, ACTIONS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(N_PARAMS as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RlError> {
        let mismatch = |m: &str| RlError::VersionMismatch(m.to_string());
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], RlError> {
            let s = bytes
                .get(at..at + n)
                .ok_or_else(|| mismatch("truncated file"))?;
            at += n;
            Ok(s)
        };
        if take(4)? != Self::MAGIC {
            return Err(mismatch("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != Self::VERSION {
            return Err(mismatch(&format!("version {version}")));
        }
        let dims = [u32_at(take(4)?), u32_at(take(4)?), u32_at(take(4)?)];
        if dims != [STATE_DIM as u32, HIDDEN as u32, ACTIONS as u32] {
            return Err(mismatch(&format!("layout {dims:?}")));
        }
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let count = u32_at(take(4)?) as usize;
        if count != N_PARAMS {
            return Err(mismatch(&format!("{count} parameters")));
        }
        let mut params = Vec::with_capacity(N_PARAMS);
        for _ in 0..N_PARAMS {
            params.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
        if at != bytes.len() {
            return Err(mismatch("trailing bytes"));
        }
        Self::from_params(params, seed).ok_or_else(|| mismatch("non-finite parameters"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RlError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RlError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn softmax<const N: usize>(logits: [f64; N]) -> [f64; N] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 5,
            learning_rate: 3e-3,
            minibatch: 64,
            entropy_coef: 0.01,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(RlError::InvalidConfig(format!(
                "clip {} not in (0, 1)",
                self.clip
            )));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(RlError::InvalidConfig(
                "epochs and minibatch must be ≥ 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(RlError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub samples: usize,
    pub config: PpoConfig,
    pub epochs_run: usize,
    /// Mean objective over each epoch's minibatches.
    pub objective: Vec<f64>,
    /// Mean |π/behavior − 1| over all samples at the start of each epoch.
    pub ratio_deviation: Vec<f64>,
    /// Training stopped because the policy left the clip range of the
    /// behavior policy.
    pub stopped_early: bool,
}

fn mean_ratio_deviation(policy: &PolicyNet, samples: &[OfflineSample]) -> f64 {
    samples
        .iter()
        .map(|s| (policy.probs(&s.state)[s.action] / s.behavior_prob - 1.0).abs())
        .sum::<f64>()
        / samples.len().max(1) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Training stops once the mean ratio deviation exceeds this multiple of the
/// clip range.
pub const EARLY_STOP_FACTOR: f64 = 1.5;

/// Offline PPO: `epochs` passes over shuffled minibatches with Adam ascent on
/// the clipped surrogate. Before each epoch the mean ratio deviation from the
/// behavior policy is checked; once it exceeds
/// `EARLY_STOP_FACTOR * clip`, training stops.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &PolicyNet,
    samples: &[OfflineSample],
    config: &PpoConfig,
    rng: &mut R,
) -> Result<(PolicyNet, TrainingReport), RlError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(RlError::TooFewSamples(0));
    }
    let adv = if samples.len() >= 2 {
        advantages(samples)?
    } else {
        vec![0.0]
    };
    let mut current = policy.clone();
    let mut adam = Adam::new(N_PARAMS);
    let mut report = TrainingReport {
        samples: samples.len(),
        config: *config,
        epochs_run: 0,
        objective: Vec::new(),
        ratio_deviation: Vec::new(),
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let deviation = mean_ratio_deviation(&current, samples);
        report.ratio_deviation.push(deviation);
        if deviation > EARLY_STOP_FACTOR * config.clip {
            report.stopped_early = true;
            break;
        }
        order.shuffle(rng);
        let mut epoch_obj = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(config.minibatch).enumerate() {
            let (obj, mut grad) = current.objective_and_gradient(
                samples,
                &adv,
                batch,
                config.clip,
                config.entropy_coef,
            );
            if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(RlError::NonFiniteGradient { epoch, batch: b });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > config.max_grad_norm {
                let scale = config.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= scale);
            }
            adam.step(&mut current.params, &grad, config.learning_rate);
            epoch_obj += obj;
            batches += 1;
        }
        report.objective.push(epoch_obj / batches.max(1) as f64);
        report.epochs_run += 1;
    }
    Ok((current, report))
}

/// Logged bandit: action 0 pays 1 when `state[0] > 0`, action 1 pays 1
/// otherwise; behavior is uniform.
pub fn synthetic_bandit(n: usize, seed: u64) -> Vec<OfflineSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut s = [0.0; STATE_DIM];
            for v in &mut s {
                *v = rng.gen_range(-1.0..1.0);
            }
            let action = usize::from(rng.gen_bool(0.5));
            let best = if s[0] > 0.0 { 0 } else { 1 };
            OfflineSample {
                state: RouterState(s),
                action,
                behavior_prob: 0.5,
                score: if action == best { 1.0 } else { 0.0 },
                group: "bandit".into(),
            }
        })
        .collect()
}

/// Fraction of samples where the greedy policy agrees with the logged
/// action when its advantage was positive, or disagrees when negative.
/// Zero-advantage samples are ignored.
pub fn logged_decision_accuracy(
    policy: &PolicyNet,
    samples: &[OfflineSample],
    advantages: &[f64],
) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (s, &a) in samples.iter().zip(advantages) {
        if a == 0.0 {
            continue;
        }
        total += 1;
        let agrees = policy.greedy(&s.state) == s.action;
        if agrees == (a > 0.0) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_saturates() {
        let p = softmax([10.0, -10.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999_999 && p[1] > 0.0);
    }

    #[test]
    fn advantages_two_point_and_constant() {
        let mut s = synthetic_bandit(2, 0);
        s[0].score = 0.5;
        s[1].score = 0.7;
        let a = advantages(&s).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-6 && (a[1] - 1.0).abs() < 1e-6);
        s[1].score = 0.5;
        assert!(advantages(&s).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            advantages(&s[..1]),
            Err(RlError::TooFewSamples(1))
        ));
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let p = PolicyNet::new(9);
        let bytes = p.to_bytes();
        assert_eq!(PolicyNet::from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            PolicyNet::from_bytes(&bad),
            Err(RlError::VersionMismatch(_))
        ));
        assert!(matches!(
            PolicyNet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(RlError::VersionMismatch(_))
        ));
        assert!(matches!(
            PolicyNet::from_bytes(b"nope"),
            Err(RlError::VersionMismatch(_))
        ));
    }

    #[test]
    fn untrained_policy_is_near_uniform() {
        let p = PolicyNet::new(1);
        for s in synthetic_bandit(50, 2) {
            let q = p.probs(&s.state);
            assert!((q[0] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn config_validation() {
        let bad = PpoConfig {
            clip: 1.5,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            epochs: 0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
