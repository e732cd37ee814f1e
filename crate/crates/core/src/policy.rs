//! Softmax policies over a fixed mode set, sampled policy-gradient
//! updates with optional KL regularization, and the SGD / momentum /
//! AdamW parameter rules.
//!
//! Everything is ascent-oriented: the objective being climbed is
//! `(1/G) sum_s A_s log pi(o_s | q) - beta * KL(pi || pi_ref)`, whose
//! logit-space gradient is `(1/G) sum_s A_s (onehot(o_s) - pi)` plus the
//! KL pull-back `-beta * pi ∘ (log(pi/pi_ref) - KL)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageVector, RolloutBatch};
use crate::error::{Error, Result};
use crate::mode_space::{Distribution, QueryEmbedding};
use crate::theory::BatchCounts;

/// Linear-over-embeddings softmax policy:
/// `pi(o | q) = softmax(W e_q)_o` with `W` stored row-major,
/// `num_modes x dim`. Parameters are shared across queries, so updates
/// for one query move the logits of every query whose embedding overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    weights: Vec<f64>,
    num_modes: usize,
    dim: usize,
}

impl LinearSoftmaxPolicy {
    pub fn zeros(num_modes: usize, dim: usize) -> Self {
        assert!(num_modes > 0 && dim > 0);
        LinearSoftmaxPolicy {
            weights: vec![0.0; num_modes * dim],
            num_modes,
            dim,
        }
    }

    pub fn from_weights(weights: Vec<f64>, num_modes: usize, dim: usize) -> Result<Self> {
        if weights.len() != num_modes * dim {
            return Err(Error::DimensionMismatch {
                context: "linear policy weights",
                expected: num_modes * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("weights must be finite".into()));
        }
        Ok(LinearSoftmaxPolicy {
            weights,
            num_modes,
            dim,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, mode: usize) -> &[f64] {
        &self.weights[mode * self.dim..(mode + 1) * self.dim]
    }

    /// Logits and the stable-softmax distribution for one query.
    pub fn forward(&self, embedding: &QueryEmbedding) -> Result<(Vec<f64>, Distribution)> {
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "policy forward",
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        let logits: Vec<f64> = (0..self.num_modes)
            .map(|m| {
                self.row(m)
                    .iter()
                    .zip(embedding.vector())
                    .map(|(w, e)| w * e)
                    .sum()
            })
            .collect();
        let dist = Distribution::from_logits(&logits);
        Ok((logits, dist))
    }
}

/// Free per-(query, mode) logit table. No parameters are shared across
/// queries, so tabular training isolates single-query dynamics from
/// feature coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn zeros(num_queries: usize, num_modes: usize) -> Self {
        assert!(num_queries > 0 && num_modes > 0);
        TabularPolicy {
            logits: vec![vec![0.0; num_modes]; num_queries],
        }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|row| row.is_empty()) {
            return Err(Error::Parameter("empty logit table".into()));
        }
        if logits.iter().any(|row| row.iter().any(|l| !l.is_finite())) {
            return Err(Error::Parameter("logits must be finite".into()));
        }
        Ok(TabularPolicy { logits })
    }

    pub fn num_queries(&self) -> usize {
        self.logits.len()
    }

    pub fn forward(&self, query: usize) -> (Vec<f64>, Distribution) {
        let logits = self.logits[query].clone();
        let dist = Distribution::from_logits(&logits);
        (logits, dist)
    }

    pub fn logits_mut(&mut self, query: usize) -> &mut [f64] {
        &mut self.logits[query]
    }
}

/// Optional KL regularization toward a reference distribution.
#[derive(Debug, Clone)]
pub struct KlPenalty {
    pub beta: f64,
    pub reference: Distribution,
}

impl KlPenalty {
    pub fn new(beta: f64, reference: Distribution) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Parameter(format!(
                "KL beta must be finite and > 0, got {beta}"
            )));
        }
        Ok(KlPenalty { beta, reference })
    }
}

/// Ascent gradient of the batch objective in logit space.
pub fn logit_gradient(
    dist: &Distribution,
    batch: &RolloutBatch,
    adv: &AdvantageVector,
    kl: Option<&KlPenalty>,
) -> Result<Vec<f64>> {
    if adv.values.len() != batch.group_size() {
        return Err(Error::DimensionMismatch {
            context: "logit_gradient advantages",
            expected: batch.group_size(),
            got: adv.values.len(),
        });
    }
    if batch.num_modes() != dist.len() {
        return Err(Error::DimensionMismatch {
            context: "logit_gradient distribution",
            expected: batch.num_modes(),
            got: dist.len(),
        });
    }
    let g = batch.group_size() as f64;
    let mut grad = vec![0.0; dist.len()];
    let mut total_adv = 0.0;
    for (s, &mode) in batch.samples().iter().enumerate() {
        grad[mode] += adv.values[s] / g;
        total_adv += adv.values[s] / g;
    }
    for (j, g_j) in grad.iter_mut().enumerate() {
        *g_j -= dist.get(j) * total_adv;
    }

    if let Some(kl) = kl {
        if kl.reference.len() != dist.len() {
            return Err(Error::DimensionMismatch {
                context: "logit_gradient KL reference",
                expected: dist.len(),
                got: kl.reference.len(),
            });
        }
        // KL(pi || ref) and its logit gradient pi_j (log ratio_j - KL).
        let mut div = 0.0;
        let mut ratios = vec![0.0; dist.len()];
        for j in 0..dist.len() {
            let p = dist.get(j);
            if p > 0.0 {
                let r = kl.reference.get(j);
                if r <= 0.0 {
                    return Err(Error::Domain(format!(
                        "KL reference has zero probability on mode {j} where pi > 0"
                    )));
                }
                ratios[j] = (p / r).ln();
                div += p * ratios[j];
            }
        }
        for j in 0..dist.len() {
            let p = dist.get(j);
            if p > 0.0 {
                grad[j] -= kl.beta * p * (ratios[j] - div);
            }
        }
    }
    Ok(grad)
}

/// Policy-gradient of the batch objective with respect to the linear
/// policy's weight matrix: the logit gradient chained through the
/// embedding, `grad[m][d] = g_logit[m] * e_q[d]`.
pub fn pg_gradient_linear(
    policy: &LinearSoftmaxPolicy,
    embedding: &QueryEmbedding,
    batch: &RolloutBatch,
    adv: &AdvantageVector,
    kl: Option<&KlPenalty>,
) -> Result<Vec<f64>> {
    let (_, dist) = policy.forward(embedding)?;
    if batch.num_modes() != policy.num_modes() {
        return Err(Error::DimensionMismatch {
            context: "pg_gradient_linear batch",
            expected: policy.num_modes(),
            got: batch.num_modes(),
        });
    }
    let g_logit = logit_gradient(&dist, batch, adv, kl)?;
    let mut grad = vec![0.0; policy.num_modes() * policy.dim()];
    for m in 0..policy.num_modes() {
        for (d, &e) in embedding.vector().iter().enumerate() {
            grad[m * policy.dim() + d] = g_logit[m] * e;
        }
    }
    Ok(grad)
}

/// Policy-gradient for one query of a tabular policy; the logit row is
/// the parameter row, all other rows have zero gradient.
pub fn pg_gradient_tabular(
    policy: &TabularPolicy,
    query: usize,
    batch: &RolloutBatch,
    adv: &AdvantageVector,
    kl: Option<&KlPenalty>,
) -> Result<Vec<f64>> {
    let (_, dist) = policy.forward(query);
    logit_gradient(&dist, batch, adv, kl)
}

/// Draw `group_size` modes by inverse CDF over the canonical mode
/// ordering; bit-reproducible for a fixed RNG stream.
pub fn sample_group<R: Rng>(dist: &Distribution, group_size: usize, rng: &mut R) -> Vec<usize> {
    assert!(group_size >= 1);
    (0..group_size)
        .map(|_| {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (i, &p) in dist.probs().iter().enumerate() {
                cum += p;
                if u < cum {
                    return i;
                }
            }
            dist.len() - 1
        })
        .collect()
}

/// One functional-space (mirror) ascent step on the batch objective:
/// `log pi_next = log pi + eta * (N_i A_i / G - beta * log(pi/pi_ref))`,
/// renormalized. A single step lands exactly on the geometric
/// interpolation between `pi` and the batch-optimal policy with exponent
/// `eta * beta`, and iterating converges to the batch-optimal policy.
pub fn mirror_step(
    pi: &Distribution,
    pi_ref: &Distribution,
    counts: &BatchCounts,
    advantages: &[f64],
    beta: f64,
    step_size: f64,
) -> Result<Distribution> {
    if pi.len() != pi_ref.len() || counts.num_modes() != pi.len() || advantages.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            context: "mirror_step",
            expected: pi.len(),
            got: counts.num_modes().max(advantages.len()).max(pi_ref.len()),
        });
    }
    if !beta.is_finite() || beta <= 0.0 || !step_size.is_finite() || step_size < 0.0 {
        return Err(Error::Parameter(
            "mirror_step needs beta > 0 and step_size >= 0".into(),
        ));
    }
    if pi.probs().iter().any(|&p| p <= 0.0) || pi_ref.probs().iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain(
            "mirror_step needs strictly positive distributions".into(),
        ));
    }
    let g = counts.group_size() as f64;
    let log_weights: Vec<f64> = (0..pi.len())
        .map(|i| {
            let p = pi.get(i);
            let functional_grad =
                counts.count(i) * advantages[i] / g - beta * (p / pi_ref.get(i)).ln();
            p.ln() + step_size * functional_grad
        })
        .collect();
    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Distribution::new(weights.iter().map(|w| w / sum).collect())
}

/// Which parameter-update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    #[serde(rename = "adamw")]
    AdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::AdamW,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown optimizer `{s}`")))
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for the three update rules. Fields not used by the
/// selected rule are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum_coeff: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..OptimizerConfig::default()
        }
    }

    pub fn momentum(learning_rate: f64, momentum_coeff: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Momentum,
            learning_rate,
            momentum_coeff,
            ..OptimizerConfig::default()
        }
    }

    pub fn adamw(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Parameter("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum_coeff) {
            return Err(Error::Parameter("momentum must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Parameter("epsilon must be > 0".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            momentum_coeff: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Mutable optimizer state: moment buffers sized to the parameter vector
/// plus the step counter for Adam bias correction. `step` increments the
/// counter exactly once per call.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_len: usize) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step_count: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    /// Apply one ascent update in place.
    pub fn step(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || gradient.len() != params.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer step",
                expected: self.first_moment.len(),
                got: gradient.len(),
            });
        }
        if let Some((i, &g)) = gradient.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {g} at parameter {i} (step {})",
                self.step_count
            )));
        }
        self.step_count += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(gradient) {
                    *p += lr * g;
                }
            }
            OptimizerKind::Momentum => {
                let m = self.config.momentum_coeff;
                for ((p, buf), &g) in params.iter_mut().zip(&mut self.first_moment).zip(gradient) {
                    *buf = m * *buf + g;
                    *p += lr * *buf;
                }
            }
            OptimizerKind::AdamW => {
                let (b1, b2) = (self.config.beta1, self.config.beta2);
                let t = self.step_count as i32;
                let bias1 = 1.0 - b1.powi(t);
                let bias2 = 1.0 - b2.powi(t);
                for i in 0..params.len() {
                    let g = gradient[i];
                    self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
                    self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
                    let m_hat = self.first_moment[i] / bias1;
                    let v_hat = self.second_moment[i] / bias2;
                    params[i] -= lr * self.config.weight_decay * params[i];
                    params[i] += lr * m_hat / (v_hat.sqrt() + self.config.epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::{estimate_advantages, Estimator};
    use crate::theory::{batch_optimal_policy, geometric_interpolation};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> QueryEmbedding {
        QueryEmbedding::new("q", v.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let policy = LinearSoftmaxPolicy::zeros(4, 3);
        let (_, dist) = policy.forward(&emb(&[0.3, 0.2, 0.9])).unwrap();
        assert!(dist.tv_distance(&Distribution::uniform(4)) < 1e-15);
    }

    #[test]
    fn forward_is_stable_for_huge_logits() {
        let policy = LinearSoftmaxPolicy::from_weights(vec![1000.0, 0.0], 2, 1).unwrap();
        let (_, dist) = policy.forward(&emb(&[1.0])).unwrap();
        assert!(dist.get(0) > 1.0 - 1e-12);
        assert!(dist.get(1) < 1e-12);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let policy = LinearSoftmaxPolicy::zeros(2, 3);
        assert!(policy.forward(&emb(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn row_shift_leaves_distribution_unchanged() {
        let weights = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2];
        let policy = LinearSoftmaxPolicy::from_weights(weights.clone(), 2, 3).unwrap();
        let shifted: Vec<f64> = weights.iter().map(|w| w + 2.5).collect();
        let policy2 = LinearSoftmaxPolicy::from_weights(shifted, 2, 3).unwrap();
        let e = emb(&[0.5, 0.25, 0.1]);
        let (_, d1) = policy.forward(&e).unwrap();
        let (_, d2) = policy2.forward(&e).unwrap();
        assert!(d1.tv_distance(&d2) < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_safe() {
        let one_hot = Distribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_group(&one_hot, 16, &mut rng).iter().all(|&m| m == 1));

        let d = Distribution::new(vec![0.5, 0.5]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(sample_group(&d, 100, &mut a), sample_group(&d, 100, &mut b));
    }

    #[test]
    fn sampling_frequency_concentrates() {
        let d = Distribution::new(vec![0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = sample_group(&d, 10_000, &mut rng);
        let freq0 = samples.iter().filter(|&&m| m == 0).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq0), "freq0 = {freq0}");
    }

    #[test]
    fn single_sample_logit_gradient() {
        let policy = TabularPolicy::zeros(1, 2);
        let batch = RolloutBatch::new("q", vec![0], vec![1.0], 2).unwrap();
        let adv = AdvantageVector {
            values: vec![1.0],
            estimator: Estimator::Raw,
            degenerate: false,
        };
        let grad = pg_gradient_tabular(&policy, 0, &batch, &adv, None).unwrap();
        assert!((grad[0] - 0.5).abs() < 1e-12);
        assert!((grad[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let policy = LinearSoftmaxPolicy::zeros(3, 2);
        let e = emb(&[1.0, 0.5]);
        let batch = RolloutBatch::new("q", vec![0, 1, 2, 0], vec![1.0, 0.0, 0.0, 1.0], 3).unwrap();
        let adv = AdvantageVector {
            values: vec![0.0; 4],
            estimator: Estimator::Raw,
            degenerate: true,
        };
        let grad = pg_gradient_linear(&policy, &e, &batch, &adv, None).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn kl_gradient_rejects_unsupported_reference() {
        let policy = TabularPolicy::zeros(1, 2);
        let batch = RolloutBatch::new("q", vec![0], vec![1.0], 2).unwrap();
        let adv = AdvantageVector {
            values: vec![1.0],
            estimator: Estimator::Raw,
            degenerate: false,
        };
        let kl = KlPenalty {
            beta: 1.0,
            reference: Distribution::new(vec![1.0, 0.0]).unwrap(),
        };
        assert!(pg_gradient_tabular(&policy, 0, &batch, &adv, Some(&kl)).is_err());
    }

    #[test]
    fn sgd_step_moves_by_lr_times_gradient() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.1), 1).unwrap();
        let mut params = vec![0.0];
        state.step(&mut params, &[1.0]).unwrap();
        assert!((params[0] - 0.1).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adamw_first_step_is_signed_learning_rate() {
        let mut state = OptimizerState::new(OptimizerConfig::adamw(0.1), 1).unwrap();
        let mut params = vec![0.0];
        state.step(&mut params, &[1.0]).unwrap();
        assert!((params[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn momentum_buffer_approaches_geometric_limit() {
        let mut state = OptimizerState::new(OptimizerConfig::momentum(0.01, 0.9), 1).unwrap();
        let mut params = vec![0.0];
        for _ in 0..600 {
            state.step(&mut params, &[1.0]).unwrap();
        }
        assert!((state.first_moment()[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn optimizer_rejects_non_finite_gradient() {
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.1), 2).unwrap();
        let mut params = vec![0.0, 0.0];
        assert!(state.step(&mut params, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn mirror_step_matches_geometric_interpolation() {
        let pi = Distribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let pi_ref = Distribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        let counts = BatchCounts::new(vec![2.0, 2.0, 0.0], 4).unwrap();
        let advantages = [1.0, -1.0, 0.0];
        let (beta, eta) = (1.0, 0.3);
        let stepped = mirror_step(&pi, &pi_ref, &counts, &advantages, beta, eta).unwrap();
        let target = batch_optimal_policy(&pi_ref, &counts, &advantages, beta).unwrap();
        let interp = geometric_interpolation(&pi, &target.dist, eta * beta).unwrap();
        assert!(stepped.tv_distance(&interp) < 1e-12);
    }

    #[test]
    fn repeated_mirror_steps_converge_to_batch_optimal() {
        let pi_ref = Distribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        let counts = BatchCounts::new(vec![2.0, 2.0, 0.0], 4).unwrap();
        let advantages = [1.0, -1.0, 0.0];
        let target = batch_optimal_policy(&pi_ref, &counts, &advantages, 1.0).unwrap();
        let mut pi = Distribution::uniform(3);
        for _ in 0..350 {
            pi = mirror_step(&pi, &pi_ref, &counts, &advantages, 1.0, 0.1).unwrap();
        }
        assert!(pi.tv_distance(&target.dist) < 1e-10);
    }

    proptest! {
        #[test]
        fn analytic_gradient_matches_finite_differences(
            seed in 0_u64..500,
            use_kl in proptest::bool::ANY,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (num_modes, dim, g) = (3, 2, 4);
            let weights: Vec<f64> = (0..num_modes * dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let policy =
                LinearSoftmaxPolicy::from_weights(weights.clone(), num_modes, dim).unwrap();
            let e = emb(&[0.6, 0.3]);
            let samples: Vec<usize> = (0..g).map(|_| rng.random_range(0..num_modes)).collect();
            let rewards: Vec<f64> = samples.iter().map(|&m| (m == 0) as u8 as f64).collect();
            let batch = RolloutBatch::new("q", samples, rewards, num_modes).unwrap();
            let adv = estimate_advantages(&batch, Estimator::MeanShifted, None).unwrap();
            let kl = if use_kl {
                Some(KlPenalty {
                    beta: 0.7,
                    reference: Distribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
                })
            } else {
                None
            };
            let objective = |w: &[f64]| -> f64 {
                let p = LinearSoftmaxPolicy::from_weights(w.to_vec(), num_modes, dim).unwrap();
                let (_, dist) = p.forward(&e).unwrap();
                let mut v = 0.0;
                for (s, &m) in batch.samples().iter().enumerate() {
                    v += adv.values[s] * dist.get(m).ln() / g as f64;
                }
                if let Some(kl) = &kl {
                    let div: f64 = (0..num_modes)
                        .map(|j| {
                            let pj = dist.get(j);
                            if pj > 0.0 { pj * (pj / kl.reference.get(j)).ln() } else { 0.0 }
                        })
                        .sum();
                    v -= kl.beta * div;
                }
                v
            };
            let analytic = pg_gradient_linear(&policy, &e, &batch, &adv, kl.as_ref()).unwrap();
            let h = 1e-6;
            let mut max_rel = 0.0_f64;
            for i in 0..weights.len() {
                let mut up = weights.clone();
                let mut dn = weights.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
            }
            prop_assert!(max_rel < 1e-5, "max relative error {max_rel}");
        }
    }
}
