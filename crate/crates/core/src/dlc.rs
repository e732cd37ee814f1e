//! Distribution-level calibration: a learned frequency prior over
//! rollouts and the calibrated sampling logits.
//!
//! A memory model with the same linear-softmax shape as the policy is
//! trained by cross-entropy on every sampled (query, mode) pair, so its
//! logits track the empirical rollout frequencies. Rollouts are then
//! drawn from `softmax(f_policy - mu * f_memory)`: frequently sampled
//! modes are down-weighted, rarely sampled ones boosted. Only the rollout
//! draw uses the calibrated logits; gradient updates keep using the
//! policy's own probabilities, and with `mu = 0` a calibrated run is
//! bit-identical to an uncalibrated one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode_space::{Distribution, QueryEmbedding};
use crate::policy::{LinearSoftmaxPolicy, OptimizerKind};

/// Learned frequency prior with a linear-softmax parameterization.
#[derive(Debug, Clone)]
pub struct MemoryModel {
    model: LinearSoftmaxPolicy,
}

impl MemoryModel {
    /// Cold start: zero weights, uniform prior over modes.
    pub fn new(num_modes: usize, dim: usize) -> Self {
        MemoryModel {
            model: LinearSoftmaxPolicy::zeros(num_modes, dim),
        }
    }

    pub fn num_modes(&self) -> usize {
        self.model.num_modes()
    }

    pub fn logits(&self, query: &QueryEmbedding) -> Result<Vec<f64>> {
        Ok(self.model.forward(query)?.0)
    }

    pub fn distribution(&self, query: &QueryEmbedding) -> Result<Distribution> {
        Ok(self.model.forward(query)?.1)
    }

    pub fn params(&self) -> &[f64] {
        self.model.weights()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.model.weights_mut()
    }

    /// Descent gradient of the mean cross-entropy of the memory softmax
    /// against the observed modes.
    pub fn cross_entropy_gradient(
        &self,
        observed: &[(&QueryEmbedding, usize)],
    ) -> Result<Vec<f64>> {
        if observed.is_empty() {
            return Err(Error::Parameter("no observations".into()));
        }
        let dim = self.model.dim();
        let mut grad = vec![0.0; self.model.weights().len()];
        let scale = 1.0 / observed.len() as f64;
        for &(query, mode) in observed {
            if mode >= self.num_modes() {
                return Err(Error::Parameter(format!(
                    "observed mode {mode} out of range"
                )));
            }
            let (_, probs) = self.model.forward(query)?;
            for m in 0..self.num_modes() {
                let residual = probs.get(m) - ((m == mode) as u8 as f64);
                for (d, &e) in query.vector().iter().enumerate() {
                    grad[m * dim + d] += scale * residual * e;
                }
            }
        }
        Ok(grad)
    }
}

/// One SGD step on the memory's cross-entropy loss: raises the logits of
/// frequently observed (query, mode) pairs relative to rare ones.
pub fn memory_update(
    memory: &mut MemoryModel,
    observed: &[(&QueryEmbedding, usize)],
    lr: f64,
) -> Result<()> {
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::Parameter(format!(
            "memory learning rate must be > 0, got {lr}"
        )));
    }
    let grad = memory.cross_entropy_gradient(observed)?;
    for (w, g) in memory.params_mut().iter_mut().zip(grad) {
        *w -= lr * g;
    }
    Ok(())
}

/// Calibrated sampling logits `f_policy - mu * f_memory`; the caller
/// softmaxes the result to get the rollout distribution.
pub fn calibrated_logits(
    policy_logits: &[f64],
    memory_logits: &[f64],
    mu: f64,
) -> Result<Vec<f64>> {
    if policy_logits.len() != memory_logits.len() {
        return Err(Error::DimensionMismatch {
            context: "calibrated_logits",
            expected: policy_logits.len(),
            got: memory_logits.len(),
        });
    }
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::Parameter(format!(
            "mu must be finite and >= 0, got {mu}"
        )));
    }
    Ok(policy_logits
        .iter()
        .zip(memory_logits)
        .map(|(f, m)| f - mu * m)
        .collect())
}

/// How strongly the memory prior reshapes sampling, and how the memory
/// itself is trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mu: f64,
    pub memory_lr: f64,
    pub memory_optimizer: OptimizerKind,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mu: 0.5,
            memory_lr: 0.05,
            memory_optimizer: OptimizerKind::Sgd,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(Error::Parameter("mu must be >= 0".into()));
        }
        if !self.memory_lr.is_finite() || self.memory_lr <= 0.0 {
            return Err(Error::Parameter("memory_lr must be > 0".into()));
        }
        Ok(())
    }
}
