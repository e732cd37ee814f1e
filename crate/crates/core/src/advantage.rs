//! Advantage estimators over a group of binary-reward rollouts, plus
//! inverse-success calibration.
//!
//! All estimators operate on one group of `G` samples for a single query.
//! `Normalized` divides by the population standard deviation, which for
//! binary rewards makes the levels exactly `(1 - p+)/sigma` on successes
//! and `-p+/sigma` on failures — the parameterization the partition-bound
//! report expects. Degenerate all-equal-reward groups produce an all-zero
//! advantage vector with a flag rather than an error, so dynamics runs
//! proceed through batches that carry no signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::BatchCounts;

/// Which baseline/normalization to apply to raw rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Raw,
    MeanShifted,
    Normalized,
    Rloo,
    ReinforcePp,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Raw,
        Estimator::MeanShifted,
        Estimator::Normalized,
        Estimator::Rloo,
        Estimator::ReinforcePp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Raw => "raw",
            Estimator::MeanShifted => "mean_shifted",
            Estimator::Normalized => "normalized",
            Estimator::Rloo => "rloo",
            Estimator::ReinforcePp => "reinforce_pp",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown estimator `{s}`")))
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One group of rollouts for a single query: sampled mode indices and
/// their binary rewards, plus the derived success statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    query: String,
    samples: Vec<usize>,
    rewards: Vec<f64>,
    num_modes: usize,
}

impl RolloutBatch {
    pub fn new(
        query: impl Into<String>,
        samples: Vec<usize>,
        rewards: Vec<f64>,
        num_modes: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parameter("rollout batch is empty".into()));
        }
        if samples.len() != rewards.len() {
            return Err(Error::DimensionMismatch {
                context: "rollout batch rewards",
                expected: samples.len(),
                got: rewards.len(),
            });
        }
        if let Some(&bad) = samples.iter().find(|&&s| s >= num_modes) {
            return Err(Error::Parameter(format!(
                "sample mode {bad} out of range for {num_modes} modes"
            )));
        }
        if rewards.iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(Error::Parameter("rewards must be binary (0 or 1)".into()));
        }
        Ok(RolloutBatch {
            query: query.into(),
            samples,
            rewards,
            num_modes,
        })
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn group_size(&self) -> usize {
        self.samples.len()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn counts(&self) -> BatchCounts {
        BatchCounts::from_samples(&self.samples, self.num_modes)
            .expect("validated batch always tallies")
    }

    /// Sample indices with reward 1.
    pub fn success_set(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&s| self.rewards[s] == 1.0)
            .collect()
    }

    /// Sample indices with reward 0.
    pub fn failure_set(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&s| self.rewards[s] == 0.0)
            .collect()
    }

    /// Batch accuracy: mean reward.
    pub fn p_plus(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.group_size() as f64
    }

    /// Population standard deviation of the rewards; equals
    /// `sqrt(p+ (1 - p+))` for binary rewards.
    pub fn sigma(&self) -> f64 {
        let mean = self.p_plus();
        let var = self
            .rewards
            .iter()
            .map(|&r| (r - mean) * (r - mean))
            .sum::<f64>()
            / self.group_size() as f64;
        var.sqrt()
    }
}

/// Per-sample advantages produced by one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub estimator: Estimator,
    /// Set when a zero-spread batch forced an all-zero vector (the update
    /// degenerates to a pure KL step, or a no-op without KL).
    pub degenerate: bool,
}

fn require_baseline_group(batch: &RolloutBatch, estimator: Estimator) -> Result<()> {
    if batch.group_size() < 2 {
        return Err(Error::Parameter(format!(
            "{estimator} needs a group of at least 2 samples"
        )));
    }
    Ok(())
}

/// Compute per-sample advantages.
///
/// `global_stats` is the `(mean, std)` aggregated across every group in
/// the training step; it is required by `ReinforcePp` and ignored by the
/// group-local estimators.
pub fn estimate_advantages(
    batch: &RolloutBatch,
    estimator: Estimator,
    global_stats: Option<(f64, f64)>,
) -> Result<AdvantageVector> {
    let rewards = batch.rewards();
    let mean = batch.p_plus();
    let (values, degenerate) = match estimator {
        Estimator::Raw => (rewards.to_vec(), false),
        Estimator::MeanShifted => {
            require_baseline_group(batch, estimator)?;
            (rewards.iter().map(|r| r - mean).collect(), false)
        }
        Estimator::Normalized => {
            require_baseline_group(batch, estimator)?;
            let sigma = batch.sigma();
            if sigma == 0.0 {
                (vec![0.0; rewards.len()], true)
            } else {
                (rewards.iter().map(|r| (r - mean) / sigma).collect(), false)
            }
        }
        Estimator::Rloo => {
            require_baseline_group(batch, estimator)?;
            let total: f64 = rewards.iter().sum();
            let g = batch.group_size() as f64;
            (
                rewards
                    .iter()
                    .map(|&r| r - (total - r) / (g - 1.0))
                    .collect(),
                false,
            )
        }
        Estimator::ReinforcePp => {
            let (gmean, gstd) = global_stats.ok_or_else(|| {
                Error::Parameter("reinforce_pp requires global batch statistics".into())
            })?;
            if !gmean.is_finite() || !gstd.is_finite() || gstd < 0.0 {
                return Err(Error::Parameter(format!(
                    "invalid global stats: mean = {gmean}, std = {gstd}"
                )));
            }
            if gstd == 0.0 {
                (vec![0.0; rewards.len()], true)
            } else {
                (rewards.iter().map(|r| (r - gmean) / gstd).collect(), false)
            }
        }
    };
    Ok(AdvantageVector {
        values,
        estimator,
        degenerate,
    })
}

/// Scale factor applied to positive advantages by inverse-success
/// calibration: `(G - |S+|)^alpha`.
pub fn iac_factor(group_size: usize, successes: usize, alpha: f64) -> f64 {
    ((group_size - successes) as f64).powf(alpha)
}

/// Inverse-success advantage calibration: positive entries are scaled by
/// `(G - |S+|)^alpha`, a query-difficulty proxy; negative and zero
/// entries pass through untouched. `alpha = 0` is the identity, and an
/// all-correct batch zeroes the positive entries.
pub fn iac_calibrate(
    adv: &AdvantageVector,
    batch: &RolloutBatch,
    alpha: f64,
) -> Result<AdvantageVector> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Parameter(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    if adv.values.len() != batch.group_size() {
        return Err(Error::DimensionMismatch {
            context: "iac_calibrate",
            expected: batch.group_size(),
            got: adv.values.len(),
        });
    }
    let factor = iac_factor(batch.group_size(), batch.success_set().len(), alpha);
    Ok(AdvantageVector {
        values: adv
            .values
            .iter()
            .map(|&a| if a > 0.0 { a * factor } else { a })
            .collect(),
        estimator: adv.estimator,
        degenerate: adv.degenerate,
    })
}
