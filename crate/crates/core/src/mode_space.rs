//! Core domain types: mode spaces, probability distributions over modes,
//! query embeddings, shared binary advantage levels, and the
//! moderate/over-sharpening classifier.
//!
//! A mode space coarsens the output space for one query into `K1` correct
//! modes followed by `K2` incorrect modes. The ordering is canonical
//! (correct modes first), so a mode's label is derivable from its index
//! and index semantics stay stable across modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex sum invariant of [`Distribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A correct-mode probability must drop by more than this before the
/// classifier calls the update over-sharpening. Ties and float noise at
/// or below this scale count as non-decreasing.
pub const SHARPENING_TOL: f64 = 1e-12;

/// Correctness tag of a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Correct,
    Incorrect,
}

/// Outcome of comparing an updated policy against a reference policy.
///
/// `Moderate` means no correct mode lost probability (up to
/// [`SHARPENING_TOL`]); `Over` means at least one did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharpening {
    Moderate,
    Over,
}

/// A coarsened output space: `num_correct` correct modes followed by
/// `num_incorrect` incorrect ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSpace {
    num_correct: usize,
    num_incorrect: usize,
}

impl ModeSpace {
    /// At least one correct mode is required; incorrect modes are optional.
    pub fn new(num_correct: usize, num_incorrect: usize) -> Result<Self> {
        if num_correct == 0 {
            return Err(Error::Parameter(
                "mode space needs at least one correct mode".into(),
            ));
        }
        Ok(ModeSpace {
            num_correct,
            num_incorrect,
        })
    }

    pub fn num_correct(&self) -> usize {
        self.num_correct
    }

    pub fn num_incorrect(&self) -> usize {
        self.num_incorrect
    }

    pub fn num_modes(&self) -> usize {
        self.num_correct + self.num_incorrect
    }

    pub fn label(&self, index: usize) -> ModeLabel {
        assert!(index < self.num_modes(), "mode index out of range");
        if index < self.num_correct {
            ModeLabel::Correct
        } else {
            ModeLabel::Incorrect
        }
    }

    pub fn is_correct(&self, index: usize) -> bool {
        self.label(index) == ModeLabel::Correct
    }

    pub fn labels(&self) -> Vec<ModeLabel> {
        (0..self.num_modes()).map(|i| self.label(i)).collect()
    }

    pub fn correct_indices(&self) -> std::ops::Range<usize> {
        0..self.num_correct
    }

    pub fn incorrect_indices(&self) -> std::ops::Range<usize> {
        self.num_correct..self.num_modes()
    }
}

/// A probability vector over the modes of one query.
///
/// Construction enforces the simplex invariants: entries in `[0, 1]` and a
/// total within [`SIMPLEX_TOL`] of one. Values are stored as given, not
/// re-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0 + SIMPLEX_TOL).contains(&p) {
                return Err(Error::Distribution(format!(
                    "entry {i} = {p} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Distribution { probs })
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution needs at least one mode");
        Distribution {
            probs: vec![1.0 / len as f64; len],
        }
    }

    /// Numerically stable softmax of a logit vector.
    pub fn from_logits(logits: &[f64]) -> Self {
        Distribution {
            probs: stable_softmax(logits),
        }
    }

    /// Normalize a vector of non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Distribution(
                "weights must be non-negative with a positive finite sum".into(),
            ));
        }
        Ok(Distribution {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy in nats, with the `0 * ln 0 = 0` convention.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Total-variation distance `0.5 * sum |p_i - q_i|`.
    pub fn tv_distance(&self, other: &Distribution) -> f64 {
        assert_eq!(self.len(), other.len(), "tv_distance on mismatched lengths");
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }

    /// Index of the largest entry, ties broken by the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-subtracted softmax; safe for logits of any magnitude.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty logit vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A named feature vector for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbedding {
    name: String,
    vector: Vec<f64>,
}

impl QueryEmbedding {
    pub fn new(name: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::Parameter("embedding vector is empty".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("embedding has non-finite entries".into()));
        }
        Ok(QueryEmbedding {
            name: name.into(),
            vector,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dot(&self, other: &QueryEmbedding) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot product on mismatched dims");
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum()
    }
}

/// Shared binary advantage levels plus the KL coefficient: correct modes
/// carry `a_plus >= 0`, incorrect modes carry `a_minus < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageSpec {
    pub a_plus: f64,
    pub a_minus: f64,
    pub beta: f64,
}

impl AdvantageSpec {
    pub fn new(a_plus: f64, a_minus: f64, beta: f64) -> Result<Self> {
        if !a_plus.is_finite() || a_plus < 0.0 {
            return Err(Error::Parameter(format!(
                "a_plus must be finite and >= 0, got {a_plus}"
            )));
        }
        if !a_minus.is_finite() || a_minus >= 0.0 {
            return Err(Error::Parameter(format!(
                "a_minus must be finite and < 0, got {a_minus}"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Parameter(format!(
                "beta must be finite and > 0, got {beta}"
            )));
        }
        Ok(AdvantageSpec {
            a_plus,
            a_minus,
            beta,
        })
    }

    /// Expand to a per-mode advantage vector in canonical ordering.
    pub fn per_mode(&self, modes: &ModeSpace) -> Vec<f64> {
        (0..modes.num_modes())
            .map(|i| {
                if modes.is_correct(i) {
                    self.a_plus
                } else {
                    self.a_minus
                }
            })
            .collect()
    }
}

/// Classify an updated policy against a reference policy.
///
/// Returns `Moderate` iff every correct mode satisfies
/// `pi_new(o) >= pi_ref(o) - SHARPENING_TOL`; the non-strict reading makes
/// the classifier reflexive (`classify(p, p) = Moderate`).
pub fn classify_sharpening(
    pi_new: &Distribution,
    pi_ref: &Distribution,
    modes: &ModeSpace,
) -> Result<Sharpening> {
    if pi_new.len() != modes.num_modes() {
        return Err(Error::DimensionMismatch {
            context: "classify_sharpening pi_new",
            expected: modes.num_modes(),
            got: pi_new.len(),
        });
    }
    if pi_ref.len() != modes.num_modes() {
        return Err(Error::DimensionMismatch {
            context: "classify_sharpening pi_ref",
            expected: modes.num_modes(),
            got: pi_ref.len(),
        });
    }
    for i in modes.correct_indices() {
        if pi_new.get(i) < pi_ref.get(i) - SHARPENING_TOL {
            return Ok(Sharpening::Over);
        }
    }
    Ok(Sharpening::Moderate)
}
