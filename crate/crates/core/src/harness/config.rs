//! Experiment configuration: JSON key-value files with defaults for the
//! standard four-class embedding setup, plus grid expansion for sweeps.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::Estimator;
use crate::dlc::CalibrationConfig;
use crate::error::{Error, Result};
use crate::mode_space::QueryEmbedding;
use crate::policy::{OptimizerConfig, OptimizerKind};

/// Which experimental protocol a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SamplingBias,
    SemanticCoupling,
    EstimatorAblation,
    OptimizerAblation,
    Mitigation,
    Custom,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SamplingBias => "sampling_bias",
            ExperimentKind::SemanticCoupling => "semantic_coupling",
            ExperimentKind::EstimatorAblation => "estimator_ablation",
            ExperimentKind::OptimizerAblation => "optimizer_ablation",
            ExperimentKind::Mitigation => "mitigation",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Which held-out embedding the coupling experiment probes; the variants
/// progressively shift mass from the shared to the held-out coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityVariant {
    High,
    Mid,
    Low,
}

impl SimilarityVariant {
    pub const ALL: [SimilarityVariant; 3] = [
        SimilarityVariant::High,
        SimilarityVariant::Mid,
        SimilarityVariant::Low,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SimilarityVariant::High => "high",
            SimilarityVariant::Mid => "mid",
            SimilarityVariant::Low => "low",
        }
    }

    pub fn siamese_vector(&self) -> Vec<f64> {
        match self {
            SimilarityVariant::High => vec![0.25, 0.5, 0.75, 0.1],
            SimilarityVariant::Mid => vec![0.1, 0.5, 0.9, 0.1],
            SimilarityVariant::Low => vec![0.0, 0.5, 1.0, 0.1],
        }
    }
}

/// A named embedding in config form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub name: String,
    pub vector: Vec<f64>,
}

/// A (query, mode) pair by name, used for reward rules and tracking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub query: String,
    pub mode: String,
}

impl PairSpec {
    pub fn new(query: impl Into<String>, mode: impl Into<String>) -> Self {
        PairSpec {
            query: query.into(),
            mode: mode.into(),
        }
    }
}

fn default_steps() -> usize {
    500
}
fn default_group_size() -> usize {
    8
}
fn default_estimator() -> Estimator {
    Estimator::Raw
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}
// Calibrated so the raw-advantage baseline collapses within 500 steps at
// G = 8 for every seed (max observed 390); see the config docs.
fn default_lr() -> f64 {
    2.0
}
fn default_momentum() -> f64 {
    0.9
}
fn default_adam_b1() -> f64 {
    0.9
}
fn default_adam_b2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_dlc_mu() -> f64 {
    0.5
}
fn default_memory_lr() -> f64 {
    0.05
}

/// Flat experiment config. Every key has a default except `experiment`;
/// `custom` experiments must spell out embeddings, reward map, train
/// queries, and tracked pairs, while the named experiments fill them
/// with the standard four-class setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingSpec>,
    /// (query, mode) pairs that earn reward 1; everything else earns 0.
    #[serde(default)]
    pub reward_map: Vec<PairSpec>,
    #[serde(default)]
    pub train_queries: Vec<String>,
    #[serde(default)]
    pub tracked: Vec<PairSpec>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_adam_b1")]
    pub adam_b1: f64,
    #[serde(default = "default_adam_b2")]
    pub adam_b2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// 0 disables the KL term in the policy update.
    #[serde(default)]
    pub kl_beta: f64,
    #[serde(default)]
    pub iac_alpha: f64,
    #[serde(default)]
    pub dlc_enabled: bool,
    #[serde(default = "default_dlc_mu")]
    pub dlc_mu: f64,
    #[serde(default = "default_memory_lr")]
    pub memory_lr: f64,
    #[serde(default = "default_optimizer")]
    pub memory_optimizer: OptimizerKind,
    /// Shorthand for a single-run config; mutually exclusive with `seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub similarity_variant: Option<SimilarityVariant>,
}

impl ExperimentConfig {
    /// Defaults for one experiment kind; fields can be adjusted before
    /// resolving.
    pub fn preset(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: kind,
            embeddings: Vec::new(),
            reward_map: Vec::new(),
            train_queries: Vec::new(),
            tracked: Vec::new(),
            steps: default_steps(),
            group_size: default_group_size(),
            estimator: default_estimator(),
            optimizer: default_optimizer(),
            lr: default_lr(),
            momentum: default_momentum(),
            adam_b1: default_adam_b1(),
            adam_b2: default_adam_b2(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            kl_beta: 0.0,
            iac_alpha: 0.0,
            dlc_enabled: false,
            dlc_mu: default_dlc_mu(),
            memory_lr: default_memory_lr(),
            memory_optimizer: default_optimizer(),
            seed: None,
            seeds: Vec::new(),
            similarity_variant: None,
        }
    }

    /// The seed list a run family executes over: `seeds`, or the single
    /// `seed` shorthand, or seed 0 when neither is given.
    pub fn effective_seeds(&self) -> Result<Vec<u64>> {
        match (self.seed, self.seeds.is_empty()) {
            (Some(_), false) => Err(Error::Config(
                "config sets both `seed` and `seeds`; use one".into(),
            )),
            (Some(s), true) => Ok(vec![s]),
            (None, false) => Ok(self.seeds.clone()),
            (None, true) => Ok(vec![0]),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        ExperimentConfig::from_json(&text)
    }

    /// The standard four-class embedding set; the held-out subclass
    /// vector follows the similarity variant.
    pub fn canonical_embeddings(variant: SimilarityVariant) -> Vec<EmbeddingSpec> {
        vec![
            EmbeddingSpec {
                name: "cat".into(),
                vector: vec![0.5, 0.5, 0.5, 0.1],
            },
            EmbeddingSpec {
                name: "persian".into(),
                vector: vec![0.75, 0.5, 0.25, 0.1],
            },
            EmbeddingSpec {
                name: "dog".into(),
                vector: vec![0.1, 0.1, 0.1, 0.9],
            },
            EmbeddingSpec {
                name: "siamese".into(),
                vector: variant.siamese_vector(),
            },
        ]
    }

    fn default_reward_map() -> Vec<PairSpec> {
        vec![
            PairSpec::new("persian", "cat"),
            PairSpec::new("persian", "persian"),
            PairSpec::new("siamese", "cat"),
            PairSpec::new("siamese", "siamese"),
        ]
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be >= 1".into()));
        }
        self.effective_seeds()?;
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            return Err(Error::Config("kl_beta must be >= 0".into()));
        }
        if !self.iac_alpha.is_finite() || self.iac_alpha < 0.0 {
            return Err(Error::Config("iac_alpha must be >= 0".into()));
        }

        let kind = self.experiment;
        if self.similarity_variant.is_some()
            && !matches!(
                kind,
                ExperimentKind::SemanticCoupling | ExperimentKind::Custom
            )
        {
            return Err(Error::Config(
                "similarity_variant only applies to semantic_coupling (or custom) experiments"
                    .into(),
            ));
        }
        let variant = match kind {
            ExperimentKind::SemanticCoupling => {
                Some(self.similarity_variant.unwrap_or(SimilarityVariant::High))
            }
            _ => self.similarity_variant,
        };

        let embedding_specs = if self.embeddings.is_empty() {
            if kind == ExperimentKind::Custom {
                return Err(Error::Config(
                    "custom experiments must list embeddings".into(),
                ));
            }
            Self::canonical_embeddings(variant.unwrap_or(SimilarityVariant::High))
        } else {
            if kind != ExperimentKind::Custom {
                let canonical =
                    Self::canonical_embeddings(variant.unwrap_or(SimilarityVariant::High));
                if self.embeddings != canonical {
                    return Err(Error::Config(format!(
                        "{} experiments use the standard four-class embeddings; \
                         use experiment = custom to override them",
                        kind.name()
                    )));
                }
            }
            self.embeddings.clone()
        };

        let mut names = HashSet::new();
        for spec in &embedding_specs {
            if !names.insert(spec.name.clone()) {
                return Err(Error::Config(format!(
                    "duplicate embedding name `{}`",
                    spec.name
                )));
            }
        }
        let dim = embedding_specs[0].vector.len();
        if embedding_specs.iter().any(|s| s.vector.len() != dim) {
            return Err(Error::Config("embeddings must share one dimension".into()));
        }
        let embeddings: Vec<QueryEmbedding> = embedding_specs
            .iter()
            .map(|s| QueryEmbedding::new(s.name.clone(), s.vector.clone()))
            .collect::<Result<_>>()?;
        let mode_names: Vec<String> = embedding_specs.iter().map(|s| s.name.clone()).collect();
        let index_of = |name: &str, what: &str| -> Result<usize> {
            mode_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown {what} `{name}`")))
        };

        let train_names: Vec<String> = if self.train_queries.is_empty() {
            if kind == ExperimentKind::Custom {
                return Err(Error::Config(
                    "custom experiments must list train_queries".into(),
                ));
            }
            vec!["persian".into()]
        } else {
            self.train_queries.clone()
        };
        let train_queries: Vec<usize> = train_names
            .iter()
            .map(|n| index_of(n, "train query"))
            .collect::<Result<_>>()?;

        let reward_pairs = if self.reward_map.is_empty() {
            if kind == ExperimentKind::Custom {
                return Err(Error::Config(
                    "custom experiments must list reward_map".into(),
                ));
            }
            Self::default_reward_map()
        } else {
            self.reward_map.clone()
        };
        let mut reward = HashSet::new();
        for pair in &reward_pairs {
            reward.insert((
                index_of(&pair.query, "reward query")?,
                index_of(&pair.mode, "reward mode")?,
            ));
        }
        for (&q, name) in train_queries.iter().zip(&train_names) {
            if !reward.iter().any(|&(rq, _)| rq == q) {
                return Err(Error::Config(format!(
                    "reward_map does not cover train query `{name}`"
                )));
            }
        }

        let tracked_pairs = if self.tracked.is_empty() {
            match kind {
                ExperimentKind::Custom => {
                    return Err(Error::Config(
                        "custom experiments must list tracked pairs".into(),
                    ))
                }
                ExperimentKind::SemanticCoupling => vec![
                    PairSpec::new("persian", "cat"),
                    PairSpec::new("persian", "persian"),
                    PairSpec::new("siamese", "cat"),
                    PairSpec::new("siamese", "persian"),
                    PairSpec::new("siamese", "dog"),
                    PairSpec::new("siamese", "siamese"),
                ],
                _ => vec![
                    PairSpec::new("persian", "cat"),
                    PairSpec::new("persian", "persian"),
                ],
            }
        } else {
            self.tracked.clone()
        };
        let tracked: Vec<(usize, usize)> = tracked_pairs
            .iter()
            .map(|p| {
                Ok((
                    index_of(&p.query, "tracked query")?,
                    index_of(&p.mode, "tracked mode")?,
                ))
            })
            .collect::<Result<_>>()?;
        // Collapse detection and winner selection read the train-query
        // columns of the tracked set.
        if !tracked.iter().any(|(q, _)| train_queries.contains(q)) {
            return Err(Error::Config(
                "tracked pairs must include at least one train query".into(),
            ));
        }

        if kind == ExperimentKind::Mitigation && self.iac_alpha == 0.0 && !self.dlc_enabled {
            return Err(Error::Config(
                "mitigation experiments need iac_alpha > 0 and/or dlc_enabled".into(),
            ));
        }

        let optimizer_config = OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.lr,
            momentum_coeff: self.momentum,
            beta1: self.adam_b1,
            beta2: self.adam_b2,
            epsilon: self.adam_eps,
            weight_decay: self.weight_decay,
        };
        optimizer_config.validate()?;

        let dlc = if self.dlc_enabled {
            let cal = CalibrationConfig {
                mu: self.dlc_mu,
                memory_lr: self.memory_lr,
                memory_optimizer: self.memory_optimizer,
            };
            cal.validate()?;
            Some(cal)
        } else {
            None
        };

        Ok(ResolvedConfig {
            kind,
            embeddings,
            mode_names,
            reward,
            train_queries,
            tracked,
            tracked_names: tracked_pairs
                .iter()
                .map(|p| format!("{}.{}", p.query, p.mode))
                .collect(),
            steps: self.steps,
            group_size: self.group_size,
            estimator: self.estimator,
            optimizer: optimizer_config,
            kl_beta: self.kl_beta,
            iac_alpha: self.iac_alpha,
            dlc,
            variant,
        })
    }
}

/// A fully validated, index-resolved configuration for one run family.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    /// One embedding per class; mode `m` is the label `mode_names[m]`.
    pub embeddings: Vec<QueryEmbedding>,
    pub mode_names: Vec<String>,
    /// (query index, mode index) pairs that earn reward 1.
    pub reward: HashSet<(usize, usize)>,
    pub train_queries: Vec<usize>,
    pub tracked: Vec<(usize, usize)>,
    pub tracked_names: Vec<String>,
    pub steps: usize,
    pub group_size: usize,
    pub estimator: Estimator,
    pub optimizer: OptimizerConfig,
    pub kl_beta: f64,
    pub iac_alpha: f64,
    pub dlc: Option<CalibrationConfig>,
    pub variant: Option<SimilarityVariant>,
}

impl ResolvedConfig {
    pub fn num_modes(&self) -> usize {
        self.embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn reward_of(&self, query: usize, mode: usize) -> f64 {
        if self.reward.contains(&(query, mode)) {
            1.0
        } else {
            0.0
        }
    }

    /// Mu actually applied to sampling (0 when calibration is off).
    pub fn effective_mu(&self) -> f64 {
        self.dlc.as_ref().map_or(0.0, |c| c.mu)
    }
}

/// Axes for a sweep; each listed axis replaces the corresponding base
/// field, and the cross product forms the grid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub estimators: Option<Vec<Estimator>>,
    #[serde(default)]
    pub optimizers: Option<Vec<OptimizerKind>>,
    #[serde(default)]
    pub group_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub iac_alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub dlc_mus: Option<Vec<f64>>,
    #[serde(default)]
    pub variants: Option<Vec<SimilarityVariant>>,
}

impl GridConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expand the base config across the grid, outermost axis first.
    pub fn expand(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let estimators = self
            .estimators
            .clone()
            .unwrap_or_else(|| vec![base.estimator]);
        let optimizers = self
            .optimizers
            .clone()
            .unwrap_or_else(|| vec![base.optimizer]);
        let group_sizes = self
            .group_sizes
            .clone()
            .unwrap_or_else(|| vec![base.group_size]);
        let alphas = self
            .iac_alphas
            .clone()
            .unwrap_or_else(|| vec![base.iac_alpha]);
        let mus = self.dlc_mus.clone().unwrap_or_else(|| vec![base.dlc_mu]);
        let variants: Vec<Option<SimilarityVariant>> = match &self.variants {
            Some(vs) => vs.iter().map(|v| Some(*v)).collect(),
            None => vec![base.similarity_variant],
        };

        let mut cells = Vec::new();
        for &estimator in &estimators {
            for &optimizer in &optimizers {
                for &group_size in &group_sizes {
                    for &iac_alpha in &alphas {
                        for &dlc_mu in &mus {
                            for &variant in &variants {
                                let mut cfg = base.clone();
                                cfg.estimator = estimator;
                                cfg.optimizer = optimizer;
                                cfg.group_size = group_size;
                                cfg.iac_alpha = iac_alpha;
                                cfg.dlc_mu = dlc_mu;
                                cfg.similarity_variant = variant;
                                cells.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}
