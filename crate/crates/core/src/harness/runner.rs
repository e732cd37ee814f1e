//! Seeded experiment runner: the rollout-update loop, collapse
//! detection, and parallel execution across seeds and grid cells.
//!
//! One run owns one RNG stream derived only from its seed, so results
//! are independent of seed-list order and worker count. Each step
//! samples a group from the (optionally calibrated) sampling
//! distribution, scores it against the reward map, estimates and
//! calibrates advantages, logs the batch partition function against the
//! pre-update policy, applies the ascent update, and then trains the
//! memory on the sampled pairs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::advantage::{
    estimate_advantages, iac_calibrate, iac_factor, AdvantageVector, RolloutBatch,
};
use crate::dlc::{calibrated_logits, memory_update, MemoryModel};
use crate::error::Result;
use crate::mode_space::{Distribution, ModeSpace};
use crate::policy::{
    pg_gradient_linear, sample_group, KlPenalty, LinearSoftmaxPolicy, OptimizerState,
};
use crate::theory::{z_prime_report, BatchCounts};

use super::config::{
    ExperimentConfig, ExperimentKind, GridConfig, ResolvedConfig, SimilarityVariant,
};

/// Tracked probability at or above this level counts toward collapse.
pub const COLLAPSE_THRESHOLD: f64 = 0.99;
/// Steps the threshold must persist before a run counts as collapsed.
pub const COLLAPSE_WINDOW: usize = 50;

/// First index `t` such that `series[u] >= 0.99` for all
/// `u in [t, t + 50)`, with the window truncated at the series end
/// (a qualifying tail must hold through the last entry). `None` when no
/// such index exists.
pub fn detect_collapse(series: &[f64]) -> Option<usize> {
    let n = series.len();
    let mut run = 0usize;
    let mut first = None;
    for t in (0..n).rev() {
        if series[t] >= COLLAPSE_THRESHOLD {
            run += 1;
        } else {
            run = 0;
        }
        if run >= COLLAPSE_WINDOW.min(n - t) {
            first = Some(t);
        }
    }
    first
}

/// Identity of one run within an experiment (grid cell plus seed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub grid_index: usize,
    pub estimator: crate::advantage::Estimator,
    pub optimizer: crate::policy::OptimizerKind,
    pub group_size: usize,
    pub iac_alpha: f64,
    /// Mu applied to sampling; 0 when calibration is disabled.
    pub dlc_mu: f64,
    pub variant: Option<SimilarityVariant>,
}

/// One logged training step. Probabilities and entropy describe the
/// post-update policy; the partition function is computed against the
/// pre-update policy that generated the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub tracked_probs: Vec<f64>,
    pub entropy: f64,
    pub z_prime: f64,
    pub iac_factor: f64,
    /// Memory softmax over modes at the primary train query, when
    /// calibration is enabled.
    pub memory_probs: Option<Vec<f64>>,
}

/// Full time series and summary for one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub tracked_names: Vec<String>,
    pub rows: Vec<StepRow>,
    /// 1-based step at which the collapse predicate first holds.
    pub collapse_step: Option<usize>,
    pub final_probs: Vec<f64>,
    /// Mode name with the largest tracked train-query probability at the
    /// final step, ties broken by the lowest mode index.
    pub winner: String,
    pub final_entropy: f64,
}

impl RunRecord {
    /// Max tracked train-query probability per step (the collapse series).
    pub fn collapse_series(&self, cfg: &ResolvedConfig) -> Vec<f64> {
        let train_cols: Vec<usize> = cfg
            .tracked
            .iter()
            .enumerate()
            .filter(|(_, (q, _))| cfg.train_queries.contains(q))
            .map(|(c, _)| c)
            .collect();
        self.rows
            .iter()
            .map(|row| {
                train_cols
                    .iter()
                    .map(|&c| row.tracked_probs[c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Everything produced by one training step, for callers that drive the
/// loop step by step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub row: StepRow,
    /// Pre-update policy distribution per train query.
    pub pre_update: Vec<Distribution>,
    pub batches: Vec<RolloutBatch>,
    /// Per-mode advantages (as used for the partition-function log) per
    /// train query.
    pub mode_advantages: Vec<Vec<f64>>,
}

enum MemoryDriver {
    Sgd {
        lr: f64,
    },
    /// Moment-based rules reuse the shared optimizer state, ascending the
    /// negated cross-entropy gradient.
    Stateful(OptimizerState),
}

/// Mutable training state for one run.
pub struct TrainState {
    cfg: ResolvedConfig,
    policy: LinearSoftmaxPolicy,
    optimizer: OptimizerState,
    memory: Option<(MemoryModel, MemoryDriver)>,
    /// Initial per-query policy distributions, the KL reference.
    initial: Vec<Distribution>,
    step_index: usize,
}

impl TrainState {
    pub fn new(cfg: ResolvedConfig) -> Result<Self> {
        let policy = LinearSoftmaxPolicy::zeros(cfg.num_modes(), cfg.dim());
        let optimizer = OptimizerState::new(cfg.optimizer, policy.weights().len())?;
        let memory = match cfg.dlc.as_ref() {
            Some(cal) => {
                let model = MemoryModel::new(cfg.num_modes(), cfg.dim());
                let driver = match cal.memory_optimizer {
                    crate::policy::OptimizerKind::Sgd => MemoryDriver::Sgd { lr: cal.memory_lr },
                    kind => {
                        let mut opt_cfg = cfg.optimizer;
                        opt_cfg.kind = kind;
                        opt_cfg.learning_rate = cal.memory_lr;
                        MemoryDriver::Stateful(OptimizerState::new(opt_cfg, model.params().len())?)
                    }
                };
                Some((model, driver))
            }
            None => None,
        };
        let initial = cfg
            .embeddings
            .iter()
            .map(|e| policy.forward(e).map(|(_, d)| d))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainState {
            cfg,
            policy,
            optimizer,
            memory,
            initial,
            step_index: 0,
        })
    }

    pub fn policy(&self) -> &LinearSoftmaxPolicy {
        &self.policy
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.cfg
    }

    pub fn memory_model(&self) -> Option<&MemoryModel> {
        self.memory.as_ref().map(|(m, _)| m)
    }

    /// Mode space for one query under the reward map: its rewarded modes
    /// count as correct. Mode indices are remapped to the canonical
    /// correct-first ordering.
    fn query_mode_space(&self, query: usize) -> (ModeSpace, Vec<usize>) {
        let k = self.cfg.num_modes();
        let correct: Vec<usize> = (0..k)
            .filter(|&m| self.cfg.reward_of(query, m) == 1.0)
            .collect();
        let incorrect: Vec<usize> = (0..k)
            .filter(|&m| self.cfg.reward_of(query, m) == 0.0)
            .collect();
        let order: Vec<usize> = correct.iter().chain(incorrect.iter()).copied().collect();
        let space = ModeSpace::new(correct.len(), incorrect.len())
            .expect("reward map covers every train query");
        (space, order)
    }

    /// Run one training iteration.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        self.step_index += 1;
        let cfg = self.cfg.clone();
        let g = cfg.group_size;

        // Rollout phase: sample a group per train query.
        let mut pre_update = Vec::new();
        let mut batches = Vec::new();
        for &q in &cfg.train_queries {
            let (logits, dist) = self.policy.forward(&cfg.embeddings[q])?;
            let sampling = match (&self.memory, cfg.dlc.as_ref()) {
                (Some((memory, _)), Some(cal)) => {
                    let mem_logits = memory.logits(&cfg.embeddings[q])?;
                    Distribution::from_logits(&calibrated_logits(&logits, &mem_logits, cal.mu)?)
                }
                _ => dist.clone(),
            };
            let samples = sample_group(&sampling, g, rng);
            let rewards: Vec<f64> = samples.iter().map(|&m| cfg.reward_of(q, m)).collect();
            batches.push(RolloutBatch::new(
                cfg.mode_names[q].clone(),
                samples,
                rewards,
                cfg.num_modes(),
            )?);
            pre_update.push(dist);
        }

        // Global reward statistics across every group in this step.
        let all_rewards: Vec<f64> = batches
            .iter()
            .flat_map(|b| b.rewards().iter().copied())
            .collect();
        let global_mean = all_rewards.iter().sum::<f64>() / all_rewards.len() as f64;
        let global_var = all_rewards
            .iter()
            .map(|r| (r - global_mean) * (r - global_mean))
            .sum::<f64>()
            / all_rewards.len() as f64;
        let global_stats = Some((global_mean, global_var.sqrt()));

        // Advantage, logging, and update phase.
        let mut mode_advantages = Vec::new();
        let mut z_prime = f64::NAN;
        let mut factor = 1.0;
        for (i, &q) in cfg.train_queries.iter().enumerate() {
            let batch = &batches[i];
            let adv = estimate_advantages(batch, cfg.estimator, global_stats)?;
            let adv = iac_calibrate(&adv, batch, cfg.iac_alpha)?;
            let per_mode = per_mode_advantages(batch, &adv);

            if i == 0 {
                factor = iac_factor(g, batch.success_set().len(), cfg.iac_alpha);
                z_prime = self.log_z_prime(q, &pre_update[i], batch, &per_mode)?;
            }

            let kl = if cfg.kl_beta > 0.0 {
                Some(KlPenalty::new(cfg.kl_beta, self.initial[q].clone())?)
            } else {
                None
            };
            let gradient =
                pg_gradient_linear(&self.policy, &cfg.embeddings[q], batch, &adv, kl.as_ref())?;
            self.optimizer.step(self.policy.weights_mut(), &gradient)?;
            mode_advantages.push(per_mode);
        }

        // Memory training happens strictly after the policy update.
        if let Some((memory, driver)) = &mut self.memory {
            let mut observed = Vec::new();
            for (i, &q) in cfg.train_queries.iter().enumerate() {
                for &m in batches[i].samples() {
                    observed.push((&cfg.embeddings[q], m));
                }
            }
            match driver {
                MemoryDriver::Sgd { lr } => memory_update(memory, &observed, *lr)?,
                MemoryDriver::Stateful(opt) => {
                    let descent = memory.cross_entropy_gradient(&observed)?;
                    let ascent: Vec<f64> = descent.iter().map(|g| -g).collect();
                    opt.step(memory.params_mut(), &ascent)?;
                }
            }
        }

        // Post-update snapshot.
        let tracked_probs = self.tracked_probs()?;
        let primary = cfg.train_queries[0];
        let (_, dist) = self.policy.forward(&cfg.embeddings[primary])?;
        let memory_probs = match &self.memory {
            Some((memory, _)) => Some(
                memory
                    .distribution(&cfg.embeddings[primary])?
                    .probs()
                    .to_vec(),
            ),
            None => None,
        };
        let row = StepRow {
            step: self.step_index,
            tracked_probs,
            entropy: dist.entropy(),
            z_prime,
            iac_factor: factor,
            memory_probs,
        };
        Ok(StepOutcome {
            row,
            pre_update,
            batches,
            mode_advantages,
        })
    }

    fn tracked_probs(&self) -> Result<Vec<f64>> {
        let mut dists: Vec<Option<Distribution>> = vec![None; self.cfg.num_modes()];
        let mut out = Vec::with_capacity(self.cfg.tracked.len());
        for &(q, m) in &self.cfg.tracked {
            if dists[q].is_none() {
                dists[q] = Some(self.policy.forward(&self.cfg.embeddings[q])?.1);
            }
            out.push(dists[q].as_ref().unwrap().get(m));
        }
        Ok(out)
    }

    /// Partition function of the step's batch against the pre-update
    /// policy, via the shared report (no reimplementation). The batch
    /// objective needs beta > 0; when the KL term is disabled the log
    /// uses beta = 1 as the diagnostic convention.
    fn log_z_prime(
        &self,
        query: usize,
        pre_update: &Distribution,
        batch: &RolloutBatch,
        per_mode: &[f64],
    ) -> Result<f64> {
        let (space, order) = self.query_mode_space(query);
        let pi_ref = Distribution::new(order.iter().map(|&m| pre_update.get(m)).collect())?;
        let counts_raw = batch.counts();
        let counts = BatchCounts::new(
            order.iter().map(|&m| counts_raw.count(m)).collect(),
            batch.group_size(),
        )?;
        let advantages: Vec<f64> = order.iter().map(|&m| per_mode[m]).collect();
        let beta = if self.cfg.kl_beta > 0.0 {
            self.cfg.kl_beta
        } else {
            1.0
        };
        let report = z_prime_report(&pi_ref, &counts, &space, &advantages, beta, None)?;
        Ok(report.z_prime)
    }
}

/// Collapse the per-sample advantage vector to per-mode values. Binary
/// rewards depend only on (query, mode), so samples of one mode share
/// one advantage; unsampled modes get 0.
fn per_mode_advantages(batch: &RolloutBatch, adv: &AdvantageVector) -> Vec<f64> {
    let mut values = vec![0.0; batch.num_modes()];
    let mut seen = vec![false; batch.num_modes()];
    for (s, &m) in batch.samples().iter().enumerate() {
        if seen[m] {
            debug_assert!(
                (values[m] - adv.values[s]).abs() < 1e-12,
                "advantage not constant within a mode"
            );
        } else {
            values[m] = adv.values[s];
            seen[m] = true;
        }
    }
    values
}

/// Execute one seeded run to completion.
pub fn run_one(cfg: &ResolvedConfig, meta: RunMeta) -> Result<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let mut state = TrainState::new(cfg.clone())?;
    let mut rows = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        rows.push(state.step(&mut rng)?.row);
    }

    let record_stub = RunRecord {
        meta,
        tracked_names: cfg.tracked_names.clone(),
        rows,
        collapse_step: None,
        final_probs: Vec::new(),
        winner: String::new(),
        final_entropy: 0.0,
    };
    let series = record_stub.collapse_series(cfg);
    let collapse_step = detect_collapse(&series).map(|t| t + 1);

    let last = record_stub.rows.last().expect("steps >= 1");
    let final_probs = last.tracked_probs.clone();
    let train_cols: Vec<usize> = cfg
        .tracked
        .iter()
        .enumerate()
        .filter(|(_, (q, _))| cfg.train_queries.contains(q))
        .map(|(c, _)| c)
        .collect();
    let mut winner_col = train_cols[0];
    for &c in &train_cols {
        if last.tracked_probs[c] > last.tracked_probs[winner_col] {
            winner_col = c;
        }
    }
    let winner = cfg.mode_names[cfg.tracked[winner_col].1].clone();
    let final_entropy = last.entropy;

    Ok(RunRecord {
        collapse_step,
        final_probs,
        winner,
        final_entropy,
        ..record_stub
    })
}

/// Worker count: the `SHARPLAB_WORKERS` environment variable when set,
/// otherwise the machine's available parallelism.
pub fn worker_count_from_env() -> usize {
    if let Ok(raw) = std::env::var("SHARPLAB_WORKERS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

type RunSlots = Mutex<Vec<Option<Result<RunRecord>>>>;

fn run_specs(specs: Vec<(ResolvedConfig, RunMeta)>, workers: usize) -> Result<Vec<RunRecord>> {
    let workers = workers.clamp(1, specs.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: RunSlots = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= specs.len() {
                    break;
                }
                let (cfg, meta) = &specs[i];
                let outcome = run_one(cfg, meta.clone());
                slots.lock().expect("runner mutex")[i] = Some(outcome);
            });
        }
    });
    let mut records = Vec::with_capacity(specs.len());
    for slot in slots.into_inner().expect("runner mutex") {
        records.push(slot.expect("every spec executed")?);
    }
    // Deterministic aggregation order regardless of scheduling.
    records.sort_by_key(|r| (r.meta.seed, r.meta.grid_index));
    Ok(records)
}

fn meta_for(cfg: &ResolvedConfig, kind: ExperimentKind, seed: u64, grid_index: usize) -> RunMeta {
    RunMeta {
        experiment: kind,
        seed,
        grid_index,
        estimator: cfg.estimator,
        optimizer: cfg.optimizer.kind,
        group_size: cfg.group_size,
        iac_alpha: cfg.iac_alpha,
        dlc_mu: cfg.effective_mu(),
        variant: cfg.variant,
    }
}

/// Run one config across its seeds.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<Vec<RunRecord>> {
    let resolved = config.resolve()?;
    let specs: Vec<(ResolvedConfig, RunMeta)> = config
        .effective_seeds()?
        .into_iter()
        .map(|seed| {
            (
                resolved.clone(),
                meta_for(&resolved, config.experiment, seed, 0),
            )
        })
        .collect();
    run_specs(specs, workers)
}

/// Run a grid of configs across the base config's seeds.
pub fn run_grid(
    base: &ExperimentConfig,
    grid: &GridConfig,
    workers: usize,
) -> Result<Vec<RunRecord>> {
    let cells = grid.expand(base);
    let mut specs = Vec::new();
    for (grid_index, cell) in cells.iter().enumerate() {
        let resolved = cell.resolve()?;
        for seed in cell.effective_seeds()? {
            specs.push((
                resolved.clone(),
                meta_for(&resolved, cell.experiment, seed, grid_index),
            ));
        }
    }
    run_specs(specs, workers)
}

/// Median with absent values treated as +infinity; `None` when the
/// median itself is absent (fewer than half the runs collapsed).
pub fn median_collapse_step(records: &[&RunRecord]) -> Option<f64> {
    let mut values: Vec<f64> = records
        .iter()
        .map(|r| r.collapse_step.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN collapse steps"));
    let m = median_of_sorted(&values)?;
    m.is_finite().then_some(m)
}

pub fn median_of_sorted(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Median over a slice in any order.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    median_of_sorted(&sorted)
}

/// One cell of the optimizer comparison table.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub optimizer: crate::policy::OptimizerKind,
    pub group_size: usize,
    pub runs: usize,
    pub collapsed: usize,
    pub median_collapse_step: Option<f64>,
}

/// Median collapse step per optimizer per group size, same config
/// otherwise.
pub fn run_optimizer_ablation(
    config: &ExperimentConfig,
    group_sizes: &[usize],
    workers: usize,
) -> Result<Vec<AblationCell>> {
    let grid = GridConfig {
        optimizers: Some(crate::policy::OptimizerKind::ALL.to_vec()),
        group_sizes: Some(group_sizes.to_vec()),
        ..GridConfig::default()
    };
    let records = run_grid(config, &grid, workers)?;
    let mut cells = Vec::new();
    for optimizer in crate::policy::OptimizerKind::ALL {
        for &g in group_sizes {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.meta.optimizer == optimizer && r.meta.group_size == g)
                .collect();
            cells.push(AblationCell {
                optimizer,
                group_size: g,
                runs: group.len(),
                collapsed: group.iter().filter(|r| r.collapse_step.is_some()).count(),
                median_collapse_step: median_collapse_step(&group),
            });
        }
    }
    Ok(cells)
}
