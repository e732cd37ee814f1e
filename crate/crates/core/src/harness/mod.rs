//! Seeded experiment harness: configs, the rollout-update runner,
//! collapse metrics, CSV emission, and report aggregation.

pub mod config;
pub mod csv;
pub mod report;
pub mod runner;

pub use config::{
    EmbeddingSpec, ExperimentConfig, ExperimentKind, GridConfig, PairSpec, ResolvedConfig,
    SimilarityVariant,
};
pub use csv::{emit_csv, read_csv, render_run_csv, render_summary_csv, run_filename};
pub use runner::{
    detect_collapse, median, median_collapse_step, run_experiment, run_grid,
    run_optimizer_ablation, worker_count_from_env, AblationCell, RunMeta, RunRecord, StepOutcome,
    StepRow, TrainState, COLLAPSE_THRESHOLD, COLLAPSE_WINDOW,
};
