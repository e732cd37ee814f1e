//! Acceptance suite: one test per criterion (criteria with independent
//! clauses are split so each clause reports its own pass/fail line).
//!
//! Conventions shared by the dynamics criteria: seeds 0..20, the
//! standard four-class embeddings, zero-initialized policies, and the
//! calibrated toy learning rate 2.0 (AdamW mitigation arms run at 0.1;
//! the rationale for both rates lives in the config docs). Medians over
//! seeds treat runs that never collapse as +infinity.
//!
//! Three clause-tests are expected to fail: the mean-shifted/normalized
//! collapse ordering, the area-under-curve ordering in G, and full
//! collapse of the leave-one-out/global-baseline estimators. Each
//! asserts its criterion exactly as specified and reports the measured
//! values; the measured dynamics (and the partition-bound coefficients
//! themselves) contradict those specified orderings.

use std::time::Instant;

use sharplab_core::harness::{
    emit_csv, render_run_csv, render_summary_csv, run_experiment, run_grid, run_optimizer_ablation,
    ExperimentConfig, ExperimentKind, GridConfig, RunRecord,
};
use sharplab_core::policy::OptimizerKind;
use sharplab_core::verify::{
    check_batch_optimal_maximizer, check_gradient_finite_difference, check_inverse_reweighting,
    check_mirror_convergence, check_mirror_interpolation, check_moderate_sharpening,
    check_shift_bounds, check_z_prime_bounds, CheckOutcome,
};

const SEED: u64 = 20_240_817;

fn seeds() -> Vec<u64> {
    (0..20).collect()
}

fn workers() -> usize {
    sharplab_core::harness::worker_count_from_env()
}

fn report(name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("{status} {name}: {detail}");
    assert!(passed, "{name}: {detail}");
}

fn assert_check(name: &str, outcome: CheckOutcome, budget_secs: f64, elapsed: f64) {
    let in_budget = elapsed < budget_secs;
    report(
        name,
        outcome.passed && in_budget,
        &format!(
            "{} [{elapsed:.1}s / {budget_secs:.0}s budget]",
            outcome.detail
        ),
    );
}

fn median_collapse(records: &[RunRecord]) -> f64 {
    let mut v: Vec<f64> = records
        .iter()
        .map(|r| r.collapse_step.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn fmt_median(m: f64) -> String {
    if m.is_finite() {
        format!("{m}")
    } else {
        "none".into()
    }
}

#[test]
fn c01_moderate_sharpening_oracle() {
    let start = Instant::now();
    let outcome = check_moderate_sharpening(10_000, SEED);
    assert_check(
        "criterion 1 (exact-tilt moderate sharpening)",
        outcome,
        10.0,
        start.elapsed().as_secs_f64(),
    );
}

#[test]
fn c02_batch_optimal_is_the_objective_maximizer() {
    let start = Instant::now();
    let outcome = check_batch_optimal_maximizer(1_000, SEED);
    assert_check(
        "criterion 2 (batch-optimal policy maximizes the batch objective)",
        outcome,
        60.0,
        start.elapsed().as_secs_f64(),
    );
}

#[test]
fn c03_partition_function_bounds() {
    let start = Instant::now();
    let outcome = check_z_prime_bounds(10_000, SEED);
    assert_check(
        "criterion 3 (partition-function bounds and unsampled suppression)",
        outcome,
        10.0,
        start.elapsed().as_secs_f64(),
    );
}

#[test]
fn c04_mirror_step_geometry() {
    let one_step = check_mirror_interpolation(1_000, SEED);
    report(
        "criterion 4a (one mirror step = geometric interpolation)",
        one_step.passed,
        &one_step.detail,
    );
    let convergence = check_mirror_convergence(1_000, SEED);
    report(
        "criterion 4b (expected-count mirror ascent converges to batch optimum)",
        convergence.passed,
        &convergence.detail,
    );
}

#[test]
fn c05_kernel_shift_bounds() {
    let outcome = check_shift_bounds(10_000, SEED);
    report(
        "criterion 5 (structured-kernel shift bounds and suppression ratio)",
        outcome.passed,
        &outcome.detail,
    );
}

#[test]
fn c06_idealized_inverse_reweighting() {
    let outcome = check_inverse_reweighting(1_000, SEED);
    report(
        "criterion 6 (inverse-probability reweighting pins the bound at 1)",
        outcome.passed,
        &outcome.detail,
    );
}

#[test]
fn c07a_raw_collapse_and_group_size_ordering() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::SamplingBias);
    cfg.steps = 500;
    cfg.seeds = seeds();
    let records = run_experiment(&cfg, workers()).unwrap();
    let collapsed = records.iter().filter(|r| r.collapse_step.is_some()).count();
    let all_collapsed = collapsed == records.len();
    // The winning label is seed noise, not structure: both superclass
    // and subclass must win somewhere across the twenty seeds.
    let winners_ok = records
        .iter()
        .all(|r| r.winner == "cat" || r.winner == "persian")
        && records.iter().any(|r| r.winner == "cat")
        && records.iter().any(|r| r.winner == "persian");

    let grid = GridConfig {
        group_sizes: Some(vec![2, 4, 8]),
        ..GridConfig::default()
    };
    let mut cfg_g = cfg.clone();
    cfg_g.steps = 2_000;
    let grid_records = run_grid(&cfg_g, &grid, workers()).unwrap();
    let medians: Vec<f64> = [2usize, 4, 8]
        .iter()
        .map(|&g| {
            let group: Vec<RunRecord> = grid_records
                .iter()
                .filter(|r| r.meta.group_size == g)
                .cloned()
                .collect();
            median_collapse(&group)
        })
        .collect();
    let increasing = medians[0] < medians[1] && medians[1] < medians[2];
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 7a (raw baseline collapses; collapse later for larger G)",
        all_collapsed && winners_ok && increasing && elapsed < 120.0,
        &format!(
            "{collapsed}/20 collapsed within 500 steps, winners in {{cat, persian}}: {winners_ok}, \
             medians by G {{2: {}, 4: {}, 8: {}}} strictly increasing: {increasing} [{elapsed:.1}s / 120s budget]",
            medians[0], medians[1], medians[2]
        ),
    );
}

#[test]
fn c07b_estimator_ordering_as_specified() {
    // Specified ordering: raw < mean-shifted < normalized. The binary
    // partition-bound coefficients (sigma^2 for mean-shifted vs sigma for
    // normalized) and the measured dynamics put mean-shifted last, so the
    // middle link is expected to fail; asserted as specified regardless.
    let mut cfg = ExperimentConfig::preset(ExperimentKind::EstimatorAblation);
    cfg.steps = 6_000;
    cfg.seeds = seeds();
    let grid = GridConfig {
        estimators: Some(vec![
            sharplab_core::advantage::Estimator::Raw,
            sharplab_core::advantage::Estimator::MeanShifted,
            sharplab_core::advantage::Estimator::Normalized,
        ]),
        ..GridConfig::default()
    };
    let records = run_grid(&cfg, &grid, workers()).unwrap();
    let by = |est: sharplab_core::advantage::Estimator| -> f64 {
        let group: Vec<RunRecord> = records
            .iter()
            .filter(|r| r.meta.estimator == est)
            .cloned()
            .collect();
        median_collapse(&group)
    };
    let raw = by(sharplab_core::advantage::Estimator::Raw);
    let shifted = by(sharplab_core::advantage::Estimator::MeanShifted);
    let normalized = by(sharplab_core::advantage::Estimator::Normalized);
    let ordered = raw < shifted && shifted < normalized;
    report(
        "criterion 7b (median collapse ordering raw < mean-shifted < normalized)",
        ordered,
        &format!(
            "median collapse steps over 6000-step runs: raw {}, mean_shifted {}, normalized {}",
            fmt_median(raw),
            fmt_median(shifted),
            fmt_median(normalized)
        ),
    );
}

#[test]
fn c08a_held_out_similarity_ordering() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::SemanticCoupling);
    cfg.steps = 500;
    cfg.seeds = seeds();
    let grid = GridConfig {
        variants: Some(sharplab_core::harness::SimilarityVariant::ALL.to_vec()),
        ..GridConfig::default()
    };
    let records = run_grid(&cfg, &grid, workers()).unwrap();
    let siam_col = records[0]
        .tracked_names
        .iter()
        .position(|n| n == "siamese.siamese")
        .expect("coupling runs track the held-out pair");
    let final_median = |variant| {
        let mut values: Vec<f64> = records
            .iter()
            .filter(|r| r.meta.variant == Some(variant))
            .map(|r| r.final_probs[siam_col])
            .collect();
        median(&mut values)
    };
    let high = final_median(sharplab_core::harness::SimilarityVariant::High);
    let mid = final_median(sharplab_core::harness::SimilarityVariant::Mid);
    let low = final_median(sharplab_core::harness::SimilarityVariant::Low);
    let ordered = high < mid && mid < low;
    report(
        "criterion 8a (held-out probability falls faster for closer embeddings)",
        ordered,
        &format!("median final held-out probability high {high:.4} < mid {mid:.4} < low {low:.4}: {ordered}"),
    );
}

#[test]
fn c08b_group_size_area_under_curve_as_specified() {
    // Specified: larger G gives lower area under the held-out
    // probability curve. Under the mean-aggregated gradient, larger G
    // collapses later and damages the held-out query for longer, so the
    // measured AUC rises with G; asserted as specified regardless.
    let mut cfg = ExperimentConfig::preset(ExperimentKind::SemanticCoupling);
    cfg.steps = 500;
    cfg.seeds = seeds();
    let grid = GridConfig {
        group_sizes: Some(vec![2, 4, 8]),
        ..GridConfig::default()
    };
    let records = run_grid(&cfg, &grid, workers()).unwrap();
    let siam_col = records[0]
        .tracked_names
        .iter()
        .position(|n| n == "siamese.siamese")
        .unwrap();
    let auc_median = |g: usize| {
        let mut values: Vec<f64> = records
            .iter()
            .filter(|r| r.meta.group_size == g)
            .map(|r| r.rows.iter().map(|row| row.tracked_probs[siam_col]).sum())
            .collect();
        median(&mut values)
    };
    let (a2, a4, a8) = (auc_median(2), auc_median(4), auc_median(8));
    let decreasing = a2 > a4 && a4 > a8;
    report(
        "criterion 8b (larger G lowers the held-out area under curve)",
        decreasing,
        &format!("median AUC by G {{2: {a2:.2}, 4: {a4:.2}, 8: {a8:.2}}} strictly decreasing: {decreasing}"),
    );
}

#[test]
fn c09a_momentum_and_adamw_accelerate_collapse() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::OptimizerAblation);
    cfg.steps = 2_000;
    cfg.seeds = seeds();
    let cells = run_optimizer_ablation(&cfg, &[8], workers()).unwrap();
    let by = |kind: OptimizerKind| {
        cells
            .iter()
            .find(|c| c.optimizer == kind && c.group_size == 8)
            .and_then(|c| c.median_collapse_step)
            .unwrap_or(f64::INFINITY)
    };
    let sgd = by(OptimizerKind::Sgd);
    let momentum = by(OptimizerKind::Momentum);
    let adamw = by(OptimizerKind::AdamW);
    let momentum_fast = momentum <= 40.0;
    let adamw_faster = adamw < sgd;
    report(
        "criterion 9a (momentum collapses almost instantly; adamw beats sgd)",
        momentum_fast && adamw_faster,
        &format!(
            "median collapse steps at G=8: momentum {momentum} (<= 40), adamw {adamw} < sgd {sgd}"
        ),
    );
}

#[test]
fn c09b_advanced_estimators_all_collapse_as_specified() {
    // Specified: every leave-one-out and global-baseline run collapses
    // within 2000 steps. Both estimators are group-centered, so
    // all-equal-reward batches carry zero advantage and a fraction of
    // seeds freezes below the collapse threshold; asserted as specified
    // regardless.
    let mut cfg = ExperimentConfig::preset(ExperimentKind::EstimatorAblation);
    cfg.steps = 2_000;
    cfg.seeds = seeds();
    let grid = GridConfig {
        estimators: Some(vec![
            sharplab_core::advantage::Estimator::Rloo,
            sharplab_core::advantage::Estimator::ReinforcePp,
        ]),
        ..GridConfig::default()
    };
    let records = run_grid(&cfg, &grid, workers()).unwrap();
    let count = |est: sharplab_core::advantage::Estimator| {
        records
            .iter()
            .filter(|r| r.meta.estimator == est && r.collapse_step.is_some())
            .count()
    };
    let rloo = count(sharplab_core::advantage::Estimator::Rloo);
    let rpp = count(sharplab_core::advantage::Estimator::ReinforcePp);
    let all = rloo == 20 && rpp == 20;
    report(
        "criterion 9b (rloo and reinforce_pp all collapse within 2000 steps)",
        all,
        &format!("collapsed within 2000 steps: rloo {rloo}/20, reinforce_pp {rpp}/20"),
    );
}

#[test]
fn c10_mitigations() {
    // Uncalibrated baseline.
    let mut base = ExperimentConfig::preset(ExperimentKind::SamplingBias);
    base.steps = 2_000;
    base.seeds = seeds();
    let base_records = run_experiment(&base, workers()).unwrap();
    let base_median = median_collapse(&base_records);

    // Inverse-success calibration alone.
    let mut iac = ExperimentConfig::preset(ExperimentKind::Mitigation);
    iac.steps = 2_000;
    iac.seeds = seeds();
    iac.iac_alpha = 1.0;
    let iac_records = run_experiment(&iac, workers()).unwrap();
    let iac_median = median_collapse(&iac_records);
    let delayed = iac_median >= 1.5 * base_median;
    report(
        "criterion 10a (inverse-success calibration delays collapse >= 1.5x)",
        delayed,
        &format!(
            "uncalibrated median {} vs calibrated median {} (ratio {})",
            fmt_median(base_median),
            fmt_median(iac_median),
            if iac_median.is_finite() {
                format!("{:.2}", iac_median / base_median)
            } else {
                "inf".into()
            }
        ),
    );

    // Full calibration under both optimizers. AdamW runs at its own toy
    // rate (0.1), where the uncalibrated baseline still always collapses.
    let mut full_sgd = iac.clone();
    full_sgd.dlc_enabled = true;
    full_sgd.dlc_mu = 0.5;
    let full_sgd_records = run_experiment(&full_sgd, workers()).unwrap();
    let sgd_arrested = full_sgd_records
        .iter()
        .filter(|r| r.collapse_step.is_none())
        .count();

    let mut adamw_base = base.clone();
    adamw_base.optimizer = OptimizerKind::AdamW;
    adamw_base.lr = 0.1;
    let adamw_base_records = run_experiment(&adamw_base, workers()).unwrap();
    let adamw_base_collapsed = adamw_base_records
        .iter()
        .filter(|r| r.collapse_step.is_some())
        .count();

    let mut full_adamw = full_sgd.clone();
    full_adamw.optimizer = OptimizerKind::AdamW;
    full_adamw.lr = 0.1;
    let full_adamw_records = run_experiment(&full_adamw, workers()).unwrap();
    let adamw_arrested = full_adamw_records
        .iter()
        .filter(|r| r.collapse_step.is_none())
        .count();

    let arrest_ok = sgd_arrested * 5 >= 20 * 4 && adamw_arrested * 5 >= 20 * 4;
    report(
        "criterion 10b (full calibration arrests collapse in >= 80% of seeds)",
        arrest_ok && adamw_base_collapsed == 20,
        &format!(
            "no collapse within 2000 steps: sgd {sgd_arrested}/20, adamw {adamw_arrested}/20 \
             (uncalibrated adamw baseline collapses {adamw_base_collapsed}/20)"
        ),
    );

    // Disabled calibrations are bit-identical to the baseline.
    let mut disabled = ExperimentConfig::preset(ExperimentKind::Mitigation);
    disabled.steps = 2_000;
    disabled.seeds = seeds();
    disabled.iac_alpha = 0.0;
    disabled.dlc_enabled = true;
    disabled.dlc_mu = 0.0;
    let disabled_records = run_experiment(&disabled, workers()).unwrap();
    let bit_identical = base_records
        .iter()
        .zip(&disabled_records)
        .all(|(a, b)| render_run_csv(a) == render_run_csv(b));
    report(
        "criterion 10c (alpha = 0, mu = 0 runs are bit-identical to baseline)",
        bit_identical,
        "per-step CSV bytes equal across all 20 seeds",
    );
}

#[test]
fn c11_gradient_integrity() {
    let outcome = check_gradient_finite_difference(100, SEED);
    report(
        "criterion 11 (analytic gradients match finite differences)",
        outcome.passed,
        &outcome.detail,
    );
}

#[test]
fn c12_determinism_across_worker_counts() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Mitigation);
    cfg.steps = 120;
    cfg.seeds = vec![2, 0, 1, 7];
    cfg.iac_alpha = 1.0;
    cfg.dlc_enabled = true;
    let grid = GridConfig {
        group_sizes: Some(vec![2, 8]),
        ..GridConfig::default()
    };

    let serial = run_grid(&cfg, &grid, 1).unwrap();
    let parallel = run_grid(&cfg, &grid, 8).unwrap();

    let dir_a = std::env::temp_dir().join("sharplab_acceptance_det_a");
    let dir_b = std::env::temp_dir().join("sharplab_acceptance_det_b");
    for dir in [&dir_a, &dir_b] {
        std::fs::remove_dir_all(dir).ok();
    }
    let paths_a = emit_csv(&serial, &dir_a).unwrap();
    let paths_b = emit_csv(&parallel, &dir_b).unwrap();

    let mut identical = paths_a.len() == paths_b.len();
    for (a, b) in paths_a.iter().zip(&paths_b) {
        identical &= a.file_name() == b.file_name();
        identical &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    }
    identical &= render_summary_csv(&serial) == render_summary_csv(&parallel);

    for dir in [&dir_a, &dir_b] {
        std::fs::remove_dir_all(dir).ok();
    }
    report(
        "criterion 12 (byte-identical CSV output at 1 and 8 workers)",
        identical,
        &format!("{} files compared byte-for-byte", paths_a.len()),
    );
}
