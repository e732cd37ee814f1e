//! Randomized oracle suite: independent numerical checks of every
//! closed-form result the crate implements.
//!
//! Each check draws randomized instances from a fixed seed and verifies
//! the closed form against a route that does not share code with it:
//! projected gradient ascent over the simplex, central finite
//! differences, direct evaluation of elementary bounds, or hand-derived
//! worked cases. The `verify` CLI subcommand and the acceptance test
//! suite both run these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advantage::{estimate_advantages, Estimator, RolloutBatch};
use crate::coupling::{
    alignment_stats, exact_logit_shift, induced_shift_bound, suppression_ratio, KernelEnvelope,
    ShiftCase, TargetShiftVector,
};
use crate::mode_space::{
    classify_sharpening, AdvantageSpec, Distribution, ModeSpace, QueryEmbedding, Sharpening,
};
use crate::policy::{
    mirror_step, pg_gradient_linear, pg_gradient_tabular, KlPenalty, LinearSoftmaxPolicy,
    TabularPolicy,
};
use crate::theory::{
    batch_optimal_policy, geometric_interpolation, optimal_policy, z_prime_report, BatchCounts,
    BinaryStats,
};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Uniform point on the simplex (normalized exponentials).
fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Distribution {
    let weights: Vec<f64> = (0..k)
        .map(|_| (-(1.0 - rng.random::<f64>()).ln()).max(1e-300))
        .collect();
    Distribution::from_weights(&weights).expect("positive weights")
}

/// Simplex point mixed with the uniform distribution, floor `mix / k`.
fn random_interior_simplex<R: Rng>(rng: &mut R, k: usize, mix: f64) -> Distribution {
    let d = random_simplex(rng, k);
    let u = 1.0 / k as f64;
    Distribution::new(
        d.probs()
            .iter()
            .map(|&p| (1.0 - mix) * p + mix * u)
            .collect(),
    )
    .expect("mixture stays on the simplex")
}

/// Integer counts from `group_size` categorical draws.
fn random_counts<R: Rng>(rng: &mut R, k: usize, group_size: usize) -> BatchCounts {
    let sampler = random_simplex(rng, k);
    let samples: Vec<usize> = (0..group_size)
        .map(|_| crate::policy::sample_group(&sampler, 1, rng)[0])
        .collect();
    BatchCounts::from_samples(&samples, k).expect("valid tally")
}

// ---------------------------------------------------------------------------
// Independent numerical machinery for the batch objective.
// ---------------------------------------------------------------------------

/// The batch objective evaluated on a raw non-negative vector (finite
/// differences perturb off the simplex).
fn objective_raw(x: &[f64], pi_ref: &[f64], batch_adv: &[f64], beta: f64) -> f64 {
    let mut value = 0.0;
    for i in 0..x.len() {
        value += x[i] * batch_adv[i];
        if x[i] > 0.0 {
            value -= beta * x[i] * (x[i] / pi_ref[i]).ln();
        }
    }
    value
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("no NaN"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn interiorize(x: Vec<f64>) -> Vec<f64> {
    let eps = 1e-12;
    let u = 1.0 / x.len() as f64;
    x.into_iter().map(|p| (1.0 - eps) * p + eps * u).collect()
}

/// Maximize the batch objective over the simplex by projected gradient
/// ascent with backtracking; shares no code with the closed form.
pub fn maximize_empirical_objective(
    pi_ref: &Distribution,
    counts: &BatchCounts,
    advantages: &[f64],
    beta: f64,
    max_iters: usize,
) -> Distribution {
    let k = pi_ref.len();
    let g = counts.group_size() as f64;
    let batch_adv: Vec<f64> = (0..k)
        .map(|i| counts.count(i) * advantages[i] / g)
        .collect();
    let refp = pi_ref.probs();

    let mut x = interiorize(vec![1.0 / k as f64; k]);
    let mut fx = objective_raw(&x, refp, &batch_adv, beta);
    let mut step = 0.1;
    for _ in 0..max_iters {
        let grad: Vec<f64> = (0..k)
            .map(|i| batch_adv[i] - beta * ((x[i] / refp[i]).ln() + 1.0))
            .collect();
        let mean = grad.iter().sum::<f64>() / k as f64;
        if grad.iter().all(|gi| (gi - mean).abs() < 1e-11) {
            break;
        }
        let mut advanced = false;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
            let cand = interiorize(project_simplex(&trial));
            let fc = objective_raw(&cand, refp, &batch_adv, beta);
            if fc > fx {
                let moved: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
                x = cand;
                fx = fc;
                step *= 1.3;
                advanced = true;
                if moved < 1e-14 {
                    advanced = false;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    Distribution::from_weights(&x).expect("iterate stays positive")
}

/// Norm of the central-difference gradient of the batch objective at a
/// point, projected onto the simplex tangent space (mean subtracted).
pub fn fd_projected_gradient_norm(
    at: &Distribution,
    pi_ref: &Distribution,
    counts: &BatchCounts,
    advantages: &[f64],
    beta: f64,
) -> f64 {
    let k = at.len();
    let g = counts.group_size() as f64;
    let batch_adv: Vec<f64> = (0..k)
        .map(|i| counts.count(i) * advantages[i] / g)
        .collect();
    let refp = pi_ref.probs();
    let h = 1e-6;
    let mut grad = vec![0.0; k];
    let mut x = at.probs().to_vec();
    for i in 0..k {
        let orig = x[i];
        x[i] = orig + h;
        let up = objective_raw(&x, refp, &batch_adv, beta);
        x[i] = orig - h;
        let down = objective_raw(&x, refp, &batch_adv, beta);
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    let mean = grad.iter().sum::<f64>() / k as f64;
    grad.iter()
        .map(|g| (g - mean) * (g - mean))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Checks.
// ---------------------------------------------------------------------------

/// Binary-advantage tilts never reduce a correct mode's probability.
pub fn check_moderate_sharpening(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 1);
    let mut worst_drop = 0.0_f64;
    let mut violations = 0usize;
    for _ in 0..trials {
        let k1 = rng.random_range(1..=4);
        let k2 = rng.random_range(0..=4).max(if k1 == 1 { 1 } else { 0 });
        let modes = ModeSpace::new(k1, k2).expect("k1 >= 1");
        let pi_ref = random_simplex(&mut rng, modes.num_modes());
        let spec = AdvantageSpec::new(
            rng.random_range(0.0..3.0),
            -rng.random_range(1e-3..3.0),
            rng.random_range(0.1..5.0),
        )
        .expect("valid binary advantage levels");
        let tilted =
            optimal_policy(&pi_ref, &spec.per_mode(&modes), spec.beta).expect("valid tilt");
        for i in modes.correct_indices() {
            worst_drop = worst_drop.max(pi_ref.get(i) - tilted.dist.get(i));
        }
        if classify_sharpening(&tilted.dist, &pi_ref, &modes).expect("same dims")
            != Sharpening::Moderate
        {
            violations += 1;
        }
    }
    CheckOutcome::new(
        "moderate_sharpening",
        violations == 0,
        format!(
            "{trials} instances, {violations} violations, worst correct-mode drop {worst_drop:.2e}"
        ),
    )
}

/// The batch-optimal closed form matches an independent simplex
/// maximization of the batch objective, and the finite-difference
/// gradient there is flat along the simplex.
pub fn check_batch_optimal_maximizer(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 2);
    let mut max_tv = 0.0_f64;
    let mut max_fd = 0.0_f64;
    for _ in 0..trials {
        let k = rng.random_range(2..=5);
        let pi_ref = random_interior_simplex(&mut rng, k, 0.6);
        let g = *[2usize, 4, 8].get(rng.random_range(0..3)).unwrap();
        let counts = random_counts(&mut rng, k, g);
        let advantages: Vec<f64> = (0..k).map(|_| rng.random_range(-0.75..0.75)).collect();
        let beta = rng.random_range(1.0..2.0);

        let closed =
            batch_optimal_policy(&pi_ref, &counts, &advantages, beta).expect("valid closed form");
        let numerical = maximize_empirical_objective(&pi_ref, &counts, &advantages, beta, 5_000);
        max_tv = max_tv.max(closed.dist.tv_distance(&numerical));
        max_fd = max_fd.max(fd_projected_gradient_norm(
            &closed.dist,
            &pi_ref,
            &counts,
            &advantages,
            beta,
        ));
    }
    CheckOutcome::new(
        "batch_optimal_maximizer",
        max_tv <= 1e-4 && max_fd < 1e-7,
        format!("{trials} instances, max TV {max_tv:.2e} (<= 1e-4), max projected FD gradient {max_fd:.2e} (< 1e-7)"),
    )
}

/// The batch partition function dominates both of its lower bounds, and
/// its position relative to 1 dictates the fate of unsampled modes.
pub fn check_z_prime_bounds(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 3);
    let mut violations = 0usize;
    let mut strict_cases = 0usize;
    for _ in 0..trials {
        let k1 = rng.random_range(1..=4);
        let k2 = rng.random_range(1..=4);
        let modes = ModeSpace::new(k1, k2).expect("valid space");
        let k = modes.num_modes();
        let pi_ref = random_simplex(&mut rng, k);
        let g = rng.random_range(2..=16);
        let samples: Vec<usize> = crate::policy::sample_group(&pi_ref, g, &mut rng);
        let counts = BatchCounts::from_samples(&samples, k).expect("tally");
        let rewards: Vec<f64> = samples
            .iter()
            .map(|&m| if modes.is_correct(m) { 1.0 } else { 0.0 })
            .collect();
        let p_plus = rewards.iter().sum::<f64>() / g as f64;
        let sigma = (p_plus * (1.0 - p_plus)).sqrt();
        let beta = rng.random_range(0.5..2.0);
        let advantages: Vec<f64> = if sigma > 0.0 {
            (0..k)
                .map(|i| {
                    if modes.is_correct(i) {
                        (1.0 - p_plus) / sigma
                    } else {
                        -p_plus / sigma
                    }
                })
                .collect()
        } else {
            vec![0.0; k]
        };
        let report = z_prime_report(
            &pi_ref,
            &counts,
            &modes,
            &advantages,
            beta,
            Some(BinaryStats { p_plus, sigma }),
        )
        .expect("valid report");

        if report.z_prime < report.general_lower_bound - 1e-10 {
            violations += 1;
        }
        if let Some(bound) = report.binary_lower_bound {
            if report.z_prime < bound - 1e-10 {
                violations += 1;
            }
        }

        let hat = batch_optimal_policy(&pi_ref, &counts, &advantages, beta)
            .expect("valid tilt")
            .dist;
        if let Some(gap) = report.delta_pi {
            if gap > 1e-9 && sigma > 0.0 {
                strict_cases += 1;
                if report.z_prime <= 1.0 {
                    violations += 1;
                }
                for i in 0..k {
                    if !counts.is_sampled(i) && hat.get(i) >= pi_ref.get(i) {
                        violations += 1;
                    }
                }
            }
        }
        // Uniform scaling of unsampled modes on either side of Z' = 1.
        if report.z_prime > 1.0 + 1e-12 {
            for i in 0..k {
                if !counts.is_sampled(i) && hat.get(i) >= pi_ref.get(i) + 1e-15 {
                    violations += 1;
                }
            }
        } else if report.z_prime < 1.0 - 1e-12 {
            for i in 0..k {
                if !counts.is_sampled(i) && hat.get(i) <= pi_ref.get(i) - 1e-15 {
                    violations += 1;
                }
            }
        }
    }
    CheckOutcome::new(
        "z_prime_bounds",
        violations == 0,
        format!("{trials} instances, {violations} violations, {strict_cases} strict-gap suppression cases"),
    )
}

/// One mirror step equals geometric interpolation toward the
/// batch-optimal target.
pub fn check_mirror_interpolation(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 4);
    let mut max_tv = 0.0_f64;
    for trial in 0..trials {
        let k = rng.random_range(2..=6);
        let pi_t = random_interior_simplex(&mut rng, k, 0.05);
        let pi_ref = random_interior_simplex(&mut rng, k, 0.05);
        let g = rng.random_range(2..=12);
        let counts = if trial % 2 == 0 {
            random_counts(&mut rng, k, g)
        } else {
            BatchCounts::expected(&random_simplex(&mut rng, k), g).expect("expected counts")
        };
        let advantages: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let beta = rng.random_range(0.5..2.0);
        let eta_beta = rng.random::<f64>();
        let stepped = mirror_step(&pi_t, &pi_ref, &counts, &advantages, beta, eta_beta / beta)
            .expect("valid step");
        let hat = batch_optimal_policy(&pi_ref, &counts, &advantages, beta)
            .expect("valid tilt")
            .dist;
        let interp = geometric_interpolation(&pi_t, &hat, eta_beta).expect("valid interpolation");
        max_tv = max_tv.max(stepped.tv_distance(&interp));
    }
    CheckOutcome::new(
        "mirror_interpolation",
        max_tv <= 1e-10,
        format!("{trials} instances, max TV {max_tv:.2e} (<= 1e-10)"),
    )
}

/// Iterated mirror steps with exact expected counts converge to the
/// batch-optimal policy for those counts.
pub fn check_mirror_convergence(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 5);
    let mut max_tv = 0.0_f64;
    for _ in 0..trials {
        let k = rng.random_range(2..=6);
        let start = random_interior_simplex(&mut rng, k, 0.05);
        let pi_ref = random_interior_simplex(&mut rng, k, 0.05);
        let g = rng.random_range(2..=12);
        let counts = BatchCounts::expected(&start, g).expect("expected counts");
        let advantages: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let beta = rng.random_range(0.5..2.0);
        let target = batch_optimal_policy(&pi_ref, &counts, &advantages, beta)
            .expect("valid tilt")
            .dist;
        let mut pi = start;
        for _ in 0..250 {
            pi = mirror_step(&pi, &pi_ref, &counts, &advantages, beta, 0.1 / beta)
                .expect("valid step");
        }
        max_tv = max_tv.max(pi.tv_distance(&target));
    }
    CheckOutcome::new(
        "mirror_convergence",
        max_tv <= 1e-3,
        format!("{trials} instances, max TV after 250 small steps {max_tv:.2e} (<= 1e-3)"),
    )
}

fn m_matrix(lambda: f64, rho: f64, g: usize) -> Vec<Vec<f64>> {
    (0..g)
        .map(|i| (0..g).map(|j| if i == j { lambda } else { rho }).collect())
        .collect()
}

/// Structured-kernel bound sandwich: on `M(lambda, rho)` with
/// decay-consistent cross vectors, the unseen-mode bound dominates the
/// exact shift and the seen-mode bound undercuts it; the worked G = 2
/// case lands exactly.
pub fn check_shift_bounds(trials: usize, seed: u64) -> CheckOutcome {
    // Worked case first: lambda 2, rho 1, eta 1, y = [1, 0].
    let envelope = KernelEnvelope::uniform(2.0, 1.0, 1.0).expect("valid envelope");
    let kernel = m_matrix(2.0, 1.0, 2);
    let y = TargetShiftVector::new(vec![1.0, 0.0]).expect("valid shifts");
    let exact_seen = exact_logit_shift(&kernel, &[2.0, 1.0], &y, 0.0).expect("solvable");
    let exact_unseen = exact_logit_shift(&kernel, &[1.0, 1.0], &y, 0.0).expect("solvable");
    let bound_seen = induced_shift_bound(
        &envelope,
        &y,
        2,
        ShiftCase::SeenMode {
            sample_index: 0,
            occurrences: 1,
        },
    )
    .expect("valid bound");
    let bound_unseen =
        induced_shift_bound(&envelope, &y, 2, ShiftCase::UnseenMode).expect("valid bound");
    let worked_ok = (exact_seen - 1.0).abs() < 1e-12
        && (bound_seen - 2.0 / 3.0).abs() < 1e-12
        && (exact_unseen - 1.0 / 3.0).abs() < 1e-12
        && (bound_unseen - 1.0 / 3.0).abs() < 1e-12;

    let mut rng = rng_for(seed, 6);
    let mut violations = 0usize;
    let mut ratio_mismatch = 0usize;
    for _ in 0..trials {
        let g = rng.random_range(2..=16);
        let lambda = rng.random_range(0.1..10.0);
        let rho = lambda * rng.random_range(0.001..0.999);
        let eta = rng.random::<f64>();
        let occurrences = rng.random_range(1..=g);
        // The seen mode occupies the first `occurrences` slots with one
        // shared per-sample shift (duplicate samples share mode counts).
        let y_seen = rng.random_range(0.0..2.0);
        let mut y_vals = vec![0.0; g];
        for v in y_vals.iter_mut().take(occurrences) {
            *v = y_seen;
        }
        for v in y_vals.iter_mut().skip(occurrences) {
            *v = if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                rng.random_range(0.0..2.0)
            };
        }
        let y = TargetShiftVector::new(y_vals).expect("non-negative shifts");
        let kernel = m_matrix(lambda, rho, g);
        let envelope = KernelEnvelope::uniform(lambda, rho, eta).expect("valid envelope");

        let unseen_probe = vec![eta * rho; g];
        let mut seen_probe = vec![eta * rho; g];
        for p in seen_probe.iter_mut().take(occurrences) {
            *p = eta * lambda;
        }
        let exact_unseen = exact_logit_shift(&kernel, &unseen_probe, &y, 0.0).expect("solvable");
        let exact_seen = exact_logit_shift(&kernel, &seen_probe, &y, 0.0).expect("solvable");
        let bound_unseen =
            induced_shift_bound(&envelope, &y, g, ShiftCase::UnseenMode).expect("valid bound");
        let bound_seen = induced_shift_bound(
            &envelope,
            &y,
            g,
            ShiftCase::SeenMode {
                sample_index: 0,
                occurrences,
            },
        )
        .expect("valid bound");

        let scale = 1.0 + exact_seen.abs().max(exact_unseen.abs());
        if exact_unseen > bound_unseen + 1e-9 * scale {
            violations += 1;
        }
        if exact_seen < bound_seen - 1e-9 * scale {
            violations += 1;
        }

        // The suppression ratio is exactly bound_seen / bound_unseen, and
        // its simplified uniform-envelope form agrees with the general one.
        let total = y.total();
        if total > 1e-12 && bound_unseen > 1e-12 {
            let ratio = suppression_ratio(&envelope, &y, g, 0, occurrences).expect("valid ratio");
            let direct = bound_seen / bound_unseen;
            let tol = 1e-9 * (1.0 + direct.abs());
            if (ratio.general - direct).abs() > tol {
                ratio_mismatch += 1;
            }
            match ratio.simplified {
                Some(s) if (s - ratio.general).abs() <= tol => {}
                _ => ratio_mismatch += 1,
            }
        }
    }
    CheckOutcome::new(
        "induced_shift_bounds",
        worked_ok && violations == 0 && ratio_mismatch == 0,
        format!(
            "worked case {}, {trials} randomized instances, {violations} bound violations, {ratio_mismatch} ratio mismatches",
            if worked_ok { "exact" } else { "FAILED" }
        ),
    )
}

/// Uniform-decay cross vectors against kernels with mean-preserving
/// positive-semidefinite perturbations stay inside the unseen-mode
/// bound computed from the perturbed kernel's own entry envelope.
pub fn check_envelope_containment(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 7);
    let mut violations = 0usize;
    let mut solver_disagreements = 0usize;
    for _ in 0..trials {
        let g = rng.random_range(2..=12);
        let lambda = rng.random_range(0.5..8.0);
        let rho = lambda * rng.random_range(0.05..0.9);
        let eta = rng.random::<f64>();
        let mut kernel = m_matrix(lambda, rho, g);
        // Perturb inside span(1)^perp so the constant vector stays an
        // eigenvector; total weight keeps the entry envelope ordered.
        let budget = 0.5 * (lambda - rho).min(rho);
        for _ in 0..3 {
            let mut v: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = v.iter().sum::<f64>() / g as f64;
            for vi in v.iter_mut() {
                *vi -= mean;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            let c = rng.random_range(0.0..budget / 3.0);
            for i in 0..g {
                for j in 0..g {
                    kernel[i][j] += c * (v[i] / norm) * (v[j] / norm);
                }
            }
        }
        let lambda_min = (0..g).map(|i| kernel[i][i]).fold(f64::INFINITY, f64::min);
        let mut rho_min = f64::INFINITY;
        let mut rho_max = f64::NEG_INFINITY;
        for i in 0..g {
            for j in 0..g {
                if i != j {
                    rho_min = rho_min.min(kernel[i][j]);
                    rho_max = rho_max.max(kernel[i][j]);
                }
            }
        }
        let lambda_max = (0..g)
            .map(|i| kernel[i][i])
            .fold(f64::NEG_INFINITY, f64::max);
        let envelope = KernelEnvelope::new(lambda_min, lambda_max, rho_min, rho_max, eta)
            .expect("finite envelope");
        if !envelope.ordering_holds() {
            // Construction keeps the ordering; treat a violation as a bug.
            violations += 1;
            continue;
        }

        let y = TargetShiftVector::new((0..g).map(|_| rng.random_range(0.0..2.0)).collect())
            .expect("non-negative shifts");
        let rho_bar = rng.random::<f64>() * rho_max;
        let probe = vec![eta * rho_bar; g];
        let exact = exact_logit_shift(&kernel, &probe, &y, 0.0).expect("solvable");
        // The constant vector is an eigenvector of the perturbed kernel,
        // so the exact shift also has a closed form; cross-check the solver.
        let analytic = eta * rho_bar * y.total() / (lambda + (g as f64 - 1.0) * rho);
        if (exact - analytic).abs() > 1e-8 * (1.0 + analytic.abs()) {
            solver_disagreements += 1;
        }
        let bound =
            induced_shift_bound(&envelope, &y, g, ShiftCase::UnseenMode).expect("valid bound");
        if exact > bound + 1e-9 * (1.0 + bound.abs()) {
            violations += 1;
        }
    }
    CheckOutcome::new(
        "envelope_containment",
        violations == 0 && solver_disagreements == 0,
        format!("{trials} perturbed kernels, {violations} containment violations, {solver_disagreements} solver disagreements"),
    )
}

/// Dividing each advantage by its mode's reference probability drives
/// the general partition bound to exactly 1 on zero-sum batches.
pub fn check_inverse_reweighting(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 8);
    let mut max_gap = 0.0_f64;
    for _ in 0..trials {
        let k = rng.random_range(2..=6);
        let modes = ModeSpace::new(1, k - 1).expect("valid space");
        let pi_ref = random_interior_simplex(&mut rng, k, 0.3);
        let g = rng.random_range(2..=12);
        let counts = random_counts(&mut rng, k, g);
        // Center count-weighted advantages: sum_i N_i A_i = 0.
        let mut advantages: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weighted: f64 = (0..k).map(|i| counts.count(i) * advantages[i]).sum();
        for a in advantages.iter_mut() {
            *a -= weighted / g as f64;
        }
        let reweighted: Vec<f64> = (0..k).map(|i| advantages[i] / pi_ref.get(i)).collect();
        let beta = rng.random_range(0.5..2.0);
        let report = z_prime_report(&pi_ref, &counts, &modes, &reweighted, beta, None)
            .expect("valid report");
        max_gap = max_gap.max((report.general_lower_bound - 1.0).abs());
    }
    CheckOutcome::new(
        "inverse_reweighting",
        max_gap < 1e-12,
        format!("{trials} zero-sum batches, max |bound - 1| = {max_gap:.2e} (< 1e-12)"),
    )
}

/// Analytic policy gradients match central finite differences for both
/// policy shapes, with and without the KL term.
pub fn check_gradient_finite_difference(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = rng_for(seed, 9);
    let mut max_rel = 0.0_f64;
    for trial in 0..trials {
        let num_modes = rng.random_range(2..=5);
        let dim = rng.random_range(2..=4);
        let g = rng.random_range(4..=8);
        let use_kl = trial % 2 == 0;
        let tabular = trial % 4 >= 2;

        let samples: Vec<usize> = (0..g).map(|_| rng.random_range(0..num_modes)).collect();
        let rewarded: usize = rng.random_range(0..num_modes);
        let rewards: Vec<f64> = samples
            .iter()
            .map(|&m| if m == rewarded { 1.0 } else { 0.0 })
            .collect();
        let batch = RolloutBatch::new("q", samples, rewards, num_modes).expect("valid batch");
        let estimator = match trial % 3 {
            0 => Estimator::Raw,
            1 => Estimator::MeanShifted,
            _ => Estimator::Normalized,
        };
        let adv = estimate_advantages(&batch, estimator, None).expect("valid advantages");
        let kl = use_kl
            .then(|| {
                KlPenalty::new(
                    rng.random_range(0.5..1.5),
                    random_interior_simplex(&mut rng, num_modes, 0.2),
                )
            })
            .transpose()
            .expect("valid penalty");

        let rel = if tabular {
            let logits: Vec<f64> = (0..num_modes)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let policy = TabularPolicy::from_logits(vec![logits.clone()]).expect("finite");
            let analytic =
                pg_gradient_tabular(&policy, 0, &batch, &adv, kl.as_ref()).expect("gradient");
            let objective = |w: &[f64]| {
                let dist = Distribution::from_logits(w);
                batch_objective(&dist, &batch, &adv, kl.as_ref())
            };
            fd_relative_error(&logits, &analytic, objective)
        } else {
            let weights: Vec<f64> = (0..num_modes * dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let policy =
                LinearSoftmaxPolicy::from_weights(weights.clone(), num_modes, dim).expect("finite");
            let embedding =
                QueryEmbedding::new("q", (0..dim).map(|_| rng.random_range(0.1..1.0)).collect())
                    .expect("finite embedding");
            let analytic = pg_gradient_linear(&policy, &embedding, &batch, &adv, kl.as_ref())
                .expect("gradient");
            let objective = |w: &[f64]| {
                let p =
                    LinearSoftmaxPolicy::from_weights(w.to_vec(), num_modes, dim).expect("finite");
                let (_, dist) = p.forward(&embedding).expect("dims match");
                batch_objective(&dist, &batch, &adv, kl.as_ref())
            };
            fd_relative_error(&weights, &analytic, objective)
        };
        max_rel = max_rel.max(rel);
    }
    CheckOutcome::new(
        "gradient_finite_difference",
        max_rel < 1e-5,
        format!("{trials} configurations, max relative error {max_rel:.2e} (< 1e-5)"),
    )
}

/// The objective the sampled policy gradient climbs, evaluated directly.
fn batch_objective(
    dist: &Distribution,
    batch: &RolloutBatch,
    adv: &crate::advantage::AdvantageVector,
    kl: Option<&KlPenalty>,
) -> f64 {
    let g = batch.group_size() as f64;
    let mut value = 0.0;
    for (s, &m) in batch.samples().iter().enumerate() {
        value += adv.values[s] * dist.get(m).ln() / g;
    }
    if let Some(kl) = kl {
        let mut div = 0.0;
        for j in 0..dist.len() {
            let p = dist.get(j);
            if p > 0.0 {
                div += p * (p / kl.reference.get(j)).ln();
            }
        }
        value -= kl.beta * div;
    }
    value
}

fn fd_relative_error(params: &[f64], analytic: &[f64], objective: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut work = params.to_vec();
    let mut diff_sq = 0.0;
    let mut a_sq = 0.0;
    let mut fd_sq = 0.0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = objective(&work);
        work[i] = orig - h;
        let down = objective(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff_sq += (analytic[i] - fd) * (analytic[i] - fd);
        a_sq += analytic[i] * analytic[i];
        fd_sq += fd * fd;
    }
    let denom = a_sq.max(fd_sq).sqrt();
    if denom < 1e-9 {
        0.0
    } else {
        diff_sq.sqrt() / denom
    }
}

/// One row of the alignment-assumption report on the standard embeddings.
#[derive(Debug, Clone)]
pub struct AssumptionRow {
    pub pair: String,
    pub eta_hat: f64,
    pub min_inner: f64,
    pub mean_inner: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub nonneg_alignment_ok: bool,
    pub diagonal_dominance_ok: bool,
}

pub const ASSUMPTION_CSV_HEADER: &str =
    "pair,eta_hat,min_inner,mean_inner,lambda_min,lambda_max,rho_min,rho_max,nonneg_alignment,diagonal_dominance";

impl AssumptionRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.pair,
            self.eta_hat,
            self.min_inner,
            self.mean_inner,
            self.lambda_min,
            self.lambda_max,
            self.rho_min,
            self.rho_max,
            self.nonneg_alignment_ok as u8,
            self.diagonal_dominance_ok as u8
        )
    }
}

/// Alignment assumptions measured on the standard embedding set: the
/// shared-class pairs align non-negatively, self-alignment dominates,
/// and the fitted transfer decay falls strictly as the held-out
/// embedding moves away from the training one.
pub fn assumption_report() -> (CheckOutcome, Vec<AssumptionRow>) {
    let policy = LinearSoftmaxPolicy::zeros(4, 4);
    let persian = QueryEmbedding::new("persian", vec![0.75, 0.5, 0.25, 0.1]).expect("finite");
    let variants: [(&str, Vec<f64>); 3] = [
        ("persian_vs_siamese_high", vec![0.25, 0.5, 0.75, 0.1]),
        ("persian_vs_siamese_mid", vec![0.1, 0.5, 0.9, 0.1]),
        ("persian_vs_siamese_low", vec![0.0, 0.5, 1.0, 0.1]),
    ];
    let mut rows = Vec::new();
    for (label, vector) in variants {
        let other = QueryEmbedding::new("siamese", vector).expect("finite");
        // Probe the two shared-class modes (cat = 0, persian = 1) on both
        // queries.
        let pairs: Vec<(QueryEmbedding, usize)> = vec![
            (persian.clone(), 0),
            (persian.clone(), 1),
            (other.clone(), 0),
            (other.clone(), 1),
        ];
        let stats = alignment_stats(&policy, &pairs).expect("valid pairs");
        rows.push(AssumptionRow {
            pair: label.to_string(),
            eta_hat: stats.eta_hat,
            min_inner: stats.min_cross_inner,
            mean_inner: stats.mean_cross_inner,
            lambda_min: stats.envelope.lambda_min,
            lambda_max: stats.envelope.lambda_max,
            rho_min: stats.envelope.rho_min,
            rho_max: stats.envelope.rho_max,
            nonneg_alignment_ok: stats.nonneg_alignment_ok,
            diagonal_dominance_ok: stats.diagonal_dominance_ok,
        });
    }
    // Disjoint-support embeddings decouple entirely.
    let left = QueryEmbedding::new("left", vec![1.0, 0.5, 0.0, 0.0]).expect("finite");
    let right = QueryEmbedding::new("right", vec![0.0, 0.0, 0.7, 0.9]).expect("finite");
    let pairs = vec![
        (left.clone(), 0),
        (left.clone(), 1),
        (right.clone(), 0),
        (right.clone(), 1),
    ];
    let stats = alignment_stats(&policy, &pairs).expect("valid pairs");
    rows.push(AssumptionRow {
        pair: "orthogonal_supports".to_string(),
        eta_hat: stats.eta_hat,
        min_inner: stats.min_cross_inner,
        mean_inner: stats.mean_cross_inner,
        lambda_min: stats.envelope.lambda_min,
        lambda_max: stats.envelope.lambda_max,
        rho_min: stats.envelope.rho_min,
        rho_max: stats.envelope.rho_max,
        nonneg_alignment_ok: stats.nonneg_alignment_ok,
        diagonal_dominance_ok: stats.diagonal_dominance_ok,
    });

    let decreasing = rows[0].eta_hat > rows[1].eta_hat && rows[1].eta_hat > rows[2].eta_hat;
    let all_nonneg = rows.iter().all(|r| r.nonneg_alignment_ok);
    let all_dominant = rows.iter().all(|r| r.diagonal_dominance_ok);
    let orthogonal_zero = rows[3].eta_hat.abs() < 1e-9;
    let passed = decreasing && all_nonneg && all_dominant && orthogonal_zero;
    let outcome = CheckOutcome::new(
        "alignment_assumptions",
        passed,
        format!(
            "eta_hat high/mid/low = {:.4}/{:.4}/{:.4} (strictly decreasing: {decreasing}), orthogonal eta_hat {:.1e}, non-negative alignment {all_nonneg}, diagonal dominance {all_dominant}",
            rows[0].eta_hat, rows[1].eta_hat, rows[2].eta_hat, rows[3].eta_hat
        ),
    );
    (outcome, rows)
}

/// Default trial counts per check (overridden by `--trials`).
fn trials_or(trials: Option<usize>, default: usize) -> usize {
    trials.unwrap_or(default).max(1)
}

pub fn theory_checks(trials: Option<usize>, seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_moderate_sharpening(trials_or(trials, 10_000), seed),
        check_batch_optimal_maximizer(trials_or(trials, 1_000), seed),
        check_z_prime_bounds(trials_or(trials, 10_000), seed),
        check_mirror_interpolation(trials_or(trials, 1_000), seed),
        check_mirror_convergence(trials_or(trials, 200), seed),
        check_inverse_reweighting(trials_or(trials, 1_000), seed),
        check_gradient_finite_difference(trials_or(trials, 100), seed),
    ]
}

pub fn coupling_checks(trials: Option<usize>, seed: u64) -> Vec<CheckOutcome> {
    let (alignment, _) = assumption_report();
    vec![
        check_shift_bounds(trials_or(trials, 10_000), seed),
        check_envelope_containment(trials_or(trials, 2_000), seed),
        alignment,
    ]
}

pub fn all_checks(trials: Option<usize>, seed: u64) -> Vec<CheckOutcome> {
    let mut checks = theory_checks(trials, seed);
    checks.extend(coupling_checks(trials, seed));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_the_simplex() {
        for v in [
            vec![0.2, 0.3, 0.5],
            vec![1.5, -0.3, 0.1],
            vec![-1.0, -2.0, 4.0],
            vec![0.0, 0.0],
        ] {
            let p = project_simplex(&v);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
        // Points already on the simplex are fixed.
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn maximizer_recovers_a_known_optimum() {
        let pi_ref = Distribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        let counts = BatchCounts::new(vec![2.0, 2.0, 0.0], 4).unwrap();
        let adv = [1.0, -1.0, 0.0];
        let closed = batch_optimal_policy(&pi_ref, &counts, &adv, 1.0).unwrap();
        let numerical = maximize_empirical_objective(&pi_ref, &counts, &adv, 1.0, 5_000);
        assert!(closed.dist.tv_distance(&numerical) < 1e-6);
    }

    #[test]
    fn smoke_checks_pass_at_reduced_trial_counts() {
        for check in all_checks(Some(60), 1234) {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
