//! Gradient-kernel machinery for cross-query update propagation.
//!
//! Shared parameters couple queries: fitting target logit shifts on one
//! batch moves the logits of every (query, mode) pair whose gradient
//! aligns with the batch gradients. For a batch of `G` samples the
//! minimum-norm parameter update that fits shifts `y` induces, at any
//! probe pair, the shift `k' K^-1 y` where `K = J Jᵀ` is the batch Gram
//! matrix of logit gradients and `k'` the probe's kernel vector.
//!
//! For structured kernels `M(lambda, rho) = (lambda - rho) I + rho 11ᵀ`
//! the dual coefficients have a closed form (Sherman-Morrison), which
//! yields an upper bound on the shift of batch-unseen modes and a lower
//! bound for batch-seen modes; their ratio quantifies how strongly a seen
//! mode is reinforced relative to the best case for an unseen one.
//!
//! Kernels here are built from logit gradients (pre-softmax), not
//! probability gradients.

use crate::error::{Error, Result};
use crate::mode_space::QueryEmbedding;
use crate::policy::LinearSoftmaxPolicy;
use crate::theory::BatchCounts;

/// Spectral envelope of a batch kernel plus the cross-query transfer
/// decay: `lambda` bounds the diagonal (self-alignment), `rho` the
/// off-diagonal (cross-alignment), and `eta` the decay factor applied
/// when moving from the batch query to a related query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEnvelope {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub eta: f64,
}

impl KernelEnvelope {
    pub fn new(
        lambda_min: f64,
        lambda_max: f64,
        rho_min: f64,
        rho_max: f64,
        eta: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("lambda_min", lambda_min),
            ("lambda_max", lambda_max),
            ("rho_min", rho_min),
            ("rho_max", rho_max),
            ("eta", eta),
        ] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Parameter(format!(
                "transfer decay eta must lie in [0, 1], got {eta}"
            )));
        }
        Ok(KernelEnvelope {
            lambda_min,
            lambda_max,
            rho_min,
            rho_max,
            eta,
        })
    }

    /// Envelope with a single diagonal and off-diagonal level.
    pub fn uniform(lambda: f64, rho: f64, eta: f64) -> Result<Self> {
        KernelEnvelope::new(lambda, lambda, rho, rho, eta)
    }

    /// Whether self-alignment dominates cross-alignment:
    /// `rho_min <= rho_max < lambda_min <= lambda_max`. Reported rather
    /// than assumed; the bound operations require it as a precondition.
    pub fn ordering_holds(&self) -> bool {
        self.rho_min <= self.rho_max
            && self.rho_max < self.lambda_min
            && self.lambda_min <= self.lambda_max
    }

    fn require_ordering(&self) -> Result<()> {
        if !self.ordering_holds() {
            return Err(Error::Parameter(format!(
                "envelope violates rho_min <= rho_max < lambda_min <= lambda_max: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-sample target logit shifts `y_s = N_s |A_s| / (beta G)`; the
/// advantage sign is absorbed into the gradient direction, so entries
/// are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetShiftVector {
    values: Vec<f64>,
}

impl TargetShiftVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("empty target shift vector".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(
                "target shifts must be finite and non-negative".into(),
            ));
        }
        Ok(TargetShiftVector { values })
    }

    /// Build the per-sample shifts for a batch: sample `s` of mode `o`
    /// receives `N_o * |A_o| / (beta G)`.
    pub fn from_batch(
        sample_modes: &[usize],
        counts: &BatchCounts,
        advantages: &[f64],
        beta: f64,
    ) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
        }
        if advantages.len() != counts.num_modes() {
            return Err(Error::DimensionMismatch {
                context: "target shift advantages",
                expected: counts.num_modes(),
                got: advantages.len(),
            });
        }
        let g = counts.group_size() as f64;
        let values = sample_modes
            .iter()
            .map(|&o| {
                if o >= counts.num_modes() {
                    return Err(Error::Parameter(format!("sample mode {o} out of range")));
                }
                Ok(counts.count(o) * advantages[o].abs() / (beta * g))
            })
            .collect::<Result<Vec<f64>>>()?;
        TargetShiftVector::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total shift mass over the batch.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Batch Jacobian (one flattened logit gradient per sample) and its Gram
/// matrix.
#[derive(Debug, Clone)]
pub struct BatchKernel {
    pub jacobian: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<f64>>,
}

/// Flattened gradient of the logit `f(q, o)` with respect to the linear
/// policy's weights: `e_q` in row `o`, zero elsewhere.
pub fn logit_gradient_flat(
    policy: &LinearSoftmaxPolicy,
    query: &QueryEmbedding,
    mode: usize,
) -> Result<Vec<f64>> {
    if query.dim() != policy.dim() {
        return Err(Error::DimensionMismatch {
            context: "logit_gradient_flat",
            expected: policy.dim(),
            got: query.dim(),
        });
    }
    if mode >= policy.num_modes() {
        return Err(Error::Parameter(format!(
            "mode {mode} out of range for {} modes",
            policy.num_modes()
        )));
    }
    let mut grad = vec![0.0; policy.num_modes() * policy.dim()];
    grad[mode * policy.dim()..(mode + 1) * policy.dim()].copy_from_slice(query.vector());
    Ok(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobian rows and Gram matrix `K = J Jᵀ` for one batch at one query.
/// Duplicate samples produce identical rows (and a singular kernel).
pub fn batch_kernel(
    policy: &LinearSoftmaxPolicy,
    query: &QueryEmbedding,
    sample_modes: &[usize],
) -> Result<BatchKernel> {
    if sample_modes.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let jacobian = sample_modes
        .iter()
        .map(|&o| logit_gradient_flat(policy, query, o))
        .collect::<Result<Vec<_>>>()?;
    let g = jacobian.len();
    let mut kernel = vec![vec![0.0; g]; g];
    for s in 0..g {
        for t in s..g {
            let v = dot(&jacobian[s], &jacobian[t]);
            kernel[s][t] = v;
            kernel[t][s] = v;
        }
    }
    Ok(BatchKernel { jacobian, kernel })
}

/// Cholesky factorization-and-solve for a symmetric positive-definite
/// system; `None` when a pivot is not safely positive.
fn cholesky_solve(matrix: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = matrix.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = matrix[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-300 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

fn add_jitter(matrix: &[Vec<f64>], jitter: f64) -> Vec<Vec<f64>> {
    let mut out = matrix.to_vec();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += jitter;
    }
    out
}

/// Exact induced logit shift `k' (K + jitter I)^-1 y` for a probe pair
/// against a batch kernel.
///
/// With `jitter = 0` a near-singular kernel (e.g. duplicate samples)
/// falls back to `1e-8 * trace / G`; if the system is still not
/// positive-definite the error carries the diagonal range as a
/// conditioning diagnostic.
pub fn exact_logit_shift(
    kernel: &[Vec<f64>],
    k_prime: &[f64],
    y: &TargetShiftVector,
    jitter: f64,
) -> Result<f64> {
    let g = kernel.len();
    if g == 0 || kernel.iter().any(|row| row.len() != g) {
        return Err(Error::Parameter("kernel must be square".into()));
    }
    if k_prime.len() != g || y.len() != g {
        return Err(Error::DimensionMismatch {
            context: "exact_logit_shift",
            expected: g,
            got: k_prime.len().min(y.len()),
        });
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::Parameter(format!(
            "jitter must be finite and >= 0, got {jitter}"
        )));
    }
    let base = if jitter > 0.0 {
        add_jitter(kernel, jitter)
    } else {
        kernel.to_vec()
    };
    let alpha = match cholesky_solve(&base, y.values()) {
        Some(alpha) => alpha,
        None => {
            let trace: f64 = (0..g).map(|i| kernel[i][i]).sum();
            let fallback = 1e-8 * trace / g as f64;
            match cholesky_solve(&add_jitter(kernel, jitter + fallback), y.values()) {
                Some(alpha) => alpha,
                None => {
                    let diag_min = (0..g).map(|i| kernel[i][i]).fold(f64::INFINITY, f64::min);
                    let diag_max = (0..g)
                        .map(|i| kernel[i][i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    return Err(Error::Numerical(format!(
                        "kernel not positive definite even with jitter {:.3e} \
                         (trace {trace:.3e}, diagonal range [{diag_min:.3e}, {diag_max:.3e}])",
                        jitter + fallback
                    )));
                }
            }
        }
    };
    Ok(dot(k_prime, &alpha))
}

/// Whether the probe mode appears in the training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftCase {
    /// The probe mode is absent from the batch: its induced shift is
    /// upper-bounded.
    UnseenMode,
    /// The probe mode equals sample `sample_index`, appearing
    /// `occurrences` times in the batch: its induced shift is
    /// lower-bounded.
    SeenMode {
        sample_index: usize,
        occurrences: usize,
    },
}

/// Envelope bound on the induced logit shift at a coupled query.
///
/// Unseen modes: `eta * rho_max * total / (lambda_min + (G-1) rho_min)`.
/// Seen modes: `eta * N * (lambda_min - rho_min) / (lambda_max - rho_max)
/// * (y_k - rho_max * total / (lambda_max + (G-1) rho_max))`.
pub fn induced_shift_bound(
    envelope: &KernelEnvelope,
    y: &TargetShiftVector,
    group_size: usize,
    case: ShiftCase,
) -> Result<f64> {
    envelope.require_ordering()?;
    if y.len() != group_size {
        return Err(Error::DimensionMismatch {
            context: "induced_shift_bound",
            expected: group_size,
            got: y.len(),
        });
    }
    let g = group_size as f64;
    let total = y.total();
    match case {
        ShiftCase::UnseenMode => Ok(envelope.eta * envelope.rho_max * total
            / (envelope.lambda_min + (g - 1.0) * envelope.rho_min)),
        ShiftCase::SeenMode {
            sample_index,
            occurrences,
        } => {
            if sample_index >= y.len() {
                return Err(Error::Parameter(format!(
                    "sample index {sample_index} out of range"
                )));
            }
            if occurrences == 0 || occurrences > group_size {
                return Err(Error::Parameter(format!(
                    "occurrences must lie in 1..=G, got {occurrences}"
                )));
            }
            let y_k = y.values()[sample_index];
            let stiffness =
                (envelope.lambda_min - envelope.rho_min) / (envelope.lambda_max - envelope.rho_max);
            let crowd =
                envelope.rho_max * total / (envelope.lambda_max + (g - 1.0) * envelope.rho_max);
            Ok(envelope.eta * occurrences as f64 * stiffness * (y_k - crowd))
        }
    }
}

/// Ratio of the seen-mode lower bound to the unseen-mode upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionRatio {
    pub general: f64,
    /// `N [ (y_k / total)(lambda/rho + G - 1) - 1 ]`, emitted when the
    /// envelope is uniform within 1e-9.
    pub simplified: Option<f64>,
}

/// Guaranteed reinforcement of a batch-seen mode relative to the largest
/// possible reinforcement of a batch-unseen mode. Large values mean the
/// seen mode crowds out unseen alternatives after normalization.
pub fn suppression_ratio(
    envelope: &KernelEnvelope,
    y: &TargetShiftVector,
    group_size: usize,
    sample_index: usize,
    occurrences: usize,
) -> Result<SuppressionRatio> {
    envelope.require_ordering()?;
    if y.len() != group_size {
        return Err(Error::DimensionMismatch {
            context: "suppression_ratio",
            expected: group_size,
            got: y.len(),
        });
    }
    if sample_index >= y.len() {
        return Err(Error::Parameter(format!(
            "sample index {sample_index} out of range"
        )));
    }
    if occurrences == 0 || occurrences > group_size {
        return Err(Error::Parameter(format!(
            "occurrences must lie in 1..=G, got {occurrences}"
        )));
    }
    if envelope.rho_max <= 0.0 {
        return Err(Error::Parameter(
            "suppression ratio needs rho_max > 0".into(),
        ));
    }
    let total = y.total();
    if total <= 0.0 {
        return Err(Error::Domain(
            "suppression ratio undefined for zero total shift".into(),
        ));
    }
    let g = group_size as f64;
    let n = occurrences as f64;
    let y_k = y.values()[sample_index];
    let low_eig_min = envelope.lambda_min + (g - 1.0) * envelope.rho_min;
    let low_eig_max = envelope.lambda_max + (g - 1.0) * envelope.rho_max;
    // Exactly the seen-mode lower bound divided by the unseen-mode upper
    // bound; the occurrence count scales both bracket terms.
    let general = (envelope.lambda_min - envelope.rho_min)
        / (envelope.lambda_max - envelope.rho_max)
        * n
        * (y_k / total * (low_eig_min / envelope.rho_max) - low_eig_min / low_eig_max);

    let uniform = (envelope.lambda_max - envelope.lambda_min).abs() <= 1e-9
        && (envelope.rho_max - envelope.rho_min).abs() <= 1e-9;
    let simplified = uniform
        .then(|| n * (y_k / total * (envelope.lambda_min / envelope.rho_min + g - 1.0) - 1.0));
    Ok(SuppressionRatio {
        general,
        simplified,
    })
}

/// Alignment diagnostics for a set of (query, mode) probe pairs.
#[derive(Debug, Clone)]
pub struct AlignmentStats {
    /// Smallest gradient inner product across query groups.
    pub min_cross_inner: f64,
    /// Mean gradient inner product across query groups.
    pub mean_cross_inner: f64,
    /// Entrywise envelope of the first query's within-query kernel, with
    /// `eta` set to the fitted transfer decay.
    pub envelope: KernelEnvelope,
    /// Least-squares fit of cross-query kernel entries against
    /// within-query entries.
    pub eta_hat: f64,
    /// All cross-group inner products non-negative.
    pub nonneg_alignment_ok: bool,
    /// Within-query self-alignment strictly dominates cross-alignment.
    pub diagonal_dominance_ok: bool,
}

/// Estimate alignment statistics from logit gradients on the current
/// policy shape.
///
/// The pairs must span one or two distinct query names. With two, both
/// groups must list the same modes in the same order; the transfer decay
/// is fitted by least squares between the matched cross-query and
/// within-query kernels. With one group the cross kernel equals the
/// within kernel and the fit is exactly 1.
pub fn alignment_stats(
    policy: &LinearSoftmaxPolicy,
    pairs: &[(QueryEmbedding, usize)],
) -> Result<AlignmentStats> {
    if pairs.len() < 2 {
        return Err(Error::Parameter(
            "alignment stats need at least two (query, mode) pairs".into(),
        ));
    }
    let first_name = pairs[0].0.name().to_string();
    let group_a: Vec<&(QueryEmbedding, usize)> = pairs
        .iter()
        .filter(|(q, _)| q.name() == first_name)
        .collect();
    let group_b: Vec<&(QueryEmbedding, usize)> = pairs
        .iter()
        .filter(|(q, _)| q.name() != first_name)
        .collect();
    if let Some((q, _)) = group_b
        .iter()
        .find(|(q, _)| q.name() != group_b[0].0.name())
    {
        return Err(Error::Parameter(format!(
            "pairs span more than two queries (`{first_name}`, `{}`, `{}`)",
            group_b[0].0.name(),
            q.name()
        )));
    }

    let grads_a: Vec<Vec<f64>> = group_a
        .iter()
        .map(|(q, o)| logit_gradient_flat(policy, q, *o))
        .collect::<Result<_>>()?;
    // A lone query group is compared against itself.
    let (grads_b, matched_self) = if group_b.is_empty() {
        (grads_a.clone(), true)
    } else {
        let modes_a: Vec<usize> = group_a.iter().map(|(_, o)| *o).collect();
        let modes_b: Vec<usize> = group_b.iter().map(|(_, o)| *o).collect();
        if modes_a != modes_b {
            return Err(Error::Parameter(
                "the two query groups must list the same modes in the same order".into(),
            ));
        }
        (
            group_b
                .iter()
                .map(|(q, o)| logit_gradient_flat(policy, q, *o))
                .collect::<Result<_>>()?,
            false,
        )
    };

    let n = grads_a.len();
    let mut within = vec![vec![0.0; n]; n];
    let mut cross = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            within[i][j] = dot(&grads_a[i], &grads_a[j]);
            cross[i][j] = dot(&grads_b[i], &grads_a[j]);
        }
    }

    let mut min_cross = f64::INFINITY;
    let mut sum_cross = 0.0;
    for row in &cross {
        for &v in row {
            min_cross = min_cross.min(v);
            sum_cross += v;
        }
    }
    let mean_cross = sum_cross / (n * n) as f64;

    let lambda_min = (0..n).map(|i| within[i][i]).fold(f64::INFINITY, f64::min);
    let lambda_max = (0..n)
        .map(|i| within[i][i])
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut rho_min, mut rho_max) = (0.0, 0.0);
    if n > 1 {
        rho_min = f64::INFINITY;
        rho_max = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rho_min = rho_min.min(within[i][j]);
                    rho_max = rho_max.max(within[i][j]);
                }
            }
        }
    }

    let eta_hat = if matched_self {
        1.0
    } else {
        let num: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| cross[i][j] * within[i][j])
            .sum();
        let den: f64 = within.iter().flatten().map(|v| v * v).sum();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };

    let envelope = KernelEnvelope {
        lambda_min,
        lambda_max,
        rho_min,
        rho_max,
        eta: eta_hat.clamp(0.0, 1.0),
    };
    Ok(AlignmentStats {
        min_cross_inner: min_cross,
        mean_cross_inner: mean_cross,
        nonneg_alignment_ok: min_cross >= 0.0,
        diagonal_dominance_ok: envelope.ordering_holds(),
        envelope,
        eta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(name: &str, v: &[f64]) -> QueryEmbedding {
        QueryEmbedding::new(name, v.to_vec()).unwrap()
    }

    fn m_kernel(lambda: f64, rho: f64, g: usize) -> Vec<Vec<f64>> {
        (0..g)
            .map(|i| (0..g).map(|j| if i == j { lambda } else { rho }).collect())
            .collect()
    }

    #[test]
    fn hand_solved_two_by_two_shifts() {
        let k = m_kernel(2.0, 1.0, 2);
        let y = TargetShiftVector::new(vec![1.0, 0.0]).unwrap();
        let seen = exact_logit_shift(&k, &[2.0, 1.0], &y, 0.0).unwrap();
        assert!((seen - 1.0).abs() < 1e-12);
        let unseen = exact_logit_shift(&k, &[1.0, 1.0], &y, 0.0).unwrap();
        assert!((unseen - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_row_probe_recovers_target_entry() {
        let k = vec![
            vec![3.0, 1.0, 0.5],
            vec![1.0, 2.5, 0.7],
            vec![0.5, 0.7, 2.0],
        ];
        let y = TargetShiftVector::new(vec![0.4, 1.2, 0.9]).unwrap();
        for s in 0..3 {
            let shift = exact_logit_shift(&k, &k[s], &y, 0.0).unwrap();
            assert!((shift - y.values()[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_kernel_falls_back_to_jitter() {
        // Duplicate samples make the Gram matrix rank deficient; the
        // consistent duplicated constraint is still fit (minimum-norm
        // solution gives shift 0.5 for the probe equal to the rows).
        let k = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let y = TargetShiftVector::new(vec![0.5, 0.5]).unwrap();
        let shift = exact_logit_shift(&k, &[1.0, 1.0], &y, 0.0).unwrap();
        assert!((shift - 0.5).abs() < 1e-4);
    }

    #[test]
    fn unsolvable_kernel_reports_diagnostics() {
        let k = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let y = TargetShiftVector::new(vec![1.0, 0.0]).unwrap();
        let err = exact_logit_shift(&k, &[1.0, 0.0], &y, 0.0).unwrap_err();
        assert!(err.to_string().contains("positive definite"));
    }

    #[test]
    fn worked_envelope_bounds() {
        let envelope = KernelEnvelope::uniform(2.0, 1.0, 1.0).unwrap();
        let y = TargetShiftVector::new(vec![1.0, 0.0]).unwrap();
        let unseen = induced_shift_bound(&envelope, &y, 2, ShiftCase::UnseenMode).unwrap();
        assert!((unseen - 1.0 / 3.0).abs() < 1e-12);
        let seen = induced_shift_bound(
            &envelope,
            &y,
            2,
            ShiftCase::SeenMode {
                sample_index: 0,
                occurrences: 1,
            },
        )
        .unwrap();
        assert!((seen - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_vector_gives_zero_bounds() {
        let envelope = KernelEnvelope::uniform(2.0, 0.5, 0.7).unwrap();
        let y = TargetShiftVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            induced_shift_bound(&envelope, &y, 3, ShiftCase::UnseenMode).unwrap(),
            0.0
        );
        let seen = induced_shift_bound(
            &envelope,
            &y,
            3,
            ShiftCase::SeenMode {
                sample_index: 1,
                occurrences: 2,
            },
        )
        .unwrap();
        assert_eq!(seen, 0.0);
    }

    #[test]
    fn bounds_reject_violated_ordering() {
        let envelope = KernelEnvelope::new(1.0, 2.0, 1.5, 1.5, 1.0).unwrap();
        let y = TargetShiftVector::new(vec![1.0, 0.0]).unwrap();
        assert!(induced_shift_bound(&envelope, &y, 2, ShiftCase::UnseenMode).is_err());
    }

    #[test]
    fn suppression_ratio_worked_example() {
        let envelope = KernelEnvelope::uniform(2.0, 1.0, 1.0).unwrap();
        let y = TargetShiftVector::new(vec![1.0, 0.0]).unwrap();
        let r = suppression_ratio(&envelope, &y, 2, 0, 1).unwrap();
        assert!((r.general - 2.0).abs() < 1e-12);
        assert!((r.simplified.unwrap() - 2.0).abs() < 1e-12);
        // The ratio is exactly (seen lower bound) / (unseen upper bound).
        let seen = induced_shift_bound(
            &envelope,
            &y,
            2,
            ShiftCase::SeenMode {
                sample_index: 0,
                occurrences: 1,
            },
        )
        .unwrap();
        let unseen = induced_shift_bound(&envelope, &y, 2, ShiftCase::UnseenMode).unwrap();
        assert!((r.general - seen / unseen).abs() < 1e-12);
    }

    #[test]
    fn suppression_ratio_increases_with_concentration() {
        let envelope = KernelEnvelope::uniform(3.0, 1.0, 0.8).unwrap();
        let mut last = f64::NEG_INFINITY;
        for y_k in [0.2, 0.5, 0.9, 1.5] {
            let y = TargetShiftVector::new(vec![y_k, 0.3, 0.3]).unwrap();
            let r = suppression_ratio(&envelope, &y, 3, 0, 1).unwrap();
            assert!(r.general > last);
            last = r.general;
        }
    }

    #[test]
    fn suppression_ratio_rejects_zero_total() {
        let envelope = KernelEnvelope::uniform(2.0, 1.0, 1.0).unwrap();
        let y = TargetShiftVector::new(vec![0.0, 0.0]).unwrap();
        assert!(suppression_ratio(&envelope, &y, 2, 0, 1).is_err());
    }

    #[test]
    fn batch_kernel_duplicates_and_psd() {
        let policy = LinearSoftmaxPolicy::zeros(4, 4);
        let q = emb("persian", &[0.75, 0.5, 0.25, 0.1]);
        let bk = batch_kernel(&policy, &q, &[0, 0, 1]).unwrap();
        assert_eq!(bk.kernel[0], bk.kernel[1]);
        let norm_sq = q.norm_sq();
        assert!((bk.kernel[0][0] - norm_sq).abs() < 1e-12);
        assert!((bk.kernel[0][1] - norm_sq).abs() < 1e-12);
        assert!(bk.kernel[0][2].abs() < 1e-12);
        // Gram matrices have non-negative quadratic forms.
        for x in [[1.0, -2.0, 0.5], [0.3, 0.3, -1.0], [1.0, 1.0, 1.0]] {
            let mut quad = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    quad += x[i] * bk.kernel[i][j] * x[j];
                }
            }
            assert!(quad >= -1e-12);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let weights: Vec<f64> = (0..16).map(|i| (i as f64) * 0.07 - 0.5).collect();
        let policy = LinearSoftmaxPolicy::from_weights(weights.clone(), 4, 4).unwrap();
        let q = emb("persian", &[0.75, 0.5, 0.25, 0.1]);
        let h = 1e-6;
        for mode in 0..4 {
            let analytic = logit_gradient_flat(&policy, &q, mode).unwrap();
            for i in 0..weights.len() {
                let mut up = weights.clone();
                let mut dn = weights.clone();
                up[i] += h;
                dn[i] -= h;
                let f = |w: Vec<f64>| {
                    let p = LinearSoftmaxPolicy::from_weights(w, 4, 4).unwrap();
                    p.forward(&q).unwrap().0[mode]
                };
                let fd = (f(up) - f(dn)) / (2.0 * h);
                let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
                assert!((analytic[i] - fd).abs() / denom < 1e-5);
            }
        }
    }

    #[test]
    fn target_shifts_built_from_a_batch() {
        use crate::theory::BatchCounts;
        // Samples [0, 0, 1, 2] with advantages [+1, -0.5, 0.25]: the
        // duplicated mode contributes N|A|/(beta G) = 2*1/(2*4) twice.
        let counts = BatchCounts::from_samples(&[0, 0, 1, 2], 3).unwrap();
        let y =
            TargetShiftVector::from_batch(&[0, 0, 1, 2], &counts, &[1.0, -0.5, 0.25], 2.0).unwrap();
        assert_eq!(y.values(), &[0.25, 0.25, 0.0625, 0.03125]);
        assert!((y.total() - 0.59375).abs() < 1e-15);
    }

    #[test]
    fn linear_kernel_separates_into_embedding_dot_and_mode_match() {
        let policy = LinearSoftmaxPolicy::zeros(4, 4);
        let qa = emb("persian", &[0.75, 0.5, 0.25, 0.1]);
        let qb = emb("siamese", &[0.25, 0.5, 0.75, 0.1]);
        for oa in 0..4 {
            for ob in 0..4 {
                let ga = logit_gradient_flat(&policy, &qa, oa).unwrap();
                let gb = logit_gradient_flat(&policy, &qb, ob).unwrap();
                let want = if oa == ob { qa.dot(&qb) } else { 0.0 };
                assert!((dot(&ga, &gb) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eta_hat_for_identical_and_orthogonal_queries() {
        let policy = LinearSoftmaxPolicy::zeros(4, 4);
        let qa = emb("a", &[0.5, 0.5, 0.5, 0.1]);
        let qa2 = emb("a_twin", &[0.5, 0.5, 0.5, 0.1]);
        let pairs: Vec<(QueryEmbedding, usize)> = vec![
            (qa.clone(), 0),
            (qa.clone(), 1),
            (qa2.clone(), 0),
            (qa2.clone(), 1),
        ];
        let stats = alignment_stats(&policy, &pairs).unwrap();
        assert!((stats.eta_hat - 1.0).abs() < 1e-12);
        assert!(stats.nonneg_alignment_ok);

        let qc = emb("c", &[0.0, 0.0, 1.0, 0.0]);
        let qd = emb("d", &[1.0, 0.0, 0.0, 0.0]);
        let pairs = vec![(qc.clone(), 0), (qc, 1), (qd.clone(), 0), (qd, 1)];
        let stats = alignment_stats(&policy, &pairs).unwrap();
        assert!(stats.eta_hat.abs() < 1e-12);
    }

    #[test]
    fn eta_hat_decreases_across_similarity_variants() {
        let policy = LinearSoftmaxPolicy::zeros(4, 4);
        let persian = emb("persian", &[0.75, 0.5, 0.25, 0.1]);
        let variants = [
            [0.25, 0.5, 0.75, 0.1],
            [0.1, 0.5, 0.9, 0.1],
            [0.0, 0.5, 1.0, 0.1],
        ];
        let mut etas = Vec::new();
        for v in variants {
            let siamese = emb("siamese", &v);
            let pairs: Vec<(QueryEmbedding, usize)> = (0..4)
                .map(|o| (persian.clone(), o))
                .chain((0..4).map(|o| (siamese.clone(), o)))
                .collect();
            etas.push(alignment_stats(&policy, &pairs).unwrap().eta_hat);
        }
        assert!(etas[0] > etas[1] && etas[1] > etas[2], "etas = {etas:?}");
    }
}
