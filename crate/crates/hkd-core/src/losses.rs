//! Loss constructions: per-branch cross-entropy, the gate-weighted
//! hierarchical teacher loss, and the temperature-softened distillation
//! objective.
//!
//! Each loss exists twice: as a plain value-level function (used for
//! metrics and as an oracle in tests) and as a graph builder that assembles
//! the same quantity on the autodiff tape for training. A branch that sees a
//! trial of the other paradigm is trained toward the uniform distribution
//! over its classes; the gate probabilities then down-weight that term when
//! the paradigm classifier is confident.

use thiserror::Error;

use crate::tensor::graph::{tempered_softmax, Graph, NodeId, PROB_FLOOR};
use crate::tensor::{Scalar, Tensor4, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("probability vector of arity {got}, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("probabilities sum to {sum}, not 1 (±{tol})")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn check_normalized<T: Scalar>(p: &[T], tol: f64) -> Result<(), LossError> {
    let mut sum = 0.0;
    for &v in p {
        sum += v.into_f64();
    }
    if (sum - 1.0).abs() > tol {
        return Err(LossError::NotNormalized { sum, tol });
    }
    Ok(())
}

/// `−log(predicted[label])` with the probability floored at 1e-12.
pub fn cross_entropy<T: Scalar>(predicted: &[T], label: usize) -> Result<T, LossError> {
    if label >= predicted.len() {
        return Err(LossError::LabelOutOfRange { label, classes: predicted.len() });
    }
    check_normalized(predicted, 1e-6)?;
    let floor = T::of_f64(PROB_FLOOR);
    Ok(-(predicted[label].max(floor).ln()))
}

/// Cross-entropy against the uniform distribution over `p`'s classes:
/// `−(1/c)·Σ log pᵢ`. Training target for the off-paradigm branch.
pub fn cross_entropy_vs_uniform<T: Scalar>(p: &[T]) -> T {
    let floor = T::of_f64(PROB_FLOOR);
    let inv = T::one() / T::of_f64(p.len() as f64);
    let mut acc = T::zero();
    for &v in p {
        acc += v.max(floor).ln();
    }
    -(inv * acc)
}

/// `Σ pᵢ ln(pᵢ/qᵢ)` with `0·ln 0 = 0` and `q` floored at 1e-12.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T, LossError> {
    if p.len() != q.len() {
        return Err(LossError::Arity { expected: p.len(), got: q.len() });
    }
    check_normalized(p, 1e-6)?;
    check_normalized(q, 1e-6)?;
    let floor = T::of_f64(PROB_FLOOR);
    let mut acc = T::zero();
    for (&pv, &qv) in p.iter().zip(q) {
        if pv > T::zero() {
            acc += pv * (pv.ln() - qv.max(floor).ln());
        }
    }
    Ok(acc)
}

/// The three terms of the gated teacher loss for one trial, plus the gates
/// read off the shared classifier: `total = L_sh + p_M·L_M + p_S·L_S`.
#[derive(Clone, Copy, Debug)]
pub struct HierarchicalLossTerms<T> {
    pub l_shared: T,
    pub l_mi: T,
    pub l_si: T,
    pub p_mi: T,
    pub p_si: T,
    pub total: T,
}

/// Value-level hierarchical loss for a single trial. `is_mi` selects which
/// branch carries the class label; the other branch is scored against
/// uniform.
pub fn hierarchical_terms<T: Scalar>(
    shared_probs: &[T],
    mi_probs: &[T],
    si_probs: &[T],
    is_mi: bool,
    class_index: usize,
) -> Result<HierarchicalLossTerms<T>, LossError> {
    if shared_probs.len() != 2 {
        return Err(LossError::Arity { expected: 2, got: shared_probs.len() });
    }
    check_normalized(shared_probs, 1e-6)?;
    let paradigm_label = if is_mi { 0 } else { 1 };
    let l_shared = cross_entropy(shared_probs, paradigm_label)?;
    let (l_mi, l_si) = if is_mi {
        (cross_entropy(mi_probs, class_index)?, cross_entropy_vs_uniform(si_probs))
    } else {
        (cross_entropy_vs_uniform(mi_probs), cross_entropy(si_probs, class_index)?)
    };
    let (p_mi, p_si) = (shared_probs[0], shared_probs[1]);
    let total = l_shared + p_mi * l_mi + p_si * l_si;
    Ok(HierarchicalLossTerms { l_shared, l_mi, l_si, p_mi, p_si, total })
}

/// Distillation hyperparameters: softening temperature τ and the weight λ
/// of the hard-label term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillationConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self { temperature: 4.0, lambda: 1.0 }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.temperature <= 0.0 {
            return Err(LossError::NonPositiveTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Value-level distillation objective for one trial:
/// `τ²·KL(teacher_soft ‖ softmax_τ(student)) + λ·CE(softmax₁(student), y)`.
/// The teacher side is a constant — no gradient flows into it.
pub fn distillation_loss<T: Scalar>(
    student_logits: &[T],
    teacher_soft: &[T],
    true_label: usize,
    cfg: &DistillationConfig,
) -> Result<T, LossError> {
    cfg.validate()?;
    if student_logits.len() != teacher_soft.len() {
        return Err(LossError::Arity { expected: student_logits.len(), got: teacher_soft.len() });
    }
    let tau = T::of_f64(cfg.temperature);
    let q_tau = tempered_softmax(student_logits, tau)?;
    let kd = T::of_f64(cfg.temperature * cfg.temperature) * kl_divergence(teacher_soft, &q_tau)?;
    let q1 = tempered_softmax(student_logits, T::one())?;
    let ce = cross_entropy(&q1, true_label)?;
    Ok(kd + T::of_f64(cfg.lambda) * ce)
}

// ------------------------------------------------------------ graph side --

/// Batched hierarchical loss on the tape; returns the batch-mean scalar.
///
/// `shared_probs`, `mi_probs`, `si_probs` are softmax output nodes of shape
/// `(b,2,1,1)`, `(b,m,1,1)`, `(b,s,1,1)`. Gradients flow through the gates
/// and through both branch losses of every sample.
pub fn hierarchical_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    shared_probs: NodeId,
    mi_probs: NodeId,
    si_probs: NodeId,
    is_mi: &[bool],
    class_index: &[usize],
) -> Result<NodeId, TensorError> {
    let batch = g.shape(shared_probs).batch;
    assert_eq!(batch, is_mi.len());
    assert_eq!(batch, class_index.len());
    let mi_classes = g.shape(mi_probs).maps;
    let si_classes = g.shape(si_probs).maps;

    // L_sh: pick the true paradigm's probability.
    let paradigm_idx: Vec<usize> = is_mi.iter().map(|&m| if m { 0 } else { 1 }).collect();
    let l_sh = neg_log_pick(g, shared_probs, &paradigm_idx)?;

    let l_mi = branch_loss(g, mi_probs, mi_classes, is_mi, class_index, true)?;
    let l_si = branch_loss(g, si_probs, si_classes, is_mi, class_index, false)?;

    let p_mi = g.pick(shared_probs, &vec![0; batch])?;
    let p_si = g.pick(shared_probs, &vec![1; batch])?;

    let gated_mi = g.mul(p_mi, l_mi)?;
    let gated_si = g.mul(p_si, l_si)?;
    let partial = g.add(l_sh, gated_mi)?;
    let per_sample = g.add(partial, gated_si)?;
    let sum = g.sum_all(per_sample)?;
    g.scale(sum, T::one() / T::of_f64(batch as f64))
}

/// Per-sample branch loss column: labelled cross-entropy where the sample
/// belongs to this branch's paradigm, uniform-target cross-entropy where it
/// does not.
fn branch_loss<T: Scalar>(
    g: &mut Graph<T>,
    probs: NodeId,
    classes: usize,
    is_mi: &[bool],
    class_index: &[usize],
    branch_is_mi: bool,
) -> Result<NodeId, TensorError> {
    let batch = is_mi.len();
    let mut own_mask = vec![T::zero(); batch];
    let mut other_mask = vec![T::zero(); batch];
    let mut pick_idx = vec![0usize; batch];
    for b in 0..batch {
        if is_mi[b] == branch_is_mi {
            own_mask[b] = T::one();
            pick_idx[b] = class_index[b];
        } else {
            other_mask[b] = T::one();
        }
    }
    let labelled = neg_log_pick(g, probs, &pick_idx)?;
    let ln_all = g.ln_floored(probs)?;
    let row_sum = g.sum_maps(ln_all)?;
    let uniform = g.scale(row_sum, -(T::one() / T::of_f64(classes as f64)))?;

    let own = g.constant(Tensor4::column(&own_mask));
    let other = g.constant(Tensor4::column(&other_mask));
    let own_term = g.mul(own, labelled)?;
    let other_term = g.mul(other, uniform)?;
    g.add(own_term, other_term)
}

fn neg_log_pick<T: Scalar>(
    g: &mut Graph<T>,
    probs: NodeId,
    idx: &[usize],
) -> Result<NodeId, TensorError> {
    let picked = g.pick(probs, idx)?;
    let ln = g.ln_floored(picked)?;
    g.scale(ln, -T::one())
}

/// Batched plain cross-entropy from logits; the no-distillation training
/// objective. Returns the batch-mean scalar.
pub fn cross_entropy_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId, TensorError> {
    let batch = g.shape(logits).batch;
    assert_eq!(batch, labels.len());
    let logp = g.log_softmax_t(logits, T::one())?;
    let picked = g.pick(logp, labels)?;
    let sum = g.sum_all(picked)?;
    g.scale(sum, -(T::one() / T::of_f64(batch as f64)))
}

/// Batched distillation objective on the tape; returns the batch-mean
/// scalar. `teacher_soft` is the frozen teacher's τ-softened joint
/// distribution per sample, entering the graph as a constant.
pub fn distillation_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    student_logits: NodeId,
    teacher_soft: &Tensor4<T>,
    labels: &[usize],
    cfg: &DistillationConfig,
) -> Result<NodeId, TensorError> {
    if cfg.temperature <= 0.0 {
        return Err(TensorError::NonPositiveTemperature(cfg.temperature));
    }
    let shape = g.shape(student_logits);
    let batch = shape.batch;
    assert_eq!(batch, labels.len());
    assert_eq!(teacher_soft.shape(), shape);

    // τ²/b · Σ_b KL(p ‖ q_τ) = τ²/b · ( Σ p·ln p − Σ p·ln q_τ )
    let tau = T::of_f64(cfg.temperature);
    let mut entropy = 0.0f64;
    for &p in teacher_soft.values() {
        let p = p.into_f64();
        if p > 0.0 {
            entropy += p * p.ln();
        }
    }
    let log_q = g.log_softmax_t(student_logits, tau)?;
    let teacher = g.constant(teacher_soft.clone());
    let cross = g.mul(teacher, log_q)?;
    let cross_sum = g.sum_all(cross)?;
    let neg_cross = g.scale(cross_sum, -T::one())?;
    let ent = g.constant(Tensor4::scalar(T::of_f64(entropy)));
    let kl_sum = g.add(neg_cross, ent)?;
    let scale = cfg.temperature * cfg.temperature / batch as f64;
    let kd = g.scale(kl_sum, T::of_f64(scale))?;

    let ce = cross_entropy_loss_graph(g, student_logits, labels)?;
    let ce_w = g.scale(ce, T::of_f64(cfg.lambda))?;
    g.add(kd, ce_w)
}
