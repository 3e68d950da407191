//! Central finite-difference verification of the reverse-mode gradients.
//!
//! The checks always run in 64-bit and on the sequential path; they are the
//! independent oracle for everything `backward` computes, so they never call
//! into the gradient code they verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::{Scalar, Shape4, Tensor4, TensorError};
use crate::parallel::Execution;

/// Builds the scalar objective from leaves registered for `inputs`.
pub type BuildFn<'a> = &'a dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, TensorError>;

/// Max relative error between reverse-mode and central-difference gradients,
/// `maxᵢ |g_ad,i − g_fd,i| / max(1, |g_fd,i|)`, over every element of every
/// input.
pub fn fd_max_rel_error(
    inputs: &[Tensor4<f64>],
    eps: f64,
    build: BuildFn,
) -> Result<f64, TensorError> {
    let mut graph = Graph::new(Execution::Sequential);
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let out = build(&mut graph, &ids)?;
    graph.backward(out)?;
    let ad_grads: Vec<Tensor4<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, input)| graph.grad(id).cloned().unwrap_or_else(|| Tensor4::zeros(input.shape())))
        .collect();

    let eval = |perturbed: &[Tensor4<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new(Execution::Sequential);
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor4<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.values()[j];
            work[i].values_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].values_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].values_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = ad_grads[i].values()[j];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Operation selector for [`grad_check`] and the standard suite.
#[derive(Clone, Debug)]
pub enum CheckedOp {
    Conv2d { stride: (usize, usize), pad: (usize, usize) },
    AvgPool2d { win: (usize, usize), stride: (usize, usize) },
    Elu,
    Dense,
    SoftmaxT { tau: f64 },
    LogSoftmaxT { tau: f64 },
    PickLn { indices: Vec<usize> },
    Add,
    Mul,
    Scale { c: f64 },
    SumAll,
    SumMaps,
}

impl CheckedOp {
    pub fn name(&self) -> &'static str {
        match self {
            CheckedOp::Conv2d { .. } => "conv2d",
            CheckedOp::AvgPool2d { .. } => "avgpool2d",
            CheckedOp::Elu => "elu",
            CheckedOp::Dense => "dense",
            CheckedOp::SoftmaxT { .. } => "tempered_softmax",
            CheckedOp::LogSoftmaxT { .. } => "log_softmax",
            CheckedOp::PickLn { .. } => "pick+ln (cross-entropy core)",
            CheckedOp::Add => "add",
            CheckedOp::Mul => "mul",
            CheckedOp::Scale { .. } => "scale",
            CheckedOp::SumAll => "sum",
            CheckedOp::SumMaps => "sum_maps",
        }
    }
}

/// Runs one finite-difference check of `op` at `point` with step `eps` and
/// returns the max relative error. The objective is a fixed irregular
/// weighting of the op output, so constant-sum outputs (softmax) still
/// exercise every gradient path. 64-bit only.
pub fn grad_check<T: Scalar>(
    op: &CheckedOp,
    point: &[Tensor4<T>],
    eps: f64,
) -> Result<f64, TensorError> {
    if T::BITS != 64 {
        return Err(TensorError::NeedsF64(T::BITS));
    }
    let point: Vec<Tensor4<f64>> = point.iter().map(|t| t.cast::<f64>()).collect();
    let op = op.clone();
    fd_max_rel_error(&point, eps, &move |g, ids| {
        let y = match &op {
            CheckedOp::Conv2d { stride, pad } => g.conv2d(ids[0], ids[1], ids[2], *stride, *pad)?,
            CheckedOp::AvgPool2d { win, stride } => g.avgpool2d(ids[0], *win, *stride)?,
            CheckedOp::Elu => g.elu(ids[0])?,
            CheckedOp::Dense => g.dense(ids[0], ids[1], ids[2])?,
            CheckedOp::SoftmaxT { tau } => g.softmax_t(ids[0], *tau)?,
            CheckedOp::LogSoftmaxT { tau } => g.log_softmax_t(ids[0], *tau)?,
            CheckedOp::PickLn { indices } => {
                let p = g.softmax_t(ids[0], 1.0)?;
                let picked = g.pick(p, indices)?;
                let ln = g.ln_floored(picked)?;
                g.scale(ln, -1.0)?
            }
            CheckedOp::Add => g.add(ids[0], ids[1])?,
            CheckedOp::Mul => g.mul(ids[0], ids[1])?,
            CheckedOp::Scale { c } => g.scale(ids[0], *c)?,
            CheckedOp::SumAll => g.sum_all(ids[0])?,
            CheckedOp::SumMaps => g.sum_maps(ids[0])?,
        };
        weighted_sum(g, y)
    })
}

/// Reduces `y` to a scalar through fixed non-uniform weights.
fn weighted_sum(g: &mut Graph<f64>, y: NodeId) -> Result<NodeId, TensorError> {
    let shape = g.shape(y);
    let weights: Vec<f64> = (0..shape.len())
        .map(|i| 0.31 + 0.67 * ((1 + i) as f64).sin())
        .collect();
    let w = g.constant(Tensor4::from_vec(shape, weights).expect("same shape"));
    let prod = g.mul(y, w)?;
    g.sum_all(prod)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4, lo: f64, hi: f64) -> Tensor4<f64> {
    let values = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor4::from_vec(shape, values).expect("length matches")
}

/// Values sampled away from zero so the elu kink cannot corrupt the
/// finite-difference estimate.
fn random_tensor_off_origin(rng: &mut ChaCha8Rng, shape: Shape4, margin: f64) -> Tensor4<f64> {
    let values = (0..shape.len())
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(margin..1.5)
        })
        .collect();
    Tensor4::from_vec(shape, values).expect("length matches")
}

/// One row of the standard per-op verification table.
#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

/// Runs `instances` random checks for every graph operation and reports the
/// worst relative error per op. `eps` is the central-difference step.
pub fn run_standard_suite(instances: usize, eps: f64, seed: u64) -> Vec<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    let mut record = |op: CheckedOp, point_fn: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<Tensor4<f64>>,
                      rng: &mut ChaCha8Rng| {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let point = point_fn(rng);
            let err = grad_check(&op, &point, eps).expect("suite points are valid");
            worst = worst.max(err);
        }
        rows.push(SuiteRow { op: op.name().to_string(), instances, max_rel_err: worst });
    };

    record(
        CheckedOp::Conv2d { stride: (1, 2), pad: (1, 1) },
        &mut |rng| {
            vec![
                random_tensor(rng, Shape4::new(2, 3, 5, 7), -1.0, 1.0),
                random_tensor(rng, Shape4::new(4, 3, 3, 3), -1.0, 1.0),
                random_tensor(rng, Shape4::new(1, 4, 1, 1), -0.5, 0.5),
            ]
        },
        &mut rng,
    );
    // Spectral-route shape: full-height kernel, unit stride, no padding.
    record(
        CheckedOp::Conv2d { stride: (1, 1), pad: (0, 0) },
        &mut |rng| {
            vec![
                random_tensor(rng, Shape4::new(1, 2, 4, 70), -1.0, 1.0),
                random_tensor(rng, Shape4::new(3, 2, 4, 64), -1.0, 1.0),
                random_tensor(rng, Shape4::new(1, 3, 1, 1), -0.5, 0.5),
            ]
        },
        &mut rng,
    );
    record(
        CheckedOp::AvgPool2d { win: (2, 3), stride: (2, 3) },
        &mut |rng| vec![random_tensor(rng, Shape4::new(2, 3, 4, 9), -1.0, 1.0)],
        &mut rng,
    );
    record(
        CheckedOp::Elu,
        &mut |rng| vec![random_tensor_off_origin(rng, Shape4::new(2, 4, 3, 5), 1e-2)],
        &mut rng,
    );
    record(
        CheckedOp::Dense,
        &mut |rng| {
            vec![
                random_tensor(rng, Shape4::new(3, 6, 1, 1), -1.0, 1.0),
                random_tensor(rng, Shape4::new(4, 6, 1, 1), -1.0, 1.0),
                random_tensor(rng, Shape4::new(1, 4, 1, 1), -0.5, 0.5),
            ]
        },
        &mut rng,
    );
    record(
        CheckedOp::SoftmaxT { tau: 4.0 },
        &mut |rng| vec![random_tensor(rng, Shape4::new(3, 5, 1, 1), -2.0, 2.0)],
        &mut rng,
    );
    record(
        CheckedOp::LogSoftmaxT { tau: 1.0 },
        &mut |rng| vec![random_tensor(rng, Shape4::new(3, 5, 1, 1), -2.0, 2.0)],
        &mut rng,
    );
    record(
        CheckedOp::PickLn { indices: vec![2, 0, 4] },
        &mut |rng| vec![random_tensor(rng, Shape4::new(3, 5, 1, 1), -2.0, 2.0)],
        &mut rng,
    );
    record(
        CheckedOp::Add,
        &mut |rng| {
            vec![
                random_tensor(rng, Shape4::new(2, 3, 2, 2), -1.0, 1.0),
                random_tensor(rng, Shape4::new(2, 3, 2, 2), -1.0, 1.0),
            ]
        },
        &mut rng,
    );
    record(
        CheckedOp::Mul,
        &mut |rng| {
            vec![
                random_tensor(rng, Shape4::new(2, 3, 2, 2), -1.0, 1.0),
                random_tensor(rng, Shape4::new(2, 3, 2, 2), -1.0, 1.0),
            ]
        },
        &mut rng,
    );
    record(
        CheckedOp::Scale { c: -1.7 },
        &mut |rng| vec![random_tensor(rng, Shape4::new(2, 3, 1, 4), -1.0, 1.0)],
        &mut rng,
    );
    record(
        CheckedOp::SumAll,
        &mut |rng| vec![random_tensor(rng, Shape4::new(2, 3, 2, 2), -1.0, 1.0)],
        &mut rng,
    );
    record(
        CheckedOp::SumMaps,
        &mut |rng| vec![random_tensor(rng, Shape4::new(3, 4, 1, 1), -1.0, 1.0)],
        &mut rng,
    );

    rows
}
