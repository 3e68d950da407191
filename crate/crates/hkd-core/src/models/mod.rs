//! The four networks: shared paradigm gate, the two specialist branches
//! that together with it form the hierarchical teacher, and the compact
//! singular student.
//!
//! All layer widths live in [`ModelDims`]; the defaults reproduce the
//! deployed sizes (24×1000 trials, 36/72 shared maps, 72/144/288 branch
//! maps, (1,3) average pooling). [`ModelDims::shrunken`] is the same layer
//! pattern at toy scale, small enough for end-to-end finite-difference
//! verification.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{Scalar, Shape4, Tensor4, TensorError};

/// Layer dimensioning shared by the teacher and the student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub in_channels: usize,
    pub in_samples: usize,
    /// Width of the fused spatio-temporal kernel of the first layer; its
    /// height always equals `in_channels`, collapsing the electrode axis.
    pub temporal_kernel: usize,
    pub shared_maps: [usize; 2],
    pub branch_maps: [usize; 3],
    /// Width of the length-preserving kernels in later layers (odd).
    pub small_kernel: usize,
    pub pool: usize,
    pub mi_classes: usize,
    pub si_classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            in_channels: 24,
            in_samples: 1000,
            temporal_kernel: 137,
            shared_maps: [36, 72],
            branch_maps: [72, 144, 288],
            small_kernel: 11,
            pool: 3,
            mi_classes: 3,
            si_classes: 5,
        }
    }
}

impl ModelDims {
    /// Toy-scale clone of the layer pattern for gradient checks.
    pub fn shrunken() -> Self {
        Self {
            in_channels: 4,
            in_samples: 96,
            temporal_kernel: 16,
            shared_maps: [3, 4],
            branch_maps: [4, 5, 6],
            small_kernel: 5,
            pool: 3,
            mi_classes: 3,
            si_classes: 5,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape4 {
        Shape4::new(batch, 1, self.in_channels, self.in_samples)
    }

    fn pooled(&self, w: usize) -> usize {
        (w - self.pool) / self.pool + 1
    }

    /// Width of the block-1 output, the feature tap feeding the branches.
    pub fn feature_width(&self) -> usize {
        self.pooled(self.in_samples - self.temporal_kernel + 1)
    }

    /// Widths after each branch block, starting from the feature tap.
    pub fn branch_widths(&self) -> [usize; 3] {
        let w1 = self.pooled(self.feature_width());
        let w2 = self.pooled(w1);
        let w3 = self.pooled(w2);
        [w1, w2, w3]
    }

    pub fn joint_classes(&self) -> usize {
        self.mi_classes + self.si_classes
    }
}

/// Named trainable tensor.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor4<T>,
}

fn xavier_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: Shape4,
    fan_in: usize,
    fan_out: usize,
) -> Tensor4<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..shape.len()).map(|_| T::of_f64(rng.gen_range(-bound..bound))).collect();
    Tensor4::from_vec(shape, values).expect("generated length matches")
}

fn conv_param<T: Scalar>(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    out_maps: usize,
    in_maps: usize,
    kh: usize,
    kw: usize,
) -> [Param<T>; 2] {
    let w = xavier_uniform(
        rng,
        Shape4::new(out_maps, in_maps, kh, kw),
        in_maps * kh * kw,
        out_maps * kh * kw,
    );
    let b = Tensor4::zeros(Shape4::new(1, out_maps, 1, 1));
    [
        Param { name: format!("{prefix}.w"), value: w },
        Param { name: format!("{prefix}.b"), value: b },
    ]
}

fn dense_param<T: Scalar>(rng: &mut ChaCha8Rng, prefix: &str, out: usize, inp: usize) -> [Param<T>; 2] {
    let w = xavier_uniform(rng, Shape4::new(out, inp, 1, 1), inp, out);
    let b = Tensor4::zeros(Shape4::new(1, out, 1, 1));
    [
        Param { name: format!("{prefix}.w"), value: w },
        Param { name: format!("{prefix}.b"), value: b },
    ]
}

/// How parameters enter a forward graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    /// Leaf nodes: gradients are produced for them.
    Trainable,
    /// Constant nodes: a frozen model (distillation teacher, inference).
    Frozen,
}

fn insert_params<T: Scalar>(g: &mut Graph<T>, params: &[Param<T>], mode: ParamMode) -> Vec<NodeId> {
    params
        .iter()
        .map(|p| match mode {
            ParamMode::Trainable => g.leaf(p.value.clone()),
            ParamMode::Frozen => g.constant(p.value.clone()),
        })
        .collect()
}

/// Lowest-index argmax.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ------------------------------------------------------------------ teacher

/// Paradigm gate: two conv blocks and a binary head. Block 1 collapses the
/// electrode axis with the wide fused kernel; its pooled output is the
/// feature tap consumed by both branches.
#[derive(Clone, Debug)]
pub struct SharedModule<T: Scalar> {
    dims: ModelDims,
    params: Vec<Param<T>>, // conv1.w/b, conv2.w/b, head.w/b
}

/// Nodes of interest from a shared-module forward.
pub struct SharedNodes {
    pub probs: NodeId,
    pub logits: NodeId,
    pub feature_tap: NodeId,
}

impl<T: Scalar> SharedModule<T> {
    fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let [m1, m2] = dims.shared_maps;
        let mut params = Vec::new();
        params.extend(conv_param(rng, "shared.conv1", m1, 1, dims.in_channels, dims.temporal_kernel));
        params.extend(conv_param(rng, "shared.conv2", m2, m1, 1, dims.small_kernel));
        params.extend(dense_param(rng, "shared.head", 2, m2));
        Self { dims, params }
    }

    fn forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        tau: T,
        nodes: &[NodeId],
    ) -> Result<SharedNodes, TensorError> {
        let d = &self.dims;
        let pool = (1, d.pool);
        let pad = (0, d.small_kernel / 2);

        let c1 = g.conv2d(x, nodes[0], nodes[1], (1, 1), (0, 0))?;
        let a1 = g.elu(c1)?;
        let tap = g.avgpool2d(a1, pool, pool)?;

        let c2 = g.conv2d(tap, nodes[2], nodes[3], (1, 1), pad)?;
        let a2 = g.elu(c2)?;
        let p2 = g.avgpool2d(a2, pool, pool)?;

        let s = g.shape(p2);
        let gap = g.avgpool2d(p2, (s.height, s.width), (s.height, s.width))?;
        let logits = g.dense(gap, nodes[4], nodes[5])?;
        let probs = g.softmax_t(logits, tau)?;
        Ok(SharedNodes { probs, logits, feature_tap: tap })
    }
}

/// Specialist classifier over the feature tap: three conv blocks and a
/// softmax head. Used for both the motor-imagery (3-class) and the
/// speech-imagery (5-class) branch.
#[derive(Clone, Debug)]
pub struct BranchModule<T: Scalar> {
    dims: ModelDims,
    classes: usize,
    params: Vec<Param<T>>, // conv1..3 w/b, head w/b
}

impl<T: Scalar> BranchModule<T> {
    fn init(dims: ModelDims, prefix: &str, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let [b1, b2, b3] = dims.branch_maps;
        let tap_maps = dims.shared_maps[0];
        let k = dims.small_kernel;
        let mut params = Vec::new();
        params.extend(conv_param(rng, &format!("{prefix}.conv1"), b1, tap_maps, 1, k));
        params.extend(conv_param(rng, &format!("{prefix}.conv2"), b2, b1, 1, k));
        params.extend(conv_param(rng, &format!("{prefix}.conv3"), b3, b2, 1, k));
        params.extend(dense_param(rng, &format!("{prefix}.head"), classes, b3));
        Self { dims, classes, params }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn forward(
        &self,
        g: &mut Graph<T>,
        features: NodeId,
        tau: T,
        nodes: &[NodeId],
    ) -> Result<NodeId, TensorError> {
        let d = &self.dims;
        let pool = (1, d.pool);
        let pad = (0, d.small_kernel / 2);
        let mut cur = features;
        for block in 0..3 {
            let c = g.conv2d(cur, nodes[2 * block], nodes[2 * block + 1], (1, 1), pad)?;
            let a = g.elu(c)?;
            cur = g.avgpool2d(a, pool, pool)?;
        }
        let s = g.shape(cur);
        let gap = g.avgpool2d(cur, (s.height, s.width), (s.height, s.width))?;
        let logits = g.dense(gap, nodes[6], nodes[7])?;
        g.softmax_t(logits, tau)
    }
}

/// Hierarchical teacher: paradigm gate plus both specialist branches. Both
/// branches always run on the feature tap, in training and inference alike.
#[derive(Clone, Debug)]
pub struct TeacherModel<T: Scalar> {
    pub dims: ModelDims,
    shared: SharedModule<T>,
    mi: BranchModule<T>,
    si: BranchModule<T>,
}

/// Graph handles from a teacher forward pass, plus the parameter nodes in
/// canonical order (gradient lookups pair with [`TeacherModel::params`]).
pub struct TeacherNodes {
    pub shared_probs: NodeId,
    pub mi_probs: NodeId,
    pub si_probs: NodeId,
    pub feature_tap: NodeId,
    pub param_nodes: Vec<NodeId>,
}

/// Value-level teacher outputs for one trial.
#[derive(Clone, Debug)]
pub struct TeacherOutputs<T> {
    pub paradigm_probs: Vec<T>,
    pub mi_probs: Vec<T>,
    pub si_probs: Vec<T>,
    /// Gated joint distribution:
    /// `(p_M·mi₀..p_M·mi₂, p_S·si₀..p_S·si₄)`.
    pub joint_probs: Vec<T>,
}

/// Inference rule over teacher outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TeacherPrediction {
    /// 0 = motor imagery, 1 = speech imagery (argmax of the gate).
    pub paradigm: usize,
    /// Argmax of the branch selected by the paradigm decision.
    pub class_within_paradigm: usize,
    /// Argmax of the joint gated distribution.
    pub joint: usize,
}

impl<T: Scalar> TeacherModel<T> {
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedModule::init(dims, &mut rng);
        let mi = BranchModule::init(dims, "mi", dims.mi_classes, &mut rng);
        let si = BranchModule::init(dims, "si", dims.si_classes, &mut rng);
        Self { dims, shared, mi, si }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.shared.params.iter().chain(&self.mi.params).chain(&self.si.params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.shared
            .params
            .iter_mut()
            .chain(&mut self.mi.params)
            .chain(&mut self.si.params)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, shape: Shape4) -> Result<(), TensorError> {
        let want = self.dims.input_shape(shape.batch);
        if shape != want {
            return Err(TensorError::InvalidShape {
                op: "teacher_forward",
                shape,
                reason: format!("expected {want}"),
            });
        }
        Ok(())
    }

    /// Builds the full teacher forward on the tape. `tau` tempers all three
    /// softmax heads (1 for the training loss, the distillation temperature
    /// when producing soft targets).
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        tau: T,
        mode: ParamMode,
    ) -> Result<TeacherNodes, TensorError> {
        self.check_input(g.shape(x))?;
        let mut param_nodes = insert_params(g, &self.shared.params, mode);
        param_nodes.extend(insert_params(g, &self.mi.params, mode));
        param_nodes.extend(insert_params(g, &self.si.params, mode));
        self.forward_with_param_nodes(g, x, tau, &param_nodes)
    }

    /// Same forward over caller-provided parameter nodes (canonical order);
    /// the gradient-check suites drive this directly.
    pub fn forward_with_param_nodes(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        tau: T,
        param_nodes: &[NodeId],
    ) -> Result<TeacherNodes, TensorError> {
        assert_eq!(param_nodes.len(), 22);
        let shared = self.shared.forward(g, x, tau, &param_nodes[0..6])?;
        let mi_probs = self.mi.forward(g, shared.feature_tap, tau, &param_nodes[6..14])?;
        let si_probs = self.si.forward(g, shared.feature_tap, tau, &param_nodes[14..22])?;
        Ok(TeacherNodes {
            shared_probs: shared.probs,
            mi_probs,
            si_probs,
            feature_tap: shared.feature_tap,
            param_nodes: param_nodes.to_vec(),
        })
    }

    /// Value-level forward of a batch; no gradients.
    pub fn outputs_batch(&self, x: &Tensor4<T>, tau: T) -> Result<Vec<TeacherOutputs<T>>, TensorError> {
        let mut g = Graph::default();
        let input = g.constant(x.clone());
        let nodes = self.forward_graph(&mut g, input, tau, ParamMode::Frozen)?;
        let shared = g.value(nodes.shared_probs);
        let mi = g.value(nodes.mi_probs);
        let si = g.value(nodes.si_probs);
        let (nm, ns) = (self.dims.mi_classes, self.dims.si_classes);
        Ok((0..x.shape().batch)
            .map(|b| {
                let paradigm_probs = shared.values()[b * 2..(b + 1) * 2].to_vec();
                let mi_probs = mi.values()[b * nm..(b + 1) * nm].to_vec();
                let si_probs = si.values()[b * ns..(b + 1) * ns].to_vec();
                let joint_probs = joint_distribution(&paradigm_probs, &mi_probs, &si_probs);
                TeacherOutputs { paradigm_probs, mi_probs, si_probs, joint_probs }
            })
            .collect())
    }

    pub fn predict(outputs: &TeacherOutputs<T>) -> TeacherPrediction {
        let paradigm = argmax(&outputs.paradigm_probs);
        let class_within_paradigm = if paradigm == 0 {
            argmax(&outputs.mi_probs)
        } else {
            argmax(&outputs.si_probs)
        };
        TeacherPrediction { paradigm, class_within_paradigm, joint: argmax(&outputs.joint_probs) }
    }

    pub fn cast<U: Scalar>(&self) -> TeacherModel<U> {
        TeacherModel {
            dims: self.dims,
            shared: SharedModule {
                dims: self.dims,
                params: cast_params(&self.shared.params),
            },
            mi: BranchModule {
                dims: self.dims,
                classes: self.mi.classes,
                params: cast_params(&self.mi.params),
            },
            si: BranchModule {
                dims: self.dims,
                classes: self.si.classes,
                params: cast_params(&self.si.params),
            },
        }
    }
}

fn cast_params<T: Scalar, U: Scalar>(params: &[Param<T>]) -> Vec<Param<U>> {
    params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast() }).collect()
}

/// `concat(p_M·mi, p_S·si)` — the law-of-total-probability split of the
/// joint class distribution.
pub fn joint_distribution<T: Scalar>(paradigm: &[T], mi: &[T], si: &[T]) -> Vec<T> {
    let mut joint = Vec::with_capacity(mi.len() + si.len());
    joint.extend(mi.iter().map(|&p| paradigm[0] * p));
    joint.extend(si.iter().map(|&p| paradigm[1] * p));
    joint
}

// ------------------------------------------------------------------ student

/// Singular decoding network: the shared module's first two blocks followed
/// by one more conv block and an 8-way head.
#[derive(Clone, Debug)]
pub struct StudentModel<T: Scalar> {
    pub dims: ModelDims,
    params: Vec<Param<T>>, // conv1..3 w/b, head w/b
}

pub struct StudentNodes {
    pub logits: NodeId,
    pub probs: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl<T: Scalar> StudentModel<T> {
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [m1, m2] = dims.shared_maps;
        let m3 = dims.branch_maps[1]; // the added 144-map block
        let k = dims.small_kernel;
        let mut params = Vec::new();
        params.extend(conv_param(&mut rng, "student.conv1", m1, 1, dims.in_channels, dims.temporal_kernel));
        params.extend(conv_param(&mut rng, "student.conv2", m2, m1, 1, k));
        params.extend(conv_param(&mut rng, "student.conv3", m3, m2, 1, k));
        params.extend(dense_param(&mut rng, "student.head", dims.joint_classes(), m3));
        Self { dims, params }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.params.iter().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.params.iter_mut().collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        tau: T,
        mode: ParamMode,
    ) -> Result<StudentNodes, TensorError> {
        let shape = g.shape(x);
        let want = self.dims.input_shape(shape.batch);
        if shape != want {
            return Err(TensorError::InvalidShape {
                op: "student_forward",
                shape,
                reason: format!("expected {want}"),
            });
        }
        let param_nodes = insert_params(g, &self.params, mode);
        self.forward_with_param_nodes(g, x, tau, &param_nodes)
    }

    pub fn forward_with_param_nodes(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        tau: T,
        param_nodes: &[NodeId],
    ) -> Result<StudentNodes, TensorError> {
        assert_eq!(param_nodes.len(), 8);
        let d = &self.dims;
        let pool = (1, d.pool);
        let pad = (0, d.small_kernel / 2);

        let c1 = g.conv2d(x, param_nodes[0], param_nodes[1], (1, 1), (0, 0))?;
        let a1 = g.elu(c1)?;
        let p1 = g.avgpool2d(a1, pool, pool)?;

        let c2 = g.conv2d(p1, param_nodes[2], param_nodes[3], (1, 1), pad)?;
        let a2 = g.elu(c2)?;
        let p2 = g.avgpool2d(a2, pool, pool)?;

        let c3 = g.conv2d(p2, param_nodes[4], param_nodes[5], (1, 1), pad)?;
        let a3 = g.elu(c3)?;
        let p3 = g.avgpool2d(a3, pool, pool)?;

        let s = g.shape(p3);
        let gap = g.avgpool2d(p3, (s.height, s.width), (s.height, s.width))?;
        let logits = g.dense(gap, param_nodes[6], param_nodes[7])?;
        let probs = g.softmax_t(logits, tau)?;
        Ok(StudentNodes { logits, probs, param_nodes: param_nodes.to_vec() })
    }

    /// Value-level forward: per-trial logits and τ-tempered probabilities.
    pub fn outputs_batch(&self, x: &Tensor4<T>, tau: T) -> Result<Vec<(Vec<T>, Vec<T>)>, TensorError> {
        let mut g = Graph::default();
        let input = g.constant(x.clone());
        let nodes = self.forward_graph(&mut g, input, tau, ParamMode::Frozen)?;
        let logits = g.value(nodes.logits);
        let probs = g.value(nodes.probs);
        let c = self.dims.joint_classes();
        Ok((0..x.shape().batch)
            .map(|b| {
                (logits.values()[b * c..(b + 1) * c].to_vec(), probs.values()[b * c..(b + 1) * c].to_vec())
            })
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> StudentModel<U> {
        StudentModel { dims: self.dims, params: cast_params(&self.params) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{distillation_loss_graph, hierarchical_loss_graph, DistillationConfig};
    use crate::parallel::Execution;
    use crate::tensor::gradcheck::fd_max_rel_error;

    fn zscored_noise_input<T: Scalar>(dims: &ModelDims, batch: usize, seed: u64) -> Tensor4<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = dims.input_shape(batch);
        let values = (0..shape.len()).map(|_| T::of_f64(rng.gen_range(-1.0..1.0))).collect();
        Tensor4::from_vec(shape, values).unwrap()
    }

    #[test]
    fn table_shapes_trace_exactly() {
        let dims = ModelDims::default();
        assert_eq!(dims.feature_width(), 288);
        assert_eq!(dims.branch_widths(), [96, 32, 10]);

        let teacher = TeacherModel::<f32>::init(dims, 7);
        let x = zscored_noise_input::<f32>(&dims, 1, 0);
        let mut g = Graph::new(Execution::Sequential);
        let input = g.constant(x);
        let nodes = teacher.forward_graph(&mut g, input, 1.0, ParamMode::Frozen).unwrap();
        assert_eq!(g.shape(nodes.feature_tap), Shape4::new(1, 36, 1, 288));
        assert_eq!(g.shape(nodes.shared_probs), Shape4::new(1, 2, 1, 1));
        assert_eq!(g.shape(nodes.mi_probs), Shape4::new(1, 3, 1, 1));
        assert_eq!(g.shape(nodes.si_probs), Shape4::new(1, 5, 1, 1));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let teacher = TeacherModel::<f32>::init(ModelDims::default(), 7);
        let mut g = Graph::new(Execution::Sequential);
        let bad = g.constant(Tensor4::zeros(Shape4::new(1, 1, 24, 999)));
        assert!(teacher.forward_graph(&mut g, bad, 1.0, ParamMode::Frozen).is_err());
    }

    #[test]
    fn zeroed_heads_give_uniform_distributions() {
        let dims = ModelDims::shrunken();
        let mut teacher = TeacherModel::<f64>::init(dims, 3);
        for p in teacher.params_mut() {
            if p.name.contains("head") {
                p.value = Tensor4::zeros(p.value.shape());
            }
        }
        let x = zscored_noise_input::<f64>(&dims, 2, 1);
        let outs = teacher.outputs_batch(&x, 1.0).unwrap();
        for o in outs {
            for &p in &o.paradigm_probs {
                assert!((p - 0.5).abs() < 1e-12);
            }
            for &p in &o.mi_probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
            for &p in &o.si_probs {
                assert!((p - 0.2).abs() < 1e-12);
            }
            // uniform everywhere → joint = (1/6 ×3, 1/10 ×5)
            for &p in &o.joint_probs[0..3] {
                assert!((p - 1.0 / 6.0).abs() < 1e-12);
            }
            for &p in &o.joint_probs[3..8] {
                assert!((p - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_distribution_identity_random_draws() {
        // shrunken-scale sweep plus a few full-size draws
        let dims = ModelDims::shrunken();
        let x = zscored_noise_input::<f64>(&dims, 1, 9);
        for seed in 0..1000u64 {
            let teacher = TeacherModel::<f64>::init(dims, seed);
            let o = &teacher.outputs_batch(&x, 1.0).unwrap()[0];
            let total: f64 = o.joint_probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "seed {seed}: joint sums to {total}");
            for c in 0..3 {
                assert!((o.joint_probs[c] - o.paradigm_probs[0] * o.mi_probs[c]).abs() < 1e-12);
            }
            for c in 0..5 {
                assert!((o.joint_probs[3 + c] - o.paradigm_probs[1] * o.si_probs[c]).abs() < 1e-12);
            }
        }

        let full = ModelDims::default();
        let xf = zscored_noise_input::<f32>(&full, 1, 10);
        for seed in 0..20u64 {
            let teacher = TeacherModel::<f32>::init(full, seed);
            let o = &teacher.outputs_batch(&xf, 1.0).unwrap()[0];
            let total: f64 = o.joint_probs.iter().map(|p| p.into_f64()).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gate_collapse_concentrates_joint() {
        // p_M = 1 ⇒ joint = (mi, 0,0,0,0,0)
        let paradigm = [1.0f64, 0.0];
        let mi = [0.2, 0.5, 0.3];
        let si = [0.2; 5];
        let joint = joint_distribution(&paradigm, &mi, &si);
        assert_eq!(&joint[0..3], &mi);
        assert!(joint[3..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn teacher_predict_rules() {
        let outputs = TeacherOutputs {
            paradigm_probs: vec![0.9, 0.1],
            mi_probs: vec![0.1, 0.2, 0.7],
            si_probs: vec![0.2; 5],
            joint_probs: joint_distribution(&[0.9, 0.1], &[0.1, 0.2, 0.7], &[0.2; 5]),
        };
        let p = TeacherModel::predict(&outputs);
        assert_eq!(p.paradigm, 0);
        assert_eq!(p.class_within_paradigm, 2);
        assert_eq!(p.joint, 2);

        // one-hot joint at index 4 → SI class 1
        let outputs = TeacherOutputs {
            paradigm_probs: vec![0.0, 1.0],
            mi_probs: vec![1.0 / 3.0; 3],
            si_probs: vec![0.0, 1.0, 0.0, 0.0, 0.0],
            joint_probs: joint_distribution(&[0.0, 1.0], &[1.0 / 3.0; 3], &[0.0, 1.0, 0.0, 0.0, 0.0]),
        };
        let p = TeacherModel::predict(&outputs);
        assert_eq!(p.joint, 4);
        assert_eq!(p.paradigm, 1);
        assert_eq!(p.class_within_paradigm, 1);

        // ties break toward the lowest index
        assert_eq!(argmax(&[0.25f64, 0.25, 0.25, 0.25]), 0);
    }

    #[test]
    fn forward_is_deterministic() {
        let dims = ModelDims::shrunken();
        let teacher = TeacherModel::<f64>::init(dims, 5);
        let x = zscored_noise_input::<f64>(&dims, 3, 2);
        let a = teacher.outputs_batch(&x, 1.0).unwrap();
        let b = teacher.outputs_batch(&x, 1.0).unwrap();
        for (oa, ob) in a.iter().zip(&b) {
            assert_eq!(oa.joint_probs, ob.joint_probs);
            assert_eq!(oa.paradigm_probs, ob.paradigm_probs);
        }

        let student = StudentModel::<f64>::init(dims, 5);
        let sa = student.outputs_batch(&x, 1.0).unwrap();
        let sb = student.outputs_batch(&x, 1.0).unwrap();
        assert_eq!(sa[0].0, sb[0].0);
    }

    #[test]
    fn parameter_counts() {
        let dims = ModelDims::default();
        let teacher = TeacherModel::<f32>::init(dims, 1);
        let student = StudentModel::<f32>::init(dims, 1);

        // first conv: 36·(24·137) + 36
        let conv1 = teacher.params()[0].value.len() + teacher.params()[1].value.len();
        assert_eq!(conv1, 36 * 24 * 137 + 36);
        assert_eq!(conv1, 118_404);

        // shared head: dense 72→2
        let head: usize = teacher
            .params()
            .iter()
            .filter(|p| p.name.starts_with("shared.head"))
            .map(|p| p.value.len())
            .sum();
        assert_eq!(head, 72 * 2 + 2);
        assert_eq!(head, 146);

        // the compression claim at parameter level
        assert!(student.param_count() < teacher.param_count());
    }

    #[test]
    fn student_uniform_with_zero_head_and_smaller() {
        let dims = ModelDims::shrunken();
        let mut student = StudentModel::<f64>::init(dims, 11);
        for p in student.params_mut() {
            if p.name.contains("head") {
                p.value = Tensor4::zeros(p.value.shape());
            }
        }
        let x = zscored_noise_input::<f64>(&dims, 1, 3);
        let (logits, probs) = student.outputs_batch(&x, 1.0).unwrap().remove(0);
        assert_eq!(logits.len(), 8);
        for &p in &probs {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_teacher_loss_gradient_check() {
        let dims = ModelDims::shrunken();
        let teacher = TeacherModel::<f64>::init(dims, 17);
        let x = zscored_noise_input::<f64>(&dims, 2, 23);
        let is_mi = [true, false];
        let class_index = [1usize, 3];

        let inputs: Vec<Tensor4<f64>> = teacher.params().iter().map(|p| p.value.clone()).collect();
        let err = fd_max_rel_error(&inputs, 1e-5, &|g, ids| {
            let input = g.constant(x.clone());
            let nodes = teacher.forward_with_param_nodes(g, input, 1.0, ids)?;
            hierarchical_loss_graph(g, nodes.shared_probs, nodes.mi_probs, nodes.si_probs, &is_mi, &class_index)
        })
        .unwrap();
        assert!(err <= 1e-4, "teacher end-to-end gradient error {err}");
    }

    #[test]
    fn end_to_end_distillation_gradient_check() {
        let dims = ModelDims::shrunken();
        let teacher = TeacherModel::<f64>::init(dims, 29);
        let student = StudentModel::<f64>::init(dims, 31);
        let x = zscored_noise_input::<f64>(&dims, 2, 37);
        let cfg = DistillationConfig { temperature: 4.0, lambda: 1.0 };
        let labels = [2usize, 6];

        // frozen teacher soft targets at τ
        let touts = teacher.outputs_batch(&x, 4.0).unwrap();
        let mut soft = Vec::new();
        for o in &touts {
            soft.extend(o.joint_probs.iter().copied());
        }
        let soft = Tensor4::from_vec(Shape4::new(2, 8, 1, 1), soft).unwrap();

        let inputs: Vec<Tensor4<f64>> = student.params().iter().map(|p| p.value.clone()).collect();
        let err = fd_max_rel_error(&inputs, 1e-5, &|g, ids| {
            let input = g.constant(x.clone());
            let nodes = student.forward_with_param_nodes(g, input, 1.0, ids)?;
            distillation_loss_graph(g, nodes.logits, &soft, &labels, &cfg)
        })
        .unwrap();
        assert!(err <= 1e-4, "student end-to-end gradient error {err}");
    }
}
