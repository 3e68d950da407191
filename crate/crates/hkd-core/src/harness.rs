//! Training orchestration, evaluation, and the leave-one-subject-out
//! experiment loop.
//!
//! A fold trains the teacher on the gated hierarchical loss, distills the
//! student from the frozen teacher's softened joint distribution, trains an
//! identical student on plain cross-entropy as the no-distillation control
//! (same epoch and patience budget), fits the CSP+LDA baseline, and
//! evaluates all four on the held-out subject. Every random choice derives
//! from the master seed through fixed tags, so a run is reproducible
//! byte-for-byte; folds only ever run in parallel, never the updates
//! within one.

use thiserror::Error;

use crate::csp::{CspError, CspLdaPipeline};
use crate::data::{derive_seed, loso_split, subject_ids, DataError, LabeledTrial, Paradigm};
use crate::losses::{
    cross_entropy_loss_graph, distillation_loss_graph, hierarchical_loss_graph, DistillationConfig,
    LossError,
};
use crate::models::{ModelDims, ParamMode, StudentModel, TeacherModel};
use crate::optim::{AdamWConfig, AdamWState, EarlyStopper, OptimError, StopDecision};
use crate::parallel::map_indices;
use crate::tensor::graph::Graph;
use crate::tensor::{Scalar, Shape4, Tensor4, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("fold for subject {subject} leaked test trials into training")]
    SubjectLeak { subject: u16 },
    #[error("fold for subject {subject} failed: {source}")]
    Fold { subject: u16, source: Box<TrainError> },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Csp(#[from] CspError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Hyperparameters of one training run. `seed` governs initialization and
/// epoch shuffling; everything else mirrors the CLI flags.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub distill: DistillationConfig,
    /// Fraction of the training split shown to the teacher (the framework
    /// diagram reads both ways; 1.0 trains on the full split).
    pub teacher_fraction: f64,
    pub dims: ModelDims,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 5,
            distill: DistillationConfig::default(),
            teacher_fraction: 1.0,
            dims: ModelDims::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

/// Loss history of a completed training run.
#[derive(Clone, Debug, Default)]
pub struct TrainingRun {
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    /// Number of epochs actually executed.
    pub stop_epoch: usize,
    pub best_valid: f64,
}

/// Per-channel standardization of one trial, the fixed input transform of
/// all networks.
pub fn zscore_trial<T: Scalar>(trial: &LabeledTrial) -> Vec<T> {
    use crate::data::{N_CHANNELS, N_SAMPLES};
    let mut out = Vec::with_capacity(N_CHANNELS * N_SAMPLES);
    for ch in 0..N_CHANNELS {
        let row = trial.channel(ch);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / N_SAMPLES as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / N_SAMPLES as f64;
        let inv = 1.0 / var.sqrt().max(1e-6);
        out.extend(row.iter().map(|&v| T::of_f64((v as f64 - mean) * inv)));
    }
    out
}

/// Z-scored copies of every trial, shared by all folds.
pub fn prepare_inputs<T: Scalar>(dataset: &[LabeledTrial]) -> Vec<Vec<T>> {
    map_indices(Default::default(), dataset.len(), |i| zscore_trial(&dataset[i]))
}

fn batch_tensor<T: Scalar>(prepared: &[Vec<T>], idx: &[usize], dims: &ModelDims) -> Tensor4<T> {
    let item = dims.in_channels * dims.in_samples;
    let mut values = Vec::with_capacity(idx.len() * item);
    for &i in idx {
        values.extend_from_slice(&prepared[i]);
    }
    Tensor4::from_vec(dims.input_shape(idx.len()), values).expect("prepared inputs sized by dims")
}

fn shuffled(indices: &[usize], seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut v = indices.to_vec();
    v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Shared epoch/batch/early-stop skeleton of the three training loops.
fn drive_training(
    cfg: &TrainConfig,
    train_idx: &[usize],
    train_step: &mut dyn FnMut(usize, usize, &[usize]) -> Result<f64, TrainError>,
    valid_loss: &mut dyn FnMut() -> Result<f64, TrainError>,
    snapshot: &mut dyn FnMut() -> Vec<Tensor4<f32>>,
    restore: &mut dyn FnMut(&[Tensor4<f32>]),
) -> Result<TrainingRun, TrainError> {
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut run = TrainingRun::default();
    let mut stopper: EarlyStopper<Vec<Tensor4<f32>>> = EarlyStopper::new(cfg.patience);

    for epoch in 0..cfg.max_epochs {
        let order = shuffled(train_idx, derive_seed(cfg.seed, 1 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(epoch, batch_no, batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        run.train_loss.push(loss_sum / seen as f64);

        let vl = valid_loss()?;
        run.valid_loss.push(vl);
        run.stop_epoch = epoch + 1;
        let current = snapshot();
        if stopper.update(vl, &current) == StopDecision::Stop {
            break;
        }
    }

    if let Some((best, params)) = stopper.into_best() {
        run.best_valid = best;
        restore(&params);
    } else {
        run.best_valid = f64::NAN;
    }
    Ok(run)
}

fn clone_params<T: Scalar>(params: &[&crate::models::Param<T>]) -> Vec<Tensor4<T>> {
    params.iter().map(|p| p.value.clone()).collect()
}

/// Trains the hierarchical teacher on the gated loss (temperature 1).
pub fn train_teacher(
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    train_idx: &[usize],
    valid_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(TeacherModel<f32>, TrainingRun), TrainError> {
    let mut model = TeacherModel::<f32>::init(cfg.dims, derive_seed(cfg.seed, 0));
    let mut opt = AdamWState::<f32>::new(cfg.adamw(), model.params().len());

    // optional teacher-side subsampling of the training split
    let teacher_idx: Vec<usize> = if cfg.teacher_fraction < 1.0 {
        let order = shuffled(train_idx, derive_seed(cfg.seed, 0xF));
        let keep = ((train_idx.len() as f64) * cfg.teacher_fraction).floor().max(1.0) as usize;
        let mut kept = order[..keep.min(order.len())].to_vec();
        kept.sort_unstable();
        kept
    } else {
        train_idx.to_vec()
    };

    let labels = |idx: &[usize]| -> (Vec<bool>, Vec<usize>) {
        let is_mi = idx.iter().map(|&i| dataset[i].paradigm == Paradigm::Mi).collect();
        let class = idx.iter().map(|&i| dataset[i].class_index).collect();
        (is_mi, class)
    };

    let batch_loss = |model: &TeacherModel<f32>, idx: &[usize], train: bool| -> Result<(f64, Option<(Vec<Option<Tensor4<f32>>>,)>), TrainError> {
        let (is_mi, class) = labels(idx);
        let mut g = Graph::default();
        let x = g.constant(batch_tensor(prepared, idx, &cfg.dims));
        let mode = if train { ParamMode::Trainable } else { ParamMode::Frozen };
        let nodes = model.forward_graph(&mut g, x, 1.0, mode)?;
        let loss =
            hierarchical_loss_graph(&mut g, nodes.shared_probs, nodes.mi_probs, nodes.si_probs, &is_mi, &class)?;
        let value = g.value(loss).item() as f64;
        if !train {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let grads = nodes.param_nodes.iter().map(|&id| g.grad(id).cloned()).collect();
        Ok((value, Some((grads,))))
    };

    let model_cell = std::cell::RefCell::new(&mut model);
    let run = drive_training(
        cfg,
        &teacher_idx,
        &mut |_, _, batch| {
            let mut m = model_cell.borrow_mut();
            let (value, grads) = batch_loss(&m, batch, true)?;
            let (grads,) = grads.expect("training mode returns gradients");
            let mut params = m.params_mut();
            let mut named: Vec<(&str, &mut Tensor4<f32>)> =
                params.iter_mut().map(|p| (p.name.as_str(), &mut p.value)).collect();
            let grad_refs: Vec<Option<&Tensor4<f32>>> = grads.iter().map(|g| g.as_ref()).collect();
            opt.step(&mut named, &grad_refs)?;
            Ok(value)
        },
        &mut || {
            let m = model_cell.borrow();
            mean_over_chunks(valid_idx, cfg.batch_size, |chunk| Ok(batch_loss(&m, chunk, false)?.0))
        },
        &mut || clone_params(&model_cell.borrow().params()),
        &mut |saved| {
            for (p, s) in model_cell.borrow_mut().params_mut().into_iter().zip(saved) {
                p.value = s.clone();
            }
        },
    )?;
    Ok((model, run))
}

fn mean_over_chunks(
    idx: &[usize],
    chunk: usize,
    mut f: impl FnMut(&[usize]) -> Result<f64, TrainError>,
) -> Result<f64, TrainError> {
    if idx.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut sum = 0.0;
    for c in idx.chunks(chunk) {
        sum += f(c)? * c.len() as f64;
    }
    Ok(sum / idx.len() as f64)
}

/// Frozen-teacher soft targets for a set of trials, τ applied inside all
/// three teacher softmax heads. Computed once per run and reused across
/// epochs — the teacher never changes during distillation.
fn soft_targets(
    teacher: &TeacherModel<f32>,
    prepared: &[Vec<f32>],
    idx: &[usize],
    dims: &ModelDims,
    tau: f64,
    batch: usize,
) -> Result<std::collections::HashMap<usize, Vec<f32>>, TrainError> {
    let mut map = std::collections::HashMap::with_capacity(idx.len());
    for chunk in idx.chunks(batch) {
        let x = batch_tensor(prepared, chunk, dims);
        let outs = teacher.outputs_batch(&x, tau as f32)?;
        for (&i, o) in chunk.iter().zip(outs) {
            map.insert(i, o.joint_probs);
        }
    }
    Ok(map)
}

enum StudentObjective<'a> {
    Distill { soft: &'a std::collections::HashMap<usize, Vec<f32>>, cfg: DistillationConfig },
    PlainCrossEntropy,
}

fn train_student_inner(
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    train_idx: &[usize],
    valid_idx: &[usize],
    cfg: &TrainConfig,
    objective: StudentObjective<'_>,
) -> Result<(StudentModel<f32>, TrainingRun), TrainError> {
    let mut model = StudentModel::<f32>::init(cfg.dims, derive_seed(cfg.seed, 0));
    let mut opt = AdamWState::<f32>::new(cfg.adamw(), model.params().len());
    let joint = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| dataset[i].joint_label()).collect() };

    let batch_loss = |model: &StudentModel<f32>, idx: &[usize], train: bool| -> Result<(f64, Option<Vec<Option<Tensor4<f32>>>>), TrainError> {
        let labels = joint(idx);
        let mut g = Graph::default();
        let x = g.constant(batch_tensor(prepared, idx, &cfg.dims));
        let mode = if train { ParamMode::Trainable } else { ParamMode::Frozen };
        let nodes = model.forward_graph(&mut g, x, 1.0, mode)?;
        let loss = match &objective {
            StudentObjective::Distill { soft, cfg: dcfg } => {
                let classes = cfg.dims.joint_classes();
                let mut values = Vec::with_capacity(idx.len() * classes);
                for &i in idx {
                    values.extend_from_slice(&soft[&i]);
                }
                let soft_t =
                    Tensor4::from_vec(Shape4::new(idx.len(), classes, 1, 1), values).expect("target length");
                distillation_loss_graph(&mut g, nodes.logits, &soft_t, &labels, dcfg)?
            }
            StudentObjective::PlainCrossEntropy => cross_entropy_loss_graph(&mut g, nodes.logits, &labels)?,
        };
        let value = g.value(loss).item() as f64;
        if !train {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let grads = nodes.param_nodes.iter().map(|&id| g.grad(id).cloned()).collect();
        Ok((value, Some(grads)))
    };

    let model_cell = std::cell::RefCell::new(&mut model);
    let run = drive_training(
        cfg,
        train_idx,
        &mut |_, _, batch| {
            let mut m = model_cell.borrow_mut();
            let (value, grads) = batch_loss(&m, batch, true)?;
            let grads = grads.expect("training mode returns gradients");
            let mut params = m.params_mut();
            let mut named: Vec<(&str, &mut Tensor4<f32>)> =
                params.iter_mut().map(|p| (p.name.as_str(), &mut p.value)).collect();
            let grad_refs: Vec<Option<&Tensor4<f32>>> = grads.iter().map(|g| g.as_ref()).collect();
            opt.step(&mut named, &grad_refs)?;
            Ok(value)
        },
        &mut || {
            let m = model_cell.borrow();
            mean_over_chunks(valid_idx, cfg.batch_size, |chunk| Ok(batch_loss(&m, chunk, false)?.0))
        },
        &mut || clone_params(&model_cell.borrow().params()),
        &mut |saved| {
            for (p, s) in model_cell.borrow_mut().params_mut().into_iter().zip(saved) {
                p.value = s.clone();
            }
        },
    )?;
    Ok((model, run))
}

/// Distills the student from a frozen teacher.
pub fn distill_student(
    teacher: &TeacherModel<f32>,
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    train_idx: &[usize],
    valid_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(StudentModel<f32>, TrainingRun), TrainError> {
    cfg.distill.validate()?;
    let all: Vec<usize> = train_idx.iter().chain(valid_idx).copied().collect();
    let soft =
        soft_targets(teacher, prepared, &all, &cfg.dims, cfg.distill.temperature, cfg.batch_size)?;
    train_student_inner(
        dataset,
        prepared,
        train_idx,
        valid_idx,
        cfg,
        StudentObjective::Distill { soft: &soft, cfg: cfg.distill },
    )
}

/// The no-distillation control: an identical student trained on plain
/// cross-entropy under the same budget.
pub fn train_student_plain(
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    train_idx: &[usize],
    valid_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(StudentModel<f32>, TrainingRun), TrainError> {
    train_student_inner(dataset, prepared, train_idx, valid_idx, cfg, StudentObjective::PlainCrossEntropy)
}

// ------------------------------------------------------------- evaluation --

/// Anything the harness can score on a held-out subject.
pub enum EvaluatedModel<'a> {
    Teacher(&'a TeacherModel<f32>),
    Student(&'a StudentModel<f32>),
    CspLda(&'a CspLdaPipeline),
}

/// Accuracy of one model on one held-out subject.
#[derive(Clone, Copy, Debug)]
pub struct FoldEvaluation {
    pub subject: u16,
    pub paradigm_accuracy: f64,
    pub class_accuracy: f64,
    pub n_trials: usize,
}

/// Paradigm accuracy is the fraction of trials whose paradigm decision is
/// right; class accuracy requires the joint 8-class decision to be exactly
/// right. All three models decide hierarchically (the student's paradigm is
/// implied by its joint argmax), so class accuracy can never exceed
/// paradigm accuracy.
pub fn evaluate(
    model: &EvaluatedModel<'_>,
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    test_idx: &[usize],
    dims: &ModelDims,
    batch: usize,
) -> Result<FoldEvaluation, TrainError> {
    if test_idx.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let mut paradigm_ok = 0usize;
    let mut joint_ok = 0usize;

    match model {
        EvaluatedModel::Teacher(t) => {
            for chunk in test_idx.chunks(batch) {
                let x = batch_tensor(prepared, chunk, dims);
                let outs = t.outputs_batch(&x, 1.0)?;
                for (&i, o) in chunk.iter().zip(outs) {
                    let pred = TeacherModel::predict(&o);
                    let truth = &dataset[i];
                    if pred.paradigm == truth.paradigm.index() {
                        paradigm_ok += 1;
                        if pred.class_within_paradigm == truth.class_index {
                            joint_ok += 1;
                        }
                    }
                }
            }
        }
        EvaluatedModel::Student(s) => {
            for chunk in test_idx.chunks(batch) {
                let x = batch_tensor(prepared, chunk, dims);
                let outs = s.outputs_batch(&x, 1.0)?;
                for (&i, (_, probs)) in chunk.iter().zip(outs) {
                    let joint = crate::models::argmax(&probs);
                    let (paradigm, _) = crate::data::split_joint_label(joint);
                    let truth = &dataset[i];
                    if paradigm == truth.paradigm {
                        paradigm_ok += 1;
                        if joint == truth.joint_label() {
                            joint_ok += 1;
                        }
                    }
                }
            }
        }
        EvaluatedModel::CspLda(p) => {
            for &i in test_idx {
                let truth = &dataset[i];
                let (paradigm, class) = p.predict(truth)?;
                if paradigm == truth.paradigm {
                    paradigm_ok += 1;
                    if class == truth.class_index {
                        joint_ok += 1;
                    }
                }
            }
        }
    }

    let n = test_idx.len();
    Ok(FoldEvaluation {
        subject: dataset[test_idx[0]].subject,
        paradigm_accuracy: paradigm_ok as f64 / n as f64,
        class_accuracy: joint_ok as f64 / n as f64,
        n_trials: n,
    })
}

/// Per-subject accuracies of one model plus their aggregate statistics.
#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub model: String,
    pub per_subject: Vec<FoldEvaluation>,
}

impl EvaluationReport {
    pub fn paradigm_mean(&self) -> f64 {
        mean(self.per_subject.iter().map(|f| f.paradigm_accuracy))
    }

    pub fn class_mean(&self) -> f64 {
        mean(self.per_subject.iter().map(|f| f.class_accuracy))
    }

    pub fn paradigm_std(&self) -> f64 {
        sample_std(self.per_subject.iter().map(|f| f.paradigm_accuracy))
    }

    pub fn class_std(&self) -> f64 {
        sample_std(self.per_subject.iter().map(|f| f.class_accuracy))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

// ------------------------------------------------------------------- loso --

pub const MODEL_TEACHER: &str = "teacher";
pub const MODEL_STUDENT_KD: &str = "student_kd";
pub const MODEL_STUDENT_PLAIN: &str = "student_plain";
pub const MODEL_CSP_LDA: &str = "csp_lda";

/// Everything produced by one LOSO fold.
pub struct FoldResult {
    pub subject: u16,
    pub teacher_run: TrainingRun,
    pub student_kd_run: TrainingRun,
    pub student_plain_run: TrainingRun,
    /// teacher, student_kd, student_plain, csp_lda
    pub evaluations: [FoldEvaluation; 4],
}

pub struct LosoOutcome {
    pub folds: Vec<FoldResult>,
    pub reports: Vec<EvaluationReport>,
}

/// Full LOSO configuration: training hyperparameters plus the master seed
/// from which all per-fold seeds derive.
#[derive(Clone, Copy, Debug)]
pub struct LosoConfig {
    pub train: TrainConfig,
    pub master_seed: u64,
    pub csp_filters_per_side: usize,
    pub lda_shrinkage: f64,
}

impl Default for LosoConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), master_seed: 0, csp_filters_per_side: 3, lda_shrinkage: 0.1 }
    }
}

fn run_fold(
    dataset: &[LabeledTrial],
    prepared: &[Vec<f32>],
    subject: u16,
    cfg: &LosoConfig,
) -> Result<FoldResult, TrainError> {
    let split = loso_split(dataset, subject, derive_seed(cfg.master_seed, 0x1000 + subject as u64))?;
    for &i in split.train.iter().chain(&split.valid) {
        if dataset[i].subject == subject {
            return Err(TrainError::SubjectLeak { subject });
        }
    }

    let seeded = |tag: u64| TrainConfig {
        seed: derive_seed(cfg.master_seed, tag + subject as u64),
        ..cfg.train
    };

    let (teacher, teacher_run) =
        train_teacher(dataset, prepared, &split.train, &split.valid, &seeded(0x2000))?;
    let (student_kd, student_kd_run) =
        distill_student(&teacher, dataset, prepared, &split.train, &split.valid, &seeded(0x3000))?;
    let (student_plain, student_plain_run) =
        train_student_plain(dataset, prepared, &split.train, &split.valid, &seeded(0x4000))?;

    let train_refs: Vec<&LabeledTrial> = split.train.iter().map(|&i| &dataset[i]).collect();
    let baseline = CspLdaPipeline::fit(&train_refs, cfg.csp_filters_per_side, cfg.lda_shrinkage)?;

    let dims = &cfg.train.dims;
    let batch = cfg.train.batch_size;
    let evaluations = [
        evaluate(&EvaluatedModel::Teacher(&teacher), dataset, prepared, &split.test, dims, batch)?,
        evaluate(&EvaluatedModel::Student(&student_kd), dataset, prepared, &split.test, dims, batch)?,
        evaluate(&EvaluatedModel::Student(&student_plain), dataset, prepared, &split.test, dims, batch)?,
        evaluate(&EvaluatedModel::CspLda(&baseline), dataset, prepared, &split.test, dims, batch)?,
    ];

    Ok(FoldResult { subject, teacher_run, student_kd_run, student_plain_run, evaluations })
}

/// Runs every fold (in parallel under the `parallel` feature) and
/// aggregates one report per model kind.
pub fn run_loso(dataset: &[LabeledTrial], cfg: &LosoConfig) -> Result<LosoOutcome, TrainError> {
    let subjects = subject_ids(dataset);
    let prepared = prepare_inputs::<f32>(dataset);

    let fold_results = map_indices(Default::default(), subjects.len(), |k| {
        run_fold(dataset, &prepared, subjects[k], cfg)
            .map_err(|e| (subjects[k], e))
    });

    let mut folds = Vec::with_capacity(subjects.len());
    for r in fold_results {
        match r {
            Ok(f) => folds.push(f),
            Err((subject, e)) => return Err(TrainError::Fold { subject, source: Box::new(e) }),
        }
    }

    let names = [MODEL_TEACHER, MODEL_STUDENT_KD, MODEL_STUDENT_PLAIN, MODEL_CSP_LDA];
    let reports = names
        .iter()
        .enumerate()
        .map(|(m, name)| EvaluationReport {
            model: (*name).to_string(),
            per_subject: folds.iter().map(|f| f.evaluations[m]).collect(),
        })
        .collect();

    Ok(LosoOutcome { folds, reports })
}

/// Deterministic CSV rendering of a LOSO outcome: one row per
/// (model, subject) plus mean and std summary rows per model.
pub fn report_csv(outcome: &LosoOutcome) -> String {
    let mut out = String::from("model,subject,paradigm_acc,class_acc\n");
    for report in &outcome.reports {
        for f in &report.per_subject {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                report.model, f.subject, f.paradigm_accuracy, f.class_accuracy
            ));
        }
        out.push_str(&format!(
            "{},mean,{:.6},{:.6}\n",
            report.model,
            report.paradigm_mean(),
            report.class_mean()
        ));
        out.push_str(&format!(
            "{},std,{:.6},{:.6}\n",
            report.model,
            report.paradigm_std(),
            report.class_std()
        ));
    }
    out
}

/// Plain-text echo of the configuration, written next to the report.
pub fn config_echo(cfg: &LosoConfig, synth: Option<&crate::data::synth::SyntheticConfig>) -> String {
    let t = &cfg.train;
    let mut s = String::new();
    s.push_str(&format!("master_seed = {}\n", cfg.master_seed));
    s.push_str(&format!("lr = {}\n", t.lr));
    s.push_str(&format!("weight_decay = {}\n", t.weight_decay));
    s.push_str(&format!("batch_size = {}\n", t.batch_size));
    s.push_str(&format!("max_epochs = {}\n", t.max_epochs));
    s.push_str(&format!("patience = {}\n", t.patience));
    s.push_str(&format!("temperature = {}\n", t.distill.temperature));
    s.push_str(&format!("lambda = {}\n", t.distill.lambda));
    s.push_str(&format!("teacher_fraction = {}\n", t.teacher_fraction));
    s.push_str(&format!("csp_filters_per_side = {}\n", cfg.csp_filters_per_side));
    s.push_str(&format!("lda_shrinkage = {}\n", cfg.lda_shrinkage));
    if let Some(sc) = synth {
        s.push_str(&format!("subjects = {}\n", sc.n_subjects));
        s.push_str(&format!("trials_per_paradigm = {}\n", sc.trials_per_paradigm));
        s.push_str(&format!("class_separation = {}\n", sc.class_separation));
        s.push_str(&format!("noise_sigma = {}\n", sc.noise_sigma));
        s.push_str(&format!("sample_rate_hz = {}\n", sc.sample_rate_hz));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_dataset, SyntheticConfig};

    fn tiny_dataset() -> Vec<LabeledTrial> {
        let cfg = SyntheticConfig {
            n_subjects: 3,
            trials_per_paradigm: 10,
            class_separation: 3.0,
            ..SyntheticConfig::default()
        };
        generate_synthetic_dataset(&cfg)
    }

    fn tiny_config(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            dims: ModelDims::shrunken(),
            max_epochs,
            batch_size: 8,
            lr: 0.002,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    /// Shrunken-dims copy of a dataset: trials reshaped by truncating
    /// channels/samples so harness tests stay fast.
    fn shrink_inputs(dataset: &[LabeledTrial], dims: &ModelDims) -> Vec<Vec<f32>> {
        let full = prepare_inputs::<f32>(dataset);
        full.iter()
            .map(|t| {
                let mut out = Vec::with_capacity(dims.in_channels * dims.in_samples);
                for ch in 0..dims.in_channels {
                    let row = &t[ch * crate::data::N_SAMPLES..ch * crate::data::N_SAMPLES + dims.in_samples];
                    out.extend_from_slice(row);
                }
                out
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let data = tiny_dataset();
        let cfg = tiny_config(0);
        let prepared = shrink_inputs(&data, &cfg.dims);
        let idx: Vec<usize> = (0..data.len()).collect();
        let err = train_teacher(&data, &prepared, &idx, &idx, &cfg);
        let (model, run) = err.unwrap();
        assert!(run.train_loss.is_empty());
        assert!(run.valid_loss.is_empty());
        assert_eq!(run.stop_epoch, 0);
        // parameters untouched: identical to a fresh init with the same seed
        let fresh = TeacherModel::<f32>::init(cfg.dims, derive_seed(cfg.seed, 0));
        for (a, b) in model.params().iter().zip(fresh.params()) {
            assert_eq!(a.value.values(), b.value.values());
        }
    }

    #[test]
    fn identical_seeds_identical_history() {
        let data = tiny_dataset();
        let cfg = tiny_config(2);
        let prepared = shrink_inputs(&data, &cfg.dims);
        let train: Vec<usize> = (0..40).collect();
        let valid: Vec<usize> = (40..60).collect();
        let (_, run_a) = train_teacher(&data, &prepared, &train, &valid, &cfg).unwrap();
        let (_, run_b) = train_teacher(&data, &prepared, &train, &valid, &cfg).unwrap();
        assert_eq!(run_a.train_loss, run_b.train_loss);
        assert_eq!(run_a.valid_loss, run_b.valid_loss);

        let other = TrainConfig { seed: 8, ..cfg };
        let (_, run_c) = train_teacher(&data, &prepared, &train, &valid, &other).unwrap();
        assert_ne!(run_a.train_loss, run_c.train_loss);
    }

    #[test]
    fn teacher_loss_decreases_on_easy_data() {
        let data = tiny_dataset();
        let cfg = tiny_config(4);
        let prepared = shrink_inputs(&data, &cfg.dims);
        let train: Vec<usize> = (0..48).collect();
        let valid: Vec<usize> = (48..60).collect();
        let (_, run) = train_teacher(&data, &prepared, &train, &valid, &cfg).unwrap();
        assert!(run.train_loss.last().unwrap() < run.train_loss.first().unwrap());
    }

    #[test]
    fn distillation_pulls_student_toward_teacher() {
        // λ=0, τ=1: the objective is pure KL to the teacher's joint
        // distribution; on a tiny set the student should approach it
        let data = tiny_dataset();
        let dims = ModelDims::shrunken();
        let prepared = shrink_inputs(&data, &dims);
        let idx: Vec<usize> = (0..8).collect();

        let teacher_cfg = tiny_config(3);
        let (teacher, _) = train_teacher(&data, &prepared, &idx, &idx, &teacher_cfg).unwrap();

        let cfg = TrainConfig {
            distill: DistillationConfig { temperature: 1.0, lambda: 0.0 },
            max_epochs: 60,
            patience: 60,
            lr: 0.01,
            ..tiny_config(60)
        };
        let (student, _) = distill_student(&teacher, &data, &prepared, &idx, &idx, &cfg).unwrap();

        let x = batch_tensor(&prepared, &idx, &dims);
        let touts = teacher.outputs_batch(&x, 1.0).unwrap();
        let souts = student.outputs_batch(&x, 1.0).unwrap();
        let mut total_kl = 0.0;
        for (t, (_, sp)) in touts.iter().zip(&souts) {
            let p: Vec<f64> = t.joint_probs.iter().map(|&v| v as f64).collect();
            let q: Vec<f64> = sp.iter().map(|&v| v as f64).collect();
            total_kl += crate::losses::kl_divergence(&p, &q).unwrap();
        }
        let mean_kl = total_kl / idx.len() as f64;
        assert!(mean_kl <= 0.05, "student did not approach teacher: KL {mean_kl}");
    }

    #[test]
    fn evaluation_orders_and_bounds() {
        let data = tiny_dataset();
        let dims = ModelDims::shrunken();
        let prepared = shrink_inputs(&data, &dims);
        let cfg = tiny_config(1);
        let train: Vec<usize> = (0..40).collect();
        let (teacher, _) = train_teacher(&data, &prepared, &train, &train, &cfg).unwrap();
        let test: Vec<usize> = (40..60).collect();
        let e = evaluate(&EvaluatedModel::Teacher(&teacher), &data, &prepared, &test, &dims, 8).unwrap();
        assert!(e.class_accuracy <= e.paradigm_accuracy);
        assert!(e.paradigm_accuracy <= 1.0 && e.class_accuracy >= 0.0);
        assert_eq!(e.n_trials, 20);

        assert!(matches!(
            evaluate(&EvaluatedModel::Teacher(&teacher), &data, &prepared, &[], &dims, 8),
            Err(TrainError::EmptyTestSet)
        ));
    }

    #[test]
    fn report_statistics_recompute() {
        let report = EvaluationReport {
            model: "x".into(),
            per_subject: vec![
                FoldEvaluation { subject: 0, paradigm_accuracy: 0.9, class_accuracy: 0.5, n_trials: 10 },
                FoldEvaluation { subject: 1, paradigm_accuracy: 0.7, class_accuracy: 0.3, n_trials: 10 },
                FoldEvaluation { subject: 2, paradigm_accuracy: 0.8, class_accuracy: 0.4, n_trials: 10 },
            ],
        };
        assert!((report.paradigm_mean() - 0.8).abs() < 1e-12);
        assert!((report.class_mean() - 0.4).abs() < 1e-12);
        assert!((report.paradigm_std() - 0.1).abs() < 1e-12);
        assert!((report.class_std() - 0.1).abs() < 1e-12);
    }
}
