//! Common spatial patterns with a shrinkage-LDA classifier — the classical
//! baseline pipeline.
//!
//! CSP here is the standard completion: per-trial covariance normalized by
//! its trace, class-averaged, then the generalized symmetric eigenproblem
//! `Σ_A w = λ (Σ_A + Σ_B) w` solved by whitening the composite covariance.
//! Eigenvalues fall in `[0, 1]` and filters are sorted by eigenvalue
//! descending, so the first filters maximize class-A variance and the last
//! maximize class-B variance. Features are log variance ratios of the
//! projected signals. Multi-class settings use one-vs-rest filter banks
//! feeding a single shrinkage-LDA.

use thiserror::Error;

use crate::data::{LabeledTrial, Paradigm, N_CHANNELS, N_SAMPLES};
use crate::linalg::{solve_spd, symmetric_eigen, LinalgError, SquareMat};

#[derive(Debug, Error)]
pub enum CspError {
    #[error("need at least {needed} trials per class, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error("epoch has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("composite covariance stayed rank-deficient after regularization")]
    RankDeficient,
    #[error("within-class covariance is singular even after shrinkage")]
    SingularCovariance,
    #[error("training set is missing {paradigm:?} class {class}")]
    MissingClass { paradigm: Paradigm, class: usize },
    #[error("LDA needs at least two classes with one sample each")]
    TooFewClasses,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One multichannel segment, row-major by channel. CSP is dimensioned by
/// the epoch, so toy problems with few channels work alongside real trials.
#[derive(Clone, Debug)]
pub struct Epoch {
    pub channels: usize,
    pub samples: usize,
    pub data: Vec<f64>,
}

impl Epoch {
    pub fn new(channels: usize, samples: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * samples);
        Self { channels, samples, data }
    }

    pub fn from_trial(trial: &LabeledTrial) -> Self {
        Self {
            channels: N_CHANNELS,
            samples: N_SAMPLES,
            data: trial.samples.iter().map(|&v| v as f64).collect(),
        }
    }

    fn row(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.samples..(ch + 1) * self.samples]
    }
}

/// Trace-normalized covariance `XXᵀ / tr(XXᵀ)`.
fn normalized_covariance(epoch: &Epoch) -> SquareMat {
    let n = epoch.channels;
    let mut cov = SquareMat::zeros(n);
    for i in 0..n {
        let ri = epoch.row(i);
        for j in i..n {
            let rj = epoch.row(j);
            let mut acc = 0.0;
            for (a, b) in ri.iter().zip(rj) {
                acc += a * b;
            }
            cov.set(i, j, acc);
            cov.set(j, i, acc);
        }
    }
    let trace: f64 = (0..n).map(|i| cov.at(i, i)).sum();
    if trace > 0.0 {
        for v in cov.data.iter_mut() {
            *v /= trace;
        }
    }
    cov
}

fn mean_covariance(epochs: &[Epoch]) -> SquareMat {
    let n = epochs[0].channels;
    let mut acc = SquareMat::zeros(n);
    for e in epochs {
        let c = normalized_covariance(e);
        for (a, b) in acc.data.iter_mut().zip(&c.data) {
            *a += b;
        }
    }
    let inv = 1.0 / epochs.len() as f64;
    for v in acc.data.iter_mut() {
        *v *= inv;
    }
    acc
}

/// Spatial filter bank for one class pair.
#[derive(Clone, Debug)]
pub struct CspModel {
    /// Columns are spatial filters, sorted by eigenvalue descending.
    pub projection: SquareMat,
    /// Generalized eigenvalues in `[0, 1]`, descending.
    pub eigenvalues: Vec<f64>,
    pub n_filters_per_side: usize,
}

/// Fits the filter bank from two classes of epochs (≥2 each).
pub fn fit_csp(class_a: &[Epoch], class_b: &[Epoch], m: usize) -> Result<CspModel, CspError> {
    for class in [class_a, class_b] {
        if class.len() < 2 {
            return Err(CspError::TooFewTrials { needed: 2, got: class.len() });
        }
    }
    let n = class_a[0].channels;
    let sigma_a = mean_covariance(class_a);
    let sigma_b = mean_covariance(class_b);

    let mut composite = SquareMat::zeros(n);
    for i in 0..n * n {
        composite.data[i] = sigma_a.data[i] + sigma_b.data[i];
    }

    let whitener = match whiten(&composite)? {
        Some(p) => p,
        None => {
            // rank-deficient composite: regularize and retry once
            for i in 0..n {
                composite.set(i, i, composite.at(i, i) + 1e-8);
            }
            whiten(&composite)?.ok_or(CspError::RankDeficient)?
        }
    };

    // S = P Σ_A Pᵀ, symmetric with spectrum in [0, 1]
    let s = whitener.matmul(&sigma_a).matmul(&whitener.transpose());
    let (eigenvalues, v) = symmetric_eigen(&s)?;
    let projection = whitener.transpose().matmul(&v);
    Ok(CspModel { projection, eigenvalues, n_filters_per_side: m })
}

/// Whitening transform `P = Λ^{-1/2} Uᵀ` of an SPSD matrix, or `None` if it
/// is numerically rank-deficient.
fn whiten(mat: &SquareMat) -> Result<Option<SquareMat>, CspError> {
    let (vals, vecs) = symmetric_eigen(mat)?;
    let max = vals.first().copied().unwrap_or(0.0);
    if max <= 0.0 || vals.iter().any(|&v| v <= 1e-12 * max) {
        return Ok(None);
    }
    let n = mat.n;
    let mut p = vecs.transpose();
    for (i, &val) in vals.iter().enumerate() {
        let scale = 1.0 / val.sqrt();
        for j in 0..n {
            p.data[i * n + j] *= scale;
        }
    }
    Ok(Some(p))
}

/// Log variance-ratio features from the first and last `m` filters.
pub fn csp_features(epoch: &Epoch, model: &CspModel) -> Result<Vec<f64>, CspError> {
    let n = model.projection.n;
    if epoch.channels != n {
        return Err(CspError::ChannelMismatch { expected: n, got: epoch.channels });
    }
    let m = model.n_filters_per_side;
    let picked: Vec<usize> = (0..m).chain(n - m..n).collect();

    let mut variances = Vec::with_capacity(2 * m);
    for &f in &picked {
        // project: y = w_fᵀ X
        let mut mean = 0.0;
        let mut power = 0.0;
        for t in 0..epoch.samples {
            let mut y = 0.0;
            for ch in 0..n {
                y += model.projection.at(ch, f) * epoch.data[ch * epoch.samples + t];
            }
            mean += y;
            power += y * y;
        }
        let inv_n = 1.0 / epoch.samples as f64;
        let var = power * inv_n - (mean * inv_n) * (mean * inv_n);
        variances.push(var.max(0.0));
    }
    let total: f64 = variances.iter().sum();
    let total = total.max(1e-12);
    Ok(variances.iter().map(|v| (v / total).max(1e-12).ln()).collect())
}

/// Linear discriminant scores with a shrinkage-regularized shared
/// covariance: `Σ_γ = (1−γ)Σ + γ·(tr Σ / d)·I`.
#[derive(Clone, Debug)]
pub struct LdaModel {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub gamma: f64,
}

pub fn fit_lda(features: &[Vec<f64>], labels: &[usize], gamma: f64) -> Result<LdaModel, CspError> {
    assert_eq!(features.len(), labels.len());
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    if classes < 2 || features.is_empty() {
        return Err(CspError::TooFewClasses);
    }
    let d = features[0].len();
    let n = features.len();

    let mut counts = vec![0usize; classes];
    let mut means = vec![vec![0.0; d]; classes];
    for (x, &y) in features.iter().zip(labels) {
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(x) {
            *m += v;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(CspError::TooFewClasses);
    }
    for (mean, &c) in means.iter_mut().zip(&counts) {
        for v in mean.iter_mut() {
            *v /= c as f64;
        }
    }

    // pooled within-class covariance
    let mut cov = SquareMat::zeros(d);
    for (x, &y) in features.iter().zip(labels) {
        for i in 0..d {
            let di = x[i] - means[y][i];
            for j in i..d {
                let dj = x[j] - means[y][j];
                cov.data[i * d + j] += di * dj;
            }
        }
    }
    let denom = (n.saturating_sub(classes)).max(1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.data[i * d + j] / denom;
            cov.data[i * d + j] = v;
            cov.data[j * d + i] = v;
        }
    }

    // shrink toward a scaled identity; an all-zero scatter (one sample per
    // class) degenerates to the identity itself
    let trace: f64 = (0..d).map(|i| cov.at(i, i)).sum();
    let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    let mut shrunk = SquareMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let mut v = (1.0 - gamma) * cov.at(i, j);
            if i == j {
                v += gamma * scale;
            }
            shrunk.set(i, j, v);
        }
    }

    let mut weights = Vec::with_capacity(classes);
    let mut biases = Vec::with_capacity(classes);
    for k in 0..classes {
        let w = solve_spd(&shrunk, &means[k]).map_err(|_| CspError::SingularCovariance)?;
        let mut dot = 0.0;
        for (wi, mi) in w.iter().zip(&means[k]) {
            dot += wi * mi;
        }
        let prior = counts[k] as f64 / n as f64;
        biases.push(-0.5 * dot + prior.ln());
        weights.push(w);
    }
    Ok(LdaModel { weights, biases, gamma })
}

/// Argmax of the discriminant scores; ties go to the lowest class index.
pub fn lda_predict(model: &LdaModel, feature: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut score = *b;
        for (wi, xi) in w.iter().zip(feature) {
            score += wi * xi;
        }
        if score > best_score {
            best_score = score;
            best = k;
        }
    }
    best
}

/// One-vs-rest CSP filter banks concatenated into a single LDA.
#[derive(Clone, Debug)]
struct OvrCspLda {
    csps: Vec<CspModel>,
    lda: LdaModel,
}

impl OvrCspLda {
    fn fit(by_class: &[Vec<Epoch>], m: usize, gamma: f64) -> Result<Self, CspError> {
        let mut csps = Vec::with_capacity(by_class.len());
        for k in 0..by_class.len() {
            let rest: Vec<Epoch> =
                by_class.iter().enumerate().filter(|(i, _)| *i != k).flat_map(|(_, v)| v.clone()).collect();
            csps.push(fit_csp(&by_class[k], &rest, m)?);
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (k, epochs) in by_class.iter().enumerate() {
            for e in epochs {
                features.push(Self::feature_of(&csps, e)?);
                labels.push(k);
            }
        }
        let lda = fit_lda(&features, &labels, gamma)?;
        Ok(Self { csps, lda })
    }

    fn feature_of(csps: &[CspModel], epoch: &Epoch) -> Result<Vec<f64>, CspError> {
        let mut out = Vec::new();
        for csp in csps {
            out.extend(csp_features(epoch, csp)?);
        }
        Ok(out)
    }

    fn predict(&self, epoch: &Epoch) -> Result<usize, CspError> {
        let f = Self::feature_of(&self.csps, epoch)?;
        Ok(lda_predict(&self.lda, &f))
    }
}

/// The full classical pipeline, hierarchical like the teacher: a binary
/// paradigm stage, then a one-vs-rest stage within the predicted paradigm.
#[derive(Clone, Debug)]
pub struct CspLdaPipeline {
    paradigm_csp: CspModel,
    paradigm_lda: LdaModel,
    mi: OvrCspLda,
    si: OvrCspLda,
}

impl CspLdaPipeline {
    pub fn fit(train: &[&LabeledTrial], m: usize, gamma: f64) -> Result<Self, CspError> {
        let mut mi_epochs: Vec<Vec<Epoch>> = vec![Vec::new(); 3];
        let mut si_epochs: Vec<Vec<Epoch>> = vec![Vec::new(); 5];
        for t in train {
            let e = Epoch::from_trial(t);
            match t.paradigm {
                Paradigm::Mi => mi_epochs[t.class_index].push(e),
                Paradigm::Si => si_epochs[t.class_index].push(e),
            }
        }
        for (class, epochs) in mi_epochs.iter().enumerate() {
            if epochs.len() < 2 {
                return Err(CspError::MissingClass { paradigm: Paradigm::Mi, class });
            }
        }
        for (class, epochs) in si_epochs.iter().enumerate() {
            if epochs.len() < 2 {
                return Err(CspError::MissingClass { paradigm: Paradigm::Si, class });
            }
        }

        let mi_all: Vec<Epoch> = mi_epochs.iter().flatten().cloned().collect();
        let si_all: Vec<Epoch> = si_epochs.iter().flatten().cloned().collect();
        let paradigm_csp = fit_csp(&mi_all, &si_all, m)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (label, epochs) in [(0usize, &mi_all), (1usize, &si_all)] {
            for e in epochs {
                features.push(csp_features(e, &paradigm_csp)?);
                labels.push(label);
            }
        }
        let paradigm_lda = fit_lda(&features, &labels, gamma)?;

        Ok(Self {
            paradigm_csp,
            paradigm_lda,
            mi: OvrCspLda::fit(&mi_epochs, m, gamma)?,
            si: OvrCspLda::fit(&si_epochs, m, gamma)?,
        })
    }

    /// Predicted paradigm and class within that paradigm.
    pub fn predict(&self, trial: &LabeledTrial) -> Result<(Paradigm, usize), CspError> {
        let e = Epoch::from_trial(trial);
        let f = csp_features(&e, &self.paradigm_csp)?;
        let paradigm =
            if lda_predict(&self.paradigm_lda, &f) == 0 { Paradigm::Mi } else { Paradigm::Si };
        let class = match paradigm {
            Paradigm::Mi => self.mi.predict(&e)?,
            Paradigm::Si => self.si.predict(&e)?,
        };
        Ok((paradigm, class))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_epoch(rng: &mut ChaCha8Rng, channels: usize, samples: usize, scales: &[f64]) -> Epoch {
        let mut data = vec![0.0; channels * samples];
        for ch in 0..channels {
            for t in 0..samples {
                data[ch * samples + t] = scales[ch] * rng.gen_range(-1.0f64..1.0);
            }
        }
        Epoch::new(channels, samples, data)
    }

    #[test]
    fn identical_classes_give_half_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let epochs: Vec<Epoch> = (0..6).map(|_| random_epoch(&mut rng, 4, 200, &[1.0; 4])).collect();
        let model = fit_csp(&epochs, &epochs, 1).unwrap();
        for &v in &model.eigenvalues {
            assert!((v - 0.5).abs() < 1e-6, "eigenvalue {v}");
        }
    }

    #[test]
    fn two_channel_toy_recovers_axes() {
        // class A covariance ∝ diag(4,1), class B ∝ diag(1,4); the two rows
        // of every epoch are orthogonal so the covariances are exactly
        // diagonal
        let a1 = Epoch::new(2, 4, vec![2.0, -2.0, 2.0, -2.0, 1.0, 1.0, -1.0, -1.0]);
        let a2 = Epoch::new(2, 4, vec![-2.0, 2.0, -2.0, 2.0, -1.0, -1.0, 1.0, 1.0]);
        let b1 = Epoch::new(2, 4, vec![1.0, 1.0, -1.0, -1.0, 2.0, -2.0, 2.0, -2.0]);
        let b2 = Epoch::new(2, 4, vec![-1.0, -1.0, 1.0, 1.0, -2.0, 2.0, -2.0, 2.0]);
        let model = fit_csp(&[a1, a2], &[b1, b2], 1).unwrap();
        assert!((model.eigenvalues[0] - 0.8).abs() < 1e-9, "{:?}", model.eigenvalues);
        assert!((model.eigenvalues[1] - 0.2).abs() < 1e-9);
        // filters aligned with the coordinate axes
        let w = &model.projection;
        assert!(w.at(1, 0).abs() < 1e-9 * w.at(0, 0).abs().max(1.0));
        assert!(w.at(0, 1).abs() < 1e-9 * w.at(1, 1).abs().max(1.0));
    }

    /// Channel-reversed copies of the class-A epochs. The composite
    /// covariance is invariant under the relabeling, which makes the
    /// whitened class-A spectrum symmetric about ½ — the setting where
    /// pairwise eigenvalue complementarity is exact.
    fn mirrored(epochs: &[Epoch]) -> Vec<Epoch> {
        epochs
            .iter()
            .map(|e| {
                let mut data = vec![0.0; e.data.len()];
                for ch in 0..e.channels {
                    data[(e.channels - 1 - ch) * e.samples..(e.channels - ch) * e.samples]
                        .copy_from_slice(e.row(ch));
                }
                Epoch::new(e.channels, e.samples, data)
            })
            .collect()
    }

    #[test]
    fn whitening_and_simultaneous_diagonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Epoch> = (0..8).map(|_| random_epoch(&mut rng, 5, 300, &[2.0, 1.0, 0.5, 1.5, 1.0])).collect();
        let b = mirrored(&a);
        let model = fit_csp(&a, &b, 2).unwrap();

        let sa = mean_covariance(&a);
        let sb = mean_covariance(&b);
        let w = &model.projection;
        let wt = w.transpose();
        let da = wt.matmul(&sa).matmul(w);
        let db = wt.matmul(&sb).matmul(w);
        let n = 5;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!(da.at(i, j).abs() < 1e-6, "Σ_A not diagonalized: {}", da.at(i, j));
                    assert!(db.at(i, j).abs() < 1e-6, "Σ_B not diagonalized: {}", db.at(i, j));
                } else {
                    // diagonals are complementary and the composite is whitened
                    assert!((da.at(i, i) + db.at(i, i) - 1.0).abs() < 1e-6);
                    assert!((da.at(i, i) - model.eigenvalues[i]).abs() < 1e-6);
                }
            }
        }
        // eigenvalue complementarity λᵢ + λ_{n+1−i} = 1
        for i in 0..n {
            assert!((model.eigenvalues[i] + model.eigenvalues[n - 1 - i] - 1.0).abs() < 1e-6);
        }
        // descending order
        for pair in model.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
    }

    #[test]
    fn matches_dense_solver_oracle_on_toys() {
        // independent route: whiten Σ_A with nalgebra's symmetric eigen
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for channels in [2usize, 3, 4] {
            let scales_a: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..2.0)).collect();
            let scales_b: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.5..2.0)).collect();
            let a: Vec<Epoch> = (0..6).map(|_| random_epoch(&mut rng, channels, 400, &scales_a)).collect();
            let b: Vec<Epoch> = (0..6).map(|_| random_epoch(&mut rng, channels, 400, &scales_b)).collect();
            let model = fit_csp(&a, &b, 1).unwrap();

            let sa = mean_covariance(&a);
            let sb = mean_covariance(&b);
            let to_na = |m: &SquareMat| {
                nalgebra::DMatrix::from_fn(channels, channels, |i, j| m.at(i, j))
            };
            let comp = to_na(&sa) + to_na(&sb);
            let eig = nalgebra::SymmetricEigen::new(comp);
            let mut p = nalgebra::DMatrix::zeros(channels, channels);
            for i in 0..channels {
                let s = 1.0 / eig.eigenvalues[i].sqrt();
                for j in 0..channels {
                    p[(i, j)] = eig.eigenvectors[(j, i)] * s;
                }
            }
            let s = &p * to_na(&sa) * p.transpose();
            let mut oracle: Vec<f64> =
                nalgebra::SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
            oracle.sort_by(|x, y| y.partial_cmp(x).unwrap());

            for (mine, theirs) in model.eigenvalues.iter().zip(&oracle) {
                assert!((mine - theirs).abs() < 1e-8, "{mine} vs {theirs}");
            }
        }
    }

    #[test]
    fn features_scale_invariant_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<Epoch> = (0..5).map(|_| random_epoch(&mut rng, 6, 100, &[1.0; 6])).collect();
        let b: Vec<Epoch> = (0..5).map(|_| random_epoch(&mut rng, 6, 100, &[2.0, 1.0, 1.0, 1.0, 0.5, 1.0])).collect();
        let model = fit_csp(&a, &b, 3).unwrap();

        let probe = random_epoch(&mut rng, 6, 100, &[1.0; 6]);
        let f = csp_features(&probe, &model).unwrap();
        assert_eq!(f.len(), 6);

        let scaled = Epoch::new(6, 100, probe.data.iter().map(|v| v * 37.5).collect());
        let fs = csp_features(&scaled, &model).unwrap();
        for (x, y) in f.iter().zip(&fs) {
            assert!((x - y).abs() < 1e-9);
        }

        let again = csp_features(&probe, &model).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn lda_separates_shifted_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..100 {
            features.push(vec![-5.0 + rng.gen_range(-1.0..1.0)]);
            labels.push(0);
            features.push(vec![5.0 + rng.gen_range(-1.0..1.0)]);
            labels.push(1);
        }
        let model = fit_lda(&features, &labels, 0.1).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(f, &y)| lda_predict(&model, f) == y)
            .count();
        assert!(correct as f64 / labels.len() as f64 >= 0.99);

        // a training point predicts its own label in the separable case
        assert_eq!(lda_predict(&model, &features[0]), labels[0]);
    }

    #[test]
    fn single_samples_gamma_one_bisect() {
        // γ=1 gives spherical covariance; the boundary is the perpendicular
        // bisector of the two means
        let features = vec![vec![0.0, 0.0], vec![4.0, 2.0]];
        let labels = vec![0, 1];
        let model = fit_lda(&features, &labels, 1.0).unwrap();
        // midpoint scores equal
        let mid = [2.0, 1.0];
        let s0: f64 = model.weights[0].iter().zip(&mid).map(|(w, x)| w * x).sum::<f64>() + model.biases[0];
        let s1: f64 = model.weights[1].iter().zip(&mid).map(|(w, x)| w * x).sum::<f64>() + model.biases[1];
        assert!((s0 - s1).abs() < 1e-9);
        // a point slightly toward class 0 flips the decision
        assert_eq!(lda_predict(&model, &[1.9, 0.9]), 0);
        assert_eq!(lda_predict(&model, &[2.1, 1.1]), 1);
    }

    #[test]
    fn pipeline_learns_separable_synthetic_data() {
        use crate::data::synth::{generate_synthetic_dataset, SyntheticConfig};
        let cfg = SyntheticConfig {
            n_subjects: 3,
            trials_per_paradigm: 30,
            class_separation: 5.0,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic_dataset(&cfg);
        let train: Vec<&LabeledTrial> = data.iter().filter(|t| t.subject != 2).collect();
        let test: Vec<&LabeledTrial> = data.iter().filter(|t| t.subject == 2).collect();
        let pipeline = CspLdaPipeline::fit(&train, 3, 0.1).unwrap();

        let mut paradigm_ok = 0usize;
        let mut class_ok = 0usize;
        for t in &test {
            let (p, c) = pipeline.predict(t).unwrap();
            if p == t.paradigm {
                paradigm_ok += 1;
                if c == t.class_index {
                    class_ok += 1;
                }
            }
        }
        let pa = paradigm_ok as f64 / test.len() as f64;
        let within = class_ok as f64 / paradigm_ok.max(1) as f64;
        assert!(pa >= 0.9, "paradigm accuracy {pa}");
        assert!(within >= 0.9, "within-paradigm accuracy {within}");
    }
}
