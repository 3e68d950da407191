//! AdamW parameter updates and patience-based early stopping.

use thiserror::Error;

use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter '{0}'; step rejected")]
    NonFiniteGradient(String),
    #[error("gradient shape {got} does not match parameter '{name}' shape {expected}")]
    ShapeMismatch { name: String, expected: crate::tensor::Shape4, got: crate::tensor::Shape4 },
}

/// Optimizer hyperparameters. Weight decay is decoupled: it is applied to
/// the parameter directly, never added to the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.01 }
    }
}

struct Slot<T: Scalar> {
    m: Tensor4<T>,
    v: Tensor4<T>,
}

/// Per-parameter first/second moment state plus the shared step counter.
pub struct AdamWState<T: Scalar> {
    config: AdamWConfig,
    slots: Vec<Option<Slot<T>>>,
    step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(config: AdamWConfig, parameter_count: usize) -> Self {
        let slots = (0..parameter_count).map(|_| None).collect();
        Self { config, slots, step: 0 }
    }

    pub fn config(&self) -> AdamWConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW step over all parameters. `grads[i]` pairs with
    /// `params[i]`; a missing gradient leaves the moments untouched but
    /// still applies the decoupled decay.
    ///
    /// ```text
    /// m ← β₁·m + (1−β₁)·g        v ← β₂·v + (1−β₂)·g²
    /// θ ← θ − lr·( m̂ / (√v̂ + ε) + wd·θ )
    /// ```
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut Tensor4<T>)],
        grads: &[Option<&Tensor4<T>>],
    ) -> Result<(), OptimError> {
        assert_eq!(params.len(), self.slots.len());
        assert_eq!(grads.len(), self.slots.len());
        for ((name, p), g) in params.iter().zip(grads.iter()) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(OptimError::ShapeMismatch {
                        name: (*name).to_string(),
                        expected: p.shape(),
                        got: g.shape(),
                    });
                }
                if !g.all_finite() {
                    return Err(OptimError::NonFiniteGradient((*name).to_string()));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let beta1 = T::of_f64(c.beta1);
        let beta2 = T::of_f64(c.beta2);
        let one = T::one();
        let corr1 = one - beta1.powi(t);
        let corr2 = one - beta2.powi(t);
        let lr = T::of_f64(c.lr);
        let eps = T::of_f64(c.epsilon);
        let decay = T::of_f64(c.lr * c.weight_decay);

        for (i, ((_, param), grad)) in params.iter_mut().zip(grads.iter()).enumerate() {
            if let Some(grad) = grad {
                let slot = self.slots[i].get_or_insert_with(|| Slot {
                    m: Tensor4::zeros(grad.shape()),
                    v: Tensor4::zeros(grad.shape()),
                });
                let pv = param.values_mut();
                let (mv, vv) = (slot.m.values_mut(), slot.v.values_mut());
                for (((p, &g), m), v) in pv.iter_mut().zip(grad.values()).zip(mv).zip(vv) {
                    *m = beta1 * *m + (one - beta1) * g;
                    *v = beta2 * *v + (one - beta2) * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *p = *p - lr * (m_hat / (v_hat.sqrt() + eps)) - decay * *p;
                }
            } else {
                for p in param.values_mut() {
                    *p = *p - decay * *p;
                }
            }
        }
        Ok(())
    }
}

/// Decision returned by [`EarlyStopper::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    /// Patience exhausted; restore the best snapshot.
    Stop,
}

/// Tracks the best validation metric (lower is better) and signals a stop
/// after `patience` consecutive epochs without strict improvement.
pub struct EarlyStopper<S> {
    patience: usize,
    best_metric: f64,
    epochs_since_improvement: usize,
    best_snapshot: Option<S>,
}

impl<S: Clone> EarlyStopper<S> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_metric: f64::INFINITY,
            epochs_since_improvement: 0,
            best_snapshot: None,
        }
    }

    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }

    /// Feeds one epoch's validation metric. Strict improvement snapshots
    /// `current` and resets the counter; otherwise the counter grows, and
    /// once it reaches the patience the stopper signals a stop.
    pub fn update(&mut self, metric: f64, current: &S) -> StopDecision {
        if metric < self.best_metric {
            self.best_metric = metric;
            self.best_snapshot = Some(current.clone());
            self.epochs_since_improvement = 0;
            return StopDecision::Continue;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Snapshot taken at the best metric, if any epoch improved.
    pub fn into_best(self) -> Option<(f64, S)> {
        self.best_snapshot.map(|s| (self.best_metric, s))
    }

    pub fn best(&self) -> Option<(f64, &S)> {
        self.best_snapshot.as_ref().map(|s| (self.best_metric, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn tensor(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, v.len(), 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn zero_grad_no_decay_leaves_params() {
        let mut p = tensor(&[0.5, -1.5]);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut state = AdamWState::new(cfg, 1);
        let g = tensor(&[0.0, 0.0]);
        for _ in 0..10 {
            state.step(&mut [("p", &mut p)], &[Some(&g)]).unwrap();
        }
        assert_eq!(p.values(), &[0.5, -1.5]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks_exactly() {
        let mut p = tensor(&[2.0, -4.0]);
        let cfg = AdamWConfig { lr: 0.001, weight_decay: 0.01, ..AdamWConfig::default() };
        let mut state = AdamWState::new(cfg, 1);
        let g = tensor(&[0.0, 0.0]);
        state.step(&mut [("p", &mut p)], &[Some(&g)]).unwrap();
        // θ ← θ·(1 − lr·wd) = θ·(1 − 1e-5)
        assert_eq!(p.values()[0], 2.0 - 1e-5 * 2.0);
        assert_eq!(p.values()[1], -4.0 - 1e-5 * (-4.0));
    }

    #[test]
    fn first_step_bias_correction_cancels() {
        let mut p = tensor(&[0.0]);
        let cfg = AdamWConfig { lr: 0.001, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut state = AdamWState::new(cfg, 1);
        let g = tensor(&[1.0]);
        state.step(&mut [("p", &mut p)], &[Some(&g)]).unwrap();
        // m̂ = g, v̂ = g² at t=1, so θ ≈ −lr·(1/(1+ε))
        let expect = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((p.values()[0] - expect).abs() < 1e-12);
        assert!((p.values()[0] + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = tensor(&[1.0]);
        let mut state = AdamWState::new(AdamWConfig::default(), 1);
        let g = tensor(&[f64::NAN]);
        let err = state.step(&mut [("conv1.w", &mut p)], &[Some(&g)]).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("conv1.w".into()));
        assert_eq!(p.values(), &[1.0]); // untouched
    }

    /// Straight-line Adam used as the independent trace oracle.
    fn reference_adam(theta0: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut theta = theta0.to_vec();
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        theta
    }

    #[test]
    fn matches_reference_adam_when_decay_is_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let theta0: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> =
            (0..100).map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

        let cfg = AdamWConfig { lr: 0.001, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut p = tensor(&theta0);
        let mut state = AdamWState::new(cfg, 1);
        for g in &grads {
            let gt = tensor(g);
            state.step(&mut [("p", &mut p)], &[Some(&gt)]).unwrap();
        }
        let expect = reference_adam(&theta0, &grads, 0.001);
        for (a, b) in p.values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn stopper_monotone_improvement_never_stops() {
        let mut s = EarlyStopper::new(5);
        for (epoch, m) in [5.0, 4.0, 3.0, 2.0, 1.0].into_iter().enumerate() {
            assert_eq!(s.update(m, &epoch), StopDecision::Continue);
        }
        let (best, snap) = s.into_best().unwrap();
        assert_eq!(best, 1.0);
        assert_eq!(snap, 4);
    }

    #[test]
    fn stopper_counts_five_non_improvements() {
        let mut s = EarlyStopper::new(5);
        let metrics = [1.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let mut stopped_at = None;
        for (epoch, m) in metrics.into_iter().enumerate() {
            if s.update(m, &epoch) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5)); // the sixth epoch
        let (best, snap) = s.into_best().unwrap();
        assert_eq!(best, 1.0);
        assert_eq!(snap, 0); // parameters from the first epoch
    }

    #[test]
    fn stopper_resets_on_improvement() {
        let mut s = EarlyStopper::new(5);
        s.update(3.0, &0);
        s.update(2.0, &1);
        s.update(3.0, &2);
        assert_eq!(s.update(1.0, &3), StopDecision::Continue);
        // counter was reset by the improvement at epoch 3
        for epoch in 4..8 {
            assert_eq!(s.update(9.9, &epoch), StopDecision::Continue);
        }
        assert_eq!(s.update(9.9, &8), StopDecision::Stop);
        assert_eq!(s.into_best().unwrap().1, 3);
    }

    #[test]
    fn stopper_best_never_worse_than_observed() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let metrics: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..10.0)).collect();
            let mut s = EarlyStopper::new(3);
            let mut observed_min = f64::INFINITY;
            for (i, &m) in metrics.iter().enumerate() {
                observed_min = observed_min.min(m);
                if s.update(m, &i) == StopDecision::Stop {
                    break;
                }
            }
            let (best, _) = s.best().unwrap();
            assert!(best <= observed_min);
        }
    }
}
