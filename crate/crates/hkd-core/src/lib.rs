//! Hybrid-paradigm EEG decoding with knowledge distillation.
//!
//! The crate decodes trials that mix two imagery paradigms — motor imagery
//! (three grasp classes) and speech imagery (five word classes) — into a
//! joint eight-class decision. It provides:
//!
//! * a small dense-tensor engine with reverse-mode automatic differentiation
//!   ([`tensor`]), enough to express the convolutional networks used here;
//! * the hierarchical teacher network (paradigm gate + two specialist
//!   branches) and the compact singular student ([`models`]);
//! * the gated teacher loss and the temperature-softened distillation
//!   objective ([`losses`]);
//! * AdamW with decoupled weight decay and patience-based early stopping
//!   ([`optim`]);
//! * synthetic hybrid-paradigm EEG generation, a bit-exact trial file
//!   format, and leave-one-subject-out splitting ([`data`]);
//! * a classical CSP+LDA baseline ([`csp`]);
//! * training orchestration, evaluation, and the LOSO experiment loop
//!   ([`harness`]).
//!
//! With the default `parallel` feature, dataset generation, the heavy
//! convolution kernels and the LOSO folds run on rayon; without it the same
//! code runs sequentially with bit-identical results.

pub mod csp;
pub mod data;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod tensor;

pub use tensor::{Scalar, Shape4, Tensor4, TensorError};
