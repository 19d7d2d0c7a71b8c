//! Differentiable numeric substrate: tensors, a reverse-mode tape over the
//! operator set the encoder/attention/loss pipeline needs, parameter storage
//! and a finite-difference gradient checker.

mod gradcheck;
pub(crate) mod kernels;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{compare_gradients, gradient_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use params::{param_group, GradientMap, ParamSet, ParamTensor};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

pub(crate) use tape::softmax_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value ({detail})")]
    NonFinite { op: &'static str, detail: String },
    #[error("{0}")]
    Contract(String),
}

/// Numerically stable softmax of a plain slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}
