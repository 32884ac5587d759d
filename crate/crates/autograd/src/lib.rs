//! Dense f64 tensors and a reverse-mode tape with the handful of primitives a
//! stacked hourglass network needs: convolution, 2x2 max pooling, nearest
//! upsampling, ReLU, addition, batch-statistics normalization and MSE.
//!
//! ```
//! use sonospine_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_grad(true));
//! let pooled = tape.maxpool2(x).unwrap();
//! let loss = tape.sum(pooled);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
//! ```

mod kernels;
pub mod optim;
mod tape;
mod tensor;

pub use optim::{adam_update, Adam, AdamConfig, Moments};
pub use tape::{BackwardReport, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;
