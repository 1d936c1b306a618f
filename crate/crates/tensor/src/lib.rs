//! Dense tensors with define-by-run reverse-mode differentiation, plus the
//! layers (linear, embedding, LSTM, multi-head attention, Transformer
//! encoder, convolution) built from them.
//!
//! ```
//! use vti_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[1], &[3.0]).unwrap());
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

mod backward;
mod error;
mod gradcheck;
pub mod nn;
mod ops;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with_params, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tape::{ConvGeom, Tape, Var};
pub use tensor::Tensor;
