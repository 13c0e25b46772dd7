//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every op applied to its [`Var`]s in execution order;
//! [`Tape::backward`] walks it in reverse once and returns gradients for all
//! leaves. Parameters live in a [`ParamStore`] and enter a tape via
//! [`Tape::param`].

mod geom_ops;
mod ops;
mod params;
mod tape;
mod tensor;

pub use geom_ops::{fourier_values, fourier_width, INVALID_PIXEL};
pub use ops::{concat, gelu, sigmoid};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Elem, Tensor};
