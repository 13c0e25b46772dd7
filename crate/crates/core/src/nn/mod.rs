//! Network layers built on the autodiff tape.
//!
//! Layers hold only [`ParamId`]s; the arrays live in a [`ParamStore`] so the
//! optimizer and checkpoint code can treat every parameter uniformly. Each
//! forward pass takes a [`Ctx`] naming the tape and the store.

mod attention;
mod encoder;
mod fourier;
mod linear;
mod lstm;

pub use attention::AttentionBlock;
pub use encoder::{extract_patches, PatchEncoder};
pub use fourier::FourierEncoding;
pub use linear::{Linear, Mlp};
pub use lstm::{LstmCell, LstmState};

use rand::Rng;

use crate::autodiff::{Elem, ParamId, ParamStore, Tape, Tensor, Var};

/// Borrowed tape and parameters for one forward pass.
#[derive(Clone, Copy)]
pub struct Ctx<'t, E: Elem> {
    pub tape: &'t Tape<E>,
    pub params: &'t ParamStore<E>,
}

impl<'t, E: Elem> Ctx<'t, E> {
    pub fn new(tape: &'t Tape<E>, params: &'t ParamStore<E>) -> Self {
        Self { tape, params }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, E> {
        self.tape.param(self.params, id)
    }
}

/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<E: Elem, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<E> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, a)
}

pub(crate) fn uniform<E: Elem, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], a: f64) -> Tensor<E> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| E::c(rng.gen_range(-a..=a))).collect();
    Tensor::new(shape, data).expect("shape matches length")
}
