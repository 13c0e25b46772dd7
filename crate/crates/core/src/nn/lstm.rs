use rand::Rng;

use super::{uniform, Ctx};
use crate::autodiff::{Elem, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Recurrent state; `h` and `c` are both `[B, hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t, E: Elem> {
    pub h: Var<'t, E>,
    pub c: Var<'t, E>,
}

/// Standard LSTM cell. Gate blocks along the last axis are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    /// Weights `U(-1/sqrt(H), 1/sqrt(H))`; bias zero except the forget block at 1.
    pub fn new<E: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let h = hidden_dim;
        let a = 1.0 / (h as f64).sqrt();
        let w_x = store.add(format!("{name}.w_x"), uniform(rng, &[input_dim, 4 * h], a));
        let w_h = store.add(format!("{name}.w_h"), uniform(rng, &[h, 4 * h], a));
        let mut b = Tensor::zeros(&[4 * h]);
        b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = E::one());
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            bias,
        }
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim + 1)
    }

    pub fn zero_state<'t, E: Elem>(&self, ctx: Ctx<'t, E>, batch: usize) -> LstmState<'t, E> {
        let z = || ctx.tape.constant(Tensor::zeros(&[batch, self.hidden_dim]));
        LstmState { h: z(), c: z() }
    }

    /// One step on `x: [B, input]`; returns the new state (its `h` is the output).
    pub fn step<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        x: Var<'t, E>,
        state: LstmState<'t, E>,
    ) -> Result<LstmState<'t, E>> {
        let s = x.shape();
        let hs = state.h.shape();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape("lstm_step", &s, &[0, self.input_dim]));
        }
        if hs != [s[0], self.hidden_dim] || state.c.shape() != hs {
            return Err(Error::shape("lstm_step", &hs, &[s[0], self.hidden_dim]));
        }
        let h = self.hidden_dim;
        let z = x
            .matmul(ctx.p(self.w_x))?
            .add(state.h.matmul(ctx.p(self.w_h))?)?
            .add(ctx.p(self.bias).broadcast(&[s[0], 4 * h])?)?;
        let i = z.slice(1, 0, h)?.sigmoid();
        let f = z.slice(1, h, 2 * h)?.sigmoid();
        let g = z.slice(1, 2 * h, 3 * h)?.tanh();
        let o = z.slice(1, 3 * h, 4 * h)?.sigmoid();
        let c = f.mul(state.c)?.add(i.mul(g)?)?;
        let h = o.mul(c.tanh())?;
        Ok(LstmState { h, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(input: usize, hidden: usize) -> (ParamStore<f64>, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = LstmCell::new(&mut store, &mut rng, "lstm", input, hidden);
        (store, c)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let (mut store, cell) = cell(3, 4);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap());
        let s = cell.step(ctx, x, cell.zero_state(ctx, 2)).unwrap();
        assert!(s.h.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (store, cell) = cell(3, 4);
        let b = store.value(cell.bias).data();
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert!(b[..4].iter().chain(&b[8..]).all(|&v| v == 0.0));
        assert_eq!(store.num_scalars(), LstmCell::num_params(3, 4));
    }

    #[test]
    fn state_is_threaded() {
        let (store, cell) = cell(2, 3);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x1 = tape.constant(Tensor::new(&[1, 2], vec![0.7, -0.3]).unwrap());
        let x2 = tape.constant(Tensor::new(&[1, 2], vec![-0.4, 0.9]).unwrap());
        let s1 = cell.step(ctx, x1, cell.zero_state(ctx, 1)).unwrap();
        let two = cell.step(ctx, x2, s1).unwrap();
        let fresh = cell.step(ctx, x2, cell.zero_state(ctx, 1)).unwrap();
        assert_ne!(two.h.value().data(), fresh.h.value().data());
    }
}
