use rand::Rng;

use super::{Ctx, Linear};
use crate::autodiff::{concat, Elem, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Pre-norm self-attention over a set of rows followed by a feed-forward
/// layer: `a = MHA(LN(x))`, `y = a + FF(LN(a))`. The caller adds the outer
/// skip `x + y`; nothing inside depends on row order.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub heads: usize,
    pub model_dim: usize,
    /// Width of the query/key/value projections; defaults to `model_dim`.
    pub attn_dim: usize,
    pub hidden_dim: usize,
    ln1: (ParamId, ParamId),
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

fn layer_norm_params<E: Elem>(store: &mut ParamStore<E>, name: &str, dim: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gain"), Tensor::full(&[dim], E::one())),
        store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
    )
}

pub(crate) fn apply_layer_norm<'t, E: Elem>(
    ctx: Ctx<'t, E>,
    (gain, bias): (ParamId, ParamId),
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    let s = x.shape();
    let y = x.layer_norm(s.len() - 1, E::c(LN_EPS))?;
    y.mul(ctx.p(gain).broadcast(&s)?)?.add(ctx.p(bias).broadcast(&s)?)
}

impl AttentionBlock {
    pub fn new<E: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        name: &str,
        heads: usize,
        model_dim: usize,
        attn_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        assert!(heads > 0 && attn_dim.is_multiple_of(heads), "attention width must split evenly into heads");
        let ln1 = layer_norm_params(store, &format!("{name}.ln1"), model_dim);
        let q = Linear::new(store, rng, &format!("{name}.q"), model_dim, attn_dim, true);
        let k = Linear::new(store, rng, &format!("{name}.k"), model_dim, attn_dim, true);
        let v = Linear::new(store, rng, &format!("{name}.v"), model_dim, attn_dim, true);
        let o = Linear::new(store, rng, &format!("{name}.o"), attn_dim, model_dim, true);
        let ln2 = layer_norm_params(store, &format!("{name}.ln2"), model_dim);
        let ff1 = Linear::new(store, rng, &format!("{name}.ff1"), model_dim, hidden_dim, true);
        let ff2 = Linear::new(store, rng, &format!("{name}.ff2"), hidden_dim, model_dim, true);
        Self {
            heads,
            model_dim,
            attn_dim,
            hidden_dim,
            ln1,
            q,
            k,
            v,
            o,
            ln2,
            ff1,
            ff2,
        }
    }

    pub fn num_params(model_dim: usize, attn_dim: usize, hidden_dim: usize) -> usize {
        let (d, a, h) = (model_dim, attn_dim, hidden_dim);
        4 * d + 3 * Linear::num_params(d, a, true)
            + Linear::num_params(a, d, true)
            + Linear::num_params(d, h, true)
            + Linear::num_params(h, d, true)
    }

    /// `[C, D] -> [C, D]`.
    pub fn forward<'t, E: Elem>(&self, ctx: Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Also returns the `[C, C]` attention matrix of every head.
    pub fn forward_with_weights<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        x: Var<'t, E>,
    ) -> Result<(Var<'t, E>, Vec<Tensor<E>>)> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.model_dim {
            return Err(Error::shape("attention_block", &s, &[0, self.model_dim]));
        }
        let h = apply_layer_norm(ctx, self.ln1, x)?;
        let (q, k, v) = (
            self.q.forward(ctx, h)?,
            self.k.forward(ctx, h)?,
            self.v.forward(ctx, h)?,
        );
        let dh = self.attn_dim / self.heads;
        let scale = E::c(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (lo, hi) = (head * dh, (head + 1) * dh);
            let qh = q.slice(1, lo, hi)?;
            let kh = k.slice(1, lo, hi)?;
            let vh = v.slice(1, lo, hi)?;
            let att = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
            weights.push((*att.value()).clone());
            outs.push(att.matmul(vh)?);
        }
        let a = self.o.forward(ctx, concat(&outs, 1)?)?;
        let f = self.ff1.forward(ctx, apply_layer_norm(ctx, self.ln2, a)?)?.gelu();
        let y = a.add(self.ff2.forward(ctx, f)?)?;
        Ok((y, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(heads: usize) -> (ParamStore<f64>, AttentionBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = AttentionBlock::new(&mut store, &mut rng, "att", heads, 16, 8, 24);
        (store, b)
    }

    fn random_rows(rng: &mut ChaCha8Rng, c: usize, d: usize) -> Tensor<f64> {
        let data = (0..c * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(&[c, d], data).unwrap()
    }

    #[test]
    fn single_row_attends_to_itself() {
        let (store, b) = block(2);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(random_rows(&mut rng, 1, 16));
        let (y, w) = b.forward_with_weights(Ctx::new(&tape, &store), x).unwrap();
        assert_eq!(y.shape(), vec![1, 16]);
        for head in w {
            assert_eq!(head.data(), &[1.0]);
        }
    }

    #[test]
    fn shape_preserved_and_permutation_equivariant() {
        let (store, b) = block(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in 3..=9 {
            let x = random_rows(&mut rng, c, 16);
            let perm: Vec<usize> = (0..c).rev().collect();
            let mut xp = Vec::new();
            for &i in &perm {
                xp.extend_from_slice(&x.data()[i * 16..(i + 1) * 16]);
            }
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            let y = b.forward(ctx, tape.constant(x)).unwrap().value();
            let yp = b
                .forward(ctx, tape.constant(Tensor::new(&[c, 16], xp).unwrap()))
                .unwrap()
                .value();
            assert_eq!(y.shape(), &[c, 16]);
            for (row, &i) in perm.iter().enumerate() {
                for j in 0..16 {
                    let d = y.data()[i * 16 + j] - yp.data()[row * 16 + j];
                    assert!(d.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parameter_count() {
        let (store, _) = block(2);
        assert_eq!(store.num_scalars(), AttentionBlock::num_params(16, 8, 24));
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let (store, b) = block(2);
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 15]));
        assert!(matches!(b.forward(Ctx::new(&tape, &store), x), Err(Error::Shape { .. })));
    }
}
