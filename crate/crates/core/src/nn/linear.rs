use rand::Rng;

use super::{xavier_uniform, Ctx};
use crate::autodiff::{Elem, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn new<E: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            xavier_uniform(rng, &[in_dim, out_dim], in_dim, out_dim),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn num_params(in_dim: usize, out_dim: usize, bias: bool) -> usize {
        in_dim * out_dim + if bias { out_dim } else { 0 }
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward<'t, E: Elem>(&self, ctx: Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(Error::shape("linear", &s, &[self.in_dim, self.out_dim]));
        }
        let y = x.matmul(ctx.p(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.p(b).broadcast(&[s[0], self.out_dim])?),
            None => Ok(y),
        }
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`, at least two entries.
    pub fn new<E: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        name: &str,
        dims: &[usize],
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn num_params(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| Linear::num_params(w[0], w[1], true)).sum()
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty")
    }

    pub fn forward<'t, E: Elem>(&self, ctx: Ctx<'t, E>, mut x: Var<'t, E>) -> Result<Var<'t, E>> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            if i + 1 < n {
                x = x.gelu();
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_match_closed_form() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Mlp::new(&mut store, &mut rng, "m", &[10, 32, 32, 7]);
        assert_eq!(store.num_scalars(), 10 * 32 + 32 + 32 * 32 + 32 + 32 * 7 + 7);
        assert_eq!(Mlp::num_params(&[10, 32, 32, 7]), store.num_scalars());
    }

    #[test]
    fn doubling_hidden_width() {
        let w = 24;
        let narrow = Mlp::num_params(&[5, w, 3]);
        let wide = Mlp::num_params(&[5, 2 * w, 3]);
        assert_eq!(wide - narrow, (5 + 1 + 3) * w);
    }

    #[test]
    fn rejects_wrong_width() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", 3, 2, true);
        let tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[4, 5]));
        assert!(matches!(lin.forward(Ctx::new(&tape, &store), x), Err(Error::Shape { .. })));
    }
}
