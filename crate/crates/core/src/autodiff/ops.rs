//! Differentiable tensor operations.

use std::sync::Arc;

use super::tape::Var;
use super::tensor::{Elem, Tensor};
use crate::error::{Error, Result};

/// `shape` viewed as `[outer, len, inner]` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    Ok(())
}

type Pair<E> = (Arc<Tensor<E>>, Arc<Tensor<E>>);

// Fallible arithmetic cannot implement the std operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t, E: Elem> Var<'t, E> {
    fn same_shape(&self, other: &Var<'t, E>, op: &'static str) -> Result<Pair<E>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        Ok((a, b))
    }

    fn unary(self, f: impl Fn(E) -> E, df: impl Fn(E, E) -> E + 'static) -> Var<'t, E> {
        let x = self.value();
        let y = Arc::new(
            Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape"),
        );
        let yc = Arc::clone(&y);
        self.tape.record_arc(
            y,
            &[self],
            Box::new(move |g, _| {
                let d = g
                    .iter()
                    .zip(x.data().iter().zip(yc.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(d)]
            }),
        )
    }

    pub fn add(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.same_shape(&other, "add")?;
        let out: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.tape.record(
            Tensor::new(a.shape(), out)?,
            &[self, other],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.same_shape(&other, "sub")?;
        let out: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        Ok(self.tape.record(
            Tensor::new(a.shape(), out)?,
            &[self, other],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        ))
    }

    pub fn mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.same_shape(&other, "mul")?;
        let out: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.tape.record(
            Tensor::new(a.shape(), out)?,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(&g, &y)| g * y).collect());
                let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(&g, &x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = self.same_shape(&other, "div")?;
        let out: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
        Ok(self.tape.record(
            Tensor::new(a.shape(), out)?,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(&g, &y)| g / y).collect());
                let gb = needs[1].then(|| {
                    g.iter()
                        .zip(a.data().iter().zip(b.data()))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect()
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn neg(self) -> Var<'t, E> {
        self.scale(-E::one())
    }

    pub fn scale(self, s: E) -> Var<'t, E> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: E) -> Var<'t, E> {
        self.unary(move |x| x + s, |_, _| E::one())
    }

    pub fn square(self) -> Var<'t, E> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// `x^p`; the derivative at `x = 0` is taken as zero for `p < 1`.
    pub fn powf(self, p: E) -> Var<'t, E> {
        self.unary(
            move |x| x.powf(p),
            move |x, _| {
                if x == E::zero() && p < E::one() {
                    E::zero()
                } else {
                    p * x.powf(p - E::one())
                }
            },
        )
    }

    pub fn exp(self) -> Var<'t, E> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(self) -> Var<'t, E> {
        self.unary(|x| x.ln(), |x, _| E::one() / x)
    }

    /// Square root with a zero subgradient at the origin.
    pub fn sqrt(self) -> Var<'t, E> {
        self.unary(
            |x| x.sqrt(),
            |_, y| {
                if y == E::zero() {
                    E::zero()
                } else {
                    E::c(0.5) / y
                }
            },
        )
    }

    pub fn tanh(self) -> Var<'t, E> {
        self.unary(|x| x.tanh(), |_, y| E::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, E> {
        self.unary(sigmoid, |_, y| y * (E::one() - y))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(self) -> Var<'t, E> {
        self.unary(gelu, |x, _| {
            let phi = E::c(0.5) * (E::one() + (x * E::c(std::f64::consts::FRAC_1_SQRT_2)).erf());
            let pdf = E::c(0.398_942_280_401_432_7) * (E::c(-0.5) * x * x).exp();
            phi + x * pdf
        })
    }

    pub fn sin(self) -> Var<'t, E> {
        self.unary(|x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(self) -> Var<'t, E> {
        self.unary(|x| x.cos(), |x, _| -x.sin())
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![E::zero(); m * n];
        E::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), E::zero(), &mut out);
        Ok(self.tape.record(
            Tensor::new(&[m, n], out)?,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![E::zero(); m * k];
                    E::gemm(m, n, k, g, (n as isize, 1), b.data(), (1, n as isize), E::zero(), &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![E::zero(); k * n];
                    E::gemm(k, m, n, a.data(), (1, k as isize), g, (n as isize, 1), E::zero(), &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[2]));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_data(a.data(), r, c);
        Ok(self.tape.record(
            Tensor::new(&[c, r], out)?,
            &[self],
            Box::new(move |g, _| vec![Some(transpose_data(g, c, r))]),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let a = self.value();
        if shape.iter().product::<usize>() != a.numel() {
            return Err(Error::shape("reshape", a.shape(), shape));
        }
        let out = Tensor::new(shape, a.data().to_vec())?;
        Ok(self
            .tape
            .record(out, &[self], Box::new(|g, _| vec![Some(g.to_vec())])))
    }

    /// Repeats the tensor over new leading dimensions: `[..] -> [lead.., ..]`.
    pub fn broadcast(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let a = self.value();
        let s = a.shape();
        if shape.len() < s.len() || &shape[shape.len() - s.len()..] != s {
            return Err(Error::shape("broadcast", s, shape));
        }
        let n = a.numel();
        let reps: usize = shape[..shape.len() - s.len()].iter().product();
        let mut out = Vec::with_capacity(n * reps);
        for _ in 0..reps {
            out.extend_from_slice(a.data());
        }
        Ok(self.tape.record(
            Tensor::new(shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut acc = vec![E::zero(); n];
                for chunk in g.chunks_exact(n) {
                    acc.iter_mut().zip(chunk).for_each(|(a, &b)| *a = *a + b);
                }
                vec![Some(acc)]
            }),
        ))
    }

    /// `[N, D] -> [N * n, D]`, each row repeated `n` times in place.
    pub fn repeat_rows(self, n: usize) -> Result<Var<'t, E>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 || n == 0 {
            return Err(Error::shape("repeat_rows", s, &[0, 0]));
        }
        let (rows, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(rows * n * d);
        for row in a.data().chunks_exact(d) {
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        Ok(self.tape.record(
            Tensor::new(&[rows * n, d], out)?,
            &[self],
            Box::new(move |g, _| {
                let mut acc = vec![E::zero(); rows * d];
                for (i, chunk) in g.chunks_exact(d).enumerate() {
                    let dst = &mut acc[(i / n) * d..(i / n + 1) * d];
                    dst.iter_mut().zip(chunk).for_each(|(a, &b)| *a = *a + b);
                }
                vec![Some(acc)]
            }),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, E> {
        let a = self.value();
        let n = a.numel();
        let s: E = a.data().iter().copied().sum();
        self.tape.record(
            Tensor::scalar(s),
            &[self],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(self) -> Var<'t, E> {
        let n = self.numel();
        self.sum().scale(E::one() / E::c(n as f64))
    }

    /// Sums out one axis.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, E>> {
        let a = self.value();
        check_axis("sum_axis", a.shape(), axis)?;
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let mut out = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d = *d + s);
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        Ok(self.tape.record(
            Tensor::new(&shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        d.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, E>> {
        let shape = self.shape();
        check_axis("mean_axis", &shape, axis)?;
        let len = shape[axis];
        Ok(self.sum_axis(axis)?.scale(E::one() / E::c(len as f64)))
    }

    /// Elements `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, E>> {
        let a = self.value();
        check_axis("slice", a.shape(), axis)?;
        if start >= end || end > a.shape()[axis] {
            return Err(Error::shape("slice", a.shape(), &[axis, start, end]));
        }
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&a.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = w;
        Ok(self.tape.record(
            Tensor::new(&shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![E::zero(); outer * len * inner];
                for o in 0..outer {
                    d[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                vec![Some(d)]
            }),
        ))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, E>> {
        let a = self.value();
        check_axis("softmax", a.shape(), axis)?;
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let x = a.data();
        let mut y = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x[idx(l)]).fold(E::neg_infinity(), E::max);
                let mut s = E::zero();
                for l in 0..len {
                    let e = (x[idx(l)] - m).exp();
                    y[idx(l)] = e;
                    s = s + e;
                }
                for l in 0..len {
                    y[idx(l)] = y[idx(l)] / s;
                }
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), y)?);
        let yc = Arc::clone(&y);
        Ok(self.tape.record_arc(
            y,
            &[self],
            Box::new(move |g, _| {
                let y = yc.data();
                let mut d = vec![E::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: E = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            d[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Normalizes to zero mean and unit variance along `axis` (no affine terms).
    pub fn layer_norm(self, axis: usize, eps: E) -> Result<Var<'t, E>> {
        let a = self.value();
        check_axis("layer_norm", a.shape(), axis)?;
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let x = a.data();
        let n = E::c(len as f64);
        let mut y = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mean = (0..len).map(|l| x[idx(l)]).sum::<E>() / n;
                let var = (0..len).map(|l| (x[idx(l)] - mean).powi(2)).sum::<E>() / n;
                let r = E::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for l in 0..len {
                    y[idx(l)] = (x[idx(l)] - mean) * r;
                }
            }
        }
        let y = Arc::new(Tensor::new(a.shape(), y)?);
        let yc = Arc::clone(&y);
        Ok(self.tape.record_arc(
            y,
            &[self],
            Box::new(move |g, _| {
                let y = yc.data();
                let mut d = vec![E::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mg = (0..len).map(|l| g[idx(l)]).sum::<E>() / n;
                        let mgy = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum::<E>() / n;
                        let r = inv_std[o * inner + i];
                        for l in 0..len {
                            d[idx(l)] = r * (g[idx(l)] - mg - y[idx(l)] * mgy);
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }
}

/// Joins tensors along `axis`; all other dimensions must agree.
pub fn concat<'t, E: Elem>(vars: &[Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
    let first = vars.first().ok_or(Error::EmptySequence("concat"))?;
    let tape = first.tape;
    let values: Vec<Arc<Tensor<E>>> = vars.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    check_axis("concat", &base, axis)?;
    for v in &values[1..] {
        let s = v.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", &base, s));
        }
    }
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = split_axis(&base, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &l) in values.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    Ok(tape.record(
        Tensor::new(&shape, out)?,
        vars,
        Box::new(move |g, needs| {
            let mut grads: Vec<Option<Vec<E>>> = lens
                .iter()
                .zip(needs)
                .map(|(&l, &need)| need.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gr, &l) in grads.iter_mut().zip(&lens) {
                    if let Some(gr) = gr {
                        gr.extend_from_slice(&g[pos..pos + l * inner]);
                    }
                    pos += l * inner;
                }
            }
            grads
        }),
    ))
}

pub(crate) fn transpose_data<E: Copy>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(a.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(a[r * cols + c]);
        }
    }
    out
}

pub fn sigmoid<E: Elem>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

pub fn gelu<E: Elem>(x: E) -> E {
    E::c(0.5) * x * (E::one() + (x * E::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}
