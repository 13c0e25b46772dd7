//! Fused differentiable ops for quaternions, projection, feature lookup and
//! Fourier encoding.

// Index loops below mirror the Jacobian formulas entry by entry.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use super::tape::Var;
use super::tensor::{Elem, Tensor};
use crate::camera::{bilinear_footprint, Intrinsics};
use crate::error::{Error, Result};

/// Pixel value written for points behind the camera; always outside any map.
pub const INVALID_PIXEL: f64 = -1.0e6;

fn rows_of<E: Elem>(v: &Tensor<E>, op: &'static str, width: usize) -> Result<usize> {
    let s = v.shape();
    if s.len() != 2 || s[1] != width {
        return Err(Error::shape(op, s, &[0, width]));
    }
    Ok(s[0])
}

/// Number of encoded values per input scalar.
pub fn fourier_width(bands: usize, include_input: bool) -> usize {
    2 * (bands + 1) + usize::from(include_input)
}

impl<'t, E: Elem> Var<'t, E> {
    /// Row-wise `q / |q|` for `[N, 4]`; zero rows map to the identity quaternion.
    pub fn quat_normalize(self) -> Result<Var<'t, E>> {
        let q = self.value();
        let n = rows_of(&q, "quat_normalize", 4)?;
        let mut out = Vec::with_capacity(n * 4);
        let mut norms = Vec::with_capacity(n);
        for r in q.data().chunks_exact(4) {
            let norm = r.iter().map(|&v| v * v).sum::<E>().sqrt();
            norms.push(norm);
            if norm > E::zero() {
                out.extend(r.iter().map(|&v| v / norm));
            } else {
                out.extend([E::one(), E::zero(), E::zero(), E::zero()]);
            }
        }
        let y = Arc::new(Tensor::new(&[n, 4], out)?);
        let yc = Arc::clone(&y);
        Ok(self.tape.record_arc(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![E::zero(); n * 4];
                for r in 0..n {
                    if norms[r] == E::zero() {
                        continue;
                    }
                    let yr = &yc.data()[r * 4..r * 4 + 4];
                    let gr = &g[r * 4..r * 4 + 4];
                    let dot: E = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for k in 0..4 {
                        d[r * 4 + k] = (gr[k] - yr[k] * dot) / norms[r];
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Rotation matrices (row-major, `[N, 9]`) of unit quaternions `[N, 4]`.
    pub fn quat_to_rotmat(self) -> Result<Var<'t, E>> {
        let q = self.value();
        let n = rows_of(&q, "quat_to_rotmat", 4)?;
        let two = E::c(2.0);
        let one = E::one();
        let mut out = Vec::with_capacity(n * 9);
        for r in q.data().chunks_exact(4) {
            let (w, x, y, z) = (r[0], r[1], r[2], r[3]);
            out.extend([
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ]);
        }
        Ok(self.tape.record(
            Tensor::new(&[n, 9], out)?,
            &[self],
            Box::new(move |g, _| {
                let two = E::c(2.0);
                let four = E::c(4.0);
                let zero = E::zero();
                let mut d = Vec::with_capacity(n * 4);
                for (r, gr) in q.data().chunks_exact(4).zip(g.chunks_exact(9)) {
                    let (w, x, y, z) = (r[0], r[1], r[2], r[3]);
                    // Partial derivatives of each matrix entry wrt (w, x, y, z).
                    let jac: [[E; 4]; 9] = [
                        [zero, zero, -four * y, -four * z],
                        [-two * z, two * y, two * x, -two * w],
                        [two * y, two * z, two * w, two * x],
                        [two * z, two * y, two * x, two * w],
                        [zero, -four * x, zero, -four * z],
                        [-two * x, -two * w, two * z, two * y],
                        [-two * y, two * z, -two * w, two * x],
                        [two * x, two * w, two * z, two * y],
                        [zero, -four * x, -four * y, zero],
                    ];
                    for k in 0..4 {
                        d.push((0..9).map(|e| gr[e] * jac[e][k]).sum());
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Row-wise Hamilton product `self ⊗ other` of `[N, 4]` quaternions.
    pub fn quat_mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        let (a, b) = (self.value(), other.value());
        let n = rows_of(&a, "quat_mul", 4)?;
        if b.shape() != a.shape() {
            return Err(Error::shape("quat_mul", a.shape(), b.shape()));
        }
        let mut out = Vec::with_capacity(n * 4);
        for (qa, qb) in a.data().chunks_exact(4).zip(b.data().chunks_exact(4)) {
            let m = left_matrix(qa);
            for row in &m {
                out.push((0..4).map(|k| row[k] * qb[k]).sum());
            }
        }
        Ok(self.tape.record(
            Tensor::new(&[n, 4], out)?,
            &[self, other],
            Box::new(move |g, needs| {
                let mut ga = needs[0].then(|| Vec::with_capacity(n * 4));
                let mut gb = needs[1].then(|| Vec::with_capacity(n * 4));
                for ((qa, qb), gr) in a
                    .data()
                    .chunks_exact(4)
                    .zip(b.data().chunks_exact(4))
                    .zip(g.chunks_exact(4))
                {
                    if let Some(ga) = &mut ga {
                        let m = right_matrix(qb);
                        for k in 0..4 {
                            ga.push((0..4).map(|j| m[j][k] * gr[j]).sum());
                        }
                    }
                    if let Some(gb) = &mut gb {
                        let m = left_matrix(qa);
                        for k in 0..4 {
                            gb.push((0..4).map(|j| m[j][k] * gr[j]).sum());
                        }
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    /// Applies every pose to every point: rotations `[C, 9]` (row-major),
    /// translations `[C, 3]`, points `[P, 3]` -> `[C * P, 3]`, camera-major.
    pub fn rigid_transform(self, trans: Var<'t, E>, points: Var<'t, E>) -> Result<Var<'t, E>> {
        let (r, t, p) = (self.value(), trans.value(), points.value());
        let c = rows_of(&r, "rigid_transform", 9)?;
        if rows_of(&t, "rigid_transform", 3)? != c {
            return Err(Error::shape("rigid_transform", r.shape(), t.shape()));
        }
        let np = rows_of(&p, "rigid_transform", 3)?;
        let mut out = Vec::with_capacity(c * np * 3);
        for (rc, tc) in r.data().chunks_exact(9).zip(t.data().chunks_exact(3)) {
            for x in p.data().chunks_exact(3) {
                for i in 0..3 {
                    out.push(rc[3 * i] * x[0] + rc[3 * i + 1] * x[1] + rc[3 * i + 2] * x[2] + tc[i]);
                }
            }
        }
        Ok(self.tape.record(
            Tensor::new(&[c * np, 3], out)?,
            &[self, trans, points],
            Box::new(move |g, needs| {
                let mut gr = needs[0].then(|| vec![E::zero(); c * 9]);
                let mut gt = needs[1].then(|| vec![E::zero(); c * 3]);
                let mut gp = needs[2].then(|| vec![E::zero(); np * 3]);
                for (ci, rc) in r.data().chunks_exact(9).enumerate() {
                    for (pi, x) in p.data().chunks_exact(3).enumerate() {
                        let go = &g[(ci * np + pi) * 3..(ci * np + pi + 1) * 3];
                        if let Some(gr) = &mut gr {
                            for i in 0..3 {
                                for j in 0..3 {
                                    gr[ci * 9 + 3 * i + j] = gr[ci * 9 + 3 * i + j] + go[i] * x[j];
                                }
                            }
                        }
                        if let Some(gt) = &mut gt {
                            for i in 0..3 {
                                gt[ci * 3 + i] = gt[ci * 3 + i] + go[i];
                            }
                        }
                        if let Some(gp) = &mut gp {
                            for j in 0..3 {
                                let s = go[0] * rc[j] + go[1] * rc[3 + j] + go[2] * rc[6 + j];
                                gp[pi * 3 + j] = gp[pi * 3 + j] + s;
                            }
                        }
                    }
                }
                vec![gr, gt, gp]
            }),
        ))
    }

    /// Perspective projection of camera-frame points `[N, 3]` to pixels `[N, 2]`.
    /// Points with depth `<= min_depth` map to [`INVALID_PIXEL`] and pass no gradient.
    pub fn project_pinhole(self, k: &Intrinsics, min_depth: f64) -> Result<Var<'t, E>> {
        let p = self.value();
        let n = rows_of(&p, "project_pinhole", 3)?;
        let (fx, fy, cx, cy, s) = (E::c(k.fx), E::c(k.fy), E::c(k.cx), E::c(k.cy), E::c(k.skew));
        let min_depth = E::c(min_depth);
        let bad = E::c(INVALID_PIXEL);
        let mut out = Vec::with_capacity(n * 2);
        for r in p.data().chunks_exact(3) {
            if r[2] <= min_depth {
                out.extend([bad, bad]);
                continue;
            }
            let (u, v) = (r[0] / r[2], r[1] / r[2]);
            out.extend([fx * u + s * v + cx, fy * v + cy]);
        }
        Ok(self.tape.record(
            Tensor::new(&[n, 2], out)?,
            &[self],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(n * 3);
                for (r, gr) in p.data().chunks_exact(3).zip(g.chunks_exact(2)) {
                    if r[2] <= min_depth {
                        d.extend([E::zero(); 3]);
                        continue;
                    }
                    let iz = E::one() / r[2];
                    let (u, v) = (r[0] * iz, r[1] * iz);
                    // d(pixel)/d(u, v), then d(u, v)/d(x, y, z).
                    let gu = gr[0] * fx;
                    let gv = gr[0] * s + gr[1] * fy;
                    d.extend([gu * iz, gv * iz, -(gu * u + gv * v) * iz]);
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Bilinear lookup of `[H, W, F]` features at texel coordinates `[N, 2]`
    /// given as `(col, row)`. Returns `[N, F]` values and a `[N, 1]` validity
    /// mask; invalid rows are zero. Gradients flow to both the map and the
    /// coordinates.
    pub fn gather_bilinear(self, coords: Var<'t, E>) -> Result<(Var<'t, E>, Tensor<E>)> {
        let map = self.value();
        let c = coords.value();
        let ms = map.shape().to_vec();
        if ms.len() != 3 {
            return Err(Error::shape("gather_bilinear", &ms, c.shape()));
        }
        let n = rows_of(&c, "gather_bilinear", 2)?;
        let (h, w, f) = (ms[0], ms[1], ms[2]);
        let taps: Vec<_> = c
            .data()
            .chunks_exact(2)
            .map(|xy| bilinear_footprint(h, w, xy[0].f64(), xy[1].f64()))
            .collect();
        let mut out = vec![E::zero(); n * f];
        let mut valid = vec![E::zero(); n];
        let md = map.data();
        let texel = |row: usize, col: usize| (row * w + col) * f;
        for (i, tap) in taps.iter().enumerate() {
            let Some(fp) = tap else { continue };
            valid[i] = E::one();
            let (fx, fy) = (E::c(fp.fx), E::c(fp.fy));
            let ws = [
                (texel(fp.y0, fp.x0), (E::one() - fx) * (E::one() - fy)),
                (texel(fp.y0, fp.x1), fx * (E::one() - fy)),
                (texel(fp.y1, fp.x0), (E::one() - fx) * fy),
                (texel(fp.y1, fp.x1), fx * fy),
            ];
            let dst = &mut out[i * f..(i + 1) * f];
            for (base, wt) in ws {
                for (d, &m) in dst.iter_mut().zip(&md[base..base + f]) {
                    *d = *d + wt * m;
                }
            }
        }
        let var = self.tape.record(
            Tensor::new(&[n, f], out)?,
            &[self, coords],
            Box::new(move |g, needs| {
                let md = map.data();
                let texel = |row: usize, col: usize| (row * w + col) * f;
                let mut gmap = needs[0].then(|| vec![E::zero(); h * w * f]);
                let mut gc = needs[1].then(|| vec![E::zero(); n * 2]);
                for (i, tap) in taps.iter().enumerate() {
                    let Some(fp) = tap else { continue };
                    let gi = &g[i * f..(i + 1) * f];
                    let (fx, fy) = (E::c(fp.fx), E::c(fp.fy));
                    let (a, b, cc, dd) = (
                        texel(fp.y0, fp.x0),
                        texel(fp.y0, fp.x1),
                        texel(fp.y1, fp.x0),
                        texel(fp.y1, fp.x1),
                    );
                    if let Some(gm) = &mut gmap {
                        let ws = [
                            (a, (E::one() - fx) * (E::one() - fy)),
                            (b, fx * (E::one() - fy)),
                            (cc, (E::one() - fx) * fy),
                            (dd, fx * fy),
                        ];
                        for (base, wt) in ws {
                            for (dst, &gv) in gm[base..base + f].iter_mut().zip(gi) {
                                *dst = *dst + wt * gv;
                            }
                        }
                    }
                    if let Some(gc) = &mut gc {
                        // A clamped neighbour (x1 == x0) makes the slope along that axis zero.
                        let (mut sx, mut sy) = (E::zero(), E::zero());
                        for k in 0..f {
                            let (va, vb, vc, vd) = (md[a + k], md[b + k], md[cc + k], md[dd + k]);
                            let dx = (vb - va) * (E::one() - fy) + (vd - vc) * fy;
                            let dy = (vc - va) * (E::one() - fx) + (vd - vb) * fx;
                            sx = sx + gi[k] * dx;
                            sy = sy + gi[k] * dy;
                        }
                        gc[i * 2] = sx;
                        gc[i * 2 + 1] = sy;
                    }
                }
                vec![gmap, gc]
            }),
        );
        Ok((var, Tensor::new(&[n, 1], valid)?))
    }

    /// Per scalar `a`: `[a?, sin(2^0 a), cos(2^0 a), ..., sin(2^N a), cos(2^N a)]`.
    pub fn fourier_encode(self, bands: usize, include_input: bool) -> Result<Var<'t, E>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 {
            return Err(Error::shape("fourier_encode", s, &[0, 0]));
        }
        let (n, d) = (s[0], s[1]);
        let width = fourier_width(bands, include_input);
        let out = fourier_values(x.data(), bands, include_input);
        Ok(self.tape.record(
            Tensor::new(&[n, d * width], out)?,
            &[self],
            Box::new(move |g, _| {
                let grad = x
                    .data()
                    .iter()
                    .zip(g.chunks_exact(width))
                    .map(|(&a, gs)| {
                        let mut acc = E::zero();
                        let mut off = 0;
                        if include_input {
                            acc = gs[0];
                            off = 1;
                        }
                        let mut freq = E::one();
                        for kb in 0..=bands {
                            let (sn, cs) = (freq * a).sin_cos();
                            acc = acc + freq * (gs[off + 2 * kb] * cs - gs[off + 2 * kb + 1] * sn);
                            freq = freq + freq;
                        }
                        acc
                    })
                    .collect();
                vec![Some(grad)]
            }),
        ))
    }
}

/// Non-differentiable Fourier encoding of a flat slice.
pub fn fourier_values<E: Elem>(x: &[E], bands: usize, include_input: bool) -> Vec<E> {
    let mut out = Vec::with_capacity(x.len() * fourier_width(bands, include_input));
    for &a in x {
        if include_input {
            out.push(a);
        }
        let mut freq = E::one();
        for _ in 0..=bands {
            let (sn, cs) = (freq * a).sin_cos();
            out.push(sn);
            out.push(cs);
            freq = freq + freq;
        }
    }
    out
}

/// `M(a)` with `a ⊗ b = M(a) b`.
fn left_matrix<E: Elem>(a: &[E]) -> [[E; 4]; 4] {
    let (w, x, y, z) = (a[0], a[1], a[2], a[3]);
    [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]]
}

/// `N(b)` with `a ⊗ b = N(b) a`.
fn right_matrix<E: Elem>(b: &[E]) -> [[E; 4]; 4] {
    let (w, x, y, z) = (b[0], b[1], b[2], b[3]);
    [[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]]
}
