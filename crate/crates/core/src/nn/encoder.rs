use rand::Rng;

use super::{uniform, Ctx, Linear};
use crate::autodiff::{Elem, ParamId, ParamStore, Tensor, Var};
use crate::camera::Image;
use crate::error::{Error, Result};

/// Patchifying image encoder plus a learnable per-view embedding table:
/// `f_c = E(image_c) + gamma[c]`.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    pub patch_size: usize,
    pub feature_dim: usize,
    pub max_views: usize,
    embed: Linear,
    l1: Linear,
    l2: Linear,
    /// `[max_views, F]`.
    pub view_embedding: ParamId,
}

/// Flattens non-overlapping `s x s` patches: `[rows * cols, s * s * 3]`,
/// patches in row-major order, pixels row-major inside each patch.
pub fn extract_patches<E: Elem>(image: &Image, s: usize) -> Result<Tensor<E>> {
    let (h, w) = (image.height, image.width);
    if s == 0 || h % s != 0 || w % s != 0 || h == 0 || w == 0 {
        return Err(Error::PatchSize {
            height: h,
            width: w,
            patch: s,
        });
    }
    let (rows, cols) = (h / s, w / s);
    let mut out = Vec::with_capacity(h * w * 3);
    for pr in 0..rows {
        for pc in 0..cols {
            for r in pr * s..(pr + 1) * s {
                let start = (r * w + pc * s) * 3;
                out.extend(image.data[start..start + s * 3].iter().map(|&v| E::c(v)));
            }
        }
    }
    Tensor::new(&[rows * cols, s * s * 3], out)
}

impl PatchEncoder {
    /// Encoder weights go under `encoder.*`; the view table is `view_table_name`
    /// so that freezing `encoder.` leaves it trainable.
    pub fn new<E: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        view_table_name: &str,
        patch_size: usize,
        feature_dim: usize,
        max_views: usize,
    ) -> Self {
        let k = patch_size * patch_size * 3;
        let embed = Linear::new(store, rng, "encoder.embed", k, feature_dim, true);
        let l1 = Linear::new(store, rng, "encoder.l1", feature_dim, feature_dim, true);
        let l2 = Linear::new(store, rng, "encoder.l2", feature_dim, feature_dim, true);
        let view_embedding = store.add(view_table_name, uniform(rng, &[max_views, feature_dim], 0.05));
        Self {
            patch_size,
            feature_dim,
            max_views,
            embed,
            l1,
            l2,
            view_embedding,
        }
    }

    pub fn num_params(patch_size: usize, feature_dim: usize, max_views: usize) -> usize {
        let f = feature_dim;
        Linear::num_params(patch_size * patch_size * 3, f, true)
            + 2 * Linear::num_params(f, f, true)
            + max_views * f
    }

    /// Encodes views `0..images.len()`; each result is `[H/s, W/s, F]`.
    pub fn encode<'t, E: Elem>(&self, ctx: Ctx<'t, E>, images: &[&Image]) -> Result<Vec<Var<'t, E>>> {
        if images.len() > self.max_views {
            return Err(Error::TooManyViews {
                got: images.len(),
                max: self.max_views,
            });
        }
        let s = self.patch_size;
        let mut patches = Vec::new();
        let mut grids = Vec::with_capacity(images.len());
        for img in images {
            let p = extract_patches::<E>(img, s)?;
            grids.push((img.height / s, img.width / s));
            patches.extend_from_slice(p.data());
        }
        let k = s * s * 3;
        let n = patches.len() / k;
        let x = ctx.tape.constant(Tensor::new(&[n, k], patches)?);
        let z = self.embed.forward(ctx, x)?.gelu();
        let z = self.l2.forward(ctx, self.l1.forward(ctx, z)?.gelu())?;
        let gamma = ctx.p(self.view_embedding);
        let mut out = Vec::with_capacity(images.len());
        let mut row = 0;
        for (c, &(gh, gw)) in grids.iter().enumerate() {
            let np = gh * gw;
            let g = gamma
                .slice(0, c, c + 1)?
                .reshape(&[self.feature_dim])?
                .broadcast(&[np, self.feature_dim])?;
            let f = z.slice(0, row, row + np)?.add(g)?;
            out.push(f.reshape(&[gh, gw, self.feature_dim])?);
            row += np;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> (ParamStore<f64>, PatchEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = PatchEncoder::new(&mut store, &mut rng, "view_embedding", 4, 8, 5);
        (store, e)
    }

    fn textured(h: usize, w: usize) -> Image {
        let mut img = Image::new(h, w);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f64 / 100.0;
        }
        img
    }

    #[test]
    fn zero_image_zero_embedding_gives_zero_map() {
        let (mut store, e) = encoder();
        store.value_mut(e.view_embedding).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let tape = Tape::new();
        let img = Image::new(8, 12);
        let maps = e.encode(Ctx::new(&tape, &store), &[&img]).unwrap();
        assert_eq!(maps[0].shape(), vec![2, 3, 8]);
        assert!(maps[0].value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_images_differ_by_embedding() {
        let (store, e) = encoder();
        let tape = Tape::new();
        let img = textured(8, 8);
        let maps = e.encode(Ctx::new(&tape, &store), &[&img, &img, &img]).unwrap();
        let gamma = store.value(e.view_embedding).data();
        let (a, b) = (maps[0].value(), maps[2].value());
        for (idx, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let k = idx % 8;
            assert!(((x - y) - (gamma[k] - gamma[16 + k])).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_size_rejected() {
        let (store, e) = encoder();
        let tape = Tape::new();
        let img = Image::new(10, 8);
        let err = e.encode(Ctx::new(&tape, &store), &[&img]).unwrap_err();
        assert!(matches!(err, Error::PatchSize { patch: 4, .. }));
    }

    #[test]
    fn too_many_views() {
        let (store, e) = encoder();
        let tape = Tape::new();
        let img = Image::new(4, 4);
        let imgs = vec![&img; 6];
        assert!(matches!(
            e.encode(Ctx::new(&tape, &store), &imgs),
            Err(Error::TooManyViews { got: 6, max: 5 })
        ));
    }

    #[test]
    fn patch_layout() {
        let img = textured(4, 4);
        let p = extract_patches::<f64>(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 12]);
        // Second patch starts at row 0, col 2.
        assert_eq!(p.data()[12..15], img.data[6..9]);
        // Its second pixel row starts at row 1, col 2.
        assert_eq!(p.data()[18..21], img.data[18..21]);
    }
}
