//! The two-stage pose network.
//!
//! The initialization stage encodes every view, pools it to one vector, mixes
//! the set with self-attention and regresses a pose per view. The refinement
//! stage then repeats: estimate a capture volume from the current poses,
//! sample probe points in it, project them into every view, gather features,
//! reduce them per point, attend across cameras, and let a recurrent cell and
//! a small head emit a multiplicative rotation update and an additive
//! translation update.
//!
//! Probe points (and the capture volume they come from) are constants of the
//! graph; gradients reach the poses through the projection, the encoded pose
//! inputs and the update chain.

mod config;

pub use config::ModelConfig;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, Elem, ParamStore, Tensor, Var};
use crate::camera::{estimate_capture_volume, sample_ball, CameraView, CaptureVolume, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion};
use crate::loss::PoseVars;
use crate::nn::{AttentionBlock, Ctx, FourierEncoding, Linear, LstmCell, LstmState, Mlp, PatchEncoder};

/// Name of the per-view embedding table (kept outside `encoder.` so freezing
/// the encoder leaves it trainable).
pub const VIEW_EMBEDDING: &str = "init.view_embedding";

#[derive(Debug, Clone)]
pub struct InitStage {
    pub encoder: PatchEncoder,
    pub attention: AttentionBlock,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub enum Recurrent {
    Lstm(LstmCell),
    /// Stateless replacement: `gelu(x W + b)`.
    Mlp(Linear),
}

#[derive(Debug, Clone)]
pub struct RefineStage {
    pub reduce: Linear,
    pub attention: AttentionBlock,
    pub recurrent: Recurrent,
    /// Two layers; the last starts at zero so the first updates are identities.
    pub head: Mlp,
}

/// Poses per iteration, `0..=T`, with a flag raised if any capture volume fell back.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrajectory {
    pub iterates: Vec<Vec<Pose>>,
    pub degenerate: bool,
}

impl PoseTrajectory {
    pub fn initial(&self) -> &[Pose] {
        &self.iterates[0]
    }

    pub fn last(&self) -> &[Pose] {
        self.iterates.last().expect("trajectory has iteration 0")
    }
}

/// Output of a full forward pass on a tape.
#[derive(Debug)]
pub struct ForwardOutput<'t, E: Elem> {
    pub iterates: Vec<PoseVars<'t, E>>,
    /// Probe points of each refinement iteration.
    pub points: Vec<Vec<Vector3<f64>>>,
    pub degenerate: bool,
}

impl<E: Elem> ForwardOutput<'_, E> {
    pub fn trajectory(&self) -> Result<PoseTrajectory> {
        let iterates = self
            .iterates
            .iter()
            .map(|it| pose_values(*it))
            .collect::<Result<_>>()?;
        Ok(PoseTrajectory {
            iterates,
            degenerate: self.degenerate,
        })
    }
}

/// Reads poses off the tape.
pub fn pose_values<E: Elem>(p: PoseVars<'_, E>) -> Result<Vec<Pose>> {
    let q = p.quats.value().to_f64_vec();
    let t = p.trans.value().to_f64_vec();
    q.chunks_exact(4)
        .zip(t.chunks_exact(3))
        .map(|(q, t)| {
            Pose::new(Quaternion::new(q[0], q[1], q[2], q[3]), Vector3::new(t[0], t[1], t[2])).normalized()
        })
        .collect()
}

/// Puts fixed poses on the tape as constants.
pub fn pose_constants<'t, E: Elem>(ctx: Ctx<'t, E>, poses: &[Pose]) -> PoseVars<'t, E> {
    let c = poses.len();
    let q = poses.iter().flat_map(|p| p.rotation.to_array()).map(E::c).collect();
    let t = poses.iter().flat_map(|p| p.translation.iter().copied().collect::<Vec<_>>()).map(E::c).collect();
    PoseVars {
        quats: ctx.tape.constant(Tensor::new(&[c, 4], q).expect("4 per pose")),
        trans: ctx.tape.constant(Tensor::new(&[c, 3], t).expect("3 per pose")),
    }
}

/// Where refinement gets its probe points.
pub enum PointSource<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    /// One set per refinement iteration, e.g. recorded by an earlier pass.
    Replay(&'a [Vec<Vector3<f64>>]),
}

#[derive(Debug, Clone)]
pub struct SparsePose {
    pub config: ModelConfig,
    pub init: InitStage,
    pub refine: RefineStage,
}

impl SparsePose {
    /// Registers all parameters in `store` with seeded initialization.
    pub fn new<E: Elem>(config: ModelConfig, store: &mut ParamStore<E>, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let f = c.feature_dim;
        let encoder = PatchEncoder::new(store, rng, VIEW_EMBEDDING, c.patch_size, f, c.max_views);
        let attention = AttentionBlock::new(store, rng, "init.attention", c.init_heads, f, f, c.init_ff_hidden);
        let mut dims = vec![f];
        dims.extend(std::iter::repeat_n(c.init_mlp_hidden, c.init_mlp_layers));
        dims.push(7);
        let head = Mlp::new(store, rng, "init.head", &dims);

        let v = c.refine_vector_dim();
        let reduce = Linear::new(store, rng, "refine.reduce", c.featurization_dim(), c.refine_dim, true);
        let r_att = AttentionBlock::new(
            store,
            rng,
            "refine.attention",
            c.refine_heads,
            v,
            c.refine_attn_dim,
            c.refine_ff_hidden,
        );
        let recurrent = if c.use_lstm {
            Recurrent::Lstm(LstmCell::new(store, rng, "refine.lstm", v, c.lstm_hidden))
        } else {
            Recurrent::Mlp(Linear::new(store, rng, "refine.mlp", v, c.lstm_hidden, true))
        };
        let r_head = Mlp::new(store, rng, "refine.head", &[c.lstm_hidden, c.pose_mlp_hidden, 7]);
        let last = r_head.last();
        store.value_mut(last.weight).data_mut().fill(E::zero());
        if let Some(b) = last.bias {
            store.value_mut(b).data_mut().fill(E::zero());
        }
        if c.freeze_encoder {
            store.set_trainable_prefix("encoder.", false);
        }
        Ok(Self {
            config,
            init: InitStage {
                encoder,
                attention,
                head,
            },
            refine: RefineStage {
                reduce,
                attention: r_att,
                recurrent,
                head: r_head,
            },
        })
    }

    /// Closed-form count of learnable scalars (frozen encoder weights excluded).
    pub fn count_parameters(config: &ModelConfig) -> usize {
        let c = config;
        let f = c.feature_dim;
        let k = c.patch_size * c.patch_size * 3;
        let encoder = if c.freeze_encoder {
            0
        } else {
            Linear::num_params(k, f, true) + 2 * Linear::num_params(f, f, true)
        };
        let mut dims = vec![f];
        dims.extend(std::iter::repeat_n(c.init_mlp_hidden, c.init_mlp_layers));
        dims.push(7);
        let v = c.refine_vector_dim();
        let recurrent = if c.use_lstm {
            LstmCell::num_params(v, c.lstm_hidden)
        } else {
            Linear::num_params(v, c.lstm_hidden, true)
        };
        encoder
            + c.max_views * f
            + AttentionBlock::num_params(f, f, c.init_ff_hidden)
            + Mlp::num_params(&dims)
            + Linear::num_params(c.featurization_dim(), c.refine_dim, true)
            + AttentionBlock::num_params(v, c.refine_attn_dim, c.refine_ff_hidden)
            + recurrent
            + Mlp::num_params(&[c.lstm_hidden, c.pose_mlp_hidden, 7])
    }

    /// Per-view maps the refinement stage samples: encoder maps (`[h, w, F]`),
    /// or raw images when sampling colours.
    fn sampled_maps<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
        encoded: &[Var<'t, E>],
    ) -> Result<Vec<Var<'t, E>>> {
        if !self.config.rgb_features {
            return Ok(encoded.to_vec());
        }
        views
            .iter()
            .map(|v| {
                let img = &v.image;
                let data = img.data.iter().map(|&x| E::c(x)).collect();
                Ok(ctx.tape.constant(Tensor::new(&[img.height, img.width, 3], data)?))
            })
            .collect()
    }

    /// Iteration-0 poses (normalized quaternions) and the encoder maps.
    pub fn init_forward<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
    ) -> Result<(PoseVars<'t, E>, Vec<Var<'t, E>>)> {
        if views.is_empty() {
            return Err(Error::EmptySequence("views"));
        }
        let images: Vec<_> = views.iter().map(|v| &v.image).collect();
        let maps = self.init.encoder.encode(ctx, &images)?;
        let f = self.config.feature_dim;
        let pooled = maps
            .iter()
            .map(|m| {
                let s = m.shape();
                m.reshape(&[s[0] * s[1], f])?.mean_axis(0)?.reshape(&[1, f])
            })
            .collect::<Result<Vec<_>>>()?;
        let feats = concat(&pooled, 0)?;
        let mixed = self.init.attention.forward(ctx, feats)?.add(feats)?;
        let raw = self.init.head.forward(ctx, mixed)?;
        let poses = PoseVars {
            quats: raw.slice(1, 0, 4)?.quat_normalize()?,
            trans: raw.slice(1, 4, 7)?,
        };
        Ok((poses, maps))
    }

    /// Per-camera refinement vectors `[C, P * refine_dim]` for one set of probe points.
    pub fn featurize<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
        maps: &[Var<'t, E>],
        poses: PoseVars<'t, E>,
        points: &[Vector3<f64>],
    ) -> Result<Var<'t, E>> {
        let full = self.point_features(ctx, views, maps, poses, points)?;
        self.refine
            .reduce
            .forward(ctx, full)?
            .reshape(&[views.len(), self.config.refine_vector_dim()])
    }

    /// Unreduced per camera and point features `[C * P, featurization_dim]`,
    /// camera-major: sampled map values, then encoded point, quaternion and
    /// translation. Points that miss a view contribute zero samples.
    pub fn point_features<'t, E: Elem>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
        maps: &[Var<'t, E>],
        poses: PoseVars<'t, E>,
        points: &[Vector3<f64>],
    ) -> Result<Var<'t, E>> {
        let cfg = &self.config;
        let c = views.len();
        let p = points.len();
        if maps.len() != c {
            return Err(Error::LengthMismatch {
                what: "feature maps vs views",
                left: maps.len(),
                right: c,
            });
        }
        if p != cfg.num_points {
            return Err(Error::LengthMismatch {
                what: "probe points vs configured count",
                left: p,
                right: cfg.num_points,
            });
        }
        let pts_data = points.iter().flat_map(|v| [v.x, v.y, v.z]).map(E::c).collect();
        let pts = ctx.tape.constant(Tensor::new(&[p, 3], pts_data)?);
        let cam_pts = poses.quats.quat_to_rotmat()?.rigid_transform(poses.trans, pts)?;
        let stride = cfg.sampled_stride() as f64;
        let offset = E::c(-(stride - 1.0) / 2.0);
        let mut sampled = Vec::with_capacity(c);
        for (ci, (view, map)) in views.iter().zip(maps).enumerate() {
            let pix = cam_pts
                .slice(0, ci * p, (ci + 1) * p)?
                .project_pinhole(&view.intrinsics, MIN_DEPTH)?;
            let mut texel = pix.add_scalar(offset).scale(E::c(1.0 / stride));
            if cfg.detach_sample_coords {
                texel = texel.detach();
            }
            sampled.push(map.gather_bilinear(texel)?.0);
        }
        let sampled = concat(&sampled, 0)?;

        let enc = FourierEncoding::new(cfg.fourier_bands, cfg.fourier_include_input);
        let encode = |x: Var<'t, E>| -> Result<Var<'t, E>> {
            if cfg.positional_encoding {
                enc.forward(x)
            } else {
                Ok(x)
            }
        };
        let gp = encode(pts)?;
        let gp_w = gp.shape()[1];
        let gp = gp.broadcast(&[c, p, gp_w])?.reshape(&[c * p, gp_w])?;
        let gq = encode(poses.quats)?.repeat_rows(p)?;
        let gt = encode(poses.trans)?.repeat_rows(p)?;
        concat(&[sampled, gp, gq, gt], 1)
    }

    /// Runs `T` refinement iterations from `init`.
    pub fn refine_forward<'t, E: Elem, R: Rng + ?Sized>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
        maps: &[Var<'t, E>],
        init: PoseVars<'t, E>,
        mut source: PointSource<'_, R>,
    ) -> Result<ForwardOutput<'t, E>> {
        let cfg = &self.config;
        let c = views.len();
        let maps = self.sampled_maps(ctx, views, maps)?;
        let mut iterates = vec![init];
        let mut all_points: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(cfg.iterations);
        let mut degenerate = false;
        let mut state: Option<LstmState<'t, E>> = match &self.refine.recurrent {
            Recurrent::Lstm(cell) => Some(cell.zero_state(ctx, c)),
            Recurrent::Mlp(_) => None,
        };
        let mut cur = init;
        let identity = ctx
            .tape
            .constant(Tensor::from_f64(&[4], &[1.0, 0.0, 0.0, 0.0])?)
            .broadcast(&[c, 4])?;
        for it in 0..cfg.iterations {
            let points = match &mut source {
                PointSource::Replay(sets) => sets
                    .get(it)
                    .cloned()
                    .ok_or(Error::EmptySequence("replayed probe points"))?,
                PointSource::Sample(rng) => {
                    if it > 0 && !cfg.resample_points {
                        all_points[0].clone()
                    } else {
                        let vol = self.capture_volume(&pose_values(cur)?)?;
                        degenerate |= vol.degenerate;
                        sample_ball(&vol, cfg.num_points, *rng)
                    }
                }
            };
            let feats = self.featurize(ctx, views, &maps, cur, &points)?;
            all_points.push(points);
            let mixed = self.refine.attention.forward(ctx, feats)?.add(feats)?;
            let hidden = match (&self.refine.recurrent, state) {
                (Recurrent::Lstm(cell), Some(s)) => {
                    let next = cell.step(ctx, mixed, s)?;
                    state = Some(next);
                    next.h
                }
                (Recurrent::Mlp(layer), _) => layer.forward(ctx, mixed)?.gelu(),
                (Recurrent::Lstm(_), None) => unreachable!("LSTM state initialized above"),
            };
            let raw = self.refine.head.forward(ctx, hidden)?;
            let dq = raw.slice(1, 0, 4)?.add(identity)?.quat_normalize()?;
            let quats = cur.quats.quat_mul(dq)?.quat_normalize()?;
            let trans = cur.trans.add(raw.slice(1, 4, 7)?)?;
            cur = PoseVars { quats, trans };
            iterates.push(cur);
        }
        Ok(ForwardOutput {
            iterates,
            points: all_points,
            degenerate,
        })
    }

    fn capture_volume(&self, poses: &[Pose]) -> Result<CaptureVolume> {
        let vol = estimate_capture_volume(poses)?;
        if vol.radius.is_finite() && vol.center.iter().all(|v| v.is_finite()) {
            Ok(vol)
        } else {
            Ok(CaptureVolume {
                center: Vector3::zeros(),
                radius: 1.0,
                degenerate: true,
            })
        }
    }

    /// Both stages end to end.
    pub fn forward<'t, E: Elem, R: Rng + ?Sized>(
        &self,
        ctx: Ctx<'t, E>,
        views: &[CameraView],
        source: PointSource<'_, R>,
    ) -> Result<ForwardOutput<'t, E>> {
        let (init, maps) = self.init_forward(ctx, views)?;
        self.refine_forward(ctx, views, &maps, init, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::camera::{Image, Intrinsics};

    fn views(c: usize, size: usize) -> Vec<CameraView> {
        (0..c)
            .map(|i| {
                let angle = i as f64 * 0.7;
                let eye = Vector3::new(3.0 * angle.cos(), 3.0 * angle.sin(), 1.0);
                let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::z());
                let mut image = Image::new(size, size);
                for (k, v) in image.data.iter_mut().enumerate() {
                    *v = (((k * 7 + i * 13) % 29) as f64) / 28.0;
                }
                CameraView {
                    intrinsics: Intrinsics::from_fov(size, 50.0),
                    pose,
                    image,
                }
            })
            .collect()
    }

    fn tiny(seed: u64) -> (ParamStore<f64>, SparsePose) {
        let mut store = ParamStore::new();
        let model = SparsePose::new(ModelConfig::tiny(), &mut store, seed).unwrap();
        (store, model)
    }

    #[test]
    fn parameter_count_matches_store() {
        for cfg in [ModelConfig::tiny(), ModelConfig::smoke()] {
            let mut store = ParamStore::<f32>::new();
            SparsePose::new(cfg.clone(), &mut store, 0).unwrap();
            assert_eq!(store.num_trainable(), SparsePose::count_parameters(&cfg));
            let frozen = ModelConfig {
                freeze_encoder: true,
                ..cfg.clone()
            };
            let mut store = ParamStore::<f32>::new();
            SparsePose::new(frozen.clone(), &mut store, 0).unwrap();
            assert_eq!(store.num_trainable(), SparsePose::count_parameters(&frozen));
            assert!(store.num_trainable() < store.num_scalars());
        }
    }

    #[test]
    fn unit_quaternions_and_lengths() {
        let (store, model) = tiny(1);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(ctx, &views(3, 16), PointSource::Sample(&mut rng)).unwrap();
        let traj = out.trajectory().unwrap();
        assert_eq!(traj.iterates.len(), 3);
        for it in &out.iterates {
            for q in it.quats.value().data().chunks(4) {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_head_keeps_trajectory_constant() {
        let (store, model) = tiny(2);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(ctx, &views(4, 16), PointSource::Sample(&mut rng)).unwrap();
        let first = out.iterates[0];
        for it in &out.iterates[1..] {
            for (a, b) in it.quats.value().data().iter().zip(first.quats.value().data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(it.trans.value().data(), first.trans.value().data());
        }
    }

    #[test]
    fn no_iterations_returns_init() {
        let mut store = ParamStore::<f64>::new();
        let cfg = ModelConfig {
            iterations: 0,
            ..ModelConfig::tiny()
        };
        let model = SparsePose::new(cfg, &mut store, 0).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(ctx, &views(3, 16), PointSource::Sample(&mut rng)).unwrap();
        assert_eq!(out.iterates.len(), 1);
        assert!(out.points.is_empty());
    }

    #[test]
    fn refinement_vector_width() {
        let (store, model) = tiny(3);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let v = views(3, 16);
        let (init, maps) = model.init_forward(ctx, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vol = estimate_capture_volume(&pose_values(init).unwrap()).unwrap();
        let pts = sample_ball(&vol, 16, &mut rng);
        let feats = model.featurize(ctx, &v, &maps, init, &pts).unwrap();
        assert_eq!(feats.shape(), vec![3, 16 * 32]);
    }

    #[test]
    fn points_behind_every_camera_leave_only_encodings() {
        let (store, model) = tiny(4);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let v = views(3, 16);
        let (_, maps) = model.init_forward(ctx, &v).unwrap();
        let gt: Vec<Pose> = v.iter().map(|x| x.pose).collect();
        let poses = pose_constants(ctx, &gt);
        // Every camera looks at the origin from 3 units away, so points 10
        // units behind each camera centre along the viewing axis are hidden.
        let mut pts = Vec::new();
        for (i, p) in gt.iter().cycle().take(16).enumerate() {
            let back = p.center() * (1.0 + 3.0 + 0.01 * i as f64);
            pts.push(back);
        }
        let hidden_everywhere = pts
            .iter()
            .all(|x| gt.iter().all(|p| p.transform_point(x).z <= 0.0));
        assert!(hidden_everywhere);
        let feats = model.point_features(ctx, &v, &maps, poses, &pts).unwrap().value();
        let (f, width) = (model.config.sampled_channels(), model.config.featurization_dim());
        for row in feats.data().chunks(width) {
            assert!(row[..f].iter().all(|&x| x == 0.0));
            assert!(row[f..].iter().any(|&x| x != 0.0));
        }
        let feats = model.featurize(ctx, &v, &maps, poses, &pts).unwrap();
        assert_eq!(feats.shape(), vec![3, 16 * 32]);
        assert!(feats.value().data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn too_many_views() {
        let (store, model) = tiny(5);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = model
            .forward(ctx, &views(5, 16), PointSource::Sample(&mut rng))
            .unwrap_err();
        assert!(matches!(err, Error::TooManyViews { got: 5, max: 4 }));
    }

    #[test]
    fn deterministic_and_replayable() {
        let (store, model) = tiny(6);
        let v = views(3, 16);
        let run = |source_seed: u64| {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            let mut rng = ChaCha8Rng::seed_from_u64(source_seed);
            let out = model.forward(ctx, &v, PointSource::Sample(&mut rng)).unwrap();
            (out.trajectory().unwrap(), out.points.clone())
        };
        let (a, pts) = run(9);
        let (b, _) = run(9);
        assert_eq!(a, b);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let replay = model
            .forward::<f64, ChaCha8Rng>(ctx, &v, PointSource::Replay(&pts))
            .unwrap();
        assert_eq!(replay.trajectory().unwrap(), a);
    }

    #[test]
    fn loss_reaches_init_parameters() {
        let (mut store, model) = tiny(7);
        // Un-zero the refinement head so the refinement path is exercised too.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for l in &model.refine.head.layers {
            store.value_mut(l.weight).data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-0.3..0.3));
        }
        let v = views(3, 16);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let out = model.forward(ctx, &v, PointSource::Sample(&mut rng)).unwrap();
        let gt: Vec<Pose> = crate::geometry::canonicalize_to_first(&v.iter().map(|x| x.pose).collect::<Vec<_>>()).unwrap();
        let loss = crate::loss::total_loss_var(
            &out.iterates,
            &gt,
            &crate::loss::RobustPenaltyConfig::default(),
            crate::loss::Alpha::Fixed(1.0),
            crate::loss::Supervision::Ends,
        )
        .unwrap();
        let grads = tape.backward(loss.total).unwrap();
        let g = grads.param(model.init.head.layers[0].weight).unwrap();
        assert!(g.data().iter().any(|&x| x != 0.0));
        let g = grads.param(model.refine.head.layers[0].weight).unwrap();
        assert!(g.data().iter().any(|&x| x != 0.0));
    }
}
