//! Central finite-difference checks of tape gradients, in f64.
//!
//! A vector-valued function is reduced to a scalar with fixed random weights,
//! `L = sum(w * f(x))`, so every output component contributes. The error of
//! one entry is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, ParamStore, Tape, Tensor, Var};
use crate::camera::{CameraView, Image, Intrinsics};
use crate::error::Result;
use crate::geometry::{canonicalize_to_first, Pose};
use crate::loss::{
    robust_penalty_sq_var, rotation_loss_var, total_loss_var, translation_loss_var, Alpha, RobustPenaltyConfig,
    Supervision,
};
use crate::nn::{AttentionBlock, Ctx, Linear, LstmCell, Mlp, PatchEncoder};
use crate::posenet::{ModelConfig, PointSource, SparsePose};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
    /// Entries probed per tensor; smaller tensors are probed fully.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
            tolerance: 1e-4,
            max_entries: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn weights_for(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn probe_indices(n: usize, cfg: &GradCheckConfig, salt: u64) -> Vec<usize> {
    if n <= cfg.max_entries {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(salt));
    let mut idx = sample(&mut rng, n, cfg.max_entries).into_vec();
    idx.sort_unstable();
    idx
}

fn scalarize<'t>(out: Var<'t, f64>, w: &Tensor<f64>) -> Result<Var<'t, f64>> {
    if out.numel() == 1 {
        return Ok(out.reshape(&[])?.scale(w.data()[0]));
    }
    let wv = out.tape().constant(w.clone());
    Ok(out.mul(wv)?.sum())
}

/// Checks the gradient of `f` with respect to each of `inputs`.
pub fn check_inputs<F>(cfg: &GradCheckConfig, name: &str, inputs: &[Tensor<f64>], f: F) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    check_layer_inputs(cfg, name, &ParamStore::new(), inputs, |ctx: Ctx<'_, f64>, x: &[Var<'_, f64>]| {
        f(ctx.tape, x)
    })
}

/// Like [`check_inputs`], for a function that also reads parameters (held fixed).
pub fn check_layer_inputs<F>(
    cfg: &GradCheckConfig,
    name: &str,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
) -> Result<CheckResult>
where
    F: for<'t> Fn(Ctx<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>], w: Option<&Tensor<f64>>| -> Result<(f64, Vec<usize>)> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(Ctx::new(&tape, store), &vars)?;
        let shape = out.shape();
        let v = match w {
            Some(w) => scalarize(out, w)?.value().item(),
            None => 0.0,
        };
        Ok((v, shape))
    };
    let (_, out_shape) = eval(inputs, None)?;
    let w = weights_for(&out_shape, cfg.seed);

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let loss = scalarize(f(Ctx::new(&tape, store), &vars)?, &w)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            grads
                .wrt(*v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; x.numel()])
        })
        .collect();

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (i, x) in inputs.iter().enumerate() {
        for j in probe_indices(x.numel(), cfg, i as u64) {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += cfg.step;
            let (fp, _) = eval(&xs, Some(&w))?;
            xs[i].data_mut()[j] -= 2.0 * cfg.step;
            let (fm, _) = eval(&xs, Some(&w))?;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic[i][j], numeric, cfg.floor));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        entries,
        tolerance: cfg.tolerance,
    })
}

/// Checks the gradient of `f` with respect to every trainable parameter in `store`.
pub fn check_params<F>(cfg: &GradCheckConfig, name: &str, store: &ParamStore<f64>, f: F) -> Result<CheckResult>
where
    F: for<'t> Fn(Ctx<'t, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |s: &ParamStore<f64>, w: Option<&Tensor<f64>>| -> Result<(f64, Vec<usize>)> {
        let tape = Tape::new();
        let out = f(Ctx::new(&tape, s))?;
        let shape = out.shape();
        let v = match w {
            Some(w) => scalarize(out, w)?.value().item(),
            None => 0.0,
        };
        Ok((v, shape))
    };
    let (_, out_shape) = eval(store, None)?;
    let w = weights_for(&out_shape, cfg.seed);
    let tape = Tape::new();
    let loss = scalarize(f(Ctx::new(&tape, store))?, &w)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let analytic = grads.param(id).map(|g| g.data().to_vec());
        for j in probe_indices(p.value.numel(), cfg, id.index() as u64) {
            let mut s = store.clone();
            s.value_mut(id).data_mut()[j] += cfg.step;
            let (fp, _) = eval(&s, Some(&w))?;
            s.value_mut(id).data_mut()[j] -= 2.0 * cfg.step;
            let (fm, _) = eval(&s, Some(&w))?;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic.as_ref().map_or(0.0, |g| g[j]);
            worst = worst.max(relative_error(a, numeric, cfg.floor));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        entries,
        tolerance: cfg.tolerance,
    })
}

/// Overwrites every parameter with `U(-scale, scale)` noise.
pub fn randomize_params(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        store
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// `c` random-texture views from a ring of cameras looking at the origin.
pub fn tiny_scene(c: usize, size: usize, seed: u64) -> (Vec<CameraView>, Vec<Pose>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views: Vec<CameraView> = (0..c)
        .map(|i| {
            let az = i as f64 * 2.1 + rng.gen_range(-0.2..0.2);
            let eye = Vector3::new(3.0 * az.cos(), 3.0 * az.sin(), 1.2);
            let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::z());
            let mut image = Image::new(size, size);
            for v in image.data.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
            CameraView {
                intrinsics: Intrinsics::from_fov(size, 50.0),
                pose,
                image,
            }
        })
        .collect();
    let gt = canonicalize_to_first(&views.iter().map(|v| v.pose).collect::<Vec<_>>()).expect("non-empty");
    (views, gt)
}

type Case = (&'static str, Vec<Tensor<f64>>);

/// Every differentiable op, layer and loss plus the tiny end-to-end model.
#[allow(clippy::useless_vec)] // `op!` moves its inputs into the checked closure.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = &mut rng;
    let mut results = Vec::new();

    macro_rules! op {
        ($name:expr, $inputs:expr, |$t:ident, $x:ident| $body:expr) => {
            results.push(check_inputs(cfg, $name, &$inputs, |$t: &Tape<f64>, $x: &[Var<'_, f64>]| {
                let _ = $t;
                $body
            })?);
        };
    }

    let a: Case = ("a", vec![rand_tensor(r, &[3, 4], -1.5, 1.5), rand_tensor(r, &[3, 4], -1.5, 1.5)]);
    let pos = vec![rand_tensor(r, &[3, 4], 0.3, 2.0)];
    op!("add", a.1, |t, x| x[0].add(x[1]));
    op!("sub", a.1, |t, x| x[0].sub(x[1]));
    op!("mul", a.1, |t, x| x[0].mul(x[1]));
    op!("div", vec![a.1[0].clone(), pos[0].clone()], |t, x| x[0].div(x[1]));
    op!("neg_scale_shift", a.1, |t, x| Ok(x[0].neg().scale(1.7).add_scalar(0.3)));
    op!("square", a.1, |t, x| Ok(x[0].square()));
    op!("powf", pos, |t, x| Ok(x[0].powf(1.3)));
    op!("exp", a.1, |t, x| Ok(x[0].exp()));
    op!("log", pos, |t, x| Ok(x[0].log()));
    op!("sqrt", pos, |t, x| Ok(x[0].sqrt()));
    op!("tanh", a.1, |t, x| Ok(x[0].tanh()));
    op!("sigmoid", a.1, |t, x| Ok(x[0].sigmoid()));
    op!("gelu", a.1, |t, x| Ok(x[0].gelu()));
    op!("sin", a.1, |t, x| Ok(x[0].sin()));
    op!("cos", a.1, |t, x| Ok(x[0].cos()));
    op!(
        "matmul",
        vec![rand_tensor(r, &[3, 5], -1.0, 1.0), rand_tensor(r, &[5, 2], -1.0, 1.0)],
        |t, x| x[0].matmul(x[1])
    );
    op!("transpose", a.1, |t, x| x[0].transpose());
    op!("reshape", a.1, |t, x| x[0].reshape(&[2, 6]));
    op!("broadcast", vec![rand_tensor(r, &[4], -1.0, 1.0)], |t, x| x[0].broadcast(&[2, 3, 4]));
    op!("sum", a.1, |t, x| Ok(x[0].sum()));
    op!("mean", a.1, |t, x| Ok(x[0].mean()));
    op!("sum_axis", vec![rand_tensor(r, &[2, 3, 4], -1.0, 1.0)], |t, x| x[0].sum_axis(1));
    op!("mean_axis", a.1, |t, x| x[0].mean_axis(0));
    op!("slice", a.1, |t, x| x[0].slice(1, 1, 3));
    op!("softmax", a.1, |t, x| x[0].softmax(1));
    op!("layer_norm", a.1, |t, x| x[0].layer_norm(1, 1e-5));
    op!("concat", a.1, |t, x| concat(&[x[0], x[1]], 1));
    op!("repeat_rows", a.1, |t, x| x[0].repeat_rows(3));

    let quats = vec![rand_tensor(r, &[4, 4], -1.0, 1.0), rand_tensor(r, &[4, 4], -1.0, 1.0)];
    op!("quat_normalize", quats, |t, x| x[0].quat_normalize());
    op!("quat_to_rotmat", quats, |t, x| x[0].quat_normalize()?.quat_to_rotmat());
    op!("quat_mul", quats, |t, x| x[0].quat_mul(x[1]));
    let k = Intrinsics::new(40.0, 42.0, 15.5, 16.5)?;
    let mut cam = rand_tensor(r, &[5, 3], -1.0, 1.0);
    for row in cam.data_mut().chunks_mut(3) {
        row[2] = row[2].abs() + 1.5;
    }
    op!("project_pinhole", vec![cam], |t, x| x[0].project_pinhole(&k, 1e-6));
    op!(
        "rigid_transform",
        vec![rand_tensor(r, &[2, 9], -1.0, 1.0), rand_tensor(r, &[2, 3], -1.0, 1.0), rand_tensor(r, &[4, 3], -1.0, 1.0)],
        |t, x| x[0].rigid_transform(x[1], x[2])
    );
    // Coordinates kept away from texel centres, where the slope has a kink.
    let mut coords = rand_tensor(r, &[6, 2], 0.0, 3.0);
    for v in coords.data_mut() {
        *v = v.floor() + 0.15 + 0.7 * v.fract();
    }
    op!(
        "gather_bilinear",
        vec![rand_tensor(r, &[4, 5, 3], -1.0, 1.0), coords],
        |t, x| Ok(x[0].gather_bilinear(x[1])?.0)
    );
    op!("fourier_encode", vec![rand_tensor(r, &[3, 2], -1.0, 1.0)], |t, x| x[0].fourier_encode(3, true));

    // Layers, with respect to inputs and parameters.
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, r, "lin", 5, 4, true);
    let mlp = Mlp::new(&mut store, r, "mlp", &[5, 6, 6, 3]);
    let att = AttentionBlock::new(&mut store, r, "att", 2, 6, 4, 8);
    let lstm = LstmCell::new(&mut store, r, "lstm", 5, 3);
    let enc = PatchEncoder::new(&mut store, r, "view", 2, 4, 3);
    randomize_params(&mut store, r, 0.5);
    let x5 = rand_tensor(r, &[3, 5], -1.0, 1.0);
    let x6 = rand_tensor(r, &[4, 6], -1.0, 1.0);
    let layer_inputs: [(&str, Tensor<f64>); 4] = [
        ("linear", x5.clone()),
        ("mlp", x5.clone()),
        ("attention_block", x6),
        ("lstm_two_steps", x5),
    ];
    let mut images = Vec::new();
    for _ in 0..2 {
        let mut img = Image::new(4, 6);
        img.data.iter_mut().for_each(|v| *v = r.gen_range(0.0..1.0));
        images.push(img);
    }
    for (name, input) in layer_inputs.iter() {
        let name = *name;
        let layers = (&lin, &mlp, &att, &lstm);
        results.push(check_layer_inputs(
            cfg,
            &format!("{name}/input"),
            &store,
            std::slice::from_ref(input),
            |ctx: Ctx<'_, f64>, x: &[Var<'_, f64>]| layer_forward(name, layers, ctx, x[0]),
        )?);
        let input = input.clone();
        results.push(check_params(cfg, &format!("{name}/params"), &store, |ctx: Ctx<'_, f64>| {
            layer_forward(name, layers, ctx, ctx.tape.constant(input.clone()))
        })?);
    }
    results.push(check_params(cfg, "patch_encoder/params", &store, |ctx: Ctx<'_, f64>| {
        let maps = enc.encode(ctx, &[&images[0], &images[1]])?;
        let flat: Vec<_> = maps.iter().map(|m| m.reshape(&[6, 4])).collect::<Result<_>>()?;
        concat(&flat, 0)
    })?);

    // Losses.
    let rc = RobustPenaltyConfig::default();
    let gt_rot = {
        let (_, gt) = tiny_scene(3, 8, cfg.seed);
        let mut v = Vec::new();
        for p in &gt {
            let m = p.rotation_matrix();
            v.extend((0..9).map(|e| m[(e / 3, e % 3)]));
        }
        Tensor::new(&[3, 9], v)?
    };
    for (name, alpha) in [("rotation_loss/alpha1", 1.0), ("rotation_loss/alpha0", 0.0), ("rotation_loss/alpha2", 2.0)] {
        let gt = gt_rot.clone();
        op!(name, vec![rand_tensor(r, &[3, 4], -1.0, 1.0)], |t, x| {
            let q = x[0].quat_normalize()?;
            rotation_loss_var(q, t.constant(gt.clone()), Alpha::Fixed(alpha), rc.c)
        });
    }
    let t_gt = rand_tensor(r, &[3, 3], -1.0, 1.0);
    op!("translation_loss", vec![rand_tensor(r, &[3, 3], -1.0, 1.0)], |t, x| {
        translation_loss_var(x[0], t.constant(t_gt.clone()), Alpha::Fixed(rc.alpha), rc.c)
    });
    op!(
        "robust_penalty/learnable_alpha",
        vec![rand_tensor(r, &[5], 0.0, 3.0), Tensor::full(&[1], 0.3)],
        |t, x| robust_penalty_sq_var(x[0], Alpha::Learnable(x[1]), 0.7)
    );

    results.push(check_end_to_end(cfg)?);
    Ok(results)
}

fn layer_forward<'t>(
    name: &str,
    (lin, mlp, att, lstm): (&Linear, &Mlp, &AttentionBlock, &LstmCell),
    ctx: Ctx<'t, f64>,
    x: Var<'t, f64>,
) -> Result<Var<'t, f64>> {
    match name {
        "linear" => lin.forward(ctx, x),
        "mlp" => mlp.forward(ctx, x),
        "attention_block" => att.forward(ctx, x),
        _ => {
            let s0 = lstm.zero_state(ctx, x.shape()[0]);
            let s1 = lstm.step(ctx, x, s0)?;
            let s2 = lstm.step(ctx, x.scale(-0.5), s1)?;
            concat(&[s2.h, s2.c], 1)
        }
    }
}

/// Tiny model (C=3, P=16, T=2) against the full loss, with probe points
/// replayed from a first pass so the checked function is fixed.
pub fn check_end_to_end(cfg: &GradCheckConfig) -> Result<CheckResult> {
    let mcfg = ModelConfig::tiny();
    let mut store = ParamStore::new();
    let model = SparsePose::new(mcfg, &mut store, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    randomize_params(&mut store, &mut rng, 0.3);
    let (views, gt) = tiny_scene(3, 16, cfg.seed);
    let points = {
        let tape = Tape::new();
        let out = model.forward(Ctx::new(&tape, &store), &views, PointSource::Sample(&mut rng))?;
        out.points
    };
    let rc = RobustPenaltyConfig::default();
    check_params(cfg, "end_to_end/tiny_model", &store, |ctx: Ctx<'_, f64>| {
        let out = model.forward::<f64, ChaCha8Rng>(ctx, &views, PointSource::Replay(&points))?;
        Ok(total_loss_var(&out.iterates, &gt, &rc, Alpha::Fixed(rc.alpha), Supervision::Ends)?.total)
    })
}
