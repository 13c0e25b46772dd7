//! Robust pose losses.
//!
//! The penalty is the general robust function
//! `rho(x; a, c) = |a-2|/a * (((x/c)^2/|a-2| + 1)^(a/2) - 1)`
//! with its `a = 2` (quadratic) and `a = 0` (logarithmic) limits written out.
//! It depends on `x` only through `x^2`, which lets the tape versions work on
//! squared residuals and stay smooth at zero.

use nalgebra::Vector3;

use crate::autodiff::{Elem, ParamId, Tensor, Var};
use crate::geometry::{rotation_residual, Pose, Quaternion, RotationMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustPenaltyConfig {
    pub alpha: f64,
    pub c: f64,
    /// When set, the shape is `2 * sigmoid(raw)` for a trainable scalar `raw`,
    /// which keeps it inside `(0, 2)`; `alpha` only seeds `raw`.
    pub alpha_learnable: bool,
}

impl Default for RobustPenaltyConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            c: 0.5,
            alpha_learnable: false,
        }
    }
}

impl RobustPenaltyConfig {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        if c <= 0.0 || !c.is_finite() || !alpha.is_finite() {
            return Err(Error::Config(format!("robust penalty needs finite alpha and c > 0, got alpha={alpha}, c={c}")));
        }
        Ok(Self {
            alpha,
            c,
            alpha_learnable: false,
        })
    }

    /// Initial value of the unconstrained shape parameter.
    pub fn raw_alpha_init(&self) -> f64 {
        let s = (self.alpha / 2.0).clamp(1e-3, 1.0 - 1e-3);
        (s / (1.0 - s)).ln()
    }
}

/// Penalty as a function of the squared residual `z = x^2`.
pub fn robust_penalty_sq(z: f64, alpha: f64, c: f64) -> f64 {
    let u = z / (c * c);
    if alpha == 2.0 {
        0.5 * u
    } else if alpha == 0.0 {
        (0.5 * u).ln_1p()
    } else {
        let b = (alpha - 2.0).abs();
        b / alpha * ((u / b + 1.0).powf(alpha / 2.0) - 1.0)
    }
}

pub fn robust_penalty(x: f64, cfg: &RobustPenaltyConfig) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFiniteResidual(x));
    }
    Ok(robust_penalty_sq(x * x, cfg.alpha, cfg.c))
}

/// `rho(||R(q) R_gt^T - I||_F)`; `q` is normalized first.
pub fn rotation_loss(q_pred: &Quaternion, r_gt: &RotationMatrix, cfg: &RobustPenaltyConfig) -> Result<f64> {
    let r = q_pred.to_matrix()?;
    robust_penalty(rotation_residual(&r, r_gt), cfg)
}

/// `rho(||t_pred - t_gt||^2)`: the squared norm is the penalty argument.
pub fn translation_loss(t_pred: &Vector3<f64>, t_gt: &Vector3<f64>, cfg: &RobustPenaltyConfig) -> Result<f64> {
    robust_penalty((t_pred - t_gt).norm_squared(), cfg)
}

/// Which refinement iterates the loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Supervision {
    /// Iteration 0 and the last one.
    #[default]
    Ends,
    /// Every iteration.
    All,
}

impl Supervision {
    /// Supervised indices into a trajectory of `len` iterates, without duplicates.
    pub fn iterations(self, len: usize) -> Vec<usize> {
        match self {
            _ if len == 0 => vec![],
            Supervision::All => (0..len).collect(),
            Supervision::Ends if len == 1 => vec![0],
            Supervision::Ends => vec![0, len - 1],
        }
    }
}

/// Mean over cameras of the per-camera loss summed over the supervised
/// iterations. `gt` must already be in the canonical frame.
pub fn total_loss(
    trajectory: &[Vec<Pose>],
    gt: &[Pose],
    cfg: &RobustPenaltyConfig,
    supervision: Supervision,
) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::EmptySequence("ground-truth poses"));
    }
    let mut total = 0.0;
    for k in supervision.iterations(trajectory.len()) {
        let poses = &trajectory[k];
        if poses.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory iterate vs ground truth",
                left: poses.len(),
                right: gt.len(),
            });
        }
        for (p, g) in poses.iter().zip(gt) {
            total += rotation_loss(&p.rotation, &g.rotation_matrix(), cfg)?;
            total += translation_loss(&p.translation, &g.translation, cfg)?;
        }
    }
    Ok(total / gt.len() as f64)
}

/// Shape parameter on the tape.
#[derive(Debug, Clone, Copy)]
pub enum Alpha<'t, E: Elem> {
    Fixed(f64),
    /// Unconstrained scalar `[1]`; the shape is `2 * sigmoid(raw)`.
    Learnable(Var<'t, E>),
}

impl<'t, E: Elem> Alpha<'t, E> {
    pub fn from_config(cfg: &RobustPenaltyConfig, raw: Option<Var<'t, E>>) -> Self {
        match (cfg.alpha_learnable, raw) {
            (true, Some(r)) => Alpha::Learnable(r),
            _ => Alpha::Fixed(cfg.alpha),
        }
    }
}

/// Elementwise penalty of squared residuals `z` (any shape).
pub fn robust_penalty_sq_var<'t, E: Elem>(z: Var<'t, E>, alpha: Alpha<'t, E>, c: f64) -> Result<Var<'t, E>> {
    let u = z.scale(E::c(1.0 / (c * c)));
    match alpha {
        Alpha::Fixed(2.0) => Ok(u.scale(E::c(0.5))),
        Alpha::Fixed(0.0) => Ok(u.scale(E::c(0.5)).add_scalar(E::one()).log()),
        Alpha::Fixed(a) => {
            let b = (a - 2.0).abs();
            Ok(u
                .scale(E::c(1.0 / b))
                .add_scalar(E::one())
                .powf(E::c(a / 2.0))
                .add_scalar(-E::one())
                .scale(E::c(b / a)))
        }
        Alpha::Learnable(raw) => {
            let shape = z.shape();
            let a = raw.sigmoid().scale(E::c(2.0)).reshape(&[])?.broadcast(&shape)?;
            // 0 < a < 2, so |a - 2| = 2 - a.
            let b = a.neg().add_scalar(E::c(2.0));
            let inner = u.div(b)?.add_scalar(E::one()).log();
            let powered = a.scale(E::c(0.5)).mul(inner)?.exp().add_scalar(-E::one());
            b.div(a)?.mul(powered)
        }
    }
}

/// Per-iterate pose predictions on the tape: quaternions `[C, 4]` (unit) and
/// translations `[C, 3]`.
#[derive(Debug, Clone, Copy)]
pub struct PoseVars<'t, E: Elem> {
    pub quats: Var<'t, E>,
    pub trans: Var<'t, E>,
}

/// Loss value with its parts (summed over cameras and supervised iterations,
/// then divided by the camera count).
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'t, E: Elem> {
    pub total: Var<'t, E>,
    pub rotation: f64,
    pub translation: f64,
}

fn gt_tensors<E: Elem>(gt: &[Pose]) -> (Tensor<E>, Tensor<E>) {
    let mut rots = Vec::with_capacity(gt.len() * 9);
    let mut trans = Vec::with_capacity(gt.len() * 3);
    for p in gt {
        let r = p.rotation_matrix();
        for i in 0..3 {
            for j in 0..3 {
                rots.push(E::c(r[(i, j)]));
            }
            trans.push(E::c(p.translation[i]));
        }
    }
    let c = gt.len();
    (
        Tensor::new(&[c, 9], rots).expect("9 per pose"),
        Tensor::new(&[c, 3], trans).expect("3 per pose"),
    )
}

/// Per-camera rotation penalties `[C]`. Uses `||R_p R_g^T - I||_F^2 = ||R_p - R_g||_F^2`
/// for orthonormal `R_g`.
pub fn rotation_loss_var<'t, E: Elem>(
    quats: Var<'t, E>,
    r_gt: Var<'t, E>,
    alpha: Alpha<'t, E>,
    c: f64,
) -> Result<Var<'t, E>> {
    let r = quats.quat_to_rotmat()?;
    let sq = r.sub(r_gt)?.square().sum_axis(1)?;
    robust_penalty_sq_var(sq, alpha, c)
}

/// Per-camera translation penalties `[C]`.
pub fn translation_loss_var<'t, E: Elem>(
    trans: Var<'t, E>,
    t_gt: Var<'t, E>,
    alpha: Alpha<'t, E>,
    c: f64,
) -> Result<Var<'t, E>> {
    let d2 = trans.sub(t_gt)?.square().sum_axis(1)?;
    robust_penalty_sq_var(d2.square(), alpha, c)
}

/// Tape version of [`total_loss`].
pub fn total_loss_var<'t, E: Elem>(
    trajectory: &[PoseVars<'t, E>],
    gt: &[Pose],
    cfg: &RobustPenaltyConfig,
    alpha: Alpha<'t, E>,
    supervision: Supervision,
) -> Result<LossTerms<'t, E>> {
    let first = trajectory.first().ok_or(Error::EmptySequence("trajectory"))?;
    if gt.is_empty() {
        return Err(Error::EmptySequence("ground-truth poses"));
    }
    let tape = first.quats.tape();
    let (rg, tg) = gt_tensors::<E>(gt);
    let (rg, tg) = (tape.constant(rg), tape.constant(tg));
    let inv_c = E::c(1.0 / gt.len() as f64);
    let mut terms = Vec::new();
    let (mut rot, mut trans) = (0.0, 0.0);
    for k in supervision.iterations(trajectory.len()) {
        let it = trajectory[k];
        let c = it.quats.shape()[0];
        if c != gt.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory iterate vs ground truth",
                left: c,
                right: gt.len(),
            });
        }
        let lr = rotation_loss_var(it.quats, rg, alpha, cfg.c)?.sum();
        let lt = translation_loss_var(it.trans, tg, alpha, cfg.c)?.sum();
        rot += lr.value().item().f64();
        trans += lt.value().item().f64();
        terms.push(lr.add(lt)?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    let n = gt.len() as f64;
    Ok(LossTerms {
        total: total.scale(inv_c),
        rotation: rot / n,
        translation: trans / n,
    })
}

/// Name of the unconstrained shape parameter when it is learned.
pub const ALPHA_PARAM: &str = "loss.alpha_raw";

/// Registers the learnable shape parameter if the config asks for one.
pub fn register_alpha<E: Elem>(store: &mut crate::autodiff::ParamStore<E>, cfg: &RobustPenaltyConfig) -> Option<ParamId> {
    cfg.alpha_learnable
        .then(|| store.add(ALPHA_PARAM, Tensor::full(&[1], E::c(cfg.raw_alpha_init()))))
}
