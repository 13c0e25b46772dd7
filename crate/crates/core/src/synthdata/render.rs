//! Flat-shaded ray caster for procedural objects.
//!
//! Surface colour is a function of the world-space hit point and normal only,
//! so a point seen from two cameras has the same colour in both.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::camera::{Image, Intrinsics};
use crate::geometry::Pose;

/// Light direction (towards the light), world frame, z up.
const LIGHT: [f64; 3] = [0.45, -0.35, 0.82];
const GROUND_Z: f64 = -0.75;
const GROUND_RADIUS: f64 = 2.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Box,
    Ellipsoid,
}

/// A box or ellipsoid with half extents `size`, rotated about z by `yaw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub color: [f64; 3],
    /// Spatial frequency of the stripe texture; 0 disables it.
    pub stripes: f64,
}

/// Object primitives plus the category palette used for the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub primitives: Vec<Primitive>,
    pub ground: [f64; 3],
    pub checker: f64,
}

pub(crate) fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl ObjectModel {
    /// Category fixes the shape mix, palette and texture frequency; the seed
    /// varies the instance.
    pub fn random<R: Rng + ?Sized>(category: u32, rng: &mut R) -> Self {
        let base_hue = (category as f64 * 0.618_033_988_75).fract();
        let box_share = ((category * 7) % 10) as f64 / 9.0;
        let stripes = [0.0, 3.0, 6.0, 10.0][(category % 4) as usize];
        let count = 2 + (category % 3) as usize + rng.gen_range(0..2);
        let primitives = (0..count)
            .map(|i| {
                let shape = if rng.gen_bool(box_share.clamp(0.1, 0.9)) {
                    Shape::Box
                } else {
                    Shape::Ellipsoid
                };
                let size = Vector3::new(rng.gen_range(0.2..0.55), rng.gen_range(0.2..0.55), rng.gen_range(0.2..0.6));
                let center = if i == 0 {
                    Vector3::new(0.0, 0.0, GROUND_Z + size.z)
                } else {
                    Vector3::new(rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.35))
                };
                let hue = base_hue + rng.gen_range(-0.12..0.12) + if i % 2 == 1 { 0.5 } else { 0.0 };
                Primitive {
                    shape,
                    center,
                    size,
                    yaw: rng.gen_range(0.0..std::f64::consts::PI),
                    color: hsv(hue, rng.gen_range(0.5..0.9), rng.gen_range(0.6..1.0)),
                    stripes,
                }
            })
            .collect();
        Self {
            primitives,
            ground: hsv(base_hue + 0.25, 0.25, 0.55),
            checker: 0.35 + 0.05 * (category % 5) as f64,
        }
    }
}

fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Nearest positive hit distance and world normal.
fn intersect(p: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let rot = yaw_matrix(p.yaw);
    let o = rot.transpose() * (origin - p.center);
    let d = rot.transpose() * dir;
    match p.shape {
        Shape::Ellipsoid => {
            let os = o.component_div(&p.size);
            let ds = d.component_div(&p.size);
            let a = ds.norm_squared();
            let b = os.dot(&ds);
            let c = os.norm_squared() - 1.0;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let t = (-b - disc.sqrt()) / a;
            if t <= 1e-9 {
                return None;
            }
            let local = o + d * t;
            let n = local.component_div(&p.size.component_mul(&p.size));
            Some((t, (rot * n).normalize()))
        }
        Shape::Box => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis = 0;
            let mut sign = 1.0;
            for k in 0..3 {
                if d[k].abs() < 1e-15 {
                    if o[k].abs() > p.size[k] {
                        return None;
                    }
                    continue;
                }
                let (a, b) = ((-p.size[k] - o[k]) / d[k], (p.size[k] - o[k]) / d[k]);
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                if near > t0 {
                    t0 = near;
                    axis = k;
                    sign = -d[k].signum();
                }
                t1 = t1.min(far);
            }
            if t0 > t1 || t0 <= 1e-9 {
                return None;
            }
            let mut n = Vector3::zeros();
            n[axis] = sign;
            Some((t0, rot * n))
        }
    }
}

fn shade(color: [f64; 3], normal: &Vector3<f64>) -> [f64; 3] {
    let light = Vector3::from(LIGHT).normalize();
    let k = 0.35 + 0.65 * normal.dot(&light).max(0.0);
    color.map(|c| (c * k).clamp(0.0, 1.0))
}

/// Background: hue follows the world azimuth of the ray, brightness its elevation.
fn sky(dir: &Vector3<f64>) -> [f64; 3] {
    let d = dir.normalize();
    let hue = d.y.atan2(d.x) / std::f64::consts::TAU;
    let v = 0.55 + 0.4 * d.z.clamp(-1.0, 1.0).max(0.0);
    hsv(hue, 0.55, v)
}

/// Colour seen along a world ray.
pub fn trace(model: &ObjectModel, origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
    first_hit(model, origin, dir).map_or_else(|| sky(dir), |(_, c)| c)
}

/// Ray parameter and colour of the nearest surface (object or ground).
pub fn first_hit(model: &ObjectModel, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [f64; 3])> {
    let mut best: Option<(f64, [f64; 3])> = None;
    for p in &model.primitives {
        if let Some((t, n)) = intersect(p, origin, dir) {
            if best.is_none_or(|(bt, _)| t < bt) {
                let hit = origin + dir * t;
                let mut c = p.color;
                if p.stripes > 0.0 && (p.stripes * (hit.x + 0.7 * hit.y + 0.4 * hit.z)).sin() > 0.3 {
                    c = c.map(|v| v * 0.55);
                }
                best = Some((t, shade(c, &n)));
            }
        }
    }
    if dir.z < -1e-12 {
        let t = (GROUND_Z - origin.z) / dir.z;
        let hit = origin + dir * t;
        if t > 0.0 && hit.xy().norm() <= GROUND_RADIUS && best.is_none_or(|(bt, _)| t < bt) {
            let cell = ((hit.x / model.checker).floor() + (hit.y / model.checker).floor()) as i64;
            let k = if cell.rem_euclid(2) == 0 { 1.0 } else { 0.7 };
            best = Some((t, shade(model.ground.map(|v| v * k), &Vector3::z())));
        }
    }
    best
}

/// Renders one view; pixel `(col, row)` samples the ray through its centre.
pub fn render(model: &ObjectModel, intrinsics: &Intrinsics, pose: &Pose, height: usize, width: usize) -> Image {
    let mut img = Image::new(height, width);
    let r_t = pose.rotation_matrix().transpose();
    let origin = pose.center();
    for row in 0..height {
        for col in 0..width {
            let d_cam = intrinsics.ray_direction(&nalgebra::Vector2::new(col as f64, row as f64));
            let dir = r_t * d_cam;
            img.set_pixel(row, col, trace(model, &origin, &dir));
        }
    }
    img
}
