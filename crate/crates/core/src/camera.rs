//! Pinhole projection, principal rays, capture-volume estimation and the
//! probing machinery used by the refinement stage.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Depth magnitude below which a point is treated as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-12;

/// Condition number of the ray normal equations above which the rays count as parallel.
pub const MAX_RAY_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        })
    }

    /// Centered pinhole camera for a `size`x`size` image with the given horizontal field of view.
    pub fn from_fov(size: usize, fov_deg: f64) -> Self {
        let f = 0.5 * size as f64 / (0.5 * fov_deg.to_radians()).tan();
        let c = 0.5 * (size as f64 - 1.0);
        Self {
            fx: f,
            fy: f,
            cx: c,
            cy: c,
            skew: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    /// Pixel of a point already expressed in camera coordinates.
    pub fn pixel_of(&self, cam: &Vector3<f64>) -> Result<Vector2<f64>> {
        if cam.z.abs() < MIN_DEPTH {
            return Err(Error::PointAtCameraPlane { depth: cam.z });
        }
        let (u, v) = (cam.x / cam.z, cam.y / cam.z);
        Ok(Vector2::new(
            self.fx * u + self.skew * v + self.cx,
            self.fy * v + self.cy,
        ))
    }

    /// Camera-frame direction through a pixel (unnormalized, z = 1).
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let y = (pixel.y - self.cy) / self.fy;
        let x = (pixel.x - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }
}

/// Row-major RGB image with values in `[0, 1]`. Pixel `(col, row)` has its
/// center at continuous coordinate `(col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn as_feature_map(&self) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: 3,
            stride: 1,
            data: self.data.clone(),
        }
    }
}

/// Dense `height x width x channels` grid, `stride` image pixels per texel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    /// Samples at an image-space pixel position.
    pub fn sample_pixel(&self, pixel: &Vector2<f64>) -> (Vec<f64>, bool) {
        let t = pixel_to_texel(pixel, self.stride);
        bilinear_sample(self, &t)
    }
}

/// Maps image pixel coordinates to texel coordinates of a map with the given
/// stride. Texel `k` covers pixels `[k*s, (k+1)*s)`, so its center sits at
/// pixel `k*s + (s-1)/2`.
pub fn pixel_to_texel(pixel: &Vector2<f64>, stride: usize) -> Vector2<f64> {
    let s = stride as f64;
    let off = 0.5 * (s - 1.0);
    Vector2::new((pixel.x - off) / s, (pixel.y - off) / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub image: Image,
}

impl CameraView {
    pub fn image_size(&self) -> (usize, usize) {
        (self.image.height, self.image.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureVolume {
    pub center: Vector3<f64>,
    pub radius: f64,
    /// Set when the principal rays were near-parallel and the fallback volume was used.
    pub degenerate: bool,
}

/// Projects a world point; returns the pixel and the depth along the optical axis.
pub fn project(p_world: &Vector3<f64>, intrinsics: &Intrinsics, pose: &Pose) -> Result<(Vector2<f64>, f64)> {
    let cam = pose.transform_point(p_world);
    let pixel = intrinsics.pixel_of(&cam)?;
    Ok((pixel, cam.z))
}

/// Origin and unit direction of the ray through the principal point.
pub fn principal_ray(pose: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let r_t = pose.rotation_matrix().transpose();
    let origin = -(r_t * pose.translation);
    let dir = (r_t * Vector3::z()).normalize();
    (origin, dir)
}

/// Least-squares point closest to all principal rays, with the mean camera distance as radius.
pub fn estimate_capture_volume(poses: &[Pose]) -> Result<CaptureVolume> {
    if poses.is_empty() {
        return Err(Error::EmptySequence("estimate_capture_volume"));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut centers = Vec::with_capacity(poses.len());
    for pose in poses {
        let (o, d) = principal_ray(pose);
        let m = Matrix3::identity() - d * d.transpose();
        a += m;
        b += m * o;
        centers.push(o);
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let solved = if min > 0.0 && max / min <= MAX_RAY_CONDITION {
        a.lu().solve(&b)
    } else {
        None
    };
    let n = centers.len() as f64;
    match solved {
        Some(center) if center.iter().all(|v| v.is_finite()) => {
            let radius = centers.iter().map(|c| (center - c).norm()).sum::<f64>() / n;
            if radius > 0.0 {
                return Ok(CaptureVolume {
                    center,
                    radius,
                    degenerate: false,
                });
            }
            Ok(fallback_volume(&centers))
        }
        _ => Ok(fallback_volume(&centers)),
    }
}

fn fallback_volume(centers: &[Vector3<f64>]) -> CaptureVolume {
    let center = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    CaptureVolume {
        center,
        radius: 1.0,
        degenerate: true,
    }
}

/// Uniform samples inside the ball of radius `volume.radius / 2`, by rejection from the bounding cube.
pub fn sample_ball<R: Rng + ?Sized>(volume: &CaptureVolume, count: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let half = 0.5 * volume.radius;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if u.norm_squared() <= 1.0 {
            out.push(volume.center + u * half);
        }
    }
    out
}

/// Corner indices and fractional offsets of a bilinear lookup.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

/// `None` when `(x, y)` falls outside `[0, width-1] x [0, height-1]`.
pub(crate) fn bilinear_footprint(height: usize, width: usize, x: f64, y: f64) -> Option<Footprint> {
    if !(x.is_finite() && y.is_finite()) || height == 0 || width == 0 {
        return None;
    }
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    Some(Footprint {
        x0,
        y0,
        x1: (x0 + 1).min(width - 1),
        y1: (y0 + 1).min(height - 1),
        fx: x - x0 as f64,
        fy: y - y0 as f64,
    })
}

/// Bilinear interpolation at texel coordinates `(x, y)` = `(col, row)`.
/// Out-of-bounds lookups return zeros and `false`.
pub fn bilinear_sample(map: &FeatureMap, coord: &Vector2<f64>) -> (Vec<f64>, bool) {
    let c = map.channels;
    let Some(fp) = bilinear_footprint(map.height, map.width, coord.x, coord.y) else {
        return (vec![0.0; c], false);
    };
    let at = |r: usize, col: usize| &map.data[(r * map.width + col) * c..(r * map.width + col + 1) * c];
    let (a, b, cc, d) = (at(fp.y0, fp.x0), at(fp.y0, fp.x1), at(fp.y1, fp.x0), at(fp.y1, fp.x1));
    let w00 = (1.0 - fp.fx) * (1.0 - fp.fy);
    let w01 = fp.fx * (1.0 - fp.fy);
    let w10 = (1.0 - fp.fx) * fp.fy;
    let w11 = fp.fx * fp.fy;
    let out = (0..c)
        .map(|k| w00 * a[k] + w01 * b[k] + w10 * cc[k] + w11 * d[k])
        .collect();
    (out, true)
}
