//! Procedural multi-view scenes with exact ground-truth poses, and the
//! on-disk formats for poses, images and scene bundles.
//!
//! World frame is z-up with the object near the origin. Cameras sit on a
//! spherical band around it and look at a slightly jittered target. Poses in
//! a [`SceneSample`] are expressed in the frame of its first camera.

mod io;
mod render;

pub use io::{
    load_pose_file, load_scene_bundle, read_ppm, write_pose_file, write_ppm, write_scene_bundle, PoseRecord,
    POSE_HEADER,
};
pub use render::{render, trace, ObjectModel, Primitive, Shape};

use std::ops::Range;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{estimate_capture_volume, CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{canonicalize_to_first, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub object_seed: u64,
    pub num_views: usize,
    pub radius: (f64, f64),
    /// Degrees above the ground plane.
    pub elevation: (f64, f64),
    /// Degrees of jitter around evenly spread azimuths.
    pub azimuth_jitter: f64,
    pub image_size: usize,
    pub fov_deg: f64,
    pub category_id: u32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_views >= 1
            && self.radius.0 > 0.0
            && self.radius.0 <= self.radius.1
            && self.elevation.0 <= self.elevation.1
            && self.elevation.1 < 90.0
            && self.image_size > 0
            && self.fov_deg > 0.0
            && self.fov_deg < 180.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid scene spec: {self:?}")))
        }
    }
}

/// One instance: views with rendered images, canonical ground truth, scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Each view's `pose` is its canonical ground-truth pose.
    pub views: Vec<CameraView>,
    pub gt_poses: Vec<Pose>,
    pub world_poses: Vec<Pose>,
    /// Mean camera-centre distance to the capture centre.
    pub scene_scale: f64,
    pub degenerate: bool,
    pub category_id: u32,
}

impl SceneSample {
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// The views at `indices`, re-expressed in the frame of the first of them.
    pub fn subset(&self, indices: &[usize]) -> Result<SceneSample> {
        let world: Vec<Pose> = indices.iter().map(|&i| self.world_poses[i]).collect();
        let images = indices.iter().map(|&i| &self.views[i]).collect::<Vec<_>>();
        assemble(
            world,
            images.iter().map(|v| (v.intrinsics, v.image.clone())).collect(),
            self.category_id,
        )
    }
}

fn assemble(world: Vec<Pose>, payload: Vec<(Intrinsics, crate::camera::Image)>, category_id: u32) -> Result<SceneSample> {
    let gt = canonicalize_to_first(&world)?;
    let volume = estimate_capture_volume(&gt)?;
    let views = gt
        .iter()
        .zip(payload)
        .map(|(pose, (intrinsics, image))| CameraView {
            intrinsics,
            pose: *pose,
            image,
        })
        .collect();
    Ok(SceneSample {
        views,
        gt_poses: gt,
        world_poses: world,
        scene_scale: volume.radius,
        degenerate: volume.degenerate,
        category_id,
    })
}

/// Renders a scene. Deterministic in `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SceneSample> {
    spec.validate()?;
    let mut obj_rng = ChaCha8Rng::seed_from_u64(spec.object_seed);
    let model = ObjectModel::random(spec.category_id, &mut obj_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.num_views;
    let offset = rng.gen_range(0.0..360.0);
    let mut azimuths: Vec<f64> = (0..c)
        .map(|i| {
            let jitter = if spec.azimuth_jitter > 0.0 {
                rng.gen_range(-spec.azimuth_jitter..=spec.azimuth_jitter)
            } else {
                0.0
            };
            offset + 360.0 * i as f64 / c as f64 + jitter
        })
        .collect();
    azimuths.shuffle(&mut rng);
    let intrinsics = Intrinsics::from_fov(spec.image_size, spec.fov_deg);
    let mut world = Vec::with_capacity(c);
    let mut payload = Vec::with_capacity(c);
    for az in azimuths {
        let radius = rng.gen_range(spec.radius.0..=spec.radius.1);
        let el = rng.gen_range(spec.elevation.0..=spec.elevation.1).to_radians();
        let az = az.to_radians();
        let eye = radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        // Target offset stays under 0.04 * radius.
        let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let target = dir.normalize() * (0.04 * radius * rng.gen_range(0.0..1.0));
        let pose = Pose::look_at(eye, target, Vector3::z());
        let image = render(&model, &intrinsics, &pose, spec.image_size, spec.image_size);
        world.push(pose);
        payload.push((intrinsics, image));
    }
    assemble(world, payload, spec.category_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Scene distribution and split definition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub min_views: usize,
    pub max_views: usize,
    pub image_size: usize,
    pub fov_deg: f64,
    pub radius: (f64, f64),
    pub elevation: (f64, f64),
    pub azimuth_jitter: f64,
    pub train_categories: Range<u32>,
    pub test_categories: Range<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            min_views: 3,
            max_views: 9,
            image_size: 64,
            fov_deg: 50.0,
            radius: (3.0, 4.5),
            elevation: (15.0, 40.0),
            azimuth_jitter: 15.0,
            train_categories: 0..30,
            test_categories: 30..50,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_views == 0 || self.min_views > self.max_views {
            return Err(Error::Config(format!(
                "view range [{}, {}] is empty",
                self.min_views, self.max_views
            )));
        }
        let (a, b) = (&self.train_categories, &self.test_categories);
        if a.is_empty() || b.is_empty() || (a.start < b.end && b.start < a.end) {
            return Err(Error::Config(format!("category splits {a:?} and {b:?} must be non-empty and disjoint")));
        }
        Ok(())
    }

    pub fn categories(&self, split: Split) -> Range<u32> {
        match split {
            Split::Train => self.train_categories.clone(),
            Split::Test => self.test_categories.clone(),
        }
    }

    pub fn spec(&self, category_id: u32, object_seed: u64, num_views: usize) -> SceneSpec {
        SceneSpec {
            object_seed,
            num_views,
            radius: self.radius,
            elevation: self.elevation,
            azimuth_jitter: self.azimuth_jitter,
            image_size: self.image_size,
            fov_deg: self.fov_deg,
            category_id,
        }
    }

    /// Uniform view count in `[min_views, max_views]`.
    pub fn sample_num_views<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min_views..=self.max_views)
    }

    /// A fresh scene from `split` with a uniformly drawn view count.
    pub fn sample_batch<R: Rng + ?Sized>(&self, split: Split, rng: &mut R) -> Result<SceneSample> {
        let c = self.sample_num_views(rng);
        let cat = rng.gen_range(self.categories(split));
        let spec = self.spec(cat, rng.gen(), c);
        generate_scene(&spec, rng.gen())
    }

    /// `per_count` test scenes for each view count, in order of `counts`.
    pub fn eval_set(&self, counts: &[usize], per_count: usize, seed: u64) -> Result<Vec<SceneSample>> {
        let mut out = Vec::with_capacity(counts.len() * per_count);
        for &c in counts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for _ in 0..per_count {
                let cat = rng.gen_range(self.categories(Split::Test));
                out.push(generate_scene(&self.spec(cat, rng.gen(), c), rng.gen())?);
            }
        }
        Ok(out)
    }
}

/// Fixed set of training scenes rendered with `max_views` views each; a
/// training example is a random subset of one of them.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    pub scenes: Vec<SceneSample>,
}

impl TrainingPool {
    pub fn generate(cfg: &DatasetConfig, count: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes = (0..count)
            .map(|_| {
                let cat = rng.gen_range(cfg.categories(Split::Train));
                generate_scene(&cfg.spec(cat, rng.gen(), cfg.max_views), rng.gen())
            })
            .collect::<Result<_>>()?;
        Ok(Self { scenes })
    }

    /// One scene, `C ~ U[min_views, max_views]` of its views in random order.
    pub fn sample<R: Rng + ?Sized>(&self, cfg: &DatasetConfig, rng: &mut R) -> Result<SceneSample> {
        let scene = self.scenes.choose(rng).ok_or(Error::EmptySequence("training pool"))?;
        let c = cfg.sample_num_views(rng).min(scene.num_views());
        let idx: Vec<usize> = rand::seq::index::sample(rng, scene.num_views(), c).into_vec();
        scene.subset(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{principal_ray, project};

    fn spec(c: usize) -> SceneSpec {
        DatasetConfig::default().spec(4, 11, c)
    }

    #[test]
    fn first_pose_is_identity() {
        let s = generate_scene(&spec(5), 3).unwrap();
        assert_eq!(s.gt_poses[0], Pose::IDENTITY);
        assert!(s.scene_scale > 0.0);
        for p in &s.gt_poses {
            let n = p.rotation.norm();
            assert!((n - 1.0).abs() < 1e-9 && p.rotation.w >= 0.0);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_scene(&spec(4), 9).unwrap(), generate_scene(&spec(4), 9).unwrap());
    }

    #[test]
    fn principal_rays_pass_near_object() {
        let s = generate_scene(&spec(7), 1).unwrap();
        for (p, w) in s.world_poses.iter().zip(&s.world_poses) {
            let (o, d) = principal_ray(p);
            let to_c = -o;
            let dist = (to_c - d * to_c.dot(&d)).norm();
            assert!(dist < 0.05 * w.center().norm());
        }
    }

    #[test]
    fn capture_volume_recovers_object_centre() {
        for seed in 0..5 {
            let s = generate_scene(&spec(6), seed).unwrap();
            let vol = estimate_capture_volume(&s.world_poses).unwrap();
            let mean_r = s.world_poses.iter().map(|p| p.center().norm()).sum::<f64>() / 6.0;
            assert!(vol.center.norm() < 0.05 * mean_r, "seed {seed}: {}", vol.center.norm());
        }
    }

    #[test]
    fn renders_are_view_consistent() {
        let spec = spec(4);
        let s = generate_scene(&spec, 5).unwrap();
        let model = ObjectModel::random(spec.category_id, &mut ChaCha8Rng::seed_from_u64(spec.object_seed));
        let size = spec.image_size as f64;
        let neighbourhood = |img: &crate::camera::Image, px: &nalgebra::Vector2<f64>| {
            let (r, c) = (px.y.round() as usize, px.x.round() as usize);
            let mut out = Vec::new();
            for dr in 0..3 {
                for dc in 0..3 {
                    out.push(img.pixel(r + dr - 1, c + dc - 1));
                }
            }
            out
        };
        let mut checked = 0;
        for k in 0..400 {
            // Points on a spiral over the ground disk and up the object.
            let a = k as f64 * 0.37;
            let rad = 0.3 + 2.2 * (k as f64 / 400.0);
            let candidate = Vector3::new(rad * a.cos(), rad * a.sin(), -0.75);
            let mut seen = Vec::new();
            for (v, w) in s.views.iter().zip(&s.world_poses) {
                let Ok((px, depth)) = project(&candidate, &v.intrinsics, w) else { continue };
                if depth <= 0.0 || px.x < 1.0 || px.y < 1.0 || px.x > size - 2.0 || px.y > size - 2.0 {
                    continue;
                }
                let origin = w.center();
                let dir = candidate - origin;
                // Visible when the first surface along the ray is the point itself.
                match render::first_hit(&model, &origin, &dir) {
                    Some((t, colour)) if (t - 1.0).abs() < 1e-9 => seen.push((colour, neighbourhood(&v.image, &px))),
                    _ => {}
                }
            }
            if seen.len() < 2 {
                continue;
            }
            // The point's colour is view independent and every view shows it within one pixel.
            for (colour, patch) in &seen {
                assert_eq!(*colour, seen[0].0);
                assert!(patch.iter().any(|c| c.iter().zip(colour).all(|(a, b)| (a - b).abs() < 1e-12)));
            }
            checked += 1;
        }
        assert!(checked > 20, "only {checked} co-visible points");
    }

    #[test]
    fn splits_disjoint_and_counts_bounded() {
        let cfg = DatasetConfig::default();
        cfg.validate().unwrap();
        let train = cfg.categories(Split::Train);
        let test = cfg.categories(Split::Test);
        assert!(train.clone().all(|c| !test.contains(&c)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let c = cfg.sample_num_views(&mut rng);
            assert!((3..=9).contains(&c));
        }
        let bad = DatasetConfig {
            test_categories: 20..40,
            ..DatasetConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn subset_recanonicalizes() {
        let s = generate_scene(&spec(5), 2).unwrap();
        let sub = s.subset(&[3, 1]).unwrap();
        assert_eq!(sub.gt_poses[0], Pose::IDENTITY);
        assert_eq!(sub.views[1].image, s.views[1].image);
        let rel = crate::geometry::compose(&s.world_poses[1], &s.world_poses[3].inverse());
        let got = sub.gt_poses[1];
        assert!((rel.translation - got.translation).norm() < 1e-9);
    }

    #[test]
    fn eval_set_is_stratified() {
        let cfg = DatasetConfig {
            image_size: 16,
            ..DatasetConfig::default()
        };
        let set = cfg.eval_set(&[3, 5], 2, 0).unwrap();
        let counts: Vec<usize> = set.iter().map(|s| s.num_views()).collect();
        assert_eq!(counts, vec![3, 3, 5, 5]);
        assert!(set.iter().all(|s| cfg.test_categories.contains(&s.category_id)));
    }
}
