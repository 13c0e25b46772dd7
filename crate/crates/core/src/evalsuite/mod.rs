//! Relative-pose evaluation: per-camera errors, threshold accuracies, model
//! evaluation over held-out scenes, ablations and camera-center plots.
//!
//! Both pose sets are expressed relative to their own first camera before
//! comparison, so any global rigid transform of either set cancels. The first
//! camera is the anchor and never counts towards an accuracy.

mod ablation;
mod plot;

pub use ablation::{run_ablation, AblationRow, AblationSettings, Variant, LSTM_STEP_CHOICES, PAPER_VARIANTS};
pub use plot::plot_cameras;

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Elem, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geometry::{canonicalize_to_first, rotation_angle, Pose};
use crate::nn::Ctx;
use crate::posenet::{PointSource, SparsePose};
use crate::synthdata::SceneSample;

pub const ROT_THRESHOLD_DEG: f64 = 15.0;
pub const TRANS_THRESHOLD: f64 = 0.20;

/// How predictions are compared with ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub rot_thresh_deg: f64,
    /// Fraction of the scene scale.
    pub trans_thresh: f64,
    /// Rescale predicted relative translations by the least-squares optimal
    /// factor first (for pose sets whose scale is arbitrary).
    pub sim_align: bool,
    /// Compare camera centers instead of translation vectors.
    pub camera_centers: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            rot_thresh_deg: ROT_THRESHOLD_DEG,
            trans_thresh: TRANS_THRESHOLD,
            sim_align: false,
            camera_centers: false,
        }
    }
}

/// Errors of the non-anchor cameras (index `i` is camera `i + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMetrics {
    pub rot_err_deg: Vec<f64>,
    pub trans_err: Vec<f64>,
    pub rot_acc: f64,
    pub trans_acc: f64,
}

/// Fraction of `errs` at or below `thresh`; 0 for an empty slice.
pub fn accuracy(errs: &[f64], thresh: f64) -> f64 {
    if errs.is_empty() {
        return 0.0;
    }
    errs.iter().filter(|&&e| e <= thresh).count() as f64 / errs.len() as f64
}

fn relative_positions(poses: &[Pose], centers: bool) -> Vec<Vector3<f64>> {
    poses
        .iter()
        .map(|p| if centers { p.center() } else { p.translation })
        .collect()
}

/// Compares `pred` with `gt` after expressing both relative to their first camera.
pub fn evaluate(pred: &[Pose], gt: &[Pose], scene_scale: f64, opts: &EvalOptions) -> Result<PoseMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs ground-truth poses",
            left: pred.len(),
            right: gt.len(),
        });
    }
    if gt.len() < 2 {
        return Err(Error::EmptySequence("non-anchor cameras"));
    }
    if !(scene_scale > 0.0 && scene_scale.is_finite()) {
        return Err(Error::Config(format!("scene scale must be positive, got {scene_scale}")));
    }
    let p = canonicalize_to_first(pred)?;
    let g = canonicalize_to_first(gt)?;
    let rot_err_deg: Vec<f64> = p[1..]
        .iter()
        .zip(&g[1..])
        .map(|(a, b)| rotation_angle(&a.rotation_matrix(), &b.rotation_matrix()))
        .collect();

    let mut tp = relative_positions(&p[1..], opts.camera_centers);
    let tg = relative_positions(&g[1..], opts.camera_centers);
    if opts.sim_align {
        let num: f64 = tp.iter().zip(&tg).map(|(a, b)| a.dot(b)).sum();
        let den: f64 = tp.iter().map(|a| a.norm_squared()).sum();
        if den > 0.0 {
            let s = num / den;
            tp.iter_mut().for_each(|v| *v *= s);
        }
    }
    let trans_err: Vec<f64> = tp.iter().zip(&tg).map(|(a, b)| (a - b).norm() / scene_scale).collect();
    Ok(PoseMetrics {
        rot_acc: accuracy(&rot_err_deg, opts.rot_thresh_deg),
        trans_acc: accuracy(&trans_err, opts.trans_thresh),
        rot_err_deg,
        trans_err,
    })
}

/// Rotation accuracy at each threshold (degrees).
pub fn threshold_sweep(pred: &[Pose], gt: &[Pose], scene_scale: f64, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let m = evaluate(pred, gt, scene_scale, &EvalOptions::default())?;
    Ok(thresholds
        .iter()
        .map(|&t| (t, accuracy(&m.rot_err_deg, t)))
        .collect())
}

/// One non-anchor camera of one evaluated scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRow {
    pub scene_id: usize,
    pub num_views: usize,
    pub cam_idx: usize,
    pub rot_err_deg: f64,
    pub trans_err_norm: f64,
}

/// Accuracies over all cameras of scenes with the same view count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSummary {
    pub num_views: usize,
    pub scenes: usize,
    pub cameras: usize,
    pub rot_acc: f64,
    pub trans_acc: f64,
    pub mean_rot_err_deg: f64,
    pub mean_trans_err: f64,
}

/// Per-camera errors over an evaluation set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<CameraRow>,
}

impl EvalReport {
    pub fn push_scene(&mut self, scene_id: usize, m: &PoseMetrics) {
        let c = m.rot_err_deg.len() + 1;
        for (i, (&r, &t)) in m.rot_err_deg.iter().zip(&m.trans_err).enumerate() {
            self.rows.push(CameraRow {
                scene_id,
                num_views: c,
                cam_idx: i + 1,
                rot_err_deg: r,
                trans_err_norm: t,
            });
        }
    }

    pub fn rot_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rot_err_deg).collect()
    }

    pub fn trans_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.trans_err_norm).collect()
    }

    /// Pooled over every camera row.
    pub fn rot_acc(&self, thresh_deg: f64) -> f64 {
        accuracy(&self.rot_errors(), thresh_deg)
    }

    pub fn trans_acc(&self, thresh: f64) -> f64 {
        accuracy(&self.trans_errors(), thresh)
    }

    /// Mean over view counts of the per-count accuracy, so every count weighs the same.
    pub fn mean_rot_acc_by_count(&self, thresh_deg: f64) -> f64 {
        let s = self.summary(&EvalOptions {
            rot_thresh_deg: thresh_deg,
            ..EvalOptions::default()
        });
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|c| c.rot_acc).sum::<f64>() / s.len() as f64
    }

    /// One entry per view count, ascending.
    pub fn summary(&self, opts: &EvalOptions) -> Vec<CountSummary> {
        let mut counts: Vec<usize> = self.rows.iter().map(|r| r.num_views).collect();
        counts.sort_unstable();
        counts.dedup();
        counts
            .into_iter()
            .map(|c| {
                let rows: Vec<&CameraRow> = self.rows.iter().filter(|r| r.num_views == c).collect();
                let mut scenes: Vec<usize> = rows.iter().map(|r| r.scene_id).collect();
                scenes.dedup();
                let rot: Vec<f64> = rows.iter().map(|r| r.rot_err_deg).collect();
                let trans: Vec<f64> = rows.iter().map(|r| r.trans_err_norm).collect();
                let n = rows.len() as f64;
                CountSummary {
                    num_views: c,
                    scenes: scenes.len(),
                    cameras: rows.len(),
                    rot_acc: accuracy(&rot, opts.rot_thresh_deg),
                    trans_acc: accuracy(&trans, opts.trans_thresh),
                    mean_rot_err_deg: rot.iter().sum::<f64>() / n,
                    mean_trans_err: trans.iter().sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// `scene_id,C,cam_idx,rot_err_deg,trans_err_norm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| csv_error(path, e);
        w.write_record(["scene_id", "C", "cam_idx", "rot_err_deg", "trans_err_norm"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.scene_id.to_string(),
                r.num_views.to_string(),
                r.cam_idx.to_string(),
                r.rot_err_deg.to_string(),
                r.trans_err_norm.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per view count plus an `all` row.
    pub fn write_summary_csv(&self, path: &Path, opts: &EvalOptions) -> Result<()> {
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| csv_error(path, e);
        w.write_record([
            "C",
            "scenes",
            "cameras",
            "rot_acc",
            "trans_acc",
            "mean_rot_err_deg",
            "mean_trans_err",
        ])
        .map_err(io)?;
        for s in self.summary(opts) {
            w.write_record([
                s.num_views.to_string(),
                s.scenes.to_string(),
                s.cameras.to_string(),
                s.rot_acc.to_string(),
                s.trans_acc.to_string(),
                s.mean_rot_err_deg.to_string(),
                s.mean_trans_err.to_string(),
            ])
            .map_err(io)?;
        }
        let (rot, trans) = (self.rot_errors(), self.trans_errors());
        let n = rot.len().max(1) as f64;
        let mut scenes: Vec<usize> = self.rows.iter().map(|r| r.scene_id).collect();
        scenes.dedup();
        w.write_record([
            "all".to_string(),
            scenes.len().to_string(),
            rot.len().to_string(),
            accuracy(&rot, opts.rot_thresh_deg).to_string(),
            accuracy(&trans, opts.trans_thresh).to_string(),
            (rot.iter().sum::<f64>() / n).to_string(),
            (trans.iter().sum::<f64>() / n).to_string(),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Reports for every trajectory iterate `0..=T` of a model over a scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub iterations: Vec<EvalReport>,
    /// Final-iteration poses per scene, in the model's canonical frame.
    pub predictions: Vec<Vec<Pose>>,
    /// Scenes whose capture volume fell back at some iteration.
    pub degenerate_scenes: usize,
}

impl ModelEval {
    /// The initialization stage alone.
    pub fn initial(&self) -> &EvalReport {
        &self.iterations[0]
    }

    pub fn last(&self) -> &EvalReport {
        self.iterations.last().expect("iteration 0 always present")
    }
}

/// Runs the model on every scene. Scene `i` draws its probe points from
/// stream `i` of `seed`, so results do not depend on scheduling.
pub fn evaluate_model<E: Elem>(
    model: &SparsePose,
    store: &ParamStore<E>,
    scenes: &[SceneSample],
    opts: &EvalOptions,
    seed: u64,
) -> Result<ModelEval> {
    let per_scene: Vec<(Vec<PoseMetrics>, Vec<Pose>, bool)> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let tape = Tape::<E>::new();
            let out = model.forward(Ctx::new(&tape, store), &s.views, PointSource::Sample(&mut rng))?;
            let traj = out.trajectory()?;
            let metrics = traj
                .iterates
                .iter()
                .map(|poses| evaluate(poses, &s.gt_poses, s.scene_scale, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok((metrics, traj.last().to_vec(), traj.degenerate))
        })
        .collect::<Result<_>>()?;
    let t = model.config.iterations;
    let mut iterations = vec![EvalReport::default(); t + 1];
    let mut degenerate_scenes = 0;
    let mut predictions = Vec::with_capacity(scenes.len());
    for (i, (metrics, last, degenerate)) in per_scene.into_iter().enumerate() {
        degenerate_scenes += usize::from(degenerate);
        for (k, m) in metrics.iter().enumerate() {
            iterations[k].push_scene(i, m);
        }
        predictions.push(last);
    }
    Ok(ModelEval {
        iterations,
        predictions,
        degenerate_scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose, Quaternion};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let q = Quaternion::from_axis_angle(axis, rng.gen_range(0.0..3.0));
        let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        Pose::new(q, t)
    }

    fn scene(rng: &mut impl Rng, c: usize) -> Vec<Pose> {
        (0..c).map(|_| random_pose(rng)).collect()
    }

    #[test]
    fn perfect_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = scene(&mut rng, 5);
        let m = evaluate(&gt, &gt, 2.0, &EvalOptions::default()).unwrap();
        assert_eq!(m.rot_acc, 1.0);
        assert_eq!(m.trans_acc, 1.0);
        assert!(m.rot_err_deg.iter().all(|&e| e == 0.0));
        assert_eq!(m.rot_err_deg.len(), 4);
    }

    #[test]
    fn counts_rotation_errors_against_threshold() {
        let gt = vec![Pose::IDENTITY; 4];
        let pred: Vec<Pose> = [0.0, 5.0, 10.0, 20.0]
            .iter()
            .map(|d: &f64| Pose::new(Quaternion::from_axis_angle(Vector3::z(), d.to_radians()), Vector3::zeros()))
            .collect();
        let m = evaluate(&pred, &gt, 1.0, &EvalOptions::default()).unwrap();
        assert_eq!(m.rot_acc, 2.0 / 3.0);
        for (e, want) in m.rot_err_deg.iter().zip([5.0, 10.0, 20.0]) {
            assert_relative_eq!(*e, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn invariant_to_global_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = scene(&mut rng, 6);
            let pred = scene(&mut rng, 6);
            let g = random_pose(&mut rng);
            let moved: Vec<Pose> = pred.iter().map(|p| compose(p, &g)).collect();
            let opts = EvalOptions::default();
            let a = evaluate(&pred, &gt, 1.5, &opts).unwrap();
            let b = evaluate(&moved, &gt, 1.5, &opts).unwrap();
            for (x, y) in a.rot_err_deg.iter().zip(&b.rot_err_deg) {
                assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in a.trans_err.iter().zip(&b.trans_err) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_consistent_translation_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = scene(&mut rng, 5);
        let pred = scene(&mut rng, 5);
        let s = 3.7;
        let scale = |v: &[Pose]| v.iter().map(|p| Pose::new(p.rotation, p.translation * s)).collect::<Vec<_>>();
        for centers in [false, true] {
            let opts = EvalOptions {
                camera_centers: centers,
                ..EvalOptions::default()
            };
            let a = evaluate(&pred, &gt, 1.2, &opts).unwrap();
            let b = evaluate(&scale(&pred), &scale(&gt), 1.2 * s, &opts).unwrap();
            for (x, y) in a.trans_err.iter().zip(&b.trans_err) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relabeling_non_anchor_cameras_permutes_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = scene(&mut rng, 5);
        let pred = scene(&mut rng, 5);
        let perm = [0, 3, 1, 4, 2];
        let pg: Vec<Pose> = perm.iter().map(|&i| gt[i]).collect();
        let pp: Vec<Pose> = perm.iter().map(|&i| pred[i]).collect();
        let a = evaluate(&pred, &gt, 1.0, &EvalOptions::default()).unwrap();
        let b = evaluate(&pp, &pg, 1.0, &EvalOptions::default()).unwrap();
        for (k, &i) in perm[1..].iter().enumerate() {
            assert_eq!(b.rot_err_deg[k], a.rot_err_deg[i - 1]);
            assert_eq!(b.trans_err[k], a.trans_err[i - 1]);
        }
        assert_eq!(a.rot_acc, b.rot_acc);
    }

    #[test]
    fn sim_align_removes_global_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = scene(&mut rng, 4);
        let pred: Vec<Pose> = gt.iter().map(|p| Pose::new(p.rotation, p.translation * 0.25)).collect();
        let plain = evaluate(&pred, &gt, 1.0, &EvalOptions::default()).unwrap();
        assert!(plain.trans_err.iter().any(|&e| e > 0.1));
        let opts = EvalOptions {
            sim_align: true,
            ..EvalOptions::default()
        };
        let aligned = evaluate(&pred, &gt, 1.0, &opts).unwrap();
        assert!(aligned.trans_err.iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn errors_in_range_and_sweep_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let gt = scene(&mut rng, 7);
            let pred = scene(&mut rng, 7);
            let m = evaluate(&pred, &gt, 1.0, &EvalOptions::default()).unwrap();
            assert!(m.rot_err_deg.iter().all(|&e| (0.0..=180.0).contains(&e)));
            assert!(m.trans_err.iter().all(|&e| e >= 0.0));
            let sweep = threshold_sweep(&pred, &gt, 1.0, &[0.0, 10.0, 15.0, 30.0, 90.0, 180.0]).unwrap();
            assert!(sweep.windows(2).all(|w| w[0].1 <= w[1].1));
            assert_eq!(sweep.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn zero_threshold_counts_exact_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = scene(&mut rng, 5);
        let mut pred = gt.clone();
        pred[2] = random_pose(&mut rng);
        let sweep = threshold_sweep(&pred, &gt, 1.0, &[0.0]).unwrap();
        assert_eq!(sweep[0].1, 3.0 / 4.0);
    }

    #[test]
    fn rejects_bad_input() {
        let gt = vec![Pose::IDENTITY; 3];
        assert!(matches!(
            evaluate(&gt[..2], &gt, 1.0, &EvalOptions::default()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(evaluate(&gt[..1], &gt[..1], 1.0, &EvalOptions::default()).is_err());
    }

    #[test]
    fn report_summary_by_count() {
        let mut r = EvalReport::default();
        let m3 = PoseMetrics {
            rot_err_deg: vec![5.0, 20.0],
            trans_err: vec![0.1, 0.3],
            rot_acc: 0.5,
            trans_acc: 0.5,
        };
        let m4 = PoseMetrics {
            rot_err_deg: vec![1.0, 2.0, 3.0],
            trans_err: vec![0.0, 0.0, 0.5],
            rot_acc: 1.0,
            trans_acc: 2.0 / 3.0,
        };
        r.push_scene(0, &m3);
        r.push_scene(1, &m4);
        let s = r.summary(&EvalOptions::default());
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].num_views, s[0].cameras, s[0].rot_acc), (3, 2, 0.5));
        assert_eq!((s[1].num_views, s[1].cameras, s[1].rot_acc), (4, 3, 1.0));
        assert_eq!(r.rot_acc(15.0), 4.0 / 5.0);
        assert_eq!(r.mean_rot_acc_by_count(15.0), 0.75);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("scene_id,C,cam_idx,rot_err_deg,trans_err_norm\n"));
        let p = dir.path().join("s.csv");
        r.write_summary_csv(&p, &EvalOptions::default()).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 4);
    }
}
