use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::SceneSample;
use crate::camera::{estimate_capture_volume, CameraView, Image, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion};

pub const POSE_HEADER: &str = "frame_id,qw,qx,qy,qz,tx,ty,tz,fx,fy,cx,cy";

/// Largest `| |q| - 1 |` silently repaired on load.
const QUAT_NORM_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub frame_id: String,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses a pose CSV. Quaternions within `1e-3` of unit norm are normalized
/// (with a warning); others are rejected.
pub fn load_pose_file(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POSE_HEADER => {}
        Some((_, h)) => return Err(parse_err(path, 1, format!("expected header `{POSE_HEADER}`, got `{h}`"))),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 12 {
            return Err(parse_err(path, n, format!("expected 12 fields, got {}", cols.len())));
        }
        let mut v = [0.0; 11];
        for (k, s) in cols[1..].iter().enumerate() {
            let x: f64 = s
                .parse()
                .map_err(|_| parse_err(path, n, format!("field {} is not a number: `{s}`", k + 2)))?;
            if !x.is_finite() {
                return Err(parse_err(path, n, format!("field {} is not finite", k + 2)));
            }
            v[k] = x;
        }
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let dev = (q.norm() - 1.0).abs();
        if dev > QUAT_NORM_SLACK {
            return Err(parse_err(path, n, format!("quaternion norm {} is not unit", q.norm())));
        }
        if dev > 1e-12 {
            log::warn!("{}:{n}: normalizing quaternion with norm {}", path.display(), q.norm());
        }
        let intrinsics = Intrinsics::new(v[7], v[8], v[9], v[10]).map_err(|e| parse_err(path, n, e.to_string()))?;
        out.push(PoseRecord {
            frame_id: cols[0].to_string(),
            pose: Pose::new(q, Vector3::new(v[4], v[5], v[6])).normalized()?,
            intrinsics,
        });
    }
    Ok(out)
}

/// Writes shortest round-trip decimal forms, so reading back is lossless.
pub fn write_pose_file(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let mut s = String::from(POSE_HEADER);
    s.push('\n');
    for r in records {
        let q = r.pose.rotation;
        let t = r.pose.translation;
        let k = &r.intrinsics;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame_id, q.w, q.x, q.y, q.z, t.x, t.y, t.z, k.fx, k.fy, k.cx, k.cy
        )
        .expect("writing to a String");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Binary PPM (P6, 8-bit).
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, 1, "truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(parse_err(path, 1, format!("unsupported magic `{}`", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, 1, format!("bad header value `{s}`")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(parse_err(path, 1, format!("unsupported maxval {max}")));
    }
    let payload = bytes.get(pos..pos + w * h * 3).ok_or_else(|| parse_err(path, 1, "truncated pixel data"))?;
    Ok(Image {
        height: h,
        width: w,
        data: payload.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Directory with `poses.csv`, `view_NNN.ppm` and a `meta` key=value file.
/// Image file stem of view `i`; also its frame id in `poses.csv`.
fn view_stem(i: usize) -> String {
    format!("view_{i:03}")
}

pub fn write_scene_bundle(dir: &Path, scene: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: Vec<PoseRecord> = scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| PoseRecord {
            frame_id: view_stem(i),
            pose: v.pose,
            intrinsics: v.intrinsics,
        })
        .collect();
    write_pose_file(&dir.join("poses.csv"), &records)?;
    for (i, v) in scene.views.iter().enumerate() {
        write_ppm(&dir.join(format!("{}.ppm", view_stem(i))), &v.image)?;
    }
    let meta = format!(
        "num_views = {}\ncategory_id = {}\nscene_scale = {}\ndegenerate = {}\n",
        scene.num_views(),
        scene.category_id,
        scene.scene_scale,
        scene.degenerate
    );
    let p = dir.join("meta");
    fs::write(&p, meta).map_err(|e| Error::io(&p, e))
}

pub fn load_scene_bundle(dir: &Path) -> Result<SceneSample> {
    let records = load_pose_file(&dir.join("poses.csv"))?;
    let meta_path = dir.join("meta");
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut category_id = 0;
    let mut scene_scale = None;
    for (i, line) in meta.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(&meta_path, i + 1, "expected key = value"))?;
        let bad = || parse_err(&meta_path, i + 1, format!("bad value for `{}`", k.trim()));
        match k.trim() {
            "category_id" => category_id = v.trim().parse().map_err(|_| bad())?,
            "scene_scale" => scene_scale = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let views = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(CameraView {
                intrinsics: r.intrinsics,
                pose: r.pose,
                image: read_ppm(&dir.join(format!("{}.ppm", view_stem(i))))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gt: Vec<Pose> = records.iter().map(|r| r.pose).collect();
    let volume = estimate_capture_volume(&gt)?;
    Ok(SceneSample {
        views,
        world_poses: gt.clone(),
        gt_poses: gt,
        scene_scale: scene_scale.unwrap_or(volume.radius),
        degenerate: volume.degenerate,
        category_id,
    })
}
