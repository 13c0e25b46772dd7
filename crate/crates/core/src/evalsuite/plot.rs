use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Pose;

use super::{csv_error, csv_writer};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 30.0;

/// Writes camera centers projected to the x-y plane as an SVG (ground truth
/// black, predictions red, the first camera of each set green) and the same
/// points as a CSV next to it. Returns the CSV path.
pub fn plot_cameras(pred: &[Pose], gt: &[Pose], svg_path: &Path) -> Result<PathBuf> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs ground-truth poses",
            left: pred.len(),
            right: gt.len(),
        });
    }
    let series: Vec<(&str, Vec<(f64, f64)>)> = [("gt", gt), ("pred", pred)]
        .into_iter()
        .map(|(name, poses)| {
            let pts = poses
                .iter()
                .map(|p| {
                    let c = p.center();
                    (c.x, c.y)
                })
                .collect();
            (name, pts)
        })
        .collect();

    let all = series.iter().flat_map(|(_, p)| p.iter().copied());
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    if lo_x > hi_x {
        (lo_x, hi_x, lo_y, hi_y) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let k = (SIZE - 2.0 * MARGIN) / span;
    // SVG y grows downwards; flip so +y is up.
    let map = |(x, y): (f64, f64)| (MARGIN + (x - lo_x) * k, SIZE - MARGIN - (y - lo_y) * k);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (name, pts) in &series {
        let colour = if *name == "gt" { "black" } else { "red" };
        let _ = writeln!(svg, r#"<g id="{name}">"#);
        for (i, &p) in pts.iter().enumerate() {
            if !(p.0.is_finite() && p.1.is_finite()) {
                continue;
            }
            let (x, y) = map(p);
            let fill = if i == 0 { "green" } else { colour };
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.3}" cy="{y:.3}" r="5" fill="{fill}" stroke="{colour}" stroke-width="1.5"><title>{name} {i}</title></circle>"#
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))?;

    let csv_path = svg_path.with_extension("csv");
    let mut w = csv_writer(&csv_path)?;
    let io = |e: csv::Error| csv_error(&csv_path, e);
    w.write_record(["set", "cam_idx", "x", "y"]).map_err(io)?;
    for (name, pts) in &series {
        for (i, (x, y)) in pts.iter().enumerate() {
            w.write_record([name.to_string(), i.to_string(), x.to_string(), y.to_string()])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn writes_svg_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let gt: Vec<Pose> = (0..4)
            .map(|i| Pose::look_at(Vector3::new(i as f64, 2.0, 1.0), Vector3::zeros(), Vector3::z()))
            .collect();
        let svg = dir.path().join("cams.svg");
        let csv = plot_cameras(&gt, &gt, &svg).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
        assert_eq!(circles.len(), 8);
        // Identical sets give coincident markers.
        for i in 0..4 {
            let (a, b) = (circles[i], circles[i + 4]);
            assert_eq!(a.attribute("cx"), b.attribute("cx"));
            assert_eq!(a.attribute("cy"), b.attribute("cy"));
        }
        assert_eq!(circles[0].attribute("fill"), Some("green"));
        assert_eq!(circles[5].attribute("fill"), Some("red"));
        assert_eq!(circles[1].attribute("fill"), Some("black"));
        assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 1 + 8);
    }

    #[test]
    fn unwritable_path() {
        let p = vec![Pose::IDENTITY; 2];
        let err = plot_cameras(&p, &p, Path::new("/nonexistent/dir/x.svg")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
