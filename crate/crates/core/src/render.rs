//! Reprojection of a trajectory map into per-frame color, segmentation and
//! depth images with an explicit hole mask.
//!
//! Every valid map entry is moved by that frame's camera pose, projected
//! through the pinhole model, and splatted as a closed disc of the given
//! radius. Overlaps resolve by z-buffer: the smaller camera-space depth
//! wins, and among equal depths the splat from the lower source pixel
//! index (row-major) is kept. Pixels no splat reaches are holes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::Error;
use crate::types::{validate_momap, Camera, MoMap, SegMap};
use crate::Result;

/// Segmentation value marking a hole. Real patch ids are dense from 0
/// (background) upward and never reach this.
pub const HOLE_SEG: u32 = u32::MAX;

/// One rendered frame. `hole`, infinite `depth` and `HOLE_SEG` mark the
/// same pixels; holes are black in `color`.
#[derive(Debug, Clone)]
pub struct PartialFrame {
    pub color: Array3<f64>,
    pub seg: Array2<u32>,
    pub depth: Array2<f64>,
    pub hole: Array2<bool>,
}

impl PartialFrame {
    fn blank(h: usize, w: usize) -> Self {
        Self {
            color: Array3::zeros((h, w, 3)),
            seg: Array2::from_elem((h, w), HOLE_SEG),
            depth: Array2::from_elem((h, w), f64::INFINITY),
            hole: Array2::from_elem((h, w), true),
        }
    }

    pub fn height(&self) -> usize {
        self.color.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.color.shape()[1]
    }
}

/// Fraction of non-hole pixels per frame.
pub fn coverage(frames: &[PartialFrame]) -> Vec<f64> {
    frames
        .iter()
        .map(|f| {
            let total = f.hole.len();
            let holes = f.hole.iter().filter(|&&h| h).count();
            (total - holes) as f64 / total as f64
        })
        .collect()
}

/// Renders at the map's own resolution.
pub fn render(
    m: &MoMap,
    seg: &SegMap,
    cam: &Camera,
    splat_radius: f64,
) -> Result<Vec<PartialFrame>> {
    render_sized(m, seg, cam, splat_radius, m.height(), m.width())
}

/// Renders into `out_h` x `out_w` images, which need not match the map.
pub fn render_sized(
    m: &MoMap,
    seg: &SegMap,
    cam: &Camera,
    splat_radius: f64,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<PartialFrame>> {
    let problems = validate_momap(m);
    if !problems.is_empty() {
        return Err(Error::Validation {
            message: problems.join("; "),
        });
    }
    m.check_seg(seg)?;
    cam.validate()?;
    if cam.frames() != m.frames() {
        return Err(Error::ShapeMismatch {
            message: format!(
                "camera has {} poses for {} frames",
                cam.frames(),
                m.frames()
            ),
        });
    }
    if !(splat_radius.is_finite() && splat_radius >= 0.0) {
        return Err(Error::Validation {
            message: format!("splat radius {splat_radius} out of range"),
        });
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Validation {
            message: "output size is degenerate".into(),
        });
    }
    let colors = m.reference_colors.as_ref().ok_or(Error::MissingColors)?;

    let (h, w) = (m.height(), m.width());
    let r2 = splat_radius * splat_radius;
    let mut frames = Vec::with_capacity(m.frames());
    for k in 0..m.frames() {
        let pose = &cam.extrinsics[k];
        let mut frame = PartialFrame::blank(out_h, out_w);
        for y in 0..h {
            for x in 0..w {
                if !m.valid[[y, x, k]] {
                    continue;
                }
                let p = pose.apply_point(&m.pos(y, x, k));
                if p.z <= 0.0 {
                    continue;
                }
                let (u, v, z) = cam.project(&p);
                splat(&mut frame, u, v, z, splat_radius, r2, |f, iy, ix| {
                    f.depth[[iy, ix]] = z;
                    f.hole[[iy, ix]] = false;
                    f.seg[[iy, ix]] = seg.ids[[y, x]];
                    for c in 0..3 {
                        f.color[[iy, ix, c]] = colors[[y, x, c]];
                    }
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Visits every integer pixel whose center lies within the closed disc
/// and passes the depth test. Strict comparison keeps the first writer
/// on exact depth ties, which is the lowest source index because pixels
/// are walked row-major.
fn splat<F: FnMut(&mut PartialFrame, usize, usize)>(
    frame: &mut PartialFrame,
    u: f64,
    v: f64,
    z: f64,
    r: f64,
    r2: f64,
    mut write: F,
) {
    let (h, w) = (frame.height() as i64, frame.width() as i64);
    let x0 = (u - r).ceil() as i64;
    let x1 = (u + r).floor() as i64;
    let y0 = (v - r).ceil() as i64;
    let y1 = (v + r).floor() as i64;
    for iy in y0.max(0)..=y1.min(h - 1) {
        for ix in x0.max(0)..=x1.min(w - 1) {
            let dx = ix as f64 - u;
            let dy = iy as f64 - v;
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let (iy, ix) = (iy as usize, ix as usize);
            if z < frame.depth[[iy, ix]] {
                write(frame, iy, ix);
            }
        }
    }
}

/// Depth beyond this saturates the 16-bit millimeter channel; 65535 is
/// reserved for holes.
const DEPTH_MM_MAX: u16 = 65534;

/// Writes `frame_{k:04}.ppm` (P6 color), `frame_{k:04}.pgm` (P5 16-bit
/// big-endian depth in millimeters, holes at 65535) and
/// `frame_{k:04}.seg` (raw little-endian u32 ids) for every frame.
pub fn write_frames(frames: &[PartialFrame], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        write_ppm(f, &dir.join(format!("frame_{k:04}.ppm")))?;
        write_pgm(f, &dir.join(format!("frame_{k:04}.pgm")))?;
        write_seg(f, &dir.join(format!("frame_{k:04}.seg")))?;
    }
    Ok(())
}

fn write_ppm(f: &PartialFrame, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", f.width(), f.height())?;
    for v in f.color.iter() {
        out.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
    }
    out.flush()?;
    Ok(())
}

fn write_pgm(f: &PartialFrame, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", f.width(), f.height())?;
    for (d, &hole) in f.depth.iter().zip(f.hole.iter()) {
        let mm = if hole {
            u16::MAX
        } else {
            (d * 1000.0).round().clamp(0.0, DEPTH_MM_MAX as f64) as u16
        };
        out.write_all(&mm.to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn write_seg(f: &PartialFrame, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for id in f.seg.iter() {
        out.write_all(&id.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}
