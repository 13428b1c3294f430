//! Core containers: motion maps, patch segmentations, cameras, and rigid
//! transforms.
//!
//! Conventions used everywhere in this crate:
//!
//! * Image axes: `y` is the row (top to bottom), `x` the column (left to
//!   right). Integer pixel coordinates name the pixel center.
//! * 3D axes follow the camera: +x right, +y down, +z away from the camera.
//! * Time index 0 is the reference frame. All trajectories live in the
//!   reference camera's coordinate frame.
//! * A pixel is "covered" when its trajectory was observed at the reference
//!   frame, i.e. `valid[y, x, 0]` is true. Pixels never seen by the capture
//!   pipeline carry an all-false validity column.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, Array4};

use crate::error::Error;
use crate::Result;

/// Frame spacing in seconds for clips sampled at 3 frames per second.
pub const DEFAULT_TIME_STEP: f64 = 1.0 / 3.0;

/// Segmentation label reserved for pixels outside every rigid patch.
pub const BACKGROUND_ID: u32 = 0;

/// Tolerance on `R^T R = I` and `det R = 1` for rotation matrices held in
/// memory at f64 precision.
pub const ROTATION_TOL: f64 = 1e-9;

/// Proper rigid motion of 3D space: `p -> R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform and rejects rotations that are not orthonormal
    /// with determinant one to within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let g = Self {
            rotation,
            translation,
        };
        g.validate()?;
        Ok(g)
    }

    /// Rotation about `axis` (need not be unit length) by `angle` radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        )
        .into_inner();
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: `other` acts first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest deviation from orthonormality: max over the entries of
    /// `R^T R - I` and `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut worst: f64 = (self.rotation.determinant() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.rotation.iter().chain(self.translation.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "rigid transform".into(),
                });
            }
        }
        let err = self.orthonormality_error();
        if err > ROTATION_TOL {
            return Err(Error::Validation {
                message: format!(
                    "rotation deviates from orthonormal by {err:.3e} (tolerance {ROTATION_TOL:.0e})"
                ),
            });
        }
        Ok(())
    }
}

/// Pinhole camera with per-frame world-to-camera poses.
///
/// Projection of a camera-frame point `(X, Y, Z)` with `Z > 0`:
/// `u = fx X / Z + cx`, `v = fy Y / Z + cy`. The pose for frame `t` maps
/// reference-frame coordinates into that frame's camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsics: Vec<RigidTransform>,
}

impl Camera {
    /// Static camera at the reference pose for `frames` time steps.
    pub fn fixed(fx: f64, fy: f64, cx: f64, cy: f64, frames: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            extrinsics: vec![RigidTransform::identity(); frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.extrinsics.len()
    }

    /// Image coordinates and depth of a camera-frame point. The caller
    /// decides what to do with non-positive depths.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        )
    }

    /// Camera-frame point for pixel center `(x, y)` at depth `z`.
    pub fn backproject(&self, x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) * z / self.fx, (y - self.cy) * z / self.fy, z)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite();
        if !ok {
            return Err(Error::NonFinite {
                context: "camera intrinsics".into(),
            });
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation {
                message: format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy),
            });
        }
        for (t, g) in self.extrinsics.iter().enumerate() {
            g.validate().map_err(|e| Error::Validation {
                message: format!("extrinsic pose {t}: {e}"),
            })?;
        }
        Ok(())
    }
}

/// Per-pixel rigid patch labels. 0 is background, positive ids are patches.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMap {
    pub ids: Array2<u32>,
}

impl SegMap {
    pub fn new(ids: Array2<u32>) -> Self {
        Self { ids }
    }

    pub fn height(&self) -> usize {
        self.ids.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.ids.shape()[1]
    }

    /// Distinct patch ids in ascending order, background excluded.
    pub fn patch_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.ids.iter().copied().filter(|&v| v != BACKGROUND_ID).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Violation messages for the labeling rules: ids from 1 to the maximum
    /// id must all be used at least once.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let max = self.ids.iter().copied().max().unwrap_or(0);
        if max > 0 {
            let mut seen = vec![false; max as usize + 1];
            for &v in self.ids.iter() {
                seen[v as usize] = true;
            }
            for id in 1..=max {
                if !seen[id as usize] {
                    violations.push(format!("patch id {id} is unused but below max id {max}"));
                }
            }
        }
        violations
    }
}

/// Dense per-pixel 3D trajectories over a short clip.
///
/// `positions` has shape `(H, W, T, 3)` and `valid` shape `(H, W, T)`.
/// Values at invalid entries are unspecified and must not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct MoMap {
    pub positions: Array4<f64>,
    pub valid: Array3<bool>,
    /// Reference-frame RGB in `[0, 1]`, shape `(H, W, 3)`.
    pub reference_colors: Option<Array3<f64>>,
    /// Seconds between consecutive frames. Not stored in the binary format;
    /// readers fall back to [`DEFAULT_TIME_STEP`].
    pub time_step: f64,
}

impl MoMap {
    /// Shape-checked constructor. Semantic rules (anchor mask, finiteness)
    /// are the business of [`validate_momap`].
    pub fn new(positions: Array4<f64>, valid: Array3<bool>) -> Result<Self> {
        let ps = positions.shape();
        let vs = valid.shape();
        if ps[0] != vs[0] || ps[1] != vs[1] || ps[2] != vs[2] || ps[3] != 3 {
            return Err(Error::ShapeMismatch {
                message: format!("positions {ps:?} incompatible with validity {vs:?}"),
            });
        }
        Ok(Self {
            positions,
            valid,
            reference_colors: None,
            time_step: DEFAULT_TIME_STEP,
        })
    }

    /// All-valid map at the origin, mostly useful as a test scaffold.
    pub fn zeros(height: usize, width: usize, frames: usize) -> Self {
        Self {
            positions: Array4::zeros((height, width, frames, 3)),
            valid: Array3::from_elem((height, width, frames), true),
            reference_colors: None,
            time_step: DEFAULT_TIME_STEP,
        }
    }

    pub fn height(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.positions.shape()[2]
    }

    pub fn pos(&self, y: usize, x: usize, t: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[[y, x, t, 0]],
            self.positions[[y, x, t, 1]],
            self.positions[[y, x, t, 2]],
        )
    }

    pub fn set_pos(&mut self, y: usize, x: usize, t: usize, p: Vector3<f64>) {
        self.positions[[y, x, t, 0]] = p.x;
        self.positions[[y, x, t, 1]] = p.y;
        self.positions[[y, x, t, 2]] = p.z;
    }

    /// True when the pixel was observed at the reference frame.
    pub fn is_covered(&self, y: usize, x: usize) -> bool {
        self.valid[[y, x, 0]]
    }

    pub fn covered_count(&self) -> usize {
        let (h, w) = (self.height(), self.width());
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| self.valid[[y, x, 0]])
            .count()
    }

    /// Checks that a segmentation image matches this map's grid.
    pub fn check_seg(&self, seg: &SegMap) -> Result<()> {
        if seg.height() != self.height() || seg.width() != self.width() {
            return Err(Error::ShapeMismatch {
                message: format!(
                    "segmentation {}x{} does not match map {}x{}",
                    seg.height(),
                    seg.width(),
                    self.height(),
                    self.width()
                ),
            });
        }
        Ok(())
    }
}

/// Every rule a well-formed map must satisfy, reported as human-readable
/// violations. An empty result means the map is valid.
pub fn validate_momap(m: &MoMap) -> Vec<String> {
    let mut violations = Vec::new();
    let ps = m.positions.shape();
    let vs = m.valid.shape();
    if ps[0] != vs[0] || ps[1] != vs[1] || ps[2] != vs[2] || ps[3] != 3 {
        violations.push(format!(
            "positions shape {ps:?} incompatible with validity shape {vs:?}"
        ));
        return violations;
    }
    let (h, w, t) = (ps[0], ps[1], ps[2]);
    if h == 0 || w == 0 || t == 0 {
        violations.push(format!("degenerate dimensions {h}x{w}x{t}"));
        return violations;
    }
    if !(m.time_step.is_finite() && m.time_step > 0.0) {
        violations.push(format!("time step {} is not positive and finite", m.time_step));
    }

    for y in 0..h {
        for x in 0..w {
            let covered = m.valid[[y, x, 0]];
            for k in 0..t {
                if m.valid[[y, x, k]] {
                    if !covered {
                        violations.push(format!(
                            "pixel ({x}, {y}) valid at frame {k} but unanchored at frame 0"
                        ));
                        break;
                    }
                    for c in 0..3 {
                        if !m.positions[[y, x, k, c]].is_finite() {
                            violations.push(format!(
                                "non-finite position at pixel ({x}, {y}) frame {k} channel {c}"
                            ));
                        }
                    }
                }
            }
        }
    }

    if let Some(colors) = &m.reference_colors {
        let cs = colors.shape();
        if cs != [h, w, 3] {
            violations.push(format!("color shape {cs:?}, expected [{h}, {w}, 3]"));
        } else {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = colors[[y, x, c]];
                        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                            violations.push(format!(
                                "color out of range at pixel ({x}, {y}) channel {c}: {v}"
                            ));
                        }
                    }
                }
            }
        }
    }
    violations
}

/// Applies a rigid motion to every trajectory point, producing the same map
/// as seen from a transformed reference frame. Validity is untouched.
pub fn apply_rigid(m: &MoMap, g: &RigidTransform) -> Result<MoMap> {
    g.validate()?;
    let violations = validate_momap(m);
    if !violations.is_empty() {
        return Err(Error::Validation {
            message: violations.join("; "),
        });
    }
    let mut out = m.clone();
    let (h, w, t) = (m.height(), m.width(), m.frames());
    for y in 0..h {
        for x in 0..w {
            for k in 0..t {
                // Invalid entries are transformed too; their contents stay
                // unspecified either way.
                let p = g.apply_point(&m.pos(y, x, k));
                out.set_pos(y, x, k, p);
            }
        }
    }
    Ok(out)
}
