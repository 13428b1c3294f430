//! Synthetic rigid-body scenes with analytically known trajectories.
//!
//! A scene is a static background plane plus rigid bodies, each occupying a
//! pixel region of the reference frame at a fixed depth and moving by a
//! closed-form rigid motion. Because every trajectory is exact, generated
//! maps double as ground truth for the optimizer and every metric.
//!
//! Scene documents are JSON; see the repository README for the schema.

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{Camera, MoMap, SegMap, DEFAULT_TIME_STEP};
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

/// Intrinsics for the reference camera, plus optional per-frame poses for
/// downstream rendering. Omitted poses mean a static camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsics: Option<Vec<PoseSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSpec {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// Axis-aligned box of pixels; `x`, `y` is the top-left corner.
    Rect {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    /// Explicit `[x, y]` pixel list.
    Pixels { pixels: Vec<[usize; 2]> },
}

impl Region {
    fn pixels(&self) -> Vec<(usize, usize)> {
        match self {
            Region::Rect {
                x,
                y,
                width,
                height,
            } => {
                let mut out = Vec::with_capacity(width * height);
                for yy in *y..y + height {
                    for xx in *x..x + width {
                        out.push((yy, xx));
                    }
                }
                out
            }
            Region::Pixels { pixels } => pixels.iter().map(|p| (p[1], p[0])).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// Constant 3D velocity in meters per second.
    Linear { velocity: [f64; 3] },
    /// Rotation about an axis line at `angular_velocity` rad/s while
    /// advancing `pitch` meters along the axis per radian.
    Screw {
        axis_point: [f64; 3],
        axis_dir: [f64; 3],
        angular_velocity: f64,
        pitch: f64,
    },
    /// Piecewise-linear translation given as (seconds, offset) samples.
    /// The first waypoint must sit at time 0 with a zero offset; the last
    /// offset holds beyond the final time.
    Waypoints { waypoints: Vec<Waypoint> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub offset: [f64; 3],
}

impl Motion {
    fn params(&self) -> Vec<f64> {
        match self {
            Motion::Linear { velocity } => velocity.to_vec(),
            Motion::Screw {
                axis_point,
                axis_dir,
                angular_velocity,
                pitch,
            } => {
                let mut v = axis_point.to_vec();
                v.extend_from_slice(axis_dir);
                v.push(*angular_velocity);
                v.push(*pitch);
                v
            }
            Motion::Waypoints { waypoints } => waypoints
                .iter()
                .flat_map(|w| {
                    let mut v = vec![w.time];
                    v.extend_from_slice(&w.offset);
                    v
                })
                .collect(),
        }
    }

    fn validate(&self, body: usize) -> Result<()> {
        for v in self.params() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("motion parameters of body {body}"),
                });
            }
        }
        match self {
            Motion::Screw { axis_dir, .. } => {
                let n = Vector3::from(*axis_dir).norm();
                if n < 1e-12 {
                    return Err(Error::Validation {
                        message: format!("body {body}: screw axis direction is zero"),
                    });
                }
            }
            Motion::Waypoints { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Validation {
                        message: format!("body {body}: empty waypoint list"),
                    });
                }
                let first = &waypoints[0];
                if first.time != 0.0 || first.offset != [0.0; 3] {
                    return Err(Error::Validation {
                        message: format!(
                            "body {body}: waypoints must start at time 0 with zero offset"
                        ),
                    });
                }
                for pair in waypoints.windows(2) {
                    if pair[1].time <= pair[0].time {
                        return Err(Error::Validation {
                            message: format!("body {body}: waypoint times must increase"),
                        });
                    }
                }
            }
            Motion::Linear { .. } => {}
        }
        Ok(())
    }

    /// Position of a point with rest position `base` after `secs` seconds.
    pub fn at(&self, base: &Vector3<f64>, secs: f64) -> Vector3<f64> {
        match self {
            Motion::Linear { velocity } => base + Vector3::from(*velocity) * secs,
            Motion::Screw {
                axis_point,
                axis_dir,
                angular_velocity,
                pitch,
            } => {
                let a = Vector3::from(*axis_point);
                let dir = nalgebra::Unit::new_normalize(Vector3::from(*axis_dir));
                let theta = angular_velocity * secs;
                let rot = nalgebra::Rotation3::from_axis_angle(&dir, theta);
                a + rot * (base - a) + dir.into_inner() * (pitch * theta)
            }
            Motion::Waypoints { waypoints } => {
                let last = waypoints.last().unwrap();
                if secs >= last.time {
                    return base + Vector3::from(last.offset);
                }
                let mut offset = Vector3::from(waypoints[0].offset);
                for pair in waypoints.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    if secs <= b.time {
                        let u = (secs - a.time) / (b.time - a.time);
                        offset = Vector3::from(a.offset).lerp(&Vector3::from(b.offset), u);
                        break;
                    }
                }
                base + offset
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidBodySpec {
    pub region: Region,
    /// Depth of the body plane at the reference frame, meters.
    pub depth: f64,
    pub motion: Motion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: GridSpec,
    #[serde(default = "default_time_step")]
    pub time_step: f64,
    #[serde(default = "default_background_depth")]
    pub background_depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub seed: u64,
    pub bodies: Vec<RigidBodySpec>,
}

fn default_time_step() -> f64 {
    DEFAULT_TIME_STEP
}

fn default_background_depth() -> f64 {
    5.0
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn camera(&self) -> Camera {
        let (h, w, t) = (self.grid.height, self.grid.width, self.grid.frames);
        match &self.camera {
            Some(c) => {
                let extrinsics = match &c.extrinsics {
                    Some(poses) => poses
                        .iter()
                        .map(|p| crate::types::RigidTransform {
                            rotation: nalgebra::Matrix3::from_fn(|r, c2| p.rotation[r][c2]),
                            translation: Vector3::from(p.translation),
                        })
                        .collect(),
                    None => vec![crate::types::RigidTransform::identity(); t],
                };
                Camera {
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    extrinsics,
                }
            }
            None => Camera::fixed(
                h.max(w) as f64,
                h.max(w) as f64,
                (w as f64 - 1.0) / 2.0,
                (h as f64 - 1.0) / 2.0,
                t,
            ),
        }
    }
}

/// Builds the ground-truth map, segmentation, and camera for a scene.
/// Deterministic: colors are the only randomized quantity and depend solely
/// on the seed.
pub fn generate(spec: &SceneSpec) -> Result<(MoMap, SegMap, Camera)> {
    let (h, w, t) = (spec.grid.height, spec.grid.width, spec.grid.frames);
    if h == 0 || w == 0 {
        return Err(Error::Validation {
            message: format!("empty grid {h}x{w}"),
        });
    }
    if t < 2 {
        return Err(Error::Validation {
            message: format!("need at least 2 frames, got {t}"),
        });
    }
    if !(spec.time_step.is_finite() && spec.time_step > 0.0) {
        return Err(Error::Validation {
            message: format!("time step {} must be positive", spec.time_step),
        });
    }
    if !(spec.background_depth.is_finite() && spec.background_depth > 0.0) {
        return Err(Error::Validation {
            message: format!("background depth {} must be positive", spec.background_depth),
        });
    }
    let cam = spec.camera();
    cam.validate()?;
    if cam.frames() != t {
        return Err(Error::ShapeMismatch {
            message: format!("camera has {} poses for {} frames", cam.frames(), t),
        });
    }

    let mut ids = Array2::<u32>::zeros((h, w));
    for (i, body) in spec.bodies.iter().enumerate() {
        if !(body.depth.is_finite() && body.depth > 0.0) {
            return Err(Error::Validation {
                message: format!("body {i}: depth {} must be positive", body.depth),
            });
        }
        body.motion.validate(i)?;
        let pixels = body.region.pixels();
        if pixels.is_empty() {
            return Err(Error::Validation {
                message: format!("body {i}: empty region"),
            });
        }
        for (y, x) in pixels {
            if y >= h || x >= w {
                return Err(Error::Validation {
                    message: format!("body {i}: pixel ({x}, {y}) outside {w}x{h} grid"),
                });
            }
            let prev = ids[[y, x]];
            if prev != 0 {
                return Err(Error::Validation {
                    message: format!(
                        "bodies {} and {i} overlap at pixel ({x}, {y})",
                        prev - 1
                    ),
                });
            }
            ids[[y, x]] = i as u32 + 1;
        }
    }

    // One solid color per body plus one for the background, kept away from
    // pure black so rendered holes stay distinguishable.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_colors = spec.bodies.len() + 1;
    let palette: Vec<[f64; 3]> = (0..n_colors)
        .map(|_| {
            [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ]
        })
        .collect();

    let mut positions = Array4::<f64>::zeros((h, w, t, 3));
    let mut colors = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let id = ids[[y, x]] as usize;
            let depth = if id == 0 {
                spec.background_depth
            } else {
                spec.bodies[id - 1].depth
            };
            let base = cam.backproject(x as f64, y as f64, depth);
            for k in 0..t {
                let p = if id == 0 {
                    base
                } else {
                    spec.bodies[id - 1]
                        .motion
                        .at(&base, k as f64 * spec.time_step)
                };
                positions[[y, x, k, 0]] = p.x;
                positions[[y, x, k, 1]] = p.y;
                positions[[y, x, k, 2]] = p.z;
            }
            for c in 0..3 {
                colors[[y, x, c]] = palette[id][c];
            }
        }
    }

    let mut m = MoMap::new(positions, Array3::from_elem((h, w, t), true))?;
    m.reference_colors = Some(colors);
    m.time_step = spec.time_step;
    Ok((m, SegMap::new(ids), cam))
}

/// One pixel's hidden time range, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionSpan {
    pub x: usize,
    pub y: usize,
    pub t_start: usize,
    pub t_end: usize,
}

/// Marks the given entries invalid and zeroes the positions underneath.
/// The reference frame can never be hidden; a span touching t=0 is an
/// error so every trajectory keeps its anchor.
pub fn occlude(m: &MoMap, spans: &[OcclusionSpan]) -> Result<MoMap> {
    let (h, w, t) = (m.height(), m.width(), m.frames());
    let mut out = m.clone();
    for s in spans {
        if s.y >= h || s.x >= w {
            return Err(Error::Validation {
                message: format!("occlusion pixel ({}, {}) outside {w}x{h} grid", s.x, s.y),
            });
        }
        if s.t_start == 0 {
            return Err(Error::ReferenceOcclusion { x: s.x, y: s.y });
        }
        if s.t_start > s.t_end || s.t_end >= t {
            return Err(Error::Validation {
                message: format!(
                    "occlusion span {}..={} invalid for {t} frames",
                    s.t_start, s.t_end
                ),
            });
        }
        for k in s.t_start..=s.t_end {
            out.valid[[s.y, s.x, k]] = false;
            for c in 0..3 {
                out.positions[[s.y, s.x, k, c]] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Hides each non-reference entry of every covered pixel independently with
/// probability `fraction`. Same seed, same holes.
pub fn occlude_random(m: &MoMap, fraction: f64, seed: u64) -> Result<MoMap> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation {
            message: format!("occlusion fraction {fraction} outside [0, 1]"),
        });
    }
    let (h, w, t) = (m.height(), m.width(), m.frames());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spans = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            for k in 1..t {
                if rng.random::<f64>() < fraction {
                    spans.push(OcclusionSpan {
                        x,
                        y,
                        t_start: k,
                        t_end: k,
                    });
                }
            }
        }
    }
    occlude(m, &spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_spec() -> SceneSpec {
        SceneSpec {
            grid: GridSpec {
                height: 8,
                width: 8,
                frames: 3,
            },
            time_step: 1.0,
            background_depth: 5.0,
            camera: None,
            seed: 0,
            bodies: vec![RigidBodySpec {
                region: Region::Rect {
                    x: 2,
                    y: 2,
                    width: 3,
                    height: 3,
                },
                depth: 2.0,
                motion: Motion::Linear {
                    velocity: [0.1, 0.0, 0.0],
                },
            }],
        }
    }

    #[test]
    fn linear_motion_is_exact() {
        let (m, seg, _) = generate(&linear_spec()).unwrap();
        assert_eq!(seg.ids[[3, 3]], 1);
        let p0 = m.pos(3, 3, 0);
        for k in 0..3 {
            let p = m.pos(3, 3, k);
            assert_relative_eq!(p.x, p0.x + 0.1 * k as f64, epsilon = 1e-15);
            assert_eq!(p.y, p0.y);
            assert_eq!(p.z, p0.z);
        }
        // Background never moves.
        assert_eq!(m.pos(0, 0, 0), m.pos(0, 0, 2));
    }

    #[test]
    fn zero_velocity_body_is_static() {
        let mut spec = linear_spec();
        spec.bodies[0].motion = Motion::Linear {
            velocity: [0.0; 3],
        };
        let (m, _, _) = generate(&spec).unwrap();
        for k in 1..3 {
            assert_eq!(m.pos(3, 3, k), m.pos(3, 3, 0));
        }
    }

    #[test]
    fn screw_quarter_turns_preserve_radius_and_rigidity() {
        let mut spec = linear_spec();
        spec.bodies[0].motion = Motion::Screw {
            axis_point: [0.0, 0.0, 2.0],
            axis_dir: [0.0, 0.0, 1.0],
            angular_velocity: std::f64::consts::FRAC_PI_2,
            pitch: 0.0,
        };
        spec.grid.frames = 5;
        let (m, seg, _) = generate(&spec).unwrap();

        let body: Vec<(usize, usize)> = (0..8)
            .flat_map(|y| (0..8).map(move |x| (y, x)))
            .filter(|&(y, x)| seg.ids[[y, x]] == 1)
            .collect();
        let axis = Vector3::new(0.0, 0.0, 2.0);
        for &(y, x) in &body {
            let r0 = (m.pos(y, x, 0) - axis).xy().norm();
            for k in 1..5 {
                let rk = (m.pos(y, x, k) - axis).xy().norm();
                assert_relative_eq!(r0, rk, epsilon = 1e-12);
            }
            // Quarter turn per step: frame 4 closes the full circle.
            assert_relative_eq!(
                (m.pos(y, x, 4) - m.pos(y, x, 0)).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
        for &(ya, xa) in &body {
            for &(yb, xb) in &body {
                let d0 = (m.pos(ya, xa, 0) - m.pos(yb, xb, 0)).norm();
                for k in 1..5 {
                    let dk = (m.pos(ya, xa, k) - m.pos(yb, xb, k)).norm();
                    assert!((d0 - dk).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn overlap_and_bounds_are_rejected() {
        let mut spec = linear_spec();
        spec.bodies.push(spec.bodies[0].clone());
        assert!(matches!(
            generate(&spec),
            Err(Error::Validation { message }) if message.contains("overlap")
        ));

        let mut spec = linear_spec();
        spec.bodies[0].region = Region::Rect {
            x: 6,
            y: 6,
            width: 4,
            height: 2,
        };
        assert!(matches!(
            generate(&spec),
            Err(Error::Validation { message }) if message.contains("outside")
        ));
    }

    #[test]
    fn occlusion_masks_the_requested_interval() {
        let (m, _, _) = generate(&linear_spec()).unwrap();
        let out = occlude(
            &m,
            &[OcclusionSpan {
                x: 3,
                y: 3,
                t_start: 1,
                t_end: 1,
            }],
        )
        .unwrap();
        assert!(out.valid[[3, 3, 0]]);
        assert!(!out.valid[[3, 3, 1]]);
        assert!(out.valid[[3, 3, 2]]);
        assert_eq!(out.pos(3, 3, 1), Vector3::zeros());

        assert!(matches!(
            occlude(
                &m,
                &[OcclusionSpan {
                    x: 3,
                    y: 3,
                    t_start: 0,
                    t_end: 1,
                }]
            ),
            Err(Error::ReferenceOcclusion { x: 3, y: 3 })
        ));
        assert_eq!(occlude(&m, &[]).unwrap(), m);
    }

    #[test]
    fn random_occlusion_is_seed_deterministic() {
        let mut spec = linear_spec();
        spec.grid.frames = 10;
        let (m, _, _) = generate(&spec).unwrap();
        let a = occlude_random(&m, 0.3, 42).unwrap();
        let b = occlude_random(&m, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let c = occlude_random(&m, 0.3, 43).unwrap();
        assert_ne!(a.valid, c.valid);
        // Anchors always survive.
        for y in 0..8 {
            for x in 0..8 {
                assert!(a.valid[[y, x, 0]]);
            }
        }
    }

    #[test]
    fn generate_is_reproducible() {
        let spec = linear_spec();
        let (a, sa, ca) = generate(&spec).unwrap();
        let (b, sb, cb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn waypoint_motion_interpolates_and_holds() {
        let mut spec = linear_spec();
        spec.grid.frames = 4;
        spec.bodies[0].motion = Motion::Waypoints {
            waypoints: vec![
                Waypoint {
                    time: 0.0,
                    offset: [0.0; 3],
                },
                Waypoint {
                    time: 2.0,
                    offset: [0.4, 0.0, 0.0],
                },
            ],
        };
        let (m, _, _) = generate(&spec).unwrap();
        let p0 = m.pos(3, 3, 0);
        assert_relative_eq!(m.pos(3, 3, 1).x, p0.x + 0.2, epsilon = 1e-15);
        assert_relative_eq!(m.pos(3, 3, 2).x, p0.x + 0.4, epsilon = 1e-15);
        // Past the last waypoint the offset freezes.
        assert_relative_eq!(m.pos(3, 3, 3).x, p0.x + 0.4, epsilon = 1e-15);
    }
}
