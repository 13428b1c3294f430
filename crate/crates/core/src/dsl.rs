//! A nine-word motion vocabulary over segmentation patches.
//!
//! Each patch's net centroid displacement between the first and last
//! frame is quantized per axis into one of three words. Axes follow the
//! camera: +x is right, +y is down, +z is away from the viewer, so the
//! words are
//!
//! ```text
//!   x:  left    stay  right
//!   y:  up      stay  down
//!   z:  forward stay  backward
//! ```
//!
//! Displacements within the closed band `|d| <= eps` read "stay". The
//! JSON form round-trips losslessly; the strict parser pins down the
//! offending path on any malformed document, the lenient one skips
//! unknown fields with warnings. Grounding paints each patch's sign
//! triple back onto the pixel grid.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::types::{MoMap, SegMap};
use crate::Result;

const WORDS: [[&str; 3]; 3] = [
    ["left", "stay", "right"],
    ["up", "stay", "down"],
    ["forward", "stay", "backward"],
];

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

fn word_for(axis: usize, sign: i8) -> &'static str {
    WORDS[axis][(sign + 1) as usize]
}

fn sign_for(axis: usize, word: &str) -> Option<i8> {
    WORDS[axis].iter().position(|&w| w == word).map(|i| i as i8 - 1)
}

/// Net motion of one patch: per-axis signs in {-1, 0, +1} plus the
/// unquantized displacement length in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMotion {
    pub patch_id: u32,
    pub x: i8,
    pub y: i8,
    pub z: i8,
    pub magnitude: f64,
}

impl PatchMotion {
    pub fn signs(&self) -> [i8; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionDSL {
    /// Frame count of the map the description was read from.
    pub horizon: usize,
    /// One entry per patch, ascending by id.
    pub patches: Vec<PatchMotion>,
}

/// Quantizes each patch's centroid displacement between the reference
/// frame and the final frame. Centroids average the pixels observed at
/// the respective frame; a patch with none at either end is an error.
pub fn emit_dsl(m: &MoMap, seg: &SegMap, eps: f64) -> Result<MotionDSL> {
    m.check_seg(seg)?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Validation {
            message: format!("stay band half-width {eps} out of range"),
        });
    }
    let last = m.frames() - 1;
    let mut patches = Vec::new();
    for id in seg.patch_ids() {
        let mut first = nalgebra::Vector3::zeros();
        let mut end = nalgebra::Vector3::zeros();
        let (mut n_first, mut n_end) = (0usize, 0usize);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if seg.ids[[y, x]] != id {
                    continue;
                }
                if m.valid[[y, x, 0]] {
                    first += m.pos(y, x, 0);
                    n_first += 1;
                }
                if m.valid[[y, x, last]] {
                    end += m.pos(y, x, last);
                    n_end += 1;
                }
            }
        }
        if n_first == 0 || n_end == 0 {
            return Err(Error::EmptyPatch { id });
        }
        let d = end / n_end as f64 - first / n_first as f64;
        let sign = |v: f64| if v.abs() <= eps { 0 } else if v > 0.0 { 1 } else { -1 };
        patches.push(PatchMotion {
            patch_id: id,
            x: sign(d.x),
            y: sign(d.y),
            z: sign(d.z),
            magnitude: d.norm(),
        });
    }
    Ok(MotionDSL {
        horizon: m.frames(),
        patches,
    })
}

impl MotionDSL {
    pub fn to_json(&self) -> Value {
        json!({
            "horizon": self.horizon,
            "patches": self.patches.iter().map(|p| json!({
                "id": p.patch_id,
                "x": word_for(0, p.x),
                "y": word_for(1, p.y),
                "z": word_for(2, p.z),
                "magnitude": p.magnitude,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("plain JSON value");
        s.push('\n');
        s
    }
}

/// Strict parse: any unknown field, missing field, wrong type, out-of-
/// vocabulary word or duplicate id is an error naming the JSON path.
pub fn parse_dsl(text: &str) -> Result<MotionDSL> {
    parse_inner(text, None)
}

/// Like [`parse_dsl`] but unknown fields are skipped, each noted in the
/// returned warnings.
pub fn parse_dsl_lenient(text: &str) -> Result<(MotionDSL, Vec<String>)> {
    let mut warnings = Vec::new();
    let dsl = parse_inner(text, Some(&mut warnings))?;
    Ok((dsl, warnings))
}

fn parse_inner(text: &str, mut lenient: Option<&mut Vec<String>>) -> Result<MotionDSL> {
    let root: Value = serde_json::from_str(text)?;
    let obj = expect_object(&root, "$")?;
    check_fields(obj, "$", &["horizon", "patches"], &mut lenient)?;

    let horizon = match obj.get("horizon") {
        None => return Err(Error::MissingField { path: "$.horizon".into() }),
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => n as usize,
            _ => {
                return Err(Error::TypeMismatch {
                    path: "$.horizon".into(),
                    expected: "positive integer",
                })
            }
        },
    };

    let list = match obj.get("patches") {
        None => return Err(Error::MissingField { path: "$.patches".into() }),
        Some(Value::Array(a)) => a,
        Some(_) => {
            return Err(Error::TypeMismatch {
                path: "$.patches".into(),
                expected: "array",
            })
        }
    };

    let mut seen = BTreeSet::new();
    let mut patches = Vec::with_capacity(list.len());
    for (i, entry) in list.iter().enumerate() {
        let path = format!("$.patches[{i}]");
        let obj = expect_object(entry, &path)?;
        check_fields(obj, &path, &["id", "x", "y", "z", "magnitude"], &mut lenient)?;

        let id = match obj.get("id") {
            None => return Err(Error::MissingField { path: format!("{path}.id") }),
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 && n <= u32::MAX as u64 => n as u32,
                _ => {
                    return Err(Error::TypeMismatch {
                        path: format!("{path}.id"),
                        expected: "nonzero patch id",
                    })
                }
            },
        };
        if !seen.insert(id) {
            return Err(Error::DuplicatePatchId { id });
        }

        let mut signs = [0i8; 3];
        for axis in 0..3 {
            let name = AXIS_NAMES[axis];
            let apath = format!("{path}.{name}");
            let word = match obj.get(name) {
                None => return Err(Error::MissingField { path: apath }),
                Some(Value::String(s)) => s,
                Some(_) => {
                    return Err(Error::TypeMismatch {
                        path: apath,
                        expected: "direction word",
                    })
                }
            };
            signs[axis] = sign_for(axis, word).ok_or_else(|| Error::UnknownLabel {
                path: apath,
                label: word.clone(),
            })?;
        }

        let magnitude = match obj.get("magnitude") {
            None => {
                return Err(Error::MissingField {
                    path: format!("{path}.magnitude"),
                })
            }
            Some(v) => match v.as_f64() {
                Some(f) if f.is_finite() && f >= 0.0 => f,
                _ => {
                    return Err(Error::TypeMismatch {
                        path: format!("{path}.magnitude"),
                        expected: "finite non-negative number",
                    })
                }
            },
        };

        patches.push(PatchMotion {
            patch_id: id,
            x: signs[0],
            y: signs[1],
            z: signs[2],
            magnitude,
        });
    }

    Ok(MotionDSL { horizon, patches })
}

fn expect_object<'v>(v: &'v Value, path: &str) -> Result<&'v Map<String, Value>> {
    v.as_object().ok_or(Error::TypeMismatch {
        path: path.to_string(),
        expected: "object",
    })
}

fn check_fields(
    obj: &Map<String, Value>,
    path: &str,
    allowed: &[&str],
    lenient: &mut Option<&mut Vec<String>>,
) -> Result<()> {
    for key in obj.keys() {
        if allowed.contains(&key.as_str()) {
            continue;
        }
        match lenient {
            Some(warnings) => warnings.push(format!("ignoring unknown field {path}.{key}")),
            None => {
                return Err(Error::UnexpectedField {
                    path: format!("{path}.{key}"),
                })
            }
        }
    }
    Ok(())
}

/// Paints each described patch's sign triple onto its pixels. Background
/// and patches the description does not mention stay zero. Ids absent
/// from the segmentation are an error.
pub fn ground_dsl(d: &MotionDSL, seg: &SegMap) -> Result<Array3<i8>> {
    let known = seg.patch_ids();
    let mut by_id = std::collections::HashMap::new();
    for p in &d.patches {
        if known.binary_search(&p.patch_id).is_err() {
            return Err(Error::UnknownPatch { id: p.patch_id });
        }
        by_id.insert(p.patch_id, p.signs());
    }
    let (h, w) = (seg.height(), seg.width());
    let mut grid = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            if let Some(signs) = by_id.get(&seg.ids[[y, x]]) {
                for c in 0..3 {
                    grid[[y, x, c]] = signs[c];
                }
            }
        }
    }
    Ok(grid)
}

/// Per-patch majority vote over a grounded grid, one sign triple per
/// patch in ascending id order. Ties within a patch read "stay".
pub fn majority_flags(grid: &Array3<i8>, seg: &SegMap) -> Result<Vec<(u32, [i8; 3])>> {
    if grid.shape() != [seg.height(), seg.width(), 3] {
        return Err(Error::ShapeMismatch {
            message: format!(
                "grounded grid {:?} against segmentation {} x {}",
                grid.shape(),
                seg.height(),
                seg.width()
            ),
        });
    }
    let mut out = Vec::new();
    for id in seg.patch_ids() {
        let mut counts = [[0usize; 3]; 3];
        for y in 0..seg.height() {
            for x in 0..seg.width() {
                if seg.ids[[y, x]] != id {
                    continue;
                }
                for c in 0..3 {
                    counts[c][(grid[[y, x, c]] + 1) as usize] += 1;
                }
            }
        }
        let mut signs = [0i8; 3];
        for c in 0..3 {
            let mut best = (counts[c][1], 0i8);
            for s in [-1i8, 1] {
                let n = counts[c][(s + 1) as usize];
                if n > best.0 {
                    best = (n, s);
                }
            }
            signs[c] = best.1;
        }
        out.push((id, signs));
    }
    Ok(out)
}

/// Raw int8 dump of a grounded grid, row-major, three bytes per pixel.
pub fn write_grounded(grid: &Array3<i8>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = grid.iter().map(|&v| v as u8).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_grounded(path: &Path, height: usize, width: usize) -> Result<Array3<i8>> {
    let bytes = fs::read(path)?;
    if bytes.len() != height * width * 3 {
        return Err(Error::Truncated {
            context: format!(
                "grounded grid: {} bytes for {height} x {width} x 3",
                bytes.len()
            ),
        });
    }
    let vals: Vec<i8> = bytes.iter().map(|&b| b as i8).collect();
    Array3::from_shape_vec((height, width, 3), vals).map_err(|e| Error::Format {
        message: e.to_string(),
    })
}
