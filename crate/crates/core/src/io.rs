//! Binary serialization of motion maps.
//!
//! File layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "MOMP"
//! version  u32      currently 1
//! height   u32
//! width    u32
//! frames   u32
//! flags    u32      bit 0 segmentation, bit 1 camera, bit 2 colors
//! table    one (tag: u32, length: u64) entry per present section
//! payload  sections back to back, same order as the table
//! ```
//!
//! Sections appear in the fixed order `VALD`, `POS `, `SEG `, `CAM `,
//! `CLR `. Validity is one byte per entry (0 or 1). Positions are f32
//! triples, pixel row-major, then frame, then x/y/z. The camera section is
//! fx, fy, cx, cy followed by one row-major 3x4 `[R | t]` pose per frame.
//! Colors are f32 RGB triples per pixel.
//!
//! Floats are stored at f32 precision while the in-memory containers use
//! f64, so writing is lossy for values that are not f32-representable;
//! reading a file and writing it back is byte-identical. A JSON sidecar
//! mirroring the header fields is written next to the binary file for
//! shell-level inspection; readers never consult it. The in-memory frame
//! spacing is advisory, lives only in the sidecar, and resets to the
//! default on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use crate::error::Error;
use crate::types::{validate_momap, Camera, MoMap, RigidTransform, SegMap};
use crate::Result;

pub const MAGIC: [u8; 4] = *b"MOMP";
pub const FORMAT_VERSION: u32 = 1;

pub const FLAG_SEG: u32 = 1;
pub const FLAG_CAMERA: u32 = 2;
pub const FLAG_COLORS: u32 = 4;

pub const TAG_VALID: u32 = u32::from_le_bytes(*b"VALD");
pub const TAG_POS: u32 = u32::from_le_bytes(*b"POS ");
pub const TAG_SEG: u32 = u32::from_le_bytes(*b"SEG ");
pub const TAG_CAM: u32 = u32::from_le_bytes(*b"CAM ");
pub const TAG_COLOR: u32 = u32::from_le_bytes(*b"CLR ");

fn tag_name(tag: u32) -> &'static str {
    match tag {
        t if t == TAG_VALID => "VALD",
        t if t == TAG_POS => "POS",
        t if t == TAG_SEG => "SEG",
        t if t == TAG_CAM => "CAM",
        t if t == TAG_COLOR => "CLR",
        _ => "unknown",
    }
}

pub(crate) fn read_exact_ctx(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                context: context.to_string(),
            }
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn read_u32(r: &mut impl Read, context: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_ctx(r, &mut b, context)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read, context: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_ctx(r, &mut b, context)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read, context: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_ctx(r, &mut b, context)?;
    Ok(f32::from_le_bytes(b))
}

/// Writer that counts bytes so callers can report the final file size.
pub(crate) struct CountingWriter<W: Write> {
    inner: W,
    pub written: u64,
}

impl<W: Write> CountingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    pub fn put_u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn put_u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn put_f32(&mut self, v: f32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.inner.flush()?;
        Ok(self.written)
    }
}

fn downcast(v: f64, context: impl FnOnce() -> String) -> Result<f32> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::NonFinite { context: context() });
    }
    Ok(f)
}

/// Serializes a map with optional companions and writes the JSON sidecar.
/// Returns the binary file's size in bytes.
pub fn write_momap(
    m: &MoMap,
    seg: Option<&SegMap>,
    cam: Option<&Camera>,
    path: &Path,
) -> Result<u64> {
    let violations = validate_momap(m);
    if !violations.is_empty() {
        return Err(Error::Validation {
            message: violations.join("; "),
        });
    }
    if let Some(s) = seg {
        m.check_seg(s)?;
    }
    if let Some(c) = cam {
        c.validate()?;
        if c.frames() != m.frames() {
            return Err(Error::ShapeMismatch {
                message: format!(
                    "camera has {} poses for {} frames",
                    c.frames(),
                    m.frames()
                ),
            });
        }
    }

    let (h, w, t) = (m.height(), m.width(), m.frames());
    let mut flags = 0u32;
    if seg.is_some() {
        flags |= FLAG_SEG;
    }
    if cam.is_some() {
        flags |= FLAG_CAMERA;
    }
    if m.reference_colors.is_some() {
        flags |= FLAG_COLORS;
    }

    let n = (h * w * t) as u64;
    let mut table: Vec<(u32, u64)> = vec![(TAG_VALID, n), (TAG_POS, n * 12)];
    if seg.is_some() {
        table.push((TAG_SEG, (h * w * 4) as u64));
    }
    if cam.is_some() {
        table.push((TAG_CAM, (4 + t * 12) as u64 * 4));
    }
    if m.reference_colors.is_some() {
        table.push((TAG_COLOR, (h * w * 12) as u64));
    }

    let file = File::create(path)?;
    let mut out = CountingWriter::new(BufWriter::new(file));
    out.put(&MAGIC)?;
    out.put_u32(FORMAT_VERSION)?;
    out.put_u32(h as u32)?;
    out.put_u32(w as u32)?;
    out.put_u32(t as u32)?;
    out.put_u32(flags)?;
    for &(tag, len) in &table {
        out.put_u32(tag)?;
        out.put_u64(len)?;
    }

    for y in 0..h {
        for x in 0..w {
            for k in 0..t {
                out.put(&[m.valid[[y, x, k]] as u8])?;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for k in 0..t {
                for c in 0..3 {
                    let v = m.positions[[y, x, k, c]];
                    let f = if m.valid[[y, x, k]] {
                        downcast(v, || format!("position at pixel ({x}, {y}) frame {k}"))?
                    } else {
                        // Unspecified entries still need a representable
                        // byte pattern in the file.
                        let f = v as f32;
                        if f.is_finite() {
                            f
                        } else {
                            0.0
                        }
                    };
                    out.put_f32(f)?;
                }
            }
        }
    }
    if let Some(s) = seg {
        for y in 0..h {
            for x in 0..w {
                out.put_u32(s.ids[[y, x]])?;
            }
        }
    }
    if let Some(c) = cam {
        for (name, v) in [("fx", c.fx), ("fy", c.fy), ("cx", c.cx), ("cy", c.cy)] {
            out.put_f32(downcast(v, || format!("camera intrinsic {name}"))?)?;
        }
        for (k, g) in c.extrinsics.iter().enumerate() {
            for row in 0..3 {
                for col in 0..3 {
                    out.put_f32(downcast(g.rotation[(row, col)], || {
                        format!("pose {k} rotation")
                    })?)?;
                }
                out.put_f32(downcast(g.translation[row], || format!("pose {k} translation"))?)?;
            }
        }
    }
    if let Some(colors) = &m.reference_colors {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.put_f32(downcast(colors[[y, x, c]], || {
                        format!("color at pixel ({x}, {y})")
                    })?)?;
                }
            }
        }
    }

    let written = out.finish()?;
    write_sidecar(path, h, w, t, flags, m.time_step, written)?;
    Ok(written)
}

fn write_sidecar(
    path: &Path,
    h: usize,
    w: usize,
    t: usize,
    flags: u32,
    time_step: f64,
    binary_bytes: u64,
) -> Result<()> {
    let mut sections = vec!["VALD", "POS"];
    if flags & FLAG_SEG != 0 {
        sections.push("SEG");
    }
    if flags & FLAG_CAMERA != 0 {
        sections.push("CAM");
    }
    if flags & FLAG_COLORS != 0 {
        sections.push("CLR");
    }
    let doc = serde_json::json!({
        "magic": "MOMP",
        "version": FORMAT_VERSION,
        "height": h,
        "width": w,
        "frames": t,
        "flags": flags,
        "sections": sections,
        "time_step": time_step,
        "binary_bytes": binary_bytes,
    });
    let sidecar = path.with_extension("json");
    let mut f = File::create(sidecar)?;
    f.write_all(serde_json::to_string_pretty(&doc)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a map plus whatever companion sections the file carries.
pub fn read_momap(path: &Path) -> Result<(MoMap, Option<SegMap>, Option<Camera>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_ctx(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let h = read_u32(&mut r, "height")? as usize;
    let w = read_u32(&mut r, "width")? as usize;
    let t = read_u32(&mut r, "frames")? as usize;
    let flags = read_u32(&mut r, "flags")?;
    if h == 0 || w == 0 || t == 0 {
        return Err(Error::Format {
            message: format!("degenerate dimensions {h}x{w}x{t}"),
        });
    }
    if flags & !(FLAG_SEG | FLAG_CAMERA | FLAG_COLORS) != 0 {
        return Err(Error::Format {
            message: format!("unknown flag bits 0x{flags:08x}"),
        });
    }

    let n = (h * w * t) as u64;
    let mut expected: Vec<(u32, u64)> = vec![(TAG_VALID, n), (TAG_POS, n * 12)];
    if flags & FLAG_SEG != 0 {
        expected.push((TAG_SEG, (h * w * 4) as u64));
    }
    if flags & FLAG_CAMERA != 0 {
        expected.push((TAG_CAM, (4 + t * 12) as u64 * 4));
    }
    if flags & FLAG_COLORS != 0 {
        expected.push((TAG_COLOR, (h * w * 12) as u64));
    }

    for &(tag, len) in &expected {
        let got_tag = read_u32(&mut r, "section table")?;
        let got_len = read_u64(&mut r, "section table")?;
        if got_tag != tag {
            return Err(Error::Format {
                message: format!(
                    "expected section {} but found tag 0x{got_tag:08x}",
                    tag_name(tag)
                ),
            });
        }
        if got_len != len {
            return Err(Error::Format {
                message: format!(
                    "section {} declares {got_len} bytes, dimensions require {len}",
                    tag_name(tag)
                ),
            });
        }
    }

    let mut valid = Array3::from_elem((h, w, t), false);
    {
        let mut buf = vec![0u8; h * w * t];
        read_exact_ctx(&mut r, &mut buf, "VALD section")?;
        let mut i = 0;
        for y in 0..h {
            for x in 0..w {
                for k in 0..t {
                    valid[[y, x, k]] = match buf[i] {
                        0 => false,
                        1 => true,
                        other => {
                            return Err(Error::Format {
                                message: format!(
                                    "validity byte {other} at pixel ({x}, {y}) frame {k}"
                                ),
                            })
                        }
                    };
                    i += 1;
                }
            }
        }
    }

    let mut positions = Array4::zeros((h, w, t, 3));
    {
        let mut buf = vec![0u8; h * w * t * 12];
        read_exact_ctx(&mut r, &mut buf, "POS section")?;
        let mut i = 0;
        for y in 0..h {
            for x in 0..w {
                for k in 0..t {
                    for c in 0..3 {
                        let v = f32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
                        i += 4;
                        if valid[[y, x, k]] && !v.is_finite() {
                            return Err(Error::NonFinite {
                                context: format!("position at pixel ({x}, {y}) frame {k} channel {c}"),
                            });
                        }
                        positions[[y, x, k, c]] = v as f64;
                    }
                }
            }
        }
    }

    let seg = if flags & FLAG_SEG != 0 {
        let mut ids = Array2::zeros((h, w));
        let mut buf = vec![0u8; h * w * 4];
        read_exact_ctx(&mut r, &mut buf, "SEG section")?;
        let mut i = 0;
        for y in 0..h {
            for x in 0..w {
                ids[[y, x]] = u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
                i += 4;
            }
        }
        Some(SegMap::new(ids))
    } else {
        None
    };

    let cam = if flags & FLAG_CAMERA != 0 {
        let fx = read_f32(&mut r, "CAM section")? as f64;
        let fy = read_f32(&mut r, "CAM section")? as f64;
        let cx = read_f32(&mut r, "CAM section")? as f64;
        let cy = read_f32(&mut r, "CAM section")? as f64;
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("camera intrinsic {name}"),
                });
            }
        }
        let mut extrinsics = Vec::with_capacity(t);
        for k in 0..t {
            let mut g = RigidTransform::identity();
            for row in 0..3 {
                for col in 0..3 {
                    let v = read_f32(&mut r, "CAM section")? as f64;
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("pose {k} rotation"),
                        });
                    }
                    g.rotation[(row, col)] = v;
                }
                let v = read_f32(&mut r, "CAM section")? as f64;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("pose {k} translation"),
                    });
                }
                g.translation[row] = v;
            }
            // Orthonormality is not enforced here: poses quantized to f32
            // sit a few 1e-8 off and must survive a byte-exact round trip.
            extrinsics.push(g);
        }
        Some(Camera {
            fx,
            fy,
            cx,
            cy,
            extrinsics,
        })
    } else {
        None
    };

    let colors = if flags & FLAG_COLORS != 0 {
        let mut arr = Array3::zeros((h, w, 3));
        let mut buf = vec![0u8; h * w * 12];
        read_exact_ctx(&mut r, &mut buf, "CLR section")?;
        let mut i = 0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = f32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
                    i += 4;
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("color at pixel ({x}, {y})"),
                        });
                    }
                    arr[[y, x, c]] = v as f64;
                }
            }
        }
        Some(arr)
    } else {
        None
    };

    let mut m = MoMap::new(positions, valid)?;
    m.reference_colors = colors;
    Ok((m, seg, cam))
}
