//! Low-rank temporal compression of trajectory maps.
//!
//! Each covered pixel contributes one row of length `T*3` to a trajectory
//! matrix. After subtracting the mean trajectory, the matrix is factored
//! and only the leading `channels` principal directions are kept: a
//! `channels x (T*3)` basis shared by all pixels plus `channels`
//! coefficients per pixel. That is the optimal linear compressor for a
//! given channel budget, so reconstruction error measures how low-rank the
//! motion really is.
//!
//! The factorization runs through the eigendecomposition of the d x d
//! scatter matrix (d = T*3) rather than a direct SVD of the N x d matrix:
//! N is the pixel count and dwarfs d, so the scatter route is both the
//! cheap one and deterministic. Basis rows are sign-fixed (largest-
//! magnitude entry positive), making the whole pipeline bit-reproducible.
//!
//! The `.momapz` container stores mean, basis, coefficients, and coverage
//! at f32 precision, little-endian, mirroring the `.momap` section layout.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Array4};

use crate::error::Error;
use crate::io::{read_exact_ctx, read_u32, read_u64, CountingWriter};
use crate::types::{validate_momap, MoMap, DEFAULT_TIME_STEP};
use crate::Result;

pub const MAGIC_Z: [u8; 4] = *b"MOMZ";
pub const FORMAT_VERSION_Z: u32 = 1;

pub const TAG_MEAN: u32 = u32::from_le_bytes(*b"MEAN");
pub const TAG_BASIS: u32 = u32::from_le_bytes(*b"BASE");
pub const TAG_COEF: u32 = u32::from_le_bytes(*b"COEF");
pub const TAG_VALID_Z: u32 = u32::from_le_bytes(*b"VALD");

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMoMap {
    /// Mean trajectory over covered pixels, length `frames * 3`.
    pub mean: Vec<f64>,
    /// Orthonormal rows, `channels x (frames * 3)`.
    pub basis: Array2<f64>,
    /// Per-pixel projections, `H x W x channels`; zero at uncovered pixels.
    pub coefficients: Array3<f64>,
    /// Coverage at the reference frame.
    pub valid_t0: Array2<bool>,
    pub time_step: f64,
}

impl CompressedMoMap {
    pub fn height(&self) -> usize {
        self.coefficients.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.coefficients.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.basis.nrows()
    }

    pub fn frames(&self) -> usize {
        self.basis.ncols() / 3
    }

    fn check_internal(&self) -> Result<()> {
        let d = self.basis.ncols();
        let ok = d.is_multiple_of(3)
            && self.mean.len() == d
            && self.coefficients.shape()[2] == self.basis.nrows()
            && self.valid_t0.shape() == [self.height(), self.width()];
        if !ok {
            return Err(Error::ShapeMismatch {
                message: format!(
                    "inconsistent compressed map: mean {}, basis {}x{}, coefficients {:?}, coverage {:?}",
                    self.mean.len(),
                    self.basis.nrows(),
                    d,
                    self.coefficients.shape(),
                    self.valid_t0.shape()
                ),
            });
        }
        Ok(())
    }

    /// Stored floats per pixel in the raw map versus here, ignoring the
    /// shared basis and mean. 150/32 at the default 50-frame, 32-channel
    /// setting.
    pub fn coefficient_ratio(&self) -> f64 {
        (self.frames() * 3) as f64 / self.channels() as f64
    }
}

fn covered_row(m: &MoMap, y: usize, x: usize, row: &mut [f64]) {
    let t = m.frames();
    for k in 0..t {
        for c in 0..3 {
            row[k * 3 + c] = m.positions[[y, x, k, c]];
        }
    }
}

/// Projects every covered trajectory onto the leading `channels` principal
/// directions of the centered trajectory matrix.
pub fn compress(m: &MoMap, channels: usize) -> Result<CompressedMoMap> {
    let violations = validate_momap(m);
    if !violations.is_empty() {
        return Err(Error::Validation {
            message: violations.join("; "),
        });
    }
    let (h, w, t) = (m.height(), m.width(), m.frames());
    let d = t * 3;
    if channels < 1 || channels > d {
        return Err(Error::ChannelsOutOfRange { channels, max: d });
    }

    let mut covered = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            for k in 0..t {
                if !m.valid[[y, x, k]] {
                    return Err(Error::Validation {
                        message: format!(
                            "pixel ({x}, {y}) is hidden at frame {k}; infill before compressing"
                        ),
                    });
                }
            }
            covered.push((y, x));
        }
    }
    if covered.is_empty() {
        return Err(Error::Validation {
            message: "map covers no pixels".into(),
        });
    }
    let n = covered.len() as f64;

    let mut mean = vec![0.0; d];
    let mut row = vec![0.0; d];
    for &(y, x) in &covered {
        covered_row(m, y, x, &mut row);
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    for v in &mut mean {
        *v /= n;
    }

    // Upper triangle of the scatter matrix, accumulated in a fixed pixel
    // order so repeated runs agree bit for bit.
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for &(y, x) in &covered {
        covered_row(m, y, x, &mut row);
        for j in 0..d {
            row[j] -= mean[j];
        }
        for i in 0..d {
            let ri = row[i];
            for j in i..d {
                scatter[(i, j)] += ri * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            scatter[(i, j)] = scatter[(j, i)];
        }
    }

    let eigen = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut basis = Array2::zeros((channels, d));
    for (r, &col) in order.iter().take(channels).enumerate() {
        let mut best = 0usize;
        for j in 1..d {
            if eigen.eigenvectors[(j, col)].abs() > eigen.eigenvectors[(best, col)].abs() {
                best = j;
            }
        }
        let flip = if eigen.eigenvectors[(best, col)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for j in 0..d {
            basis[[r, j]] = flip * eigen.eigenvectors[(j, col)];
        }
    }

    let mut coefficients = Array3::zeros((h, w, channels));
    let mut valid_t0 = Array2::from_elem((h, w), false);
    for &(y, x) in &covered {
        valid_t0[[y, x]] = true;
        covered_row(m, y, x, &mut row);
        for j in 0..d {
            row[j] -= mean[j];
        }
        for r in 0..channels {
            let mut acc = 0.0;
            for j in 0..d {
                acc += basis[[r, j]] * row[j];
            }
            coefficients[[y, x, r]] = acc;
        }
    }

    Ok(CompressedMoMap {
        mean,
        basis,
        coefficients,
        valid_t0,
        time_step: m.time_step,
    })
}

/// Rebuilds a dense map: mean plus the basis combination at covered pixels,
/// all-invalid columns elsewhere.
pub fn decompress(c: &CompressedMoMap, frames: usize) -> Result<MoMap> {
    c.check_internal()?;
    if frames * 3 != c.basis.ncols() {
        return Err(Error::ShapeMismatch {
            message: format!(
                "{frames} frames need basis width {}, found {}",
                frames * 3,
                c.basis.ncols()
            ),
        });
    }
    let (h, w) = (c.height(), c.width());
    let channels = c.channels();
    let d = frames * 3;

    let mut positions = Array4::zeros((h, w, frames, 3));
    let mut valid = ndarray::Array3::from_elem((h, w, frames), false);
    let mut rec = vec![0.0; d];
    for y in 0..h {
        for x in 0..w {
            if !c.valid_t0[[y, x]] {
                continue;
            }
            rec.copy_from_slice(&c.mean);
            for r in 0..channels {
                let coef = c.coefficients[[y, x, r]];
                if coef != 0.0 {
                    for (j, slot) in rec.iter_mut().enumerate() {
                        *slot += coef * c.basis[[r, j]];
                    }
                }
            }
            for k in 0..frames {
                valid[[y, x, k]] = true;
                for ch in 0..3 {
                    positions[[y, x, k, ch]] = rec[k * 3 + ch];
                }
            }
        }
    }
    let mut m = MoMap::new(positions, valid)?;
    m.time_step = c.time_step;
    Ok(m)
}

/// Root-mean-square per-coordinate error between a map and its compressed
/// form, taken over covered pixels and all frames.
pub fn reconstruction_rmse(m: &MoMap, c: &CompressedMoMap) -> Result<f64> {
    c.check_internal()?;
    let (h, w, t) = (m.height(), m.width(), m.frames());
    if c.height() != h || c.width() != w || c.basis.ncols() != t * 3 {
        return Err(Error::ShapeMismatch {
            message: format!(
                "map {h}x{w}x{t} against compressed {}x{}x{}",
                c.height(),
                c.width(),
                c.frames()
            ),
        });
    }
    for y in 0..h {
        for x in 0..w {
            if c.valid_t0[[y, x]] != m.is_covered(y, x) {
                return Err(Error::Validation {
                    message: format!("coverage differs at pixel ({x}, {y})"),
                });
            }
        }
    }
    let rec = decompress(c, t)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            for k in 0..t {
                for ch in 0..3 {
                    let e = m.positions[[y, x, k, ch]] - rec.positions[[y, x, k, ch]];
                    sum += e * e;
                    count += 1;
                }
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Serializes to `.momapz`. Returns the byte count written.
pub fn write_momapz(c: &CompressedMoMap, path: &Path) -> Result<u64> {
    c.check_internal()?;
    let (h, w) = (c.height(), c.width());
    let (t, channels) = (c.frames(), c.channels());
    let d = t * 3;

    for (what, v) in c
        .mean
        .iter()
        .map(|v| ("mean", *v))
        .chain(c.basis.iter().map(|v| ("basis", *v)))
        .chain(c.coefficients.iter().map(|v| ("coefficients", *v)))
    {
        if !(v as f32).is_finite() {
            return Err(Error::NonFinite {
                context: format!("{what} payload"),
            });
        }
    }

    let file = File::create(path)?;
    let mut out = CountingWriter::new(BufWriter::new(file));
    out.put(&MAGIC_Z)?;
    out.put_u32(FORMAT_VERSION_Z)?;
    out.put_u32(h as u32)?;
    out.put_u32(w as u32)?;
    out.put_u32(t as u32)?;
    out.put_u32(channels as u32)?;
    for (tag, len) in [
        (TAG_MEAN, (d * 4) as u64),
        (TAG_BASIS, (channels * d * 4) as u64),
        (TAG_COEF, (h * w * channels * 4) as u64),
        (TAG_VALID_Z, (h * w) as u64),
    ] {
        out.put_u32(tag)?;
        out.put_u64(len)?;
    }
    for &v in &c.mean {
        out.put_f32(v as f32)?;
    }
    for r in 0..channels {
        for j in 0..d {
            out.put_f32(c.basis[[r, j]] as f32)?;
        }
    }
    for y in 0..h {
        for x in 0..w {
            for r in 0..channels {
                out.put_f32(c.coefficients[[y, x, r]] as f32)?;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            out.put(&[c.valid_t0[[y, x]] as u8])?;
        }
    }
    out.finish()
}

pub fn read_momapz(path: &Path) -> Result<CompressedMoMap> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_ctx(&mut r, &mut magic, "magic")?;
    if magic != MAGIC_Z {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION_Z {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let h = read_u32(&mut r, "height")? as usize;
    let w = read_u32(&mut r, "width")? as usize;
    let t = read_u32(&mut r, "frames")? as usize;
    let channels = read_u32(&mut r, "channels")? as usize;
    if h == 0 || w == 0 || t == 0 {
        return Err(Error::Format {
            message: format!("degenerate dimensions {h}x{w}x{t}"),
        });
    }
    let d = t * 3;
    if channels < 1 || channels > d {
        return Err(Error::Format {
            message: format!("channel count {channels} outside 1..={d}"),
        });
    }

    for (name, tag, len) in [
        ("MEAN", TAG_MEAN, (d * 4) as u64),
        ("BASE", TAG_BASIS, (channels * d * 4) as u64),
        ("COEF", TAG_COEF, (h * w * channels * 4) as u64),
        ("VALD", TAG_VALID_Z, (h * w) as u64),
    ] {
        let got_tag = read_u32(&mut r, "section table")?;
        let got_len = read_u64(&mut r, "section table")?;
        if got_tag != tag {
            return Err(Error::Format {
                message: format!("expected section {name} but found tag 0x{got_tag:08x}"),
            });
        }
        if got_len != len {
            return Err(Error::Format {
                message: format!(
                    "section {name} declares {got_len} bytes, dimensions require {len}"
                ),
            });
        }
    }

    let read_f32s = |r: &mut BufReader<File>, count: usize, what: &str| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 4];
        read_exact_ctx(r, &mut buf, what)?;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let v = f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{what} entry {i}"),
                });
            }
            out.push(v as f64);
        }
        Ok(out)
    };

    let mean = read_f32s(&mut r, d, "MEAN section")?;
    let basis_flat = read_f32s(&mut r, channels * d, "BASE section")?;
    let coef_flat = read_f32s(&mut r, h * w * channels, "COEF section")?;
    let basis = Array2::from_shape_vec((channels, d), basis_flat).unwrap();
    let coefficients = Array3::from_shape_vec((h, w, channels), coef_flat).unwrap();

    let mut valid_t0 = Array2::from_elem((h, w), false);
    let mut buf = vec![0u8; h * w];
    read_exact_ctx(&mut r, &mut buf, "VALD section")?;
    for y in 0..h {
        for x in 0..w {
            valid_t0[[y, x]] = match buf[y * w + x] {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Format {
                        message: format!("coverage byte {other} at pixel ({x}, {y})"),
                    })
                }
            };
        }
    }

    Ok(CompressedMoMap {
        mean,
        basis,
        coefficients,
        valid_t0,
        time_step: DEFAULT_TIME_STEP,
    })
}
