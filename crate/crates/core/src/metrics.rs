//! Trajectory quality metrics and the best-of-N evaluation protocol.
//!
//! All six metrics compare a candidate map against ground truth over a
//! foreground of moving pixels:
//!
//! * `fg_mask_iou`: do the two maps agree on what moves? (higher better)
//! * `ate_dtw`: positional error after temporal alignment (lower)
//! * `d_sig`: difference of intra-trajectory distance signatures, blind to
//!   any global rigid motion (lower)
//! * `local_dist_diff`: preservation of neighborhood geometry (lower)
//! * `patch_nearest_acc`: agreement on which patch is nearest to each
//!   moving patch over time (higher)
//! * `quantize_acc`: per-axis directional label agreement at a given frame
//!   stride (higher)
//!
//! Except for `ate_dtw`, which scores how well the candidate reproduces the
//! ground truth's moving pixels specifically, the foreground is the union
//! of the two maps' moving masks: motion invented by the candidate must
//! count against it, and the union keeps every metric symmetric in its
//! treatment of hallucinated versus missed motion. Pixels not covered by
//! both maps, or with hidden entries, are excluded. An empty foreground
//! yields `None` ("not applicable") rather than a fake perfect score.
//!
//! Aggregations are fixed-order sums so results do not depend on thread
//! count.

use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{MoMap, SegMap};
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Displacement (meters) beyond which a pixel counts as moving.
    pub fg_threshold: f64,
    /// Neighbor count for `local_dist_diff`.
    pub knn: usize,
    /// Half-width of the per-axis stay band (meters) for `quantize_acc`.
    pub quantize_eps: f64,
    /// Frame strides at which `quantize_acc` is reported.
    pub dt_values: Vec<usize>,
    /// Candidate count the best-of-N protocol is designed around.
    pub n_samples: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            fg_threshold: 0.05,
            knn: 8,
            quantize_eps: 0.02,
            dt_values: vec![1, 4, 16],
            n_samples: 10,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = !(self.fg_threshold.is_finite() && self.fg_threshold > 0.0)
            || !(self.quantize_eps.is_finite() && self.quantize_eps > 0.0)
            || self.knn < 1
            || self.n_samples < 1
            || self.dt_values.is_empty()
            || self.dt_values.iter().any(|&dt| dt < 1);
        if bad {
            return Err(Error::Validation {
                message: format!("metric config out of range: {self:?}"),
            });
        }
        Ok(())
    }
}

fn check_dims(gt: &MoMap, pred: &MoMap) -> Result<()> {
    if gt.positions.shape() != pred.positions.shape() {
        return Err(Error::ShapeMismatch {
            message: format!(
                "ground truth {:?} against candidate {:?}",
                gt.positions.shape(),
                pred.positions.shape()
            ),
        });
    }
    Ok(())
}

/// Pixels whose trajectory strays from its anchor by more than the
/// threshold, judged over the entries that are actually observed.
pub fn moving_mask(m: &MoMap, cfg: &MetricConfig) -> Array2<bool> {
    let (h, w, t) = (m.height(), m.width(), m.frames());
    let mut mask = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            let anchor = m.pos(y, x, 0);
            mask[[y, x]] = (1..t).any(|k| {
                m.valid[[y, x, k]] && (m.pos(y, x, k) - anchor).norm() > cfg.fg_threshold
            });
        }
    }
    mask
}

/// True where the pixel is covered and fully observed in both maps.
fn fully_observed_both(gt: &MoMap, pred: &MoMap, y: usize, x: usize) -> bool {
    let t = gt.frames();
    (0..t).all(|k| gt.valid[[y, x, k]] && pred.valid[[y, x, k]])
}

/// Evaluation foreground: union of the two moving masks, restricted to
/// pixels fully observed in both maps, in row-major order.
fn union_foreground(gt: &MoMap, pred: &MoMap, cfg: &MetricConfig) -> Vec<(usize, usize)> {
    let gm = moving_mask(gt, cfg);
    let pm = moving_mask(pred, cfg);
    let (h, w) = (gt.height(), gt.width());
    let mut fg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (gm[[y, x]] || pm[[y, x]]) && fully_observed_both(gt, pred, y, x) {
                fg.push((y, x));
            }
        }
    }
    fg
}

/// Intersection-over-union of the two moving masks; 1.0 when neither map
/// has any moving pixel (the masks agree vacuously).
pub fn fg_mask_iou(gt: &MoMap, pred: &MoMap, cfg: &MetricConfig) -> Result<f64> {
    check_dims(gt, pred)?;
    let a = moving_mask(gt, cfg);
    let b = moving_mask(pred, cfg);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Alignment score of two position sequences: the cheapest monotone
/// endpoint-matched warp under steps (1,0), (0,1), (1,1), its summed
/// pairwise distance divided by its length. Among equally cheap warps the
/// shortest is used.
pub fn dtw_alignment_score(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty trajectory");
    let m = b.len();
    let mut prev: Vec<(f64, u32)> = vec![(0.0, 0); m];
    let mut cur: Vec<(f64, u32)> = vec![(0.0, 0); m];
    for (i, ai) in a.iter().enumerate() {
        for j in 0..m {
            let c = (ai - b[j]).norm();
            let base = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, u32::MAX);
                if i > 0 {
                    best = lex_min(best, prev[j]);
                }
                if j > 0 {
                    best = lex_min(best, cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = lex_min(best, prev[j - 1]);
                }
                best
            };
            cur[j] = (base.0 + c, base.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    cost / len as f64
}

fn lex_min(a: (f64, u32), b: (f64, u32)) -> (f64, u32) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn observed_track(m: &MoMap, y: usize, x: usize) -> Vec<Vector3<f64>> {
    (0..m.frames())
        .filter(|&k| m.valid[[y, x, k]])
        .map(|k| m.pos(y, x, k))
        .collect()
}

/// Mean per-pixel DTW alignment score over the ground truth's moving
/// pixels. `None` when the ground truth has no moving pixel.
pub fn ate_dtw(gt: &MoMap, pred: &MoMap, cfg: &MetricConfig) -> Result<Option<f64>> {
    check_dims(gt, pred)?;
    let mask = moving_mask(gt, cfg);
    let (h, w) = (gt.height(), gt.width());
    let mut fg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] && pred.is_covered(y, x) {
                fg.push((y, x));
            }
        }
    }
    if fg.is_empty() {
        return Ok(None);
    }
    let scores: Vec<f64> = fg
        .par_iter()
        .map(|&(y, x)| {
            dtw_alignment_score(&observed_track(gt, y, x), &observed_track(pred, y, x))
        })
        .collect();
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Mean absolute difference of the two maps' T x T intra-trajectory
/// distance matrices over the foreground. Rigid motion of either map
/// leaves its matrix unchanged, so this isolates non-rigid disagreement.
pub fn d_sig(gt: &MoMap, pred: &MoMap, cfg: &MetricConfig) -> Result<Option<f64>> {
    check_dims(gt, pred)?;
    let fg = union_foreground(gt, pred, cfg);
    if fg.is_empty() {
        return Ok(None);
    }
    let t = gt.frames();
    let scores: Vec<f64> = fg
        .par_iter()
        .map(|&(y, x)| {
            let gs: Vec<_> = (0..t).map(|k| gt.pos(y, x, k)).collect();
            let ps: Vec<_> = (0..t).map(|k| pred.pos(y, x, k)).collect();
            let mut acc = 0.0;
            for i in 0..t {
                for j in i + 1..t {
                    let dg = (gs[i] - gs[j]).norm();
                    let dp = (ps[i] - ps[j]).norm();
                    acc += (dg - dp).abs();
                }
            }
            // Off-diagonal entries appear twice in the full matrix; the
            // diagonal is identically zero.
            2.0 * acc / (t * t) as f64
        })
        .collect();
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Mean absolute change of each foreground pixel's distances to its K
/// nearest foreground neighbors (neighbors fixed from the ground truth's
/// reference frame), over all frames.
pub fn local_dist_diff(gt: &MoMap, pred: &MoMap, cfg: &MetricConfig) -> Result<Option<f64>> {
    check_dims(gt, pred)?;
    let fg = union_foreground(gt, pred, cfg);
    if fg.is_empty() {
        return Ok(None);
    }
    if fg.len() < cfg.knn + 1 {
        return Err(Error::TooFewForeground {
            found: fg.len(),
            needed: cfg.knn + 1,
        });
    }
    let anchors: Vec<_> = fg.iter().map(|&(y, x)| gt.pos(y, x, 0)).collect();
    let t = gt.frames();
    let per_pixel: Vec<f64> = (0..fg.len())
        .into_par_iter()
        .map(|i| {
            let mut by_dist: Vec<(f64, usize)> = (0..fg.len())
                .filter(|&j| j != i)
                .map(|j| ((anchors[i] - anchors[j]).norm(), j))
                .collect();
            by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (yi, xi) = fg[i];
            let mut acc = 0.0;
            for &(_, j) in by_dist.iter().take(cfg.knn) {
                let (yj, xj) = fg[j];
                for k in 0..t {
                    let dg = (gt.pos(yi, xi, k) - gt.pos(yj, xj, k)).norm();
                    let dp = (pred.pos(yi, xi, k) - pred.pos(yj, xj, k)).norm();
                    acc += (dg - dp).abs();
                }
            }
            acc / (cfg.knn * t) as f64
        })
        .collect();
    Ok(Some(per_pixel.iter().sum::<f64>() / per_pixel.len() as f64))
}

/// Patch centroid at frame `k` over members valid at that frame.
fn patch_centroid(
    m: &MoMap,
    members: &[(usize, usize)],
    k: usize,
) -> Option<Vector3<f64>> {
    let mut acc = Vector3::zeros();
    let mut n = 0usize;
    for &(y, x) in members {
        if m.valid[[y, x, k]] {
            acc += m.pos(y, x, k);
            n += 1;
        }
    }
    (n > 0).then(|| acc / n as f64)
}

fn nearest_patch(
    centroids: &[(u32, Option<Vector3<f64>>)],
    own: usize,
) -> Option<u32> {
    let own_c = centroids[own].1?;
    let mut best: Option<(f64, u32)> = None;
    for (i, &(id, c)) in centroids.iter().enumerate() {
        if i == own {
            continue;
        }
        let Some(c) = c else { continue };
        let d = (own_c - c).norm();
        // Ties go to the smaller id; ids are scanned in ascending order.
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

/// For every moving patch and frame, whether ground truth and candidate
/// agree on which other patch is centroid-nearest. A patch is moving when
/// a strict majority of its pixels lie in the evaluation foreground.
pub fn patch_nearest_acc(
    gt: &MoMap,
    pred: &MoMap,
    seg: &SegMap,
    cfg: &MetricConfig,
) -> Result<Option<f64>> {
    check_dims(gt, pred)?;
    gt.check_seg(seg)?;
    let ids = seg.patch_ids();
    if ids.len() < 2 {
        return Err(Error::TooFewPatches { found: ids.len() });
    }

    let (h, w, t) = (gt.height(), gt.width(), gt.frames());
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ids.len()];
    for y in 0..h {
        for x in 0..w {
            let id = seg.ids[[y, x]];
            if id != 0 {
                let slot = ids.binary_search(&id).unwrap();
                members[slot].push((y, x));
            }
        }
    }

    let fg = union_foreground(gt, pred, cfg);
    let fg_set: std::collections::HashSet<(usize, usize)> = fg.into_iter().collect();
    let moving: Vec<usize> = (0..ids.len())
        .filter(|&i| {
            let inside = members[i].iter().filter(|p| fg_set.contains(p)).count();
            2 * inside > members[i].len()
        })
        .collect();
    if moving.is_empty() {
        return Ok(None);
    }

    let mut agree = 0usize;
    let mut total = 0usize;
    for k in 0..t {
        let gt_centroids: Vec<(u32, Option<Vector3<f64>>)> = ids
            .iter()
            .zip(&members)
            .map(|(&id, mem)| (id, patch_centroid(gt, mem, k)))
            .collect();
        let pred_centroids: Vec<(u32, Option<Vector3<f64>>)> = ids
            .iter()
            .zip(&members)
            .map(|(&id, mem)| (id, patch_centroid(pred, mem, k)))
            .collect();
        for &i in &moving {
            let (Some(g), Some(p)) = (
                nearest_patch(&gt_centroids, i),
                nearest_patch(&pred_centroids, i),
            ) else {
                continue;
            };
            total += 1;
            agree += (g == p) as usize;
        }
    }
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(agree as f64 / total as f64))
}

fn axis_label(d: f64, eps: f64) -> i8 {
    if d.abs() <= eps {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Fraction of (pixel, start frame, axis) triples where the two maps give
/// the displacement over `dt` frames the same {-1, 0, +1} label.
pub fn quantize_acc(gt: &MoMap, pred: &MoMap, dt: usize, cfg: &MetricConfig) -> Result<Option<f64>> {
    check_dims(gt, pred)?;
    let t = gt.frames();
    if dt < 1 || dt >= t {
        return Err(Error::BadStride { dt, frames: t });
    }
    let fg = union_foreground(gt, pred, cfg);
    if fg.is_empty() {
        return Ok(None);
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for &(y, x) in &fg {
        for k in 0..t - dt {
            let dg = gt.pos(y, x, k + dt) - gt.pos(y, x, k);
            let dp = pred.pos(y, x, k + dt) - pred.pos(y, x, k);
            for c in 0..3 {
                total += 1;
                agree += (axis_label(dg[c], cfg.quantize_eps)
                    == axis_label(dp[c], cfg.quantize_eps)) as usize;
            }
        }
    }
    Ok(Some(agree as f64 / total as f64))
}

/// Best value over the candidate set, with the index that achieved it.
/// `None` when the metric was not applicable to any candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub value: Option<f64>,
    pub candidate: Option<usize>,
}

impl BestEntry {
    fn na() -> Self {
        Self {
            value: None,
            candidate: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizeBest {
    pub dt: usize,
    pub value: Option<f64>,
    pub candidate: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub candidates: usize,
    pub fg_mask_iou: BestEntry,
    pub ate_dtw: BestEntry,
    pub d_sig: BestEntry,
    pub local_dist_diff: BestEntry,
    pub patch_nearest_acc: BestEntry,
    pub quantize_acc: Vec<QuantizeBest>,
}

#[derive(Debug, Clone)]
struct CandidateScores {
    iou: f64,
    ate: Option<f64>,
    dsig: Option<f64>,
    ldd: Option<f64>,
    pna: Option<f64>,
    quant: Vec<Option<f64>>,
}

fn best_up(values: impl Iterator<Item = Option<f64>>) -> BestEntry {
    let mut best = BestEntry::na();
    for (i, v) in values.enumerate() {
        let Some(v) = v else { continue };
        if best.value.is_none_or(|b| v > b) {
            best = BestEntry {
                value: Some(v),
                candidate: Some(i),
            };
        }
    }
    best
}

fn best_down(values: impl Iterator<Item = Option<f64>>) -> BestEntry {
    let mut best = BestEntry::na();
    for (i, v) in values.enumerate() {
        let Some(v) = v else { continue };
        if best.value.is_none_or(|b| v < b) {
            best = BestEntry {
                value: Some(v),
                candidate: Some(i),
            };
        }
    }
    best
}

/// Scores every candidate against the ground truth and keeps, per metric,
/// the best value (max for agreement scores, min for distances) along with
/// the candidate index that achieved it.
pub fn evaluate_best_of_n(
    gt: &MoMap,
    candidates: &[MoMap],
    seg: &SegMap,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    gt.check_seg(seg)?;

    let scores: Vec<CandidateScores> = candidates
        .par_iter()
        .map(|cand| -> Result<CandidateScores> {
            Ok(CandidateScores {
                iou: fg_mask_iou(gt, cand, cfg)?,
                ate: ate_dtw(gt, cand, cfg)?,
                dsig: d_sig(gt, cand, cfg)?,
                ldd: local_dist_diff(gt, cand, cfg)?,
                pna: patch_nearest_acc(gt, cand, seg, cfg)?,
                quant: cfg
                    .dt_values
                    .iter()
                    .map(|&dt| quantize_acc(gt, cand, dt, cfg))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let quantize = cfg
        .dt_values
        .iter()
        .enumerate()
        .map(|(qi, &dt)| {
            let best = best_up(scores.iter().map(|s| s.quant[qi]));
            QuantizeBest {
                dt,
                value: best.value,
                candidate: best.candidate,
            }
        })
        .collect();

    Ok(MetricReport {
        candidates: candidates.len(),
        fg_mask_iou: best_up(scores.iter().map(|s| Some(s.iou))),
        ate_dtw: best_down(scores.iter().map(|s| s.ate)),
        d_sig: best_down(scores.iter().map(|s| s.dsig)),
        local_dist_diff: best_down(scores.iter().map(|s| s.ldd)),
        patch_nearest_acc: best_up(scores.iter().map(|s| s.pna)),
        quantize_acc: quantize,
    })
}

impl MetricReport {
    /// Aligned plain-text rendering, one row per metric.
    pub fn to_table(&self) -> String {
        fn row(name: &str, e: &BestEntry) -> String {
            match (e.value, e.candidate) {
                (Some(v), Some(i)) => format!("{name:<20} {v:>12.6}  (sample {i})\n"),
                _ => format!("{name:<20} {:>12}  (n/a)\n", "-"),
            }
        }
        let mut out = String::new();
        out.push_str(&format!("{:<20} {:>12}\n", "metric", "best"));
        out.push_str(&row("fg_mask_iou", &self.fg_mask_iou));
        out.push_str(&row("ate_dtw", &self.ate_dtw));
        out.push_str(&row("D_sig", &self.d_sig));
        out.push_str(&row("local_dist_diff", &self.local_dist_diff));
        out.push_str(&row("patch_nearest_acc", &self.patch_nearest_acc));
        for q in &self.quantize_acc {
            out.push_str(&row(
                &format!("quantize_acc_{}", q.dt),
                &BestEntry {
                    value: q.value,
                    candidate: q.candidate,
                },
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SegMap;
    use approx::assert_relative_eq;

    /// 1 x n map, T frames, with chosen x-coordinates per pixel and frame.
    fn line_map(xs: &[Vec<f64>]) -> MoMap {
        let t = xs[0].len();
        let mut m = MoMap::zeros(1, xs.len(), t);
        for (i, track) in xs.iter().enumerate() {
            for (k, &x) in track.iter().enumerate() {
                m.set_pos(0, i, k, Vector3::new(x, 0.0, 1.0));
            }
        }
        m
    }

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn identity_is_perfect_on_every_metric() {
        let m = line_map(&[
            vec![0.0, 0.5, 1.0],
            vec![1.0, 1.5, 2.0],
            vec![5.0, 5.0, 5.0],
        ]);
        let c = MetricConfig {
            knn: 1,
            dt_values: vec![1, 2],
            ..cfg()
        };
        assert_eq!(fg_mask_iou(&m, &m, &c).unwrap(), 1.0);
        assert_eq!(ate_dtw(&m, &m, &c).unwrap(), Some(0.0));
        assert_eq!(d_sig(&m, &m, &c).unwrap(), Some(0.0));
        assert_eq!(local_dist_diff(&m, &m, &c).unwrap(), Some(0.0));
        assert_eq!(quantize_acc(&m, &m, 1, &c).unwrap(), Some(1.0));
    }

    #[test]
    fn iou_counts_mask_overlap() {
        // gt moves pixels 0 and 1; pred moves pixels 1 and 2.
        let gt = line_map(&[
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![4.0, 4.0],
            vec![9.0, 9.0],
        ]);
        let pred = line_map(&[
            vec![0.0, 0.0],
            vec![2.0, 3.0],
            vec![4.0, 5.0],
            vec![9.0, 9.0],
        ]);
        assert_relative_eq!(fg_mask_iou(&gt, &pred, &cfg()).unwrap(), 1.0 / 3.0);

        // Both static: vacuous agreement.
        let s = line_map(&[vec![0.0, 0.0]]);
        assert_eq!(fg_mask_iou(&s, &s, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn dtw_constant_offset_degenerates_to_diagonal() {
        let gt = line_map(&[vec![0.0, 1.0, 2.0, 3.0]]);
        let pred = line_map(&[vec![0.25, 1.25, 2.25, 3.25]]);
        let got = ate_dtw(&gt, &pred, &cfg()).unwrap().unwrap();
        assert_relative_eq!(got, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn dtw_absorbs_half_speed_playback() {
        let a: Vec<_> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&x| Vector3::new(x, 0.0, 0.0))
            .collect();
        let b: Vec<_> = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
            .iter()
            .map(|&x| Vector3::new(x, 0.0, 0.0))
            .collect();
        assert_eq!(dtw_alignment_score(&a, &b), 0.0);
    }

    #[test]
    fn d_sig_matches_the_hand_computed_matrix() {
        // One pixel, two frames: ground truth rests, candidate moves 1 m.
        let gt = line_map(&[vec![0.0, 0.0]]);
        let pred = line_map(&[vec![0.0, 1.0]]);
        assert_relative_eq!(
            d_sig(&gt, &pred, &cfg()).unwrap().unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn d_sig_empty_foreground_is_not_applicable() {
        let s = line_map(&[vec![0.0, 0.0]]);
        assert_eq!(d_sig(&s, &s, &cfg()).unwrap(), None);
    }

    #[test]
    fn local_dist_diff_sees_uniform_scaling() {
        // Three moving pixels; candidate doubles everything about the
        // origin, so every pair distance doubles.
        let gt = line_map(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 2.0, 3.0],
            vec![3.0, 4.0, 5.0],
        ]);
        let mut pred = gt.clone();
        pred.positions.mapv_inplace(|v| v * 2.0);
        let c = MetricConfig { knn: 2, ..cfg() };
        let got = local_dist_diff(&gt, &pred, &c).unwrap().unwrap();

        // Direct enumeration over all (pixel, neighbor, frame) triples.
        let fg = [(0usize, 0usize), (0, 1), (0, 2)];
        let mut acc = 0.0;
        let mut n = 0;
        for &(yi, xi) in &fg {
            for &(yj, xj) in &fg {
                if (yi, xi) == (yj, xj) {
                    continue;
                }
                for k in 0..3 {
                    acc += (gt.pos(yi, xi, k) - gt.pos(yj, xj, k)).norm();
                    n += 1;
                }
            }
        }
        assert_relative_eq!(got, acc / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn too_few_neighbors_is_an_error() {
        let gt = line_map(&[vec![0.0, 1.0], vec![1.0, 2.0]]);
        let c = MetricConfig { knn: 8, ..cfg() };
        assert!(matches!(
            local_dist_diff(&gt, &gt, &c),
            Err(Error::TooFewForeground { found: 2, needed: 9 })
        ));
    }

    #[test]
    fn patch_nearest_follows_the_moved_centroid() {
        // Patches 1, 2, 3 on one row at x = 0, 1, 3. The candidate slides
        // the middle patch to x = 2.5 by frame 1, flipping its nearest
        // patch from 1 to 3 there.
        let gt = line_map(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 3.0]]);
        let pred = line_map(&[vec![0.0, 0.0], vec![1.0, 2.5], vec![3.0, 3.0]]);
        let seg = SegMap::new(Array2::from_shape_vec((1, 3), vec![1, 2, 3]).unwrap());
        let got = patch_nearest_acc(&gt, &pred, &seg, &cfg()).unwrap().unwrap();
        assert_relative_eq!(got, 0.5);

        // With only two patches each one's nearest is forced.
        let seg2 = SegMap::new(Array2::from_shape_vec((1, 3), vec![1, 2, 1]).unwrap());
        let got = patch_nearest_acc(&gt, &pred, &seg2, &cfg()).unwrap().unwrap();
        assert_eq!(got, 1.0);

        let seg1 = SegMap::new(Array2::from_shape_vec((1, 3), vec![1, 1, 1]).unwrap());
        assert!(matches!(
            patch_nearest_acc(&gt, &pred, &seg1, &cfg()),
            Err(Error::TooFewPatches { found: 1 })
        ));
    }

    #[test]
    fn quantize_catches_the_flipped_axis() {
        // Both move beyond the stay band on x but in opposite directions;
        // y and z stay within it everywhere.
        let gt = line_map(&[vec![0.0, 1.0]]);
        let pred = line_map(&[vec![0.0, -1.0]]);
        let got = quantize_acc(&gt, &pred, 1, &cfg()).unwrap().unwrap();
        assert_relative_eq!(got, 2.0 / 3.0);

        assert!(matches!(
            quantize_acc(&gt, &pred, 2, &cfg()),
            Err(Error::BadStride { dt: 2, frames: 2 })
        ));
    }

    #[test]
    fn quantize_is_symmetric_in_its_arguments() {
        let gt = line_map(&[vec![0.0, 1.0, 1.5], vec![0.0, 0.1, 0.4]]);
        let pred = line_map(&[vec![0.0, -0.3, 0.9], vec![0.5, 0.5, 0.5]]);
        assert_eq!(
            quantize_acc(&gt, &pred, 1, &cfg()).unwrap(),
            quantize_acc(&pred, &gt, 1, &cfg()).unwrap()
        );
    }

    #[test]
    fn best_of_n_prefers_the_clean_candidate() {
        let gt = line_map(&[
            vec![0.0, 0.5, 1.0],
            vec![1.0, 1.5, 2.0],
            vec![5.0, 5.0, 5.0],
        ]);
        let mut corrupted = gt.clone();
        corrupted.positions.mapv_inplace(|v| v + 0.4);
        for k in 0..3 {
            corrupted.set_pos(0, 0, k, Vector3::new(-(k as f64), 2.0, 4.0));
        }
        let seg = SegMap::new(Array2::from_shape_vec((1, 3), vec![1, 1, 2]).unwrap());
        let c = MetricConfig {
            knn: 1,
            dt_values: vec![1],
            ..cfg()
        };
        let report =
            evaluate_best_of_n(&gt, &[gt.clone(), corrupted], &seg, &c).unwrap();
        assert_eq!(report.fg_mask_iou.candidate, Some(0));
        assert_eq!(report.fg_mask_iou.value, Some(1.0));
        assert_eq!(report.ate_dtw.candidate, Some(0));
        assert_eq!(report.ate_dtw.value, Some(0.0));
        assert_eq!(report.d_sig.candidate, Some(0));
        assert_eq!(report.quantize_acc[0].value, Some(1.0));

        let single = evaluate_best_of_n(&gt, std::slice::from_ref(&gt), &seg, &c).unwrap();
        assert_eq!(single.candidates, 1);
        assert_eq!(single.ate_dtw.value, Some(0.0));

        assert!(matches!(
            evaluate_best_of_n(&gt, &[], &seg, &c),
            Err(Error::EmptyCandidates)
        ));
    }
}
