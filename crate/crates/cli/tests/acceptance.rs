//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single [PASS] line when it holds; tolerances are pinned below.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use momap::compress::{compress, reconstruction_rmse};
use momap::dsl::{emit_dsl, parse_dsl};
use momap::infill::{energy_and_gradient, infill, InfillConfig};
use momap::metrics::{
    ate_dtw, d_sig, dtw_alignment_score, evaluate_best_of_n, fg_mask_iou, local_dist_diff,
    patch_nearest_acc, quantize_acc, MetricConfig,
};
use momap::render::{coverage, render, render_sized};
use momap::synth::{generate, occlude_random, GridSpec, Motion, Region, RigidBodySpec, SceneSpec, Waypoint};
use momap::types::{apply_rigid, Camera, MoMap, RigidTransform, SegMap};
use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const IDENTITY_BUDGET: Duration = Duration::from_secs(10);
const SE3_TOL: f64 = 1e-9;
const DTW_MATCH_TOL: f64 = 1e-12;
const GRAD_REL_TOL: f64 = 1e-4;
const AFFINE_TOL: f64 = 1e-5;
const RIGID_RECOVERY_TOL: f64 = 1e-2;
const INFILL_BUDGET: Duration = Duration::from_secs(60);
const RANK3_RMSE_TOL: f64 = 1e-9;
const FUZZ_ROUNDS: usize = 500;

fn pass(n: u32, what: &str) {
    println!("[PASS] criterion {n}: {what}");
}

fn body(x: usize, y: usize, w: usize, h: usize, depth: f64, motion: Motion) -> RigidBodySpec {
    RigidBodySpec {
        region: Region::Rect { x, y, width: w, height: h },
        depth,
        motion,
    }
}

fn linear(vx: f64, vy: f64, vz: f64) -> Motion {
    Motion::Linear { velocity: [vx, vy, vz] }
}

fn scene(h: usize, w: usize, t: usize, seed: u64, bodies: Vec<RigidBodySpec>) -> SceneSpec {
    SceneSpec {
        grid: GridSpec { height: h, width: w, frames: t },
        time_step: 1.0 / 3.0,
        background_depth: 5.0,
        camera: None,
        seed,
        bodies,
    }
}

#[test]
fn criterion_01_identity_scores_are_perfect() {
    let start = Instant::now();
    let cfg = MetricConfig::default();
    for k in 0..20u64 {
        let spec = scene(
            64,
            64,
            50,
            k,
            vec![
                body(
                    4 + (k as usize % 5) * 3,
                    6 + (k as usize % 4) * 2,
                    6,
                    6,
                    2.0 + 0.1 * (k % 3) as f64,
                    linear(0.02 + 0.002 * k as f64, 0.01, -0.005),
                ),
                body(
                    40,
                    30 + (k as usize % 6) * 3,
                    5,
                    5,
                    3.0,
                    Motion::Screw {
                        axis_point: [0.0, 0.0, 3.0],
                        axis_dir: [0.0, 1.0, 0.0],
                        angular_velocity: 0.05 + 0.01 * (k % 4) as f64,
                        pitch: 0.02,
                    },
                ),
            ],
        );
        let (m, seg, _) = generate(&spec).unwrap();
        assert_eq!(fg_mask_iou(&m, &m, &cfg).unwrap(), 1.0);
        assert_eq!(ate_dtw(&m, &m, &cfg).unwrap(), Some(0.0));
        assert_eq!(d_sig(&m, &m, &cfg).unwrap(), Some(0.0));
        assert_eq!(local_dist_diff(&m, &m, &cfg).unwrap(), Some(0.0));
        assert_eq!(patch_nearest_acc(&m, &m, &seg, &cfg).unwrap(), Some(1.0));
        for &dt in &cfg.dt_values {
            assert_eq!(quantize_acc(&m, &m, dt, &cfg).unwrap(), Some(1.0));
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < IDENTITY_BUDGET, "took {elapsed:?}");
    pass(1, &format!("20 scenes scored perfectly against themselves in {elapsed:?}"));
}

#[test]
fn criterion_02_signature_metric_ignores_rigid_motion() {
    let spec = scene(
        32,
        32,
        20,
        5,
        vec![
            body(4, 4, 6, 6, 2.0, linear(0.05, 0.0, 0.01)),
            body(20, 18, 5, 5, 3.0, linear(-0.02, 0.04, 0.0)),
        ],
    );
    let (gt, _, _) = generate(&spec).unwrap();
    let mut pred = gt.clone();
    for y in 0..32 {
        for x in 0..32 {
            for k in 0..20 {
                pred.positions[[y, x, k, 0]] += 0.002 * (k as f64) * ((x + y) % 3) as f64;
            }
        }
    }
    let cfg = MetricConfig::default();
    let baseline = d_sig(&gt, &pred, &cfg).unwrap().unwrap();
    assert!(baseline > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let g = RigidTransform::from_axis_angle(
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            ) + Vector3::new(0.0, 0.0, 1e-3),
            rng.random_range(-3.0..3.0),
            Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
        );
        let moved = d_sig(&gt, &apply_rigid(&pred, &g).unwrap(), &cfg)
            .unwrap()
            .unwrap();
        assert!(
            (moved - baseline).abs() < SE3_TOL,
            "drifted by {}",
            (moved - baseline).abs()
        );
    }
    pass(2, "signature distance stable under 50 rigid motions");
}

/// Independent reference: walk every monotone endpoint-matched warp.
fn enumerate_alignment(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    fn go(
        a: &[Vector3<f64>],
        b: &[Vector3<f64>],
        i: usize,
        j: usize,
        cost: f64,
        len: u32,
        best: &mut (f64, u32),
    ) {
        let cost = cost + (a[i] - b[j]).norm();
        let len = len + 1;
        if i + 1 == a.len() && j + 1 == b.len() {
            if cost < best.0 || (cost == best.0 && len < best.1) {
                *best = (cost, len);
            }
            return;
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, cost, len, best);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, cost, len, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, cost, len, best);
        }
    }
    let mut best = (f64::INFINITY, u32::MAX);
    go(a, b, 0, 0, 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

#[test]
fn criterion_03_alignment_dp_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let track = |len: usize, rng: &mut ChaCha8Rng| -> Vec<Vector3<f64>> {
        (0..len)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    };
    for case in 0..200 {
        let la = rng.random_range(1..=6);
        let a = track(la, &mut rng);
        let lb = rng.random_range(1..=6);
        let b = track(lb, &mut rng);
        let dp = dtw_alignment_score(&a, &b);
        let brute = enumerate_alignment(&a, &b);
        assert!(
            (dp - brute).abs() <= DTW_MATCH_TOL,
            "case {case}: {dp} vs {brute}"
        );
    }
    pass(3, "dynamic program matches enumeration on 200 random pairs");
}

#[test]
fn criterion_04_best_of_n_equals_brute_force() {
    let spec = scene(
        24,
        24,
        18,
        9,
        vec![
            body(3, 3, 5, 5, 2.0, linear(0.04, 0.01, 0.0)),
            body(14, 12, 6, 6, 2.5, linear(-0.02, 0.03, 0.01)),
        ],
    );
    let (gt, seg, _) = generate(&spec).unwrap();
    let mut candidates: Vec<MoMap> = (0..10)
        .map(|i| {
            let mut c = gt.clone();
            if i != 3 {
                let amp = 0.002 * (i + 1) as f64;
                for y in 0..24 {
                    for x in 0..24 {
                        for k in 0..18 {
                            c.positions[[y, x, k, 0]] +=
                                amp * ((y * 31 + x * 7 + k) % 5) as f64;
                            c.positions[[y, x, k, 2]] -= amp * 0.5 * ((x + k) % 3) as f64;
                        }
                    }
                }
            }
            c
        })
        .collect();
    let cfg = MetricConfig {
        dt_values: vec![1, 4, 16],
        ..MetricConfig::default()
    };

    let check = |cands: &[MoMap]| {
        let report = evaluate_best_of_n(&gt, cands, &seg, &cfg).unwrap();
        // Brute force: score candidates one by one with the public
        // metric functions and fold with the same first-wins rule.
        let fold_up = |vals: &[Option<f64>]| {
            let mut best: (Option<f64>, Option<usize>) = (None, None);
            for (i, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    if best.0.is_none_or(|b| *v > b) {
                        best = (Some(*v), Some(i));
                    }
                }
            }
            best
        };
        let fold_down = |vals: &[Option<f64>]| {
            let mut best: (Option<f64>, Option<usize>) = (None, None);
            for (i, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    if best.0.is_none_or(|b| *v < b) {
                        best = (Some(*v), Some(i));
                    }
                }
            }
            best
        };
        let col: Vec<Option<f64>> = cands
            .iter()
            .map(|c| Some(fg_mask_iou(&gt, c, &cfg).unwrap()))
            .collect();
        assert_eq!((report.fg_mask_iou.value, report.fg_mask_iou.candidate), fold_up(&col));
        let col: Vec<_> = cands.iter().map(|c| ate_dtw(&gt, c, &cfg).unwrap()).collect();
        assert_eq!((report.ate_dtw.value, report.ate_dtw.candidate), fold_down(&col));
        let col: Vec<_> = cands.iter().map(|c| d_sig(&gt, c, &cfg).unwrap()).collect();
        assert_eq!((report.d_sig.value, report.d_sig.candidate), fold_down(&col));
        let col: Vec<_> = cands
            .iter()
            .map(|c| local_dist_diff(&gt, c, &cfg).unwrap())
            .collect();
        assert_eq!(
            (report.local_dist_diff.value, report.local_dist_diff.candidate),
            fold_down(&col)
        );
        let col: Vec<_> = cands
            .iter()
            .map(|c| patch_nearest_acc(&gt, c, &seg, &cfg).unwrap())
            .collect();
        assert_eq!(
            (report.patch_nearest_acc.value, report.patch_nearest_acc.candidate),
            fold_up(&col)
        );
        for (qi, &dt) in cfg.dt_values.iter().enumerate() {
            let col: Vec<_> = cands
                .iter()
                .map(|c| quantize_acc(&gt, c, dt, &cfg).unwrap())
                .collect();
            let q = &report.quantize_acc[qi];
            assert_eq!(q.dt, dt);
            assert_eq!((q.value, q.candidate), fold_up(&col));
        }
        report
    };

    let before = check(&candidates);
    // An extra candidate may only improve or hold each best score.
    let mut extra = gt.clone();
    for v in extra.positions.iter_mut() {
        *v += 0.05;
    }
    candidates.push(extra);
    let after = check(&candidates);
    assert!(after.fg_mask_iou.value >= before.fg_mask_iou.value);
    assert!(after.patch_nearest_acc.value >= before.patch_nearest_acc.value);
    assert!(after.ate_dtw.value <= before.ate_dtw.value);
    assert!(after.d_sig.value <= before.d_sig.value);
    assert!(after.local_dist_diff.value <= before.local_dist_diff.value);
    for (qb, qa) in before.quantize_acc.iter().zip(&after.quantize_acc) {
        assert!(qa.value >= qb.value);
    }
    pass(4, "protocol agrees with per-candidate brute force, 11th candidate never hurts");
}

#[test]
fn criterion_05_infill_gradients_and_recovery() {
    // Analytic gradients against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let t = rng.random_range(4..=6);
        let mut m = MoMap::zeros(2, 3, t);
        for y in 0..2 {
            for x in 0..3 {
                let anchor = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1.0..3.0),
                );
                m.set_pos(y, x, 0, anchor);
                for k in 1..t {
                    let hide = rng.random::<f64>() < 0.3;
                    m.valid[[y, x, k]] = !hide;
                    m.set_pos(
                        y,
                        x,
                        k,
                        anchor
                            + Vector3::new(
                                0.15 * k as f64 + rng.random_range(-0.2..0.2),
                                rng.random_range(-0.2..0.2),
                                rng.random_range(-0.2..0.2),
                            ),
                    );
                }
            }
        }
        let free = m.valid.mapv(|v| !v);
        let cfg = InfillConfig {
            w_accel: rng.random_range(0.3..2.0),
            w_arap: rng.random_range(0.3..2.0),
            knn: 3,
            ..InfillConfig::default()
        };
        let (_, grad) = energy_and_gradient(&m, &free, &cfg).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                for k in 0..t {
                    if !free[[y, x, k]] {
                        continue;
                    }
                    for c in 0..3 {
                        let x0 = m.positions[[y, x, k, c]];
                        let h = 1e-5 * x0.abs().max(1.0);
                        m.positions[[y, x, k, c]] = x0 + h;
                        let (ep, _) = energy_and_gradient(&m, &free, &cfg).unwrap();
                        m.positions[[y, x, k, c]] = x0 - h;
                        let (em, _) = energy_and_gradient(&m, &free, &cfg).unwrap();
                        m.positions[[y, x, k, c]] = x0;
                        let fd = (ep - em) / (2.0 * h);
                        let g = grad[[y, x, k, c]];
                        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                        assert!(rel < GRAD_REL_TOL, "gradient off by {rel}");
                    }
                }
            }
        }
    }

    // A lone pixel on a straight-line path is recovered through its
    // holes, trailing ones included.
    let t = 12;
    let mut lone = MoMap::zeros(1, 1, t);
    let p0 = Vector3::new(0.4, -0.2, 2.0);
    let v = Vector3::new(0.03, 0.05, -0.02);
    for k in 0..t {
        lone.set_pos(0, 0, k, p0 + v * k as f64);
    }
    let truth = lone.clone();
    for k in [3usize, 4, 8, 10, 11] {
        lone.valid[[0, 0, k]] = false;
        lone.set_pos(0, 0, k, Vector3::zeros());
    }
    let cfg = InfillConfig {
        max_iters: 20_000,
        grad_tol: 1e-8,
        ..InfillConfig::default()
    };
    let r = infill(&lone, &cfg).unwrap();
    for k in 0..t {
        let err = (r.momap.pos(0, 0, k) - truth.pos(0, 0, k)).norm();
        assert!(err < AFFINE_TOL, "frame {k} off by {err}");
    }

    // A rigid body on a bent path, 40% of its entries hidden.
    let start = Instant::now();
    let spec = SceneSpec {
        grid: GridSpec { height: 32, width: 32, frames: 50 },
        time_step: 1.0 / 3.0,
        background_depth: 5.0,
        camera: None,
        seed: 77,
        bodies: vec![RigidBodySpec {
            region: Region::Rect { x: 10, y: 10, width: 10, height: 10 },
            depth: 2.0,
            motion: Motion::Waypoints {
                waypoints: vec![
                    Waypoint { time: 0.0, offset: [0.0, 0.0, 0.0] },
                    Waypoint { time: 8.0, offset: [0.15, 0.0, 0.0] },
                    Waypoint { time: 49.0 / 3.0, offset: [0.2, 0.1, 0.0] },
                ],
            },
        }],
    };
    let (full, _, _) = generate(&spec).unwrap();
    let holed = occlude_random(&full, 0.4, 4242).unwrap();
    let r = infill(&holed, &InfillConfig::default()).unwrap();
    let elapsed = start.elapsed();

    for win in r.energy_trace.windows(2) {
        assert!(win[1] <= win[0] + 1e-12, "energy rose: {win:?}");
    }
    let mut worst = 0.0f64;
    for y in 0..32 {
        for x in 0..32 {
            for k in 0..50 {
                if !holed.valid[[y, x, k]] && holed.is_covered(y, x) {
                    worst = worst.max((r.momap.pos(y, x, k) - full.pos(y, x, k)).norm());
                }
            }
        }
    }
    assert!(worst < RIGID_RECOVERY_TOL, "worst hidden-entry error {worst}");
    assert!(elapsed < INFILL_BUDGET, "took {elapsed:?}");
    pass(
        5,
        &format!("gradients check out; affine and rigid recovery within tolerance (worst {worst:.2e}, {elapsed:?})"),
    );
}

#[test]
fn criterion_06_compression_rank_and_ratio() {
    // One shared depth plane and parallel velocities with distinct
    // speeds: three centered directions in total.
    let dir = [0.6, 0.0, 0.8];
    let spec = SceneSpec {
        grid: GridSpec { height: 16, width: 16, frames: 50 },
        time_step: 1.0 / 3.0,
        background_depth: 2.0,
        camera: None,
        seed: 1,
        bodies: vec![
            body(1, 1, 4, 4, 2.0, linear(0.01 * dir[0], 0.01 * dir[1], 0.01 * dir[2])),
            body(8, 2, 4, 4, 2.0, linear(0.02 * dir[0], 0.02 * dir[1], 0.02 * dir[2])),
            body(3, 9, 5, 5, 2.0, linear(0.03 * dir[0], 0.03 * dir[1], 0.03 * dir[2])),
        ],
    };
    let (planar, _, _) = generate(&spec).unwrap();
    let c3 = compress(&planar, 3).unwrap();
    let rmse3 = reconstruction_rmse(&planar, &c3).unwrap();
    assert!(rmse3 < RANK3_RMSE_TOL, "rank-3 scene leaves rmse {rmse3}");

    let generic = scene(
        16,
        16,
        10,
        2,
        vec![
            body(2, 2, 5, 5, 2.0, linear(0.05, -0.02, 0.01)),
            body(9, 9, 4, 4, 3.0, Motion::Screw {
                axis_point: [0.0, 0.0, 3.0],
                axis_dir: [0.0, 1.0, 0.0],
                angular_velocity: 0.15,
                pitch: 0.03,
            }),
        ],
    );
    let (m, _, _) = generate(&generic).unwrap();
    let mut prev = f64::INFINITY;
    for channels in 1..=30 {
        let c = compress(&m, channels).unwrap();
        let rmse = reconstruction_rmse(&m, &c).unwrap();
        assert!(rmse <= prev + 1e-12, "rmse rose at {channels} channels");
        prev = rmse;
    }

    let c32 = compress(&planar, 32).unwrap();
    assert_eq!(c32.coefficient_ratio(), 150.0 / 32.0);
    pass(6, &format!("rank-3 rmse {rmse3:.2e}, error monotone, ratio {}", 150.0 / 32.0));
}

#[test]
fn criterion_07_renderer_contract() {
    // Pinhole placement.
    let mut m = MoMap::zeros(1, 2, 1);
    m.set_pos(0, 0, 0, Vector3::new(0.0, 0.0, 2.0));
    m.set_pos(0, 1, 0, Vector3::new(0.0, 0.0, 2.0));
    m.reference_colors = Some(Array3::from_elem((1, 2, 3), 0.5));
    let seg = SegMap::new(Array2::from_shape_vec((1, 2), vec![1, 2]).unwrap());
    let cam = Camera::fixed(100.0, 100.0, 32.0, 32.0, 1);
    let frames = render_sized(&m, &seg, &cam, 0.5, 64, 64).unwrap();
    assert_eq!(frames[0].depth[[32, 32]], 2.0);
    // Equal depths: the earlier source pixel keeps the splat.
    assert_eq!(frames[0].seg[[32, 32]], 1);

    // Strictly nearer point wins regardless of order.
    m.set_pos(0, 0, 0, Vector3::new(0.0, 0.0, 3.0));
    let frames = render_sized(&m, &seg, &cam, 0.5, 64, 64).unwrap();
    assert_eq!(frames[0].seg[[32, 32]], 2);
    assert_eq!(frames[0].depth[[32, 32]], 2.0);

    // Self-projection at the reference frame is pixel-exact.
    let spec = scene(
        20,
        20,
        4,
        13,
        vec![body(4, 5, 6, 5, 2.0, linear(0.03, 0.01, 0.0))],
    );
    let (m, seg, cam) = generate(&spec).unwrap();
    let frames = render(&m, &seg, &cam, 0.5).unwrap();
    let colors = m.reference_colors.as_ref().unwrap();
    for y in 0..20 {
        for x in 0..20 {
            assert!(!frames[0].hole[[y, x]]);
            assert_eq!(frames[0].seg[[y, x]], seg.ids[[y, x]]);
            for c in 0..3 {
                assert_eq!(frames[0].color[[y, x, c]], colors[[y, x, c]]);
            }
        }
    }

    // Coverage never shrinks as the splat radius grows.
    let mut prev = vec![-1.0; m.frames()];
    for radius in [0.0, 0.5, 1.0, 2.0] {
        let cov = coverage(&render(&m, &seg, &cam, radius).unwrap());
        for (a, b) in prev.iter().zip(&cov) {
            assert!(b >= a, "coverage shrank at radius {radius}");
        }
        prev = cov;
    }
    pass(7, "pinhole, z-buffer, self-projection and coverage all hold");
}

#[test]
fn criterion_08_dsl_round_trip_and_vocabulary() {
    let v = 0.05;
    let spec = scene(
        32,
        32,
        10,
        21,
        vec![
            body(1, 1, 4, 4, 2.0, linear(v, 0.0, 0.0)),
            body(7, 1, 4, 4, 2.0, linear(-v, 0.0, 0.0)),
            body(13, 1, 4, 4, 2.0, linear(0.0, v, 0.0)),
            body(19, 1, 4, 4, 2.0, linear(0.0, -v, 0.0)),
            body(25, 1, 4, 4, 2.0, linear(0.0, 0.0, v)),
            body(1, 14, 4, 4, 2.0, linear(0.0, 0.0, -v)),
        ],
    );
    let (m, seg, _) = generate(&spec).unwrap();
    let d = emit_dsl(&m, &seg, 0.02).unwrap();

    let signs: Vec<[i8; 3]> = d.patches.iter().map(|p| p.signs()).collect();
    for axis in 0..3 {
        for want in [-1i8, 0, 1] {
            assert!(
                signs.iter().any(|s| s[axis] == want),
                "axis {axis} never reads {want}"
            );
        }
    }
    let text = d.to_json_string();
    assert_eq!(parse_dsl(&text).unwrap(), d);

    let rejected = [
        r#"{"horizon": 2, "patches": [{"id": 1, "x": "sideways", "y": "stay", "z": "stay", "magnitude": 0.0}]}"#,
        r#"{"horizon": 2, "patches": [{"id": 1, "x": "stay", "y": "stay", "z": "stay", "magnitude": 0.0},
                                      {"id": 1, "x": "stay", "y": "stay", "z": "stay", "magnitude": 0.0}]}"#,
        r#"{"horizon": 2, "patches": [{"id": 1, "x": "stay", "y": "stay", "z": "stay"}]}"#,
        r#"{"horizon": 2, "extra": 1, "patches": []}"#,
        r#"{"horizon": 2, "patches": [{"id": 1, "x": 3, "y": "stay", "z": "stay", "magnitude": 0.0}]}"#,
    ];
    for doc in rejected {
        assert!(parse_dsl(doc).is_err(), "accepted: {doc}");
    }
    pass(8, "nine-word vocabulary emitted, reparsed, malformed documents rejected");
}

#[test]
fn criterion_09_file_format_fuzz() {
    let rotations = [
        Matrix3::identity(),
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fuzz.momap");
    let copy = dir.path().join("fuzz2.momap");
    let broken = dir.path().join("broken.momap");

    for round in 0..FUZZ_ROUNDS {
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let t = rng.random_range(1..4);
        let mut m = MoMap::zeros(h, w, t);
        for y in 0..h {
            for x in 0..w {
                let covered = rng.random::<f64>() < 0.85;
                for k in 0..t {
                    for c in 0..3 {
                        m.positions[[y, x, k, c]] =
                            rng.random_range(-32768i32..32768) as f64 / 128.0;
                    }
                    m.valid[[y, x, k]] = covered && (k == 0 || rng.random::<f64>() < 0.8);
                }
            }
        }
        if rng.random::<f64>() < 0.5 {
            let vals: Vec<f64> = (0..h * w * 3)
                .map(|_| rng.random_range(0u32..=256) as f64 / 256.0)
                .collect();
            m.reference_colors = Some(Array3::from_shape_vec((h, w, 3), vals).unwrap());
        }
        let seg = (rng.random::<f64>() < 0.5).then(|| {
            let ids: Vec<u32> = (0..h * w).map(|i| (i % 2) as u32).collect();
            SegMap::new(Array2::from_shape_vec((h, w), ids).unwrap())
        });
        let cam = (rng.random::<f64>() < 0.5).then(|| Camera {
            fx: 50.0,
            fy: 40.0,
            cx: 2.0,
            cy: 1.5,
            extrinsics: (0..t)
                .map(|_| {
                    RigidTransform::new(
                        rotations[rng.random_range(0..rotations.len())],
                        Vector3::new(
                            rng.random_range(-128i32..128) as f64 / 32.0,
                            rng.random_range(-128i32..128) as f64 / 32.0,
                            rng.random_range(-128i32..128) as f64 / 32.0,
                        ),
                    )
                    .unwrap()
                })
                .collect(),
        });

        momap::io::write_momap(&m, seg.as_ref(), cam.as_ref(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (m2, seg2, cam2) = momap::io::read_momap(&path).unwrap();
        assert_eq!(m.positions, m2.positions, "round {round}");
        assert_eq!(m.valid, m2.valid);
        assert_eq!(m.reference_colors, m2.reference_colors);
        assert_eq!(seg.is_some(), seg2.is_some());
        assert_eq!(cam.is_some(), cam2.is_some());
        momap::io::write_momap(&m2, seg2.as_ref(), cam2.as_ref(), &copy).unwrap();
        assert_eq!(bytes, std::fs::read(&copy).unwrap(), "round {round}");

        let cut = rng.random_range(0..bytes.len());
        std::fs::write(&broken, &bytes[..cut]).unwrap();
        assert!(momap::io::read_momap(&broken).is_err(), "round {round} cut {cut}");

        let mut defaced = bytes;
        let flip = rng.random_range(0..4);
        defaced[flip] ^= 0x80;
        std::fs::write(&broken, &defaced).unwrap();
        assert!(
            matches!(momap::io::read_momap(&broken), Err(momap::Error::BadMagic { .. })),
            "round {round}"
        );
    }
    pass(9, &format!("{FUZZ_ROUNDS} fuzz rounds: exact round trips, clean rejections"));
}

fn run_cli(args: &[&str], dir: &Path) -> (String, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_momap"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "momap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (String::from_utf8(out.stdout).unwrap(), out.stderr)
}

#[test]
fn criterion_10_cli_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let scene_json = r#"{
        "grid": {"height": 24, "width": 24, "frames": 20},
        "seed": 6,
        "bodies": [
            {"region": {"type": "rect", "x": 3, "y": 3, "width": 5, "height": 5},
             "depth": 2.0,
             "motion": {"type": "linear", "velocity": [0.06, 0.01, 0.0]}},
            {"region": {"type": "rect", "x": 14, "y": 12, "width": 5, "height": 5},
             "depth": 3.0,
             "motion": {"type": "screw", "axis_point": [0.0, 0.0, 3.0],
                        "axis_dir": [0.0, 1.0, 0.0],
                        "angular_velocity": 0.1, "pitch": 0.02}}
        ]
    }"#;
    std::fs::write(dir.path().join("scene.json"), scene_json).unwrap();

    for threads in ["1", "8"] {
        let suffix = format!("t{threads}");
        run_cli(
            &["gen", "--scene", "scene.json", "--out", &format!("gt_{suffix}.momap"), "--threads", threads],
            dir.path(),
        );
        run_cli(
            &[
                "compress", "--input", &format!("gt_{suffix}.momap"),
                "--channels", "5", "--out", &format!("c5_{suffix}.momapz"),
                "--threads", threads,
            ],
            dir.path(),
        );
        run_cli(
            &[
                "decompress", "--input", &format!("c5_{suffix}.momapz"),
                "--out", &format!("d5_{suffix}.momap"), "--threads", threads,
            ],
            dir.path(),
        );
    }
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("gt_t1.momap"), read("gt_t8.momap"));
    assert_eq!(read("gt_t1.json"), read("gt_t8.json"));
    assert_eq!(read("c5_t1.momapz"), read("c5_t8.momapz"));
    assert_eq!(read("d5_t1.momap"), read("d5_t8.momap"));

    let (eval1, _) = run_cli(
        &[
            "eval", "--gt", "gt_t1.momap", "--pred", "d5_t1.momap", "gt_t8.momap",
            "--dt", "1", "4", "16", "--threads", "1",
        ],
        dir.path(),
    );
    let (eval8, _) = run_cli(
        &[
            "eval", "--gt", "gt_t1.momap", "--pred", "d5_t1.momap", "gt_t8.momap",
            "--dt", "1", "4", "16", "--threads", "8",
        ],
        dir.path(),
    );
    assert_eq!(eval1, eval8, "eval output depends on thread count");
    pass(10, "gen, compress, decompress and eval byte-identical at 1 and 8 threads");
}
