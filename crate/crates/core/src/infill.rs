//! Completion of hidden trajectory entries by energy minimization.
//!
//! Observed entries are hard constraints. Hidden entries of moving pixels
//! are free variables of
//!
//! ```text
//! E = w_accel * sum_p sum_t |x_p(t-1) - 2 x_p(t) + x_p(t+1)|^2
//!   + w_arap  * sum_{(p,q) in G} sum_t (|x_p(t) - x_q(t)| - r_pq)^2
//! ```
//!
//! where `G` connects each moving pixel to its K nearest moving neighbors
//! at the reference frame and `r_pq` is the reference-frame distance. The
//! first term favors straight, smoothly accelerating bridges across
//! occlusions; the second keeps local shape from collapsing while bridging.
//!
//! Static pixels (no observed displacement) are not optimized: their hidden
//! entries are filled with the anchor position directly. Never-covered
//! pixels are left untouched.
//!
//! The solver is plain gradient descent with a backtracking line search,
//! which is slow but transparent: the gradient is checked against finite
//! differences in the test suite, and every accepted step is guaranteed to
//! lower the energy.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{validate_momap, MoMap};
use crate::Result;

/// Sufficient-decrease constant for the backtracking line search.
const ARMIJO_C: f64 = 1e-4;

/// Observed displacement above this marks a pixel as moving. Synthetic and
/// file-loaded static trajectories repeat the anchor bit-exactly, so the
/// guard only has to absorb arithmetic noise.
const MOVING_EPS: f64 = 1e-12;

/// Edges shorter than this contribute no rigidity gradient; the direction
/// of a zero-length difference is undefined.
const EDGE_FLOOR: f64 = 1e-30;

const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InfillConfig {
    pub w_accel: f64,
    pub w_arap: f64,
    pub knn: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step: f64,
}

impl Default for InfillConfig {
    fn default() -> Self {
        Self {
            w_accel: 1.0,
            w_arap: 1.0,
            knn: 8,
            max_iters: 500,
            grad_tol: 1e-6,
            step: 1e-2,
        }
    }
}

impl InfillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = !(self.w_accel.is_finite() && self.w_accel >= 0.0)
            || !(self.w_arap.is_finite() && self.w_arap >= 0.0)
            || self.knn < 1
            || self.max_iters < 1
            || !(self.grad_tol.is_finite() && self.grad_tol > 0.0)
            || !(self.step.is_finite() && self.step > 0.0);
        if bad {
            return Err(Error::Validation {
                message: format!("infill config out of range: {self:?}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InfillResult {
    pub momap: MoMap,
    /// Energy at the final iterate.
    pub energy: f64,
    /// Accepted descent steps.
    pub iterations: usize,
    /// True when the gradient norm reached `grad_tol` (also true when there
    /// was nothing to optimize).
    pub converged: bool,
    /// Energy at the start and after each accepted step; non-increasing.
    pub energy_trace: Vec<f64>,
}

/// The optimization problem: moving pixels, their rigidity graph, and which
/// (pixel, frame) slots are free.
struct Problem {
    nodes: Vec<(usize, usize)>,
    frames: usize,
    /// (i, j, rest length) with i < j, deduplicated.
    edges: Vec<(usize, usize, f64)>,
    /// Per (node, frame): may this entry move?
    free: Vec<bool>,
    w_accel: f64,
    w_arap: f64,
}

impl Problem {
    fn n_coords(&self) -> usize {
        self.nodes.len() * self.frames * 3
    }

    fn any_free(&self) -> bool {
        self.free.iter().any(|&f| f)
    }
}

/// Covered pixels whose observed entries show real displacement, in
/// row-major order.
fn moving_pixels(m: &MoMap) -> Vec<(usize, usize)> {
    let (h, w, t) = (m.height(), m.width(), m.frames());
    let mut nodes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            let anchor = m.pos(y, x, 0);
            let moving = (1..t).any(|k| {
                m.valid[[y, x, k]] && (m.pos(y, x, k) - anchor).norm() > MOVING_EPS
            });
            if moving {
                nodes.push((y, x));
            }
        }
    }
    nodes
}

/// K-nearest-neighbor graph over the nodes' reference positions. Ties are
/// broken by node order so the graph is reproducible.
fn build_edges(m: &MoMap, nodes: &[(usize, usize)], knn: usize) -> Vec<(usize, usize, f64)> {
    let n = nodes.len();
    if n < 2 {
        return Vec::new();
    }
    let anchors: Vec<_> = nodes.iter().map(|&(y, x)| m.pos(y, x, 0)).collect();
    let k = knn.min(n - 1);
    let mut edge_set = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((anchors[i] - anchors[j]).norm(), j))
            .collect();
        by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in by_dist.iter().take(k) {
            edge_set.insert((i.min(j), i.max(j)));
        }
    }
    edge_set
        .into_iter()
        .map(|(i, j)| (i, j, (anchors[i] - anchors[j]).norm()))
        .collect()
}

/// Energy at `xs`, and its gradient into `grad` when requested. The
/// gradient is over all coordinates; the caller masks constrained slots.
fn eval(xs: &[f64], p: &Problem, mut grad: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let t = p.frames;
    let mut energy = 0.0;

    if p.w_accel > 0.0 {
        for node in 0..p.nodes.len() {
            let base = node * t * 3;
            for k in 1..t.saturating_sub(1) {
                let i0 = base + (k - 1) * 3;
                let i1 = base + k * 3;
                let i2 = base + (k + 1) * 3;
                let mut r = [0.0; 3];
                for c in 0..3 {
                    r[c] = xs[i0 + c] - 2.0 * xs[i1 + c] + xs[i2 + c];
                    energy += p.w_accel * r[c] * r[c];
                }
                if let Some(g) = grad.as_deref_mut() {
                    for c in 0..3 {
                        let two = 2.0 * p.w_accel * r[c];
                        g[i0 + c] += two;
                        g[i1 + c] -= 4.0 * p.w_accel * r[c];
                        g[i2 + c] += two;
                    }
                }
            }
        }
    }

    if p.w_arap > 0.0 {
        for &(i, j, rest) in &p.edges {
            for k in 0..t {
                let a = (i * t + k) * 3;
                let b = (j * t + k) * 3;
                let dx = xs[a] - xs[b];
                let dy = xs[a + 1] - xs[b + 1];
                let dz = xs[a + 2] - xs[b + 2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                let resid = d - rest;
                energy += p.w_arap * resid * resid;
                if let Some(g) = grad.as_deref_mut() {
                    if d > EDGE_FLOOR {
                        let scale = 2.0 * p.w_arap * resid / d;
                        g[a] += scale * dx;
                        g[a + 1] += scale * dy;
                        g[a + 2] += scale * dz;
                        g[b] -= scale * dx;
                        g[b + 1] -= scale * dy;
                        g[b + 2] -= scale * dz;
                    }
                }
            }
        }
    }
    energy
}

fn mask_constrained(grad: &mut [f64], p: &Problem) {
    for (nt, &free) in p.free.iter().enumerate() {
        if !free {
            grad[nt * 3] = 0.0;
            grad[nt * 3 + 1] = 0.0;
            grad[nt * 3 + 2] = 0.0;
        }
    }
}

fn gather(m: &MoMap, nodes: &[(usize, usize)]) -> Vec<f64> {
    let t = m.frames();
    let mut xs = Vec::with_capacity(nodes.len() * t * 3);
    for &(y, x) in nodes {
        for k in 0..t {
            for c in 0..3 {
                xs.push(m.positions[[y, x, k, c]]);
            }
        }
    }
    xs
}

/// Fills the map's hidden entries. Observed positions come back
/// bit-identical; afterwards every covered pixel is valid at every frame.
pub fn infill(m: &MoMap, cfg: &InfillConfig) -> Result<InfillResult> {
    cfg.validate()?;
    let violations = validate_momap(m);
    if !violations.is_empty() {
        return Err(Error::Validation {
            message: violations.join("; "),
        });
    }
    let (h, w, t) = (m.height(), m.width(), m.frames());

    let nodes = moving_pixels(m);
    let free: Vec<bool> = nodes
        .iter()
        .flat_map(|&(y, x)| (0..t).map(move |k| !m.valid[[y, x, k]]))
        .collect();
    let problem = Problem {
        edges: build_edges(m, &nodes, cfg.knn),
        nodes,
        frames: t,
        free,
        w_accel: cfg.w_accel,
        w_arap: cfg.w_arap,
    };

    let mut xs = gather(m, &problem.nodes);
    seed_hidden(&mut xs, m, &problem);

    let (energy, iterations, converged, trace) = if problem.any_free() {
        descend(&mut xs, &problem, cfg)?
    } else {
        let e = eval(&xs, &problem, None);
        if !e.is_finite() {
            return Err(Error::NonFiniteEnergy { iteration: 0 });
        }
        (e, 0, true, vec![e])
    };

    let mut out = m.clone();
    let mut optimized = ndarray::Array2::from_elem((h, w), false);
    for (n, &(y, x)) in problem.nodes.iter().enumerate() {
        optimized[[y, x]] = true;
        for k in 0..t {
            if !m.valid[[y, x, k]] {
                for c in 0..3 {
                    out.positions[[y, x, k, c]] = xs[(n * t + k) * 3 + c];
                }
            }
        }
    }
    // Pixels that never moved keep their anchor through occlusions.
    for y in 0..h {
        for x in 0..w {
            if !m.is_covered(y, x) {
                continue;
            }
            let anchor = m.pos(y, x, 0);
            for k in 0..t {
                if !m.valid[[y, x, k]] && !optimized[[y, x]] {
                    out.set_pos(y, x, k, anchor);
                }
                out.valid[[y, x, k]] = true;
            }
        }
    }

    Ok(InfillResult {
        momap: out,
        energy,
        iterations,
        converged,
        energy_trace: trace,
    })
}

/// Linear interpolation between the observed entries bracketing each hidden
/// run; trailing runs hold the last observation. A cheap start that is
/// already optimal for straight-line motion.
fn seed_hidden(xs: &mut [f64], m: &MoMap, p: &Problem) {
    let t = p.frames;
    for (n, &(y, x)) in p.nodes.iter().enumerate() {
        let base = n * t * 3;
        let observed: Vec<usize> = (0..t).filter(|&k| m.valid[[y, x, k]]).collect();
        for k in 0..t {
            if m.valid[[y, x, k]] {
                continue;
            }
            let before = *observed.iter().rev().find(|&&o| o < k).unwrap();
            let after = observed.iter().copied().find(|&o| o > k);
            for c in 0..3 {
                let a = xs[base + before * 3 + c];
                xs[base + k * 3 + c] = match after {
                    Some(b) => {
                        let u = (k - before) as f64 / (b - before) as f64;
                        a + u * (xs[base + b * 3 + c] - a)
                    }
                    None => a,
                };
            }
        }
    }
}

fn descend(
    xs: &mut Vec<f64>,
    p: &Problem,
    cfg: &InfillConfig,
) -> Result<(f64, usize, bool, Vec<f64>)> {
    let n = p.n_coords();
    let mut grad = vec![0.0; n];
    let mut energy = eval(xs, p, Some(&mut grad));
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    mask_constrained(&mut grad, p);

    let mut trace = vec![energy];
    let mut step = cfg.step;
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; n];

    for iter in 0..cfg.max_iters {
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax <= cfg.grad_tol {
            converged = true;
            break;
        }
        let gsq: f64 = grad.iter().map(|g| g * g).sum();

        let mut s = step;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = xs[i] - s * grad[i];
            }
            let e_trial = eval(&trial, p, None);
            if !e_trial.is_finite() {
                return Err(Error::NonFiniteEnergy { iteration: iter });
            }
            if e_trial <= energy - ARMIJO_C * s * gsq {
                std::mem::swap(xs, &mut trial);
                energy = e_trial;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            // Step shrank to the numerical floor; further progress is
            // below measurement.
            break;
        }
        iterations += 1;
        trace.push(energy);
        step = s * 2.0;

        let e = eval(xs, p, Some(&mut grad));
        if !e.is_finite() {
            return Err(Error::NonFiniteEnergy { iteration: iter });
        }
        mask_constrained(&mut grad, p);
    }
    Ok((energy, iterations, converged, trace))
}

/// Energy and its gradient at the map's current values, restricted to the
/// entries flagged in `free_mask`. The mask may only flag entries that are
/// not observed.
pub fn energy_and_gradient(
    m: &MoMap,
    free_mask: &Array3<bool>,
    cfg: &InfillConfig,
) -> Result<(f64, Array4<f64>)> {
    cfg.validate()?;
    let (h, w, t) = (m.height(), m.width(), m.frames());
    if free_mask.shape() != m.valid.shape() {
        return Err(Error::ShapeMismatch {
            message: format!(
                "free mask shape {:?} does not match validity {:?}",
                free_mask.shape(),
                m.valid.shape()
            ),
        });
    }
    for y in 0..h {
        for x in 0..w {
            for k in 0..t {
                if free_mask[[y, x, k]] && m.valid[[y, x, k]] {
                    return Err(Error::Validation {
                        message: format!(
                            "free mask flags observed entry at pixel ({x}, {y}) frame {k}"
                        ),
                    });
                }
            }
        }
    }

    let nodes = moving_pixels(m);
    for &(y, x) in &nodes {
        for k in 0..t {
            for c in 0..3 {
                if !m.positions[[y, x, k, c]].is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("iterate at pixel ({x}, {y}) frame {k}"),
                    });
                }
            }
        }
    }
    let free: Vec<bool> = nodes
        .iter()
        .flat_map(|&(y, x)| (0..t).map(move |k| free_mask[[y, x, k]]))
        .collect();
    let problem = Problem {
        edges: build_edges(m, &nodes, cfg.knn),
        nodes,
        frames: t,
        free,
        w_accel: cfg.w_accel,
        w_arap: cfg.w_arap,
    };

    let xs = gather(m, &problem.nodes);
    let mut grad_flat = vec![0.0; problem.n_coords()];
    let energy = eval(&xs, &problem, Some(&mut grad_flat));
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    mask_constrained(&mut grad_flat, &problem);

    let mut grad = Array4::zeros((h, w, t, 3));
    for (n, &(y, x)) in problem.nodes.iter().enumerate() {
        for k in 0..t {
            for c in 0..3 {
                grad[[y, x, k, c]] = grad_flat[(n * t + k) * 3 + c];
            }
        }
    }
    Ok((energy, grad))
}
