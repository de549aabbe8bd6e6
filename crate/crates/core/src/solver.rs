//! Log-barrier interior-point solver for the linearized trajectory subproblem.
//!
//! Variables are the free waypoints `q[n]` and one scalar auxiliary variable
//! per [`AuxRecord`]. The objective is linear in the auxiliary variables and
//! every auxiliary variable appears in exactly one constraint, so the Newton
//! system is reduced to the waypoints by eliminating the diagonal auxiliary
//! block. The reduced matrix is block tridiagonal (2x2 blocks) because the
//! step-size balls only couple consecutive waypoints.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Point2;

/// Family tags used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// `e^z <= base + slope (x - anchor_x)`.
    ExpAffine,
    /// `|q - center|^2 + offset_sq <= base + slope (z - reference)`.
    QuadAffine,
    /// `|q[n] - q[n-1]|^2 <= D^2`.
    Ball,
    /// `q[n]` fixed.
    Pin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AuxKind {
    ExpAffine {
        base: f64,
        slope: f64,
        anchor_x: f64,
    },
    QuadAffine {
        center: Point2,
        offset_sq: f64,
        base: f64,
        slope: f64,
        reference: f64,
    },
}

impl AuxKind {
    pub fn family(&self) -> Family {
        match self {
            AuxKind::ExpAffine { .. } => Family::ExpAffine,
            AuxKind::QuadAffine { .. } => Family::QuadAffine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub slot: usize,
    pub kind: AuxKind,
    /// Objective coefficient of this variable (maximized).
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pos: Point2,
    pub pinned: bool,
}

/// `maximize constant + sum_i weight_i z_i` over waypoints and auxiliaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub waypoints: Vec<Waypoint>,
    pub step_limit: f64,
    pub aux: Vec<AuxRecord>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramPoint {
    pub q: Vec<Point2>,
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop once the barrier duality-gap bound `m / t` drops below this.
    pub tol: f64,
    pub t0: f64,
    pub growth: f64,
    /// Relative slack used to push the warm start into the strict interior.
    pub interior_margin: f64,
    pub max_newton_per_centering: usize,
    pub max_outer: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            t0: 1.0,
            growth: 10.0,
            interior_margin: 1e-6,
            max_newton_per_centering: 200,
            max_outer: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStatus {
    pub converged: bool,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    /// `m / t` at exit.
    pub gap: f64,
    pub max_violation: f64,
    /// `|grad phi_t| / (t |c|_inf)` at exit: central-path stationarity.
    pub kkt_residual: f64,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iteration budget exhausted (gap {:.3e})", .status.gap)]
    MaxIterations {
        best: Box<ProgramPoint>,
        status: SolveStatus,
    },
    #[error("Newton system is not positive definite ({0})")]
    IllConditioned(String),
    #[error("no strictly feasible starting point: {0}")]
    NoInterior(String),
}

/// Largest residual per family, positive meaning violated. Exp-affine
/// residuals are in log units (`z - ln rhs`), quadratic residuals are
/// relative to the linearization base, ball residuals are in squared metres
/// and pin residuals in metres. `None` when the family is empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub exp_affine: Option<f64>,
    pub quad_affine: Option<f64>,
    pub ball: Option<f64>,
    pub pin: Option<f64>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [self.exp_affine, self.quad_affine, self.ball, self.pin]
            .into_iter()
            .flatten()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn dist_sq(a: Point2, b: Point2) -> f64 {
    sq(a[0] - b[0]) + sq(a[1] - b[1])
}

fn fold_max(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.map_or(v, |s| s.max(v)));
}

impl AuxRecord {
    /// Constraint slack `r > 0` in the strict interior.
    fn slack(&self, q: Point2, z: f64) -> f64 {
        match self.kind {
            AuxKind::ExpAffine {
                base,
                slope,
                anchor_x,
            } => base + slope * (q[0] - anchor_x) - z.exp(),
            AuxKind::QuadAffine {
                center,
                offset_sq,
                base,
                slope,
                reference,
            } => base + slope * (z - reference) - dist_sq(q, center) - offset_sq,
        }
    }

    fn residual(&self, q: Point2, z: f64) -> f64 {
        match self.kind {
            AuxKind::ExpAffine {
                base,
                slope,
                anchor_x,
            } => {
                let rhs = base + slope * (q[0] - anchor_x);
                if rhs > 0.0 {
                    z - rhs.ln()
                } else {
                    f64::INFINITY
                }
            }
            AuxKind::QuadAffine { base, .. } => -self.slack(q, z) / base.abs().max(1.0),
        }
    }

    /// Auxiliary value leaving relative slack `margin` at waypoint `q`, or
    /// `None` if no such value exists.
    fn interior_value(&self, q: Point2, margin: f64) -> Option<f64> {
        match self.kind {
            AuxKind::ExpAffine {
                base,
                slope,
                anchor_x,
            } => {
                let rhs = base + slope * (q[0] - anchor_x);
                (rhs > 0.0).then(|| rhs.ln() - margin)
            }
            AuxKind::QuadAffine {
                center,
                offset_sq,
                base,
                slope,
                reference,
            } => {
                if slope == 0.0 {
                    return None;
                }
                let g = dist_sq(q, center) + offset_sq;
                Some(reference + (g * (1.0 + margin) + margin - base) / slope)
            }
        }
    }
}

impl ConvexProgram {
    pub fn n_slots(&self) -> usize {
        self.waypoints.len()
    }

    pub fn objective(&self, point: &ProgramPoint) -> f64 {
        self.constant
            + self
                .aux
                .iter()
                .zip(&point.aux)
                .map(|(r, z)| r.weight * z)
                .sum::<f64>()
    }

    /// Ball constraints that involve at least one free waypoint.
    fn active_balls(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.n_slots()).filter(|&n| !(self.waypoints[n].pinned && self.waypoints[n - 1].pinned))
    }

    fn n_inequalities(&self) -> usize {
        self.aux.len() + self.active_balls().count()
    }

    /// The expansion point: waypoint anchors with every auxiliary constraint
    /// active.
    pub fn tangent_point(&self) -> ProgramPoint {
        let q: Vec<Point2> = self.waypoints.iter().map(|w| w.pos).collect();
        let aux = self
            .aux
            .iter()
            .map(|r| r.interior_value(q[r.slot], 0.0).unwrap_or(f64::NEG_INFINITY))
            .collect();
        ProgramPoint { q, aux }
    }

    pub fn check_feasibility(&self, point: &ProgramPoint) -> Residuals {
        let mut res = Residuals::default();
        for (rec, &z) in self.aux.iter().zip(&point.aux) {
            let r = rec.residual(point.q[rec.slot], z);
            match rec.kind.family() {
                Family::ExpAffine => fold_max(&mut res.exp_affine, r),
                _ => fold_max(&mut res.quad_affine, r),
            }
        }
        let d2 = sq(self.step_limit);
        for n in 1..self.n_slots() {
            fold_max(&mut res.ball, dist_sq(point.q[n], point.q[n - 1]) - d2);
        }
        for (w, &q) in self.waypoints.iter().zip(&point.q) {
            if w.pinned {
                fold_max(&mut res.pin, dist_sq(w.pos, q).sqrt());
            }
        }
        res
    }

    /// Largest relative stationarity residual over the free variables, using
    /// the central-path multipliers `1 / (t r_i)`. Each component is divided
    /// by the sum of the magnitudes of its terms.
    pub fn kkt_residual(&self, point: &ProgramPoint, t: f64) -> f64 {
        let n = self.n_slots();
        let mut stat = vec![[0.0f64; 2]; n];
        let mut scale = vec![[0.0f64; 2]; n];
        let mut worst = 0.0f64;
        let add = |slot: usize, g: [f64; 2], stat: &mut Vec<[f64; 2]>, scale: &mut Vec<[f64; 2]>| {
            for k in 0..2 {
                stat[slot][k] += g[k];
                scale[slot][k] += g[k].abs();
            }
        };
        for (rec, &z) in self.aux.iter().zip(&point.aux) {
            let q = point.q[rec.slot];
            let lambda = 1.0 / (t * rec.slack(q, z));
            let (dr_dz, grad_q) = match rec.kind {
                AuxKind::ExpAffine { slope, .. } => (-z.exp(), [slope, 0.0]),
                AuxKind::QuadAffine { center, slope, .. } => {
                    (slope, [-2.0 * (q[0] - center[0]), -2.0 * (q[1] - center[1])])
                }
            };
            let dz = lambda * dr_dz;
            let denom = rec.weight.abs() + dz.abs();
            if denom > 0.0 {
                worst = worst.max((rec.weight + dz).abs() / denom);
            }
            add(rec.slot, [lambda * grad_q[0], lambda * grad_q[1]], &mut stat, &mut scale);
        }
        let d2 = sq(self.step_limit);
        for b in self.active_balls() {
            let (a, c) = (point.q[b - 1], point.q[b]);
            let lambda = 1.0 / (t * (d2 - dist_sq(a, c)));
            let g = [-2.0 * lambda * (c[0] - a[0]), -2.0 * lambda * (c[1] - a[1])];
            add(b, g, &mut stat, &mut scale);
            add(b - 1, [-g[0], -g[1]], &mut stat, &mut scale);
        }
        for (slot, w) in self.waypoints.iter().enumerate() {
            if w.pinned {
                continue;
            }
            for k in 0..2 {
                if scale[slot][k] > 0.0 {
                    worst = worst.max(stat[slot][k].abs() / scale[slot][k]);
                }
            }
        }
        worst
    }

    /// Plain-text dump, one record per line, for cross-checking with external
    /// tools.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# convex program: maximize constant + sum weight*z");
        let _ = writeln!(
            out,
            "program slots={} step_limit={:e} constant={:e} aux={}",
            self.n_slots(),
            self.step_limit,
            self.constant,
            self.aux.len()
        );
        for (n, w) in self.waypoints.iter().enumerate() {
            let kind = if w.pinned { "pin" } else { "free" };
            let _ = writeln!(out, "{kind} n={n} x={:e} y={:e}", w.pos[0], w.pos[1]);
        }
        for n in self.active_balls() {
            let _ = writeln!(out, "ball n={} prev={} radius={:e}", n, n - 1, self.step_limit);
        }
        for (i, r) in self.aux.iter().enumerate() {
            match r.kind {
                AuxKind::ExpAffine {
                    base,
                    slope,
                    anchor_x,
                } => {
                    let _ = writeln!(
                        out,
                        "exp var={i} n={} weight={:e} base={base:e} slope={slope:e} anchor_x={anchor_x:e}",
                        r.slot, r.weight
                    );
                }
                AuxKind::QuadAffine {
                    center,
                    offset_sq,
                    base,
                    slope,
                    reference,
                } => {
                    let _ = writeln!(
                        out,
                        "quad var={i} n={} weight={:e} cx={:e} cy={:e} offset_sq={offset_sq:e} base={base:e} slope={slope:e} reference={reference:e}",
                        r.slot, r.weight, center[0], center[1]
                    );
                }
            }
        }
        out
    }
}

/// Linear interpolation between consecutive pinned waypoints; free waypoints
/// before the first or after the last pin copy the nearest pin.
fn pin_interpolation(prog: &ProgramPoint, pins: &[bool]) -> Vec<Point2> {
    let n = prog.q.len();
    let pinned: Vec<usize> = (0..n).filter(|&i| pins[i]).collect();
    if pinned.is_empty() {
        return prog.q.clone();
    }
    let mut out = prog.q.clone();
    for i in 0..n {
        let next = pinned.iter().copied().find(|&p| p >= i);
        let prev = pinned.iter().copied().rev().find(|&p| p <= i);
        out[i] = match (prev, next) {
            (Some(a), Some(b)) if a == b => prog.q[a],
            (Some(a), Some(b)) => {
                let t = (i - a) as f64 / (b - a) as f64;
                let (qa, qb) = (prog.q[a], prog.q[b]);
                [qa[0] + t * (qb[0] - qa[0]), qa[1] + t * (qb[1] - qa[1])]
            }
            (Some(a), None) => prog.q[a],
            (None, Some(b)) => prog.q[b],
            (None, None) => unreachable!(),
        };
    }
    out
}

struct Workspace<'a> {
    prog: &'a ConvexProgram,
    /// Free index for each slot.
    free: Vec<Option<usize>>,
    n_free: usize,
    d2: f64,
}

impl<'a> Workspace<'a> {
    fn new(prog: &'a ConvexProgram) -> Self {
        let mut free = Vec::with_capacity(prog.n_slots());
        let mut k = 0;
        for w in &prog.waypoints {
            if w.pinned {
                free.push(None);
            } else {
                free.push(Some(k));
                k += 1;
            }
        }
        Workspace {
            prog,
            free,
            n_free: k,
            d2: sq(prog.step_limit),
        }
    }

    /// Every active ball keeps at least `margin * D^2` of slack.
    fn balls_have_slack(&self, p: &ProgramPoint, margin: f64) -> bool {
        self.prog
            .active_balls()
            .all(|n| self.d2 - dist_sq(p.q[n], p.q[n - 1]) >= margin * self.d2)
    }

    fn strictly_feasible(&self, p: &ProgramPoint) -> bool {
        self.prog
            .aux
            .iter()
            .zip(&p.aux)
            .all(|(r, &z)| r.slack(p.q[r.slot], z) > 0.0)
            && self
                .prog
                .active_balls()
                .all(|n| self.d2 - dist_sq(p.q[n], p.q[n - 1]) > 0.0)
    }

    /// Change in the barrier function `phi_t` from `a` to `b`.
    fn barrier_delta(&self, t: f64, a: &ProgramPoint, b: &ProgramPoint) -> f64 {
        let mut delta = 0.0;
        for (i, r) in self.prog.aux.iter().enumerate() {
            delta -= t * r.weight * (b.aux[i] - a.aux[i]);
            let ra = r.slack(a.q[r.slot], a.aux[i]);
            let rb = r.slack(b.q[r.slot], b.aux[i]);
            delta -= (rb / ra).ln();
        }
        for n in self.prog.active_balls() {
            let ra = self.d2 - dist_sq(a.q[n], a.q[n - 1]);
            let rb = self.d2 - dist_sq(b.q[n], b.q[n - 1]);
            delta -= (rb / ra).ln();
        }
        delta
    }

    /// Newton direction for `phi_t` at `p`. Returns the direction and the
    /// squared Newton decrement, plus the gradient norm over free variables.
    fn newton(&self, t: f64, p: &ProgramPoint) -> Result<(ProgramPoint, f64, f64), SolveError> {
        let nf = self.n_free;
        let mut diag = vec![Matrix2::<f64>::zeros(); nf];
        let mut off = vec![Matrix2::<f64>::zeros(); nf.saturating_sub(1)];
        let mut gq = vec![Vector2::<f64>::zeros(); nf];
        let mut gq_full = vec![Vector2::<f64>::zeros(); nf];
        let n_aux = self.prog.aux.len();
        let mut ga = vec![0.0; n_aux];
        let mut ha = vec![0.0; n_aux];
        let mut ca = vec![Vector2::<f64>::zeros(); n_aux];

        for (i, rec) in self.prog.aux.iter().enumerate() {
            let q = p.q[rec.slot];
            let z = p.aux[i];
            let r = rec.slack(q, z);
            // Derivatives of the slack r with respect to z and q.
            let (dr_dz, d2r_dz2, grad_q, hess_q_scale) = match rec.kind {
                AuxKind::ExpAffine { slope, .. } => {
                    let ez = z.exp();
                    (-ez, -ez, Vector2::new(slope, 0.0), 0.0)
                }
                AuxKind::QuadAffine { center, slope, .. } => (
                    slope,
                    0.0,
                    Vector2::new(-2.0 * (q[0] - center[0]), -2.0 * (q[1] - center[1])),
                    -2.0,
                ),
            };
            ga[i] = -t * rec.weight - dr_dz / r;
            ha[i] = sq(dr_dz / r) - d2r_dz2 / r;
            if let Some(k) = self.free[rec.slot] {
                gq_full[k] -= grad_q / r;
                ca[i] = grad_q * (dr_dz / sq(r));
                // Eliminating z_i leaves these reduced terms; they are written
                // in closed form because forming H - c c^T / h directly
                // cancels catastrophically near the boundary.
                match rec.kind {
                    AuxKind::ExpAffine { .. } => {
                        let rhs = -dr_dz + r;
                        diag[k] += grad_q * grad_q.transpose() / (r * rhs);
                        gq[k] -= grad_q * ((1.0 + t * rec.weight) / rhs);
                    }
                    AuxKind::QuadAffine { slope, .. } => {
                        diag[k] -= Matrix2::identity() * (hess_q_scale / r);
                        gq[k] += grad_q * (t * rec.weight / slope);
                    }
                }
            }
        }
        for n in self.prog.active_balls() {
            let delta = Vector2::new(p.q[n][0] - p.q[n - 1][0], p.q[n][1] - p.q[n - 1][1]);
            let r = self.d2 - delta.norm_squared();
            let block = delta * delta.transpose() * (4.0 / sq(r)) + Matrix2::identity() * (2.0 / r);
            let g = delta * (2.0 / r);
            if let Some(k) = self.free[n] {
                diag[k] += block;
                gq[k] += g;
                gq_full[k] += g;
            }
            if let Some(k) = self.free[n - 1] {
                diag[k] += block;
                gq[k] -= g;
                gq_full[k] -= g;
            }
            if let (Some(a), Some(b)) = (self.free[n - 1], self.free[n]) {
                debug_assert_eq!(b, a + 1);
                off[a] -= block;
            }
        }

        let mut dq = solve_block_tridiagonal(&diag, &off, &gq);
        if dq.is_err() {
            // Retry with a growing diagonal shift before giving up.
            let scale = diag.iter().map(|b| b.amax()).fold(0.0, f64::max);
            for delta in [1e-12, 1e-10, 1e-8, 1e-6] {
                let shifted: Vec<_> = diag.iter().map(|b| b + Matrix2::identity() * (delta * scale)).collect();
                dq = solve_block_tridiagonal(&shifted, &off, &gq);
                if dq.is_ok() {
                    break;
                }
            }
        }
        let dq = dq?;
        let mut step = ProgramPoint {
            q: vec![[0.0, 0.0]; self.prog.n_slots()],
            aux: vec![0.0; n_aux],
        };
        let mut decrement = 0.0;
        let mut grad_sq = 0.0;
        for (slot, f) in self.free.iter().enumerate() {
            if let Some(k) = *f {
                let d = -dq[k];
                step.q[slot] = [d[0], d[1]];
                decrement -= gq_full[k].dot(&d);
                grad_sq += gq_full[k].norm_squared();
            }
        }
        for (i, rec) in self.prog.aux.iter().enumerate() {
            let coupling = match self.free[rec.slot] {
                Some(k) => ca[i].dot(&(-dq[k])),
                None => 0.0,
            };
            let dz = -(ga[i] + coupling) / ha[i];
            step.aux[i] = dz;
            decrement -= ga[i] * dz;
            grad_sq += sq(ga[i]);
        }
        Ok((step, decrement, grad_sq.sqrt()))
    }
}

/// Solves `H x = g` for symmetric positive-definite block-tridiagonal `H` with
/// diagonal blocks `diag` and super-diagonal blocks `off`.
fn solve_block_tridiagonal(
    diag: &[Matrix2<f64>],
    off: &[Matrix2<f64>],
    rhs: &[Vector2<f64>],
) -> Result<Vec<Vector2<f64>>, SolveError> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut schur = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for k in 0..n {
        let (mut s, mut r) = (diag[k], rhs[k]);
        if k > 0 {
            let prev: &nalgebra::Cholesky<f64, nalgebra::U2> = &schur[k - 1];
            let b = off[k - 1];
            s -= b.transpose() * prev.solve(&b);
            r -= b.transpose() * prev.solve(&y[k - 1]);
        }
        let chol = s
            .cholesky()
            .ok_or_else(|| SolveError::IllConditioned(format!("pivot block {k} not positive definite")))?;
        schur.push(chol);
        y.push(r);
    }
    let mut x = vec![Vector2::zeros(); n];
    x[n - 1] = schur[n - 1].solve(&y[n - 1]);
    for k in (0..n - 1).rev() {
        x[k] = schur[k].solve(&(y[k] - off[k] * x[k + 1]));
    }
    Ok(x)
}

fn axpy(p: &ProgramPoint, s: f64, d: &ProgramPoint) -> ProgramPoint {
    ProgramPoint {
        q: p
            .q
            .iter()
            .zip(&d.q)
            .map(|(a, b)| [a[0] + s * b[0], a[1] + s * b[1]])
            .collect(),
        aux: p.aux.iter().zip(&d.aux).map(|(a, b)| a + s * b).collect(),
    }
}

/// Builds a strictly feasible start from `warm` (only its waypoints are used).
fn interior_start(prog: &ConvexProgram, ws: &Workspace, warm: &[Point2], margin: f64) -> Result<ProgramPoint, SolveError> {
    let pins: Vec<bool> = prog.waypoints.iter().map(|w| w.pinned).collect();
    let mut q: Vec<Point2> = warm
        .iter()
        .zip(&prog.waypoints)
        .map(|(&q, w)| if w.pinned { w.pos } else { q })
        .collect();
    let reference = pin_interpolation(&ProgramPoint { q: q.clone(), aux: vec![] }, &pins);
    let make = |q: &[Point2]| -> Option<ProgramPoint> {
        let aux: Option<Vec<f64>> = prog
            .aux
            .iter()
            .map(|r| r.interior_value(q[r.slot], margin))
            .collect();
        Some(ProgramPoint { q: q.to_vec(), aux: aux? })
    };
    // Blend toward the pin interpolation until every ball has slack.
    let mut theta = 0.0;
    for _ in 0..80 {
        let trial: Vec<Point2> = q
            .iter()
            .zip(&reference)
            .map(|(a, b)| [a[0] + theta * (b[0] - a[0]), a[1] + theta * (b[1] - a[1])])
            .collect();
        if let Some(p) = make(&trial) {
            if ws.strictly_feasible(&p) && ws.balls_have_slack(&p, margin) {
                return Ok(p);
            }
        }
        theta = if theta == 0.0 { 1e-9 } else { (theta * 4.0).min(1.0) };
        if theta >= 1.0 {
            q = reference.clone();
        }
    }
    Err(SolveError::NoInterior(
        "step-size balls cannot be satisfied strictly; the endpoints may be exactly (N-1)*D apart".into(),
    ))
}

pub fn solve(
    prog: &ConvexProgram,
    warm_start: &[Point2],
    opts: &SolveOptions,
) -> Result<(ProgramPoint, SolveStatus), SolveError> {
    assert_eq!(warm_start.len(), prog.n_slots());
    let ws = Workspace::new(prog);
    let m = prog.n_inequalities();
    let mut status = SolveStatus {
        converged: false,
        outer_iterations: 0,
        newton_steps: 0,
        gap: 0.0,
        max_violation: 0.0,
        kkt_residual: 0.0,
    };
    if m == 0 && ws.n_free == 0 {
        let point = prog.tangent_point();
        status.converged = true;
        status.max_violation = prog.check_feasibility(&point).max().max(0.0);
        return Ok((point, status));
    }
    if m == 0 {
        // Nothing constrains the free waypoints and nothing rewards them.
        let point = ProgramPoint {
            q: warm_start.to_vec(),
            aux: vec![],
        };
        status.converged = true;
        return Ok((point, status));
    }

    let mut p = interior_start(prog, &ws, warm_start, opts.interior_margin)?;
    let mut t = opts.t0;
    loop {
        status.outer_iterations += 1;
        // Centering.
        let mut previous = f64::INFINITY;
        for _ in 0..opts.max_newton_per_centering {
            let (dir, decrement, _) = ws.newton(t, &p)?;
            if !(decrement.is_finite()) {
                return Err(SolveError::IllConditioned("non-finite Newton decrement".into()));
            }
            // Below 1e-6 Newton converges quadratically; when it stops doing
            // so the decrement is rounding noise.
            if decrement / 2.0 <= 1e-14 || (decrement < 1e-6 && decrement > 0.5 * previous) {
                break;
            }
            previous = decrement;
            status.newton_steps += 1;
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = axpy(&p, s, &dir);
                if ws.strictly_feasible(&trial) {
                    let change = ws.barrier_delta(t, &p, &trial);
                    // Inside the quadratic region the full step is taken even
                    // when rounding hides the decrease.
                    if change <= -0.25 * s * decrement || (s == 1.0 && decrement < 1e-8) {
                        accepted = Some(trial);
                        break;
                    }
                }
                s *= 0.5;
            }
            match accepted {
                Some(next) => p = next,
                // No measurable progress left at this t.
                None => break,
            }
        }
        status.gap = m as f64 / t;
        if status.gap < opts.tol {
            status.converged = true;
            break;
        }
        if status.outer_iterations >= opts.max_outer {
            break;
        }
        t *= opts.growth;
    }
    status.kkt_residual = prog.kkt_residual(&p, t);
    status.max_violation = prog.check_feasibility(&p).max().max(0.0);
    if status.converged {
        Ok((p, status))
    } else {
        Err(SolveError::MaxIterations {
            best: Box::new(p),
            status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pinned_pair(aux: Vec<AuxRecord>) -> ConvexProgram {
        ConvexProgram {
            waypoints: vec![
                Waypoint { pos: [0.0, 0.0], pinned: true },
                Waypoint { pos: [3.0, 4.0], pinned: true },
            ],
            step_limit: 25.0,
            aux,
            constant: 0.0,
        }
    }

    #[test]
    fn fully_pinned_returns_tangent_values() {
        let prog = pinned_pair(vec![]);
        let (p, status) = solve(&prog, &[[0.0, 0.0], [3.0, 4.0]], &SolveOptions::default()).unwrap();
        assert_eq!(p.q, vec![[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(status.newton_steps, 0);
        assert!(status.converged);
    }

    #[test]
    fn single_linear_constraint_in_v() {
        // maximize v  s.t.  d^2 <= b (1 - (4/alpha)(v - v0)) with q fixed.
        let alpha: f64 = 5.0;
        let v0 = -9.78;
        let b = (-4.0 * v0 / alpha).exp();
        let offset_sq = 2500.0;
        let center = [-10.0, 6.0];
        let rec = AuxRecord {
            slot: 1,
            kind: AuxKind::QuadAffine {
                center,
                offset_sq,
                base: b,
                slope: -4.0 * b / alpha,
                reference: v0,
            },
            weight: 1.0,
        };
        let prog = pinned_pair(vec![rec]);
        let tight = SolveOptions {
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let (p, _) = solve(&prog, &[[0.0, 0.0], [3.0, 4.0]], &tight).unwrap();
        let d2 = dist_sq([3.0, 4.0], center) + offset_sq;
        let exact = v0 + alpha / 4.0 * (1.0 - d2 / b);
        assert_relative_eq!(p.aux[0], exact, epsilon = 1e-8);
        let (_, status) = solve(&prog, &[[0.0, 0.0], [3.0, 4.0]], &SolveOptions::default()).unwrap();
        assert!(status.converged);
        assert!(status.newton_steps < 100, "{status:?}");
        assert!(status.kkt_residual < 1e-6, "{status:?}");
    }

    #[test]
    fn ball_residual_reports_overshoot() {
        let prog = ConvexProgram {
            waypoints: vec![
                Waypoint { pos: [0.0, 0.0], pinned: true },
                Waypoint { pos: [10.0, 0.0], pinned: false },
            ],
            step_limit: 25.0,
            aux: vec![],
            constant: 0.0,
        };
        let point = ProgramPoint {
            q: vec![[0.0, 0.0], [26.0, 0.0]],
            aux: vec![],
        };
        let res = prog.check_feasibility(&point);
        assert_relative_eq!(res.ball.unwrap(), 26.0f64.powi(2) - 25.0f64.powi(2));
        assert_eq!(res.pin, Some(0.0));
        assert_eq!(res.exp_affine, None);
    }

    #[test]
    fn block_tridiagonal_matches_dense() {
        let n = 5;
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for k in 0..n {
            diag.push(Matrix2::new(6.0 + k as f64, 0.5, 0.5, 5.0));
            if k + 1 < n {
                off.push(Matrix2::new(-1.0, 0.3, 0.2, -1.5));
            }
        }
        let rhs: Vec<_> = (0..n).map(|k| Vector2::new(k as f64, 1.0 - k as f64)).collect();
        let x = solve_block_tridiagonal(&diag, &off, &rhs).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            dense.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&diag[k]);
            if k + 1 < n {
                dense.view_mut((2 * k, 2 * k + 2), (2, 2)).copy_from(&off[k]);
                dense.view_mut((2 * k + 2, 2 * k), (2, 2)).copy_from(&off[k].transpose());
            }
        }
        let b = nalgebra::DVector::from_iterator(2 * n, rhs.iter().flat_map(|v| [v[0], v[1]]));
        let expected = dense.lu().solve(&b).unwrap();
        for k in 0..n {
            assert_relative_eq!(x[k][0], expected[2 * k], epsilon = 1e-12);
            assert_relative_eq!(x[k][1], expected[2 * k + 1], epsilon = 1e-12);
        }
    }

    #[test]
    fn dump_has_one_line_per_record() {
        let rec = AuxRecord {
            slot: 1,
            kind: AuxKind::ExpAffine { base: 8.0, slope: 12.0, anchor_x: 2.0 },
            weight: 0.5,
        };
        let prog = ConvexProgram {
            waypoints: vec![
                Waypoint { pos: [0.0, 0.0], pinned: true },
                Waypoint { pos: [2.0, 0.0], pinned: false },
                Waypoint { pos: [4.0, 0.0], pinned: true },
            ],
            step_limit: 3.0,
            aux: vec![rec],
            constant: 1.0,
        };
        let text = prog.dump();
        assert_eq!(text.lines().filter(|l| l.starts_with("exp ")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.starts_with("ball ")).count(), 2);
        assert_eq!(text.lines().filter(|l| l.starts_with("pin ")).count(), 2);
    }
}
