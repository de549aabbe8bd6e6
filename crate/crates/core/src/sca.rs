//! Successive convex approximation of the trajectory problem for fixed
//! (optimal) phases.
//!
//! Each outer iteration substitutes `s = 3 ln|x - x_s|`, `u_m = 4 ln d_{U,m}`
//! and `v = -(alpha/2) ln d_{U,G}`, linearizes the log-rate in these
//! variables, replaces the non-convex constraints by their tangents and hands
//! the result to [`crate::solver`].

use std::f64::consts::LN_2;
use std::io::Write;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::channel::RateModel;
use crate::error::{Error, Result};
use crate::scene::{dist2, Point2, SceneConfig};
use crate::solver::{self, AuxKind, AuxRecord, ConvexProgram, SolveError, SolveOptions, Waypoint};

/// Waypoints closer than this to the surface plane carry no surface term in
/// the subproblem built around them.
pub const X_GUARD: f64 = 1e-3;

/// Horizontal UAV positions, one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(pub Vec<Point2>);

impl Deref for Trajectory {
    type Target = [Point2];

    fn deref(&self) -> &[Point2] {
        &self.0
    }
}

impl Trajectory {
    pub fn straight_line(start: Point2, end: Point2, n_slots: usize) -> Self {
        if n_slots == 1 {
            return Trajectory(vec![start]);
        }
        let last = (n_slots - 1) as f64;
        Trajectory(
            (0..n_slots)
                .map(|n| {
                    let t = n as f64 / last;
                    [start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1])]
                })
                .collect(),
        )
    }

    pub fn max_step(&self) -> f64 {
        self.windows(2).map(|w| dist2(w[0], w[1])).fold(0.0, f64::max)
    }

    /// Endpoint and step-size feasibility, with relative slack `tol` on the
    /// step limit.
    pub fn is_feasible(&self, start: Point2, end: Point2, step_limit: f64, tol: f64) -> bool {
        match (self.first(), self.last()) {
            (Some(&a), Some(&b)) => {
                a == start && b == end && self.max_step() <= step_limit * (1.0 + tol)
            }
            _ => false,
        }
    }

    pub fn min_distance_to(&self, p: Point2) -> f64 {
        self.iter().map(|&q| dist2(q, p)).fold(f64::INFINITY, f64::min)
    }
}

pub fn init_trajectory(cfg: &SceneConfig) -> Trajectory {
    Trajectory::straight_line(cfg.uav_start, cfg.uav_end, cfg.n_slots)
}

/// Flies `start -> stops... -> end` at full speed, spreading the spare slots
/// as hover time over the stops (earlier stops get the remainder).
pub fn tour(cfg: &SceneConfig, stops: &[Point2]) -> Result<Trajectory> {
    let d = cfg.step_limit();
    let mut legs = vec![cfg.uav_start];
    legs.extend_from_slice(stops);
    legs.push(cfg.uav_end);
    let steps: Vec<usize> = legs
        .windows(2)
        .map(|w| (dist2(w[0], w[1]) / d).ceil() as usize)
        .collect();
    let needed: usize = steps.iter().sum();
    let available = cfg.n_slots - 1;
    if needed > available {
        return Err(Error::InfeasibleMission {
            distance: legs.windows(2).map(|w| dist2(w[0], w[1])).sum(),
            reach: available as f64 * d,
        });
    }
    let spare = available - needed;
    let mut q = vec![cfg.uav_start];
    for (i, w) in legs.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let length = dist2(a, b);
        for j in 1..=steps[i] {
            if j == steps[i] {
                q.push(b);
            } else {
                let t = j as f64 * d / length;
                q.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        if i < stops.len() {
            let hover = spare / stops.len() + usize::from(i < spare % stops.len());
            q.extend(std::iter::repeat_n(b, hover));
        }
    }
    if stops.is_empty() {
        // No stop to hover over: pad at the destination is not allowed, so
        // spread the motion instead.
        return Ok(init_trajectory(cfg));
    }
    debug_assert_eq!(q.len(), cfg.n_slots);
    Ok(Trajectory(q))
}

/// Expansion point of one SCA iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCAIterate {
    pub trajectory: Trajectory,
    /// `3 ln|x - x_s|`; `None` where the waypoint is within [`X_GUARD`] of
    /// the plane or the model has no surface.
    pub s: Vec<Option<f64>>,
    /// `4 ln d_{U,m}` per slot and surface term; empty where `s` is `None`.
    pub u: Vec<Vec<f64>>,
    /// `-(alpha/2) ln d_{U,G}`.
    pub v: Vec<f64>,
    /// Surrogate objective at the expansion point (equals the deterministic
    /// rate).
    pub obj: f64,
}

fn plane_x(model: &RateModel) -> Option<f64> {
    model.terms.first().map(|t| t.element.w[0])
}

fn sq(v: f64) -> f64 {
    v * v
}

fn dist_sq_uav_term(model: &RateModel, q: Point2, m: usize) -> f64 {
    let e = model.terms[m].element;
    sq(q[0] - e.w[0]) + sq(q[1] - e.w[1]) + sq(model.altitude - e.z)
}

fn dist_sq_uav_ground(model: &RateModel, q: Point2) -> f64 {
    sq(q[0] - model.ground[0]) + sq(q[1] - model.ground[1]) + sq(model.altitude)
}

pub fn substitute(model: &RateModel, trajectory: &Trajectory) -> Result<SCAIterate> {
    let plane = plane_x(model);
    debug_assert!(model.terms.iter().all(|t| Some(t.element.w[0]) == plane));
    let n = trajectory.len();
    let mut s = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (slot, &q) in trajectory.iter().enumerate() {
        if !(q[0].is_finite() && q[1].is_finite()) {
            return Err(Error::DegenerateX { slot });
        }
        match plane {
            Some(xs) if (q[0] - xs).abs() >= X_GUARD => {
                s.push(Some(3.0 * (q[0] - xs).abs().ln()));
                u.push(
                    (0..model.terms.len())
                        .map(|m| 2.0 * dist_sq_uav_term(model, q, m).ln())
                        .collect(),
                );
            }
            _ => {
                s.push(None);
                u.push(Vec::new());
            }
        }
        v.push(-model.path_loss_exp / 4.0 * dist_sq_uav_ground(model, q).ln());
    }
    Ok(SCAIterate {
        trajectory: trajectory.clone(),
        s,
        u,
        v,
        obj: model.deterministic_rate(trajectory),
    })
}

/// `log2(1 + eta (sum_m a_m e^{s - u_m} + K e^v)^2)`: the per-slot
/// log-objective in substituted variables.
pub fn log_objective(model: &RateModel, s: Option<f64>, u: &[f64], v: f64) -> f64 {
    let surface: f64 = match s {
        Some(s) => model.terms.iter().zip(u).map(|(t, &um)| t.amp * (s - um).exp()).sum(),
        None => 0.0,
    };
    (1.0 + model.snr * sq(surface + model.direct_gain * v.exp())).log2()
}

/// Per-slot linearization coefficients. Weights are the partial derivatives
/// of the slot log-objective, `w = coefficient / (A ln 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: Vec<f64>,
    pub d: f64,
    pub w_s: f64,
    pub w_u: Vec<f64>,
    pub w_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSpec {
    pub expansion: SCAIterate,
    pub slots: Vec<SlotCoefficients>,
    pub step_limit: f64,
}

pub fn slot_coefficients(model: &RateModel, s: Option<f64>, u: &[f64], v: f64) -> Option<SlotCoefficients> {
    let t: Vec<f64> = match s {
        Some(s) => model.terms.iter().zip(u).map(|(t, &um)| t.amp * (s - um).exp()).collect(),
        None => Vec::new(),
    };
    let surface: f64 = t.iter().sum();
    let direct = model.direct_gain * v.exp();
    let total = surface + direct;
    let eta = model.snr;
    let a = 1.0 + eta * sq(total);
    let b = 2.0 * eta * total * surface;
    let c: Vec<f64> = t.iter().map(|tm| -2.0 * eta * total * tm).collect();
    let d = 2.0 * eta * total * direct;
    let scale = a * LN_2;
    let coeffs = SlotCoefficients {
        a,
        b,
        w_s: b / scale,
        w_u: c.iter().map(|cm| cm / scale).collect(),
        c,
        d,
        w_v: d / scale,
    };
    let finite = [coeffs.a, coeffs.b, coeffs.d, coeffs.w_s, coeffs.w_v]
        .iter()
        .chain(&coeffs.c)
        .chain(&coeffs.w_u)
        .all(|x| x.is_finite());
    finite.then_some(coeffs)
}

pub fn taylor_coefficients(it: &SCAIterate, model: &RateModel, step_limit: f64) -> Result<SubproblemSpec> {
    let slots = (0..it.trajectory.len())
        .map(|n| slot_coefficients(model, it.s[n], &it.u[n], it.v[n]).ok_or(Error::NumericalOverflow { slot: n }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubproblemSpec {
        expansion: it.clone(),
        slots,
        step_limit,
    })
}

/// Builds the convex subproblem. The objective is scaled by `1/N` so its
/// value at the expansion point equals the deterministic rate.
pub fn assemble_subproblem(spec: &SubproblemSpec, model: &RateModel) -> ConvexProgram {
    let it = &spec.expansion;
    let n = it.trajectory.len();
    let inv_n = 1.0 / n as f64;
    let last = n - 1;
    let alpha = model.path_loss_exp;
    let mut waypoints = Vec::with_capacity(n);
    let mut aux = Vec::new();
    let mut constant = 0.0;
    for (slot, &q) in it.trajectory.iter().enumerate() {
        let coeffs = &spec.slots[slot];
        constant += inv_n * coeffs.a.log2();
        let pinned = slot == 0 || slot == last;
        waypoints.push(Waypoint { pos: q, pinned });
        if pinned {
            continue;
        }
        if let (Some(s), Some(xs)) = (it.s[slot], plane_x(model)) {
            let r = q[0] - xs;
            if coeffs.w_s != 0.0 {
                aux.push(AuxRecord {
                    slot,
                    kind: AuxKind::ExpAffine {
                        base: r.abs().powi(3),
                        slope: 3.0 * r * r.abs(),
                        anchor_x: q[0],
                    },
                    weight: inv_n * coeffs.w_s,
                });
                constant -= inv_n * coeffs.w_s * s;
            }
            for (m, term) in model.terms.iter().enumerate() {
                let w = coeffs.w_u[m];
                if w == 0.0 {
                    continue;
                }
                let e = term.element;
                let base = dist_sq_uav_term(model, q, m);
                aux.push(AuxRecord {
                    slot,
                    kind: AuxKind::QuadAffine {
                        center: e.w,
                        offset_sq: sq(model.altitude - e.z),
                        base,
                        slope: base / 2.0,
                        reference: it.u[slot][m],
                    },
                    weight: inv_n * w,
                });
                constant -= inv_n * w * it.u[slot][m];
            }
        }
        if coeffs.w_v != 0.0 {
            let base = dist_sq_uav_ground(model, q);
            aux.push(AuxRecord {
                slot,
                kind: AuxKind::QuadAffine {
                    center: model.ground,
                    offset_sq: sq(model.altitude),
                    base,
                    slope: -4.0 / alpha * base,
                    reference: it.v[slot],
                },
                weight: inv_n * coeffs.w_v,
            });
            constant -= inv_n * coeffs.w_v * it.v[slot];
        }
    }
    ConvexProgram {
        waypoints,
        step_limit: spec.step_limit,
        aux,
        constant,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    /// Relative rate-change threshold.
    pub tol: f64,
    pub max_iters: usize,
    pub solver: SolveOptions,
}

impl ScaOptions {
    pub fn from_config(cfg: &SceneConfig) -> Self {
        ScaOptions {
            tol: cfg.sca_tol,
            max_iters: cfg.sca_max_iters,
            solver: SolveOptions {
                tol: 1e-9,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Deterministic rate after this iteration.
    pub objective: f64,
    /// Subproblem optimum (a lower bound on `objective`).
    pub surrogate: f64,
    pub step_norm: f64,
    pub solver_iters: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when an iteration was rejected because the rate would have dropped.
    pub stalled: bool,
}

impl ConvergenceReport {
    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map_or(self.initial_objective, |r| r.objective)
    }

    /// Rates starting with the initial trajectory.
    pub fn objective_trace(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|r| r.objective))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective", "step_norm", "solver_iters"])?;
        w.write_record(["0", &format!("{:.12e}", self.initial_objective), "0", "0"])?;
        for r in &self.iterations {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.12e}", r.objective),
                format!("{:.6e}", r.step_norm),
                r.solver_iters.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step_norm(a: &[Point2], b: &[Point2]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| sq(p[0] - q[0]) + sq(p[1] - q[1]))
        .sum::<f64>()
        .sqrt()
}

/// Runs SCA from `init`. Iterates until the relative rate gain drops below
/// `opts.tol`, the iteration cap is hit, or a step would lower the rate (in
/// which case the previous trajectory is kept).
pub fn optimize_trajectory(
    model: &RateModel,
    init: &Trajectory,
    step_limit: f64,
    opts: &ScaOptions,
) -> Result<(Trajectory, ConvergenceReport)> {
    let mut q = init.clone();
    let mut rate = model.deterministic_rate(&q);
    let mut report = ConvergenceReport {
        initial_objective: rate,
        ..ConvergenceReport::default()
    };
    // At the exact reach limit the straight line is the only feasible path.
    let reach = (q.len().saturating_sub(1)) as f64 * step_limit;
    if q.len() < 3 || dist2(q[0], q[q.len() - 1]) >= reach * (1.0 - 1e-12) {
        report.converged = true;
        return Ok((q, report));
    }
    for iteration in 1..=opts.max_iters {
        let it = substitute(model, &q)?;
        let spec = taylor_coefficients(&it, model, step_limit)?;
        let prog = assemble_subproblem(&spec, model);
        let (point, solver_iters) = match solver::solve(&prog, &q, &opts.solver) {
            Ok((p, status)) => (p, status.newton_steps),
            Err(SolveError::MaxIterations { best, status }) => (*best, status.newton_steps),
            Err(source) => {
                return Err(Error::SolverFailure {
                    iteration,
                    source,
                    last_feasible: Box::new(q),
                })
            }
        };
        let candidate = Trajectory(point.q.clone());
        let new_rate = model.deterministic_rate(&candidate);
        if new_rate < rate {
            report.stalled = true;
            report.converged = true;
            break;
        }
        report.iterations.push(IterationRecord {
            iteration,
            objective: new_rate,
            surrogate: prog.objective(&point),
            step_norm: step_norm(&q, &candidate),
            solver_iters,
        });
        let gain = (new_rate - rate) / rate.abs().max(f64::MIN_POSITIVE);
        q = candidate;
        rate = new_rate;
        if gain <= opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;
    use approx::assert_relative_eq;

    fn desk(m: usize) -> Scene {
        Scene::new(SceneConfig {
            n_elements: m,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn straight_line_examples() {
        let t = Trajectory::straight_line([-400.0, 20.0], [400.0, 20.0], 5);
        let xs: Vec<f64> = t.iter().map(|q| q[0]).collect();
        assert_eq!(xs, vec![-400.0, -200.0, 0.0, 200.0, 400.0]);
        assert!(t.iter().all(|q| q[1] == 20.0));
        let c = Trajectory::straight_line([3.0, 4.0], [3.0, 4.0], 4);
        assert!(c.iter().all(|&q| q == [3.0, 4.0]));
        let cfg = SceneConfig {
            n_slots: 150,
            ..SceneConfig::default()
        };
        let t = init_trajectory(&cfg);
        assert_relative_eq!(t.max_step(), 800.0 / 149.0, max_relative = 1e-12);
        assert!(t.is_feasible(cfg.uav_start, cfg.uav_end, 25.0, 0.0));
    }

    #[test]
    fn tour_over_ground_node() {
        let cfg = SceneConfig {
            n_slots: 150,
            ..SceneConfig::default()
        };
        let t = tour(&cfg, &[cfg.ground_node]).unwrap();
        assert_eq!(t.len(), 150);
        assert!(t.is_feasible(cfg.uav_start, cfg.uav_end, 25.0, 1e-12));
        let hover = t.iter().filter(|&&q| q == cfg.ground_node).count();
        // 13 + 21 travel steps out of 149.
        assert_eq!(hover, 149 - 34 + 1);

        let short = SceneConfig {
            n_slots: 34,
            ..SceneConfig::default()
        };
        assert!(matches!(tour(&short, &[short.ground_node]), Err(Error::InfeasibleMission { .. })));
    }

    #[test]
    fn substitution_values() {
        let s = desk(1);
        let model = RateModel::exact(&s);
        let it = substitute(&model, &Trajectory(vec![[1.0, 0.0]])).unwrap();
        assert_relative_eq!(it.s[0].unwrap(), 0.0, epsilon = 1e-15);
        let it = substitute(&model, &Trajectory(vec![[0.0, 0.0]])).unwrap();
        assert_eq!(it.s[0], None);
        let it = substitute(&model, &Trajectory(vec![[1e-2, 0.0]])).unwrap();
        // d_{U,m} ~ 10 straight above the element.
        assert_relative_eq!(it.u[0][0], 4.0 * (100.0f64 + 1e-4).sqrt().ln(), max_relative = 1e-14);
        assert_relative_eq!(4.0 * 10f64.ln(), 9.2103, epsilon = 1e-4);
        let it = substitute(&model, &Trajectory(vec![[-100.0, -20.0]])).unwrap();
        assert_relative_eq!(it.v[0], -9.7800, epsilon = 1e-4);
        assert!(matches!(
            substitute(&model, &Trajectory(vec![[f64::NAN, 0.0]])),
            Err(Error::DegenerateX { slot: 0 })
        ));
    }

    #[test]
    fn surrogate_tight_at_expansion() {
        let s = desk(16);
        let model = RateModel::exact(&s);
        let t = init_trajectory(&s.cfg);
        let it = substitute(&model, &t).unwrap();
        let per_slot: f64 = (0..t.len())
            .map(|n| log_objective(&model, it.s[n], &it.u[n], it.v[n]))
            .sum::<f64>()
            / t.len() as f64;
        assert_relative_eq!(per_slot, model.deterministic_rate(&t), max_relative = 1e-12);
        let spec = taylor_coefficients(&it, &model, 25.0).unwrap();
        let prog = assemble_subproblem(&spec, &model);
        let tangent = prog.tangent_point();
        assert_relative_eq!(prog.objective(&tangent), it.obj, max_relative = 1e-12);
        let res = prog.check_feasibility(&tangent);
        assert!(res.exp_affine.unwrap().abs() <= 1e-12);
        assert!(res.quad_affine.unwrap().abs() <= 1e-12, "{res:?}");
    }

    #[test]
    fn direct_only_coefficients() {
        let s = desk(0);
        let model = RateModel::exact(&s);
        let v = -9.78;
        let c = slot_coefficients(&model, None, &[], v).unwrap();
        let k2e2v = (2.0 * v).exp();
        assert_eq!(c.b, 0.0);
        assert!(c.c.is_empty());
        assert_relative_eq!(c.a, 1.0 + model.snr * k2e2v, max_relative = 1e-14);
        assert_relative_eq!(c.d, 2.0 * model.snr * k2e2v, max_relative = 1e-14);

        let faint = slot_coefficients(&model, None, &[], -200.0).unwrap();
        assert_relative_eq!(faint.a, 1.0);
        assert!(faint.w_v < 1e-100);
    }

    #[test]
    fn overflow_is_reported() {
        let s = desk(1);
        let model = RateModel::exact(&s);
        assert!(slot_coefficients(&model, Some(800.0), &[0.0], 0.0).is_none());
    }

    #[test]
    fn hover_fixed_point() {
        let cfg = SceneConfig {
            n_elements: 0,
            uav_start: [-100.0, -20.0],
            uav_end: [-100.0, -20.0],
            n_slots: 6,
            ..SceneConfig::default()
        };
        let s = Scene::new(cfg).unwrap();
        let model = RateModel::exact(&s);
        let init = init_trajectory(&s.cfg);
        let (q, report) = optimize_trajectory(&model, &init, 25.0, &ScaOptions::from_config(&s.cfg)).unwrap();
        assert!(report.iterations.len() <= 1);
        assert!(step_norm(&q, &init) < 1e-6, "{}", step_norm(&q, &init));
        assert!(report.converged);
    }

    #[test]
    fn direct_only_bends_toward_ground() {
        let cfg = SceneConfig {
            n_elements: 0,
            n_slots: 40,
            ..SceneConfig::default()
        };
        let s = Scene::new(cfg).unwrap();
        let model = RateModel::exact(&s);
        let init = init_trajectory(&s.cfg);
        let (q, report) = optimize_trajectory(&model, &init, 25.0, &ScaOptions::from_config(&s.cfg)).unwrap();
        assert!(q.is_feasible(s.cfg.uav_start, s.cfg.uav_end, 25.0, 1e-9));
        assert!(report.final_objective() > report.initial_objective);
        let g = s.cfg.ground_node;
        assert!(q.min_distance_to(g) < init.min_distance_to(g));
        let trace = report.objective_trace();
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }

    #[test]
    fn report_csv_header() {
        let report = ConvergenceReport {
            initial_objective: 1.0,
            iterations: vec![IterationRecord {
                iteration: 1,
                objective: 2.0,
                surrogate: 1.5,
                step_norm: 0.1,
                solver_iters: 7,
            }],
            converged: true,
            stalled: false,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,step_norm,solver_iters\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
