//! Independent checks used by `validate` and the test suites: finite
//! differences for the linearization weights, sampled bound checks for the
//! convex surrogates, a grid-search optimum for tiny subproblems and
//! Monte-Carlo moments of the fading model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{composite_channel, zeta, NlosDraws, RateModel};
use crate::error::Result;
use crate::phase::optimal_phases;
use crate::sca::{assemble_subproblem, log_objective, substitute, taylor_coefficients, SlotCoefficients, Trajectory};
use crate::scene::{dist2, Point2, Scene, SceneConfig};
use crate::solver::{self, SolveOptions};

/// Fourth-order central difference of `f` at `x`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Largest `|fd - analytic| / (|analytic| + floor)` over all weights.
    pub worst: f64,
    pub n_checked: usize,
}

/// Absolute floor of the gradient check, relative to the slot's largest
/// weight. Components below it are at the rounding level of the difference
/// quotient.
pub const GRADIENT_FLOOR: f64 = 1e-10;
const FD_STEP: f64 = 1e-3;

/// Change in the slot log-objective when moving from `(s, u, v)` by
/// `(ds, du, dv)`. Differences are accumulated per term so the result keeps
/// full relative precision even when it is far smaller than the objective.
fn log_objective_delta(model: &RateModel, s: Option<f64>, u: &[f64], v: f64, ds: f64, du: &[f64], dv: f64) -> f64 {
    let direct = model.direct_gain * v.exp();
    let mut base = direct;
    let mut delta = direct * dv.exp_m1();
    if let Some(s) = s {
        for ((t, &um), &dum) in model.terms.iter().zip(u).zip(du) {
            let term = t.amp * (s - um).exp();
            base += term;
            delta += term * (ds - dum).exp_m1();
        }
    }
    let ratio = model.snr * delta * (2.0 * base + delta) / (1.0 + model.snr * base * base);
    ratio.ln_1p() / std::f64::consts::LN_2
}

/// Compares `coeffs` against finite differences of the slot log-objective at
/// `(s, u, v)`.
pub fn check_weights(model: &RateModel, s: Option<f64>, u: &[f64], v: f64, coeffs: &SlotCoefficients) -> GradientCheck {
    let zeros = vec![0.0; u.len()];
    let mut analytic = vec![coeffs.w_v];
    let mut numeric = vec![central_difference(|x| log_objective_delta(model, s, u, v, 0.0, &zeros, x), 0.0, FD_STEP)];
    if s.is_some() {
        analytic.push(coeffs.w_s);
        numeric.push(central_difference(|x| log_objective_delta(model, s, u, v, x, &zeros, 0.0), 0.0, FD_STEP));
        for m in 0..u.len() {
            analytic.push(coeffs.w_u[m]);
            numeric.push(central_difference(
                |x| {
                    let mut du = zeros.clone();
                    du[m] = x;
                    log_objective_delta(model, s, u, v, 0.0, &du, 0.0)
                },
                0.0,
                FD_STEP,
            ));
        }
    }
    let floor = GRADIENT_FLOOR * analytic.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    GradientCheck {
        worst,
        n_checked: analytic.len(),
    }
}

/// Random expansion points over the scene's flight region: `count` slots
/// with `|x - x_s|` between 1 m and 400 m.
pub fn random_slots(scene: &Scene, count: usize, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = scene.plane_x();
    (0..count)
        .map(|_| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [xs + side * rng.random_range(1.0..400.0), rng.random_range(-100.0..100.0)]
        })
        .collect()
}

/// Weight check at `count` random iterates using `coefficients` to produce
/// the analytic weights.
pub fn coefficient_check(
    scene: &Scene,
    count: usize,
    seed: u64,
    coefficients: impl Fn(&RateModel, Option<f64>, &[f64], f64) -> Option<SlotCoefficients>,
) -> Result<GradientCheck> {
    let model = RateModel::exact(scene);
    let points = Trajectory(random_slots(scene, count, seed));
    let it = substitute(&model, &points)?;
    let mut total = GradientCheck {
        worst: 0.0,
        n_checked: 0,
    };
    for n in 0..points.len() {
        let coeffs = coefficients(&model, it.s[n], &it.u[n], it.v[n])
            .ok_or(crate::Error::NumericalOverflow { slot: n })?;
        let c = check_weights(&model, it.s[n], &it.u[n], it.v[n], &coeffs);
        total.worst = total.worst.max(c.worst);
        total.n_checked += c.n_checked;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub samples: usize,
    /// Largest relative amount by which a tangent exceeded its function.
    pub worst_violation: f64,
}

impl BoundCheck {
    fn new() -> Self {
        BoundCheck {
            samples: 0,
            worst_violation: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, tangent: f64, exact: f64) {
        self.samples += 1;
        let v = (tangent - exact) / exact.abs().max(1.0);
        self.worst_violation = self.worst_violation.max(v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateChecks {
    /// Tangent of `|x|^3`, same-sign domain.
    pub cube: BoundCheck,
    /// Tangent of `e^{u/2}`.
    pub exp_u: BoundCheck,
    /// Tangent of `e^{-4v/alpha}`.
    pub exp_v: BoundCheck,
    /// Linearized log-objective against the exact one.
    pub objective: BoundCheck,
}

impl SurrogateChecks {
    pub fn worst(&self) -> f64 {
        [self.cube, self.exp_u, self.exp_v, self.objective]
            .iter()
            .map(|c| c.worst_violation)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Samples `per_family` points for each surrogate family and records the
/// worst relative violation of the global-underestimator property.
pub fn surrogate_checks(scene: &Scene, per_family: usize, seed: u64) -> Result<SurrogateChecks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = scene.cfg.path_loss_exp;
    let mut cube = BoundCheck::new();
    let mut exp_u = BoundCheck::new();
    let mut exp_v = BoundCheck::new();
    let mut objective = BoundCheck::new();
    for _ in 0..per_family {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let xl: f64 = sign * 10f64.powf(rng.random_range(-3.0..2.7));
        let x: f64 = sign * 10f64.powf(rng.random_range(-3.0..2.7));
        cube.record(xl.abs().powi(3) + 3.0 * xl * xl.abs() * (x - xl), x.abs().powi(3));

        let ul = rng.random_range(0.0..30.0);
        let u: f64 = rng.random_range(0.0..30.0);
        exp_u.record((ul / 2.0f64).exp() * (1.0 + (u - ul) / 2.0), (u / 2.0).exp());

        let vl = rng.random_range(-20.0..-5.0);
        let v: f64 = rng.random_range(-20.0..-5.0);
        exp_v.record(
            (-4.0 * vl / alpha).exp() * (1.0 - 4.0 / alpha * (v - vl)),
            (-4.0 * v / alpha).exp(),
        );
    }
    let model = RateModel::exact(scene);
    let anchors = Trajectory(random_slots(scene, per_family, seed ^ 0x5eed));
    let it = substitute(&model, &anchors)?;
    for n in 0..anchors.len() {
        let c = crate::sca::slot_coefficients(&model, it.s[n], &it.u[n], it.v[n])
            .ok_or(crate::Error::NumericalOverflow { slot: n })?;
        let base = log_objective(&model, it.s[n], &it.u[n], it.v[n]);
        let ds = rng.random_range(-3.0..3.0);
        let dv = rng.random_range(-3.0..3.0);
        let du: Vec<f64> = it.u[n].iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = it.s[n].map(|s| s + ds);
        let u: Vec<f64> = it.u[n].iter().zip(&du).map(|(a, b)| a + b).collect();
        let v = it.v[n] + dv;
        let mut linear = base + c.w_v * dv;
        if s.is_some() {
            linear += c.w_s * ds + c.w_u.iter().zip(&du).map(|(w, d)| w * d).sum::<f64>();
        }
        objective.record(linear, log_objective(&model, s, &u, v));
    }
    Ok(SurrogateChecks {
        cube,
        exp_u,
        exp_v,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridComparison {
    pub solver: f64,
    pub grid: f64,
    pub relative_gap: f64,
}

/// Tiny three-slot subproblem: the expansion point is the midpoint of the
/// endpoints and only the middle waypoint is free.
pub fn tiny_scene(m: usize, start: Point2, end: Point2, step: f64) -> Result<Scene> {
    Scene::new(SceneConfig {
        n_elements: m,
        n_slots: 3,
        uav_start: start,
        uav_end: end,
        v_max: step,
        slot_len: 1.0,
        ..SceneConfig::default()
    })
}

/// Solves the linearized subproblem around `expansion` with the barrier
/// solver and by grid search over the free middle waypoint, with the
/// auxiliary variables set to their best values for each grid point.
pub fn grid_oracle(scene: &Scene, expansion: Point2) -> Result<GridComparison> {
    let cfg = &scene.cfg;
    let model = RateModel::exact(scene);
    let q = Trajectory(vec![cfg.uav_start, expansion, cfg.uav_end]);
    let it = substitute(&model, &q)?;
    let spec = taylor_coefficients(&it, &model, cfg.step_limit())?;
    let prog = assemble_subproblem(&spec, &model);
    let opts = SolveOptions {
        tol: 1e-10,
        ..SolveOptions::default()
    };
    let solved = match solver::solve(&prog, &q, &opts) {
        Ok((p, _)) => prog.objective(&p),
        Err(solver::SolveError::MaxIterations { best, .. }) => prog.objective(&best),
        Err(e) => {
            return Err(crate::Error::SolverFailure {
                iteration: 0,
                source: e,
                last_feasible: Box::new(q),
            })
        }
    };

    // Objective with every auxiliary constraint active at waypoint p.
    let value = |p: Point2| -> Option<f64> {
        let d = cfg.step_limit();
        if dist2(p, cfg.uav_start) > d || dist2(p, cfg.uav_end) > d {
            return None;
        }
        let mut point = prog.tangent_point();
        point.q[1] = p;
        for (i, rec) in prog.aux.iter().enumerate() {
            point.aux[i] = active_value(rec, p)?;
        }
        Some(prog.objective(&point))
    };
    let d = cfg.step_limit();
    let (mut lo, mut hi) = (
        [cfg.uav_start[0].max(cfg.uav_end[0]) - d, cfg.uav_start[1].max(cfg.uav_end[1]) - d],
        [cfg.uav_start[0].min(cfg.uav_end[0]) + d, cfg.uav_start[1].min(cfg.uav_end[1]) + d],
    );
    let mut best = (f64::NEG_INFINITY, expansion);
    for _round in 0..8 {
        let k = 80;
        for i in 0..=k {
            for j in 0..=k {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / k as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / k as f64,
                ];
                if let Some(v) = value(p) {
                    if v > best.0 {
                        best = (v, p);
                    }
                }
            }
        }
        let span = [(hi[0] - lo[0]) / 8.0, (hi[1] - lo[1]) / 8.0];
        lo = [best.1[0] - span[0], best.1[1] - span[1]];
        hi = [best.1[0] + span[0], best.1[1] + span[1]];
    }
    Ok(GridComparison {
        solver: solved,
        grid: best.0,
        relative_gap: (solved - best.0).abs() / best.0.abs().max(f64::MIN_POSITIVE),
    })
}

/// Value of an auxiliary variable with its constraint active at `p`.
fn active_value(rec: &solver::AuxRecord, p: Point2) -> Option<f64> {
    match rec.kind {
        solver::AuxKind::ExpAffine {
            base,
            slope,
            anchor_x,
        } => {
            let rhs = base + slope * (p[0] - anchor_x);
            (rhs > 0.0).then(|| rhs.ln())
        }
        solver::AuxKind::QuadAffine {
            center,
            offset_sq,
            base,
            slope,
            reference,
        } => {
            let g = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + offset_sq;
            Some(reference + (g - base) / slope)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingMoments {
    /// Sample mean of `|h_SS|^2`.
    pub nlos_power: f64,
    /// Sample mean of `|h|^2` divided by `zeta^2` under optimal phases.
    pub power_ratio: f64,
}

pub fn fading_moments(scene: &Scene, q: Point2, draws: usize, seed: u64) -> FadingMoments {
    let samples = NlosDraws::generate(seed, 1, draws);
    let phases = optimal_phases(scene, &[q]);
    let mut nlos = 0.0;
    let mut power = 0.0;
    for &h_ss in samples.slot(0) {
        nlos += h_ss.norm_sqr();
        power += composite_channel(scene, q, phases.slot(0), Some(h_ss)).norm_sqr();
    }
    let n = draws as f64;
    FadingMoments {
        nlos_power: nlos / n,
        power_ratio: power / n / zeta(scene, q).powi(2),
    }
}
