//! The four evaluated schemes: IA (optimized trajectory with the omni-surface),
//! RA (reflect-only surface), IA-FT (fixed fly-hover-fly trajectory) and CUC
//! (no surface). All share one evaluation path and one Monte-Carlo seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{average_rate, McRate, RateModel};
use crate::error::{Error, Result};
use crate::phase::{optimal_phases, PhaseSchedule};
use crate::sca::{init_trajectory, optimize_trajectory, tour, ConvergenceReport, IterationRecord, ScaOptions, Trajectory};
use crate::scene::{Facing, Point2, Scene, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "IA")]
    Ia,
    #[serde(rename = "RA")]
    Ra,
    #[serde(rename = "IA-FT")]
    IaFt,
    #[serde(rename = "CUC")]
    Cuc,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::Ia, SchemeId::Ra, SchemeId::IaFt, SchemeId::Cuc];

    pub fn label(self) -> &'static str {
        match self {
            SchemeId::Ia => "IA",
            SchemeId::Ra => "RA",
            SchemeId::IaFt => "IA-FT",
            SchemeId::Cuc => "CUC",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "-").as_str() {
            "IA" => Ok(SchemeId::Ia),
            "RA" => Ok(SchemeId::Ra),
            "IA-FT" | "IAFT" => Ok(SchemeId::IaFt),
            "CUC" => Ok(SchemeId::Cuc),
            _ => Err(Error::Config(format!("unknown scheme `{s}` (expected IA, RA, IA-FT or CUC)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub mc_draws: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 1,
            mc_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: SchemeId,
    /// Initial trajectory that produced the kept result.
    pub start: String,
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub phases: PhaseSchedule,
    pub deterministic_rate: f64,
    pub mc_rate: McRate,
    /// Deterministic rate after each alternation round, starting with the
    /// initial trajectory.
    pub trace: Vec<f64>,
    pub convergence: ConvergenceReport,
}

/// Scene seen by `scheme`: RA turns off transmission and faces the reflect
/// side toward the ground node, CUC removes the surface.
pub fn scheme_config(scheme: SchemeId, cfg: &SceneConfig) -> SceneConfig {
    let mut cfg = cfg.clone();
    match scheme {
        SchemeId::Ra => {
            cfg.epsilon = 0.0;
            let dx = cfg.ground_node[0] - cfg.ios_center[0];
            if dx > 0.0 {
                cfg.reflect_side = Facing::PositiveX;
            } else if dx < 0.0 {
                cfg.reflect_side = Facing::NegativeX;
            }
        }
        SchemeId::Cuc => cfg.n_elements = 0,
        SchemeId::Ia | SchemeId::IaFt => {}
    }
    cfg
}

pub fn run_scheme(scheme: SchemeId, cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    match scheme {
        SchemeId::Ia => run_ia(cfg, opts),
        SchemeId::Ra => run_ra(cfg, opts),
        SchemeId::IaFt => run_ia_ft(cfg, opts),
        SchemeId::Cuc => run_cuc(cfg, opts),
    }
}

pub fn run_ia(cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    optimized(SchemeId::Ia, cfg, opts)
}

pub fn run_ra(cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    optimized(SchemeId::Ra, cfg, opts)
}

pub fn run_cuc(cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    optimized(SchemeId::Cuc, cfg, opts)
}

pub fn run_ia_ft(cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    let scene = Scene::new(scheme_config(SchemeId::IaFt, cfg))?;
    let trajectory = tour(&scene.cfg, &[scene.cfg.ground_node])?;
    let rate = RateModel::exact(&scene).deterministic_rate(&trajectory);
    let convergence = ConvergenceReport {
        initial_objective: rate,
        converged: true,
        ..ConvergenceReport::default()
    };
    Ok(evaluate(SchemeId::IaFt, &scene, "hover-ground", trajectory, vec![rate], convergence, opts))
}

fn evaluate(
    scheme: SchemeId,
    scene: &Scene,
    start: &str,
    trajectory: Trajectory,
    trace: Vec<f64>,
    convergence: ConvergenceReport,
    opts: &RunOptions,
) -> SchemeResult {
    let phases = if scene.n_elements() == 0 {
        PhaseSchedule::empty(trajectory.len())
    } else {
        optimal_phases(scene, &trajectory)
    };
    let deterministic_rate = RateModel::exact(scene).deterministic_rate(&trajectory);
    let mc_rate = average_rate(scene, &trajectory, &phases, opts.mc_draws.max(1), opts.seed);
    SchemeResult {
        scheme,
        start: start.to_string(),
        trajectory,
        phases,
        deterministic_rate,
        mc_rate,
        trace,
        convergence,
    }
}

/// Hover points of peak surface gain on either side of the plane, ordered
/// along the flight direction.
fn surface_peaks(cfg: &SceneConfig) -> [Point2; 2] {
    let [xs, ys, zs] = cfg.ios_center;
    let offset = 3f64.sqrt() * (cfg.uav_altitude - zs);
    let mut peaks = [[xs - offset, ys], [xs + offset, ys]];
    if cfg.uav_end[0] < cfg.uav_start[0] {
        peaks.swap(0, 1);
    }
    peaks
}

/// Initial trajectories tried by the optimizer. The first-order bound on
/// `|x - x_s|^3` keeps every waypoint on its side of the surface plane, so a
/// single start cannot discover hover points across the plane.
pub fn initial_trajectories(cfg: &SceneConfig) -> Vec<(&'static str, Trajectory)> {
    let mut starts = vec![("straight", init_trajectory(cfg))];
    let g = cfg.ground_node;
    let [near, far] = surface_peaks(cfg);
    let mut tours: Vec<(&'static str, Vec<Point2>)> = vec![("hover-ground", vec![g])];
    if cfg.n_elements > 0 {
        tours.push(("hover-surface", vec![near, far]));
        tours.push(("hover-ground-surface", vec![g, far]));
    }
    for (label, stops) in tours {
        if let Ok(t) = tour(cfg, &stops) {
            starts.push((label, t));
        }
    }
    starts
}

struct Candidate {
    start: &'static str,
    trajectory: Trajectory,
    trace: Vec<f64>,
    report: ConvergenceReport,
}

/// Alternates phase alignment and SCA from `init`. The optimizer's channel
/// model already assumes co-phased elements, so each round re-optimizes the
/// trajectory against the phases that are optimal for it; the schedule
/// itself is materialized once the trajectory is final.
fn alternate(model: &RateModel, cfg: &SceneConfig, init: Trajectory) -> Result<(Trajectory, Vec<f64>, ConvergenceReport)> {
    let opts = ScaOptions::from_config(cfg);
    let step = cfg.step_limit();
    let mut q = init;
    let mut trace = vec![model.deterministic_rate(&q)];
    let mut report = ConvergenceReport {
        initial_objective: trace[0],
        ..ConvergenceReport::default()
    };
    for _ in 0..cfg.sca_max_iters {
        let (next, round) = optimize_trajectory(model, &q, step, &opts)?;
        let offset = report.iterations.len();
        report.iterations.extend(round.iterations.iter().map(|r| IterationRecord {
            iteration: r.iteration + offset,
            ..*r
        }));
        report.stalled |= round.stalled;
        let prev = *trace.last().unwrap();
        let rate = model.deterministic_rate(&next);
        trace.push(rate);
        q = next;
        if (rate - prev).abs() <= cfg.sca_tol * prev.abs().max(f64::MIN_POSITIVE) {
            report.converged = true;
            break;
        }
    }
    Ok((q, trace, report))
}

fn optimized(scheme: SchemeId, cfg: &SceneConfig, opts: &RunOptions) -> Result<SchemeResult> {
    let scene = Scene::new(scheme_config(scheme, cfg))?;
    let model = RateModel::for_optimizer(&scene);
    let exact = RateModel::exact(&scene);
    let starts = initial_trajectories(&scene.cfg);
    let outcomes = crate::par::map(starts, |(label, init)| {
        alternate(&model, &scene.cfg, init).map(|(trajectory, trace, report)| Candidate {
            start: label,
            trajectory,
            trace,
            report,
        })
    });
    let mut best: Option<(f64, Candidate)> = None;
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(c) => {
                let rate = exact.deterministic_rate(&c.trajectory);
                if best.as_ref().is_none_or(|(r, _)| rate > *r) {
                    best = Some((rate, c));
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((_, c)) => Ok(evaluate(scheme, &scene, c.start, c.trajectory, c.trace, c.report, opts)),
        None => Err(first_error.expect("at least one start")),
    }
}
