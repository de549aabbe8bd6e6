//! Experiment execution: sweeps over mission duration or element count,
//! result files, and the oracle-based validation suite.
//!
//! Every CSV starts with a `# seed=...` comment line followed by a header
//! row. Numbers use Rust's locale-independent formatting.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{self, Profile};
use crate::error::{Error, Result};
use crate::oracle;
use crate::phase::{brute_force_phase_oracle, los_power, optimal_phases};
use crate::schemes::{run_scheme, RunOptions, SchemeId, SchemeResult};
use crate::scene::{Scene, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "lowercase")]
pub enum Sweep {
    None,
    /// Mission durations in seconds; `n_slots = T / slot_len`.
    T(Vec<f64>),
    /// Element counts.
    M(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub profile: Profile,
    pub config_path: Option<PathBuf>,
    pub scene: SceneConfig,
    pub schemes: Vec<SchemeId>,
    pub sweep: Sweep,
    pub seed: u64,
    pub mc_draws: usize,
    pub out_dir: PathBuf,
}

impl ExperimentPlan {
    /// Plan over `profile`, optionally overridden by the TOML file at
    /// `config_path`.
    pub fn new(profile: Profile, config_path: Option<PathBuf>, out_dir: PathBuf) -> Result<Self> {
        let scene = match &config_path {
            Some(p) => config::load_scene(p, profile)?,
            None => profile.scene().validate()?,
        };
        Ok(ExperimentPlan {
            profile,
            config_path,
            scene,
            schemes: SchemeId::ALL.to_vec(),
            sweep: Sweep::None,
            seed: 1,
            mc_draws: 1000,
            out_dir,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::Config("--mc-draws must be at least 1".into()));
        }
        let increasing = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite()) && v.windows(2).all(|w| w[0] < w[1]);
        match &self.sweep {
            Sweep::None => {}
            Sweep::T(v) if v.is_empty() || !increasing(v) => {
                return Err(Error::Config("T sweep values must be positive and increasing".into()))
            }
            Sweep::M(v) if v.is_empty() || !v.windows(2).all(|w| w[0] < w[1]) || v[0] == 0 => {
                return Err(Error::Config("M sweep values must be positive and increasing".into()))
            }
            _ => {}
        }
        for (value, cfg) in self.cells_configs() {
            cfg.validate().map_err(|e| match e {
                Error::InfeasibleMission { .. } | Error::InvalidParam { .. } => {
                    Error::Config(format!("sweep value {value}: {e}"))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Sweep values and the scene used at each.
    pub fn cells_configs(&self) -> Vec<(f64, SceneConfig)> {
        match &self.sweep {
            Sweep::None => vec![(self.scene.duration(), self.scene.clone())],
            Sweep::T(values) => values
                .iter()
                .map(|&t| {
                    let n_slots = (t / self.scene.slot_len).round() as usize;
                    (t, SceneConfig { n_slots, ..self.scene.clone() })
                })
                .collect(),
            Sweep::M(values) => values
                .iter()
                .map(|&m| (m as f64, SceneConfig { n_elements: m, ..self.scene.clone() }))
                .collect(),
        }
    }

    fn axis_tag(&self) -> Option<&'static str> {
        match self.sweep {
            Sweep::None => None,
            Sweep::T(_) => Some("t"),
            Sweep::M(_) => Some("m"),
        }
    }

    fn header(&self) -> String {
        let sweep = match &self.sweep {
            Sweep::None => "none".to_string(),
            Sweep::T(v) => format!("T:{}", join(v.iter().map(|x| fmt_num(*x)))),
            Sweep::M(v) => format!("M:{}", join(v.iter().map(|x| x.to_string()))),
        };
        format!(
            "# seed={} mc_draws={} profile={:?} sweep={}\n",
            self.seed,
            self.mc_draws,
            self.profile,
            sweep
        )
        .to_lowercase()
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(",")
}

/// Shortest representation that parses back exactly.
fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn fmt_rate(x: f64) -> String {
    format!("{x:.12e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub sweep_value: f64,
    #[serde(flatten)]
    pub result: SchemeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cells: Vec<Cell>,
    pub files: Vec<PathBuf>,
}

/// Document written per cell.
#[derive(Serialize)]
struct ResultDoc<'a> {
    seed: u64,
    mc_draws: usize,
    sweep_value: f64,
    scene: &'a SceneConfig,
    #[serde(flatten)]
    result: &'a SchemeResult,
}

/// Runs every (sweep value, scheme) cell and writes the result files. Cells
/// run in parallel when the `parallel` feature is on; output order is fixed.
pub fn cmd_run(plan: &ExperimentPlan) -> Result<RunSummary> {
    plan.validate()?;
    let opts = RunOptions {
        seed: plan.seed,
        mc_draws: plan.mc_draws,
    };
    let jobs: Vec<(f64, SceneConfig, SchemeId)> = plan
        .cells_configs()
        .into_iter()
        .flat_map(|(v, cfg)| plan.schemes.iter().map(move |&s| (v, cfg.clone(), s)))
        .collect();
    let results = crate::par::map(jobs, |(value, cfg, scheme)| {
        run_scheme(scheme, &cfg, &opts).map(|result| Cell {
            sweep_value: value,
            result,
        })
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let files = write_outputs(plan, &cells)?;
    Ok(RunSummary { cells, files })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn csv_body(header: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("{header}{}", String::from_utf8(bytes).expect("csv output is utf-8")))
}

fn write_outputs(plan: &ExperimentPlan, cells: &[Cell]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&plan.out_dir)?;
    let header = plan.header();
    let mut files = Vec::new();

    let rates = csv_body(
        &header,
        &["scheme", "sweep_value", "det_rate", "mc_rate", "mc_halfwidth"],
        cells.iter().map(|c| {
            vec![
                c.result.scheme.to_string(),
                fmt_num(c.sweep_value),
                fmt_rate(c.result.deterministic_rate),
                fmt_rate(c.result.mc_rate.mean),
                fmt_rate(c.result.mc_rate.half_width),
            ]
        }),
    )?;
    let path = plan.out_dir.join("rates.csv");
    write_file(&path, &rates)?;
    files.push(path);

    let convergence = csv_body(
        &header,
        &["scheme", "sweep_value", "iteration", "objective", "step_norm", "solver_iters"],
        cells.iter().flat_map(|c| {
            let first = vec![
                c.result.scheme.to_string(),
                fmt_num(c.sweep_value),
                "0".to_string(),
                fmt_rate(c.result.convergence.initial_objective),
                fmt_rate(0.0),
                "0".to_string(),
            ];
            std::iter::once(first).chain(c.result.convergence.iterations.iter().map(|r| {
                vec![
                    c.result.scheme.to_string(),
                    fmt_num(c.sweep_value),
                    r.iteration.to_string(),
                    fmt_rate(r.objective),
                    fmt_rate(r.step_norm),
                    r.solver_iters.to_string(),
                ]
            }))
        }),
    )?;
    let path = plan.out_dir.join("convergence.csv");
    write_file(&path, &convergence)?;
    files.push(path);

    // One trajectory file per sweep value keeps the scheme,n,x,y layout.
    let mut values: Vec<f64> = cells.iter().map(|c| c.sweep_value).collect();
    values.dedup();
    for value in values {
        let body = csv_body(
            &header,
            &["scheme", "n", "x", "y"],
            cells.iter().filter(|c| c.sweep_value == value).flat_map(|c| {
                c.result.trajectory.iter().enumerate().map(|(n, q)| {
                    vec![c.result.scheme.to_string(), n.to_string(), fmt_rate(q[0]), fmt_rate(q[1])]
                })
            }),
        )?;
        let name = match plan.axis_tag() {
            None => "trajectory.csv".to_string(),
            Some(tag) => format!("trajectory_{tag}{}.csv", fmt_num(value)),
        };
        let path = plan.out_dir.join(name);
        write_file(&path, &body)?;
        files.push(path);
    }

    let results_dir = plan.out_dir.join("results");
    fs::create_dir_all(&results_dir)?;
    let configs = plan.cells_configs();
    for c in cells {
        let scene = &configs
            .iter()
            .find(|(v, _)| *v == c.sweep_value)
            .expect("cell value comes from the plan")
            .1;
        let doc = ResultDoc {
            seed: plan.seed,
            mc_draws: plan.mc_draws,
            sweep_value: c.sweep_value,
            scene,
            result: &c.result,
        };
        let name = match plan.axis_tag() {
            None => format!("{}.json", c.result.scheme),
            Some(tag) => format!("{}_{tag}{}.json", c.result.scheme, fmt_num(c.sweep_value)),
        };
        let path = results_dir.join(name);
        write_file(&path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(Error::Config(format!("unknown level `{other}` (expected fast or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {:<22} {}", c.name, c.detail);
        }
        out
    }
}

/// Oracle suite over `base` (element count overridden where a check needs a
/// small surface). `Full` adds 10^5-sample fading statistics and more
/// grid-oracle instances.
pub fn cmd_validate(base: &SceneConfig, level: Level, seed: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_m = |m: usize| Scene::new(SceneConfig { n_elements: m, ..base.clone() });

    // Closed-form phases against exhaustive search and random schedules.
    let small = with_m(2)?;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_identity = 0.0f64;
    for _ in 0..20 {
        let q = [rng.random_range(-300.0..300.0), rng.random_range(-60.0..60.0)];
        let closed = los_power(&small, q, optimal_phases(&small, &[q]).slot(0));
        let (_, brute) = brute_force_phase_oracle(&small, q, 32)?;
        worst_gap = worst_gap.max((brute - closed) / closed);
        let coherent = crate::channel::zeta(&small, q);
        worst_identity = worst_identity.max((closed.sqrt() - coherent).abs() / coherent);
    }
    report.push(
        "phase-brute-force",
        worst_gap <= 1e-12,
        format!("grid optimum exceeds closed form by at most {worst_gap:.2e} (relative)"),
    );
    report.push(
        "coherent-sum",
        worst_identity <= 1e-9,
        format!("|h_LoS| vs amplitude sum: {worst_identity:.2e} relative"),
    );

    let scene = with_m(4)?;
    let fd = oracle::coefficient_check(&scene, 1000, seed, crate::sca::slot_coefficients)?;
    report.push(
        "fd-coefficients",
        fd.worst <= 1e-5,
        format!("{} weights, worst relative error {:.2e}", fd.n_checked, fd.worst),
    );
    let mutant = oracle::coefficient_check(&scene, 50, seed, |m, s, u, v| {
        crate::sca::slot_coefficients(m, s, u, v).map(|mut c| {
            c.w_u.iter_mut().for_each(|w| *w = -*w);
            c
        })
    })?;
    report.push(
        "fd-detects-mutation",
        mutant.worst > 1e-5,
        format!("sign-flipped u weights give error {:.2e}", mutant.worst),
    );

    let bounds = oracle::surrogate_checks(&scene, 1000, seed)?;
    report.push(
        "surrogate-bounds",
        bounds.worst() <= 1e-10,
        format!("4 families x 1000 samples, worst violation {:.2e}", bounds.worst()),
    );

    let instances = if level == Level::Full { 20 } else { 5 };
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (start, end, step, expansion) = tiny_instance(&mut rng);
        let tiny = oracle::tiny_scene(i % 3, start, end, step)?;
        let cmp = oracle::grid_oracle(&tiny, expansion)?;
        worst = worst.max(cmp.relative_gap);
    }
    report.push(
        "grid-oracle",
        worst <= 1e-3,
        format!("{instances} three-slot instances, worst relative gap {worst:.2e}"),
    );

    if level == Level::Full {
        let scene = with_m(16)?;
        let m = oracle::fading_moments(&scene, [-60.0, 10.0], 100_000, seed);
        report.push(
            "nlos-power",
            (m.nlos_power - 1.0).abs() <= 0.01,
            format!("E|h_SS|^2 = {:.4}", m.nlos_power),
        );
        report.push(
            "power-vs-zeta",
            (m.power_ratio - 1.0).abs() <= 0.02,
            format!("E|h|^2 / zeta^2 = {:.4}", m.power_ratio),
        );
    }
    Ok(report)
}

/// Random three-slot instance with a non-empty feasible lens: endpoints,
/// step limit and a feasible expansion point for the middle waypoint.
pub fn tiny_instance<R: Rng>(rng: &mut R) -> ([f64; 2], [f64; 2], f64, [f64; 2]) {
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let start = [side * rng.random_range(5.0..150.0), rng.random_range(-40.0..40.0)];
    let end = [side * rng.random_range(5.0..150.0), rng.random_range(-40.0..40.0)];
    let gap = crate::scene::dist2(start, end);
    let step = (gap / 2.0).max(1.0) * rng.random_range(1.2..2.0);
    let mut mid = [(start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0];
    // Keep the expansion point off the surface plane.
    if mid[0].abs() < 1.0 {
        mid[0] = side;
    }
    (start, end, step, mid)
}

pub fn cmd_init_config(path: &Path, profile: Profile, force: bool) -> Result<()> {
    config::write_template(path, profile, force)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(dir: &Path) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(Profile::Desk, None, dir.to_path_buf()).unwrap();
        p.scene.n_slots = 40;
        p.scene.n_elements = 4;
        p.mc_draws = 20;
        p
    }

    #[test]
    fn sweep_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path());
        p.sweep = Sweep::T(vec![100.0, 60.0]);
        assert!(p.validate().is_err());
        p.sweep = Sweep::T(vec![10.0]);
        assert!(p.validate().is_err(), "T=10 cannot cover 800 m");
        p.sweep = Sweep::M(vec![0, 4]);
        assert!(p.validate().is_err());
        p.sweep = Sweep::M(vec![4, 16]);
        p.validate().unwrap();
        p.schemes.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn sweep_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path());
        p.sweep = Sweep::T(vec![60.0, 100.0, 150.0]);
        let cells = p.cells_configs();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[2].1.n_slots, 150);
        assert_eq!(cells.len() * p.schemes.len(), 12);
    }

    #[test]
    fn run_writes_files_with_headers() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path());
        p.schemes = vec![SchemeId::IaFt, SchemeId::Cuc];
        let summary = cmd_run(&p).unwrap();
        assert_eq!(summary.cells.len(), 2);
        let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        let mut lines = rates.lines();
        assert!(lines.next().unwrap().starts_with("# seed=1 "));
        assert_eq!(lines.next().unwrap(), "scheme,sweep_value,det_rate,mc_rate,mc_halfwidth");
        assert_eq!(lines.count(), 2);
        let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(traj.lines().nth(1).unwrap(), "scheme,n,x,y");
        assert_eq!(traj.lines().count(), 2 + 2 * 40);
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("results/CUC.json")).unwrap()).unwrap();
        assert_eq!(doc["scheme"], "CUC");
        assert_eq!(doc["seed"], 1);
        assert_eq!(doc["trajectory"].as_array().unwrap().len(), 40);
    }

    #[test]
    fn fast_validation_passes() {
        let report = cmd_validate(&SceneConfig::default(), Level::Fast, 7).unwrap();
        assert!(report.passed(), "{}", report.render());
    }
}
