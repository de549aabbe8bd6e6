//! wasm-bindgen bindings for the demo page in `www/`. Scenes arrive as TOML
//! text in the same format as `iosuav init-config`, layered over the desk
//! profile.

use iosuav::channel::RateModel;
use iosuav::config::{parse_scene, Profile};
use iosuav::phase::optimal_phases;
use iosuav::scene::Scene;
use iosuav::schemes::{run_scheme, RunOptions, SchemeId};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn scene(config: &str) -> iosuav::Result<Scene> {
    Scene::new(parse_scene(config, Profile::Desk)?)
}

fn js(e: iosuav::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Per-slot rate for a UAV hovering at each point of an `nx` by `ny` grid
/// over `[x0, x1] x [y0, y1]`, row-major from `y0`.
pub fn rate_field_native(config: &str, bounds: [f64; 4], nx: usize, ny: usize) -> iosuav::Result<Vec<f64>> {
    let scene = scene(config)?;
    let model = RateModel::exact(&scene);
    let [x0, x1, y0, y1] = bounds;
    let at = |lo: f64, hi: f64, i: usize, n: usize| if n > 1 { lo + (hi - lo) * i as f64 / (n - 1) as f64 } else { lo };
    Ok((0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| model.slot_rate([at(x0, x1, i, nx), at(y0, y1, j, ny)]))
        .collect())
}

#[derive(Serialize)]
struct Optimized {
    scheme: SchemeId,
    start: String,
    trajectory: Vec<[f64; 2]>,
    deterministic_rate: f64,
    mc_rate: f64,
    mc_halfwidth: f64,
    trace: Vec<f64>,
}

/// Optimizes one scheme and returns its trajectory and rates as JSON.
pub fn optimize_native(config: &str, scheme: &str, seed: u64, mc_draws: usize) -> iosuav::Result<String> {
    let cfg = scene(config)?.cfg;
    let id: SchemeId = scheme.parse()?;
    let r = run_scheme(id, &cfg, &RunOptions { seed, mc_draws })?;
    let out = Optimized {
        scheme: r.scheme,
        start: r.start,
        trajectory: r.trajectory.0,
        deterministic_rate: r.deterministic_rate,
        mc_rate: r.mc_rate.mean,
        mc_halfwidth: r.mc_rate.half_width,
        trace: r.trace,
    };
    Ok(serde_json::to_string(&out)?)
}

#[derive(Serialize)]
struct PhaseCell {
    y: f64,
    z: f64,
    phase: f64,
}

/// Optimal phase of every element for a UAV at `(x, y)`, with element
/// positions on the surface, as JSON.
pub fn phase_map_native(config: &str, x: f64, y: f64) -> iosuav::Result<String> {
    let scene = scene(config)?;
    let phases = optimal_phases(&scene, &[[x, y]]);
    let cells: Vec<PhaseCell> = (0..scene.n_elements())
        .map(|m| {
            let e = scene.element(m);
            PhaseCell {
                y: e.w[1],
                z: e.z,
                phase: phases.get(0, m),
            }
        })
        .collect();
    Ok(serde_json::to_string(&cells)?)
}

#[wasm_bindgen]
pub fn rate_field(config: &str, x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Vec<f64>, JsError> {
    rate_field_native(config, [x0, x1, y0, y1], nx, ny).map_err(js)
}

#[wasm_bindgen]
pub fn optimize(config: &str, scheme: &str, seed: u32, mc_draws: usize) -> Result<String, JsError> {
    optimize_native(config, scheme, seed as u64, mc_draws).map_err(js)
}

#[wasm_bindgen]
pub fn phase_map(config: &str, x: f64, y: f64) -> Result<String, JsError> {
    phase_map_native(config, x, y).map_err(js)
}
