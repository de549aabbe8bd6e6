//! Radiation patterns, Rician channel coefficients and achievable rates.
//!
//! The small-scale term `h_SS` is a single standard circularly-symmetric
//! complex Gaussian per slot, shared by the direct path and every surface
//! element. With phase-aligned elements this makes `E|h|^2 = zeta^2` exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::phase::PhaseSchedule;
use crate::scene::{dist_elem_ground, dist_uav_point, Element, Point2, Scene, WeightedElement};

pub type ComplexGain = Complex64;

/// `K^A_m`: normalized arrival power pattern, `|cos^3 theta^A|`.
pub fn arrival_pattern(scene: &Scene, q: Point2, m: usize) -> f64 {
    let e = scene.element(m);
    let cos = (q[0] - e.w[0]) / scene.dist_uav_elem(q, m);
    cos.abs().powi(3)
}

fn departure_pattern_for(scene: &Scene, e: Element) -> f64 {
    let cfg = &scene.cfg;
    let dx = cfg.ground_node[0] - e.w[0];
    let cos3 = (dx / dist_elem_ground(e, cfg.ground_node)).abs().powi(3);
    if dx * cfg.reflect_side.sign() > 0.0 {
        cos3
    } else {
        cfg.epsilon * cos3
    }
}

/// `K^D_m`: departure pattern towards the ground node. Nodes on the
/// transmissive side get the `epsilon` scale.
pub fn departure_pattern(scene: &Scene, m: usize) -> f64 {
    departure_pattern_for(scene, scene.element(m))
}

/// `sqrt(G_m delta_y delta_z |gamma_m|^2)`.
fn element_aperture(scene: &Scene) -> f64 {
    let c = &scene.cfg;
    (c.elem_gain * c.elem_dy * c.elem_dz * c.power_ratio).sqrt()
}

/// `g_m[n]`: complex element gain for phase shift `psi`.
pub fn element_gain(scene: &Scene, q: Point2, psi: f64, m: usize) -> ComplexGain {
    let magnitude =
        element_aperture(scene) * (arrival_pattern(scene, q, m) * departure_pattern(scene, m)).sqrt();
    Complex64::from_polar(magnitude, -psi)
}

fn rician_weights(kappa: f64) -> (f64, f64) {
    ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
}

fn mix(kappa: f64, los: ComplexGain, draw: Option<Complex64>) -> ComplexGain {
    let (w_los, w_nlos) = rician_weights(kappa);
    match draw {
        Some(h_ss) => los * w_los + h_ss * (los.norm() * w_nlos),
        None => los * w_los,
    }
}

/// Deterministic LoS part of the direct UAV to ground-node coefficient.
pub fn direct_los(scene: &Scene, q: Point2) -> ComplexGain {
    let c = &scene.cfg;
    let d = scene.dist_uav_gn(q);
    let magnitude = (c.tx_gain * c.rx_gain).sqrt() * d.powf(-c.path_loss_exp / 2.0);
    Complex64::from_polar(magnitude, -2.0 * PI * d / c.wavelength)
}

/// `h_D[n]`. Without a draw, only the scaled LoS part is returned.
pub fn direct_channel(scene: &Scene, q: Point2, draw: Option<Complex64>) -> ComplexGain {
    mix(scene.cfg.rician_k, direct_los(scene, q), draw)
}

/// `|h_m^LoS|` for the element geometry `e`.
fn element_los_magnitude(scene: &Scene, q: Point2, e: Element) -> f64 {
    let c = &scene.cfg;
    let d_um = dist_uav_point(q, c.uav_altitude, e);
    let d_mg = dist_elem_ground(e, c.ground_node);
    let k_a = ((q[0] - e.w[0]) / d_um).abs().powi(3);
    let k_d = departure_pattern_for(scene, e);
    c.wavelength * k_a * k_d * (c.tx_gain * c.rx_gain).sqrt() * element_aperture(scene)
        / ((4.0 * PI).powf(1.5) * d_um * d_mg)
}

/// LoS coefficient through element `m` with phase shift `psi`.
pub fn ios_element_los(scene: &Scene, q: Point2, psi: f64, m: usize) -> ComplexGain {
    let c = &scene.cfg;
    let e = scene.element(m);
    let path = scene.dist_uav_elem(q, m) + scene.dist_elem_gn(m);
    Complex64::from_polar(
        element_los_magnitude(scene, q, e),
        -(2.0 * PI * path / c.wavelength + psi),
    )
}

/// `h_m[n]`: Rician coefficient through element `m`.
pub fn ios_element_channel(
    scene: &Scene,
    q: Point2,
    psi: f64,
    m: usize,
    draw: Option<Complex64>,
) -> ComplexGain {
    mix(scene.cfg.rician_k, ios_element_los(scene, q, psi, m), draw)
}

/// `h[n]`: sum over elements plus the direct path. `phases` holds one entry
/// per element.
pub fn composite_channel(
    scene: &Scene,
    q: Point2,
    phases: &[f64],
    draw: Option<Complex64>,
) -> ComplexGain {
    assert_eq!(phases.len(), scene.n_elements(), "one phase per element");
    phases
        .iter()
        .enumerate()
        .map(|(m, &psi)| ios_element_channel(scene, q, psi, m, draw))
        .fold(direct_channel(scene, q, draw), |acc, h| acc + h)
}

/// LoS composite together with the NLoS amplitude `sum_m |h_m^LoS| + |h_D^LoS|`.
fn los_parts(scene: &Scene, q: Point2, phases: &[f64]) -> (ComplexGain, f64) {
    let direct = direct_los(scene, q);
    let mut los = direct;
    let mut amplitude = direct.norm();
    for (m, &psi) in phases.iter().enumerate() {
        let h = ios_element_los(scene, q, psi, m);
        los += h;
        amplitude += h.norm();
    }
    (los, amplitude)
}

/// Small-scale fading samples `h_SS`, `n_draws` per slot. Slot `n` draws from
/// its own ChaCha stream of the master seed, so slot samples do not depend on
/// how many slots or draws other callers request.
#[derive(Debug, Clone)]
pub struct NlosDraws {
    n_draws: usize,
    samples: Vec<Complex64>,
}

impl NlosDraws {
    pub fn generate(seed: u64, n_slots: usize, n_draws: usize) -> Self {
        let mut samples = Vec::with_capacity(n_slots * n_draws);
        for n in 0..n_slots {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            samples.extend((0..n_draws).map(|_| standard_complex_normal(&mut rng)));
        }
        NlosDraws { n_draws, samples }
    }

    pub fn slot(&self, n: usize) -> &[Complex64] {
        &self.samples[n * self.n_draws..(n + 1) * self.n_draws]
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }
}

pub fn standard_complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRate {
    pub mean: f64,
    /// 95% confidence half-width of `mean`.
    pub half_width: f64,
}

/// Monte-Carlo estimate of the average achievable rate in bps/Hz.
pub fn average_rate(
    scene: &Scene,
    trajectory: &[Point2],
    phases: &PhaseSchedule,
    n_draws: usize,
    seed: u64,
) -> McRate {
    assert!(n_draws >= 1, "need at least one draw");
    let draws = NlosDraws::generate(seed, trajectory.len(), n_draws);
    average_rate_with(scene, trajectory, phases, &draws)
}

pub fn average_rate_with(
    scene: &Scene,
    trajectory: &[Point2],
    phases: &PhaseSchedule,
    draws: &NlosDraws,
) -> McRate {
    let n_draws = draws.n_draws();
    let snr = scene.cfg.snr_scale();
    let (w_los, w_nlos) = rician_weights(scene.cfg.rician_k);
    let mut per_draw = vec![0.0; n_draws];
    for (n, &q) in trajectory.iter().enumerate() {
        let slot_phases: &[f64] = if phases.is_empty() { &[] } else { phases.slot(n) };
        let (los, amplitude) = los_parts(scene, q, slot_phases);
        for (acc, h_ss) in per_draw.iter_mut().zip(draws.slot(n)) {
            let h = los * w_los + h_ss * (amplitude * w_nlos);
            *acc += (1.0 + snr * h.norm_sqr()).log2();
        }
    }
    let slots = trajectory.len() as f64;
    per_draw.iter_mut().for_each(|r| *r /= slots);
    let mean = per_draw.iter().sum::<f64>() / n_draws as f64;
    let half_width = if n_draws > 1 {
        let var = per_draw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n_draws - 1) as f64;
        1.96 * (var / n_draws as f64).sqrt()
    } else {
        0.0
    };
    McRate { mean, half_width }
}

/// One surface term of the deterministic amplitude `zeta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTerm {
    pub element: Element,
    /// `weight * J_m * beta_m`.
    pub amp: f64,
}

/// Deterministic channel amplitude model used by the optimizer:
///
/// `zeta(q) = sum_m a_m |x - x_m|^3 / d_{U,m}^4 + K / d_{U,G}^{alpha/2}`.
#[derive(Debug, Clone)]
pub struct RateModel {
    pub snr: f64,
    pub direct_gain: f64,
    pub path_loss_exp: f64,
    pub altitude: f64,
    pub ground: Point2,
    pub terms: Vec<SurfaceTerm>,
}

impl RateModel {
    /// Model over the full element layout.
    pub fn exact(scene: &Scene) -> Self {
        let elements: Vec<WeightedElement> = scene
            .layout
            .elements
            .iter()
            .map(|&element| WeightedElement {
                element,
                weight: 1.0,
            })
            .collect();
        Self::with_elements(scene, &elements)
    }

    /// Model over the optimizer's (possibly tiled) element set.
    pub fn for_optimizer(scene: &Scene) -> Self {
        Self::with_elements(scene, &scene.optimizer_elements())
    }

    pub fn with_elements(scene: &Scene, elements: &[WeightedElement]) -> Self {
        let c = &scene.cfg;
        let gain = (c.tx_gain * c.rx_gain).sqrt();
        let j = c.wavelength * gain * element_aperture(scene) / (4.0 * PI).powf(1.5);
        let terms = elements
            .iter()
            .map(|we| {
                let beta = departure_pattern_for(scene, we.element)
                    / dist_elem_ground(we.element, c.ground_node);
                SurfaceTerm {
                    element: we.element,
                    amp: we.weight * j * beta,
                }
            })
            .filter(|t| t.amp > 0.0)
            .collect();
        RateModel {
            snr: c.snr_scale(),
            direct_gain: gain,
            path_loss_exp: c.path_loss_exp,
            altitude: c.uav_altitude,
            ground: c.ground_node,
            terms,
        }
    }

    pub fn direct_term(&self, q: Point2) -> f64 {
        let d2 = (q[0] - self.ground[0]).powi(2)
            + (q[1] - self.ground[1]).powi(2)
            + self.altitude.powi(2);
        self.direct_gain * d2.powf(-self.path_loss_exp / 4.0)
    }

    pub fn surface_term(&self, q: Point2) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let e = t.element;
                let d2 = (q[0] - e.w[0]).powi(2) + (q[1] - e.w[1]).powi(2) + (self.altitude - e.z).powi(2);
                t.amp * (q[0] - e.w[0]).abs().powi(3) / (d2 * d2)
            })
            .sum()
    }

    pub fn zeta(&self, q: Point2) -> f64 {
        self.surface_term(q) + self.direct_term(q)
    }

    pub fn slot_rate(&self, q: Point2) -> f64 {
        (1.0 + self.snr * self.zeta(q).powi(2)).log2()
    }

    /// `(1/N) sum_n log2(1 + eta zeta[n]^2)`.
    pub fn deterministic_rate(&self, trajectory: &[Point2]) -> f64 {
        trajectory.iter().map(|&q| self.slot_rate(q)).sum::<f64>() / trajectory.len() as f64
    }
}

/// `zeta[n]` over the full layout.
pub fn zeta(scene: &Scene, q: Point2) -> f64 {
    RateModel::exact(scene).zeta(q)
}

pub fn deterministic_rate(scene: &Scene, trajectory: &[Point2]) -> f64 {
    RateModel::exact(scene).deterministic_rate(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::optimal_phases;
    use crate::scene::SceneConfig;
    use approx::assert_relative_eq;

    fn scene_with(cfg: SceneConfig) -> Scene {
        Scene::new(cfg).unwrap()
    }

    fn one_element(altitude: f64) -> Scene {
        scene_with(SceneConfig {
            n_elements: 1,
            uav_altitude: altitude,
            ..SceneConfig::default()
        })
    }

    #[test]
    fn arrival_pattern_values() {
        // x - x_m = 3 and d = 5 with a 4 m vertical offset.
        let s = one_element(44.0);
        assert_relative_eq!(arrival_pattern(&s, [3.0, 0.0], 0), 0.216, epsilon = 1e-12);
        assert_relative_eq!(arrival_pattern(&s, [-3.0, 0.0], 0), 0.216, epsilon = 1e-12);
        assert_eq!(arrival_pattern(&s, [0.0, 7.0], 0), 0.0);
    }

    #[test]
    fn departure_pattern_values() {
        let s = one_element(50.0);
        let expected = 3.55 * (100.0 / 12000f64.sqrt()).powi(3);
        assert_relative_eq!(departure_pattern(&s, 0), expected, max_relative = 1e-12);
        assert_relative_eq!(departure_pattern(&s, 0), 2.7006, epsilon = 1e-4);

        let grazing = scene_with(SceneConfig {
            n_elements: 1,
            ground_node: [0.0, -20.0],
            ..SceneConfig::default()
        });
        assert_eq!(departure_pattern(&grazing, 0), 0.0);

        let ris = scene_with(SceneConfig {
            n_elements: 1,
            epsilon: 0.0,
            ..SceneConfig::default()
        });
        assert_eq!(departure_pattern(&ris, 0), 0.0);
    }

    #[test]
    fn element_gain_phase() {
        let s = one_element(50.0);
        let q = [10.0, 0.0];
        let g0 = element_gain(&s, q, 0.0, 0);
        let g_pi = element_gain(&s, q, PI, 0);
        assert!(g0.im.abs() < 1e-18);
        assert_relative_eq!(g_pi.re, -g0.re, max_relative = 1e-12);
        assert_relative_eq!(g0.norm(), element_gain(&s, q, 1.234, 0).norm(), max_relative = 1e-12);
        assert_eq!(element_gain(&s, [0.0, 3.0], 1.0, 0).norm(), 0.0);

        // Unit factors everywhere give exactly 1.
        let unit = scene_with(SceneConfig {
            n_elements: 1,
            elem_dy: 1.0,
            elem_dz: 1.0,
            ios_center: [0.0, 0.0, 0.5],
            uav_altitude: 0.5 + 1e-9,
            ground_node: [-1e6, 0.0],
            epsilon: 1.0,
            ..SceneConfig::default()
        });
        let g = element_gain(&unit, [-1e6, 0.0], 0.0, 0);
        assert_relative_eq!(g.re, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn direct_channel_limits() {
        let s = scene_with(SceneConfig {
            rician_k: 1e12,
            ..SceneConfig::default()
        });
        let q = s.cfg.ground_node;
        let h = direct_channel(&s, q, None);
        assert_relative_eq!(h.norm(), 50f64.powf(-2.5), max_relative = 1e-6);
        assert_relative_eq!(h.norm(), 5.657e-5, max_relative = 1e-3);
        let zero = direct_channel(&s, q, Some(Complex64::new(0.0, 0.0)));
        assert_eq!(zero, h);
    }

    #[test]
    fn element_channel_scaling() {
        let s = one_element(50.0);
        assert_eq!(ios_element_channel(&s, [0.0, 5.0], 0.3, 0, Some(Complex64::new(0.4, -1.0))).norm(), 0.0);

        // Doubling every distance from the element keeps the angles and quarters |h^LoS|.
        let base = SceneConfig {
            n_elements: 1,
            ios_center: [0.0, 0.0, 10.0],
            uav_altitude: 20.0,
            ground_node: [-30.0, 5.0],
            ..SceneConfig::default()
        };
        let far = SceneConfig {
            ios_center: [0.0, 0.0, 20.0],
            uav_altitude: 40.0,
            ground_node: [-60.0, 10.0],
            ..base.clone()
        };
        let (a, b) = (scene_with(base), scene_with(far));
        let ha = ios_element_los(&a, [12.0, -4.0], 0.0, 0).norm();
        let hb = ios_element_los(&b, [24.0, -8.0], 0.0, 0).norm();
        assert_relative_eq!(ha / hb, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn element_los_matches_independent_formula() {
        let s = one_element(50.0);
        let q = [0.0, 20.0];
        // Center element sits at (0, 0, 40); x - x_m = 0 so the pattern nulls.
        assert_eq!(ios_element_los(&s, q, 0.0, 0).norm(), 0.0);
        let q = [15.0, 20.0];
        let d_um = (15f64.powi(2) + 20f64.powi(2) + 10f64.powi(2)).sqrt();
        let d_mg = (100f64.powi(2) + 20f64.powi(2) + 40f64.powi(2)).sqrt();
        let ka = (15.0 / d_um).powi(3);
        let kd = 3.55 * (100.0 / d_mg).powi(3);
        let expected = 0.05 * ka * kd * (1.0f64 * 0.025 * 0.025).sqrt()
            / ((4.0 * PI).powf(1.5) * d_um * d_mg);
        assert_relative_eq!(ios_element_los(&s, q, 0.0, 0).norm(), expected, max_relative = 1e-12);
    }

    #[test]
    fn composite_superposition() {
        let none = scene_with(SceneConfig {
            n_elements: 0,
            ..SceneConfig::default()
        });
        let q = [-50.0, 0.0];
        assert_eq!(composite_channel(&none, q, &[], None), direct_channel(&none, q, None));

        // Two elements mirrored in y, seen from a y-symmetric geometry, are identical.
        let s = scene_with(SceneConfig {
            n_elements: 2,
            ground_node: [-100.0, 0.0],
            ..SceneConfig::default()
        });
        let psi = [0.7, 0.7];
        let h = composite_channel(&s, q, &psi, None) - direct_channel(&s, q, None);
        let single = ios_element_channel(&s, q, 0.7, 0, None);
        assert_relative_eq!(h.re, 2.0 * single.re, max_relative = 1e-9);
        assert_relative_eq!(h.im, 2.0 * single.im, max_relative = 1e-9);

        let draw = Some(Complex64::new(0.3, -0.8));
        let q = [23.0, -7.0];
        let total = composite_channel(&s, q, &[0.1, 2.0], draw);
        let parts = direct_channel(&s, q, draw)
            + ios_element_channel(&s, q, 0.1, 0, draw)
            + ios_element_channel(&s, q, 2.0, 1, draw);
        assert_relative_eq!((total - parts).norm(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn zeta_reductions() {
        let none = scene_with(SceneConfig {
            n_elements: 0,
            ..SceneConfig::default()
        });
        let q = [-30.0, 4.0];
        assert_relative_eq!(zeta(&none, q), none.dist_uav_gn(q).powf(-2.5), max_relative = 1e-12);
        let s = scene_with(SceneConfig::default());
        let on_plane = [0.0, 4.0];
        assert_relative_eq!(zeta(&s, on_plane), s.dist_uav_gn(on_plane).powf(-2.5), max_relative = 1e-12);
    }

    #[test]
    fn zeta_squared_is_coherent_los_power() {
        let s = scene_with(SceneConfig {
            n_elements: 16,
            rician_k: 1e12,
            ..SceneConfig::default()
        });
        for q in [[-60.0, 10.0], [12.0, -3.0], [300.0, 40.0]] {
            let psi = optimal_phases(&s, &[q]);
            let (los, amplitude) = los_parts(&s, q, psi.slot(0));
            assert_relative_eq!(los.norm(), zeta(&s, q), max_relative = 1e-9);
            assert_relative_eq!(amplitude, zeta(&s, q), max_relative = 1e-12);
        }
    }

    #[test]
    fn rate_examples() {
        let s = scene_with(SceneConfig::default());
        assert_relative_eq!(s.cfg.snr_scale(), 1e10, max_relative = 1e-12);
        let model = RateModel {
            snr: 3.0,
            direct_gain: 1.0,
            path_loss_exp: 2.0,
            altitude: 1.0,
            ground: [0.0, 0.0],
            terms: vec![],
        };
        // eta zeta^2 = 3 at the ground node.
        assert_relative_eq!(model.deterministic_rate(&[[0.0, 0.0]]), 2.0);
        let silent = RateModel { snr: 0.0, ..model };
        assert_eq!(silent.deterministic_rate(&[[5.0, 1.0]]), 0.0);
    }

    #[test]
    fn average_rate_unit_snr() {
        // kappa -> infinity and eta |h|^2 = 1 gives exactly 1 bit.
        let mut cfg = SceneConfig {
            n_elements: 0,
            rician_k: 1e15,
            ..SceneConfig::default()
        };
        let d = 50f64;
        cfg.noise_power = cfg.tx_power * d.powf(-5.0);
        let s = scene_with(cfg);
        let traj = vec![s.cfg.ground_node; 4];
        let r = average_rate(&s, &traj, &PhaseSchedule::empty(4), 16, 3);
        assert_relative_eq!(r.mean, 1.0, max_relative = 1e-6);

        let mut off = s.cfg.clone();
        off.tx_power = 1e-300;
        let s = scene_with(off);
        let r = average_rate(&s, &traj, &PhaseSchedule::empty(4), 16, 3);
        assert!(r.mean < 1e-200);
    }

    #[test]
    fn average_rate_is_seeded() {
        let s = scene_with(SceneConfig {
            n_elements: 4,
            ..SceneConfig::default()
        });
        let traj: Vec<Point2> = (0..5).map(|i| [-100.0 + 40.0 * i as f64, 0.0]).collect();
        let psi = optimal_phases(&s, &traj);
        let a = average_rate(&s, &traj, &psi, 200, 11);
        let b = average_rate(&s, &traj, &psi, 200, 11);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.half_width.to_bits(), b.half_width.to_bits());
        let c = average_rate(&s, &traj, &psi, 200, 12);
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn average_rate_monotone_in_power_and_noise() {
        let cfg = SceneConfig {
            n_elements: 4,
            ..SceneConfig::default()
        };
        let traj: Vec<Point2> = (0..6).map(|i| [-150.0 + 30.0 * i as f64, 5.0]).collect();
        let rate = |tx: f64, noise: f64| {
            let s = scene_with(SceneConfig {
                tx_power: tx,
                noise_power: noise,
                ..cfg.clone()
            });
            let psi = optimal_phases(&s, &traj);
            average_rate(&s, &traj, &psi, 64, 5).mean
        };
        let mut last = 0.0;
        for tx in [0.01, 0.1, 1.0, 10.0] {
            let r = rate(tx, 1e-11);
            assert!(r >= last);
            last = r;
        }
        let mut last = f64::INFINITY;
        for noise in [1e-13, 1e-12, 1e-11, 1e-10] {
            let r = rate(0.1, noise);
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn slot_streams_are_prefix_stable() {
        let short = NlosDraws::generate(9, 3, 10);
        let long = NlosDraws::generate(9, 7, 10);
        for n in 0..3 {
            assert_eq!(short.slot(n), long.slot(n));
        }
    }
}
