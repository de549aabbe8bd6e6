//! Closed-form phase alignment of the surface, plus an exhaustive-search
//! oracle for small element counts.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::channel::{direct_los, ios_element_los};
use crate::error::{Error, Result};
use crate::scene::{Point2, Scene};

/// Largest element count accepted by [`brute_force_phase_oracle`].
pub const ORACLE_MAX_ELEMENTS: usize = 4;
/// Largest per-element grid accepted by [`brute_force_phase_oracle`].
pub const ORACLE_MAX_GRID: usize = 64;

/// Per-slot, per-element phase shifts in `[0, 2pi)`, stored slot-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    n_slots: usize,
    n_elements: usize,
    values: Vec<f64>,
}

impl PhaseSchedule {
    /// Schedule for a scene without a surface.
    pub fn empty(n_slots: usize) -> Self {
        PhaseSchedule {
            n_slots,
            n_elements: 0,
            values: Vec::new(),
        }
    }

    pub fn from_fn(n_slots: usize, n_elements: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_slots * n_elements);
        for n in 0..n_slots {
            for m in 0..n_elements {
                values.push(wrap_2pi(f(n, m)));
            }
        }
        PhaseSchedule {
            n_slots,
            n_elements,
            values,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn is_empty(&self) -> bool {
        self.n_elements == 0
    }

    pub fn slot(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_elements..(n + 1) * self.n_elements]
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.n_elements + m]
    }

    /// Rows `(n, m, psi)` with zero-based indices.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_slots).flat_map(move |n| (0..self.n_elements).map(move |m| (n, m, self.get(n, m))))
    }
}

pub fn wrap_2pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Phase that co-phases element `m` with the direct path at position `q`.
pub fn optimal_phase(scene: &Scene, q: Point2, m: usize) -> f64 {
    let path_difference = scene.dist_uav_gn(q) - scene.dist_uav_elem(q, m) - scene.dist_elem_gn(m);
    wrap_2pi(TAU / scene.cfg.wavelength * path_difference)
}

pub fn optimal_phases(scene: &Scene, trajectory: &[Point2]) -> PhaseSchedule {
    PhaseSchedule::from_fn(trajectory.len(), scene.n_elements(), |n, m| {
        optimal_phase(scene, trajectory[n], m)
    })
}

/// `|sum_m h_m^LoS + h_D^LoS|^2` for one slot.
pub fn los_power(scene: &Scene, q: Point2, phases: &[f64]) -> f64 {
    phases
        .iter()
        .enumerate()
        .map(|(m, &psi)| ios_element_los(scene, q, psi, m))
        .fold(direct_los(scene, q), |acc, h| acc + h)
        .norm_sqr()
}

/// Exhaustive search over `grid_size^M` quantized phase vectors. Returns the
/// best vector and its LoS power.
pub fn brute_force_phase_oracle(scene: &Scene, q: Point2, grid_size: usize) -> Result<(Vec<f64>, f64)> {
    let m = scene.n_elements();
    if m > ORACLE_MAX_ELEMENTS || grid_size > ORACLE_MAX_GRID || grid_size == 0 {
        return Err(Error::InstanceTooLarge {
            elements: m,
            grid: grid_size,
            max_elements: ORACLE_MAX_ELEMENTS,
            max_grid: ORACLE_MAX_GRID,
        });
    }
    let levels: Vec<f64> = (0..grid_size).map(|k| TAU * k as f64 / grid_size as f64).collect();
    let direct = direct_los(scene, q);
    // Unit-phase element responses; a phase shift is a rotation.
    let base: Vec<_> = (0..m).map(|i| ios_element_los(scene, q, 0.0, i)).collect();
    let rotations: Vec<_> = levels
        .iter()
        .map(|&psi| num_complex::Complex64::from_polar(1.0, -psi))
        .collect();
    let mut index = vec![0usize; m];
    let mut best = (vec![0.0; m], f64::NEG_INFINITY);
    loop {
        let h = index
            .iter()
            .zip(&base)
            .fold(direct, |acc, (&k, &b)| acc + b * rotations[k]);
        let power = h.norm_sqr();
        if power > best.1 {
            best = (index.iter().map(|&k| levels[k]).collect(), power);
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(best);
            }
            index[pos] += 1;
            if index[pos] < grid_size {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}
