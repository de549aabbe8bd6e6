//! Physical scene: geometry, element grid, RF constants and mission limits.
//!
//! Coordinates are SI metres. The surface lies in a plane of constant `x`
//! (the y–z plane through `ios_center`); the ground node sits at height 0 and
//! the UAV flies at the fixed altitude `uav_altitude`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Which half-space (relative to the surface plane) receives the reflected
/// beam. A ground node on the other side is served by transmission and its
/// departure pattern is scaled by `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Facing {
    #[default]
    #[serde(rename = "+x")]
    PositiveX,
    #[serde(rename = "-x")]
    NegativeX,
}

impl Facing {
    pub fn sign(self) -> f64 {
        match self {
            Facing::PositiveX => 1.0,
            Facing::NegativeX => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Facing::PositiveX => Facing::NegativeX,
            Facing::NegativeX => Facing::PositiveX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub uav_altitude: f64,
    pub uav_start: Point2,
    pub uav_end: Point2,
    pub v_max: f64,
    pub slot_len: f64,
    pub n_slots: usize,
    pub ground_node: Point2,
    pub ios_center: [f64; 3],
    pub n_elements: usize,
    pub elem_dy: f64,
    pub elem_dz: f64,
    pub elem_gain: f64,
    pub power_ratio: f64,
    pub epsilon: f64,
    pub reflect_side: Facing,
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    pub rician_k: f64,
    pub path_loss_exp: f64,
    pub wavelength: f64,
    pub sca_tol: f64,
    pub sca_max_iters: usize,
    /// Optimizer-side element aggregation: when set and smaller than
    /// `n_elements`, the trajectory optimizer works on this many weighted
    /// centroid tiles instead of individual elements.
    pub tiles: Option<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        crate::config::Profile::Desk.scene()
    }
}

impl SceneConfig {
    /// Maximum horizontal distance per slot, `D = v_max * slot_len`.
    pub fn step_limit(&self) -> f64 {
        self.v_max * self.slot_len
    }

    pub fn duration(&self) -> f64 {
        self.n_slots as f64 * self.slot_len
    }

    /// Receive SNR scale `P / sigma^2`.
    pub fn snr_scale(&self) -> f64 {
        self.tx_power / self.noise_power
    }

    /// Vertical half extent of the element grid.
    fn surface_half_height(&self) -> f64 {
        let (rows, _) = grid_shape(self.n_elements);
        (rows.saturating_sub(1)) as f64 * self.elem_dz / 2.0
    }

    pub fn validate(self) -> Result<Self> {
        let positive = [
            ("uav_altitude", self.uav_altitude),
            ("v_max", self.v_max),
            ("slot_len", self.slot_len),
            ("elem_dy", self.elem_dy),
            ("elem_dz", self.elem_dz),
            ("elem_gain", self.elem_gain),
            ("power_ratio", self.power_ratio),
            ("tx_gain", self.tx_gain),
            ("rx_gain", self.rx_gain),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("wavelength", self.wavelength),
            ("sca_tol", self.sca_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || value.is_nan() {
                return Err(Error::NonPositiveParam(name));
            }
        }
        // kappa = 0 is pure NLoS and epsilon = 0 is a reflect-only surface.
        for (name, value) in [("rician_k", self.rician_k), ("epsilon", self.epsilon)] {
            if !(value >= 0.0) {
                return Err(Error::NonPositiveParam(name));
            }
        }
        let finite = self
            .uav_start
            .iter()
            .chain(&self.uav_end)
            .chain(&self.ground_node)
            .chain(&self.ios_center)
            .all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidParam {
                field: "coordinates",
                reason: "all coordinates must be finite".into(),
            });
        }
        if !(self.path_loss_exp >= 2.0) {
            return Err(Error::InvalidParam {
                field: "path_loss_exp",
                reason: format!("must be at least 2, got {}", self.path_loss_exp),
            });
        }
        if self.n_slots < 2 {
            return Err(Error::InvalidParam {
                field: "n_slots",
                reason: format!("need at least 2 slots, got {}", self.n_slots),
            });
        }
        if self.sca_max_iters == 0 {
            return Err(Error::InvalidParam {
                field: "sca_max_iters",
                reason: "must be at least 1".into(),
            });
        }
        if self.tiles == Some(0) {
            return Err(Error::InvalidParam {
                field: "tiles",
                reason: "must be at least 1 when set".into(),
            });
        }
        let bottom = self.ios_center[2] - self.surface_half_height();
        let top = self.ios_center[2] + self.surface_half_height();
        if self.n_elements > 0 && !(bottom > 0.0) {
            return Err(Error::InvalidParam {
                field: "ios_center",
                reason: format!("lowest element sits at z={bottom:.4} m, must be above ground"),
            });
        }
        if self.n_elements > 0 && !(self.uav_altitude > top) {
            return Err(Error::InvalidParam {
                field: "uav_altitude",
                reason: format!("must exceed the top of the surface ({top:.4} m)"),
            });
        }
        let distance = dist2(self.uav_start, self.uav_end);
        let reach = (self.n_slots - 1) as f64 * self.step_limit();
        if distance > reach {
            return Err(Error::InfeasibleMission { distance, reach });
        }
        Ok(self)
    }
}

/// Most-square factor pair `rows * cols == m` with `rows <= cols`.
pub fn grid_shape(m: usize) -> (usize, usize) {
    if m == 0 {
        return (0, 0);
    }
    let mut rows = (m as f64).sqrt() as usize;
    while rows > 1 && !m.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, m / rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    /// Horizontal coordinate `[x_m, y_m]`.
    pub w: Point2,
    /// Height `z_m`.
    pub z: f64,
}

/// Planar rectangular element grid: `rows` along z, `cols` along y.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementLayout {
    pub rows: usize,
    pub cols: usize,
    pub elements: Vec<Element>,
}

impl ElementLayout {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Row-major index of grid cell `(row, col)`.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

pub fn layout_elements(cfg: &SceneConfig) -> ElementLayout {
    let (rows, cols) = grid_shape(cfg.n_elements);
    let [xc, yc, zc] = cfg.ios_center;
    let mut elements = Vec::with_capacity(cfg.n_elements);
    for r in 0..rows {
        let z = zc + (r as f64 - (rows as f64 - 1.0) / 2.0) * cfg.elem_dz;
        for c in 0..cols {
            let y = yc + (c as f64 - (cols as f64 - 1.0) / 2.0) * cfg.elem_dy;
            elements.push(Element { w: [xc, y], z });
        }
    }
    ElementLayout {
        rows,
        cols,
        elements,
    }
}

/// An element (or a cluster of elements) as seen by the trajectory optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedElement {
    pub element: Element,
    pub weight: f64,
}

/// Groups the grid into at most `tiles` rectangular blocks, each replaced by
/// its centroid carrying the member count as weight.
pub fn aggregate_tiles(layout: &ElementLayout, tiles: usize) -> Vec<WeightedElement> {
    if layout.is_empty() {
        return Vec::new();
    }
    let (tile_rows, tile_cols) = grid_shape(tiles.min(layout.len()));
    // Put the longer tile axis along the longer grid axis.
    let (tile_rows, tile_cols) = if (layout.rows <= layout.cols) == (tile_rows <= tile_cols) {
        (tile_rows.min(layout.rows), tile_cols.min(layout.cols))
    } else {
        (tile_cols.min(layout.rows), tile_rows.min(layout.cols))
    };
    let band = |i: usize, n: usize, parts: usize| i * parts / n;
    let mut sums = vec![([0.0f64; 3], 0usize); tile_rows * tile_cols];
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let e = layout.elements[layout.index(r, c)];
            let t = band(r, layout.rows, tile_rows) * tile_cols + band(c, layout.cols, tile_cols);
            let (acc, count) = &mut sums[t];
            acc[0] += e.w[0];
            acc[1] += e.w[1];
            acc[2] += e.z;
            *count += 1;
        }
    }
    sums.into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(acc, n)| {
            let k = n as f64;
            WeightedElement {
                element: Element {
                    w: [acc[0] / k, acc[1] / k],
                    z: acc[2] / k,
                },
                weight: k,
            }
        })
        .collect()
}

pub fn dist2(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A validated configuration together with its element layout.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cfg: SceneConfig,
    pub layout: ElementLayout,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        let cfg = cfg.validate()?;
        let layout = layout_elements(&cfg);
        Ok(Scene { cfg, layout })
    }

    pub fn n_elements(&self) -> usize {
        self.layout.len()
    }

    /// x-coordinate of the surface plane.
    pub fn plane_x(&self) -> f64 {
        self.cfg.ios_center[0]
    }

    pub fn element(&self, m: usize) -> Element {
        self.layout.elements[m]
    }

    /// `d_{U,m}`: UAV at horizontal position `q` to element `m`.
    pub fn dist_uav_elem(&self, q: Point2, m: usize) -> f64 {
        dist_uav_point(q, self.cfg.uav_altitude, self.element(m))
    }

    /// `d_{m,G}`: element `m` to the ground node.
    pub fn dist_elem_gn(&self, m: usize) -> f64 {
        let e = self.element(m);
        dist_elem_ground(e, self.cfg.ground_node)
    }

    /// `d_{U,G}`: UAV to the ground node.
    pub fn dist_uav_gn(&self, q: Point2) -> f64 {
        let [gx, gy] = self.cfg.ground_node;
        ((q[0] - gx).powi(2) + (q[1] - gy).powi(2) + self.cfg.uav_altitude.powi(2)).sqrt()
    }

    /// Elements as used by the trajectory optimizer, honoring `tiles`.
    pub fn optimizer_elements(&self) -> Vec<WeightedElement> {
        match self.cfg.tiles {
            Some(t) if t < self.layout.len() => aggregate_tiles(&self.layout, t),
            _ => self
                .layout
                .elements
                .iter()
                .map(|&element| WeightedElement {
                    element,
                    weight: 1.0,
                })
                .collect(),
        }
    }
}

pub fn dist_uav_point(q: Point2, altitude: f64, e: Element) -> f64 {
    ((q[0] - e.w[0]).powi(2) + (q[1] - e.w[1]).powi(2) + (altitude - e.z).powi(2)).sqrt()
}

pub fn dist_elem_ground(e: Element, ground: Point2) -> f64 {
    ((ground[0] - e.w[0]).powi(2) + (ground[1] - e.w[1]).powi(2) + e.z.powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(center: [f64; 3], altitude: f64) -> Scene {
        Scene::new(SceneConfig {
            n_elements: 1,
            ios_center: center,
            uav_altitude: altitude,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn large_profile_mission_is_reachable() {
        let cfg = SceneConfig {
            n_slots: 150,
            ..SceneConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn short_mission_is_rejected() {
        let cfg = SceneConfig {
            n_slots: 10,
            ..SceneConfig::default()
        };
        match cfg.validate() {
            Err(Error::InfeasibleMission { distance, .. }) => assert_relative_eq!(distance, 800.0),
            other => panic!("expected InfeasibleMission, got {other:?}"),
        }
    }

    #[test]
    fn rician_factor_bounds() {
        let ok = SceneConfig {
            rician_k: 0.0,
            ..SceneConfig::default()
        };
        assert!(ok.validate().is_ok());
        let bad = SceneConfig {
            rician_k: -1.0,
            ..SceneConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::NonPositiveParam("rician_k"))));
    }

    #[test]
    fn validate_names_the_field() {
        let bad = SceneConfig {
            wavelength: 0.0,
            ..SceneConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::NonPositiveParam("wavelength"))));
        let low = SceneConfig {
            uav_altitude: 30.0,
            ..SceneConfig::default()
        };
        assert!(matches!(
            low.validate(),
            Err(Error::InvalidParam {
                field: "uav_altitude",
                ..
            })
        ));
    }

    #[test]
    fn validate_is_idempotent() {
        let cfg = SceneConfig::default();
        let once = cfg.clone().validate().unwrap();
        assert_eq!(once.clone().validate().unwrap(), once);
        assert_eq!(once, cfg);
    }

    #[test]
    fn singleton_grid() {
        let scene = single([0.0, 0.0, 40.0], 50.0);
        assert_eq!(scene.element(0), Element { w: [0.0, 0.0], z: 40.0 });
    }

    #[test]
    fn two_by_two_grid() {
        let cfg = SceneConfig {
            n_elements: 4,
            elem_dy: 0.025,
            elem_dz: 0.025,
            ..SceneConfig::default()
        };
        let layout = layout_elements(&cfg);
        assert_eq!((layout.rows, layout.cols), (2, 2));
        let mut ys: Vec<f64> = layout.elements.iter().map(|e| e.w[1]).collect();
        let mut zs: Vec<f64> = layout.elements.iter().map(|e| e.z).collect();
        ys.sort_by(f64::total_cmp);
        zs.sort_by(f64::total_cmp);
        assert_relative_eq!(ys[0], -0.0125);
        assert_relative_eq!(ys[3], 0.0125);
        assert_relative_eq!(zs[0], 39.9875);
        assert_relative_eq!(zs[3], 40.0125);
    }

    /// Independent oracle: scan every divisor and keep the pair with the
    /// smallest side difference.
    fn most_square(m: usize) -> (usize, usize) {
        (1..=m)
            .filter(|d| m.is_multiple_of(*d))
            .map(|d| (d.min(m / d), d.max(m / d)))
            .min_by_key(|(a, b)| b - a)
            .unwrap()
    }

    #[test]
    fn grid_shape_matches_divisor_scan() {
        for m in 1..2000 {
            assert_eq!(grid_shape(m), most_square(m), "M={m}");
        }
        assert_eq!(grid_shape(6000), (75, 80));
        let cfg = SceneConfig {
            n_elements: 6000,
            ..SceneConfig::default()
        };
        let layout = layout_elements(&cfg);
        let extent = |f: &dyn Fn(&Element) -> f64| {
            let (lo, hi) = layout
                .elements
                .iter()
                .map(f)
                .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v), h.max(v)));
            hi - lo + cfg.elem_dy
        };
        assert_relative_eq!(extent(&|e| e.w[1]), 2.0, epsilon = 1e-9);
        assert_relative_eq!(extent(&|e| e.z), 1.875, epsilon = 1e-9);
    }

    #[test]
    fn distances() {
        let scene = single([0.0, 0.0, 40.0], 44.0);
        assert_relative_eq!(scene.dist_uav_elem([3.0, 0.0], 0), 5.0);
        let scene = single([0.0, 0.0, 40.0], 50.0);
        assert_relative_eq!(scene.dist_uav_elem([0.0, 0.0], 0), 10.0);
        assert_relative_eq!(scene.dist_uav_elem([-400.0, 20.0], 0), 160500f64.sqrt());
        assert_relative_eq!(scene.dist_uav_elem([-400.0, 20.0], 0), 400.6245, epsilon = 1e-4);
        assert_relative_eq!(scene.dist_elem_gn(0), 109.5445, epsilon = 1e-4);
        assert_relative_eq!(scene.dist_uav_gn([-100.0, -20.0]), 50.0);

        let mut cfg = scene.cfg.clone();
        cfg.ground_node = [0.0, 0.0];
        let scene = Scene::new(cfg).unwrap();
        assert_relative_eq!(scene.dist_elem_gn(0), 40.0);
    }

    #[test]
    fn tiles_preserve_count_and_centroid() {
        let cfg = SceneConfig {
            n_elements: 6000,
            ..SceneConfig::default()
        };
        let layout = layout_elements(&cfg);
        let tiles = aggregate_tiles(&layout, 64);
        assert_eq!(tiles.len(), 64);
        let total: f64 = tiles.iter().map(|t| t.weight).sum();
        assert_relative_eq!(total, 6000.0);
        let cz: f64 = tiles.iter().map(|t| t.weight * t.element.z).sum::<f64>() / total;
        assert_relative_eq!(cz, 40.0, epsilon = 1e-9);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn distances_translation_invariant(
            qx in -500.0..500.0f64, qy in -500.0..500.0f64,
            ox in -1e3..1e3f64, oy in -1e3..1e3f64,
        ) {
            let base = SceneConfig { n_elements: 4, ..SceneConfig::default() };
            let mut moved = base.clone();
            moved.ios_center[0] += ox;
            moved.ios_center[1] += oy;
            moved.ground_node = [base.ground_node[0] + ox, base.ground_node[1] + oy];
            moved.uav_start = [base.uav_start[0] + ox, base.uav_start[1] + oy];
            moved.uav_end = [base.uav_end[0] + ox, base.uav_end[1] + oy];
            let a = Scene::new(base).unwrap();
            let b = Scene::new(moved).unwrap();
            let q = [qx, qy];
            let qm = [qx + ox, qy + oy];
            for m in 0..4 {
                prop_assert!((a.dist_uav_elem(q, m) - b.dist_uav_elem(qm, m)).abs() < 1e-8);
                prop_assert!((a.dist_elem_gn(m) - b.dist_elem_gn(m)).abs() < 1e-8);
            }
            prop_assert!((a.dist_uav_gn(q) - b.dist_uav_gn(qm)).abs() < 1e-8);
        }

        #[test]
        fn layout_is_complete_and_distinct(m in 0usize..400) {
            let cfg = SceneConfig { n_elements: m, ..SceneConfig::default() };
            let layout = layout_elements(&cfg);
            prop_assert_eq!(layout.len(), m);
            for i in 0..m {
                for j in (i + 1)..m {
                    let (a, b) = (layout.elements[i], layout.elements[j]);
                    prop_assert!(a.w != b.w || a.z != b.z);
                }
            }
        }
    }
}
