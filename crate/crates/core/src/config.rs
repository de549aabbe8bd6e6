//! Scene configuration files and built-in parameter profiles.
//!
//! The on-disk format is TOML with one key per [`SceneConfig`] field. Every key
//! is optional and overrides the selected profile; unknown keys are rejected.
//! Power fields given in dBm carry a `_dbm` suffix.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Facing, Point2, SceneConfig};

/// UAV altitude used when a config does not set one.
pub const DEFAULT_ALTITUDE: f64 = 50.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// N = 50 slots, M = 64 elements, exact per-element optimization.
    #[default]
    Desk,
    /// N = 150 slots, M = 6000 elements, optimizer works on 64 tiles. Slow.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

impl Profile {
    pub fn scene(self) -> SceneConfig {
        let wavelength = 0.05;
        let base = SceneConfig {
            uav_altitude: DEFAULT_ALTITUDE,
            uav_start: [-400.0, 20.0],
            uav_end: [400.0, 20.0],
            v_max: 25.0,
            slot_len: 1.0,
            n_slots: 50,
            ground_node: [-100.0, -20.0],
            ios_center: [0.0, 0.0, 40.0],
            n_elements: 64,
            elem_dy: wavelength / 2.0,
            elem_dz: wavelength / 2.0,
            elem_gain: 1.0,
            power_ratio: 1.0,
            epsilon: 3.55,
            reflect_side: Facing::PositiveX,
            tx_gain: 1.0,
            rx_gain: 1.0,
            tx_power: 0.1,
            noise_power: dbm_to_watts(-80.0),
            rician_k: 3.0,
            path_loss_exp: 5.0,
            wavelength,
            sca_tol: 1e-4,
            sca_max_iters: 50,
            tiles: None,
        };
        match self {
            Profile::Desk => base,
            Profile::Paper => SceneConfig {
                n_slots: 150,
                n_elements: 6000,
                tiles: Some(64),
                ..base
            },
        }
    }
}

/// File schema. Field names match [`SceneConfig`] except `noise_power_dbm`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub uav_altitude: Option<f64>,
    pub uav_start: Option<Point2>,
    pub uav_end: Option<Point2>,
    pub v_max: Option<f64>,
    pub slot_len: Option<f64>,
    pub n_slots: Option<usize>,
    pub ground_node: Option<Point2>,
    pub ios_center: Option<[f64; 3]>,
    pub n_elements: Option<usize>,
    pub elem_dy: Option<f64>,
    pub elem_dz: Option<f64>,
    pub elem_gain: Option<f64>,
    pub power_ratio: Option<f64>,
    pub epsilon: Option<f64>,
    pub reflect_side: Option<Facing>,
    pub tx_gain: Option<f64>,
    pub rx_gain: Option<f64>,
    pub tx_power: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    pub rician_k: Option<f64>,
    pub path_loss_exp: Option<f64>,
    pub wavelength: Option<f64>,
    pub sca_tol: Option<f64>,
    pub sca_max_iters: Option<usize>,
    pub tiles: Option<usize>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(self, base: SceneConfig) -> SceneConfig {
        macro_rules! pick {
            ($($f:ident),*) => {
                SceneConfig { $($f: self.$f.unwrap_or(base.$f),)* ..base }
            };
        }
        let noise_power = self.noise_power_dbm.map(dbm_to_watts).unwrap_or(base.noise_power);
        let tiles = self.tiles.or(base.tiles);
        let cfg = pick!(
            uav_altitude, uav_start, uav_end, v_max, slot_len, n_slots, ground_node, ios_center,
            n_elements, elem_dy, elem_dz, elem_gain, power_ratio, epsilon, reflect_side, tx_gain,
            rx_gain, tx_power, rician_k, path_loss_exp, wavelength, sca_tol, sca_max_iters
        );
        SceneConfig {
            noise_power,
            tiles,
            ..cfg
        }
    }
}

/// Parses a config document on top of `profile` and validates the result.
pub fn parse_scene(text: &str, profile: Profile) -> Result<SceneConfig> {
    SceneFile::parse(text)?.apply(profile.scene()).validate()
}

pub fn load_scene(path: &Path, profile: Profile) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text, profile)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Commented configuration template for `profile`.
pub fn template(profile: Profile) -> String {
    let c = profile.scene();
    let mut out = String::new();
    let mut line = |key: &str, value: String, note: &str| {
        let _ = writeln!(out, "# {note}\n{key} = {value}\n");
    };
    line("uav_altitude", format!("{:?}", c.uav_altitude), "UAV flight altitude z_U in m (repo default)");
    line("uav_start", fmt_vec(&c.uav_start), "initial horizontal position q_0 in m");
    line("uav_end", fmt_vec(&c.uav_end), "final horizontal position q_F in m");
    line("v_max", format!("{:?}", c.v_max), "maximum speed in m/s");
    line("slot_len", format!("{:?}", c.slot_len), "slot length in s");
    line("n_slots", c.n_slots.to_string(), "number of slots N (T = N * slot_len)");
    line("ground_node", fmt_vec(&c.ground_node), "ground node horizontal position in m (height 0)");
    line("ios_center", fmt_vec(&c.ios_center), "surface center [x, y, z] in m; the surface lies in the plane x = const");
    line("n_elements", c.n_elements.to_string(), "number of surface elements M");
    line("elem_dy", format!("{:?}", c.elem_dy), "element size along y in m (repo default: half wavelength)");
    line("elem_dz", format!("{:?}", c.elem_dz), "element size along z in m (repo default: half wavelength)");
    line("elem_gain", format!("{:?}", c.elem_gain), "element antenna gain G_m (repo default)");
    line("power_ratio", format!("{:?}", c.power_ratio), "element power ratio |gamma_m|^2");
    line("epsilon", format!("{:?}", c.epsilon), "transmissive-side pattern scale");
    line("reflect_side", format!("\"{}\"", if c.reflect_side == Facing::PositiveX { "+x" } else { "-x" }), "half-space served by reflection: \"+x\" or \"-x\"");
    line("tx_gain", format!("{:?}", c.tx_gain), "UAV antenna gain");
    line("rx_gain", format!("{:?}", c.rx_gain), "ground node antenna gain");
    line("tx_power", format!("{:?}", c.tx_power), "transmit power P in W");
    line("noise_power_dbm", format!("{:?}", watts_to_dbm(c.noise_power).round()), "noise power in dBm");
    line("rician_k", format!("{:?}", c.rician_k), "Rician factor kappa");
    line("path_loss_exp", format!("{:?}", c.path_loss_exp), "direct-link path-loss exponent alpha");
    line("wavelength", format!("{:?}", c.wavelength), "carrier wavelength in m");
    line("sca_tol", format!("{:?}", c.sca_tol), "relative rate-change threshold mu");
    line("sca_max_iters", c.sca_max_iters.to_string(), "SCA iteration cap");
    if let Some(t) = c.tiles {
        line("tiles", t.to_string(), "optimizer element aggregation (omit for exact per-element mode)");
    } else {
        out.push_str("# optimizer element aggregation; uncomment to group elements into tiles\n# tiles = 64\n");
    }
    out
}

/// Writes [`template`] to `path`, refusing to clobber an existing file unless
/// `force` is set.
pub fn write_template(path: &Path, profile: Profile, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    std::fs::write(path, template(profile))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dbm_conversion() {
        assert_relative_eq!(dbm_to_watts(-80.0), 1e-11, max_relative = 1e-12);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0);
        let snr = Profile::Desk.scene().snr_scale();
        assert_relative_eq!(snr, 1e10, max_relative = 1e-12);
    }

    #[test]
    fn template_round_trips_to_profile() {
        for profile in [Profile::Desk, Profile::Paper] {
            let text = template(profile);
            let parsed = parse_scene(&text, Profile::Desk).unwrap();
            let expected = profile.scene();
            assert_eq!(parsed.n_slots, expected.n_slots);
            assert_eq!(parsed.tiles, expected.tiles);
            assert_relative_eq!(parsed.noise_power, 1e-11, max_relative = 1e-12);
            assert_eq!(parsed.epsilon, 3.55);
            assert_eq!(parsed.sca_tol, 0.0001);
        }
    }

    #[test]
    fn template_carries_reference_values() {
        let text = template(Profile::Desk);
        let file = SceneFile::parse(&text).unwrap();
        assert_eq!(file.epsilon, Some(3.55));
        assert_eq!(file.noise_power_dbm, Some(-80.0));
        assert_eq!(file.sca_tol, Some(0.0001));
        assert_eq!(file.ios_center, Some([0.0, 0.0, 40.0]));
        assert_eq!(file.ground_node, Some([-100.0, -20.0]));
        assert_eq!(file.uav_start, Some([-400.0, 20.0]));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_scene("n_slots = 60\nwarp_factor = 9\n", Profile::Desk).unwrap_err();
        assert!(err.to_string().contains("warp_factor"), "{err}");
        // Watts are not accepted for noise; only the dBm key exists.
        assert!(parse_scene("noise_power = 1e-11\n", Profile::Desk).is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_scene("n_slots = 60\nreflect_side = \"-x\"\ntiles = 8\n", Profile::Desk).unwrap();
        assert_eq!(cfg.n_slots, 60);
        assert_eq!(cfg.reflect_side, Facing::NegativeX);
        assert_eq!(cfg.tiles, Some(8));
        assert_eq!(cfg.n_elements, 64);
    }

    #[test]
    fn refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        write_template(&path, Profile::Desk, false).unwrap();
        assert!(write_template(&path, Profile::Desk, false).is_err());
        write_template(&path, Profile::Paper, true).unwrap();
        let cfg = load_scene(&path, Profile::Desk).unwrap();
        assert_eq!(cfg.n_elements, 6000);
    }
}
