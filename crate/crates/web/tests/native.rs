use iosuav_web::{optimize_native, phase_map_native, rate_field_native};

const SMALL: &str = "n_elements = 16\nn_slots = 40\n";

#[test]
fn rate_field_shape_and_peak() {
    let field = rate_field_native(SMALL, [-100.0, 100.0, -20.0, 20.0], 21, 5).unwrap();
    assert_eq!(field.len(), 105);
    assert!(field.iter().all(|r| r.is_finite() && *r > 0.0));
    // Ground node sits at (-100, -20): the first cell is the closest.
    let max = field.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(field[0], max);
}

#[test]
fn optimize_returns_trajectory_json() {
    let json = optimize_native(SMALL, "cuc", 3, 20).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["scheme"], "CUC");
    assert_eq!(v["trajectory"].as_array().unwrap().len(), 40);
    assert!(v["deterministic_rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn phase_map_covers_every_element() {
    let json = phase_map_native(SMALL, -50.0, 10.0).unwrap();
    let cells: Vec<serde_json::Value> = serde_json::from_str(&json).unwrap();
    assert_eq!(cells.len(), 16);
    assert!(cells.iter().all(|c| (0.0..std::f64::consts::TAU).contains(&c["phase"].as_f64().unwrap())));
}

#[test]
fn bad_input_is_an_error() {
    assert!(optimize_native(SMALL, "XYZ", 1, 10).is_err());
    assert!(rate_field_native("n_slots = \"many\"", [0.0, 1.0, 0.0, 1.0], 2, 2).is_err());
}
