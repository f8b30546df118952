#![allow(dead_code)]

use std::path::{Path, PathBuf};

use infraplace_core::{MetricsReport, MetricWeights};
use infraplace_io::{load_scenario, parse_scenario, Scenario, ScenarioDoc};
use rand::Rng;

pub fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn scenarios() -> PathBuf {
    data().join("scenarios")
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(&scenarios().join(format!("{name}.toml"))).unwrap()
}

/// Scenario on the tutorial map at 1 m voxels with the given units appended.
pub fn tutorial_scenario(units: &str) -> Scenario {
    let text = format!(
        "format_version = 1\nmap = \"../maps/tutorial-4way.toml\"\n\n[roi]\nvoxel_edge = 1.0\n{units}"
    );
    parse_scenario(&text, &scenarios()).unwrap()
}

/// One single-sensor unit with random pose and intrinsics. Kept small so a
/// hundred pairs run in seconds.
pub fn random_unit(rng: &mut impl Rng, id: &str) -> String {
    let (x, y, z) = (rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(3.0..8.0));
    let yaw: f64 = rng.gen_range(-180.0..180.0);
    let mut t = format!(
        "\n[[units]]\nid = \"{id}\"\n\n[[units.sensors]]\nid = \"{id}-s\"\nposition = [{x:?}, {y:?}, {z:?}]\nyaw_deg = {yaw:?}\n"
    );
    if rng.gen_bool(0.5) {
        t += &format!(
            "type = \"camera\"\npitch_deg = {:?}\nresolution = [640, 480]\nfocal_px = {:?}\nmax_range = {:?}\n",
            rng.gen_range(0.0..20.0f64),
            rng.gen_range(300.0..800.0f64),
            rng.gen_range(30.0..60.0f64),
        );
    } else {
        t += &format!(
            "type = \"lidar\"\npitch_deg = {:?}\nv_fov_deg = {:?}\nazimuth_steps = 360\nelevation_steps = 8\nmax_range = {:?}\n",
            rng.gen_range(0.0..15.0f64),
            rng.gen_range(20.0..40.0f64),
            rng.gen_range(30.0..80.0f64),
        );
    }
    t
}

/// A placement and a strict superset of it, as unit blocks.
pub fn nested_placements(rng: &mut impl Rng) -> (String, String) {
    let base: String = (0..rng.gen_range(0..4)).map(|n| random_unit(rng, &format!("u{n}"))).collect();
    let extra: String = (0..rng.gen_range(1..4)).map(|n| random_unit(rng, &format!("x{n}"))).collect();
    (base.clone(), base + &extra)
}

pub fn metrics_in_unit_range(r: &MetricsReport) -> bool {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    unit(r.coverage)
        && unit(r.information_gain)
        && r.occlusion.is_none_or(unit)
        && r.score.is_none_or(unit)
        && r.regions.iter().all(|g| g.coverage.is_none_or(unit))
}

/// Union of two placements; units sharing an id are merged.
pub fn combine(a: &Scenario, b: &Scenario, name: &str) -> Scenario {
    let mut doc: ScenarioDoc = a.doc.clone();
    doc.name = Some(name.to_string());
    for unit in &b.doc.units {
        match doc.units.iter_mut().find(|u| u.id == unit.id) {
            Some(u) => u.sensors.extend(unit.sensors.iter().cloned()),
            None => doc.units.push(unit.clone()),
        }
    }
    parse_scenario(&doc.to_toml(), &scenarios()).unwrap()
}

pub fn default_weights() -> MetricWeights {
    MetricWeights::default()
}
