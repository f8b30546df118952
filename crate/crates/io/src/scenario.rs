//! Scenario documents: a map reference, ROI and weight overrides, traffic
//! settings and the placement to score.
//!
//! ```toml
//! format_version = 1
//! name = "one-lidar"
//! map = "../maps/tutorial-4way.toml"   # path relative to this file, or an inline [map] table
//!
//! [roi]
//! radius = 60.0
//!
//! [[units]]
//! id = "center-pole"
//!
//! [[units.sensors]]
//! id = "lidar"
//! type = "lidar"
//! position = [0.0, 0.0, 5.0]
//! v_fov_deg = 26.9
//! azimuth_steps = 1800
//! elevation_steps = 64
//! max_range = 100.0
//! ```
//!
//! Every omitted setting gets its default when the document is parsed, and
//! the normalized document written back out lists them all.

use std::path::{Path, PathBuf};

use infraplace_core::grid::{DEFAULT_CORE_RADIUS, DEFAULT_HEIGHT, DEFAULT_VOXEL_EDGE};
use infraplace_core::pipeline::Evaluation;
use infraplace_core::sensors::{validate_iu, DEFAULT_CAMERA_RANGE, DEFAULT_DOWNSAMPLE};
use infraplace_core::{
    CameraSpec, Evaluator, FusionWeights, InfrastructureUnit, LidarSpec, MetricWeights, PipelineError,
    Placement, Pose, RegionKind, RegionWeights, RoiSpec, Sensor, SensorModel, TrafficConfig, VectorMap,
    VehicleDims,
};
use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::map::{load_map, MapDoc};
use crate::report::ReportFormat;
use crate::{read_file, DocError, FORMAT_VERSION};

/// ROI radius used when neither the scenario nor the map gives one.
pub const FALLBACK_RADIUS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapRef {
    Path(String),
    Inline(Box<MapDoc>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionWeightsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driveway: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub junction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosswalk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidewalk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shoulder: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub information_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDoc {
    #[serde(default)]
    pub regions: RegionWeightsDoc,
    #[serde(default)]
    pub fusion: FusionDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDoc {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Omitted means one waypoint gap per sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advance_per_frame: Option<f64>,
    /// Omitted means the largest per-lane waypoint count inside the ROI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_jitter: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDoc {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll_deg: Option<f64>,
    pub resolution: [u32; 2],
    pub focal_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarDoc {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_fov_deg: Option<f64>,
    pub v_fov_deg: f64,
    pub azimuth_steps: usize,
    pub elevation_steps: usize,
    pub max_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SensorDoc {
    Camera(CameraDoc),
    Lidar(LidarDoc),
}

impl SensorDoc {
    pub fn id(&self) -> &str {
        match self {
            SensorDoc::Camera(c) => &c.id,
            SensorDoc::Lidar(l) => &l.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDoc {
    pub id: String,
    /// Defaults to the unit id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processor: Option<String>,
    #[serde(default)]
    pub sensors: Vec<SensorDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub map: MapRef,
    #[serde(default)]
    pub roi: RoiDoc,
    #[serde(default)]
    pub weights: WeightsDoc,
    #[serde(default)]
    pub traffic: TrafficDoc,
    #[serde(default)]
    pub output: OutputDoc,
    #[serde(default)]
    pub units: Vec<UnitDoc>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, DocError> {
        let doc: ScenarioDoc = toml::from_str(text).map_err(|e| DocError::Parse(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(DocError::invalid(
                "format_version",
                format!("unsupported version {} (expected {FORMAT_VERSION})", doc.format_version),
            ));
        }
        Ok(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario documents always serialize")
    }
}

/// A validated scenario with every default resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Normalized document: writing it out and parsing it again yields the
    /// same scenario.
    pub doc: ScenarioDoc,
    pub map_doc: MapDoc,
    pub map: VectorMap,
    pub map_path: Option<PathBuf>,
    pub roi: RoiSpec,
    pub placement: Placement,
    pub weights: MetricWeights,
    pub traffic: TrafficConfig,
}

impl Scenario {
    pub fn name(&self) -> &str {
        self.doc.name.as_deref().unwrap_or("scenario")
    }

    pub fn evaluator(&self) -> Result<Evaluator, PipelineError> {
        Evaluator::new(self.map.clone(), &self.roi, &self.traffic)
    }

    pub fn evaluate(&self) -> Result<(Evaluator, Evaluation), PipelineError> {
        let evaluator = self.evaluator()?;
        let evaluation = evaluator.evaluate(&self.placement, &self.weights)?;
        Ok((evaluator, evaluation))
    }
}

/// Finds a referenced map: relative to `base`, with `.toml` appended when
/// the bare name does not exist.
pub fn resolve_map_path(base: &Path, reference: &str) -> PathBuf {
    let direct = base.join(reference);
    if direct.exists() || direct.extension().is_some() {
        return direct;
    }
    base.join(format!("{reference}.toml"))
}

/// Parses a scenario; map paths resolve against `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, DocError> {
    let doc = ScenarioDoc::parse(text)?;
    let (map_doc, map, map_path) = match &doc.map {
        MapRef::Path(p) => {
            let path = resolve_map_path(base, p);
            let (d, m) = load_map(&path)?;
            (d, m, Some(path))
        }
        MapRef::Inline(d) => {
            let m = d.to_map().map_err(|e| match e {
                DocError::Validation(msg) => DocError::invalid("map", msg),
                other => other,
            })?;
            ((**d).clone(), m, None)
        }
    };
    build(doc, map_doc, map, map_path)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, DocError> {
    let text = read_file(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base).map_err(|e| e.in_file(path))
}

fn deg(v: Option<f64>) -> f64 {
    v.unwrap_or(0.0).to_radians()
}

pub(crate) fn build(mut doc: ScenarioDoc, map_doc: MapDoc, map: VectorMap, map_path: Option<PathBuf>) -> Result<Scenario, DocError> {
    // ROI
    let r = &mut doc.roi;
    let center = *r.center.get_or_insert([map.center().x, map.center().y]);
    let radius = *r
        .radius
        .get_or_insert(map.recommended_roi_radius().unwrap_or(FALLBACK_RADIUS));
    let roi = RoiSpec {
        center: Point2::new(center[0], center[1]),
        radius,
        ground: map.ground_elevation(),
        height: *r.height.get_or_insert(DEFAULT_HEIGHT),
        voxel_edge: *r.voxel_edge.get_or_insert(DEFAULT_VOXEL_EDGE),
        core_radius: *r.core_radius.get_or_insert(DEFAULT_CORE_RADIUS.min(radius)),
    };
    roi.validate().map_err(|e| DocError::invalid("roi", e))?;

    // weights
    let defaults = MetricWeights::default();
    let rw = &mut doc.weights.regions;
    let mut regions = RegionWeights::default();
    for (kind, slot) in [
        (RegionKind::Driveway, &mut rw.driveway),
        (RegionKind::Junction, &mut rw.junction),
        (RegionKind::Crosswalk, &mut rw.crosswalk),
        (RegionKind::Sidewalk, &mut rw.sidewalk),
        (RegionKind::Shoulder, &mut rw.shoulder),
    ] {
        let w = *slot.get_or_insert(defaults.regions.get(kind));
        if !(w.is_finite() && w >= 0.0) {
            return Err(DocError::invalid(&format!("weights.regions.{kind}"), "must be finite and ≥0"));
        }
        regions.set(kind, w);
    }
    let fw = &mut doc.weights.fusion;
    let fusion = FusionWeights {
        coverage: *fw.coverage.get_or_insert(defaults.fusion.coverage),
        occlusion: *fw.occlusion.get_or_insert(defaults.fusion.occlusion),
        information_gain: *fw.information_gain.get_or_insert(defaults.fusion.information_gain),
    };
    fusion.validate().map_err(|e| DocError::invalid("weights.fusion", e))?;
    let weights = MetricWeights { regions, fusion };

    // traffic
    let t = &mut doc.traffic;
    let vehicle = *t.vehicle.get_or_insert({
        let d = VehicleDims::default();
        VehicleDoc {
            length: d.length,
            width: d.width,
            height: d.height,
        }
    });
    let traffic = TrafficConfig {
        seed: *t.seed.get_or_insert(0),
        advance_per_frame: t.advance_per_frame,
        frame_count: t.frame_count,
        dims: VehicleDims {
            length: vehicle.length,
            width: vehicle.width,
            height: vehicle.height,
        },
        lanes: t.lanes.clone(),
        phase_jitter: *t.phase_jitter.get_or_insert(false),
    };
    traffic.validate().map_err(|e| DocError::invalid("traffic", e))?;
    if let Some(ids) = &traffic.lanes {
        for (n, id) in ids.iter().enumerate() {
            if !map.lanes().iter().any(|l| &l.id == id) {
                return Err(DocError::invalid(&format!("traffic.lanes[{n}]"), format!("unknown lane {id:?}")));
            }
        }
    }

    doc.output.format.get_or_insert(ReportFormat::Json);

    // placement
    let mut units = Vec::with_capacity(doc.units.len());
    let mut seen_ids = std::collections::HashSet::new();
    for (u, unit) in doc.units.iter_mut().enumerate() {
        let processor = unit.processor.get_or_insert_with(|| unit.id.clone()).clone();
        let mut sensors = Vec::with_capacity(unit.sensors.len());
        for (s, sensor) in unit.sensors.iter_mut().enumerate() {
            let field = format!("units[{u}].sensors[{s}]");
            if !seen_ids.insert(sensor.id().to_string()) {
                return Err(DocError::invalid(&format!("{field}.id"), format!("duplicate sensor id {:?}", sensor.id())));
            }
            let model = match sensor {
                SensorDoc::Camera(c) => {
                    c.yaw_deg.get_or_insert(0.0);
                    c.pitch_deg.get_or_insert(0.0);
                    c.roll_deg.get_or_insert(0.0);
                    let (w, h) = (c.resolution[0], c.resolution[1]);
                    let principal = *c.principal.get_or_insert([w as f64 / 2.0, h as f64 / 2.0]);
                    SensorModel::Camera(CameraSpec {
                        pose: pose(c.position, c.yaw_deg, c.pitch_deg, c.roll_deg),
                        focal_px: c.focal_px,
                        principal: (principal[0], principal[1]),
                        resolution: (w, h),
                        downsample: *c.downsample.get_or_insert(DEFAULT_DOWNSAMPLE),
                        max_range: *c.max_range.get_or_insert(DEFAULT_CAMERA_RANGE),
                    })
                }
                SensorDoc::Lidar(l) => {
                    l.yaw_deg.get_or_insert(0.0);
                    l.pitch_deg.get_or_insert(0.0);
                    l.roll_deg.get_or_insert(0.0);
                    SensorModel::Lidar(LidarSpec {
                        pose: pose(l.position, l.yaw_deg, l.pitch_deg, l.roll_deg),
                        h_fov: l.h_fov_deg.get_or_insert(360.0).to_radians(),
                        v_fov: l.v_fov_deg.to_radians(),
                        azimuth_steps: l.azimuth_steps,
                        elevation_steps: l.elevation_steps,
                        max_range: l.max_range,
                    })
                }
            };
            model
                .validate()
                .map_err(|reason| DocError::invalid(&format!("{field} ({})", sensor.id()), reason))?;
            sensors.push(Sensor {
                id: sensor.id().to_string(),
                model,
            });
        }
        let iu = InfrastructureUnit {
            id: unit.id.clone(),
            processor_id: processor,
            sensors,
        };
        let report = validate_iu(&iu);
        if let Some(v) = report.violations.first() {
            let (label, limit) = match v.separation {
                infraplace_core::sensors::Separation::Horizontal => ("horizontal", v.limit),
                infraplace_core::sensors::Separation::Vertical => ("vertical", v.limit),
            };
            return Err(DocError::invalid(
                &format!("units[{u}] ({})", unit.id),
                format!(
                    "sensors {} and {} are {:.3} m apart {label} (limit {limit} m)",
                    v.first, v.second, v.measured
                ),
            ));
        }
        units.push(iu);
    }
    let placement = Placement { units };

    Ok(Scenario {
        doc,
        map_doc,
        map,
        map_path,
        roi,
        placement,
        weights,
        traffic,
    })
}

fn pose(p: [f64; 3], yaw: Option<f64>, pitch: Option<f64>, roll: Option<f64>) -> Pose {
    Pose::new(Point3::new(p[0], p[1], p[2]), deg(yaw), deg(pitch), deg(roll))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INLINE: &str = r#"
format_version = 1

[map]
format_version = 1
center = [0.0, 0.0]
recommended_roi_radius = 20.0

[[map.regions]]
kind = "junction"
polygon = [[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]]

[[map.lanes]]
id = "a"
nominal_spacing = 5.0
waypoints = [[-10.0, 0.0, 0.0], [10.0, 0.0, 0.0]]

[[units]]
id = "u"

[[units.sensors]]
id = "l"
type = "lidar"
position = [0.0, 0.0, 5.0]
v_fov_deg = 30.0
azimuth_steps = 360
elevation_steps = 16
max_range = 50.0
"#;

    fn parse(text: &str) -> Result<Scenario, DocError> {
        parse_scenario(text, Path::new("."))
    }

    #[test]
    fn defaults_are_filled() {
        let s = parse(INLINE).unwrap();
        assert_eq!(s.roi.radius, 20.0);
        assert_eq!(s.roi.voxel_edge, 0.5);
        assert_eq!(s.roi.height, 4.0);
        assert_eq!(s.roi.core_radius, 20.0);
        assert_eq!(s.weights, MetricWeights::default());
        assert_eq!(s.traffic, TrafficConfig::default());
        assert_eq!(s.doc.weights.fusion.occlusion, Some(0.5));
        assert_eq!(s.doc.units[0].processor.as_deref(), Some("u"));
        let SensorModel::Lidar(l) = s.placement.units[0].sensors[0].model else {
            panic!()
        };
        assert_eq!(l.h_fov, 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn normalized_form_is_a_fixpoint() {
        let s = parse(INLINE).unwrap();
        let again = parse(&s.doc.to_toml()).unwrap();
        assert_eq!(again.doc, s.doc);
        assert_eq!(again.placement, s.placement);
        assert_eq!(again.doc.to_toml(), s.doc.to_toml());
    }

    #[test]
    fn fusion_weights_must_sum_to_one() {
        let text = format!("{INLINE}\n[weights.fusion]\ncoverage = 0.5\nocclusion = 0.5\ninformation_gain = 0.5\n");
        let err = parse(&text).unwrap_err();
        assert!(err.is_validation());
        let msg = err.to_string();
        assert!(msg.contains("weights.fusion") && msg.contains("fusion weights must sum to 1"), "{msg}");
    }

    #[test]
    fn sensor_errors_name_the_field() {
        let text = INLINE.replace("elevation_steps = 16", "elevation_steps = 0");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("units[0].sensors[0] (l)"), "{msg}");
    }

    #[test]
    fn co_location_enforced() {
        let text = format!(
            "{INLINE}\n[[units.sensors]]\nid = \"l2\"\ntype = \"lidar\"\nposition = [3.0, 0.0, 5.0]\nv_fov_deg = 30.0\nazimuth_steps = 4\nelevation_steps = 2\nmax_range = 5.0\n"
        );
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("units[0] (u)") && msg.contains("3.000 m apart horizontal"), "{msg}");
    }

    #[test]
    fn unknown_lane_rejected() {
        let text = format!("{INLINE}\n[traffic]\nlanes = [\"zz\"]\n");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("traffic.lanes[0]"), "{msg}");
    }

    #[test]
    fn missing_map_is_not_a_validation_error() {
        let text = "format_version = 1\nmap = \"does-not-exist.toml\"\n";
        let err = parse(text).unwrap_err();
        assert!(!err.is_validation());
        assert!(err.to_string().contains("file not found"));
    }
}
