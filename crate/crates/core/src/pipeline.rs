//! End-to-end evaluation: ROI, rays, visibility, traffic, metrics, score.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{build_roi, GridError, RoiSpec, VoxelGrid};
use crate::metrics::{
    self, coverage_where, information_gain_where, region_breakdown, MetricWeights, MetricsError,
    RegionCoverage,
};
use crate::scene::VectorMap;
use crate::sensors::{placement_rays, Placement, SensorError};
use crate::traffic::{generate_frames, occupancy_probabilities, TrafficConfig, TrafficError};
use crate::visibility::{RayCache, VisibilityField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("building ROI: {0}")]
    Grid(#[from] GridError),
    #[error("generating rays: {0}")]
    Sensors(#[from] SensorError),
    #[error("traffic model: {0}")]
    Traffic(#[from] TrafficError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreMetrics {
    pub radius: f64,
    #[serde(rename = "C")]
    pub coverage: Option<f64>,
    #[serde(rename = "O")]
    pub occlusion: Option<f64>,
    #[serde(rename = "IG")]
    pub information_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStats {
    pub id: String,
    pub kind: String,
    pub rays: usize,
    pub visible_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub dims: [usize; 3],
    pub voxel_edge: f64,
    pub active_voxels: usize,
    pub visible_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub frames: usize,
    /// Waypoints that seeded occluder streams after the visibility filter.
    pub occluder_waypoints: usize,
    pub mean_boxes_per_frame: f64,
    pub total_entropy: f64,
    pub residual_entropy: f64,
}

/// Every setting that influenced the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub roi: RoiSpec,
    pub weights: MetricWeights,
    pub traffic: TrafficConfig,
    pub placement: Placement,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub setup_ms: f64,
    pub visibility_ms: f64,
    pub occlusion_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "C")]
    pub coverage: f64,
    /// `None` when the placement sees nothing.
    #[serde(rename = "O")]
    pub occlusion: Option<f64>,
    #[serde(rename = "IG")]
    pub information_gain: f64,
    /// Fused score; `None` whenever `O` is.
    #[serde(rename = "P_sm")]
    pub score: Option<f64>,
    pub regions: Vec<RegionCoverage>,
    pub core: CoreMetrics,
    pub sensors: Vec<SensorStats>,
    pub grid: GridStats,
    pub traffic: TrafficStats,
    pub config: ReportConfig,
    pub timing: Timing,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// The report without timing, for reproducibility comparisons.
    pub fn without_timing(&self) -> MetricsReport {
        MetricsReport {
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

/// A report together with the fields heatmaps are drawn from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub visibility: VisibilityField,
    /// Fraction of frames in which each voxel was occluded.
    pub occlusion_frequency: Vec<f64>,
}

/// Holds the ROI and the placement-independent occupancy statistics so many
/// placements can be scored against the same scene.
///
/// Occupancy comes from traffic on every lane, not only the lanes a
/// placement perceives, so the ROI's total entropy is the same for every
/// placement and information gain compares like with like.
#[derive(Debug, Clone)]
pub struct Evaluator {
    map: VectorMap,
    grid: VoxelGrid,
    traffic: TrafficConfig,
    warnings: Vec<String>,
    setup_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Evaluator {
    pub fn new(map: VectorMap, roi: &RoiSpec, traffic: &TrafficConfig) -> Result<Self, PipelineError> {
        let start = Instant::now();
        let grid = build_roi(&map, roi)?;
        Self::with_grid(map, grid, traffic, start)
    }

    /// Reuses an already built ROI; its occupancy is recomputed.
    pub fn from_grid(map: VectorMap, grid: VoxelGrid, traffic: &TrafficConfig) -> Result<Self, PipelineError> {
        Self::with_grid(map, grid, traffic, Instant::now())
    }

    fn with_grid(
        map: VectorMap,
        mut grid: VoxelGrid,
        traffic: &TrafficConfig,
        start: Instant,
    ) -> Result<Self, PipelineError> {
        let mut warnings = Vec::new();
        let effective = match generate_frames(&map, &grid, None, traffic) {
            Ok(seq) => {
                grid.set_occupancy(occupancy_probabilities(&grid, &seq))?;
                seq.config
            }
            Err(TrafficError::EmptySequence) => {
                warnings.push("map has no lane waypoints; occupancy is empty".to_string());
                grid.set_occupancy(vec![0.0; grid.len()])?;
                TrafficConfig {
                    frame_count: Some(traffic.frame_count.unwrap_or(1)),
                    ..traffic.clone()
                }
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Evaluator {
            map,
            grid,
            traffic: effective,
            warnings,
            setup_ms: ms(start),
        })
    }

    pub fn map(&self) -> &VectorMap {
        &self.map
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// Traffic configuration with the frame count resolved.
    pub fn traffic(&self) -> &TrafficConfig {
        &self.traffic
    }

    pub fn evaluate(&self, placement: &Placement, weights: &MetricWeights) -> Result<Evaluation, PipelineError> {
        let start = Instant::now();
        weights.validate()?;
        let grid = &self.grid;
        let mut warnings = self.warnings.clone();

        let bundles = placement_rays(placement)?;
        let cache = RayCache::build(grid, &bundles);
        let vis = cache.visibility(grid);
        let visibility_ms = ms(start);

        let c = metrics::coverage(grid, &vis, weights)?;
        let ig = metrics::information_gain(grid, &vis);
        if ig.degenerate {
            warnings.push("occupancy carries no entropy; IG reported as 0".to_string());
        }

        let occ_start = Instant::now();
        let mut frequency = vec![0.0; grid.len()];
        let mut occluder_waypoints = 0;
        let mut mean_boxes = 0.0;
        let mut frames = self.traffic.frame_count.unwrap_or(1);
        let (o, o_core) = if vis.is_empty() {
            (None, None)
        } else {
            match generate_frames(&self.map, grid, Some(&vis), &self.traffic) {
                Ok(seq) => {
                    let occ = metrics::occlusion(grid, &cache, &seq)?;
                    let n = seq.len() as f64;
                    frames = seq.len();
                    occluder_waypoints = seq.seeded_waypoints;
                    mean_boxes = seq.frames.iter().map(Vec::len).sum::<usize>() as f64 / n;
                    for (f, &k) in frequency.iter_mut().zip(&occ.frequency) {
                        *f = k as f64 / n;
                    }
                    (Some(occ.o), occ.o_core)
                }
                Err(TrafficError::EmptySequence) => {
                    warnings.push(
                        "no lane waypoint lies in the perceived region; no occluders, O = 1".to_string(),
                    );
                    (Some(1.0), Some(1.0))
                }
                Err(e) => return Err(e.into()),
            }
        };
        let occlusion_ms = ms(occ_start);

        let score = o
            .map(|o| metrics::fuse(c, o, ig.ig, &weights.fusion))
            .transpose()?;
        let core_ig = information_gain_where(grid, &vis, |i| grid.in_core(i));
        let core = CoreMetrics {
            radius: grid.spec().core_radius,
            coverage: coverage_where(grid, &vis, weights, |i| grid.in_core(i)),
            occlusion: o_core,
            information_gain: (!core_ig.degenerate).then_some(core_ig.ig),
        };
        let sensors = cache
            .per_sensor(grid)
            .into_iter()
            .zip(&bundles)
            .map(|((id, field), bundle)| SensorStats {
                id,
                kind: bundle.kind.to_string(),
                rays: bundle.rays.len(),
                visible_voxels: field.count(),
            })
            .collect();
        let report = MetricsReport {
            coverage: c,
            occlusion: o,
            information_gain: ig.ig,
            score,
            regions: region_breakdown(grid, &vis),
            core,
            sensors,
            grid: GridStats {
                dims: grid.dims(),
                voxel_edge: grid.voxel_edge(),
                active_voxels: grid.active_count(),
                visible_voxels: vis.count(),
            },
            traffic: TrafficStats {
                frames,
                occluder_waypoints,
                mean_boxes_per_frame: mean_boxes,
                total_entropy: ig.total_entropy,
                residual_entropy: ig.residual_entropy,
            },
            config: ReportConfig {
                roi: *grid.spec(),
                weights: *weights,
                traffic: self.traffic.clone(),
                placement: placement.clone(),
            },
            timing: Timing {
                setup_ms: self.setup_ms,
                visibility_ms,
                occlusion_ms,
                total_ms: self.setup_ms + ms(start),
            },
            warnings,
        };
        Ok(Evaluation {
            report,
            visibility: vis,
            occlusion_frequency: frequency,
        })
    }
}

/// One-shot evaluation of a single placement.
pub fn evaluate(
    map: &VectorMap,
    roi: &RoiSpec,
    placement: &Placement,
    weights: &MetricWeights,
    traffic: &TrafficConfig,
) -> Result<MetricsReport, PipelineError> {
    let evaluator = Evaluator::new(map.clone(), roi, traffic)?;
    Ok(evaluator.evaluate(placement, weights)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Lane, Region, RegionKind};
    use crate::sensors::{InfrastructureUnit, LidarSpec, Pose, Sensor, SensorModel};
    use nalgebra::{Point2, Point3};
    use std::f64::consts::PI;

    fn map() -> VectorMap {
        let sq = |h: f64| {
            vec![
                Point2::new(-h, -h),
                Point2::new(h, -h),
                Point2::new(h, h),
                Point2::new(-h, h),
            ]
        };
        let lane = Lane {
            id: "eb".into(),
            waypoints: (0..9).map(|i| Point3::new(-20.0 + 5.0 * i as f64, -2.0, 0.0)).collect(),
            nominal_spacing: 5.0,
        };
        VectorMap::new(
            Point2::origin(),
            0.0,
            vec![Region::new(RegionKind::Junction, sq(20.0), None)],
            vec![lane],
            Some(15.0),
        )
        .unwrap()
    }

    fn lidar_at(x: f64, y: f64) -> Placement {
        Placement {
            units: vec![InfrastructureUnit {
                id: "iu".into(),
                processor_id: "p".into(),
                sensors: vec![Sensor {
                    id: "l".into(),
                    model: SensorModel::Lidar(LidarSpec {
                        pose: Pose::at(Point3::new(x, y, 5.0)),
                        h_fov: 2.0 * PI,
                        v_fov: 40f64.to_radians(),
                        azimuth_steps: 180,
                        elevation_steps: 16,
                        max_range: 30.0,
                    }),
                }],
            }],
        }
    }

    fn roi() -> RoiSpec {
        RoiSpec {
            voxel_edge: 1.0,
            ..RoiSpec::new(Point2::origin(), 15.0, 0.0)
        }
    }

    #[test]
    fn empty_placement_has_no_occlusion_or_score() {
        let r = evaluate(
            &map(),
            &roi(),
            &Placement::default(),
            &MetricWeights::default(),
            &TrafficConfig::default(),
        )
        .unwrap();
        assert_eq!(r.coverage, 0.0);
        assert_eq!(r.information_gain, 0.0);
        assert_eq!(r.occlusion, None);
        assert_eq!(r.score, None);
    }

    #[test]
    fn single_lidar_report_is_consistent() {
        let ev = Evaluator::new(map(), &roi(), &TrafficConfig::default()).unwrap();
        let r = ev.evaluate(&lidar_at(0.0, 5.0), &MetricWeights::default()).unwrap().report;
        for v in [r.coverage, r.occlusion.unwrap(), r.information_gain, r.score.unwrap()] {
            assert!((0.0..=1.0).contains(&v), "{v}");
        }
        let fused = 0.3 * r.coverage + 0.5 * r.occlusion.unwrap() + 0.2 * r.information_gain;
        assert_eq!(r.score.unwrap(), fused);
        assert!(r.coverage > 0.0 && r.occlusion.unwrap() < 1.0);
        assert_eq!(r.sensors.len(), 1);
        assert_eq!(r.sensors[0].rays, 180 * 16);
        // waypoints -15 .. 10 lie in the ROI
        assert_eq!(r.traffic.frames, 6);
        // deterministic apart from timing
        let again = ev.evaluate(&lidar_at(0.0, 5.0), &MetricWeights::default()).unwrap().report;
        assert_eq!(r.without_timing(), again.without_timing());
    }

    #[test]
    fn bad_weights_rejected() {
        let ev = Evaluator::new(map(), &roi(), &TrafficConfig::default()).unwrap();
        let mut w = MetricWeights::default();
        w.fusion.coverage = 0.5;
        assert!(matches!(
            ev.evaluate(&lidar_at(0.0, 0.0), &w),
            Err(PipelineError::Metrics(MetricsError::WeightSum(_)))
        ));
    }
}
