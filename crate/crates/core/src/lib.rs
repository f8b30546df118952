//! Scores roadside sensor placements at road intersections.
//!
//! A placement is a set of posed cameras and LiDARs grouped into
//! infrastructure units. The engine voxelizes a cylindrical region of
//! interest around the intersection, casts every sensor ray through it and
//! reports weighted coverage, a traffic-occlusion score, an occupancy
//! information gain, and a fused score.

pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod sensors;
pub mod traffic;
pub mod visibility;

pub use grid::{build_roi, Ray, RoiSpec, VoxelCoord, VoxelGrid};
pub use metrics::{coverage, fuse, information_gain, occlusion, FusionWeights, MetricWeights, RegionWeights};
pub use pipeline::{evaluate, Evaluation, Evaluator, MetricsReport, PipelineError};
pub use scene::{heading_between, Lane, Region, RegionKind, VectorMap};
pub use sensors::{
    CameraSpec, InfrastructureUnit, LidarSpec, Placement, Pose, Sensor, SensorModel,
};
pub use traffic::{generate_frames, ray_first_hit, OrientedBox, TrafficConfig, TrafficSequence, VehicleDims};
pub use visibility::{RayCache, VisibilityField};
