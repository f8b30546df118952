//! Camera and LiDAR ray models, infrastructure units and placements.
//!
//! Frames: the world is right-handed with +z up. A pose rotates the sensor
//! body frame (x forward, y left, z up) into the world by intrinsic
//! yaw (about z), then pitch (about the new y), then roll (about the new x);
//! positive pitch dips the forward axis below the horizon. The camera's
//! optical frame (x right, y down, z along the optical axis) maps onto the
//! body frame so the optical axis is the body's forward axis.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Ray;

/// Horizontal separation bound between sensors of one unit, meters.
pub const IU_MAX_HORIZONTAL: f64 = 2.0;
/// Vertical separation bound between sensors of one unit, meters.
pub const IU_MAX_VERTICAL: f64 = 4.0;

pub const DEFAULT_CAMERA_RANGE: f64 = 50.0;
pub const DEFAULT_DOWNSAMPLE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("sensor {sensor:?}: {reason}")]
    InvalidSpec { sensor: String, reason: String },
    #[error("duplicate sensor id {0:?}")]
    DuplicateSensorId(String),
    #[error("unit {unit:?} violates co-location: {details}")]
    UnitViolation { unit: String, details: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(position: Point3<f64>, yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose {
            position,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn at(position: Point3<f64>) -> Self {
        Pose::new(position, 0.0, 0.0, 0.0)
    }

    /// Body-to-world rotation `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    fn validate(&self) -> Result<(), String> {
        let ok = self.position.coords.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
            && self.pitch.is_finite()
            && self.roll.is_finite();
        if ok {
            Ok(())
        } else {
            Err("pose must be finite".into())
        }
    }
}

/// Optical (x right, y down, z forward) to body (x forward, y left, z up).
fn optical_to_body() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    )
}

/// Pinhole camera sampled at a downsampled pixel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub pose: Pose,
    /// Focal length in pixels.
    pub focal_px: f64,
    /// Principal point `(c_x, c_y)` in pixels.
    pub principal: (f64, f64),
    /// Image size `(w, h)` in pixels.
    pub resolution: (u32, u32),
    /// Downsampling rate λ ∈ (0, 1].
    pub downsample: f64,
    pub max_range: f64,
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.pose.validate()?;
        if !(self.downsample > 0.0 && self.downsample <= 1.0) {
            return Err("downsample must lie in (0, 1]".into());
        }
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err("focal_px must be positive".into());
        }
        if !(self.principal.0.is_finite() && self.principal.1.is_finite()) {
            return Err("principal point must be finite".into());
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err("resolution must be positive".into());
        }
        let (cols, rows) = self.sample_dims();
        if cols == 0 || rows == 0 {
            return Err("downsampled image has no pixels".into());
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err("max_range must be positive".into());
        }
        Ok(())
    }

    /// Downsampled `(columns, rows)` = `(⌊wλ⌋, ⌊hλ⌋)`.
    pub fn sample_dims(&self) -> (usize, usize) {
        // the slack absorbs products like 0.29 * 100 = 28.999999999999996
        let cols = (self.resolution.0 as f64 * self.downsample + 1e-9).floor() as usize;
        let rows = (self.resolution.1 as f64 * self.downsample + 1e-9).floor() as usize;
        (cols, rows)
    }

    /// Unit direction in the optical frame through original-resolution pixel
    /// coordinates `(w, h)`.
    pub fn optical_direction(&self, w: f64, h: f64) -> Vector3<f64> {
        let (cx, cy) = self.principal;
        Vector3::new((w - cx) / self.focal_px, (h - cy) / self.focal_px, 1.0).normalize()
    }

    /// Original-resolution center of downsampled pixel (row `i`, column `j`),
    /// both 1-based, returned as `(w_j, h_i)`.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (j as f64 - 0.5) / self.downsample,
            (i as f64 - 0.5) / self.downsample,
        )
    }
}

/// Rotating or solid-state LiDAR as a lattice of beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub pose: Pose,
    /// Horizontal field of view, radians.
    pub h_fov: f64,
    /// Vertical field of view, radians.
    pub v_fov: f64,
    /// Beams per revolution (J).
    pub azimuth_steps: usize,
    /// Beam rows (I).
    pub elevation_steps: usize,
    pub max_range: f64,
}

impl LidarSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.pose.validate()?;
        if !(self.h_fov > 0.0 && self.h_fov <= 2.0 * PI + 1e-12) {
            return Err("h_fov must lie in (0, 2π]".into());
        }
        if !(self.v_fov > 0.0 && self.v_fov < PI) {
            return Err("v_fov must lie in (0, π)".into());
        }
        if self.azimuth_steps == 0 || self.elevation_steps == 0 {
            return Err("azimuth_steps and elevation_steps must be ≥1".into());
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err("max_range must be positive".into());
        }
        Ok(())
    }

    /// Beam yaws `−θ₀/2 + j·θ₀/J` for j = 1..J.
    pub fn azimuths(&self) -> Vec<f64> {
        let j_count = self.azimuth_steps as f64;
        (1..=self.azimuth_steps)
            .map(|j| -self.h_fov / 2.0 + j as f64 * self.h_fov / j_count)
            .collect()
    }

    /// Beam pitches `−ψ₀/2 + i·ψ₀/I` for i = 1..I.
    pub fn elevations(&self) -> Vec<f64> {
        let i_count = self.elevation_steps as f64;
        (1..=self.elevation_steps)
            .map(|i| -self.v_fov / 2.0 + i as f64 * self.v_fov / i_count)
            .collect()
    }
}

/// Beam direction in the LiDAR frame for yaw θ and pitch ψ.
pub fn lidar_frame_direction(yaw: f64, pitch: f64) -> Vector3<f64> {
    Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SensorModel {
    Camera(CameraSpec),
    Lidar(LidarSpec),
}

impl SensorModel {
    pub fn pose(&self) -> &Pose {
        match self {
            SensorModel::Camera(c) => &c.pose,
            SensorModel::Lidar(l) => &l.pose,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SensorModel::Camera(_) => "camera",
            SensorModel::Lidar(_) => "lidar",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            SensorModel::Camera(c) => c.validate(),
            SensorModel::Lidar(l) => l.validate(),
        }
    }

    pub fn ray_count(&self) -> usize {
        match self {
            SensorModel::Camera(c) => {
                let (cols, rows) = c.sample_dims();
                cols * rows
            }
            SensorModel::Lidar(l) => l.azimuth_steps * l.elevation_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    pub model: SensorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfrastructureUnit {
    pub id: String,
    /// Shared processing unit; every sensor in the unit reports to it.
    pub processor_id: String,
    pub sensors: Vec<Sensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairViolation {
    pub first: String,
    pub second: String,
    pub separation: Separation,
    pub measured: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub unit: String,
    pub violations: Vec<PairViolation>,
}

impl UnitReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every sensor pair of the unit against the co-location bounds.
pub fn validate_iu(iu: &InfrastructureUnit) -> UnitReport {
    let mut violations = Vec::new();
    for (a, sa) in iu.sensors.iter().enumerate() {
        for sb in &iu.sensors[a + 1..] {
            let pa = sa.model.pose().position;
            let pb = sb.model.pose().position;
            let horizontal = (pa.x - pb.x).hypot(pa.y - pb.y);
            let vertical = (pa.z - pb.z).abs();
            if horizontal > IU_MAX_HORIZONTAL {
                violations.push(PairViolation {
                    first: sa.id.clone(),
                    second: sb.id.clone(),
                    separation: Separation::Horizontal,
                    measured: horizontal,
                    limit: IU_MAX_HORIZONTAL,
                });
            }
            if vertical > IU_MAX_VERTICAL {
                violations.push(PairViolation {
                    first: sa.id.clone(),
                    second: sb.id.clone(),
                    separation: Separation::Vertical,
                    measured: vertical,
                    limit: IU_MAX_VERTICAL,
                });
            }
        }
    }
    UnitReport {
        unit: iu.id.clone(),
        violations,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub units: Vec<InfrastructureUnit>,
}

impl Placement {
    pub fn sensors(&self) -> impl Iterator<Item = &Sensor> {
        self.units.iter().flat_map(|u| u.sensors.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.sensors().next().is_none()
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let mut ids = HashSet::new();
        for sensor in self.sensors() {
            if !ids.insert(sensor.id.as_str()) {
                return Err(SensorError::DuplicateSensorId(sensor.id.clone()));
            }
            sensor
                .model
                .validate()
                .map_err(|reason| SensorError::InvalidSpec {
                    sensor: sensor.id.clone(),
                    reason,
                })?;
        }
        for unit in &self.units {
            let report = validate_iu(unit);
            if !report.passed() {
                let details = report
                    .violations
                    .iter()
                    .map(|v| {
                        format!(
                            "{}/{} {:?} separation {:.3} m > {} m",
                            v.first, v.second, v.separation, v.measured, v.limit
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("; ");
                return Err(SensorError::UnitViolation {
                    unit: unit.id.clone(),
                    details,
                });
            }
        }
        Ok(())
    }
}

/// One ray per downsampled pixel, rows outer, columns inner.
pub fn camera_rays(cam: &CameraSpec) -> Result<Vec<Ray>, String> {
    cam.validate()?;
    let (cols, rows) = cam.sample_dims();
    let to_world = cam.pose.rotation().matrix() * optical_to_body();
    let mut rays = Vec::with_capacity(cols * rows);
    for i in 1..=rows {
        for j in 1..=cols {
            let (w, h) = cam.pixel_center(i, j);
            let d = to_world * cam.optical_direction(w, h);
            rays.push(Ray::new(cam.pose.position, d, cam.max_range).map_err(|e| e.to_string())?);
        }
    }
    Ok(rays)
}

/// I·J beams, elevation rows outer, azimuth inner.
pub fn lidar_rays(lidar: &LidarSpec) -> Result<Vec<Ray>, String> {
    lidar.validate()?;
    let rot = lidar.pose.rotation();
    let azimuths = lidar.azimuths();
    let mut rays = Vec::with_capacity(lidar.azimuth_steps * lidar.elevation_steps);
    for pitch in lidar.elevations() {
        for &yaw in &azimuths {
            let d = rot * lidar_frame_direction(yaw, pitch);
            rays.push(Ray::new(lidar.pose.position, d, lidar.max_range).map_err(|e| e.to_string())?);
        }
    }
    Ok(rays)
}

#[derive(Debug, Clone)]
pub struct RayBundle {
    pub sensor_id: String,
    pub kind: &'static str,
    pub rays: Vec<Ray>,
}

/// Ray bundles per sensor, in declaration order.
pub fn placement_rays(p: &Placement) -> Result<Vec<RayBundle>, SensorError> {
    p.validate()?;
    p.sensors()
        .map(|s| {
            let rays = match &s.model {
                SensorModel::Camera(c) => camera_rays(c),
                SensorModel::Lidar(l) => lidar_rays(l),
            }
            .map_err(|reason| SensorError::InvalidSpec {
                sensor: s.id.clone(),
                reason,
            })?;
            Ok(RayBundle {
                sensor_id: s.id.clone(),
                kind: s.model.kind(),
                rays,
            })
        })
        .collect()
}
