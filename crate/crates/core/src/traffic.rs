//! Waypoint traffic model: vehicle boxes streamed along the map lanes, used
//! both as occluders and as the source of per-voxel occupancy statistics.

use fixedbitset::FixedBitSet;
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Ray, VoxelGrid};
use crate::scene::{heading_between, Lane, SceneError, VectorMap};
use crate::visibility::VisibilityField;

/// Slack for arc positions that land a hair past the lane end.
const END_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("no waypoint survives the visibility filter; traffic sequence would be empty")]
    EmptySequence,
    #[error("traffic config: {0}")]
    InvalidConfig(String),
    #[error("traffic config names unknown lane {0:?}")]
    UnknownLane(String),
    #[error("lane {lane:?}: {source}")]
    Lane { lane: String, source: SceneError },
}

/// Envelope of the largest vehicle class, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        VehicleDims {
            length: 10.0,
            width: 2.6,
            height: 3.5,
        }
    }
}

impl VehicleDims {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let ok = [self.length, self.width, self.height]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(TrafficError::InvalidConfig(
                "vehicle dims must be positive".into(),
            ))
        }
    }
}

/// Vehicle box standing on the ground. `center` is the center of the bottom
/// face; the box extends `height` upward from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point3<f64>,
    pub heading: f64,
    pub dims: VehicleDims,
}

impl OrientedBox {
    fn to_local(&self, v: Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.heading.sin_cos();
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    fn half(&self) -> (f64, f64) {
        (self.dims.length / 2.0, self.dims.width / 2.0)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point3<f64>) -> bool {
        let l = self.to_local(p - self.center);
        let (hl, hw) = self.half();
        l.x.abs() <= hl && l.y.abs() <= hw && l.z >= 0.0 && l.z <= self.dims.height
    }

    /// Planar bounding rectangle `(min_x, min_y, max_x, max_y)`.
    pub fn xy_bounds(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = self.half();
        let ex = (c * hl).abs() + (s * hw).abs();
        let ey = (s * hl).abs() + (c * hw).abs();
        (
            self.center.x - ex,
            self.center.y - ey,
            self.center.x + ex,
            self.center.y + ey,
        )
    }

    pub fn volume(&self) -> f64 {
        self.dims.length * self.dims.width * self.dims.height
    }

    /// Slab test in the box frame. Returns the entry parameter clamped to 0
    /// (0 when the origin is inside or on the box); tangency counts.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let o = self.to_local(ray.origin() - self.center);
        let d = self.to_local(ray.direction());
        let (hl, hw) = self.half();
        let lo = [-hl, -hw, 0.0];
        let hi = [hl, hw, self.dims.height];
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
            } else {
                let t0 = (lo[a] - o[a]) / d[a];
                let t1 = (hi[a] - o[a]) / d[a];
                t_near = t_near.max(t0.min(t1));
                t_far = t_far.min(t0.max(t1));
            }
        }
        if t_near > t_far || t_far < 0.0 {
            return None;
        }
        let t = t_near.max(0.0);
        (t <= ray.t_max()).then_some(t)
    }
}

/// First parameter in `[0, t_max]` at which the ray meets any box.
pub fn ray_first_hit(ray: &Ray, boxes: &[OrientedBox]) -> Option<f64> {
    boxes
        .iter()
        .filter_map(|b| b.intersect(ray))
        .min_by(f64::total_cmp)
}

/// Uniform planar bucket grid over one frame's boxes. Gives the same answer
/// as [`ray_first_hit`] while only testing boxes near the ray.
#[derive(Debug, Clone)]
pub struct FrameIndex<'a> {
    boxes: &'a [OrientedBox],
    cell: f64,
    min: (f64, f64),
    dims: (usize, usize),
    cells: Vec<Vec<u32>>,
    z_band: (f64, f64),
}

impl<'a> FrameIndex<'a> {
    pub fn new(boxes: &'a [OrientedBox], cell: f64) -> Self {
        assert!(cell > 0.0);
        if boxes.is_empty() {
            return FrameIndex {
                boxes,
                cell,
                min: (0.0, 0.0),
                dims: (0, 0),
                cells: Vec::new(),
                z_band: (0.0, 0.0),
            };
        }
        let bounds: Vec<_> = boxes.iter().map(OrientedBox::xy_bounds).collect();
        let min_x = bounds.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
        let min_y = bounds.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let max_x = bounds.iter().map(|b| b.2).fold(f64::NEG_INFINITY, f64::max);
        let max_y = bounds.iter().map(|b| b.3).fold(f64::NEG_INFINITY, f64::max);
        let nx = ((max_x - min_x) / cell).floor() as usize + 1;
        let ny = ((max_y - min_y) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (n, b) in bounds.iter().enumerate() {
            let (i0, j0) = Self::cell_of(b.0, b.1, (min_x, min_y), cell, (nx, ny));
            let (i1, j1) = Self::cell_of(b.2, b.3, (min_x, min_y), cell, (nx, ny));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    cells[i + nx * j].push(n as u32);
                }
            }
        }
        let z_lo = boxes.iter().map(|b| b.center.z).fold(f64::INFINITY, f64::min);
        let z_hi = boxes
            .iter()
            .map(|b| b.center.z + b.dims.height)
            .fold(f64::NEG_INFINITY, f64::max);
        FrameIndex {
            boxes,
            cell,
            min: (min_x, min_y),
            dims: (nx, ny),
            cells,
            z_band: (z_lo, z_hi),
        }
    }

    fn cell_of(x: f64, y: f64, min: (f64, f64), cell: f64, dims: (usize, usize)) -> (usize, usize) {
        let i = ((x - min.0) / cell).floor().max(0.0) as usize;
        let j = ((y - min.1) / cell).floor().max(0.0) as usize;
        (i.min(dims.0 - 1), j.min(dims.1 - 1))
    }

    pub fn first_hit(&self, ray: &Ray) -> Option<f64> {
        if self.boxes.is_empty() {
            return None;
        }
        // part of the segment inside the height band the boxes occupy
        let o = ray.origin();
        let d = ray.direction();
        let (mut t0, mut t1) = (0.0, ray.t_max());
        if d.z == 0.0 {
            if o.z < self.z_band.0 || o.z > self.z_band.1 {
                return None;
            }
        } else {
            let ta = (self.z_band.0 - o.z) / d.z;
            let tb = (self.z_band.1 - o.z) / d.z;
            t0 = f64::max(t0, ta.min(tb));
            t1 = f64::min(t1, ta.max(tb));
        }
        // margin so rounding never drops a candidate
        let pad = 1e-9 * (1.0 + ray.t_max());
        if t0 > t1 + pad {
            return None;
        }
        let (a, b) = (ray.at((t0 - pad).max(0.0)), ray.at(t1 + pad));
        let (lo_x, hi_x) = (a.x.min(b.x), a.x.max(b.x));
        let (lo_y, hi_y) = (a.y.min(b.y), a.y.max(b.y));
        let max_x = self.min.0 + self.dims.0 as f64 * self.cell;
        let max_y = self.min.1 + self.dims.1 as f64 * self.cell;
        if hi_x < self.min.0 || hi_y < self.min.1 || lo_x > max_x || lo_y > max_y {
            return None;
        }
        let (i0, j0) = Self::cell_of(lo_x, lo_y, self.min, self.cell, self.dims);
        let (i1, j1) = Self::cell_of(hi_x, hi_y, self.min, self.cell, self.dims);
        let mut candidates: Vec<u32> = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                candidates.extend_from_slice(&self.cells[i + self.dims.0 * j]);
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        candidates
            .iter()
            .filter_map(|&n| self.boxes[n as usize].intersect(ray))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub seed: u64,
    /// Arc length every box advances per frame. `None` advances each lane by
    /// `nominal_spacing / frame_count`, so one sequence sweeps each box
    /// across exactly one waypoint gap.
    pub advance_per_frame: Option<f64>,
    /// `None` uses the largest number of waypoints any lane has inside the ROI.
    pub frame_count: Option<usize>,
    pub dims: VehicleDims,
    /// Restrict traffic to these lane ids.
    pub lanes: Option<Vec<String>>,
    /// Shift each lane's stream by a seeded random fraction of its spacing.
    pub phase_jitter: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            seed: 0,
            advance_per_frame: None,
            frame_count: None,
            dims: VehicleDims::default(),
            lanes: None,
            phase_jitter: false,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        self.dims.validate()?;
        if let Some(a) = self.advance_per_frame {
            if !(a.is_finite() && a >= 0.0) {
                return Err(TrafficError::InvalidConfig(
                    "advance_per_frame must be finite and ≥0".into(),
                ));
            }
        }
        if self.frame_count == Some(0) {
            return Err(TrafficError::InvalidConfig("frame_count must be ≥1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSequence {
    pub frames: Vec<Vec<OrientedBox>>,
    pub config: TrafficConfig,
    /// Number of waypoints that seeded a box stream.
    pub seeded_waypoints: usize,
}

impl TrafficSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Lane polyline parameterized by planar arc length.
struct LanePath<'a> {
    lane: &'a Lane,
    cum: Vec<f64>,
}

impl<'a> LanePath<'a> {
    fn new(lane: &'a Lane) -> Result<Self, TrafficError> {
        let mut cum = Vec::with_capacity(lane.waypoints.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in lane.waypoints.windows(2) {
            s += (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            cum.push(s);
        }
        let path = LanePath { lane, cum };
        // every lane needs at least one segment with a defined heading
        path.heading(0)?;
        Ok(path)
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Heading of segment `seg`, falling back to the nearest segment that
    /// has one.
    fn heading(&self, seg: usize) -> Result<f64, TrafficError> {
        let w = &self.lane.waypoints;
        let n_seg = w.len() - 1;
        for dist in 0..n_seg {
            for s in [seg.checked_sub(dist), seg.checked_add(dist)].into_iter().flatten() {
                if s < n_seg {
                    if let Ok(h) = heading_between(w[s], w[s + 1]) {
                        return Ok(h);
                    }
                }
            }
        }
        Err(TrafficError::Lane {
            lane: self.lane.id.clone(),
            source: SceneError::DegenerateHeading,
        })
    }

    /// Planar position and heading at arc length `s ∈ [0, length]`.
    fn pose_at(&self, s: f64) -> Result<(f64, f64, f64), TrafficError> {
        let w = &self.lane.waypoints;
        let m = self.cum.partition_point(|&c| c <= s).max(1) - 1;
        let seg = m.min(w.len() - 2);
        let heading = self.heading(seg)?;
        if self.cum[m] == s {
            return Ok((w[m].x, w[m].y, heading));
        }
        let (a, b) = (w[m], w[m + 1]);
        let f = (s - self.cum[m]) / (self.cum[m + 1] - self.cum[m]);
        Ok((a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), heading))
    }
}

fn waypoint_in_roi(grid: &VoxelGrid, w: &Point3<f64>) -> bool {
    grid.column_at(w.x, w.y)
        .is_some_and(|(i, j)| grid.column_in_roi(i, j))
}

/// Streams vehicle boxes along the lanes.
///
/// Each retained waypoint seeds one box; in frame `k` that box sits
/// `k · advance` further along its lane, wrapping over a cycle of lane
/// length plus one spacing. With `visibility`, only waypoints whose voxel
/// column is perceived somewhere are retained; without it every waypoint is.
/// Boxes whose base center falls outside the ROI are dropped from a frame.
pub fn generate_frames(
    map: &VectorMap,
    grid: &VoxelGrid,
    visibility: Option<&VisibilityField>,
    config: &TrafficConfig,
) -> Result<TrafficSequence, TrafficError> {
    config.validate()?;
    if let Some(ids) = &config.lanes {
        for id in ids {
            if !map.lanes().iter().any(|l| &l.id == id) {
                return Err(TrafficError::UnknownLane(id.clone()));
            }
        }
    }
    let selected = |lane: &Lane| config.lanes.as_ref().is_none_or(|ids| ids.contains(&lane.id));

    let frame_count = config.frame_count.unwrap_or_else(|| {
        map.lanes()
            .iter()
            .filter(|l| selected(l))
            .map(|l| l.waypoints.iter().filter(|w| waypoint_in_roi(grid, w)).count())
            .max()
            .unwrap_or(0)
            .max(1)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ground = map.ground_elevation();
    let mut frames = vec![Vec::new(); frame_count];
    let mut seeded = 0;
    for lane in map.lanes() {
        // draw for every lane so a lane subset does not reshuffle the others
        let phase: f64 = rng.gen();
        if !selected(lane) {
            continue;
        }
        let path = LanePath::new(lane)?;
        let spacing = lane.nominal_spacing;
        let advance = config
            .advance_per_frame
            .unwrap_or(spacing / frame_count as f64);
        let offset = if config.phase_jitter { phase * spacing } else { 0.0 };
        let cycle = path.length() + spacing;
        for (n, w) in lane.waypoints.iter().enumerate() {
            let keep = match visibility {
                None => true,
                Some(vis) => grid
                    .column_at(w.x, w.y)
                    .is_some_and(|(i, j)| vis.column_visible(i, j)),
            };
            if !keep {
                continue;
            }
            seeded += 1;
            for (k, frame) in frames.iter_mut().enumerate() {
                let raw = path.cum[n] + offset + k as f64 * advance;
                let s = if raw <= path.length() {
                    raw
                } else {
                    raw.rem_euclid(cycle)
                };
                if s > path.length() + END_SLACK {
                    continue;
                }
                let (x, y, heading) = path.pose_at(s.min(path.length()))?;
                let inside = grid
                    .column_at(x, y)
                    .is_some_and(|(i, j)| grid.column_in_roi(i, j));
                if inside {
                    frame.push(OrientedBox {
                        center: Point3::new(x, y, ground),
                        heading,
                        dims: config.dims,
                    });
                }
            }
        }
    }
    if seeded == 0 {
        return Err(TrafficError::EmptySequence);
    }
    let mut effective = config.clone();
    effective.frame_count = Some(frame_count);
    Ok(TrafficSequence {
        frames,
        config: effective,
        seeded_waypoints: seeded,
    })
}

/// Active voxels whose center lies inside some box of the frame, ascending.
pub fn occupied_voxels(grid: &VoxelGrid, boxes: &[OrientedBox]) -> Vec<u32> {
    let e = grid.voxel_edge();
    let origin = grid.origin();
    let [nx, ny, nz] = grid.dims();
    let mut hit = FixedBitSet::with_capacity(grid.len());
    // lattice indices whose centers fall inside [lo, hi] along one axis
    let span = |lo: f64, hi: f64, o: f64, n: usize| -> Option<(usize, usize)> {
        let a = ((lo - o) / e - 0.5).ceil().max(0.0);
        let b = ((hi - o) / e - 0.5).floor().min(n as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    };
    for b in boxes {
        let (x0, y0, x1, y1) = b.xy_bounds();
        let (Some((i0, i1)), Some((j0, j1)), Some((k0, k1))) = (
            span(x0, x1, origin.x, nx),
            span(y0, y1, origin.y, ny),
            span(b.center.z, b.center.z + b.dims.height, origin.z, nz),
        ) else {
            continue;
        };
        // widen by one voxel so rounding in the span never drops a center
        let (i0, j0, k0) = (i0.saturating_sub(1), j0.saturating_sub(1), k0.saturating_sub(1));
        let (i1, j1, k1) = ((i1 + 1).min(nx - 1), (j1 + 1).min(ny - 1), (k1 + 1).min(nz - 1));
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let idx = grid.index([i, j, k]);
                    if grid.is_active(idx) && b.contains(grid.center([i, j, k])) {
                        hit.insert(idx);
                    }
                }
            }
        }
    }
    hit.ones().map(|i| i as u32).collect()
}

/// Fraction of frames in which each voxel center lies inside a box.
pub fn occupancy_probabilities(grid: &VoxelGrid, seq: &TrafficSequence) -> Vec<f64> {
    let per_frame: Vec<Vec<u32>> = seq
        .frames
        .par_iter()
        .map(|boxes| occupied_voxels(grid, boxes))
        .collect();
    let mut counts = vec![0u32; grid.len()];
    for frame in &per_frame {
        for &v in frame {
            counts[v as usize] += 1;
        }
    }
    let t = seq.frames.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / t).collect()
}
