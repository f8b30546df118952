//! Voxelized region of interest and exact ray traversal over it.
//!
//! The ROI is a vertical cylinder of radius `radius` around the intersection
//! center, `height` meters tall above the ground. It is stored as an
//! axis-aligned lattice of cubic voxels; a voxel belongs to the ROI when its
//! center satisfies the cylinder test. The lattice is centered on the ROI
//! center and holds exactly the lattice positions whose centers can pass that
//! test along each axis.
//!
//! Traversal walks voxel boundaries incrementally (a Bresenham-style walk
//! generalized to exact boundary crossings) and reports every voxel touched by
//! the closed segment, stepping through all adjacent voxels when a crossing
//! lands on an edge or corner.

use fixedbitset::FixedBitSet;
use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{RegionKind, VectorMap};

pub const DEFAULT_HEIGHT: f64 = 4.0;
pub const DEFAULT_VOXEL_EDGE: f64 = 0.5;
pub const DEFAULT_CORE_RADIUS: f64 = 30.0;
pub const DEFAULT_VOXEL_CAP: usize = 50_000_000;

/// Crossing parameters closer than this (in voxel edges) count as a tie.
const TIE_EPS: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-9;

/// Integer voxel coordinates `[i, j, k]` along x, y, z.
pub type VoxelCoord = [usize; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
    #[error("voxel grid of {count} voxels exceeds the cap of {cap}")]
    TooLarge { count: usize, cap: usize },
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("occupancy field has {got} values, grid has {expected}")]
    FieldLength { got: usize, expected: usize },
    #[error("occupancy value {value} at voxel {index} is outside [0, 1]")]
    OccupancyRange { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub center: Point2<f64>,
    pub radius: f64,
    pub ground: f64,
    pub height: f64,
    pub voxel_edge: f64,
    pub core_radius: f64,
}

impl RoiSpec {
    /// ROI with default height, voxel size and core radius (clamped to `radius`).
    pub fn new(center: Point2<f64>, radius: f64, ground: f64) -> Self {
        RoiSpec {
            center,
            radius,
            ground,
            height: DEFAULT_HEIGHT,
            voxel_edge: DEFAULT_VOXEL_EDGE,
            core_radius: DEFAULT_CORE_RADIUS.min(radius),
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let finite = [
            self.center.x,
            self.center.y,
            self.radius,
            self.ground,
            self.height,
            self.voxel_edge,
            self.core_radius,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GridError::InvalidRoi("values must be finite".into()));
        }
        if self.radius <= 0.0 {
            return Err(GridError::InvalidRoi("radius must be positive".into()));
        }
        if self.height <= 0.0 {
            return Err(GridError::InvalidRoi("height must be positive".into()));
        }
        if self.voxel_edge <= 0.0 {
            return Err(GridError::InvalidRoi("voxel_edge must be positive".into()));
        }
        if self.core_radius < 0.0 || self.core_radius > self.radius {
            return Err(GridError::InvalidRoi(
                "core_radius must lie in [0, radius]".into(),
            ));
        }
        Ok(())
    }

    /// Lattice dimensions `(nx, ny, nz)` for this spec.
    pub fn dims(&self) -> [usize; 3] {
        let e = self.voxel_edge;
        let nxy = ((2.0 * self.radius / e + 1e-9).floor() as usize).max(1);
        let nz = ((self.height / e + 0.5 + 1e-9).floor() as usize).max(1);
        [nxy, nxy, nz]
    }
}

/// A ray segment `origin + t * direction`, `t ∈ [0, t_max]`, with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Point3<f64>,
    direction: Vector3<f64>,
    t_max: f64,
}

impl Ray {
    /// Normalizes `direction`; fails on a zero or non-finite direction or a
    /// non-positive `t_max`.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>, t_max: f64) -> Result<Self, GridError> {
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(GridError::InvalidRay("direction must be non-zero".into()));
        }
        if !origin.coords.iter().all(|c| c.is_finite()) {
            return Err(GridError::InvalidRay("origin must be finite".into()));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(GridError::InvalidRay("t_max must be positive and finite".into()));
        }
        let direction = direction / norm;
        debug_assert!((direction.norm() - 1.0).abs() <= UNIT_TOL);
        Ok(Ray {
            origin,
            direction,
            t_max,
        })
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }

    /// Same ray with a shorter reach.
    pub fn truncated(&self, t_max: f64) -> Ray {
        Ray {
            t_max: t_max.min(self.t_max),
            ..*self
        }
    }
}

/// The voxelized ROI.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    spec: RoiSpec,
    dims: [usize; 3],
    origin: Point3<f64>,
    active: FixedBitSet,
    active_count: usize,
    /// Region label per xy column; the whole column shares it.
    column_region: Vec<Option<RegionKind>>,
    occupancy: Vec<f64>,
}

/// Builds the ROI lattice, flags Ω membership at voxel centers and labels
/// every active column with the region found at its xy center.
pub fn build_roi(map: &VectorMap, spec: &RoiSpec) -> Result<VoxelGrid, GridError> {
    build_roi_with_cap(map, spec, DEFAULT_VOXEL_CAP)
}

pub fn build_roi_with_cap(map: &VectorMap, spec: &RoiSpec, cap: usize) -> Result<VoxelGrid, GridError> {
    spec.validate()?;
    let dims = spec.dims();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(GridError::TooLarge { count, cap });
    }
    let e = spec.voxel_edge;
    let origin = Point3::new(
        spec.center.x - dims[0] as f64 * e / 2.0,
        spec.center.y - dims[1] as f64 * e / 2.0,
        spec.ground,
    );
    let [nx, ny, nz] = dims;
    let mut active = FixedBitSet::with_capacity(count);
    let mut column_region = vec![None; nx * ny];
    let mut active_count = 0;
    let z_ok: Vec<bool> = (0..nz)
        .map(|k| {
            let z = origin.z + (k as f64 + 0.5) * e;
            z >= spec.ground && z <= spec.ground + spec.height
        })
        .collect();
    for j in 0..ny {
        let y = origin.y + (j as f64 + 0.5) * e;
        for i in 0..nx {
            let x = origin.x + (i as f64 + 0.5) * e;
            let (dx, dy) = (x - spec.center.x, y - spec.center.y);
            if (dx * dx + dy * dy).sqrt() > spec.radius {
                continue;
            }
            column_region[i + nx * j] = map.region_at(Point2::new(x, y));
            for (k, &ok) in z_ok.iter().enumerate() {
                if ok {
                    active.insert(i + nx * (j + ny * k));
                    active_count += 1;
                }
            }
        }
    }
    Ok(VoxelGrid {
        spec: *spec,
        dims,
        origin,
        active,
        active_count,
        column_region,
        occupancy: vec![0.0; count],
    })
}

impl VoxelGrid {
    pub fn spec(&self) -> &RoiSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_edge(&self) -> f64 {
        self.spec.voxel_edge
    }

    /// Minimum corner of the lattice in world coordinates.
    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let e = self.spec.voxel_edge;
        let ext = Vector3::new(
            self.dims[0] as f64 * e,
            self.dims[1] as f64 * e,
            self.dims[2] as f64 * e,
        );
        (self.origin, self.origin + ext)
    }

    pub fn index(&self, c: VoxelCoord) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coord(&self, index: usize) -> VoxelCoord {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn center(&self, c: VoxelCoord) -> Point3<f64> {
        let e = self.spec.voxel_edge;
        self.origin + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * e
    }

    pub fn voxel_min(&self, c: VoxelCoord) -> Point3<f64> {
        let e = self.spec.voxel_edge;
        self.origin + Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * e
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active.contains(index)
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.ones()
    }

    pub fn region_kind(&self, index: usize) -> Option<RegionKind> {
        self.column_region[index % (self.dims[0] * self.dims[1])]
    }

    pub fn column_region(&self, i: usize, j: usize) -> Option<RegionKind> {
        self.column_region[i + self.dims[0] * j]
    }

    /// Horizontal distance from the voxel center to the ROI center.
    pub fn radial_distance(&self, index: usize) -> f64 {
        let c = self.center(self.coord(index));
        (c.x - self.spec.center.x).hypot(c.y - self.spec.center.y)
    }

    pub fn in_core(&self, index: usize) -> bool {
        self.radial_distance(index) <= self.spec.core_radius
    }

    /// Whether the column's xy center lies within the ROI radius.
    pub fn column_in_roi(&self, i: usize, j: usize) -> bool {
        let e = self.spec.voxel_edge;
        let x = self.origin.x + (i as f64 + 0.5) * e;
        let y = self.origin.y + (j as f64 + 0.5) * e;
        let (dx, dy) = (x - self.spec.center.x, y - self.spec.center.y);
        (dx * dx + dy * dy).sqrt() <= self.spec.radius
    }

    /// Column `(i, j)` containing the planar point, if inside the lattice.
    pub fn column_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let e = self.spec.voxel_edge;
        let fi = ((x - self.origin.x) / e).floor();
        let fj = ((y - self.origin.y) / e).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.dims[0] as f64 || fj >= self.dims[1] as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn set_occupancy(&mut self, values: Vec<f64>) -> Result<(), GridError> {
        if values.len() != self.len() {
            return Err(GridError::FieldLength {
                got: values.len(),
                expected: self.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GridError::OccupancyRange { index, value });
        }
        self.occupancy = values;
        Ok(())
    }

    /// Parameter at which the ray segment first touches voxel `c`
    /// (0 when the origin lies inside it).
    pub fn entry_t(&self, ray: &Ray, c: VoxelCoord) -> f64 {
        let lo = self.voxel_min(c);
        let e = self.spec.voxel_edge;
        let o = ray.origin;
        let d = ray.direction;
        let mut t_near: f64 = 0.0;
        for a in 0..3 {
            if d[a] != 0.0 {
                let t0 = (lo[a] - o[a]) / d[a];
                let t1 = (lo[a] + e - o[a]) / d[a];
                t_near = t_near.max(t0.min(t1));
            }
        }
        t_near
    }

    /// Voxels touched by the closed ray segment, in order of increasing
    /// entry parameter.
    pub fn traverse_ray(&self, ray: &Ray) -> Vec<VoxelCoord> {
        let mut out = Vec::new();
        self.walk(ray, |c, _| out.push(c));
        out
    }

    /// Like [`traverse_ray`](Self::traverse_ray), also yielding the entry
    /// parameter of each voxel as the walk computed it.
    pub fn traverse_ray_with_t(&self, ray: &Ray) -> Vec<(VoxelCoord, f64)> {
        let mut out = Vec::new();
        self.walk(ray, |c, t| out.push((c, t)));
        out
    }

    /// Incremental boundary-crossing walk over the closed segment. Works in
    /// lattice units; crossing parameters are recomputed from the origin at
    /// every step so they do not accumulate rounding drift.
    ///
    /// A segment that starts on a voxel face also touches the voxel behind
    /// it, and one running inside a face (zero direction component on a
    /// lattice plane) touches the voxels on both sides along its length.
    pub fn walk(&self, ray: &Ray, mut visit: impl FnMut(VoxelCoord, f64)) {
        let e = self.spec.voxel_edge;
        let p0: [f64; 3] = std::array::from_fn(|a| (ray.origin[a] - self.origin[a]) / e);
        let dg: [f64; 3] = std::array::from_fn(|a| ray.direction[a] / e);

        // axes the segment lies inside a lattice plane of
        let mut lateral: Vec<[Option<i64>; 3]> = vec![[None; 3]];
        for a in 0..3 {
            let k = p0[a];
            if dg[a] == 0.0 && k.fract() == 0.0 && k > 0.0 && k < self.dims[a] as f64 {
                lateral = lateral
                    .into_iter()
                    .flat_map(|l| {
                        let mut lo = l;
                        let mut hi = l;
                        lo[a] = Some(k as i64 - 1);
                        hi[a] = Some(k as i64);
                        [lo, hi]
                    })
                    .collect();
            }
        }
        if lateral.len() == 1 {
            self.walk_line(&p0, &dg, ray.t_max, &lateral[0], &mut visit);
            return;
        }
        let mut all = Vec::new();
        for fixed in &lateral {
            self.walk_line(&p0, &dg, ray.t_max, fixed, &mut |c, t| all.push((c, t)));
        }
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut seen = std::collections::HashSet::new();
        for (c, t) in all {
            if seen.insert(c) {
                visit(c, t);
            }
        }
    }

    fn walk_line(
        &self,
        p0: &[f64; 3],
        dg: &[f64; 3],
        t_max: f64,
        fixed: &[Option<i64>; 3],
        visit: &mut dyn FnMut(VoxelCoord, f64),
    ) {
        let e = self.spec.voxel_edge;
        let n = [self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64];

        // clip the segment to the lattice box
        let (mut t0, mut t1) = (0.0_f64, t_max);
        for a in 0..3 {
            if dg[a] == 0.0 {
                if p0[a] < 0.0 || p0[a] > n[a] {
                    return;
                }
            } else {
                let ta = -p0[a] / dg[a];
                let tb = (n[a] - p0[a]) / dg[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t0 > t1 {
            return;
        }

        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut next = [f64::INFINITY; 3];
        for a in 0..3 {
            let p = p0[a] + t0 * dg[a];
            if dg[a] > 0.0 {
                step[a] = 1;
            } else if dg[a] < 0.0 {
                step[a] = -1;
            }
            // moving up from a face: start in the voxel below it so the
            // crossing at t0 visits both
            let c = if step[a] == 1 && p.fract() == 0.0 { p as i64 - 1 } else { p.floor() as i64 };
            cell[a] = fixed[a].unwrap_or(c).clamp(0, self.dims[a] as i64 - 1);
        }
        let boundary = |a: usize, cell: &[i64; 3], step: &[i64; 3]| -> f64 {
            match step[a] {
                1 => ((cell[a] + 1) as f64 - p0[a]) / dg[a],
                -1 => (cell[a] as f64 - p0[a]) / dg[a],
                _ => f64::INFINITY,
            }
        };
        for a in 0..3 {
            next[a] = boundary(a, &cell, &step);
        }
        let in_range = |c: &[i64; 3]| (0..3).all(|a| c[a] >= 0 && c[a] < self.dims[a] as i64);
        let to_coord = |c: &[i64; 3]| [c[0] as usize, c[1] as usize, c[2] as usize];

        visit(to_coord(&cell), t0);
        let tie = TIE_EPS * e;
        loop {
            let t = next[0].min(next[1]).min(next[2]);
            if !(t <= t1) {
                break;
            }
            let t = t.max(t0);
            let mut tied = [0usize; 3];
            let mut m = 0;
            for a in 0..3 {
                if next[a] <= t + tie {
                    tied[m] = a;
                    m += 1;
                }
            }
            let tied = &tied[..m];
            if m > 1 {
                // edge/corner crossing: every voxel sharing it is touched
                for size in 1..m as u32 {
                    for s in 1u32..(1 << m) - 1 {
                        if s.count_ones() != size {
                            continue;
                        }
                        let mut c = cell;
                        for (bit, &a) in tied.iter().enumerate() {
                            if s & (1 << bit) != 0 {
                                c[a] += step[a];
                            }
                        }
                        if in_range(&c) {
                            visit(to_coord(&c), t);
                        }
                    }
                }
            }
            for &a in tied {
                cell[a] += step[a];
            }
            if !in_range(&cell) {
                break;
            }
            visit(to_coord(&cell), t);
            for &a in tied {
                next[a] = boundary(a, &cell, &step);
            }
        }
    }
}
