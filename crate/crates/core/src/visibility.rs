//! Occluder-free visibility of the ROI and the per-ray voxel lists it is
//! derived from.

use std::ops::Range;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;

use crate::grid::{Ray, VoxelCoord, VoxelGrid};
use crate::sensors::RayBundle;

/// Per-voxel flag `f(V) = 1` when some sensor ray passes through the voxel.
/// Only active voxels are ever flagged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityField {
    bits: FixedBitSet,
    dims: [usize; 3],
}

impl VisibilityField {
    pub fn empty(grid: &VoxelGrid) -> Self {
        VisibilityField {
            bits: FixedBitSet::with_capacity(grid.len()),
            dims: grid.dims(),
        }
    }

    /// Flags every listed voxel that belongs to the ROI.
    pub fn mark_visible(&mut self, grid: &VoxelGrid, voxels: &[VoxelCoord]) {
        for &c in voxels {
            let idx = grid.index(c);
            if grid.is_active(idx) {
                self.bits.insert(idx);
            }
        }
    }

    pub fn insert_index(&mut self, grid: &VoxelGrid, index: usize) {
        if grid.is_active(index) {
            self.bits.insert(index);
        }
    }

    pub fn union_with(&mut self, other: &VisibilityField) {
        self.bits.union_with(&other.bits);
    }

    pub fn is_visible(&self, index: usize) -> bool {
        self.bits.contains(index)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    /// Whether any voxel of column `(i, j)` is flagged.
    pub fn column_visible(&self, i: usize, j: usize) -> bool {
        let [nx, ny, nz] = self.dims;
        (0..nz).any(|k| self.bits.contains(i + nx * (j + ny * k)))
    }
}

/// Active voxels touched by each ray, in traversal order, stored back to back.
#[derive(Debug, Clone)]
pub struct RayCache {
    rays: Vec<Ray>,
    offsets: Vec<usize>,
    voxels: Vec<u32>,
    /// Largest entry parameter over each ray's voxels.
    reach: Vec<f64>,
    sensors: Vec<(String, Range<usize>)>,
}

impl RayCache {
    /// Traverses every ray of every bundle. Bundles keep their order; rays
    /// are traversed in parallel.
    pub fn build(grid: &VoxelGrid, bundles: &[RayBundle]) -> Self {
        assert!(grid.len() <= u32::MAX as usize, "grid too large for u32 voxel ids");
        let mut rays = Vec::new();
        let mut offsets = vec![0];
        let mut voxels = Vec::new();
        let mut reach = Vec::new();
        let mut sensors = Vec::with_capacity(bundles.len());
        for bundle in bundles {
            let start = rays.len();
            let lists: Vec<(Vec<u32>, f64)> = bundle
                .rays
                .par_iter()
                .map(|ray| {
                    let mut out = Vec::new();
                    let mut far = 0.0f64;
                    grid.walk(ray, |c, _| {
                        let idx = grid.index(c);
                        if grid.is_active(idx) {
                            out.push(idx as u32);
                            far = far.max(grid.entry_t(ray, c));
                        }
                    });
                    (out, far)
                })
                .collect();
            for (ray, (list, far)) in bundle.rays.iter().zip(lists) {
                rays.push(*ray);
                voxels.extend_from_slice(&list);
                offsets.push(voxels.len());
                reach.push(far);
            }
            sensors.push((bundle.sensor_id.clone(), start..rays.len()));
        }
        RayCache {
            rays,
            offsets,
            voxels,
            reach,
            sensors,
        }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn ray(&self, r: usize) -> &Ray {
        &self.rays[r]
    }

    pub fn voxels(&self, r: usize) -> &[u32] {
        &self.voxels[self.offsets[r]..self.offsets[r + 1]]
    }

    /// Largest entry parameter among the ray's voxels; an occluder met
    /// beyond it hides nothing the ray reaches.
    pub fn reach(&self, r: usize) -> f64 {
        self.reach[r]
    }

    /// Sensor ids with the range of ray numbers each one owns.
    pub fn sensors(&self) -> &[(String, Range<usize>)] {
        &self.sensors
    }

    pub fn visibility(&self, grid: &VoxelGrid) -> VisibilityField {
        self.visibility_of(grid, 0..self.rays.len())
    }

    pub fn visibility_of(&self, grid: &VoxelGrid, rays: Range<usize>) -> VisibilityField {
        let mut field = VisibilityField::empty(grid);
        for r in rays {
            for &v in self.voxels(r) {
                field.bits.insert(v as usize);
            }
        }
        field
    }

    /// Visibility attributed to each sensor, in declaration order.
    pub fn per_sensor(&self, grid: &VoxelGrid) -> Vec<(String, VisibilityField)> {
        self.sensors
            .iter()
            .map(|(id, range)| (id.clone(), self.visibility_of(grid, range.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_roi, RoiSpec};
    use crate::scene::VectorMap;
    use nalgebra::{Point2, Point3, Vector3};

    fn grid() -> VoxelGrid {
        let map = VectorMap::new(Point2::origin(), 0.0, vec![], vec![], None).unwrap();
        let spec = RoiSpec {
            center: Point2::origin(),
            radius: 2.0,
            ground: 0.0,
            height: 1.0,
            voxel_edge: 0.5,
            core_radius: 1.0,
        };
        build_roi(&map, &spec).unwrap()
    }

    #[test]
    fn marking_is_idempotent_and_commutative() {
        let g = grid();
        let a = [[0, 0, 0], [3, 3, 1], [4, 4, 0]];
        let b = [[3, 3, 1], [5, 2, 0]];
        let mut f = VisibilityField::empty(&g);
        f.mark_visible(&g, &[]);
        assert!(f.is_empty());
        // corner voxel is outside the cylinder
        f.mark_visible(&g, &a);
        let once = f.clone();
        f.mark_visible(&g, &a);
        assert_eq!(f, once);
        assert!(!f.is_visible(g.index([0, 0, 0])));
        assert_eq!(f.count(), 2);

        let mut ab = VisibilityField::empty(&g);
        ab.mark_visible(&g, &a);
        ab.mark_visible(&g, &b);
        let mut ba = VisibilityField::empty(&g);
        ba.mark_visible(&g, &b);
        ba.mark_visible(&g, &a);
        assert_eq!(ab, ba);
        assert!(ab.column_visible(5, 2));
        assert!(!ab.column_visible(5, 3));
    }

    #[test]
    fn cache_keeps_active_voxels_in_order() {
        let g = grid();
        let ray = Ray::new(Point3::new(-2.0, 0.1, 0.25), Vector3::x(), 4.0).unwrap();
        let bundle = RayBundle {
            sensor_id: "s".into(),
            kind: "lidar",
            rays: vec![ray],
        };
        let cache = RayCache::build(&g, &[bundle]);
        let want: Vec<u32> = g
            .traverse_ray(&ray)
            .into_iter()
            .map(|c| g.index(c))
            .filter(|&i| g.is_active(i))
            .map(|i| i as u32)
            .collect();
        assert_eq!(cache.voxels(0), want.as_slice());
        assert_eq!(cache.visibility(&g).count(), want.len());
        assert_eq!(cache.per_sensor(&g)[0].1, cache.visibility(&g));
    }
}
