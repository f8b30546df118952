//! Brute-force reference implementations. Nothing here calls the grid walk,
//! the ray cache, the box slab test or the metric functions; these are the
//! slow, obvious versions the fast paths are checked against.
#![allow(dead_code)]

use std::collections::BTreeSet;

use infraplace_core::metrics::{coverage, information_gain, occluded_sets, occlusion};
use infraplace_core::sensors::RayBundle;
use infraplace_core::traffic::occupancy_probabilities;
use infraplace_core::{
    build_roi, MetricWeights, OrientedBox, Ray, RayCache, Region, RegionKind, RoiSpec, TrafficConfig,
    TrafficSequence, VectorMap, VehicleDims, VoxelGrid,
};
use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every lattice voxel as (index, lower corner), with the lattice read off
/// the grid's public geometry.
pub fn lattice(grid: &VoxelGrid) -> Vec<(usize, Point3<f64>)> {
    let [nx, ny, nz] = grid.dims();
    let e = grid.voxel_edge();
    let o = grid.origin();
    let mut out = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                out.push((idx, o + Vector3::new(i as f64, j as f64, k as f64) * e));
            }
        }
    }
    out
}

/// Active set by direct membership: column center inside the ROI disc and
/// inside some region.
/// Every voxel whose column center lies in the disc and whose center is
/// within the height band; regions only label columns.
pub fn active_set(grid: &VoxelGrid, spec: &RoiSpec) -> Vec<bool> {
    let e = grid.voxel_edge();
    let mut active = vec![false; grid.len()];
    for (idx, lo) in lattice(grid) {
        let cx = lo.x + e / 2.0;
        let cy = lo.y + e / 2.0;
        let inside = ((cx - spec.center.x).powi(2) + (cy - spec.center.y).powi(2)).sqrt() <= spec.radius;
        let cz = lo.z + e / 2.0;
        active[idx] = inside && cz >= spec.ground && cz <= spec.ground + spec.height;
    }
    active
}

fn region_of(grid: &VoxelGrid, map: &VectorMap, lo: Point3<f64>) -> Option<RegionKind> {
    let e = grid.voxel_edge();
    map.region_at(Point2::new(lo.x + e / 2.0, lo.y + e / 2.0))
}

/// Parameter interval where the closed segment meets the closed box
/// `[lo, hi]`, by clipping against each pair of planes.
pub fn segment_aabb(ray: &Ray, lo: Point3<f64>, hi: Point3<f64>) -> Option<(f64, f64)> {
    let o = ray.origin();
    let d = ray.direction();
    let (mut a, mut b) = (0.0_f64, ray.t_max());
    for axis in 0..3 {
        if d[axis] == 0.0 {
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((lo[axis] - o[axis]) / d[axis], (hi[axis] - o[axis]) / d[axis]);
        a = a.max(t0.min(t1));
        b = b.min(t0.max(t1));
    }
    (a <= b).then_some((a, b))
}

/// Active voxels the segment touches, with entry parameters.
pub fn exact_ray_voxels(grid: &VoxelGrid, active: &[bool], ray: &Ray) -> Vec<(usize, f64)> {
    let e = grid.voxel_edge();
    lattice(grid)
        .into_iter()
        .filter(|(idx, _)| active[*idx])
        .filter_map(|(idx, lo)| segment_aabb(ray, lo, lo + Vector3::repeat(e)).map(|(t, _)| (idx, t)))
        .collect()
}

/// Lattice voxels holding the sample points `t = 0, s, 2s, ..., t_max`.
/// Points on a shared face are credited to every voxel that owns them.
pub fn sampled_ray_voxels(grid: &VoxelGrid, ray: &Ray, step: f64) -> BTreeSet<usize> {
    let [nx, ny, nz] = grid.dims();
    let n = [nx, ny, nz];
    let e = grid.voxel_edge();
    let o = grid.origin();
    let mut out = BTreeSet::new();
    let count = (ray.t_max() / step).floor() as usize;
    let ts = (0..=count).map(|k| k as f64 * step).chain(std::iter::once(ray.t_max()));
    for t in ts {
        let p = ray.at(t);
        let mut choices: [Vec<usize>; 3] = [vec![], vec![], vec![]];
        for a in 0..3 {
            let u = (p[a] - o[a]) / e;
            let f = u.floor();
            for c in [f - 1.0, f] {
                // the point belongs to cell c when c <= u <= c+1
                if c >= 0.0 && (c as usize) < n[a] && c <= u && u <= c + 1.0 {
                    choices[a].push(c as usize);
                }
            }
        }
        for &i in &choices[0] {
            for &j in &choices[1] {
                for &k in &choices[2] {
                    out.insert(i + nx * (j + ny * k));
                }
            }
        }
    }
    out
}

/// Lattice voxel holding point `p` by flooring, if inside.
pub fn voxel_of(grid: &VoxelGrid, p: Point3<f64>) -> Option<[usize; 3]> {
    let dims = grid.dims();
    let e = grid.voxel_edge();
    let o = grid.origin();
    let mut c = [0usize; 3];
    for a in 0..3 {
        let u = ((p[a] - o[a]) / e).floor();
        if u < 0.0 || u >= dims[a] as f64 {
            return None;
        }
        c[a] = u as usize;
    }
    Some(c)
}

/// The eight corners of a vehicle box.
pub fn box_corners(b: &OrientedBox) -> [Point3<f64>; 8] {
    let (s, c) = b.heading.sin_cos();
    let fwd = Vector3::new(c, s, 0.0) * (b.dims.length / 2.0);
    let side = Vector3::new(-s, c, 0.0) * (b.dims.width / 2.0);
    let up = Vector3::new(0.0, 0.0, b.dims.height);
    let mut out = [b.center; 8];
    let mut n = 0;
    for f in [-1.0, 1.0] {
        for g in [-1.0, 1.0] {
            for h in [0.0, 1.0] {
                out[n] = b.center + fwd * f + side * g + up * h;
                n += 1;
            }
        }
    }
    out
}

/// Closed containment via signed distances to the box's three axes.
pub fn box_contains(b: &OrientedBox, p: Point3<f64>) -> bool {
    let (s, c) = b.heading.sin_cos();
    let v = p - b.center;
    let along = v.x * c + v.y * s;
    let across = -v.x * s + v.y * c;
    along.abs() <= b.dims.length / 2.0 && across.abs() <= b.dims.width / 2.0 && v.z >= 0.0 && v.z <= b.dims.height
}

/// First contact of the segment with a box: 0 if the origin is inside,
/// otherwise the smallest face-plane crossing that lands on the face.
pub fn box_hit(b: &OrientedBox, ray: &Ray) -> Option<f64> {
    if box_contains(b, ray.origin()) {
        return Some(0.0);
    }
    let corners = box_corners(b);
    // faces as (corner, edge u, edge v)
    let faces = [
        (corners[0], corners[4] - corners[0], corners[2] - corners[0]), // bottom
        (corners[1], corners[5] - corners[1], corners[3] - corners[1]), // top
        (corners[0], corners[2] - corners[0], corners[1] - corners[0]), // rear
        (corners[4], corners[6] - corners[4], corners[5] - corners[4]), // front
        (corners[0], corners[4] - corners[0], corners[1] - corners[0]), // right
        (corners[2], corners[6] - corners[2], corners[3] - corners[2]), // left
    ];
    let mut best: Option<f64> = None;
    for (p0, u, v) in faces {
        let n = u.cross(&v);
        let denom = n.dot(&ray.direction());
        if denom.abs() < 1e-15 {
            continue;
        }
        let t = n.dot(&(p0 - ray.origin())) / denom;
        if !(0.0..=ray.t_max()).contains(&t) {
            continue;
        }
        let q = ray.at(t) - p0;
        let a = q.dot(&u) / u.norm_squared();
        let c = q.dot(&v) / v.norm_squared();
        let tol = 1e-12;
        if (-tol..=1.0 + tol).contains(&a) && (-tol..=1.0 + tol).contains(&c) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

pub fn first_hit(ray: &Ray, boxes: &[OrientedBox]) -> Option<f64> {
    boxes
        .iter()
        .filter_map(|b| box_hit(b, ray))
        .min_by(|a, b| a.total_cmp(b))
}

/// Parameter distance below which an entry and a hit count as the same crossing.
pub const TIE: f64 = 1e-9;

fn entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }
}

pub struct OracleMetrics {
    pub coverage: Option<f64>,
    pub ig: f64,
    pub occupancy: Vec<f64>,
    pub baseline: BTreeSet<usize>,
    pub occluded: Vec<Vec<usize>>,
    pub occluded_surely: Vec<Vec<usize>>,
    pub occluded_possibly: Vec<Vec<usize>>,
    pub o: Option<f64>,
    /// Lowest and highest O the tied voxels allow.
    pub o_range: Option<(f64, f64)>,
}

/// Every metric by enumeration over voxels, rays and boxes.
pub fn metrics(
    grid: &VoxelGrid,
    map: &VectorMap,
    spec: &RoiSpec,
    rays: &[Ray],
    frames: &[Vec<OrientedBox>],
    weights: &MetricWeights,
) -> OracleMetrics {
    let active = active_set(grid, spec);
    let cells = lattice(grid);
    let e = grid.voxel_edge();
    let per_ray: Vec<Vec<(usize, f64)>> = rays.iter().map(|r| exact_ray_voxels(grid, &active, r)).collect();
    let baseline: BTreeSet<usize> = per_ray.iter().flatten().map(|&(v, _)| v).collect();

    let (mut seen_w, mut total_w) = (0.0, 0.0);
    for &(idx, lo) in &cells {
        if !active[idx] {
            continue;
        }
        let w = region_of(grid, map, lo).map_or(0.0, |k| weights.regions.get(k));
        total_w += w;
        if baseline.contains(&idx) {
            seen_w += w;
        }
    }

    let mut occupancy = vec![0.0; grid.len()];
    if !frames.is_empty() {
        for &(idx, lo) in &cells {
            if !active[idx] {
                continue;
            }
            let center = lo + Vector3::repeat(e / 2.0);
            let hits = frames.iter().filter(|f| f.iter().any(|b| box_contains(b, center))).count();
            occupancy[idx] = hits as f64 / frames.len() as f64;
        }
    }
    let (mut h_all, mut h_left) = (0.0, 0.0);
    for &(idx, _) in &cells {
        if active[idx] {
            let h = entropy(occupancy[idx]);
            h_all += h;
            if !baseline.contains(&idx) {
                h_left += h;
            }
        }
    }
    let ig = if h_all > 0.0 { 1.0 - h_left / h_all } else { 0.0 };

    // Entry and hit parameters closer than TIE come from two different
    // float computations of the same crossing; such voxels may go either way.
    let occluded_with = |slack: f64| -> Vec<Vec<usize>> {
        frames
            .iter()
            .map(|boxes| {
                let mut reached = BTreeSet::new();
                for (ray, voxels) in rays.iter().zip(&per_ray) {
                    match first_hit(ray, boxes) {
                        None => reached.extend(voxels.iter().map(|&(v, _)| v)),
                        Some(t) if t > 0.0 => {
                            reached.extend(voxels.iter().filter(|&&(_, te)| te <= t + slack).map(|&(v, _)| v))
                        }
                        Some(_) => {}
                    }
                }
                baseline.difference(&reached).copied().collect()
            })
            .collect()
    };
    let occluded = occluded_with(0.0);
    let occluded_surely = occluded_with(TIE);
    let occluded_possibly = occluded_with(-TIE);
    let score = |sets: &[Vec<usize>]| {
        (!baseline.is_empty() && !frames.is_empty()).then(|| {
            sets.iter()
                .map(|s| 1.0 - s.len() as f64 / baseline.len() as f64)
                .sum::<f64>()
                / frames.len() as f64
        })
    };
    let o = score(&occluded);
    let o_range = score(&occluded_possibly).zip(score(&occluded_surely));

    OracleMetrics {
        coverage: (total_w > 0.0).then(|| seen_w / total_w),
        ig,
        occupancy,
        baseline,
        occluded,
        occluded_surely,
        occluded_possibly,
        o,
        o_range,
    }
}

/// A small random scene: rectangles of random kinds on a lattice of at
/// most 16³, rays from in and around it, boxes standing on the ground.
pub struct RandomScene {
    pub map: VectorMap,
    pub spec: RoiSpec,
    pub rays: Vec<Ray>,
    pub frames: Vec<Vec<OrientedBox>>,
}

pub fn random_scene(seed: u64) -> RandomScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = [0.5, 1.0][rng.gen_range(0..2)];
    let n = rng.gen_range(6..=16) as f64;
    let radius = n * e / 2.0;
    let nz = rng.gen_range(2..=16) as f64;
    let center = Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));

    let mut regions = Vec::new();
    for _ in 0..rng.gen_range(1..=5) {
        let kind = RegionKind::ALL[rng.gen_range(0..5)];
        let x0 = center.x + rng.gen_range(-radius..radius);
        let y0 = center.y + rng.gen_range(-radius..radius);
        let (w, h) = (rng.gen_range(1.0..radius * 1.5), rng.gen_range(1.0..radius * 1.5));
        let poly = vec![
            Point2::new(x0, y0),
            Point2::new(x0 + w, y0),
            Point2::new(x0 + w, y0 + h),
            Point2::new(x0, y0 + h),
        ];
        regions.push(Region::new(kind, poly, None));
    }
    let map = VectorMap::new(center, 0.0, regions, vec![], None).unwrap();
    let spec = RoiSpec {
        center,
        radius,
        ground: 0.0,
        height: nz * e,
        voxel_edge: e,
        core_radius: radius / 2.0,
    };

    let extent = radius * 1.3;
    let mut rays = Vec::new();
    for _ in 0..rng.gen_range(1..=100) {
        let o = Point3::new(
            center.x + rng.gen_range(-extent..extent),
            center.y + rng.gen_range(-extent..extent),
            rng.gen_range(-0.5..nz * e + 3.0),
        );
        let d = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if d.norm() < 1e-3 {
            continue;
        }
        rays.push(Ray::new(o, d, rng.gen_range(0.5..4.0 * radius)).unwrap());
    }

    let mut frames = Vec::new();
    for _ in 0..rng.gen_range(1..=8) {
        let boxes = (0..rng.gen_range(0..=5))
            .map(|_| OrientedBox {
                center: Point3::new(
                    center.x + rng.gen_range(-radius..radius),
                    center.y + rng.gen_range(-radius..radius),
                    0.0,
                ),
                heading: rng.gen_range(-3.2..3.2),
                dims: VehicleDims {
                    length: rng.gen_range(0.5..6.0),
                    width: rng.gen_range(0.5..3.0),
                    height: rng.gen_range(0.5..nz * e),
                },
            })
            .collect();
        frames.push(boxes);
    }
    RandomScene { map, spec, rays, frames }
}

/// What the fast path computed for a random scene.
pub struct FastMetrics {
    pub grid: VoxelGrid,
    pub coverage: Option<f64>,
    pub ig: f64,
    pub occluded: Vec<Vec<usize>>,
    pub o: Option<f64>,
    pub visible: BTreeSet<usize>,
}

pub fn fast_metrics(scene: &RandomScene, weights: &MetricWeights) -> FastMetrics {
    let mut grid = build_roi(&scene.map, &scene.spec).unwrap();
    let seq = TrafficSequence {
        frames: scene.frames.clone(),
        config: TrafficConfig::default(),
        seeded_waypoints: 0,
    };
    grid.set_occupancy(occupancy_probabilities(&grid, &seq)).unwrap();
    let bundle = RayBundle {
        sensor_id: "s".into(),
        kind: "lidar",
        rays: scene.rays.clone(),
    };
    let cache = RayCache::build(&grid, &[bundle]);
    let vis = cache.visibility(&grid);
    let occluded = occluded_sets(&grid, &cache, &seq)
        .into_iter()
        .map(|s| s.into_iter().map(|v| v as usize).collect())
        .collect();
    FastMetrics {
        coverage: coverage(&grid, &vis, weights).ok(),
        ig: information_gain(&grid, &vis).ig,
        o: occlusion(&grid, &cache, &seq).ok().map(|o| o.o),
        occluded,
        visible: vis.ones().collect(),
        grid,
    }
}

/// Compares fast and brute-force metrics on one random scene.
pub fn check_equivalence(seed: u64) -> Result<(), String> {
    let scene = random_scene(seed);
    let weights = MetricWeights::default();
    let fast = fast_metrics(&scene, &weights);
    let slow = metrics(&fast.grid, &scene.map, &scene.spec, &scene.rays, &scene.frames, &weights);

    if fast.visible != slow.baseline {
        return Err(format!(
            "seed {seed}: visible sets differ ({} vs {})",
            fast.visible.len(),
            slow.baseline.len()
        ));
    }
    for (a, b) in fast.grid.occupancy().iter().zip(&slow.occupancy) {
        if a != b {
            return Err(format!("seed {seed}: occupancy {a} vs {b}"));
        }
    }
    match (fast.coverage, slow.coverage) {
        (Some(a), Some(b)) if (a - b).abs() <= 1e-9 => {}
        (None, None) => {}
        (a, b) => return Err(format!("seed {seed}: C {a:?} vs {b:?}")),
    }
    if (fast.ig - slow.ig).abs() > 1e-9 {
        return Err(format!("seed {seed}: IG {} vs {}", fast.ig, slow.ig));
    }
    for (k, a) in fast.occluded.iter().enumerate() {
        let a: BTreeSet<usize> = a.iter().copied().collect();
        let sure: BTreeSet<usize> = slow.occluded_surely[k].iter().copied().collect();
        let maybe: BTreeSet<usize> = slow.occluded_possibly[k].iter().copied().collect();
        if !sure.is_subset(&a) || !a.is_subset(&maybe) {
            return Err(format!(
                "seed {seed}: frame {k} occluded sets differ ({} vs {}..{})",
                a.len(),
                sure.len(),
                maybe.len()
            ));
        }
    }
    match (fast.o, slow.o_range) {
        (Some(a), Some((lo, hi))) if a >= lo - 1e-12 && a <= hi + 1e-12 => {}
        (None, None) => {}
        (a, b) => return Err(format!("seed {seed}: O {a:?} vs {b:?}")),
    }
    // point sampling can only miss voxels, never add them
    let active = active_set(&fast.grid, &scene.spec);
    for ray in &scene.rays {
        let sampled = sampled_ray_voxels(&fast.grid, ray, fast.grid.voxel_edge() / 100.0);
        if let Some(v) = sampled.iter().find(|&&v| active[v] && !fast.visible.contains(&v)) {
            return Err(format!("seed {seed}: sampled voxel {v} not visible"));
        }
    }
    Ok(())
}

/// A 16³ lattice with unit voxels whose every voxel is active.
pub fn cube_grid() -> (VectorMap, VoxelGrid) {
    let square = vec![
        Point2::new(-1.0, -1.0),
        Point2::new(17.0, -1.0),
        Point2::new(17.0, 17.0),
        Point2::new(-1.0, 17.0),
    ];
    let map = VectorMap::new(
        Point2::new(8.0, 8.0),
        0.0,
        vec![Region::new(RegionKind::Driveway, square, None)],
        vec![],
        None,
    )
    .unwrap();
    let spec = RoiSpec {
        center: Point2::new(8.0, 8.0),
        radius: 8.0,
        ground: 0.0,
        height: 16.0,
        voxel_edge: 1.0,
        core_radius: 4.0,
    };
    let grid = build_roi(&map, &spec).unwrap();
    (map, grid)
}

pub fn random_cube_ray(rng: &mut impl Rng) -> Ray {
    loop {
        let o = Point3::new(rng.gen_range(-4.0..20.0), rng.gen_range(-4.0..20.0), rng.gen_range(-4.0..20.0));
        let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if d.norm() > 1e-3 {
            return Ray::new(o, d, rng.gen_range(0.1..40.0)).unwrap();
        }
    }
}

/// Superset of sampling, 26-connected chain without repeats, endpoints
/// included.
pub fn check_traversal(grid: &VoxelGrid, ray: &Ray) -> Result<(), String> {
    let [nx, ny, _] = grid.dims();
    let path = grid.traverse_ray(ray);
    let ids: Vec<usize> = path.iter().map(|c| c[0] + nx * (c[1] + ny * c[2])).collect();
    let unique: BTreeSet<usize> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(format!("repeated voxel in {ray:?}"));
    }
    let sampled = sampled_ray_voxels(grid, ray, grid.voxel_edge() / 100.0);
    if let Some(v) = sampled.difference(&unique).next() {
        return Err(format!("sampled voxel {v} missing for {ray:?}"));
    }
    for w in path.windows(2) {
        let gap = (0..3).map(|a| w[0][a].abs_diff(w[1][a])).max().unwrap();
        if gap > 1 {
            return Err(format!("chain broken between {:?} and {:?} for {ray:?}", w[0], w[1]));
        }
    }
    for p in [ray.origin(), ray.at(ray.t_max())] {
        if let Some(c) = voxel_of(grid, p) {
            if !path.contains(&c) {
                return Err(format!("endpoint voxel {c:?} missing for {ray:?}"));
            }
        }
    }
    Ok(())
}
