//! Coverage, occlusion, information gain and their fused score.

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::VoxelGrid;
use crate::scene::RegionKind;
use crate::traffic::{FrameIndex, OrientedBox, TrafficSequence};
use crate::visibility::{RayCache, VisibilityField};

const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Bucket size for the per-frame occluder index, meters.
const FRAME_CELL: f64 = 8.0;
/// Frames processed per parallel batch; bounds peak memory.
const FRAME_BATCH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no active voxel carries region weight; coverage is undefined")]
    DegenerateMap,
    #[error("placement sees no voxel; occlusion is undefined")]
    DegeneratePlacement,
    #[error("fusion weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("{0} must be finite and ≥0")]
    NegativeWeight(String),
}

/// Coverage weight of each region kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionWeights {
    pub driveway: f64,
    pub junction: f64,
    pub crosswalk: f64,
    pub sidewalk: f64,
    pub shoulder: f64,
}

impl Default for RegionWeights {
    fn default() -> Self {
        RegionWeights {
            driveway: 0.22,
            junction: 0.25,
            crosswalk: 0.23,
            sidewalk: 0.17,
            shoulder: 0.13,
        }
    }
}

impl RegionWeights {
    pub fn get(&self, kind: RegionKind) -> f64 {
        match kind {
            RegionKind::Driveway => self.driveway,
            RegionKind::Junction => self.junction,
            RegionKind::Crosswalk => self.crosswalk,
            RegionKind::Sidewalk => self.sidewalk,
            RegionKind::Shoulder => self.shoulder,
        }
    }

    pub fn set(&mut self, kind: RegionKind, w: f64) {
        match kind {
            RegionKind::Driveway => self.driveway = w,
            RegionKind::Junction => self.junction = w,
            RegionKind::Crosswalk => self.crosswalk = w,
            RegionKind::Sidewalk => self.sidewalk = w,
            RegionKind::Shoulder => self.shoulder = w,
        }
    }
}

/// Weights of coverage, occlusion and information gain in the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub coverage: f64,
    pub occlusion: f64,
    pub information_gain: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            coverage: 0.3,
            occlusion: 0.5,
            information_gain: 0.2,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, w) in [
            ("fusion.coverage", self.coverage),
            ("fusion.occlusion", self.occlusion),
            ("fusion.information_gain", self.information_gain),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(MetricsError::NegativeWeight(name.into()));
            }
        }
        let sum = self.coverage + self.occlusion + self.information_gain;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MetricsError::WeightSum(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub regions: RegionWeights,
    pub fusion: FusionWeights,
}

impl MetricWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for kind in RegionKind::ALL {
            let w = self.regions.get(kind);
            if !(w.is_finite() && w >= 0.0) {
                return Err(MetricsError::NegativeWeight(format!("regions.{kind}")));
            }
        }
        self.fusion.validate()
    }

    /// Weight of a voxel: its column's region weight, 0 outside all regions.
    pub fn voxel_weight(&self, grid: &VoxelGrid, index: usize) -> f64 {
        grid.region_kind(index).map_or(0.0, |k| self.regions.get(k))
    }
}

/// Weighted fraction of visible voxels among those passing `filter`.
/// `None` when no such voxel carries weight.
pub fn coverage_where(
    grid: &VoxelGrid,
    vis: &VisibilityField,
    weights: &MetricWeights,
    filter: impl Fn(usize) -> bool,
) -> Option<f64> {
    let mut seen = 0.0;
    let mut total = 0.0;
    for idx in grid.active_indices().filter(|&i| filter(i)) {
        let w = weights.voxel_weight(grid, idx);
        total += w;
        if vis.is_visible(idx) {
            seen += w;
        }
    }
    (total > 0.0).then(|| seen / total)
}

/// Region-weighted coverage `C = Σ w·f / Σ w` over the ROI.
pub fn coverage(
    grid: &VoxelGrid,
    vis: &VisibilityField,
    weights: &MetricWeights,
) -> Result<f64, MetricsError> {
    coverage_where(grid, vis, weights, |_| true).ok_or(MetricsError::DegenerateMap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCoverage {
    pub kind: RegionKind,
    pub voxels: usize,
    pub visible: usize,
    /// Visible fraction of the region's voxels; `None` when it has none.
    pub coverage: Option<f64>,
}

/// Unweighted visible fraction per region kind, in [`RegionKind::ALL`] order.
pub fn region_breakdown(grid: &VoxelGrid, vis: &VisibilityField) -> Vec<RegionCoverage> {
    let mut voxels = [0usize; 5];
    let mut visible = [0usize; 5];
    for idx in grid.active_indices() {
        if let Some(k) = grid.region_kind(idx) {
            voxels[k.index()] += 1;
            if vis.is_visible(idx) {
                visible[k.index()] += 1;
            }
        }
    }
    RegionKind::ALL
        .iter()
        .map(|&kind| {
            let (n, v) = (voxels[kind.index()], visible[kind.index()]);
            RegionCoverage {
                kind,
                voxels: n,
                visible: v,
                coverage: (n > 0).then(|| v as f64 / n as f64),
            }
        })
        .collect()
}

/// Binary entropy in nats, with `0 · ln 0 = 0`.
pub fn voxel_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationGain {
    pub ig: f64,
    /// Entropy of the whole ROI.
    pub total_entropy: f64,
    /// Entropy left in voxels the placement does not see.
    pub residual_entropy: f64,
    /// The ROI holds no uncertainty; `ig` is reported as 0.
    pub degenerate: bool,
}

/// Information gain over the voxels passing `filter`. Observed voxels are
/// resolved, so only unseen voxels keep their entropy.
pub fn information_gain_where(
    grid: &VoxelGrid,
    vis: &VisibilityField,
    filter: impl Fn(usize) -> bool,
) -> InformationGain {
    let p = grid.occupancy();
    let mut total = 0.0;
    let mut residual = 0.0;
    for idx in grid.active_indices().filter(|&i| filter(i)) {
        let h = voxel_entropy(p[idx]);
        total += h;
        if !vis.is_visible(idx) {
            residual += h;
        }
    }
    if total > 0.0 {
        InformationGain {
            ig: (1.0 - residual / total).clamp(0.0, 1.0),
            total_entropy: total,
            residual_entropy: residual,
            degenerate: false,
        }
    } else {
        InformationGain {
            ig: 0.0,
            total_entropy: 0.0,
            residual_entropy: 0.0,
            degenerate: true,
        }
    }
}

pub fn information_gain(grid: &VoxelGrid, vis: &VisibilityField) -> InformationGain {
    information_gain_where(grid, vis, |_| true)
}

/// `P_sm = w_c·C + w_o·O + w_ig·IG`.
pub fn fuse(c: f64, o: f64, ig: f64, weights: &FusionWeights) -> Result<f64, MetricsError> {
    weights.validate()?;
    Ok(weights.coverage * c + weights.occlusion * o + weights.information_gain * ig)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameOcclusion {
    /// Baseline-visible voxels no truncated ray reaches in this frame.
    pub occluded: usize,
    pub occluded_core: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    /// Frame mean of `1 − |V_occ| / |V_orig|`; higher means less occlusion.
    pub o: f64,
    /// Same, restricted to the core region; `None` when the placement sees
    /// nothing there.
    pub o_core: Option<f64>,
    pub baseline: usize,
    pub baseline_core: usize,
    pub frames: Vec<FrameOcclusion>,
    /// Number of frames in which each voxel was occluded.
    pub frequency: Vec<u32>,
}

/// Occluder-free visibility counts: how many rays reach each voxel.
fn ray_counts(grid: &VoxelGrid, cache: &RayCache) -> Vec<u32> {
    let mut counts = vec![0u32; grid.len()];
    for r in 0..cache.len() {
        for &v in cache.voxels(r) {
            counts[v as usize] += 1;
        }
    }
    counts
}

/// Voxels that lose every ray in this frame, ascending.
///
/// A ray blocked at `t*` still reaches the voxels it enters at or before
/// `t*`; a ray starting inside a box reaches nothing.
fn frame_occluded(grid: &VoxelGrid, cache: &RayCache, base: &[u32], boxes: &[OrientedBox]) -> Vec<u32> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let index = FrameIndex::new(boxes, FRAME_CELL);
    let mut counts = base.to_vec();
    let mut lost = Vec::new();
    let drop = |v: u32, counts: &mut [u32], lost: &mut Vec<u32>| {
        let c = &mut counts[v as usize];
        *c -= 1;
        if *c == 0 {
            lost.push(v);
        }
    };
    for r in 0..cache.len() {
        let voxels = cache.voxels(r);
        if voxels.is_empty() {
            continue;
        }
        let ray = cache.ray(r);
        let Some(t_hit) = index.first_hit(&ray.truncated(cache.reach(r))) else {
            continue;
        };
        if t_hit == 0.0 {
            for &v in voxels {
                drop(v, &mut counts, &mut lost);
            }
            continue;
        }
        for &v in voxels {
            if grid.entry_t(ray, grid.coord(v as usize)) > t_hit {
                drop(v, &mut counts, &mut lost);
            }
        }
    }
    lost.sort_unstable();
    lost
}

fn core_mask(grid: &VoxelGrid) -> FixedBitSet {
    let mut mask = FixedBitSet::with_capacity(grid.len());
    for idx in grid.active_indices() {
        if grid.in_core(idx) {
            mask.insert(idx);
        }
    }
    mask
}

/// Occluded voxel set of every frame, each ascending.
pub fn occluded_sets(grid: &VoxelGrid, cache: &RayCache, seq: &TrafficSequence) -> Vec<Vec<u32>> {
    let base = ray_counts(grid, cache);
    seq.frames
        .par_iter()
        .map(|boxes| frame_occluded(grid, cache, &base, boxes))
        .collect()
}

/// Occlusion score of the placement whose rays are cached in `cache`
/// against the traffic sequence. The baseline set is the occluder-free
/// visibility and does not change between frames.
pub fn occlusion(grid: &VoxelGrid, cache: &RayCache, seq: &TrafficSequence) -> Result<Occlusion, MetricsError> {
    let base = ray_counts(grid, cache);
    let core = core_mask(grid);
    let baseline = base.iter().filter(|&&c| c > 0).count();
    if baseline == 0 {
        return Err(MetricsError::DegeneratePlacement);
    }
    let baseline_core = base
        .iter()
        .enumerate()
        .filter(|&(i, &c)| c > 0 && core.contains(i))
        .count();

    let mut frequency = vec![0u32; grid.len()];
    let mut frames = Vec::with_capacity(seq.frames.len());
    for batch in seq.frames.chunks(FRAME_BATCH) {
        let lost: Vec<Vec<u32>> = batch
            .par_iter()
            .map(|boxes| frame_occluded(grid, cache, &base, boxes))
            .collect();
        for set in lost {
            for &v in &set {
                frequency[v as usize] += 1;
            }
            frames.push(FrameOcclusion {
                occluded: set.len(),
                occluded_core: set.iter().filter(|&&v| core.contains(v as usize)).count(),
            });
        }
    }
    let n = frames.len() as f64;
    let o = frames
        .iter()
        .map(|f| 1.0 - f.occluded as f64 / baseline as f64)
        .sum::<f64>()
        / n;
    let o_core = (baseline_core > 0).then(|| {
        frames
            .iter()
            .map(|f| 1.0 - f.occluded_core as f64 / baseline_core as f64)
            .sum::<f64>()
            / n
    });
    Ok(Occlusion {
        o,
        o_core,
        baseline,
        baseline_core,
        frames,
        frequency,
    })
}
