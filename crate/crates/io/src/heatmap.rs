//! Bird's-eye rasters of per-voxel fields, written as binary PGM.
//!
//! Pixel (col, row) shows column (i, j) with `col = i` and `row = ny-1-j`,
//! so north is up. Inactive voxels contribute nothing and render black.

use infraplace_core::pipeline::Evaluation;
use infraplace_core::VoxelGrid;
use serde::{Deserialize, Serialize};

use crate::DocError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    /// 1 where the placement sees the voxel.
    Visibility,
    /// Fraction of frames the voxel is inside a vehicle.
    Occupancy,
    /// Fraction of frames the voxel is hidden behind traffic.
    OcclusionFrequency,
}

impl HeatmapSource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "visibility" => Some(Self::Visibility),
            "occupancy" => Some(Self::Occupancy),
            "occlusion" | "occlusion_frequency" | "occlusion-frequency" => Some(Self::OcclusionFrequency),
            _ => None,
        }
    }
}

/// Which height layer to draw: one voxel layer, or the maximum over the
/// column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapLayer {
    Index(usize),
    Max,
}

impl HeatmapLayer {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "max" {
            Some(Self::Max)
        } else {
            s.parse().ok().map(Self::Index)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSlice {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first, values in [0, 1].
    pub values: Vec<f64>,
}

impl HeatmapSlice {
    pub fn from_field(
        grid: &VoxelGrid,
        layer: HeatmapLayer,
        value: impl Fn(usize) -> f64,
    ) -> Result<Self, DocError> {
        let [nx, ny, nz] = grid.dims();
        let layers = match layer {
            HeatmapLayer::Index(k) if k >= nz => {
                return Err(DocError::invalid("layer", format!("{k} out of range (grid has {nz} layers)")))
            }
            HeatmapLayer::Index(k) => k..k + 1,
            HeatmapLayer::Max => 0..nz,
        };
        let mut values = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let mut v: f64 = 0.0;
                for k in layers.clone() {
                    let idx = grid.index([i, j, k]);
                    if grid.is_active(idx) {
                        v = v.max(value(idx));
                    }
                }
                values[(ny - 1 - j) * nx + i] = v.clamp(0.0, 1.0);
            }
        }
        Ok(HeatmapSlice {
            width: nx,
            height: ny,
            values,
        })
    }

    pub fn from_evaluation(
        grid: &VoxelGrid,
        evaluation: &Evaluation,
        source: HeatmapSource,
        layer: HeatmapLayer,
    ) -> Result<Self, DocError> {
        match source {
            HeatmapSource::Visibility => Self::from_field(grid, layer, |i| {
                if evaluation.visibility.is_visible(i) {
                    1.0
                } else {
                    0.0
                }
            }),
            HeatmapSource::Occupancy => Self::from_field(grid, layer, |i| grid.occupancy()[i]),
            HeatmapSource::OcclusionFrequency => {
                Self::from_field(grid, layer, |i| evaluation.occlusion_frequency.get(i).copied().unwrap_or(0.0))
            }
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (v * 255.0).round() as u8));
        out
    }
}

/// Reads back a binary PGM with maxval 255 as (width, height, bytes).
pub fn parse_pgm(data: &[u8]) -> Result<(usize, usize, Vec<u8>), DocError> {
    let bad = |m: &str| DocError::Parse(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("header not ascii"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("maxval must be 255"));
    }
    let body = &data[pos + 1..];
    if body.len() != w * h {
        return Err(bad(&format!("expected {} bytes, got {}", w * h, body.len())));
    }
    Ok((w, h, body.to_vec()))
}
