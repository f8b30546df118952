//! Map documents.
//!
//! ```toml
//! format_version = 1
//! center = [0.0, 0.0]
//! ground_elevation = 0.0
//! recommended_roi_radius = 60.0
//!
//! [[regions]]
//! kind = "junction"          # driveway | junction | crosswalk | sidewalk | shoulder
//! priority = 4               # optional; defaults by kind
//! polygon = [[-7.0, -7.0], [7.0, -7.0], [7.0, 7.0], [-7.0, 7.0]]
//!
//! [[lanes]]
//! id = "eb-1"
//! nominal_spacing = 12.5
//! waypoints = [[-100.0, -1.75, 0.0], [-87.5, -1.75, 0.0]]
//! ```

use std::path::Path;

use infraplace_core::{Lane, Region, RegionKind, VectorMap};
use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::{read_file, DocError, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDoc {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub center: [f64; 2],
    #[serde(default)]
    pub ground_elevation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_roi_radius: Option<f64>,
    #[serde(default)]
    pub regions: Vec<RegionDoc>,
    #[serde(default)]
    pub lanes: Vec<LaneDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub kind: RegionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i32>,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDoc {
    pub id: String,
    pub nominal_spacing: f64,
    pub waypoints: Vec<[f64; 3]>,
}

impl MapDoc {
    pub fn parse(text: &str) -> Result<Self, DocError> {
        let doc: MapDoc = toml::from_str(text).map_err(|e| DocError::Parse(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(DocError::invalid(
                "format_version",
                format!("unsupported version {} (expected {FORMAT_VERSION})", doc.format_version),
            ));
        }
        Ok(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("map documents always serialize")
    }

    /// Builds and validates the map.
    pub fn to_map(&self) -> Result<VectorMap, DocError> {
        let regions = self
            .regions
            .iter()
            .map(|r| {
                Region::new(
                    r.kind,
                    r.polygon.iter().map(|p| Point2::new(p[0], p[1])).collect(),
                    r.priority,
                )
            })
            .collect();
        let lanes = self
            .lanes
            .iter()
            .map(|l| Lane {
                id: l.id.clone(),
                waypoints: l.waypoints.iter().map(|w| Point3::new(w[0], w[1], w[2])).collect(),
                nominal_spacing: l.nominal_spacing,
            })
            .collect();
        VectorMap::new(
            Point2::new(self.center[0], self.center[1]),
            self.ground_elevation,
            regions,
            lanes,
            self.recommended_roi_radius,
        )
        .map_err(|e| DocError::Validation(e.to_string()))
    }
}

/// Parses and validates a map document.
pub fn load_map_str(text: &str) -> Result<(MapDoc, VectorMap), DocError> {
    let doc = MapDoc::parse(text)?;
    let map = doc.to_map()?;
    Ok((doc, map))
}

pub fn load_map(path: &Path) -> Result<(MapDoc, VectorMap), DocError> {
    load_map_str(&read_file(path)?).map_err(|e| e.in_file(path))
}
