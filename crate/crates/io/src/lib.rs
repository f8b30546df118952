//! File formats for infraplace: map and scenario documents (TOML), reports
//! (JSON and CSV) and heatmaps (binary PGM).

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod heatmap;
pub mod map;
pub mod report;
pub mod scenario;
pub mod sweep;

pub use heatmap::{HeatmapLayer, HeatmapSlice, HeatmapSource};
pub use map::{load_map, load_map_str, MapDoc};
pub use report::{compare_csv, parse_report_json, report_csv, report_json, sweep_csv, ReportFormat};
pub use scenario::{load_scenario, parse_scenario, MapRef, Scenario, ScenarioDoc};

/// Version written to and required in every document.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("reading {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        source: Box<DocError>,
    },
}

impl DocError {
    pub fn invalid(field: &str, message: impl std::fmt::Display) -> Self {
        DocError::Validation(format!("{field}: {message}"))
    }

    pub fn in_file(self, path: &Path) -> Self {
        DocError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// True for malformed or invalid documents, false for I/O trouble.
    pub fn is_validation(&self) -> bool {
        match self {
            DocError::Parse(_) | DocError::Validation(_) => true,
            DocError::InFile { source, .. } => source.is_validation(),
            DocError::NotFound(_) | DocError::Io { .. } => false,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, DocError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DocError::NotFound(path.to_path_buf())
        } else {
            DocError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Kind of document a TOML file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    Map,
    Scenario,
}

/// Scenarios reference a map; maps do not.
pub fn sniff_kind(text: &str) -> Result<DocKind, DocError> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| DocError::Parse(e.to_string()))?;
    Ok(if value.contains_key("map") {
        DocKind::Scenario
    } else {
        DocKind::Map
    })
}
