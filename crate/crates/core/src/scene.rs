//! Intersection world model: typed ground regions, waypoint lanes and the
//! planar queries the metrics need over them.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum separation between consecutive lane waypoints, in meters.
pub const MIN_WAYPOINT_GAP: f64 = 1e-6;

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("regions[{region}]: polygon needs ≥3 vertices (got {vertices})")]
    PolygonTooSmall { region: usize, vertices: usize },
    #[error("regions[{region}]: polygon is not simple (edges {a} and {b} intersect)")]
    PolygonNotSimple { region: usize, a: usize, b: usize },
    #[error("{what}: coordinates must be finite")]
    NonFinite { what: String },
    #[error("lanes[{lane}] ({id}): lane needs ≥2 waypoints (got {count})")]
    LaneTooShort { lane: usize, id: String, count: usize },
    #[error("lanes[{lane}] ({id}): waypoints {index} and {next} coincide", next = index + 1)]
    CoincidentWaypoints { lane: usize, id: String, index: usize },
    #[error("lanes[{lane}] ({id}): nominal_spacing must be positive")]
    BadSpacing { lane: usize, id: String },
    #[error("duplicate lane id {0:?}")]
    DuplicateLaneId(String),
    #[error("heading undefined: waypoints coincide in the xy-plane")]
    DegenerateHeading,
}

/// The five ground categories that carry coverage weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Driveway,
    Junction,
    Crosswalk,
    Sidewalk,
    Shoulder,
}

impl RegionKind {
    pub const ALL: [RegionKind; 5] = [
        RegionKind::Driveway,
        RegionKind::Junction,
        RegionKind::Crosswalk,
        RegionKind::Sidewalk,
        RegionKind::Shoulder,
    ];

    /// Overlap-resolution rank used when a document omits `priority`:
    /// crosswalk > junction > driveway > sidewalk > shoulder.
    pub fn default_priority(self) -> i32 {
        match self {
            RegionKind::Crosswalk => 5,
            RegionKind::Junction => 4,
            RegionKind::Driveway => 3,
            RegionKind::Sidewalk => 2,
            RegionKind::Shoulder => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Driveway => "driveway",
            RegionKind::Junction => "junction",
            RegionKind::Crosswalk => "crosswalk",
            RegionKind::Sidewalk => "sidewalk",
            RegionKind::Shoulder => "shoulder",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        RegionKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Dense index in `ALL` order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    kind: RegionKind,
    polygon: Vec<Point2<f64>>,
    priority: i32,
    bbox: (Point2<f64>, Point2<f64>),
}

impl Region {
    /// Builds a region without validating the polygon; `VectorMap::new`
    /// performs validation with the region's index for context.
    pub fn new(kind: RegionKind, polygon: Vec<Point2<f64>>, priority: Option<i32>) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &polygon {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        Region {
            kind,
            polygon,
            priority: priority.unwrap_or_else(|| kind.default_priority()),
            bbox: (lo, hi),
        }
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn polygon(&self) -> &[Point2<f64>] {
        &self.polygon
    }

    pub fn priority(&self) -> i32 {
        self.priority
    }

    /// Boundary-inclusive point-in-polygon test.
    pub fn contains(&self, p: Point2<f64>) -> bool {
        let (lo, hi) = self.bbox;
        if p.x < lo.x - EDGE_EPS || p.x > hi.x + EDGE_EPS || p.y < lo.y - EDGE_EPS || p.y > hi.y + EDGE_EPS
        {
            return false;
        }
        let n = self.polygon.len();
        for i in 0..n {
            if on_segment(self.polygon[i], self.polygon[(i + 1) % n], p) {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.polygon[i], self.polygon[j]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn validate(&self, index: usize) -> Result<(), SceneError> {
        if self.polygon.len() < 3 {
            return Err(SceneError::PolygonTooSmall {
                region: index,
                vertices: self.polygon.len(),
            });
        }
        if self.polygon.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(SceneError::NonFinite {
                what: format!("regions[{index}].polygon"),
            });
        }
        if let Some((a, b)) = first_self_intersection(&self.polygon) {
            return Err(SceneError::PolygonNotSimple { region: index, a, b });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub waypoints: Vec<Point3<f64>>,
    /// Meters between consecutive waypoints as declared by the map author.
    pub nominal_spacing: f64,
}

/// Validated intersection map. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    center: Point2<f64>,
    ground_elevation: f64,
    regions: Vec<Region>,
    lanes: Vec<Lane>,
    recommended_roi_radius: Option<f64>,
}

impl VectorMap {
    pub fn new(
        center: Point2<f64>,
        ground_elevation: f64,
        regions: Vec<Region>,
        lanes: Vec<Lane>,
        recommended_roi_radius: Option<f64>,
    ) -> Result<Self, SceneError> {
        if !center.x.is_finite() || !center.y.is_finite() || !ground_elevation.is_finite() {
            return Err(SceneError::NonFinite {
                what: "center/ground_elevation".into(),
            });
        }
        for (i, region) in regions.iter().enumerate() {
            region.validate(i)?;
        }
        let mut seen = std::collections::HashSet::new();
        for (i, lane) in lanes.iter().enumerate() {
            if !seen.insert(lane.id.as_str()) {
                return Err(SceneError::DuplicateLaneId(lane.id.clone()));
            }
            if lane.waypoints.len() < 2 {
                return Err(SceneError::LaneTooShort {
                    lane: i,
                    id: lane.id.clone(),
                    count: lane.waypoints.len(),
                });
            }
            if lane.waypoints.iter().any(|w| !w.coords.iter().all(|c| c.is_finite())) {
                return Err(SceneError::NonFinite {
                    what: format!("lanes[{i}].waypoints"),
                });
            }
            for (k, pair) in lane.waypoints.windows(2).enumerate() {
                if (pair[1] - pair[0]).norm() <= MIN_WAYPOINT_GAP {
                    return Err(SceneError::CoincidentWaypoints {
                        lane: i,
                        id: lane.id.clone(),
                        index: k,
                    });
                }
            }
            if !(lane.nominal_spacing > 0.0 && lane.nominal_spacing.is_finite()) {
                return Err(SceneError::BadSpacing {
                    lane: i,
                    id: lane.id.clone(),
                });
            }
        }
        Ok(VectorMap {
            center,
            ground_elevation,
            regions,
            lanes,
            recommended_roi_radius,
        })
    }

    pub fn center(&self) -> Point2<f64> {
        self.center
    }

    pub fn ground_elevation(&self) -> f64 {
        self.ground_elevation
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn recommended_roi_radius(&self) -> Option<f64> {
        self.recommended_roi_radius
    }

    /// Kind of the highest-priority region containing `p`. Equal priorities
    /// resolve to the region declared first.
    pub fn region_at(&self, p: Point2<f64>) -> Option<RegionKind> {
        let mut best: Option<&Region> = None;
        for region in &self.regions {
            if best.is_some_and(|b| b.priority >= region.priority) {
                continue;
            }
            if region.contains(p) {
                best = Some(region);
            }
        }
        best.map(Region::kind)
    }
}

/// Planar heading of `next - from`, in (−π, π].
pub fn heading_between(from: Point3<f64>, next: Point3<f64>) -> Result<f64, SceneError> {
    let dx = next.x - from.x;
    let dy = next.y - from.y;
    if dx.hypot(dy) <= MIN_WAYPOINT_GAP {
        return Err(SceneError::DegenerateHeading);
    }
    let h = dy.atan2(dx);
    // atan2(-0.0, negative) yields -π
    Ok(if h <= -PI { PI } else { h })
}

fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: Point2<f64>, b: Point2<f64>, p: Point2<f64>) -> bool {
    let len = (b - a).norm();
    if len == 0.0 {
        return (p - a).norm() <= EDGE_EPS;
    }
    if cross(a, b, p).abs() > EDGE_EPS * len.max(1.0) {
        return false;
    }
    let t = (p - a).dot(&(b - a));
    t >= -EDGE_EPS && t <= len * len + EDGE_EPS
}

fn segments_touch(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Returns the first pair of edges that violates simplicity: non-adjacent
/// edges that touch, adjacent edges that fold back over each other, or a
/// zero-length edge (reported as the edge paired with itself).
fn first_self_intersection(poly: &[Point2<f64>]) -> Option<(usize, usize)> {
    let n = poly.len();
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if (b - a).norm() <= EDGE_EPS {
            return Some((i, i));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = edge(i);
            let (c, d) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // edges p-s and s-q share s; they must not fold back over each other
                let (p, s, q) = if j == i + 1 { (a, b, d) } else { (b, a, c) };
                if (on_segment(p, s, q) && (q - s).norm() > EDGE_EPS)
                    || (on_segment(s, q, p) && (p - s).norm() > EDGE_EPS)
                {
                    return Some((i, j));
                }
                continue;
            }
            if segments_touch(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}
