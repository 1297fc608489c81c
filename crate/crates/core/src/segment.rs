//! Road segments, their coarse metadata, and label rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar point in a local metric frame (meters), serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Land-context code attached to every segment.
pub const AREA_TYPES: std::ops::RangeInclusive<u8> = 0..=2;
/// Functional classification codes, 1 being the highest class.
pub const FUNCTIONAL_CLASSES: std::ops::RangeInclusive<u8> = 1..=5;
/// Admissible posted limits in mph.
pub const POSTED_LIMITS: std::ops::RangeInclusive<u32> = 5..=90;

/// The three coarse integer features that accompany each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoadMetadata {
    /// 0 = rural, 1 = suburban, 2 = urban.
    pub area_type: u8,
    /// 1..=5, 1 is the highest class.
    pub functional_class: u8,
    pub posted_limit_mph: u32,
}

impl RoadMetadata {
    pub fn validate(&self) -> Result<()> {
        if !AREA_TYPES.contains(&self.area_type) {
            return Err(Error::domain(format!(
                "area_type {} outside {:?}",
                self.area_type, AREA_TYPES
            )));
        }
        if !FUNCTIONAL_CLASSES.contains(&self.functional_class) {
            return Err(Error::domain(format!(
                "functional_class {} outside {:?}",
                self.functional_class, FUNCTIONAL_CLASSES
            )));
        }
        if !POSTED_LIMITS.contains(&self.posted_limit_mph) {
            return Err(Error::domain(format!(
                "posted_limit_mph {} outside {:?}",
                self.posted_limit_mph, POSTED_LIMITS
            )));
        }
        Ok(())
    }

    /// Features in a fixed order: area type, functional class, posted limit.
    pub fn as_array(&self) -> [f64; 3] {
        [
            f64::from(self.area_type),
            f64::from(self.functional_class),
            f64::from(self.posted_limit_mph),
        ]
    }
}

/// One roadway unit with its ground-truth free-flow label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: String,
    pub county: String,
    pub geometry: Vec<Point>,
    #[serde(flatten)]
    pub metadata: RoadMetadata,
    pub freeflow_mph: u32,
    pub chip_path: Option<String>,
}

impl RoadSegment {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::domain("segment id is empty"));
        }
        if self.county.is_empty() {
            return Err(Error::domain(format!("segment {}: county is empty", self.id)));
        }
        if self.geometry.len() < 2 {
            return Err(Error::domain(format!(
                "segment {}: geometry needs at least 2 points, got {}",
                self.id,
                self.geometry.len()
            )));
        }
        if self.geometry[0] == self.geometry[1] {
            return Err(Error::domain(format!(
                "segment {}: first two geometry points coincide",
                self.id
            )));
        }
        if self.geometry.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::domain(format!(
                "segment {}: non-finite geometry",
                self.id
            )));
        }
        self.metadata
            .validate()
            .map_err(|e| Error::domain(format!("segment {}: {e}", self.id)))
    }

    pub fn start(&self) -> Point {
        self.geometry[0]
    }
}

/// Rounds a measured mean speed to the nearest integer mph, halves up.
pub fn round_speed(raw: f64) -> Result<u32> {
    if !(raw >= 0.0) || !raw.is_finite() {
        return Err(Error::domain(format!(
            "speed must be finite and nonnegative, got {raw}"
        )));
    }
    let rounded = (raw + 0.5).floor();
    if rounded > f64::from(u32::MAX) {
        return Err(Error::domain(format!("speed {raw} out of range")));
    }
    Ok(rounded as u32)
}
