use serde::{Deserialize, Serialize};

use super::{Real, METADATA_DIM};
use crate::error::{Error, Result};
use crate::segment::RoadMetadata;

/// How the three integer metadata features are presented to the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataScaling {
    /// Per-feature min-max scaling into `[0, 1]` using training-split stats.
    #[default]
    MinMax,
    /// The integer codes as-is.
    Raw,
}

impl std::str::FromStr for MetadataScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_max" => Ok(MetadataScaling::MinMax),
            "raw" => Ok(MetadataScaling::Raw),
            other => Err(Error::domain(format!("unknown metadata scaling {other:?} (expected min_max or raw)"))),
        }
    }
}

/// Per-feature range over the training split, in the order area type,
/// functional class, posted limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetadataStats {
    pub min: [f64; METADATA_DIM],
    pub max: [f64; METADATA_DIM],
}

impl MetadataStats {
    pub fn from_metadata<'a>(items: impl IntoIterator<Item = &'a RoadMetadata>) -> Result<Self> {
        let mut min = [f64::INFINITY; METADATA_DIM];
        let mut max = [f64::NEG_INFINITY; METADATA_DIM];
        let mut any = false;
        for m in items {
            any = true;
            for (i, v) in m.as_array().into_iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if !any {
            return Err(Error::domain("metadata stats need at least one segment"));
        }
        Ok(MetadataStats { min, max })
    }
}

/// Scales metadata for the head. In min-max mode a constant feature maps to 0
/// and out-of-range values clamp to `[0, 1]`.
pub fn normalize_metadata<T: Real>(
    raw: &RoadMetadata,
    stats: &MetadataStats,
    scaling: MetadataScaling,
) -> [T; METADATA_DIM] {
    let values = raw.as_array();
    let mut out = [T::zero(); METADATA_DIM];
    for i in 0..METADATA_DIM {
        let v = match scaling {
            MetadataScaling::Raw => values[i],
            MetadataScaling::MinMax => {
                let span = stats.max[i] - stats.min[i];
                if span <= 0.0 {
                    0.0
                } else {
                    ((values[i] - stats.min[i]) / span).clamp(0.0, 1.0)
                }
            }
        };
        out[i] = T::of(v);
    }
    out
}
