//! Discrete free-flow speed classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijection between the distinct integer speeds seen in training and class
/// indices `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct SpeedClassMap {
    speeds: Vec<u32>,
}

impl SpeedClassMap {
    /// Sorts and deduplicates `labels`.
    pub fn build(labels: &[u32]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("cannot build a class map from no labels"));
        }
        let mut speeds = labels.to_vec();
        speeds.sort_unstable();
        speeds.dedup();
        Ok(SpeedClassMap { speeds })
    }

    /// Wraps an already strictly increasing list.
    pub fn from_speeds(speeds: Vec<u32>) -> Result<Self> {
        if speeds.is_empty() {
            return Err(Error::domain("class map must have at least one speed"));
        }
        if speeds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("class map speeds must be strictly increasing"));
        }
        Ok(SpeedClassMap { speeds })
    }

    /// Number of classes, K.
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn speeds(&self) -> &[u32] {
        &self.speeds
    }

    pub fn speed_to_class(&self, mph: u32) -> Option<usize> {
        self.speeds.binary_search(&mph).ok()
    }

    pub fn class_to_speed(&self, class: usize) -> Option<u32> {
        self.speeds.get(class).copied()
    }
}

impl TryFrom<Vec<u32>> for SpeedClassMap {
    type Error = Error;

    fn try_from(speeds: Vec<u32>) -> Result<Self> {
        SpeedClassMap::from_speeds(speeds)
    }
}

impl From<SpeedClassMap> for Vec<u32> {
    fn from(map: SpeedClassMap) -> Self {
        map.speeds
    }
}
