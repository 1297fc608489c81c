//! County-disjoint train / validation / test splitting.
//!
//! Whole counties are moved to the test side, in a seeded random order, until
//! the test share first reaches the target. Validation is then a per-segment
//! uniform sample of what remains.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::manifest::Split;
use crate::rng;
use crate::segment::RoadSegment;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub test_counties: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        if self.train.contains(id) {
            Some(Split::Train)
        } else if self.val.contains(id) {
            Some(Split::Val)
        } else if self.test.contains(id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Share of all segments that landed in the test split.
    pub fn test_share(&self) -> f64 {
        self.test.len() as f64 / self.len().max(1) as f64
    }

    /// Validation size relative to the train + validation pool.
    pub fn val_share_of_pool(&self) -> f64 {
        self.val.len() as f64 / (self.train.len() + self.val.len()).max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub test_fraction_target: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            test_fraction_target: 0.07,
            val_fraction_of_train: 0.01,
            seed: 0,
        }
    }
}

pub fn county_split(segments: &[RoadSegment], params: SplitParams) -> Result<SplitAssignment> {
    let SplitParams {
        test_fraction_target: target,
        val_fraction_of_train: val_fraction,
        seed,
    } = params;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::domain(format!(
            "test fraction target must lie in (0, 1), got {target}"
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::domain(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }

    let mut by_county: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for s in segments {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::domain(format!("duplicate segment id {}", s.id)));
        }
        by_county.entry(s.county.as_str()).or_default().push(s.id.as_str());
    }
    if by_county.len() < 2 {
        return Err(Error::domain(format!(
            "a county-disjoint split needs at least 2 counties, found {}",
            by_county.len()
        )));
    }

    let mut rng = rng::stream(seed, rng::SPLIT);
    let mut order: Vec<&str> = by_county.keys().copied().collect();
    order.shuffle(&mut rng);

    let total = segments.len() as f64;
    let mut out = SplitAssignment::default();
    let mut taken = 0usize;
    // The last county always stays on the training side.
    for county in &order[..order.len() - 1] {
        if taken as f64 / total >= target {
            break;
        }
        let members = &by_county[county];
        taken += members.len();
        out.test_counties.insert((*county).to_string());
        out.test.extend(members.iter().map(|id| id.to_string()));
    }

    // Pool in input order so the sample does not depend on county order.
    let pool: Vec<&str> = segments
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| !out.test.contains(*id))
        .collect();
    let n_val = ((val_fraction * pool.len() as f64) + 0.5).floor() as usize;
    let chosen: BTreeSet<usize> = index::sample(&mut rng, pool.len(), n_val.min(pool.len()))
        .into_iter()
        .collect();
    for (i, id) in pool.into_iter().enumerate() {
        if chosen.contains(&i) {
            out.val.insert(id.to_string());
        } else {
            out.train.insert(id.to_string());
        }
    }
    Ok(out)
}
