//! Closed-form free-flow rule for synthetic segments.
//!
//! ```text
//! base(f) = 70, 60, 50, 40, 30          for f = 1..5
//! mult(a) = 1.00, 0.85, 0.70            for a = 0, 1, 2
//! L       = clamp(round5(base·mult) + δ, 15, 70)
//! ff      = clamp(round(min(base·mult − 20c − 4n, L + 7) + η), 5, 79)
//! ```
//!
//! Curvature `c` and intersection count `n` only show up in the image; the
//! limit offset `δ` only shows up in the posted limit. Neither modality alone
//! determines `ff`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LIMIT_OFFSETS: [i32; 5] = [-10, -5, 0, 5, 10];
pub const MAX_INTERSECTIONS: u8 = 4;

const BASE_MPH: [f64; 5] = [70.0, 60.0, 50.0, 40.0, 30.0];
const AREA_MULT: [f64; 3] = [1.0, 0.85, 0.70];
const CURVATURE_PENALTY: f64 = 20.0;
const INTERSECTION_PENALTY: f64 = 4.0;
const CAP_ABOVE_LIMIT: f64 = 7.0;
const LIMIT_RANGE: (i32, i32) = (15, 70);
const FREEFLOW_RANGE: (f64, f64) = (5.0, 79.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSegmentParams {
    pub functional_class: u8,
    pub area_type: u8,
    pub curvature: f64,
    pub intersections: u8,
    pub limit_offset_mph: i32,
    pub render_seed: u64,
}

impl SynthSegmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.functional_class) {
            return Err(Error::domain(format!("functional_class {} outside 1..=5", self.functional_class)));
        }
        if self.area_type > 2 {
            return Err(Error::domain(format!("area_type {} outside 0..=2", self.area_type)));
        }
        if !(0.0..=1.0).contains(&self.curvature) {
            return Err(Error::domain(format!("curvature {} outside [0, 1]", self.curvature)));
        }
        if self.intersections > MAX_INTERSECTIONS {
            return Err(Error::domain(format!("intersections {} outside 0..=4", self.intersections)));
        }
        if !LIMIT_OFFSETS.contains(&self.limit_offset_mph) {
            return Err(Error::domain(format!(
                "limit offset {} not one of {LIMIT_OFFSETS:?}",
                self.limit_offset_mph
            )));
        }
        Ok(())
    }

    /// `base(f) · mult(a)`, the unimpeded speed for this class and area.
    pub fn nominal_mph(&self) -> f64 {
        BASE_MPH[usize::from(self.functional_class - 1)] * AREA_MULT[usize::from(self.area_type)]
    }

    pub fn posted_limit_mph(&self) -> u32 {
        let nearest5 = (self.nominal_mph() / 5.0 + 0.5).floor() as i32 * 5;
        (nearest5 + self.limit_offset_mph).clamp(LIMIT_RANGE.0, LIMIT_RANGE.1) as u32
    }
}

/// Noise-free free-flow speed.
pub fn oracle_freeflow(params: &SynthSegmentParams) -> u32 {
    oracle_freeflow_with_noise(params, 0.0)
}

/// Free-flow speed with an explicit label perturbation `eta` (mph).
pub fn oracle_freeflow_with_noise(params: &SynthSegmentParams, eta: f64) -> u32 {
    let impeded = params.nominal_mph()
        - CURVATURE_PENALTY * params.curvature
        - INTERSECTION_PENALTY * f64::from(params.intersections);
    let cap = f64::from(params.posted_limit_mph()) + CAP_ABOVE_LIMIT;
    let raw = impeded.min(cap) + eta;
    (raw + 0.5).floor().clamp(FREEFLOW_RANGE.0, FREEFLOW_RANGE.1) as u32
}
