//! Synthetic roadscapes with a known free-flow rule.
//!
//! Each segment gets random road attributes, a random location on a `g × g`
//! grid of square counties, a rendered travel-up chip, and a label from
//! [`oracle_freeflow`].

mod oracle;
mod render;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use oracle::{
    oracle_freeflow, oracle_freeflow_with_noise, SynthSegmentParams, LIMIT_OFFSETS,
    MAX_INTERSECTIONS,
};
pub use render::{centerline, layout, nominal_width_px, render_segment, RoadLayout, ROAD_COLOR};

use crate::chipper::DEFAULT_OUT_PX;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::rng;
use crate::segment::{Point, RoadMetadata, RoadSegment};

/// Side of one synthetic county, meters.
pub const COUNTY_SIZE_M: f64 = 20_000.0;
/// Length of the synthetic segment geometry, meters.
pub const SEGMENT_LENGTH_M: f64 = 150.0;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHIP_DIR: &str = "chips";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_segments: usize,
    /// Counties form a `county_grid × county_grid` grid.
    pub county_grid: u32,
    pub noise_mph_sd: f64,
    pub master_seed: u64,
    pub chip_px: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_segments: 1000,
            county_grid: 8,
            noise_mph_sd: 0.0,
            master_seed: 0,
            chip_px: DEFAULT_OUT_PX,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::domain("n_segments must be at least 1"));
        }
        if self.county_grid < 2 {
            return Err(Error::domain("county_grid must be at least 2"));
        }
        if !(self.noise_mph_sd >= 0.0 && self.noise_mph_sd.is_finite()) {
            return Err(Error::domain("noise_mph_sd must be finite and nonnegative"));
        }
        if self.chip_px == 0 {
            return Err(Error::domain("chip_px must be at least 1"));
        }
        Ok(())
    }

    /// Render seed of segment `index`: `master_seed × 1,000,003 + index`.
    pub fn render_seed(&self, index: usize) -> u64 {
        self.master_seed
            .wrapping_mul(1_000_003)
            .wrapping_add(index as u64)
    }
}

/// A sampled synthetic segment before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSegment {
    pub id: String,
    pub params: SynthSegmentParams,
    pub county: String,
    pub geometry: Vec<Point>,
    pub freeflow_mph: u32,
}

impl SynthSegment {
    pub fn metadata(&self) -> RoadMetadata {
        RoadMetadata {
            area_type: self.params.area_type,
            functional_class: self.params.functional_class,
            posted_limit_mph: self.params.posted_limit_mph(),
        }
    }

    pub fn chip_path(&self) -> String {
        format!("{CHIP_DIR}/{}.png", self.id)
    }

    pub fn to_road_segment(&self) -> RoadSegment {
        RoadSegment {
            id: self.id.clone(),
            county: self.county.clone(),
            geometry: self.geometry.clone(),
            metadata: self.metadata(),
            freeflow_mph: self.freeflow_mph,
            chip_path: Some(self.chip_path()),
        }
    }
}

/// Draws every segment's attributes, location, and label. Pure in `config`.
pub fn sample_segments(config: &SynthConfig) -> Result<Vec<SynthSegment>> {
    config.validate()?;
    let mut rng = rng::stream(config.master_seed, rng::SYNTH_SAMPLING);
    let mut noise_rng = rng::stream(config.master_seed, rng::SYNTH_NOISE);
    let noise = Normal::new(0.0, config.noise_mph_sd)
        .map_err(|e| Error::domain(format!("noise distribution: {e}")))?;
    let plane = f64::from(config.county_grid) * COUNTY_SIZE_M;
    let width = (config.n_segments - 1).to_string().len().max(6);

    let segments = (0..config.n_segments)
        .map(|i| {
            let params = SynthSegmentParams {
                functional_class: rng.random_range(1..=5),
                area_type: rng.random_range(0..=2),
                curvature: rng.random_range(0.0..=1.0),
                intersections: rng.random_range(0..=MAX_INTERSECTIONS),
                limit_offset_mph: LIMIT_OFFSETS[rng.random_range(0..LIMIT_OFFSETS.len())],
                render_seed: config.render_seed(i),
            };
            let x: f64 = rng.random_range(0.0..plane);
            let y: f64 = rng.random_range(0.0..plane);
            let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let last = config.county_grid - 1;
            let gx = ((x / COUNTY_SIZE_M) as u32).min(last);
            let gy = ((y / COUNTY_SIZE_M) as u32).min(last);
            let start = Point::new(x, y);
            let end = Point::new(
                x + SEGMENT_LENGTH_M * heading.sin(),
                y + SEGMENT_LENGTH_M * heading.cos(),
            );
            let eta = if config.noise_mph_sd > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            SynthSegment {
                id: format!("seg{i:0width$}"),
                params,
                county: format!("c{gx}_{gy}"),
                geometry: vec![start, end],
                freeflow_mph: oracle_freeflow_with_noise(&params, eta),
            }
        })
        .collect();
    Ok(segments)
}

/// Writes `manifest.jsonl` and `chips/*.png` into `out_dir`.
pub fn generate_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let segments = sample_segments(config)?;
    let chip_dir = out_dir.join(CHIP_DIR);
    fs::create_dir_all(&chip_dir).map_err(|e| Error::io(&chip_dir, e))?;

    segments.par_iter().try_for_each(|s| {
        let path = out_dir.join(s.chip_path());
        render_segment(&s.params, config.chip_px)
            .save(&path)
            .map_err(|source| Error::Image { path, source })
    })?;

    let records = segments
        .iter()
        .map(|s| ManifestRecord {
            segment: s.to_road_segment(),
            split: None,
        })
        .collect();
    let manifest = DatasetManifest::new(records, out_dir);
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
