//! In-memory examples drawn from a manifest.

use image::RgbImage;
use rayon::prelude::*;

use crate::chipper::to_unit_image;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::model::{normalize_metadata, MetadataScaling, MetadataStats, Real};
use crate::segment::RoadSegment;
use crate::train::Sample;

/// Loads and decodes one segment's chip.
pub fn load_chip(manifest: &DatasetManifest, segment: &RoadSegment) -> Result<RgbImage> {
    let path = manifest
        .chip_path(segment)
        .ok_or_else(|| Error::domain(format!("segment {} has no chip_path", segment.id)))?;
    Ok(image::open(&path)
        .map_err(|source| Error::Image { path, source })?
        .to_rgb8())
}

/// Segments of one split, optionally with decoded chips.
#[derive(Debug, Clone)]
pub struct Examples {
    pub segments: Vec<RoadSegment>,
    pub chips: Option<Vec<RgbImage>>,
}

impl Examples {
    pub fn load(manifest: &DatasetManifest, split: Split, with_chips: bool) -> Result<Self> {
        let records: Vec<&ManifestRecord> = manifest.split(split).collect();
        Self::from_records(manifest, &records, with_chips)
    }

    pub fn from_records(manifest: &DatasetManifest, records: &[&ManifestRecord], with_chips: bool) -> Result<Self> {
        let segments: Vec<RoadSegment> = records.iter().map(|r| r.segment.clone()).collect();
        let chips = if with_chips {
            Some(
                segments
                    .par_iter()
                    .map(|s| load_chip(manifest, s))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Examples { segments, chips })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Model-ready sample `i` with the given class label.
    pub fn sample<T: Real>(&self, i: usize, stats: &MetadataStats, scaling: MetadataScaling, label: usize) -> Sample<T> {
        Sample {
            image: self.chips.as_ref().map(|c| to_unit_image(&c[i])),
            metadata: normalize_metadata(&self.segments[i].metadata, stats, scaling),
            label,
        }
    }
}
