//! The fusion network and its two single-modality ablations.
//!
//! ```text
//! image ──► backbone ──► v (D) ──► dense+ReLU ──► S (H) ─┐
//!                                                        ├─► concat ──► dense ──► softmax ──► ŷ (K)
//! metadata (3, scaled) ──────────────────────────────────┘
//! ```
//!
//! `imagery_only` drops the metadata branch; `features_only` replaces the image
//! path with a 3 → H ReLU layer over the metadata.

mod backbone;
mod head;
mod metadata;
mod params;
mod real;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backbone::{backbone_forward, BackboneCache, BackboneShape};
pub use head::{head_forward, softmax, HeadOutput};
pub(crate) use head::head_backward;
pub use metadata::{normalize_metadata, MetadataScaling, MetadataStats};
pub use params::{
    glorot_bound, init_parameters, ConvLayer, Dense, Matrix, ModelParameters, TensorKind,
    TensorRef,
};
pub use real::Real;

use crate::chipper::UnitImage;
use crate::error::{Error, Result};

/// Output channels of the first two desk-backbone blocks; the third block
/// has `backbone_dim` channels.
pub const BACKBONE_CHANNELS: [usize; 2] = [16, 32];
/// Number of metadata features fed to the head.
pub const METADATA_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Combined,
    ImageryOnly,
    FeaturesOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ImageryOnly, Variant::FeaturesOnly, Variant::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Combined => "combined",
            Variant::ImageryOnly => "imagery_only",
            Variant::FeaturesOnly => "features_only",
        }
    }

    pub fn uses_image(self) -> bool {
        !matches!(self, Variant::FeaturesOnly)
    }

    pub fn uses_metadata(self) -> bool {
        !matches!(self, Variant::ImageryOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(Variant::Combined),
            "imagery_only" => Ok(Variant::ImageryOnly),
            "features_only" => Ok(Variant::FeaturesOnly),
            other => Err(Error::domain(format!(
                "unknown variant {other:?} (expected combined, imagery_only or features_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Length of the image feature vector, D.
    pub backbone_dim: usize,
    /// Width of the dense layer that produces S, H.
    pub hidden_dim: usize,
    /// Number of speed classes, K.
    pub classes: usize,
    pub input_px: usize,
    pub freeze_backbone: bool,
    pub metadata_scaling: MetadataScaling,
}

impl ModelConfig {
    pub fn new(variant: Variant, classes: usize) -> Self {
        ModelConfig {
            variant,
            backbone_dim: 64,
            hidden_dim: 512,
            classes,
            input_px: 224,
            freeze_backbone: false,
            metadata_scaling: MetadataScaling::MinMax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_dim == 0 || self.hidden_dim == 0 || self.classes == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if self.variant.uses_image() && self.input_px < 8 {
            return Err(Error::Config(format!(
                "input_px must be at least 8 for three 2x2 pools, got {}",
                self.input_px
            )));
        }
        Ok(())
    }

    pub fn backbone_shape(&self) -> BackboneShape {
        BackboneShape {
            input_px: self.input_px,
            channels: [BACKBONE_CHANNELS[0], BACKBONE_CHANNELS[1], self.backbone_dim],
        }
    }

    /// Width of the vector that feeds the output layer.
    pub fn output_fan_in(&self) -> usize {
        match self.variant {
            Variant::Combined => self.hidden_dim + METADATA_DIM,
            Variant::ImageryOnly | Variant::FeaturesOnly => self.hidden_dim,
        }
    }
}

/// Class distribution for one input.
pub fn predict_proba<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    image: Option<&UnitImage<T>>,
    metadata: &[T; METADATA_DIM],
) -> Result<Vec<T>> {
    let features = match (config.variant.uses_image(), image) {
        (true, Some(img)) => Some(backbone_forward(img, params, config)?),
        (true, None) => return Err(Error::mismatch("variant needs an image but none was given")),
        (false, _) => None,
    };
    Ok(head_forward(features.as_deref(), metadata, params, config.variant)?.probs)
}
