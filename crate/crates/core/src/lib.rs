//! Free-flow speed estimation from overhead imagery and coarse road metadata.
//!
//! The crate covers the whole pipeline: synthetic roadscapes with a known
//! free-flow rule ([`synth`]), county-disjoint splits ([`split`]),
//! travel-direction-up chip extraction ([`chipper`]), a CNN fusion network
//! with imagery-only and features-only ablations ([`model`]), training
//! ([`train`]), and within-k evaluation plus speed-limit discrepancy reports
//! ([`eval`]).

pub mod chipper;
pub mod classes;
pub mod dataset;
pub mod cli;
pub mod draw;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
mod rng;
pub mod segment;
pub mod split;
pub mod synth;
pub mod train;

pub use classes::SpeedClassMap;
pub use error::{Error, Result};
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use model::{ModelConfig, Variant};
pub use segment::{round_speed, Point, RoadMetadata, RoadSegment};
pub use split::{county_split, SplitAssignment, SplitParams};

// mdbook can't run snippets that depend on this crate, so rustdoc does it.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/splits.md")]
    mod splits {}
    #[doc = include_str!("../../../book/src/chips.md")]
    mod chips {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
