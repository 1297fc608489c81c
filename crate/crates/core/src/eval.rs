//! Decoding, within-k accuracy, modality comparison tables, speed-limit
//! discrepancy reports, and label histograms.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chipper::to_unit_image;
use crate::classes::SpeedClassMap;
use crate::dataset::{load_chip, Examples};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{normalize_metadata, predict_proba, MetadataStats, ModelConfig, ModelParameters, Real, Variant};
use crate::segment::{Point, RoadMetadata};
use crate::train::{split_digest, Checkpoint};

/// How a class distribution becomes a speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Most probable class; ties go to the lowest speed.
    #[default]
    Argmax,
    /// Probability-weighted mean speed, rounded half up.
    Expected,
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Decoder::Argmax),
            "expected" => Ok(Decoder::Expected),
            other => Err(Error::domain(format!("unknown decoder {other:?} (expected argmax or expected)"))),
        }
    }
}

pub fn decode<T: Real>(probs: &[T], class_map: &SpeedClassMap, decoder: Decoder) -> Result<u32> {
    if probs.len() != class_map.len() {
        return Err(Error::mismatch(format!(
            "{} probabilities for {} classes",
            probs.len(),
            class_map.len()
        )));
    }
    match decoder {
        Decoder::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            Ok(class_map.class_to_speed(best).expect("index in range"))
        }
        Decoder::Expected => {
            let mean: f64 = probs
                .iter()
                .zip(class_map.speeds())
                .map(|(p, &s)| p.to_f64().unwrap_or(0.0) * f64::from(s))
                .sum();
            Ok((mean + 0.5).floor().max(0.0) as u32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted_mph: u32,
    pub true_mph: u32,
    pub posted_limit_mph: u32,
    #[serde(skip)]
    pub variant: Option<Variant>,
}

/// Predicted speed for one segment.
pub fn predict(checkpoint: &Checkpoint, chip: Option<&RgbImage>, metadata: &RoadMetadata, decoder: Decoder) -> Result<u32> {
    let model = &checkpoint.model;
    let image = if model.variant.uses_image() {
        let chip = chip.ok_or_else(|| Error::domain("this model needs a chip"))?;
        Some(to_unit_image::<f32>(chip))
    } else {
        None
    };
    let m = normalize_metadata(metadata, &checkpoint.metadata_stats, model.metadata_scaling);
    let probs = predict_proba(&checkpoint.params, model, image.as_ref(), &m)?;
    decode(&probs, &checkpoint.class_map, decoder)
}

/// Predictions for preloaded examples, in order.
pub fn predict_examples(
    params: &ModelParameters<f32>,
    model: &ModelConfig,
    class_map: &SpeedClassMap,
    stats: &MetadataStats,
    examples: &Examples,
    decoder: Decoder,
) -> Result<Vec<PredictionRecord>> {
    (0..examples.len())
        .into_par_iter()
        .map(|i| {
            let s = &examples.segments[i];
            let image = examples.chips.as_ref().map(|c| to_unit_image::<f32>(&c[i]));
            let m = normalize_metadata(&s.metadata, stats, model.metadata_scaling);
            let probs = predict_proba(params, model, image.as_ref(), &m)?;
            Ok(PredictionRecord {
                id: s.id.clone(),
                predicted_mph: decode(&probs, class_map, decoder)?,
                true_mph: s.freeflow_mph,
                posted_limit_mph: s.metadata.posted_limit_mph,
                variant: Some(model.variant),
            })
        })
        .collect()
}

/// Successful predictions plus per-segment failures for the chosen split
/// (all segments when `split` is `None`).
pub fn predict_manifest(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    split: Option<Split>,
    decoder: Decoder,
) -> (Vec<PredictionRecord>, Vec<(String, Error)>) {
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| split.is_none() || r.split == split)
        .collect();
    let results: Vec<(String, Result<u32>)> = records
        .par_iter()
        .map(|r| {
            let seg = &r.segment;
            let chip = if checkpoint.model.variant.uses_image() {
                match load_chip(manifest, seg) {
                    Ok(c) => Some(c),
                    Err(e) => return (seg.id.clone(), Err(e)),
                }
            } else {
                None
            };
            (seg.id.clone(), predict(checkpoint, chip.as_ref(), &seg.metadata, decoder))
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, (id, res)) in records.iter().zip(results) {
        match res {
            Ok(mph) => ok.push(PredictionRecord {
                id,
                predicted_mph: mph,
                true_mph: r.segment.freeflow_mph,
                posted_limit_mph: r.segment.metadata.posted_limit_mph,
                variant: Some(checkpoint.model.variant),
            }),
            Err(e) => failed.push((id, e)),
        }
    }
    (ok, failed)
}

/// Fraction of records with `|predicted − true| ≤ k`.
pub fn within_k_accuracy(records: &[PredictionRecord], k: u32) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("within-k accuracy of no records"));
    }
    let hits = records
        .iter()
        .filter(|r| r.predicted_mph.abs_diff(r.true_mph) <= k)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub id: String,
    pub predicted_mph: u32,
    pub posted_limit_mph: u32,
    /// `predicted − posted`.
    pub delta: i64,
}

/// Records whose prediction differs from the posted limit by strictly more
/// than `threshold`, largest `|delta|` first (stable).
pub fn discrepancy_report(records: &[PredictionRecord], threshold: u32) -> Vec<DiscrepancyRecord> {
    let mut out: Vec<DiscrepancyRecord> = records
        .iter()
        .map(|r| DiscrepancyRecord {
            id: r.id.clone(),
            predicted_mph: r.predicted_mph,
            posted_limit_mph: r.posted_limit_mph,
            delta: i64::from(r.predicted_mph) - i64::from(r.posted_limit_mph),
        })
        .filter(|d| d.delta.unsigned_abs() > u64::from(threshold))
        .collect();
    out.sort_by_key(|d| std::cmp::Reverse(d.delta.unsigned_abs()));
    out
}

/// GeoJSON FeatureCollection with one point per record at the segment start.
pub fn discrepancies_geojson(records: &[DiscrepancyRecord], manifest: &DatasetManifest) -> Result<serde_json::Value> {
    let starts: BTreeMap<&str, Point> = manifest
        .segments()
        .map(|s| (s.id.as_str(), s.start()))
        .collect();
    let features = records
        .iter()
        .map(|d| {
            let p = starts
                .get(d.id.as_str())
                .ok_or_else(|| Error::mismatch(format!("segment {} not in manifest", d.id)))?;
            Ok(serde_json::json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [p.x, p.y] },
                "properties": {
                    "id": d.id,
                    "predicted_mph": d.predicted_mph,
                    "posted_limit_mph": d.posted_limit_mph,
                    "delta": d.delta,
                },
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::json!({ "type": "FeatureCollection", "features": features }))
}

pub fn write_predictions_csv(records: &[PredictionRecord], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "id,predicted_mph,true_mph,posted_limit_mph")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.id, r.predicted_mph, r.true_mph, r.posted_limit_mph)?;
    }
    Ok(())
}

pub fn read_predictions_csv(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("id,predicted_mph,true_mph,posted_limit_mph") => {}
        other => return Err(Error::domain(format!("unexpected predictions header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::domain(format!("predictions line {}: {e}", i + 2)))
            };
            if f.len() != 4 {
                return Err(Error::domain(format!("predictions line {} has {} fields", i + 2, f.len())));
            }
            Ok(PredictionRecord {
                id: f[0].to_string(),
                predicted_mph: num(f[1])?,
                true_mph: num(f[2])?,
                posted_limit_mph: num(f[3])?,
                variant: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub within5: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn get(&self, variant: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.within5)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,within5,n\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{}\n", r.variant, r.within5, r.n));
        }
        s
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>10}", "method", "within-5")?;
        for r in &self.rows {
            writeln!(f, "{:<14} {:>9.2}%", r.variant.as_str(), 100.0 * r.within5)?;
        }
        Ok(())
    }
}

/// Test-split within-5 accuracy for each (variant label, checkpoint) pair.
pub fn compare_variants(manifest: &DatasetManifest, checkpoints: &[(Variant, &Checkpoint)], decoder: Decoder) -> Result<ComparisonTable> {
    let Some((_, first)) = checkpoints.first() else {
        return Err(Error::domain("no checkpoints to compare"));
    };
    let digest = split_digest(manifest);
    for (v, c) in checkpoints {
        if c.split_digest != digest {
            return Err(Error::mismatch(format!(
                "checkpoint for {v} was trained on a different split than this manifest"
            )));
        }
        if c.class_map != first.class_map {
            return Err(Error::mismatch(format!("checkpoint for {v} uses a different class map")));
        }
    }
    let mut rows = Vec::new();
    for (variant, checkpoint) in checkpoints {
        let (preds, failed) = predict_manifest(checkpoint, manifest, Some(Split::Test), decoder);
        if let Some((id, e)) = failed.into_iter().next() {
            return Err(Error::domain(format!("prediction failed for {id}: {e}")));
        }
        rows.push(ComparisonRow {
            variant: *variant,
            within5: within_k_accuracy(&preds, 5)?,
            n: preds.len(),
        });
    }
    Ok(ComparisonTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramField {
    FreeflowMph,
    PostedLimitMph,
    FunctionalClass,
    AreaType,
}

impl HistogramField {
    pub const ALL: [HistogramField; 4] = [
        HistogramField::FreeflowMph,
        HistogramField::PostedLimitMph,
        HistogramField::FunctionalClass,
        HistogramField::AreaType,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HistogramField::FreeflowMph => "freeflow_mph",
            HistogramField::PostedLimitMph => "posted_limit_mph",
            HistogramField::FunctionalClass => "functional_class",
            HistogramField::AreaType => "area_type",
        }
    }
}

impl FromStr for HistogramField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HistogramField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown histogram field {s:?}")))
    }
}

/// Integer-binned counts of one manifest field.
pub fn label_histogram(manifest: &DatasetManifest, field: HistogramField) -> BTreeMap<u32, usize> {
    let mut bins = BTreeMap::new();
    for s in manifest.segments() {
        let v = match field {
            HistogramField::FreeflowMph => s.freeflow_mph,
            HistogramField::PostedLimitMph => s.metadata.posted_limit_mph,
            HistogramField::FunctionalClass => u32::from(s.metadata.functional_class),
            HistogramField::AreaType => u32::from(s.metadata.area_type),
        };
        *bins.entry(v).or_insert(0) += 1;
    }
    bins
}

/// `feature,bin,count` rows for every histogram field.
pub fn histograms_csv(manifest: &DatasetManifest) -> String {
    let mut s = String::from("feature,bin,count\n");
    for field in HistogramField::ALL {
        for (bin, count) in label_histogram(manifest, field) {
            s.push_str(&format!("{},{bin},{count}\n", field.as_str()));
        }
    }
    s
}
