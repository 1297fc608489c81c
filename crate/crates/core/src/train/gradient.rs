//! Objective (cross-entropy + L2) and its analytic gradient.

use rayon::prelude::*;

use super::loss::{add_l2_gradient, cross_entropy, l2_penalty};
use crate::chipper::UnitImage;
use crate::error::{Error, Result};
use crate::model::{
    head_backward, head_forward, predict_proba, BackboneCache, ModelConfig, ModelParameters,
    Real, METADATA_DIM,
};

/// One training example in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Option<UnitImage<T>>,
    pub metadata: [T; METADATA_DIM],
    pub label: usize,
}

/// Forward and backward for one sample. Adds `scale · ∂(−ln ŷ_label)/∂θ`
/// into `grads` and returns `−ln ŷ_label` (floored like the loss).
pub fn sample_backprop<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    sample: &Sample<T>,
    scale: T,
    grads: &mut ModelParameters<T>,
    cache: &mut BackboneCache<T>,
) -> Result<T> {
    let variant = config.variant;
    let features = if variant.uses_image() {
        let image = sample
            .image
            .as_ref()
            .ok_or_else(|| Error::mismatch(format!("{variant} needs an image")))?;
        Some(cache.forward(image, &params.backbone, config.backbone_shape())?.to_vec())
    } else {
        None
    };
    let out = head_forward(features.as_deref(), &sample.metadata, params, variant)?;
    if sample.label >= out.probs.len() {
        return Err(Error::domain(format!(
            "label {} out of range for {} classes",
            sample.label,
            out.probs.len()
        )));
    }
    let mut d_logits: Vec<T> = out.probs.iter().map(|&p| p * scale).collect();
    d_logits[sample.label] = d_logits[sample.label] - scale;
    let d_v = head_backward(
        features.as_deref(),
        &sample.metadata,
        &out,
        &d_logits,
        params,
        grads,
        variant,
    );
    if let (Some(d_v), false) = (d_v, config.freeze_backbone) {
        cache.backward(&d_v, &params.backbone, &mut grads.backbone);
    }
    Ok(-out.probs[sample.label].max(T::of(1e-12)).ln())
}

/// Batch objective `mean CE + λ Σw²` and its gradient. Samples are processed
/// in parallel and reduced in index order, so the result does not depend on
/// scheduling.
pub fn objective_and_gradient<T, F>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    batch_len: usize,
    fetch: F,
    l2_scale: f64,
) -> Result<(T, ModelParameters<T>)>
where
    T: Real,
    F: Fn(usize) -> Result<Sample<T>> + Sync,
{
    if batch_len == 0 {
        return Err(Error::domain("empty batch"));
    }
    let scale = T::one() / T::of(batch_len as f64);
    let per_sample: Vec<(T, ModelParameters<T>)> = (0..batch_len)
        .into_par_iter()
        .map_init(BackboneCache::new, |cache, i| {
            let sample = fetch(i)?;
            let mut g = params.zeros_like();
            let nll = sample_backprop(params, config, &sample, scale, &mut g, cache)?;
            Ok((nll, g))
        })
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    let mut nll = T::zero();
    for (l, g) in &per_sample {
        nll = nll + *l;
        grads.add_assign(g);
    }
    add_l2_gradient(params, &mut grads, l2_scale);
    Ok((nll * scale + l2_penalty(params, l2_scale), grads))
}

/// Forward-only objective through [`predict_proba`] and [`cross_entropy`].
pub fn objective<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    samples: &[Sample<T>],
    l2_scale: f64,
) -> Result<T> {
    let probs = samples
        .iter()
        .map(|s| predict_proba(params, config, s.image.as_ref(), &s.metadata))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(cross_entropy(&probs, &labels)? + l2_penalty(params, l2_scale))
}
