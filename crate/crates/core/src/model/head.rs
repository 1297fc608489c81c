use super::{ModelParameters, Real, Variant, METADATA_DIM};
use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    /// Post-ReLU hidden activations (S, or S' for features-only).
    pub hidden: Vec<T>,
    /// Vector fed to the output layer.
    pub fused: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

fn relu_affine<T: Real>(layer: &super::Dense<T>, x: &[T]) -> Vec<T> {
    let mut h = vec![T::zero(); layer.weight.rows];
    layer.weight.affine(x, &layer.bias, &mut h);
    for v in h.iter_mut() {
        *v = v.max(T::zero());
    }
    h
}

/// Logits and class distribution from image features `v` (absent for the
/// features-only variant) and scaled metadata `m`.
pub fn head_forward<T: Real>(
    v: Option<&[T]>,
    m: &[T; METADATA_DIM],
    params: &ModelParameters<T>,
    variant: Variant,
) -> Result<HeadOutput<T>> {
    let hidden = match variant {
        Variant::Combined | Variant::ImageryOnly => {
            let layer = params
                .image_dense
                .as_ref()
                .ok_or_else(|| Error::mismatch("parameters lack the image dense layer"))?;
            let v = v.ok_or_else(|| Error::mismatch(format!("{variant} needs image features")))?;
            if v.len() != layer.weight.cols {
                return Err(Error::mismatch(format!(
                    "image features have length {} but the dense layer expects {}",
                    v.len(),
                    layer.weight.cols
                )));
            }
            relu_affine(layer, v)
        }
        Variant::FeaturesOnly => {
            let layer = params
                .meta_dense
                .as_ref()
                .ok_or_else(|| Error::mismatch("parameters lack the metadata dense layer"))?;
            relu_affine(layer, m)
        }
    };
    let mut fused = hidden.clone();
    if variant == Variant::Combined {
        fused.extend_from_slice(m);
    }
    if fused.len() != params.output.weight.cols {
        return Err(Error::mismatch(format!(
            "output layer expects {} inputs, got {}",
            params.output.weight.cols,
            fused.len()
        )));
    }
    let mut logits = vec![T::zero(); params.output.weight.rows];
    params.output.weight.affine(&fused, &params.output.bias, &mut logits);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax(&logits);
    Ok(HeadOutput {
        hidden,
        fused,
        logits,
        probs,
    })
}

/// Accumulates head gradients for one sample given ∂loss/∂z and returns
/// ∂loss/∂v when the variant has an image path.
pub(crate) fn head_backward<T: Real>(
    v: Option<&[T]>,
    m: &[T; METADATA_DIM],
    out: &HeadOutput<T>,
    d_logits: &[T],
    params: &ModelParameters<T>,
    grads: &mut ModelParameters<T>,
    variant: Variant,
) -> Option<Vec<T>> {
    grads.output.weight.accumulate_outer(d_logits, &out.fused);
    for (b, &g) in grads.output.bias.iter_mut().zip(d_logits) {
        *b = *b + g;
    }
    let mut d_fused = vec![T::zero(); out.fused.len()];
    params.output.weight.accumulate_transpose_product(d_logits, &mut d_fused);
    let d_hidden: Vec<T> = d_fused[..out.hidden.len()]
        .iter()
        .zip(&out.hidden)
        .map(|(&g, &h)| if h > T::zero() { g } else { T::zero() })
        .collect();

    let (layer, grad, input): (_, _, &[T]) = match variant {
        Variant::FeaturesOnly => (
            params.meta_dense.as_ref().expect("checked in forward"),
            grads.meta_dense.as_mut().expect("same layout"),
            m,
        ),
        _ => (
            params.image_dense.as_ref().expect("checked in forward"),
            grads.image_dense.as_mut().expect("same layout"),
            v.expect("checked in forward"),
        ),
    };
    grad.weight.accumulate_outer(&d_hidden, input);
    for (b, &g) in grad.bias.iter_mut().zip(&d_hidden) {
        *b = *b + g;
    }
    if variant == Variant::FeaturesOnly {
        return None;
    }
    let mut d_v = vec![T::zero(); input.len()];
    layer.weight.accumulate_transpose_product(&d_hidden, &mut d_v);
    Some(d_v)
}
