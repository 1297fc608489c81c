use crate::error::{Error, Result};
use crate::model::{ModelParameters, Real};

const LOG_FLOOR: f64 = 1e-12;
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Mean negative log-likelihood of the labeled class (one-hot cross-entropy).
/// Probabilities are floored at 1e-12 before the log.
pub fn cross_entropy<T: Real>(probs: &[Vec<T>], labels: &[usize]) -> Result<T> {
    if probs.len() != labels.len() {
        return Err(Error::mismatch(format!(
            "{} distributions but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::domain("cross-entropy of an empty batch"));
    }
    let floor = T::of(LOG_FLOOR);
    let mut total = T::zero();
    for (i, (row, &label)) in probs.iter().zip(labels).enumerate() {
        if label >= row.len() {
            return Err(Error::domain(format!(
                "label {label} out of range for {} classes (sample {i})",
                row.len()
            )));
        }
        let sum: T = row.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(ROW_SUM_TOLERANCE) {
            return Err(Error::domain(format!("row {i} sums to {sum:?}, not 1")));
        }
        total = total - row[label].max(floor).ln();
    }
    Ok(total / T::of(labels.len() as f64))
}

/// `λ · Σ w²` over the dense weight matrices; biases and backbone tensors are
/// not penalized.
pub fn l2_penalty<T: Real>(params: &ModelParameters<T>, scale: f64) -> T {
    let sum: T = params
        .tensors()
        .into_iter()
        .filter(|t| t.kind.is_regularized())
        .map(|t| t.data.iter().map(|&w| w * w).sum::<T>())
        .sum();
    T::of(scale) * sum
}

/// Adds `2λw` to the gradient of every penalized tensor.
pub fn add_l2_gradient<T: Real>(params: &ModelParameters<T>, grads: &mut ModelParameters<T>, scale: f64) {
    if scale == 0.0 {
        return;
    }
    let two_lambda = T::of(2.0 * scale);
    for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        if p.kind.is_regularized() {
            for (gv, &w) in g.data.iter_mut().zip(p.data) {
                *gv = *gv + two_lambda * w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MetadataScaling, ModelConfig, Variant};
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_distribution_gives_ln_k() {
        let row = vec![1.0f64 / 79.0; 79];
        for label in [0, 40, 78] {
            let l = cross_entropy(&[row.clone()], &[label]).unwrap();
            assert_abs_diff_eq!(l, 79f64.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(l, 4.3694, epsilon = 1e-4);
        }
    }

    #[test]
    fn perfect_prediction_gives_zero() {
        let l = cross_entropy(&[vec![0.0f64, 1.0, 0.0]], &[1]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn direct_formula() {
        let l = cross_entropy(&[vec![0.7f64, 0.2, 0.1]], &[0]).unwrap();
        assert_abs_diff_eq!(l, -(0.7f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.35667, epsilon = 1e-5);
    }

    #[test]
    fn zero_probability_is_floored() {
        let l = cross_entropy(&[vec![1.0f64, 0.0]], &[1]).unwrap();
        assert_abs_diff_eq!(l, -(1e-12f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn errors() {
        assert!(cross_entropy(&[vec![0.5f64, 0.5]], &[2]).is_err());
        assert!(cross_entropy(&[vec![0.5f64, 0.6]], &[0]).is_err());
        assert!(cross_entropy::<f64>(&[], &[]).is_err());
        assert!(cross_entropy(&[vec![1.0f64]], &[0, 0]).is_err());
    }

    fn config() -> ModelConfig {
        ModelConfig {
            variant: Variant::FeaturesOnly,
            backbone_dim: 4,
            hidden_dim: 3,
            classes: 2,
            input_px: 8,
            freeze_backbone: false,
            metadata_scaling: MetadataScaling::MinMax,
        }
    }

    #[test]
    fn penalty_examples() {
        let mut p = ModelParameters::<f64>::zeros(&config());
        assert_eq!(l2_penalty(&p, 5e-5), 0.0);
        p.output.weight.data[0] = 2.0;
        p.output.bias[0] = 100.0;
        assert_abs_diff_eq!(l2_penalty(&p, 5e-5), 2e-4, epsilon = 1e-18);
    }

    #[test]
    fn penalty_is_quadratic() {
        let mut p = crate::model::init_parameters::<f64>(&config(), 1).unwrap();
        let base = l2_penalty(&p, 5e-5);
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= 2.0);
        }
        assert_abs_diff_eq!(l2_penalty(&p, 5e-5), 4.0 * base, epsilon = 1e-15);
    }

    #[test]
    fn backbone_is_not_penalized() {
        let c = ModelConfig { variant: Variant::ImageryOnly, ..config() };
        let mut p = ModelParameters::<f64>::zeros(&c);
        p.backbone[0].kernel[0] = 3.0;
        p.image_dense.as_mut().unwrap().bias[0] = 3.0;
        assert_eq!(l2_penalty(&p, 1.0), 0.0);
    }
}
