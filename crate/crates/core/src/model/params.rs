use rand::Rng;

use super::{ModelConfig, Real, Variant, METADATA_DIM};
use crate::error::{Error, Result};
use crate::rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x + bias`
    pub fn affine(&self, x: &[T], bias: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            *o = bias[r] + self.row(r).iter().zip(x).map(|(&w, &v)| w * v).sum::<T>();
        }
    }

    /// `out += selfᵀ · g`
    pub fn accumulate_transpose_product(&self, g: &[T], out: &mut [T]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o = *o + gr * w;
            }
        }
    }

    /// `self += g · xᵀ`
    pub fn accumulate_outer(&mut self, g: &[T], x: &[T]) {
        let cols = self.cols;
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            for (w, &v) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *w = *w + gr * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `out × in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }
}

/// 3×3 convolution kernel stored as `c_out × (c_in · 9)`, matching the
/// `(channel, ky, kx)` row order of the im2col buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernel: vec![T::zero(); out_channels * in_channels * 9],
            bias: vec![T::zero(); out_channels],
        }
    }
}

/// Every trainable tensor of one model variant.
///
/// `image_dense` is W1/b1 (produces S), `meta_dense` is the features-only
/// W1'/b1', and `output` is W2/b2.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub backbone: Vec<ConvLayer<T>>,
    pub image_dense: Option<Dense<T>>,
    pub meta_dense: Option<Dense<T>>,
    pub output: Dense<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    BackboneKernel,
    BackboneBias,
    DenseWeight,
    DenseBias,
}

impl TensorKind {
    pub fn is_backbone(self) -> bool {
        matches!(self, TensorKind::BackboneKernel | TensorKind::BackboneBias)
    }

    /// Dense weight matrices are the only tensors under the L2 penalty.
    pub fn is_regularized(self) -> bool {
        matches!(self, TensorKind::DenseWeight)
    }
}

pub struct TensorRef<D> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: D,
    /// Glorot fan sizes (zero for biases).
    pub fans: (usize, usize),
}

macro_rules! visit_tensors {
    ($self:ident, $iter:ident, $slice:ident, $($mut_:tt)?) => {{
        let mut out = Vec::new();
        for (i, layer) in $self.backbone.$iter().enumerate() {
            let (cin, cout) = (layer.in_channels, layer.out_channels);
            out.push(TensorRef {
                name: format!("backbone.conv{i}.kernel"),
                kind: TensorKind::BackboneKernel,
                shape: vec![cout, cin, 3, 3],
                data: & $($mut_)? layer.kernel[..],
                fans: (cin * 9, cout * 9),
            });
            out.push(TensorRef {
                name: format!("backbone.conv{i}.bias"),
                kind: TensorKind::BackboneBias,
                shape: vec![cout],
                data: & $($mut_)? layer.bias[..],
                fans: (0, 0),
            });
        }
        let layers = [
            ("image_dense", $self.image_dense.$slice()),
            ("meta_dense", $self.meta_dense.$slice()),
            ("output", Some(& $($mut_)? $self.output)),
        ];
        for (name, layer) in layers {
            if let Some(layer) = layer {
                let (rows, cols) = (layer.weight.rows, layer.weight.cols);
                out.push(TensorRef {
                    name: format!("{name}.weight"),
                    kind: TensorKind::DenseWeight,
                    shape: vec![rows, cols],
                    data: & $($mut_)? layer.weight.data[..],
                    fans: (cols, rows),
                });
                out.push(TensorRef {
                    name: format!("{name}.bias"),
                    kind: TensorKind::DenseBias,
                    shape: vec![rows],
                    data: & $($mut_)? layer.bias[..],
                    fans: (0, 0),
                });
            }
        }
        out
    }};
}

impl<T: Real> ModelParameters<T> {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let backbone = if config.variant.uses_image() {
            let ch = config.backbone_shape().channels;
            vec![
                ConvLayer::zeros(3, ch[0]),
                ConvLayer::zeros(ch[0], ch[1]),
                ConvLayer::zeros(ch[1], ch[2]),
            ]
        } else {
            Vec::new()
        };
        let image_dense = config
            .variant
            .uses_image()
            .then(|| Dense::zeros(config.backbone_dim, config.hidden_dim));
        let meta_dense = matches!(config.variant, Variant::FeaturesOnly)
            .then(|| Dense::zeros(METADATA_DIM, config.hidden_dim));
        ModelParameters {
            backbone,
            image_dense,
            meta_dense,
            output: Dense::zeros(config.output_fan_in(), config.classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(T::zero());
        }
        z
    }

    /// Tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorRef<&[T]>> {
        visit_tensors!(self, iter, as_ref,)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorRef<&mut [T]>> {
        visit_tensors!(self, iter_mut, as_mut, mut)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Checks that the tensor layout matches what `config` requires.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expect = ModelParameters::<T>::zeros(config);
        let have: Vec<_> = self.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        let want: Vec<_> = expect.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if have != want {
            return Err(Error::mismatch(format!(
                "parameter layout {have:?} does not match config (expected {want:?})"
            )));
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            kernel: l.kernel.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
            bias: l.bias.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
        };
        let dense = |d: &Dense<T>| Dense {
            weight: Matrix {
                rows: d.weight.rows,
                cols: d.weight.cols,
                data: d.weight.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
            },
            bias: d.bias.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
        };
        ModelParameters {
            backbone: self.backbone.iter().map(conv).collect(),
            image_dense: self.image_dense.as_ref().map(dense),
            meta_dense: self.meta_dense.as_ref().map(dense),
            output: dense(&self.output),
        }
    }
}

/// Glorot-uniform half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights and kernels, zero biases. Values are drawn in `f64`
/// and rounded to `T`, so `f32` and `f64` models from one seed agree.
pub fn init_parameters<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParameters<T>> {
    config.validate()?;
    let mut params = ModelParameters::<T>::zeros(config);
    let mut rng = rng::stream(seed, rng::INIT);
    for t in params.tensors_mut() {
        if matches!(t.kind, TensorKind::BackboneKernel | TensorKind::DenseWeight) {
            let bound = glorot_bound(t.fans.0, t.fans.1);
            for v in t.data.iter_mut() {
                *v = T::of(rng.random_range(-bound..=bound));
            }
        }
    }
    Ok(params)
}
