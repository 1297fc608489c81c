//! Desk backbone: three blocks of 3×3 same-padded convolution, ReLU, and 2×2
//! max-pooling, followed by global average pooling.
//!
//! Convolutions run as im2col followed by one GEMM per block. Activations are
//! kept per sample so the backward pass can reuse them.

use super::{ConvLayer, ModelConfig, ModelParameters, Real};
use crate::chipper::UnitImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneShape {
    pub input_px: usize,
    pub channels: [usize; 3],
}

#[derive(Debug, Clone, Default)]
struct BlockCache<T> {
    h: usize,
    w: usize,
    cols: Vec<T>,
    /// Post-ReLU activations, `c_out × h × w`.
    act: Vec<T>,
    /// Flat index into `act` of each pooled maximum.
    argmax: Vec<u32>,
    pooled: Vec<T>,
}

/// Reusable per-sample activations and scratch space.
#[derive(Debug, Clone, Default)]
pub struct BackboneCache<T> {
    blocks: Vec<BlockCache<T>>,
    features: Vec<T>,
    d_act: Vec<T>,
    d_cols: Vec<T>,
    d_input: Vec<T>,
    d_pooled: Vec<T>,
}

fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, cols: &mut Vec<T>) {
    let hw = h * w;
    cols.clear();
    cols.resize(c * 9 * hw, T::zero());
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Scatter-adds im2col gradients back onto the input planes.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, out: &mut Vec<T>) {
    let hw = h * w;
    out.clear();
    out.resize(c * hw, T::zero());
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], &src[..]),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

fn max_pool<T: Real>(act: &[T], c: usize, h: usize, w: usize, pooled: &mut Vec<T>, argmax: &mut Vec<u32>) {
    let (h2, w2) = (h / 2, w / 2);
    pooled.clear();
    argmax.clear();
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h2 {
            for x in 0..w2 {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if act[idx] > act[best] {
                        best = idx;
                    }
                }
                pooled.push(act[best]);
                argmax.push(best as u32);
            }
        }
    }
}

impl<T: Real> BackboneCache<T> {
    pub fn new() -> Self {
        BackboneCache {
            blocks: Vec::new(),
            features: Vec::new(),
            d_act: Vec::new(),
            d_cols: Vec::new(),
            d_input: Vec::new(),
            d_pooled: Vec::new(),
        }
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    /// Runs the backbone on one image and keeps what backward needs.
    pub fn forward(&mut self, image: &UnitImage<T>, layers: &[ConvLayer<T>], shape: BackboneShape) -> Result<&[T]> {
        if image.height != shape.input_px || image.width != shape.input_px || image.data.len() != 3 * image.height * image.width {
            return Err(Error::mismatch(format!(
                "image is {}x{} but the model expects {}x{}",
                image.height, image.width, shape.input_px, shape.input_px
            )));
        }
        if layers.len() != 3 {
            return Err(Error::mismatch("backbone needs exactly three conv layers"));
        }
        self.blocks.resize_with(layers.len(), BlockCache::default);
        let (mut h, mut w) = (image.height, image.width);
        for (i, layer) in layers.iter().enumerate() {
            let (prev, rest) = self.blocks.split_at_mut(i);
            let block = &mut rest[0];
            let input: &[T] = if i == 0 { &image.data } else { &prev[i - 1].pooled };
            let (cin, cout) = (layer.in_channels, layer.out_channels);
            if h < 2 || w < 2 {
                return Err(Error::mismatch("image too small for three 2x2 pools"));
            }
            block.h = h;
            block.w = w;
            let hw = h * w;
            im2col(input, cin, h, w, &mut block.cols);
            block.act.clear();
            block.act.resize(cout * hw, T::zero());
            for (co, b) in layer.bias.iter().enumerate() {
                block.act[co * hw..(co + 1) * hw].fill(*b);
            }
            T::gemm(
                cout,
                cin * 9,
                hw,
                T::one(),
                (&layer.kernel, (cin * 9) as isize, 1),
                (&block.cols, hw as isize, 1),
                T::one(),
                (&mut block.act, hw as isize, 1),
            );
            for v in block.act.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            max_pool(&block.act, cout, h, w, &mut block.pooled, &mut block.argmax);
            h /= 2;
            w /= 2;
        }
        let last = self.blocks.last().expect("three blocks");
        let c = layers[2].out_channels;
        let area = h * w;
        let inv = T::one() / T::of(area as f64);
        self.features.clear();
        self.features
            .extend((0..c).map(|ci| last.pooled[ci * area..(ci + 1) * area].iter().copied().sum::<T>() * inv));
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone features".into()));
        }
        Ok(&self.features)
    }

    /// Accumulates parameter gradients given `d_features` = ∂loss/∂v for the
    /// most recent forward pass.
    pub fn backward(&mut self, d_features: &[T], layers: &[ConvLayer<T>], grads: &mut [ConvLayer<T>]) {
        let n_blocks = self.blocks.len();
        // gradient w.r.t. the last pooled map: GAP spreads evenly
        {
            let last = &self.blocks[n_blocks - 1];
            let area = last.pooled.len() / d_features.len();
            let inv = T::one() / T::of(area as f64);
            self.d_pooled.clear();
            for &g in d_features {
                self.d_pooled.extend(std::iter::repeat_n(g * inv, area));
            }
        }
        for i in (0..n_blocks).rev() {
            let block = &self.blocks[i];
            let layer = &layers[i];
            let grad = &mut grads[i];
            let (cin, cout) = (layer.in_channels, layer.out_channels);
            let hw = block.h * block.w;

            // unpool, then mask by ReLU
            self.d_act.clear();
            self.d_act.resize(cout * hw, T::zero());
            for (&idx, &g) in block.argmax.iter().zip(&self.d_pooled) {
                let idx = idx as usize;
                if block.act[idx] > T::zero() {
                    self.d_act[idx] = self.d_act[idx] + g;
                }
            }
            for (co, db) in grad.bias.iter_mut().enumerate() {
                *db = *db + self.d_act[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
            }
            // dK += dZ · colsᵀ
            T::gemm(
                cout,
                hw,
                cin * 9,
                T::one(),
                (&self.d_act, hw as isize, 1),
                (&block.cols, 1, hw as isize),
                T::one(),
                (&mut grad.kernel, (cin * 9) as isize, 1),
            );
            if i == 0 {
                break;
            }
            // dcols = Kᵀ · dZ
            self.d_cols.clear();
            self.d_cols.resize(cin * 9 * hw, T::zero());
            T::gemm(
                cin * 9,
                cout,
                hw,
                T::one(),
                (&layer.kernel, 1, (cin * 9) as isize),
                (&self.d_act, hw as isize, 1),
                T::zero(),
                (&mut self.d_cols, hw as isize, 1),
            );
            col2im(&self.d_cols, cin, block.h, block.w, &mut self.d_input);
            std::mem::swap(&mut self.d_pooled, &mut self.d_input);
        }
    }
}

/// Image feature vector `v` of length D.
pub fn backbone_forward<T: Real>(image: &UnitImage<T>, params: &ModelParameters<T>, config: &ModelConfig) -> Result<Vec<T>> {
    if !config.variant.uses_image() {
        return Err(Error::mismatch(format!("variant {} has no backbone", config.variant)));
    }
    let mut cache = BackboneCache::new();
    cache.forward(image, &params.backbone, config.backbone_shape())?;
    Ok(cache.features)
}
