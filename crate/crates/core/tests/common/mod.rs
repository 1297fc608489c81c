#![allow(dead_code)]

use freeflow::chipper::{extract_chip, ChipSpec, GeoRaster};
use freeflow::draw::Canvas;
use freeflow::Point;
use image::{Rgb, RgbImage};

/// Arrow pointing "up" in chip-local (right, up) meters.
const ARROW: [(f64, f64); 7] = [
    (-10.0, -70.0),
    (10.0, -70.0),
    (10.0, 20.0),
    (35.0, 20.0),
    (0.0, 75.0),
    (-35.0, 20.0),
    (-10.0, 20.0),
];
const WHITE: [u8; 3] = [255, 255, 255];

/// Paints an arrow along `heading` on a 1 m/px raster, extracts a chip with
/// that heading, and returns the Pearson correlation against an upright arrow
/// drawn directly in chip pixels with the same rasterizer.
pub fn arrow_correlation(heading: f64) -> f64 {
    let (chip, reference) = arrow_pair(heading);
    pearson(&chip, &reference)
}

pub fn arrow_pair(heading: f64) -> (RgbImage, RgbImage) {
    arrow_pair_misread(heading, heading)
}

/// Arrow painted along `painted`, chip read along `read`.
pub fn arrow_pair_misread(painted: f64, read: f64) -> (RgbImage, RgbImage) {
    let heading = painted;
    let raster_px = 600;
    let origin = Point::new(5000.0, 9000.0);
    let mut canvas = Canvas::new(raster_px, raster_px, [0, 0, 0]);
    let blank = GeoRaster::new(RgbImage::new(raster_px, raster_px), origin, 1.0).unwrap();
    let center = blank.center();
    let (sin, cos) = heading.sin_cos();
    let world: Vec<(f64, f64)> = ARROW
        .iter()
        .map(|&(r, u)| {
            let p = Point::new(center.x + u * sin + r * cos, center.y + u * cos - r * sin);
            // canvas pixels span [x, x + 1)
            let (col, row) = blank.world_to_pixel(p);
            (col + 0.5, row + 0.5)
        })
        .collect();
    canvas.fill_polygon(&world, WHITE);
    let raster = GeoRaster::new(canvas.into_image(), origin, 1.0).unwrap();

    let (extent, n) = (200.0, 200u32);
    let chip = extract_chip(
        &raster,
        &ChipSpec {
            center,
            heading_rad: read,
            extent_m: extent,
            out_px: n,
        },
    )
    .unwrap();

    let mut reference = Canvas::new(n, n, [0, 0, 0]);
    let local: Vec<(f64, f64)> = ARROW
        .iter()
        .map(|&(r, u)| {
            (
                (r / extent + 0.5) * f64::from(n),
                (0.5 - u / extent) * f64::from(n),
            )
        })
        .collect();
    reference.fill_polygon(&local, WHITE);
    (chip, reference.into_image())
}

pub fn pearson(a: &RgbImage, b: &RgbImage) -> f64 {
    let xs: Vec<f64> = a.pixels().map(|p| f64::from(p[0])).collect();
    let ys: Vec<f64> = b.pixels().map(|p| f64::from(p[0])).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn smooth(p: Point, c: Point) -> [u8; 3] {
    let (x, y) = ((p.x - c.x) / 40.0, (p.y - c.y) / 40.0);
    let v = [
        128.0 + 90.0 * (0.9 * x + 0.3 * y).sin(),
        128.0 + 90.0 * (0.5 * y - 0.2 * x).cos(),
        128.0 + 60.0 * (0.4 * x * y / 3.0).sin() + 30.0 * (0.7 * y).cos(),
    ];
    v.map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// Mean absolute channel difference, on a 0–1 scale, between a chip at
/// `heading` and a heading-0 chip of the same smooth field pre-rotated by
/// −`heading` about the center.
pub fn rotation_equivariance_error(heading: f64) -> f64 {
    let px = 400;
    let origin = Point::new(-200.0, 200.0);
    let frame = GeoRaster::new(RgbImage::new(px, px), origin, 1.0).unwrap();
    let c = frame.center();
    let (sin, cos) = heading.sin_cos();
    let original = RgbImage::from_fn(px, px, |col, row| {
        Rgb(smooth(frame.pixel_to_world(f64::from(col), f64::from(row)), c))
    });
    // R'(c + (r, u)) = R(c + r·(cos h, −sin h) + u·(sin h, cos h))
    let rotated = RgbImage::from_fn(px, px, |col, row| {
        let p = frame.pixel_to_world(f64::from(col), f64::from(row));
        let (r, u) = (p.x - c.x, p.y - c.y);
        Rgb(smooth(Point::new(c.x + r * cos + u * sin, c.y - r * sin + u * cos), c))
    });
    let spec = |h: f64| ChipSpec {
        center: c,
        heading_rad: h,
        extent_m: 200.0,
        out_px: 200,
    };
    let a = extract_chip(&GeoRaster::new(original, origin, 1.0).unwrap(), &spec(heading)).unwrap();
    let b = extract_chip(&GeoRaster::new(rotated, origin, 1.0).unwrap(), &spec(0.0)).unwrap();
    let total: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| f64::from(x.abs_diff(y)))
        .sum();
    total / a.as_raw().len() as f64 / 255.0
}

use freeflow::chipper::UnitImage;
use freeflow::model::{init_parameters, MetadataScaling, ModelConfig, ModelParameters, Variant};
use freeflow::train::{objective, objective_and_gradient, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        backbone_dim: 6,
        hidden_dim: 7,
        classes: 5,
        input_px: 8,
        freeze_backbone: false,
        metadata_scaling: MetadataScaling::MinMax,
    }
}

pub fn micro_samples(n: usize, seed: u64) -> Vec<Sample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut image = UnitImage::zeros(8, 8);
            for v in &mut image.data {
                *v = rng.random::<f64>();
            }
            Sample {
                image: Some(image),
                metadata: [rng.random(), rng.random(), rng.random()],
                label: i % 5,
            }
        })
        .collect()
}

pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central differences (step `h`) against the analytic gradient of
/// CE + L2 for every trainable value. Relative error is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(variant: Variant, l2: f64, h: f64, floor: f64, n_samples: usize, weight_scale: f64) -> GradCheck {
    let config = micro_config(variant);
    let mut params: ModelParameters<f64> = init_parameters(&config, 11).unwrap();
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v *= weight_scale);
    }
    let samples = micro_samples(n_samples, 12);
    let (_, grads) =
        objective_and_gradient(&params, &config, samples.len(), |i| Ok(samples[i].clone()), l2).unwrap();
    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let analytic = grads.tensors();
    for (ti, t) in params.tensors().iter().enumerate() {
        for j in 0..t.data.len() {
            let at = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].data[j] += delta;
                objective(&p, &config, &samples, l2).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let a = analytic[ti].data[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{}[{j}] analytic {a:e} numeric {numeric:e}", t.name);
            }
        }
    }
    out
}
