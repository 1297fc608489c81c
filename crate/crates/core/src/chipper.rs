//! Travel-direction-up chip extraction from georeferenced rasters.
//!
//! Rasters use a single local metric frame: x grows east, y grows north, and
//! `origin` is the world position of the top-left pixel corner. Chips are
//! sampled directly with rotation (no intermediate north-up crop), bilinearly,
//! with black fill outside the raster.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::Point;

/// An 8-bit RGB chip, `out_px × out_px`.
pub type Chip = RgbImage;

/// Default ground extent of a chip side, meters.
pub const DEFAULT_EXTENT_M: f64 = 400.0;
/// Default chip side in pixels.
pub const DEFAULT_OUT_PX: u32 = 224;

#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pub pixels: RgbImage,
    pub origin: Point,
    pub pixel_size_m: f64,
}

/// Sidecar JSON stored next to a raster PNG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeoref {
    pub origin: Point,
    pub pixel_size_m: f64,
}

impl GeoRaster {
    pub fn new(pixels: RgbImage, origin: Point, pixel_size_m: f64) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::domain("raster must be at least 1x1"));
        }
        if !(pixel_size_m > 0.0 && pixel_size_m.is_finite()) {
            return Err(Error::domain(format!(
                "pixel size must be positive, got {pixel_size_m}"
            )));
        }
        Ok(GeoRaster {
            pixels,
            origin,
            pixel_size_m,
        })
    }

    /// Blank raster of `width × height` pixels.
    pub fn filled(width: u32, height: u32, origin: Point, pixel_size_m: f64, color: [u8; 3]) -> Result<Self> {
        GeoRaster::new(
            RgbImage::from_pixel(width, height, Rgb(color)),
            origin,
            pixel_size_m,
        )
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Ground width and height in meters.
    pub fn extent_m(&self) -> (f64, f64) {
        (
            f64::from(self.width()) * self.pixel_size_m,
            f64::from(self.height()) * self.pixel_size_m,
        )
    }

    pub fn center(&self) -> Point {
        let (w, h) = self.extent_m();
        Point::new(self.origin.x + w / 2.0, self.origin.y - h / 2.0)
    }

    /// Continuous pixel coordinates (column, row) of a world point, where
    /// integer values land on pixel centers.
    pub fn world_to_pixel(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.pixel_size_m - 0.5,
            (self.origin.y - p.y) / self.pixel_size_m - 0.5,
        )
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> Point {
        Point::new(
            self.origin.x + (col + 0.5) * self.pixel_size_m,
            self.origin.y - (row + 0.5) * self.pixel_size_m,
        )
    }

    /// Bilinear sample at a world point; `None` outside the raster footprint.
    pub fn sample(&self, p: Point) -> Option<[f64; 3]> {
        let (col, row) = self.world_to_pixel(p);
        let (w, h) = (f64::from(self.width()), f64::from(self.height()));
        if !(col >= -0.5 && col < w - 0.5 && row >= -0.5 && row < h - 0.5) {
            return None;
        }
        let c0 = col.floor();
        let r0 = row.floor();
        let tc = col - c0;
        let tr = row - r0;
        let clamp_c = |c: f64| c.clamp(0.0, w - 1.0) as u32;
        let clamp_r = |r: f64| r.clamp(0.0, h - 1.0) as u32;
        let (ca, cb) = (clamp_c(c0), clamp_c(c0 + 1.0));
        let (ra, rb) = (clamp_r(r0), clamp_r(r0 + 1.0));
        let px = |c: u32, r: u32| self.pixels.get_pixel(c, r).0;
        let (p00, p01, p10, p11) = (px(ca, ra), px(cb, ra), px(ca, rb), px(cb, rb));
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let top = f64::from(p00[ch]) * (1.0 - tc) + f64::from(p01[ch]) * tc;
            let bottom = f64::from(p10[ch]) * (1.0 - tc) + f64::from(p11[ch]) * tc;
            *o = top * (1.0 - tr) + bottom * tr;
        }
        Some(out)
    }

    /// Reads `<path>` (PNG) and its sidecar `<path>.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let pixels = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let sidecar = sidecar_path(path);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let georef: RasterGeoref = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: sidecar.display().to_string(),
            source,
        })?;
        GeoRaster::new(pixels, georef.origin, georef.pixel_size_m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.pixels.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let sidecar = sidecar_path(path);
        let georef = RasterGeoref {
            origin: self.origin,
            pixel_size_m: self.pixel_size_m,
        };
        let text = serde_json::to_string_pretty(&georef).map_err(|source| Error::Json {
            context: sidecar.display().to_string(),
            source,
        })?;
        fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChipSpec {
    pub center: Point,
    /// Clockwise from north, in `[0, 2π)`.
    pub heading_rad: f64,
    pub extent_m: f64,
    pub out_px: u32,
}

impl ChipSpec {
    pub fn new(center: Point, heading_rad: f64) -> Self {
        ChipSpec {
            center,
            heading_rad,
            extent_m: DEFAULT_EXTENT_M,
            out_px: DEFAULT_OUT_PX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent_m > 0.0 && self.extent_m.is_finite()) {
            return Err(Error::domain(format!("extent must be positive, got {}", self.extent_m)));
        }
        if self.out_px == 0 {
            return Err(Error::domain("out_px must be at least 1"));
        }
        if !(0.0..TAU).contains(&self.heading_rad) {
            return Err(Error::domain(format!(
                "heading {} outside [0, 2pi)",
                self.heading_rad
            )));
        }
        if !self.center.x.is_finite() || !self.center.y.is_finite() {
            return Err(Error::domain("chip center must be finite"));
        }
        Ok(())
    }

    /// World position of the center of chip pixel (`col`, `row`).
    pub fn world_point(&self, col: u32, row: u32) -> Point {
        let n = f64::from(self.out_px);
        let right = ((f64::from(col) + 0.5) / n - 0.5) * self.extent_m;
        let up = (0.5 - (f64::from(row) + 0.5) / n) * self.extent_m;
        let (sin, cos) = self.heading_rad.sin_cos();
        // forward = (sin h, cos h), right = (cos h, -sin h)
        Point::new(
            self.center.x + up * sin + right * cos,
            self.center.y + up * cos - right * sin,
        )
    }
}

/// Wraps any angle into `[0, 2π)`.
pub fn normalize_heading(rad: f64) -> f64 {
    let h = rad.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if h >= TAU {
        0.0
    } else {
        h
    }
}

/// Clockwise-from-north direction of the first edge of a polyline.
pub fn heading_from_geometry(geometry: &[Point]) -> Result<f64> {
    let (a, b) = match geometry {
        [a, b, ..] => (a, b),
        _ => return Err(Error::domain("heading needs at least two points")),
    };
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::domain("first two geometry points coincide"));
    }
    Ok(normalize_heading(dx.atan2(dy)))
}

/// Samples a travel-direction-up chip from `raster`.
pub fn extract_chip(raster: &GeoRaster, spec: &ChipSpec) -> Result<Chip> {
    spec.validate()?;
    let n = spec.out_px;
    let mut chip = RgbImage::new(n, n);
    let mut outside = 0u64;
    for row in 0..n {
        for col in 0..n {
            match raster.sample(spec.world_point(col, row)) {
                Some(v) => {
                    chip.put_pixel(col, row, Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8)));
                }
                None => outside += 1,
            }
        }
    }
    let total = u64::from(n) * u64::from(n);
    if outside * 2 > total {
        return Err(Error::Coverage {
            in_bounds: 100.0 * (total - outside) as f64 / total as f64,
        });
    }
    Ok(chip)
}

/// Channel-major (`3 × H × W`) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitImage<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> UnitImage<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        UnitImage {
            height,
            width,
            data: vec![T::zero(); 3 * height * width],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> T {
        self.data[(channel * self.height + row) * self.width + col]
    }
}

/// Divides every channel value by 255 and lays the result out channel-major.
pub fn to_unit_image<T: Float>(chip: &RgbImage) -> UnitImage<T> {
    let (w, h) = (chip.width() as usize, chip.height() as usize);
    let scale = T::from(255.0).unwrap();
    let mut data = vec![T::zero(); 3 * w * h];
    for (x, y, px) in chip.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for ch in 0..3 {
            data[(ch * h + y) * w + x] = T::from(px.0[ch]).unwrap() / scale;
        }
    }
    UnitImage {
        height: h,
        width: w,
        data,
    }
}
