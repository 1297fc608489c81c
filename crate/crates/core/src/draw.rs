//! Minimal aliased rasterizer shared by the synthetic generator and tests.
//!
//! Coordinates are continuous canvas coordinates: pixel `(x, y)` covers
//! `[x, x+1) × [y, y+1)` and is painted when its center lies inside a shape.

use image::{Rgb, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: [u8; 3]) -> Self {
        Canvas {
            img: RgbImage::from_pixel(width, height, Rgb(background)),
        }
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.img
    }

    pub fn into_image(self) -> RgbImage {
        self.img
    }

    pub fn set(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.width() && (y as u32) < self.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    /// Pixel range whose centers may fall in `[lo, hi]`, clipped to `0..len`.
    fn span(lo: f64, hi: f64, len: u32) -> std::ops::Range<i64> {
        let a = (lo - 0.5).ceil().max(0.0) as i64;
        let b = ((hi - 0.5).floor() + 1.0).min(f64::from(len)) as i64;
        a..b.max(a)
    }

    fn fill_where(&mut self, bbox: (f64, f64, f64, f64), color: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        let (x0, y0, x1, y1) = bbox;
        for y in Self::span(y0, y1, self.height()) {
            for x in Self::span(x0, x1, self.width()) {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.img.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
    }

    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
        self.fill_where((x0, y0, x1, y1), color, |x, y| {
            x >= x0 && x < x1 && y >= y0 && y < y1
        });
    }

    pub fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
        self.fill_where((cx - r, cy - r, cx + r, cy + r), color, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        });
    }

    /// Even-odd fill of a simple or self-intersecting polygon.
    pub fn fill_polygon(&mut self, pts: &[(f64, f64)], color: [u8; 3]) {
        if pts.len() < 3 {
            return;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        self.fill_where((x0, y0, x1, y1), color, |x, y| point_in_polygon(pts, x, y));
    }

    /// Paints every pixel whose center is within `width / 2` of the polyline.
    pub fn stroke_polyline(&mut self, pts: &[(f64, f64)], width: f64, color: [u8; 3]) {
        let half = width / 2.0;
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let bbox = (
                a.0.min(b.0) - half,
                a.1.min(b.1) - half,
                a.0.max(b.0) + half,
                a.1.max(b.1) + half,
            );
            self.fill_where(bbox, color, |x, y| dist_to_segment((x, y), a, b) <= half);
        }
    }
}

pub fn point_in_polygon(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}
