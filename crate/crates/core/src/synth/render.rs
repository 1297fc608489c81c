//! Procedural overhead chips for synthetic segments.

use rand::seq::index;
use rand::Rng;

use super::oracle::SynthSegmentParams;
use crate::chipper::Chip;
use crate::draw::Canvas;
use crate::rng;

/// Pale concrete, far brighter than any background texture.
pub const ROAD_COLOR: [u8; 3] = [235, 232, 222];
pub const CROSS_STREET_WIDTH_PX: f64 = 5.0;
/// Maximum sideways bulge of the main road as a fraction of the chip side.
pub const MAX_SAGITTA_FRACTION: f64 = 0.3;
const CROSS_STREET_SLOTS: usize = 8;

/// Nominal road width for a functional class before jitter.
pub fn nominal_width_px(functional_class: u8) -> i32 {
    4 + 2 * (5 - i32::from(functional_class))
}

/// Everything about a chip's layout that the seed decides.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadLayout {
    pub width_px: f64,
    /// +1 bulges right, -1 left.
    pub bulge: f64,
    pub sagitta_px: f64,
    pub cross_street_rows: Vec<f64>,
}

pub fn layout(params: &SynthSegmentParams, out_px: u32) -> RoadLayout {
    let mut rng = rng::stream(params.render_seed, rng::SYNTH_RENDER);
    let size = f64::from(out_px);
    let jitter: i32 = rng.random_range(-2..=2);
    let width_px = f64::from((nominal_width_px(params.functional_class) + jitter).max(1));
    let bulge = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let slot = 0.8 * size / CROSS_STREET_SLOTS as f64;
    let mut slots: Vec<usize> =
        index::sample(&mut rng, CROSS_STREET_SLOTS, usize::from(params.intersections)).into_vec();
    slots.sort_unstable();
    let cross_street_rows = slots
        .into_iter()
        .map(|s| 0.1 * size + (s as f64 + 0.5) * slot + rng.random_range(-0.2..=0.2) * slot)
        .collect();
    RoadLayout {
        width_px,
        bulge,
        sagitta_px: params.curvature * MAX_SAGITTA_FRACTION * size,
        cross_street_rows,
    }
}

/// Centerline of the main road from the bottom edge to the top edge.
pub fn centerline(layout: &RoadLayout, out_px: u32) -> Vec<(f64, f64)> {
    let size = f64::from(out_px);
    let cx = size / 2.0;
    let half_chord = size / 2.0;
    let steps = (out_px as usize).clamp(8, 96);
    let s = layout.sagitta_px;
    (0..=steps)
        .map(|i| {
            let y = size * (1.0 - i as f64 / steps as f64);
            let dx = if s <= 1e-9 {
                0.0
            } else {
                let radius = (half_chord * half_chord + s * s) / (2.0 * s);
                let dy = y - size / 2.0;
                (radius * radius - dy * dy).max(0.0).sqrt() - (radius - s)
            };
            (cx + layout.bulge * dx, y)
        })
        .collect()
}

fn background(canvas: &mut Canvas, area_type: u8, rng: &mut impl Rng) {
    let (w, h) = (canvas.width() as i64, canvas.height() as i64);
    let size = canvas.width().max(canvas.height()) as f64;
    match area_type {
        // rural: green speckle
        0 => {
            for y in 0..h {
                for x in 0..w {
                    let j: i32 = rng.random_range(-8..=8);
                    let dark = rng.random_bool(0.04);
                    let g = if dark { 25 + j / 2 } else { 50 + j };
                    canvas.set(x, y, [(20 + j / 2) as u8, g as u8, (15 + j / 3) as u8]);
                }
            }
        }
        // suburban: lawn with sparse gray blocks
        1 => {
            for y in 0..h {
                for x in 0..w {
                    let j: i32 = rng.random_range(-5..=5);
                    canvas.set(x, y, [(35 + j) as u8, (55 + j) as u8, (30 + j) as u8]);
                }
            }
            let blocks = ((size / 224.0).powi(2) * 30.0).round().max(1.0) as usize;
            for _ in 0..blocks {
                let bw = rng.random_range(0.035..0.07) * size;
                let bh = rng.random_range(0.035..0.07) * size;
                let x0 = rng.random_range(0.0..size);
                let y0 = rng.random_range(0.0..size);
                let shade: u8 = rng.random_range(80..=95);
                canvas.fill_rect(x0, y0, x0 + bw, y0 + bh, [shade, shade, shade - 5]);
            }
        }
        // urban: dense grid of gray blocks on pale paving
        _ => {
            for y in 0..h {
                for x in 0..w {
                    let j: i32 = rng.random_range(-4..=4);
                    canvas.set(x, y, [(70 + j) as u8, (68 + j) as u8, (64 + j) as u8]);
                }
            }
            let pitch = (size * 0.08).max(3.0);
            let block = pitch * 0.75;
            let ox = rng.random_range(0.0..pitch);
            let oy = rng.random_range(0.0..pitch);
            let mut y0 = oy - pitch;
            while y0 < size {
                let mut x0 = ox - pitch;
                while x0 < size {
                    let shade: u8 = rng.random_range(95..=110);
                    canvas.fill_rect(x0, y0, x0 + block, y0 + block, [shade, shade, shade + 6]);
                    x0 += pitch;
                }
                y0 += pitch;
            }
        }
    }
}

/// Renders the chip for one synthetic segment. The posted limit is not drawn.
pub fn render_segment(params: &SynthSegmentParams, out_px: u32) -> Chip {
    let layout = layout(params, out_px);
    // background draws from its own stream so layout stays stable
    let mut bg_rng = rng::stream(params.render_seed, rng::SYNTH_RENDER + 100);
    let size = f64::from(out_px);
    let mut canvas = Canvas::new(out_px, out_px, [0, 0, 0]);
    background(&mut canvas, params.area_type, &mut bg_rng);
    for &row in &layout.cross_street_rows {
        let half = CROSS_STREET_WIDTH_PX / 2.0;
        canvas.fill_rect(0.0, row - half, size, row + half, ROAD_COLOR);
    }
    canvas.stroke_polyline(&centerline(&layout, out_px), layout.width_px, ROAD_COLOR);
    canvas.into_image()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64, n: u8, seed: u64) -> SynthSegmentParams {
        SynthSegmentParams {
            functional_class: 3,
            area_type: 1,
            curvature: c,
            intersections: n,
            limit_offset_mph: 0,
            render_seed: seed,
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = params(0.4, 2, 99);
        assert_eq!(render_segment(&p, 64), render_segment(&p, 64));
    }

    #[test]
    fn straight_road_is_a_vertical_band() {
        for area in 0..=2 {
            for seed in 0..5 {
                let p = SynthSegmentParams { area_type: area, ..params(0.0, 0, seed) };
                let img = render_segment(&p, 224);
                let width = layout(&p, 224).width_px;
                let center = 112.0;
                let road: Vec<_> = img
                    .enumerate_pixels()
                    .filter(|(_, _, px)| px.0 == ROAD_COLOR)
                    .map(|(x, _, _)| x as f64 + 0.5)
                    .collect();
                assert!(!road.is_empty());
                let inside = road
                    .iter()
                    .filter(|x| (*x - center).abs() <= width / 2.0 + 1.0)
                    .count();
                assert!(inside as f64 >= 0.95 * road.len() as f64);
            }
        }
    }

    #[test]
    fn intersections_are_visible() {
        assert_ne!(render_segment(&params(0.3, 0, 5), 96), render_segment(&params(0.3, 4, 5), 96));
    }

    #[test]
    fn curvature_is_visible() {
        assert_ne!(render_segment(&params(0.0, 1, 5), 96), render_segment(&params(0.8, 1, 5), 96));
    }

    #[test]
    fn posted_limit_is_not_drawn() {
        let a = SynthSegmentParams { limit_offset_mph: -10, ..params(0.5, 2, 8) };
        let b = SynthSegmentParams { limit_offset_mph: 10, ..a };
        assert_eq!(render_segment(&a, 64), render_segment(&b, 64));
    }

    #[test]
    fn widths_of_adjacent_classes_overlap() {
        let widths = |f: u8| -> std::collections::BTreeSet<i64> {
            (0..200)
                .map(|seed| {
                    let p = SynthSegmentParams { functional_class: f, ..params(0.0, 0, seed) };
                    layout(&p, 64).width_px as i64
                })
                .collect()
        };
        for f in 1..5 {
            assert!(!widths(f).is_disjoint(&widths(f + 1)));
        }
    }

    #[test]
    fn centerline_spans_the_chip() {
        let p = params(1.0, 0, 1);
        let l = layout(&p, 100);
        let pts = centerline(&l, 100);
        assert_eq!(pts.first().unwrap().1, 100.0);
        assert_eq!(pts.last().unwrap().1, 0.0);
        assert!((pts.first().unwrap().0 - 50.0).abs() < 1e-9);
        let max_dev = pts.iter().map(|p| (p.0 - 50.0).abs()).fold(0.0, f64::max);
        assert!((max_dev - 30.0).abs() < 0.5, "{max_dev}");
    }

    #[test]
    fn tiny_chips_render() {
        let img = render_segment(&params(0.5, 4, 3), 8);
        assert_eq!(img.dimensions(), (8, 8));
    }
}
