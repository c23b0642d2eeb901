//! Per-pair curve plots: mean line with a ±1 std band, one color per run.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut, draw_polygon_mut};
use imageproc::point::Point;
use imageproc::rect::Rect;

use super::run::AggregateCurve;
use crate::error::{Error, Result};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;
const MARGIN: f32 = 40.0;

/// Series colors, cycled.
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn blend(c: [u8; 3], alpha: f32) -> Rgb<u8> {
    let mix = |v: u8| (v as f32 * alpha + 255.0 * (1.0 - alpha)).round() as u8;
    Rgb([mix(c[0]), mix(c[1]), mix(c[2])])
}

/// Draws the curves on a shared axis. The y range covers every band.
pub fn render_curves(series: &[(&str, &AggregateCurve)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let points = series.iter().flat_map(|(_, c)| c.points.iter());
    let max_index = points.clone().map(|p| p.index).max().unwrap_or(0).max(1) as f32;
    let lo = points.clone().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min);
    let hi = points.map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };

    let (x0, x1) = (MARGIN, WIDTH as f32 - MARGIN / 2.0);
    let (y0, y1) = (HEIGHT as f32 - MARGIN, MARGIN / 2.0);
    let x = |i: usize| x0 + (x1 - x0) * i as f32 / max_index;
    let y = |v: f64| y0 + (y1 - y0) * ((v - lo) / (hi - lo)) as f32;

    let axis = Rgb([90, 90, 90]);
    draw_line_segment_mut(&mut img, (x0, y0), (x1, y0), axis);
    draw_line_segment_mut(&mut img, (x0, y0), (x0, y1), axis);
    for k in 0..=4 {
        let yy = y0 + (y1 - y0) * k as f32 / 4.0;
        draw_line_segment_mut(&mut img, (x0 - 4.0, yy), (x0, yy), axis);
    }

    for (n, (_, curve)) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        // std band as one quad per segment
        for w in curve.points.windows(2) {
            let quad = [
                Point::new(x(w[0].index).round() as i32, y(w[0].mean + w[0].std).round() as i32),
                Point::new(x(w[1].index).round() as i32, y(w[1].mean + w[1].std).round() as i32),
                Point::new(x(w[1].index).round() as i32, y(w[1].mean - w[1].std).round() as i32),
                Point::new(x(w[0].index).round() as i32, y(w[0].mean - w[0].std).round() as i32),
            ];
            let mut poly: Vec<Point<i32>> = quad.to_vec();
            poly.dedup();
            if poly.len() >= 3 && poly.first() != poly.last() {
                draw_polygon_mut(&mut img, &poly, blend(color, 0.25));
            }
        }
    }
    for (n, (_, curve)) in series.iter().enumerate() {
        let color = Rgb(PALETTE[n % PALETTE.len()]);
        for w in curve.points.windows(2) {
            for off in [-0.5f32, 0.0, 0.5] {
                draw_line_segment_mut(
                    &mut img,
                    (x(w[0].index), y(w[0].mean) + off),
                    (x(w[1].index), y(w[1].mean) + off),
                    color,
                );
            }
        }
        for p in &curve.points {
            let (px, py) = (x(p.index).round() as i32, y(p.mean).round() as i32);
            draw_filled_rect_mut(&mut img, Rect::at(px - 2, py - 2).of_size(5, 5), color);
        }
        // legend swatch, top right, one row per series
        let lx = (WIDTH as f32 - MARGIN * 1.5) as i32;
        draw_filled_rect_mut(&mut img, Rect::at(lx, 6 + 10 * n as i32).of_size(16, 6), color);
    }
    img
}

pub fn save_curves(path: &Path, series: &[(&str, &AggregateCurve)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    render_curves(series)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::CurvePoint;

    fn curve(values: &[(f64, f64)]) -> AggregateCurve {
        AggregateCurve {
            column: "met3r".into(),
            points: values
                .iter()
                .enumerate()
                .map(|(index, &(mean, std))| CurvePoint { index, mean, std, count: 2 })
                .collect(),
        }
    }

    #[test]
    fn draws_something_in_series_color() {
        let c = curve(&[(0.1, 0.01), (0.2, 0.02), (0.15, 0.0)]);
        let img = render_curves(&[("a", &c)]);
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
    }

    #[test]
    fn flat_and_empty_curves_do_not_panic() {
        render_curves(&[("flat", &curve(&[(0.5, 0.0), (0.5, 0.0)]))]);
        render_curves(&[("single", &curve(&[(0.5, 0.0)]))]);
        render_curves(&[("empty", &curve(&[]))]);
        render_curves(&[]);
    }
}
