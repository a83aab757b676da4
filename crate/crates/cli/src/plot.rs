//! Minimal polyline plots for loss curves.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 4] = [[214, 39, 40], [31, 119, 180], [44, 160, 44], [148, 103, 189]];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct SeriesMeta {
    pub name: String,
    pub color: [u8; 3],
    pub points: usize,
}

/// Axes metadata written next to the PNG.
#[derive(Debug, Serialize)]
pub struct Axes {
    pub x_label: String,
    pub y_label: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width: u32,
    pub height: u32,
    pub margin: u32,
    pub series: Vec<SeriesMeta>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

fn line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if (0..img.width() as i64).contains(&x0) && (0..img.height() as i64).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn render(series: &[Series], x_label: &str, y_label: &str, png: &Path) -> image::ImageResult<Axes> {
    let (x_min, x_max, y_min, y_max) = bounds(series);
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (left, right) = (MARGIN as i64, (WIDTH - MARGIN) as i64);
    let (top, bottom) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (left, bottom), (right, bottom), axis);
    line(&mut img, (left, top), (left, bottom), axis);

    let to_px = |(x, y): (f64, f64)| {
        let px = left as f64 + (x - x_min) / (x_max - x_min) * (right - left) as f64;
        let py = bottom as f64 - (y - y_min) / (y_max - y_min) * (bottom - top) as f64;
        (px.round() as i64, py.round() as i64)
    };
    let mut meta = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&p| to_px(p))
            .collect();
        for w in finite.windows(2) {
            line(&mut img, w[0], w[1], Rgb(color));
        }
        meta.push(SeriesMeta {
            name: s.name.clone(),
            color,
            points: finite.len(),
        });
    }
    img.save(png)?;
    Ok(Axes {
        x_label: x_label.into(),
        y_label: y_label.into(),
        x_min,
        x_max,
        y_min,
        y_max,
        width: WIDTH,
        height: HEIGHT,
        margin: MARGIN,
        series: meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_reports_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("p.png");
        let s = vec![
            Series {
                name: "a".into(),
                points: vec![(1.0, 2.0), (2.0, 1.0), (3.0, f64::NAN)],
            },
            Series {
                name: "b".into(),
                points: vec![(1.0, 0.5), (3.0, 4.0)],
            },
        ];
        let axes = render(&s, "step", "loss", &png).unwrap();
        assert_eq!((axes.x_min, axes.x_max, axes.y_min, axes.y_max), (1.0, 3.0, 0.5, 4.0));
        assert_eq!(axes.series[0].points, 2);
        let img = image::open(&png).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        assert!(img.pixels().any(|p| p.0 == PALETTE[1]));
    }
}
