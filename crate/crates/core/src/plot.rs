//! Anomaly-score curve rendering: normalized score over frames with the
//! annotated anomalous ranges shaded.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::dataset::TemporalAnnotation;
use crate::error::{Result, VadError};
use crate::evaluate::ScoreSeries;

const MARGIN: u32 = 24;
const SHADE: Rgb<u8> = Rgb([250, 205, 205]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const CURVE: Rgb<u8> = Rgb([30, 80, 200]);

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the curve into a `width x height` image.
pub fn render_scores(series: &ScoreSeries, annotation: &TemporalAnnotation, width: u32, height: u32) -> Result<RgbImage> {
    let n = series.normalized.len();
    if n != annotation.n_frames {
        return Err(VadError::Annotation {
            video_id: annotation.video_id.clone(),
            msg: format!("annotation covers {} frames, scores cover {n}", annotation.n_frames),
        });
    }
    if width <= 2 * MARGIN || height <= 2 * MARGIN || n == 0 {
        return Err(VadError::Invalid(format!("plot of {n} frames needs a larger canvas than {width}x{height}")));
    }
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (left, top) = (MARGIN as i64, MARGIN as i64);
    let (right, bottom) = ((width - MARGIN) as i64, (height - MARGIN) as i64);
    let fx = |i: f64| left + ((right - left) as f64 * i / (n.max(2) - 1) as f64).round() as i64;
    let fy = |s: f64| bottom - ((bottom - top) as f64 * s.clamp(0.0, 1.0)).round() as i64;
    for &[start, end] in &annotation.anomalous_ranges {
        let (x0, x1) = (fx(start as f64 - 0.5).max(left), fx(end as f64 + 0.5).min(right));
        for x in x0..=x1 {
            line(&mut img, (x, top), (x, bottom), SHADE);
        }
    }
    for k in 1..4 {
        let y = fy(k as f64 / 4.0);
        line(&mut img, (left, y), (right, y), GRID);
    }
    line(&mut img, (left, bottom), (right, bottom), AXIS);
    line(&mut img, (left, top), (left, bottom), AXIS);
    let pts: Vec<(i64, i64)> = series
        .normalized
        .iter()
        .enumerate()
        .map(|(i, &s)| (fx(i as f64), fy(s)))
        .collect();
    for w in pts.windows(2) {
        line(&mut img, w[0], w[1], CURVE);
    }
    if let [only] = pts[..] {
        line(&mut img, only, only, CURVE);
    }
    Ok(img)
}

pub fn plot_scores(series: &ScoreSeries, annotation: &TemporalAnnotation, path: &Path, width: u32, height: u32) -> Result<()> {
    render_scores(series, annotation, width, height)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| VadError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shading_and_curve_land_where_expected() {
        let series = ScoreSeries::from_raw("v", vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        let ann = TemporalAnnotation::from_labels("v", &[0, 0, 1, 1, 0], 25);
        let img = render_scores(&series, &ann, 148, 98).unwrap();
        // frame 3 sits at x = 24 + 100 * 3 / 4 = 99, inside the shaded band
        assert_eq!(*img.get_pixel(99, 50), SHADE);
        assert_eq!(*img.get_pixel(99, 24), CURVE);
        assert_eq!(*img.get_pixel(24, 50), AXIS);
        assert_eq!(*img.get_pixel(30, 74), CURVE);
        assert_eq!(*img.get_pixel(30, 50), Rgb([255, 255, 255]));
    }

    #[test]
    fn length_mismatch_errors() {
        let series = ScoreSeries::from_raw("v", vec![0.0; 4]);
        let ann = TemporalAnnotation::from_labels("v", &[0; 5], 25);
        assert!(render_scores(&series, &ann, 200, 100).is_err());
    }
}
