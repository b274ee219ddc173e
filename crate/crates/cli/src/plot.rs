//! Minimal dependency-free chart rendering.
//!
//! Everything is rasterized by hand onto an RGB canvas: axes, tick labels
//! (a built-in 3x5 digit font), scatter points, fitted lines and histogram
//! bars. The plots are conveniences for eyeballing results — every number
//! they show also exists in a text artifact, so nothing downstream depends
//! on rendering details.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN_LEFT: u32 = 64;
const MARGIN_RIGHT: u32 = 16;
const MARGIN_TOP: u32 = 16;
const MARGIN_BOTTOM: u32 = 36;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const POINT: Rgb<u8> = Rgb([20, 80, 200]);
const LINE: Rgb<u8> = Rgb([200, 60, 40]);
const BAR_CLOSED: Rgb<u8> = Rgb([70, 120, 220]);
const BAR_OPEN: Rgb<u8> = Rgb([220, 100, 70]);

/// 3x5 bitmaps for the characters a tick label can contain. Each entry is
/// five rows of three bits, most significant bit leftmost.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        ' ' => [0; 5],
        _ => return None,
    })
}

/// Draw `text` with the top-left corner at (x, y), 2x scale (6x10 px per
/// character cell plus 2 px spacing). Unknown characters render as blanks.
fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..3u8 {
                    if row & (0b100 >> rx) != 0 {
                        for dy in 0..2i64 {
                            for dx in 0..2i64 {
                                put(img, cx + rx as i64 * 2 + dx, y + ry as i64 * 2 + dy, color);
                            }
                        }
                    }
                }
            }
        }
        cx += 8;
    }
}

fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * 8 - 2
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    // Bresenham.
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
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

fn draw_disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, color);
            }
        }
    }
}

/// Format a tick value compactly: enough digits to distinguish ticks,
/// scientific only when magnitudes demand it.
fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(0.001..10000.0).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Maps data coordinates to pixel coordinates inside the plot frame.
struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Expand degenerate ranges so every finite value maps somewhere visible.
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Frame {
        let pad = |lo: f64, hi: f64| {
            if hi - lo > 1e-12 {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Frame {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> i64 {
        let w = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) as f64;
        MARGIN_LEFT as i64 + ((x - self.x_min) / (self.x_max - self.x_min) * w).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        let h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) as f64;
        (HEIGHT - MARGIN_BOTTOM) as i64
            - ((y - self.y_min) / (self.y_max - self.y_min) * h).round() as i64
    }
}

fn draw_axes(img: &mut RgbImage, frame: &Frame) {
    let x0 = MARGIN_LEFT as i64;
    let x1 = (WIDTH - MARGIN_RIGHT) as i64;
    let y0 = MARGIN_TOP as i64;
    let y1 = (HEIGHT - MARGIN_BOTTOM) as i64;
    for i in 0..5 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let px = frame.px(fx);
        let py = frame.py(fy);
        draw_line(img, px, y0, px, y1, GRID);
        draw_line(img, x0, py, x1, py, GRID);
        let xl = tick_label(fx);
        draw_text(img, px - text_width(&xl) / 2, y1 + 6, &xl, AXIS);
        let yl = tick_label(fy);
        draw_text(img, x0 - text_width(&yl) - 6, py - 5, &yl, AXIS);
    }
    draw_line(img, x0, y1, x1, y1, AXIS);
    draw_line(img, x0, y0, x0, y1, AXIS);
}

/// Scatter of (x, y) points plus the fitted line `y = slope*x + intercept`,
/// spanning the observed x range.
pub fn line_chart(path: &Path, points: &[(f64, f64)], slope: f64, intercept: f64) -> Result<()> {
    anyhow::ensure!(!points.is_empty(), "nothing to plot");
    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut y_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut y_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    for &x in &[x_min, x_max] {
        y_min = y_min.min(slope * x + intercept);
        y_max = y_max.max(slope * x + intercept);
    }

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    let frame = Frame::new(x_min, x_max, y_min, y_max);
    draw_axes(&mut img, &frame);
    draw_line(
        &mut img,
        frame.px(frame.x_min),
        frame.py(slope * frame.x_min + intercept),
        frame.px(frame.x_max),
        frame.py(slope * frame.x_max + intercept),
        LINE,
    );
    for &(x, y) in points {
        draw_disc(&mut img, frame.px(x), frame.py(y), 4, POINT);
    }
    img.save(path)
        .with_context(|| format!("cannot write plot {}", path.display()))
}

/// Binned counts of `values` over [0, 1].
pub fn bin_unit_interval(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Overlaid closed/open uncertainty histograms on [0, 1], normalized to
/// fractions so differing split sizes stay comparable.
pub fn uncertainty_histogram(path: &Path, closed: &[f64], open: &[f64], bins: usize) -> Result<()> {
    anyhow::ensure!(bins >= 1, "need at least one bin");
    anyhow::ensure!(
        !closed.is_empty() && !open.is_empty(),
        "need uncertainties from both splits"
    );
    let closed_counts = bin_unit_interval(closed, bins);
    let open_counts = bin_unit_interval(open, bins);
    let frac = |c: &[usize], n: usize| -> Vec<f64> {
        c.iter().map(|&k| k as f64 / n as f64).collect()
    };
    let closed_f = frac(&closed_counts, closed.len());
    let open_f = frac(&open_counts, open.len());
    let y_max = closed_f
        .iter()
        .chain(open_f.iter())
        .fold(0.0f64, |a, &b| a.max(b));

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    let frame = Frame::new(0.0, 1.0, 0.0, y_max.max(1e-9));
    draw_axes(&mut img, &frame);

    // Closed bars fill the left half of each bin, open bars the right half,
    // so both distributions stay readable where they overlap.
    let bin_w = 1.0 / bins as f64;
    for b in 0..bins {
        let lo = b as f64 * bin_w;
        let mid = lo + bin_w / 2.0;
        let hi = lo + bin_w;
        let y0 = frame.py(0.0);
        for (f, x_a, x_b, color) in [
            (closed_f[b], lo, mid, BAR_CLOSED),
            (open_f[b], mid, hi, BAR_OPEN),
        ] {
            if f <= 0.0 {
                continue;
            }
            let top = frame.py(f);
            for x in frame.px(x_a) + 1..frame.px(x_b) {
                draw_line(&mut img, x, top, x, y0 - 1, color);
            }
        }
    }
    img.save(path)
        .with_context(|| format!("cannot write plot {}", path.display()))
}
