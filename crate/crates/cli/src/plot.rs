//! Static PNG output: image tiles and simple line charts.

use std::path::Path;

use heal_core::{Error, Result};
use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;

const TILE_GAP: u32 = 2;

/// Writes `tiles` side by side as one grayscale PNG, values clamped to
/// `[0, 1]` and each pixel magnified `scale` times.
pub fn save_tiles(path: &Path, tiles: &[&Array2<f32>], scale: u32) -> Result<()> {
    let Some(first) = tiles.first() else {
        return Err(Error::Parameter("no tiles to draw".into()));
    };
    let (h, w) = first.dim();
    if tiles.iter().any(|t| t.dim() != (h, w)) {
        return Err(Error::Parameter("tiles differ in size".into()));
    }
    let scale = scale.max(1);
    let tw = w as u32 * scale;
    let th = h as u32 * scale;
    let n = tiles.len() as u32;
    let mut img = GrayImage::from_pixel(n * tw + (n - 1) * TILE_GAP, th, Luma([255]));
    for (k, tile) in tiles.iter().enumerate() {
        let x0 = k as u32 * (tw + TILE_GAP);
        for ((r, c), &v) in tile.indexed_iter() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(x0 + c as u32 * scale + dx, r as u32 * scale + dy, Luma([g]));
                }
            }
        }
    }
    save(img.save(path), path)
}

fn save(result: image::ImageResult<()>, path: &Path) -> Result<()> {
    result.map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
    /// Draw square markers at the points.
    pub markers: bool,
}

pub const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

const WIDTH: u32 = 720;
const HEIGHT: u32 = 420;
const LEFT: u32 = 70;
const RIGHT: u32 = 200;
const TOP: u32 = 40;
const BOTTOM: u32 = 50;
const FONT_SCALE: u32 = 2;
const TICKS: usize = 5;

/// Renders series over shared axes with tick labels, a title and a legend.
pub fn save_line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(Error::Parameter("nothing to plot".into()));
    }
    if x1 - x0 < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.1).max(0.01);
    y0 = (y0 - pad).max(0.0);
    y1 += pad;

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (px0, px1) = (LEFT as f64, (WIDTH - RIGHT) as f64);
    let (py0, py1) = ((HEIGHT - BOTTOM) as f64, TOP as f64);
    let to_px = |x: f64, y: f64| (px0 + (x - x0) / (x1 - x0) * (px1 - px0), py0 + (y - y0) / (y1 - y0) * (py1 - py0));

    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([225, 225, 225]);
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let (gx, gy) = to_px(x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        line(&mut img, (gx, py0), (gx, py1), grid, 1);
        line(&mut img, (px0, gy), (px1, gy), grid, 1);
        let xl = tick_label(x0 + f * (x1 - x0), x1 - x0);
        text(&mut img, gx as i64 - text_width(&xl) as i64 / 2, py0 as i64 + 8, &xl, axis);
        let yl = tick_label(y0 + f * (y1 - y0), y1 - y0);
        text(&mut img, px0 as i64 - 8 - text_width(&yl) as i64, gy as i64 - 5, &yl, axis);
    }
    line(&mut img, (px0, py0), (px1, py0), axis, 1);
    line(&mut img, (px0, py0), (px0, py1), axis, 1);
    text(&mut img, (WIDTH / 2) as i64 - text_width(title) as i64 / 2, 12, title, axis);
    text(&mut img, ((px0 + px1) / 2.0) as i64 - text_width(x_label) as i64 / 2, (HEIGHT - 20) as i64, x_label, axis);
    text(&mut img, 8, (TOP - 16) as i64, y_label, axis);

    for (k, s) in series.iter().enumerate() {
        let c = Rgb(s.color);
        let px: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| to_px(x, y)).collect();
        for w in px.windows(2) {
            line(&mut img, w[0], w[1], c, 2);
        }
        if s.markers {
            for &(x, y) in &px {
                fill(&mut img, x as i64 - 3, y as i64 - 3, 7, 7, c);
            }
        }
        let ly = (TOP + 10 + 22 * k as u32) as i64;
        let lx = (WIDTH - RIGHT + 16) as i64;
        fill(&mut img, lx, ly + 3, 18, 4, c);
        text(&mut img, lx + 24, ly, &s.label, axis);
    }
    save(img.save(path), path)
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 10.0 {
        format!("{}", v.round() as i64)
    } else if span >= 0.5 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn fill(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
    for yy in y.max(0)..(y + h).min(img.height() as i64) {
        for xx in x.max(0)..(x + w).min(img.width() as i64) {
            img.put_pixel(xx as u32, yy as u32, c);
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>, width: i64) {
    let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let f = i as f64 / n as f64;
        let x = (a.0 + f * (b.0 - a.0)).round() as i64;
        let y = (a.1 + f * (b.1 - a.1)).round() as i64;
        fill(img, x - (width - 1) / 2, y - (width - 1) / 2, width, width, c);
    }
}

/// 3x5 glyphs, one row per entry, bit 2 leftmost.
fn glyph(ch: char) -> [u8; 5] {
    match ch.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        ':' => [0, 2, 0, 2, 0],
        '_' => [0, 0, 0, 0, 7],
        '=' => [0, 7, 0, 7, 0],
        '(' => [1, 2, 2, 2, 1],
        ')' => [4, 2, 2, 2, 4],
        _ => [0; 5],
    }
}

fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * 4 * FONT_SCALE
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: Rgb<u8>) {
    let fs = FONT_SCALE as i64;
    for (k, ch) in s.chars().enumerate() {
        let gx = x + k as i64 * 4 * fs;
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    fill(img, gx + col * fs, y + row as i64 * fs, fs, fs, c);
                }
            }
        }
    }
}
