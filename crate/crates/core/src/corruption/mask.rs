//! Soft random-shape anomaly masks.
//!
//! A mask is the union of a few random blobs. Each blob is a polygon whose
//! vertices jitter around a randomly oriented ellipse. The binary union is
//! softened by passing its interior distance transform through
//! `min(1, d / soften_px)`, so values ramp from the boundary inwards.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::distance::interior_distance;
use crate::error::{ensure, Error, Result};
use crate::image::MIN_SIDE;

const VERTICES_MIN: usize = 6;
const VERTICES_MAX: usize = 12;
/// Angular jitter of each vertex as a fraction of the vertex spacing.
const ANGLE_JITTER: f64 = 0.3;
/// Vertex radii are scaled by a factor drawn from this range.
const RADIUS_JITTER: (f64, f64) = (0.75, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub blob_count_min: usize,
    pub blob_count_max: usize,
    /// Blob semi-axes as fractions of `min(height, width)`.
    pub radius_frac_min: f64,
    pub radius_frac_max: f64,
    /// Width in pixels of the boundary ramp. `0` yields a binary mask.
    pub soften_px: f64,
    pub max_retries: usize,
    /// Accepted support area, as fractions of the image area.
    pub area_frac_min: f64,
    pub area_frac_max: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            blob_count_min: 1,
            blob_count_max: 3,
            radius_frac_min: 0.05,
            radius_frac_max: 0.25,
            soften_px: 4.0,
            max_retries: 20,
            area_frac_min: 0.002,
            area_frac_max: 0.6,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            1 <= self.blob_count_min && self.blob_count_min <= self.blob_count_max,
            || "mask blob counts must satisfy 1 <= min <= max".into(),
        )?;
        ensure(
            0.0 < self.radius_frac_min && self.radius_frac_min <= self.radius_frac_max,
            || "mask radius fractions must satisfy 0 < min <= max".into(),
        )?;
        ensure(self.soften_px >= 0.0 && self.soften_px.is_finite(), || {
            "mask soften_px must be finite and nonnegative".into()
        })?;
        ensure(self.max_retries >= 1, || "mask max_retries must be >= 1".into())?;
        ensure(
            0.0 <= self.area_frac_min && self.area_frac_min < self.area_frac_max && self.area_frac_max <= 1.0,
            || "mask area fractions must satisfy 0 <= min < max <= 1".into(),
        )
    }
}

/// Row/column bounds of the nonzero region, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMask {
    data: Array2<f32>,
    support: Option<BoundingBox>,
}

impl AnomalyMask {
    /// Wraps an arbitrary field; values must lie in `[0, 1]`.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("mask value {v} outside [0, 1]")));
        }
        let support = bounding_box(&data);
        Ok(AnomalyMask { data, support })
    }

    /// `m = 1` everywhere.
    pub fn full(height: usize, width: usize) -> Self {
        AnomalyMask {
            data: Array2::ones((height, width)),
            support: Some(BoundingBox {
                row_start: 0,
                row_end: height,
                col_start: 0,
                col_end: width,
            }),
        }
    }

    pub fn view(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn support(&self) -> Option<BoundingBox> {
        self.support
    }

    /// Number of pixels with `m > 0`.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}

fn bounding_box(data: &Array2<f32>) -> Option<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for ((r, c), &v) in data.indexed_iter() {
        if v > 0.0 {
            let b = bb.get_or_insert(BoundingBox {
                row_start: r,
                row_end: r + 1,
                col_start: c,
                col_end: c + 1,
            });
            b.row_start = b.row_start.min(r);
            b.row_end = b.row_end.max(r + 1);
            b.col_start = b.col_start.min(c);
            b.col_end = b.col_end.max(c + 1);
        }
    }
    bb
}

/// Generates a soft mask. When `foreground` is given, blobs are centred on
/// and confined to foreground pixels.
pub fn generate_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    rng: &mut R,
    config: &MaskConfig,
    foreground: Option<&Array2<bool>>,
) -> Result<AnomalyMask> {
    ensure(height >= MIN_SIDE && width >= MIN_SIDE, || {
        format!("mask size {height}x{width} below minimum {MIN_SIDE}")
    })?;
    config.validate()?;
    if let Some(fg) = foreground {
        if fg.dim() != (height, width) {
            return Err(Error::Shape {
                expected: vec![height, width],
                actual: vec![fg.nrows(), fg.ncols()],
            });
        }
    }
    let fg_pixels: Vec<(usize, usize)> = foreground
        .map(|fg| {
            fg.indexed_iter()
                .filter_map(|(idx, &v)| v.then_some(idx))
                .collect()
        })
        .unwrap_or_default();
    let foreground = foreground.filter(|_| !fg_pixels.is_empty());

    let total = (height * width) as f64;
    for _ in 0..config.max_retries {
        let count = rng.random_range(config.blob_count_min..=config.blob_count_max);
        let mut binary = Array2::from_elem((height, width), false);
        for _ in 0..count {
            let center = if foreground.is_some() {
                let (r, c) = fg_pixels[rng.random_range(0..fg_pixels.len())];
                (r as f64 + 0.5, c as f64 + 0.5)
            } else {
                (
                    rng.random_range(0.0..height as f64),
                    rng.random_range(0.0..width as f64),
                )
            };
            let polygon = random_polygon(center, height.min(width) as f64, rng, config);
            rasterize_polygon(&polygon, &mut binary);
        }
        if let Some(fg) = foreground {
            ndarray::Zip::from(&mut binary).and(fg).for_each(|b, &f| *b &= f);
        }
        let area = binary.iter().filter(|&&b| b).count() as f64 / total;
        if area == 0.0 || area < config.area_frac_min || area > config.area_frac_max {
            continue;
        }
        return Ok(soften(&binary, config.soften_px));
    }
    Err(Error::DegenerateMask(config.max_retries))
}

fn random_polygon<R: Rng + ?Sized>(
    center: (f64, f64),
    side: f64,
    rng: &mut R,
    config: &MaskConfig,
) -> Vec<(f64, f64)> {
    let n = rng.random_range(VERTICES_MIN..=VERTICES_MAX);
    let ry = side * rng.random_range(config.radius_frac_min..=config.radius_frac_max);
    let rx = side * rng.random_range(config.radius_frac_min..=config.radius_frac_max);
    let theta = rng.random_range(0.0..TAU);
    let (sin_t, cos_t) = theta.sin_cos();
    let spacing = TAU / n as f64;
    (0..n)
        .map(|k| {
            let phi = (k as f64 + rng.random_range(-ANGLE_JITTER..ANGLE_JITTER)) * spacing;
            let scale = rng.random_range(RADIUS_JITTER.0..=RADIUS_JITTER.1);
            let (u, v) = (rx * scale * phi.cos(), ry * scale * phi.sin());
            (
                center.0 + u * sin_t + v * cos_t,
                center.1 + u * cos_t - v * sin_t,
            )
        })
        .collect()
}

/// Marks pixels whose centres fall inside the polygon (even-odd rule).
fn rasterize_polygon(poly: &[(f64, f64)], out: &mut Array2<bool>) {
    let (h, w) = out.dim();
    let (mut r0, mut r1, mut c0, mut c1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(r, c) in poly {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    let rows = (r0.floor().max(0.0) as usize)..(r1.ceil().clamp(0.0, h as f64) as usize);
    let cols = (c0.floor().max(0.0) as usize)..(c1.ceil().clamp(0.0, w as f64) as usize);
    for r in rows {
        let py = r as f64 + 0.5;
        for c in cols.clone() {
            let px = c as f64 + 0.5;
            let mut inside = false;
            let mut j = poly.len() - 1;
            for i in 0..poly.len() {
                let (yi, xi) = poly[i];
                let (yj, xj) = poly[j];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            if inside {
                out[[r, c]] = true;
            }
        }
    }
}

fn soften(binary: &Array2<bool>, soften_px: f64) -> AnomalyMask {
    let data = if soften_px <= 0.0 {
        binary.mapv(|b| if b { 1.0 } else { 0.0 })
    } else {
        interior_distance(binary).mapv(|d| (d / soften_px).min(1.0) as f32)
    };
    AnomalyMask::new(data).expect("softened values lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_in_unit_interval_with_soft_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = generate_mask(64, 64, &mut rng, &MaskConfig::default(), None).unwrap();
            assert!(m.view().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(m.view().iter().any(|&v| v > 0.0 && v < 1.0));
            let frac = m.area() as f64 / 4096.0;
            assert!((0.002..=0.6).contains(&frac));
        }
    }

    #[test]
    fn zero_softening_is_binary() {
        let cfg = MaskConfig {
            soften_px: 0.0,
            ..MaskConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = generate_mask(64, 64, &mut rng, &cfg, None).unwrap();
        assert!(m.view().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.area() > 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_mask(64, 64, &mut ChaCha8Rng::seed_from_u64(42), &MaskConfig::default(), None)
            .unwrap();
        let b = generate_mask(64, 64, &mut ChaCha8Rng::seed_from_u64(42), &MaskConfig::default(), None)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn confined_to_foreground() {
        let fg = Array2::from_shape_fn((64, 64), |(r, c)| (16..48).contains(&r) && (16..48).contains(&c));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = generate_mask(64, 64, &mut rng, &MaskConfig::default(), Some(&fg)).unwrap();
            for ((idx, &v), &f) in m.view().indexed_iter().zip(fg.iter()) {
                assert!(f || v == 0.0, "mask leaks outside foreground at {idx:?}");
            }
        }
    }

    #[test]
    fn support_box_covers_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = generate_mask(48, 40, &mut rng, &MaskConfig::default(), None).unwrap();
        let bb = m.support().unwrap();
        for ((r, c), &v) in m.view().indexed_iter() {
            if v > 0.0 {
                assert!((bb.row_start..bb.row_end).contains(&r));
                assert!((bb.col_start..bb.col_end).contains(&c));
            }
        }
    }

    #[test]
    fn impossible_area_bounds_error_out() {
        let cfg = MaskConfig {
            area_frac_min: 0.95,
            area_frac_max: 1.0,
            max_retries: 3,
            ..MaskConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_mask(64, 64, &mut rng, &cfg, None),
            Err(Error::DegenerateMask(3))
        ));
    }

    #[test]
    fn rejects_small_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_mask(16, 64, &mut rng, &MaskConfig::default(), None).is_err());
    }
}
