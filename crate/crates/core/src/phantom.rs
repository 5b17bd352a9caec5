//! Procedural nested-ellipse phantoms.
//!
//! Healthy subjects are a few concentric soft-edged ellipses with per-ring
//! intensity, jittered pose and a faint band-limited texture. Test images
//! take held-out subjects and inject anomalies through mechanisms unrelated
//! to the training corruption: Gaussian intensity bumps, texture swaps and
//! smooth local warps.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::interior_distance;
use crate::error::{ensure, Error, Result};
use crate::image::{Image, MIN_SIDE};

/// A pixel belongs to the ground truth when the anomaly moved it by more
/// than this.
pub const GT_THRESHOLD: f32 = 0.02;

/// Allowed relative deviation of each image's anomalous area from the
/// target prevalence.
pub const PREVALENCE_TOLERANCE: f64 = 0.5;

/// Fresh placements tried per image before giving up.
pub const MAX_ATTEMPTS: usize = 50;

const SIZE_REFINEMENTS: usize = 8;
const EDGE_WIDTH_PX: f64 = 0.7;
const TEXTURE_AMPLITUDE: f64 = 0.025;
const TEXTURE_SIGMA_PX: f64 = 1.5;
const SMOOTHING_SIGMA_PX: f64 = 0.6;
const SUPPORT_MARGIN_PX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    IntensityBlob,
    TextureSwap,
    Deformation,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [
        AnomalyKind::IntensityBlob,
        AnomalyKind::TextureSwap,
        AnomalyKind::Deformation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::IntensityBlob => "intensity_blob",
            AnomalyKind::TextureSwap => "texture_swap",
            AnomalyKind::Deformation => "deformation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub n_train: usize,
    /// Healthy subjects held out for validation loss during training.
    pub n_val: usize,
    pub n_test: usize,
    /// Target fraction of anomalous pixels per test image.
    pub anomaly_prevalence: f64,
    pub seed: u64,
    pub anomaly_kinds: BTreeSet<AnomalyKind>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            image_size: 64,
            n_train: 512,
            n_val: 16,
            n_test: 48,
            anomaly_prevalence: 0.02,
            seed: 0,
            anomaly_kinds: AnomalyKind::ALL.into_iter().collect(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.image_size >= MIN_SIDE, || {
            format!("image_size {} below {MIN_SIDE}", self.image_size)
        })?;
        ensure(self.n_train >= 16, || format!("n_train {} below 16", self.n_train))?;
        ensure(self.n_test >= 8, || format!("n_test {} below 8", self.n_test))?;
        ensure(
            self.anomaly_prevalence > 0.0 && self.anomaly_prevalence < 0.2,
            || format!("anomaly_prevalence {} outside (0, 0.2)", self.anomaly_prevalence),
        )?;
        ensure(!self.anomaly_kinds.is_empty(), || "anomaly_kinds is empty".to_string())
    }
}

/// A test image with its pixel-level ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTestImage {
    pub image: Image,
    pub gt_mask: Array2<bool>,
    /// `None` for healthy controls.
    pub kind: Option<AnomalyKind>,
}

impl LabeledTestImage {
    pub fn healthy(image: Image) -> Self {
        let gt_mask = Array2::from_elem(image.dim(), false);
        LabeledTestImage {
            image,
            gt_mask,
            kind: None,
        }
    }

    pub fn anomalous_pixels(&self) -> usize {
        self.gt_mask.iter().filter(|&&v| v).count()
    }
}

/// Training, validation and labelled test images, each from its own
/// subjects.
#[derive(Debug, Clone)]
pub struct PhantomSplit {
    pub train: Vec<Image>,
    pub val: Vec<Image>,
    pub test: Vec<LabeledTestImage>,
}

/// Draws `spec.n_train` healthy subjects.
pub fn generate_healthy<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<Vec<Image>> {
    spec.validate()?;
    Ok(generate_subjects(spec.image_size, spec.n_train, rng))
}

/// Draws `count` healthy subjects of side `size`, each from its own seed.
pub fn generate_subjects<R: Rng + ?Sized>(size: usize, count: usize, rng: &mut R) -> Vec<Image> {
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    seeds
        .into_par_iter()
        .map(|seed| healthy_subject(size, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect()
}

/// Injects one anomaly into every image of `healthy`.
pub fn generate_anomalous<R: Rng + ?Sized>(
    spec: &PhantomSpec,
    healthy: &[Image],
    rng: &mut R,
) -> Result<Vec<LabeledTestImage>> {
    spec.validate()?;
    ensure(!healthy.is_empty(), || "no healthy images to corrupt".to_string())?;
    let kinds: Vec<AnomalyKind> = spec.anomaly_kinds.iter().copied().collect();
    let seeds: Vec<u64> = healthy.iter().map(|_| rng.random()).collect();
    healthy
        .par_iter()
        .zip(seeds)
        .map(|(img, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = kinds[rng.random_range(0..kinds.len())];
            inject(img, kind, spec.anomaly_prevalence, &mut rng)
        })
        .collect()
}

/// Training set plus validation and test sets built from further, unseen
/// subjects.
pub fn generate_split<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<PhantomSplit> {
    let train = generate_healthy(spec, rng)?;
    let val = generate_subjects(spec.image_size, spec.n_val, rng);
    let sources = generate_subjects(spec.image_size, spec.n_test, rng);
    let test = generate_anomalous(spec, &sources, rng)?;
    Ok(PhantomSplit { train, val, test })
}

fn healthy_subject<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Image {
    let s = size as f64;
    let mid = (s - 1.0) / 2.0;
    let cy = mid + rng.random_range(-0.04..0.04) * s;
    let cx = mid + rng.random_range(-0.04..0.04) * s;
    let a = 0.40 * s * (1.0 + rng.random_range(-0.06..0.06));
    let b = 0.33 * s * (1.0 + rng.random_range(-0.06..0.06));
    let theta: f64 = rng.random_range(-0.25..0.25);
    let (sin, cos) = theta.sin_cos();

    const RING_INTENSITY: [(f64, f64); 5] = [(0.55, 0.65), (0.30, 0.40), (0.70, 0.80), (0.45, 0.55), (0.85, 0.95)];
    let rings = rng.random_range(3..=5usize);
    let step = 0.7 / rings as f64;
    let scales: Vec<f64> = (0..rings)
        .map(|i| if i == 0 { 1.0 } else { 1.0 - i as f64 * step + rng.random_range(-0.03..0.03) })
        .collect();
    let levels: Vec<f64> = RING_INTENSITY[..rings]
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..hi))
        .collect();

    let mut noise = Array2::<f64>::zeros((size, size));
    noise.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    let mut texture = gaussian_blur(&noise, TEXTURE_SIGMA_PX);
    let std = (texture.iter().map(|v| v * v).sum::<f64>() / texture.len() as f64).sqrt();
    texture.mapv_inplace(|v| v / std.max(1e-12));

    let outer_radius = (a * b).sqrt();
    let mut support = Array2::from_elem((size, size), false);
    let mut base = Array2::<f64>::zeros((size, size));
    for ((y, x), v) in base.indexed_iter_mut() {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let u = cos * dx + sin * dy;
        let w = -sin * dx + cos * dy;
        let r = ((u / a).powi(2) + (w / b).powi(2)).sqrt();
        support[[y, x]] = r <= 1.0 + SUPPORT_MARGIN_PX / outer_radius;
        let mut value = 0.0;
        let mut below = 0.0;
        for (&scale, &level) in scales.iter().zip(&levels) {
            let inside = sigmoid((1.0 - r / scale) * scale * outer_radius / EDGE_WIDTH_PX);
            value += (level - below) * inside;
            below = level;
        }
        let outer = sigmoid((1.0 - r) * outer_radius / EDGE_WIDTH_PX);
        *v = value + TEXTURE_AMPLITUDE * texture[[y, x]] * outer;
    }
    let smooth = gaussian_blur(&base, SMOOTHING_SIGMA_PX);
    let mut out = Array2::<f32>::zeros((size, size));
    Zip::from(&mut out)
        .and(&smooth)
        .and(&support)
        .for_each(|o, &v, &inside| {
            *o = if inside { v.clamp(0.0, 1.0) as f32 } else { 0.0 };
        });
    Image::from_array_unchecked(out)
}

/// Places one anomaly of `kind`, refining its size until the ground-truth
/// area lands near `prevalence` of the image.
fn inject<R: Rng + ?Sized>(
    source: &Image,
    kind: AnomalyKind,
    prevalence: f64,
    rng: &mut R,
) -> Result<LabeledTestImage> {
    let x = source.view().mapv(|v| v as f64);
    let (h, w) = x.dim();
    let total = (h * w) as f64;
    let target = prevalence * total;
    let foreground = source.foreground(0.05);
    let depth = interior_distance(&foreground);
    let nominal_radius = (target / PI).sqrt();
    let deepest = depth.iter().cloned().fold(0.0, f64::max);
    let need = nominal_radius.min(deepest);
    let centres: Vec<(usize, usize)> = depth
        .indexed_iter()
        .filter(|&(_, &d)| d >= need && d > 0.0)
        .map(|(p, _)| p)
        .collect();
    if centres.is_empty() {
        return Err(Error::Prevalence(0));
    }

    for _ in 0..MAX_ATTEMPTS {
        let (cy, cx) = centres[rng.random_range(0..centres.len())];
        let centre = (cy as f64, cx as f64);
        let shape = AnomalyShape::draw(kind, h, w, rng);
        let mut size = shape.initial_size(target);
        let mut best: Option<(f64, Array2<f64>)> = None;
        for _ in 0..SIZE_REFINEMENTS {
            let changed = shape.apply(&x, &foreground, centre, size);
            let area = changed_area(&x, &changed) as f64;
            let ratio = area / target;
            if best.as_ref().is_none_or(|(r, _)| (ratio - 1.0).abs() < (r - 1.0).abs()) {
                best = Some((ratio, changed));
            }
            if (ratio - 1.0).abs() < 0.1 {
                break;
            }
            size *= if area == 0.0 { 2.0 } else { ratio.recip().sqrt().clamp(0.5, 2.0) };
        }
        let Some((ratio, changed)) = best else { continue };
        if (ratio - 1.0).abs() <= PREVALENCE_TOLERANCE {
            return Ok(finalize(source, &x, &changed, kind));
        }
    }
    Err(Error::Prevalence(MAX_ATTEMPTS))
}

fn changed_area(x: &Array2<f64>, changed: &Array2<f64>) -> usize {
    Zip::from(x)
        .and(changed)
        .fold(0, |n, &a, &b| n + usize::from(moved(a, b)))
}

fn moved(a: f64, b: f64) -> bool {
    (a as f32 - b as f32).abs() > GT_THRESHOLD
}

fn finalize(source: &Image, x: &Array2<f64>, changed: &Array2<f64>, kind: AnomalyKind) -> LabeledTestImage {
    let mut gt = Array2::from_elem(x.dim(), false);
    let mut out = source.view().clone();
    Zip::from(&mut out)
        .and(&mut gt)
        .and(x)
        .and(changed)
        .for_each(|o, g, &a, &b| {
            if moved(a, b) {
                *g = true;
                *o = b as f32;
            }
        });
    LabeledTestImage {
        image: Image::from_array_unchecked(out),
        gt_mask: gt,
        kind: Some(kind),
    }
}

/// Kind-specific parameters drawn once per placement attempt; `size` is the
/// free scale refined to hit the target area.
enum AnomalyShape {
    Blob { amplitude: f64 },
    Texture { noise: Array2<f64> },
    Warp { strength: f64 },
}

impl AnomalyShape {
    fn draw<R: Rng + ?Sized>(kind: AnomalyKind, h: usize, w: usize, rng: &mut R) -> Self {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        match kind {
            AnomalyKind::IntensityBlob => AnomalyShape::Blob {
                amplitude: sign * rng.random_range(0.2..0.4),
            },
            AnomalyKind::TextureSwap => {
                let amp = rng.random_range(0.08..0.15);
                let noise = Array2::from_shape_fn((h, w), |_| amp * rng.sample::<f64, _>(StandardNormal));
                AnomalyShape::Texture { noise }
            }
            AnomalyKind::Deformation => AnomalyShape::Warp {
                strength: sign * rng.random_range(0.5..0.85),
            },
        }
    }

    fn initial_size(&self, target: f64) -> f64 {
        let radius = (target / PI).sqrt();
        match self {
            // |a| exp(-d^2 / 2s^2) > thr  <=>  pi d^2 < 2 pi s^2 ln(|a| / thr)
            AnomalyShape::Blob { amplitude } => {
                (target / (2.0 * PI * (amplitude.abs() / GT_THRESHOLD as f64).ln())).sqrt()
            }
            AnomalyShape::Texture { .. } => radius,
            AnomalyShape::Warp { .. } => radius / 1.5,
        }
    }

    fn apply(&self, x: &Array2<f64>, fg: &Array2<bool>, (cy, cx): (f64, f64), size: f64) -> Array2<f64> {
        let dist2 = |y: usize, xx: usize| (y as f64 - cy).powi(2) + (xx as f64 - cx).powi(2);
        match self {
            AnomalyShape::Blob { amplitude } => Array2::from_shape_fn(x.dim(), |(y, xx)| {
                let v = x[[y, xx]];
                if !fg[[y, xx]] {
                    return v;
                }
                (v + amplitude * (-dist2(y, xx) / (2.0 * size * size)).exp()).clamp(0.0, 1.0)
            }),
            AnomalyShape::Texture { noise } => {
                let weight = Array2::from_shape_fn(x.dim(), |(y, xx)| {
                    if fg[[y, xx]] {
                        sigmoid(size - dist2(y, xx).sqrt())
                    } else {
                        0.0
                    }
                });
                let mass: f64 = weight.sum();
                let mean = if mass > 0.0 {
                    Zip::from(&weight).and(x).fold(0.0, |acc, &wt, &v| acc + wt * v) / mass
                } else {
                    0.0
                };
                let mut out = x.clone();
                Zip::from(&mut out)
                    .and(&weight)
                    .and(noise)
                    .for_each(|o, &wt, &n| {
                        *o = ((1.0 - wt) * *o + wt * (mean + n)).clamp(0.0, 1.0);
                    });
                out
            }
            AnomalyShape::Warp { strength } => Array2::from_shape_fn(x.dim(), |(y, xx)| {
                // Radial displacement k r exp(-r^2 / 2s^2) stays fold-free for |k| < 1.
                let (dy, dx) = (y as f64 - cy, xx as f64 - cx);
                let g = strength * (-(dy * dy + dx * dx) / (2.0 * size * size)).exp();
                bilinear(x, y as f64 - g * dy, xx as f64 - g * dx)
            }),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Zero outside the image.
fn bilinear(a: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = a.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            a[[yy as usize, xx as usize]]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = a.dim();
    let pass = |src: &Array2<f64>, vertical: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let off = i as isize - radius;
                    let v = if vertical {
                        src[[(y as isize + off).clamp(0, h as isize - 1) as usize, x]]
                    } else {
                        src[[y, (x as isize + off).clamp(0, w as isize - 1) as usize]]
                    };
                    k * v
                })
                .sum()
        })
    };
    pass(&pass(a, false), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PhantomSpec {
        PhantomSpec {
            n_train: 16,
            n_val: 4,
            n_test: 12,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn healthy_background_is_zero_and_values_in_range() {
        let imgs = generate_healthy(&spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(imgs.len(), 16);
        for img in &imgs {
            let v = img.view();
            for &(y, x) in &[(0, 0), (0, 63), (63, 0), (63, 63), (32, 0), (0, 32)] {
                assert_eq!(v[[y, x]], 0.0);
            }
            assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
            let zeros = v.iter().filter(|&&p| p == 0.0).count();
            assert!(zeros > 4096 / 3, "{zeros} background pixels");
            assert!(v.iter().cloned().fold(0.0, f32::max) > 0.5);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_healthy(&spec(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_healthy(&spec(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = generate_healthy(&spec(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn every_kind_hits_prevalence_and_leaves_the_rest_untouched() {
        let base = spec();
        let sources = generate_subjects(64, 12, &mut ChaCha8Rng::seed_from_u64(2));
        for kind in AnomalyKind::ALL {
            let s = PhantomSpec {
                anomaly_kinds: [kind].into_iter().collect(),
                ..base.clone()
            };
            let test = generate_anomalous(&s, &sources, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            for (lab, src) in test.iter().zip(&sources) {
                assert_eq!(lab.kind, Some(kind));
                let frac = lab.anomalous_pixels() as f64 / 4096.0;
                assert!((frac / s.anomaly_prevalence - 1.0).abs() <= PREVALENCE_TOLERANCE, "{kind:?} {frac}");
                Zip::from(lab.image.view())
                    .and(src.view())
                    .and(&lab.gt_mask)
                    .for_each(|&a, &b, &g| {
                        assert!((0.0..=1.0).contains(&a));
                        if g {
                            assert!((a - b).abs() > GT_THRESHOLD);
                        } else {
                            assert_eq!(a, b);
                        }
                    });
            }
        }
    }

    #[test]
    fn tiny_anatomy_cannot_reach_prevalence() {
        let mut a = Array2::<f32>::zeros((64, 64));
        a.slice_mut(ndarray::s![30..33, 30..33]).fill(0.5);
        let s = PhantomSpec {
            anomaly_prevalence: 0.1,
            anomaly_kinds: [AnomalyKind::IntensityBlob].into_iter().collect(),
            ..spec()
        };
        let err = generate_anomalous(&s, &[Image::new(a).unwrap()], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Prevalence(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(PhantomSpec { n_train: 15, ..spec() }.validate().is_err());
        assert!(PhantomSpec { n_test: 7, ..spec() }.validate().is_err());
        assert!(PhantomSpec { image_size: 31, ..spec() }.validate().is_err());
        assert!(PhantomSpec { anomaly_prevalence: 0.2, ..spec() }.validate().is_err());
        assert!(PhantomSpec { anomaly_kinds: BTreeSet::new(), ..spec() }.validate().is_err());
        assert!(spec().validate().is_ok());
    }

    #[test]
    fn split_sizes() {
        let split = generate_split(&spec(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(split.train.len(), 16);
        assert_eq!(split.val.len(), 4);
        assert_eq!(split.test.len(), 12);
        for t in &split.test {
            assert!(split.train.iter().chain(&split.val).all(|tr| tr.view() != t.image.view()));
        }
        assert!(split.val.iter().all(|v| !split.train.contains(v)));
    }
}
