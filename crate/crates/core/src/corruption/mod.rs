//! Forward synthetic-anomaly process.
//!
//! A healthy image `x0` is corrupted inside a soft mask `m` by convex
//! interpolation with a foreign patch `x_fp` taken from another healthy
//! sample: `x_t = (1 - alpha*m) * x0 + alpha*m * x_fp`.

mod distance;
mod mask;

use ndarray::{Array2, Zip};
use rand::Rng;

pub use distance::interior_distance;
pub use mask::{generate_mask, AnomalyMask, BoundingBox, MaskConfig};

use crate::error::{ensure, Error, Result};
use crate::image::{check_same_dim, Image};
use crate::schedule::Schedule;

/// Pixels above this intensity count as foreground when confining masks.
pub const FOREGROUND_THRESHOLD: f32 = 0.01;

/// Maximum circular shift of a foreign patch, as a fraction of each side.
pub const MAX_SHIFT_FRAC: f64 = 0.25;

/// One training tuple of the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSample {
    pub x_t: Image,
    pub x_0: Image,
    pub mask: AnomalyMask,
    pub t: usize,
    pub alpha: f64,
}

/// Interpolates `x0` towards `x_fp` inside `mask` with strength `alpha`.
pub fn corrupt(x0: &Image, x_fp: &Image, mask: &AnomalyMask, alpha: f64) -> Result<Image> {
    ensure((0.0..=1.0).contains(&alpha), || format!("alpha {alpha} outside [0, 1]"))?;
    check_same_dim(x0.view(), x_fp.view())?;
    check_same_dim(x0.view(), mask.view())?;
    Ok(Image::from_array_unchecked(blend(x0.view(), x_fp.view(), mask.view(), alpha)))
}

fn blend(x0: &Array2<f32>, x_fp: &Array2<f32>, m: &Array2<f32>, alpha: f64) -> Array2<f32> {
    let mut out = Array2::zeros(x0.dim());
    Zip::from(&mut out)
        .and(x0)
        .and(x_fp)
        .and(m)
        .for_each(|o, &a, &b, &m| {
            let w = alpha * m as f64;
            let v = (1.0 - w) * a as f64 + w * b as f64;
            *o = (v as f32).clamp(0.0, 1.0);
        });
    out
}

/// Draws a healthy image other than `exclude_index` and circularly shifts it
/// by up to a quarter of each side.
pub fn sample_foreign_patch<R: Rng + ?Sized>(
    dataset: &[Image],
    exclude_index: usize,
    rng: &mut R,
) -> Result<Image> {
    if dataset.len() < 2 {
        return Err(Error::Config(format!(
            "foreign patches need at least 2 images, dataset has {}",
            dataset.len()
        )));
    }
    ensure(exclude_index < dataset.len(), || {
        format!("exclude index {exclude_index} outside dataset of {}", dataset.len())
    })?;
    let mut pick = rng.random_range(0..dataset.len() - 1);
    if pick >= exclude_index {
        pick += 1;
    }
    let src = &dataset[pick];
    let (h, w) = src.dim();
    let max_dy = (h as f64 * MAX_SHIFT_FRAC).floor() as i64;
    let max_dx = (w as f64 * MAX_SHIFT_FRAC).floor() as i64;
    let dy = rng.random_range(-max_dy..=max_dy) as isize;
    let dx = rng.random_range(-max_dx..=max_dx) as isize;
    Ok(Image::from_array_unchecked(circular_shift(src.view(), dy, dx)))
}

pub(crate) fn circular_shift(a: &Array2<f32>, dy: isize, dx: isize) -> Array2<f32> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let sr = (r as isize - dy).rem_euclid(h as isize) as usize;
        let sc = (c as isize - dx).rem_euclid(w as isize) as usize;
        a[[sr, sc]]
    })
}

/// Builds a training tuple for `dataset[index]`: uniform `t` in `[1, T]`, a
/// foreground-confined mask, and a foreign patch from another image.
pub fn make_training_sample<R: Rng + ?Sized>(
    dataset: &[Image],
    index: usize,
    schedule: &Schedule,
    mask_config: &MaskConfig,
    rng: &mut R,
) -> Result<CorruptionSample> {
    let x0 = dataset.get(index).ok_or(Error::Index {
        index,
        max: dataset.len().saturating_sub(1),
    })?;
    let t = rng.random_range(1..=schedule.steps());
    let alpha = schedule.alpha_at(t)?;
    let (h, w) = x0.dim();
    let fg = x0.foreground(FOREGROUND_THRESHOLD);
    let mask = generate_mask(h, w, rng, mask_config, Some(&fg))?;
    let x_fp = sample_foreign_patch(dataset, index, rng)?;
    let x_t = corrupt(x0, &x_fp, &mask, alpha)?;
    Ok(CorruptionSample {
        x_t,
        x_0: x0.clone(),
        mask,
        t,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(v: f32) -> Image {
        Image::new(Array2::from_elem((32, 32), v)).unwrap()
    }

    fn ramp(offset: f32) -> Image {
        Image::from_clamped(Array2::from_shape_fn((32, 32), |(r, c)| {
            offset + (r * 32 + c) as f32 / 2048.0
        }))
        .unwrap()
    }

    #[test]
    fn endpoints_of_interpolation() {
        let (a, b) = (ramp(0.0), ramp(0.3));
        let m = AnomalyMask::full(32, 32);
        assert_eq!(corrupt(&a, &b, &m, 0.0).unwrap(), a);
        assert_eq!(corrupt(&a, &b, &m, 1.0).unwrap(), b);
    }

    #[test]
    fn hand_evaluated_pixel() {
        let m = AnomalyMask::new(Array2::from_elem((32, 32), 0.5)).unwrap();
        let out = corrupt(&constant(0.4), &constant(0.8), &m, 0.5).unwrap();
        assert!((out.view()[[7, 7]] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_alpha_and_shapes() {
        let m = AnomalyMask::full(32, 32);
        assert!(matches!(
            corrupt(&constant(0.1), &constant(0.2), &m, 1.5),
            Err(Error::Parameter(_))
        ));
        let other = Image::zeros(32, 40).unwrap();
        assert!(matches!(
            corrupt(&constant(0.1), &other, &m, 0.5),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn foreign_patch_from_only_candidate() {
        let data = vec![constant(0.1), ramp(0.2)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fp = sample_foreign_patch(&data, 0, &mut rng).unwrap();
        let mut sorted_fp: Vec<f32> = fp.as_slice().to_vec();
        let mut sorted_src: Vec<f32> = data[1].as_slice().to_vec();
        sorted_fp.sort_by(f32::total_cmp);
        sorted_src.sort_by(f32::total_cmp);
        assert_eq!(sorted_fp, sorted_src, "shift is a permutation of image 1");
    }

    #[test]
    fn foreign_patch_needs_two_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_foreign_patch(&[constant(0.1)], 0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn foreign_patch_deterministic() {
        let data = vec![constant(0.1), ramp(0.2), ramp(0.4)];
        let a = sample_foreign_patch(&data, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample_foreign_patch(&data, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn circular_shift_wraps() {
        let a = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f32);
        let s = circular_shift(&a, 1, -1);
        assert_eq!(s[[1, 0]], a[[0, 1]]);
        assert_eq!(s[[0, 3]], a[[2, 0]]);
    }

    #[test]
    fn training_sample_properties() {
        let data: Vec<Image> = (0..4).map(|i| ramp(0.1 * i as f32)).collect();
        let schedule = ScheduleParams::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let s = make_training_sample(&data, 2, &schedule, &MaskConfig::default(), &mut rng).unwrap();
            assert!((1..=100).contains(&s.t));
            assert_eq!(s.alpha, schedule.alpha_at(s.t).unwrap());
            for ((xt, x0), m) in s.x_t.as_slice().iter().zip(s.x_0.as_slice()).zip(s.mask.view().iter()) {
                if *m == 0.0 {
                    assert_eq!(xt.to_bits(), x0.to_bits());
                }
            }
        }
        let a = make_training_sample(&data, 0, &schedule, &MaskConfig::default(), &mut ChaCha8Rng::seed_from_u64(4));
        let b = make_training_sample(&data, 0, &schedule, &MaskConfig::default(), &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a.unwrap(), b.unwrap());
    }
}
