//! Single-channel images with intensities in `[0, 1]`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Smallest side length accepted for an [`Image`].
pub const MIN_SIDE: usize = 32;

/// A 2D single-channel image, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Array2<f32>);

impl Image {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::Parameter(format!(
                "image is {h}x{w}, both sides must be at least {MIN_SIDE}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Image(data))
    }

    /// Builds an image, clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(mut data: Array2<f32>) -> Result<Self> {
        data.mapv_inplace(clamp_unit);
        Self::new(data)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(Array2::zeros((height, width)))
    }

    pub(crate) fn from_array_unchecked(data: Array2<f32>) -> Self {
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Image(data)
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> &Array2<f32> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f32] {
        self.0
            .as_slice()
            .expect("image arrays are always standard layout")
    }

    pub fn into_array(self) -> Array2<f32> {
        self.0
    }

    /// Pixels brighter than `threshold`.
    pub fn foreground(&self, threshold: f32) -> Array2<bool> {
        self.0.mapv(|v| v > threshold)
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Ensures `a` and `b` have the same dimensions.
pub(crate) fn check_same_dim<A, B>(a: &Array2<A>, b: &Array2<B>) -> Result<()> {
    if a.dim() != b.dim() {
        let (ah, aw) = a.dim();
        let (bh, bw) = b.dim();
        return Err(Error::Shape {
            expected: vec![ah, aw],
            actual: vec![bh, bw],
        });
    }
    Ok(())
}
