use super::Real;

/// Dense `[batch, channels, height, width]` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: [usize; 4],
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<F>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data/shape mismatch");
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per channel plane.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements per batch item.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[F] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [F] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!(a.batch(), b.batch());
        assert_eq!((a.height(), a.width()), (b.height(), b.width()));
        let mut out = Tensor::zeros([a.batch(), a.channels() + b.channels(), a.height(), a.width()]);
        let (la, lb) = (a.sample_len(), b.sample_len());
        for n in 0..a.batch() {
            let dst = out.sample_mut(n);
            dst[..la].copy_from_slice(a.sample(n));
            dst[la..la + lb].copy_from_slice(b.sample(n));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let (n, c, h, w) = (self.batch(), self.channels(), self.height(), self.width());
        assert!(first <= c);
        let mut a = Tensor::zeros([n, first, h, w]);
        let mut b = Tensor::zeros([n, c - first, h, w]);
        let la = a.sample_len();
        for i in 0..n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..la]);
            b.sample_mut(i).copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Self {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        let ow = 2 * w;
        for (plane, src) in out.data.chunks_exact_mut(4 * h * w).zip(self.data.chunks_exact(h * w)) {
            for y in 0..2 * h {
                let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                let dst = &mut plane[y * ow..(y + 1) * ow];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = row[x / 2];
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::upsample2`]: sums each 2x2 block.
    pub fn upsample2_backward(&self) -> Self {
        let [n, c, h2, w2] = self.shape;
        let (h, w) = (h2 / 2, w2 / 2);
        let mut out = Tensor::zeros([n, c, h, w]);
        for (dst, src) in out.data.chunks_exact_mut(h * w).zip(self.data.chunks_exact(h2 * w2)) {
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
