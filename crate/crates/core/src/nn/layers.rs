use rand::Rng;

use super::{matmul, Grads, ParamId, ParamStore, Real, Tensor};

/// 2D convolution with square kernels, via im2col and a single GEMM per
/// batch item.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    /// LeCun-uniform weights scaled by `gain`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = ps.add_uniform(format!("{name}.weight"), vec![cout, cin, kernel, kernel], bound, rng);
        let bias = ps.add_const(format!("{name}.bias"), vec![cout], 0.0);
        Conv2d {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        assert_eq!(x.channels(), self.cin, "conv input channels");
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.out_dim(h, w);
        let p = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        let weight = ps.get(self.weight);
        let bias = ps.get(self.bias);
        let mut y = Tensor::zeros([x.batch(), self.cout, oh, ow]);
        let mut col = if self.pointwise() { Vec::new() } else { vec![F::zero(); kk * p] };
        for n in 0..x.batch() {
            let src = if self.pointwise() {
                x.sample(n)
            } else {
                self.im2col(x.sample(n), h, w, oh, ow, &mut col);
                &col
            };
            let out = y.sample_mut(n);
            for (plane, &b) in out.chunks_exact_mut(p).zip(bias) {
                plane.fill(b);
            }
            matmul(self.cout, kk, p, weight, false, src, false, out, F::one());
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Tensor<F> {
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (dy.height(), dy.width());
        let p = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        let weight = ps.get(self.weight);
        let mut dx = Tensor::zeros(x.shape());
        let mut col = if self.pointwise() { Vec::new() } else { vec![F::zero(); kk * p] };
        for n in 0..x.batch() {
            let g = dy.sample(n);
            {
                let db = grads.get_mut(self.bias);
                for (d, plane) in db.iter_mut().zip(g.chunks_exact(p)) {
                    *d += plane.iter().copied().sum::<F>();
                }
            }
            if self.pointwise() {
                matmul(self.cout, p, kk, g, false, x.sample(n), true, grads.get_mut(self.weight), F::one());
                matmul(kk, self.cout, p, weight, true, g, false, dx.sample_mut(n), F::zero());
            } else {
                self.im2col(x.sample(n), h, w, oh, ow, &mut col);
                matmul(self.cout, p, kk, g, false, &col, true, grads.get_mut(self.weight), F::one());
                // The columns are dead once the weight gradient is formed.
                matmul(kk, self.cout, p, weight, true, g, false, &mut col, F::zero());
                self.col2im(&col, h, w, oh, ow, dx.sample_mut(n));
            }
        }
        dx
    }

    fn im2col<F: Real>(&self, x: &[F], h: usize, w: usize, oh: usize, ow: usize, col: &mut [F]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad as isize);
        let p = oh * ow;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut col[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(F::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            // ix = ox + kj - pad must land in [0, w).
                            let shift = kj as isize - pad;
                            let lo = (-shift).clamp(0, ow as isize) as usize;
                            let hi = (w as isize - shift).clamp(0, ow as isize) as usize;
                            dst[..lo].fill(F::zero());
                            if hi > lo {
                                let start = (lo as isize + shift) as usize;
                                dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                            }
                            dst[hi.max(lo)..].fill(F::zero());
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kj) as isize - pad;
                                *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { F::zero() };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Real>(&self, col: &[F], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [F]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad as isize);
        let p = oh * ow;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &col[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &row[oy * ow..(oy + 1) * ow];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            let shift = kj as isize - pad;
                            let lo = (-shift).clamp(0, ow as isize) as usize;
                            let hi = (w as isize - shift).clamp(0, ow as isize) as usize;
                            if hi > lo {
                                let start = (lo as isize + shift) as usize;
                                for (d, &g) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                    *d += g;
                                }
                            }
                            continue;
                        }
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    channels: usize,
    groups: usize,
    eps: f64,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache<F> {
    xhat: Tensor<F>,
    rstd: Vec<f64>,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<F: Real>(ps: &mut ParamStore<F>, name: &str, channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        GroupNorm {
            gamma: ps.add_const(format!("{name}.gamma"), vec![channels], 1.0),
            beta: ps.add_const(format!("{name}.beta"), vec![channels], 0.0),
            channels,
            groups,
            eps: Self::EPS,
        }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> (Tensor<F>, GroupNormCache<F>) {
        assert_eq!(x.channels(), self.channels, "group norm channels");
        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let plane = x.plane();
        let cpg = self.channels / self.groups;
        let glen = cpg * plane;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut rstd = Vec::with_capacity(x.batch() * self.groups);
        for n in 0..x.batch() {
            let src = x.sample(n);
            let xh = xhat.sample_mut(n);
            for g in 0..self.groups {
                let range = g * glen..(g + 1) * glen;
                let vals = &src[range.clone()];
                let mean = vals.iter().map(|v| v.f64()).sum::<f64>() / glen as f64;
                let var = vals.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / glen as f64;
                let r = 1.0 / (var + self.eps).sqrt();
                rstd.push(r);
                for (o, v) in xh[range].iter_mut().zip(vals) {
                    *o = F::lit((v.f64() - mean) * r);
                }
            }
            let out = y.sample_mut(n);
            for c in 0..self.channels {
                let (gm, bt) = (gamma[c], beta[c]);
                let r = c * plane..(c + 1) * plane;
                for (o, &v) in out[r.clone()].iter_mut().zip(&xh[r]) {
                    *o = gm * v + bt;
                }
            }
        }
        (y, GroupNormCache { xhat, rstd })
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &GroupNormCache<F>,
        dy: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Tensor<F> {
        let gamma = ps.get(self.gamma);
        let plane = dy.plane();
        let cpg = self.channels / self.groups;
        let glen = cpg * plane;
        let mut dgamma = vec![0.0f64; self.channels];
        let mut dbeta = vec![0.0f64; self.channels];
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![F::zero(); glen];
        for n in 0..dy.batch() {
            let g_s = dy.sample(n);
            let xh_s = cache.xhat.sample(n);
            let dx_s = dx.sample_mut(n);
            for g in 0..self.groups {
                let base = g * glen;
                let mut sum_d = 0.0f64;
                let mut sum_dx = 0.0f64;
                for cl in 0..cpg {
                    let c = g * cpg + cl;
                    let r = base + cl * plane..base + (cl + 1) * plane;
                    let mut dg = 0.0f64;
                    let mut db = 0.0f64;
                    for ((d, &gy), &xh) in dxhat[cl * plane..(cl + 1) * plane]
                        .iter_mut()
                        .zip(&g_s[r.clone()])
                        .zip(&xh_s[r])
                    {
                        let (gy64, xh64) = (gy.f64(), xh.f64());
                        dg += gy64 * xh64;
                        db += gy64;
                        *d = gy * gamma[c];
                        let d64 = d.f64();
                        sum_d += d64;
                        sum_dx += d64 * xh64;
                    }
                    dgamma[c] += dg;
                    dbeta[c] += db;
                }
                let r = cache.rstd[n * self.groups + g];
                let m = glen as f64;
                let (mean_d, mean_dx) = (sum_d / m, sum_dx / m);
                for ((o, &d), &xh) in dx_s[base..base + glen]
                    .iter_mut()
                    .zip(&dxhat)
                    .zip(&xh_s[base..base + glen])
                {
                    *o = F::lit(r * (d.f64() - mean_d - xh.f64() * mean_dx));
                }
            }
        }
        for (g, v) in grads.get_mut(self.gamma).iter_mut().zip(&dgamma) {
            *g += F::lit(*v);
        }
        for (g, v) in grads.get_mut(self.beta).iter_mut().zip(&dbeta) {
            *g += F::lit(*v);
        }
        dx
    }
}

/// Fully connected layer on `[batch, features, 1, 1]` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    fin: usize,
    fout: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        fin: usize,
        fout: usize,
    ) -> Self {
        let bound = (3.0 / fin as f64).sqrt();
        Linear {
            weight: ps.add_uniform(format!("{name}.weight"), vec![fout, fin], bound, rng),
            bias: ps.add_const(format!("{name}.bias"), vec![fout], 0.0),
            fin,
            fout,
        }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        assert_eq!(x.sample_len(), self.fin, "linear input features");
        let n = x.batch();
        let mut y = Tensor::zeros([n, self.fout, 1, 1]);
        let bias = ps.get(self.bias);
        for row in y.data_mut().chunks_exact_mut(self.fout) {
            row.copy_from_slice(bias);
        }
        matmul(n, self.fin, self.fout, x.data(), false, ps.get(self.weight), true, y.data_mut(), F::one());
        y
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Tensor<F> {
        let n = x.batch();
        {
            let db = grads.get_mut(self.bias);
            for row in dy.data().chunks_exact(self.fout) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        matmul(self.fout, n, self.fin, dy.data(), true, x.data(), false, grads.get_mut(self.weight), F::one());
        let mut dx = Tensor::zeros(x.shape());
        matmul(n, self.fout, self.fin, dy.data(), false, ps.get(self.weight), false, dx.data_mut(), F::zero());
        dx
    }
}

#[inline]
fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub fn silu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v * sigmoid(v))
}

/// Gradient of `silu` evaluated at the pre-activation `x`.
pub fn silu_backward<F: Real>(x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(v);
        *d *= s * (F::one() + v * (F::one() - s));
    }
    dx
}

/// Sinusoidal embedding of integer timesteps, `[sin(t f_i), cos(t f_i)]`
/// with geometrically spaced frequencies `f_i = 10000^(-i / (half - 1))`.
pub fn timestep_embedding<F: Real>(ts: &[usize], dim: usize) -> Tensor<F> {
    assert!(dim >= 4 && dim % 2 == 0, "embedding dim must be even and >= 4");
    let half = dim / 2;
    let mut out = Tensor::zeros([ts.len(), dim, 1, 1]);
    for (row, &t) in out.data_mut().chunks_exact_mut(dim).zip(ts) {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / (half - 1) as f64).exp();
            let arg = t as f64 * freq;
            row[i] = F::lit(arg.sin());
            row[half + i] = F::lit(arg.cos());
        }
    }
    out
}
