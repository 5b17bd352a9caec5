use rand::Rng;

use super::{matmul, Conv2d, Grads, GroupNorm, GroupNormCache, ParamStore, Real, Tensor};

/// Single-head spatial self-attention with a residual connection:
/// `y = x + proj(softmax(q k^T / sqrt(c)) v)` where `q, k, v` come from a
/// pointwise convolution of `groupnorm(x)`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    norm: GroupNorm,
    qkv: Conv2d,
    proj: Conv2d,
    channels: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    norm: GroupNormCache<F>,
    normed: Tensor<F>,
    qkv: Tensor<F>,
    /// Row-stochastic attention weights, `batch * P * P`.
    weights: Vec<F>,
    mixed: Tensor<F>,
}

impl SelfAttention {
    pub fn new<F: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Self {
        SelfAttention {
            norm: GroupNorm::new(ps, &format!("{name}.norm"), channels, groups),
            qkv: Conv2d::new(ps, rng, &format!("{name}.qkv"), channels, 3 * channels, 1, 1, 0, 1.0),
            proj: Conv2d::new(ps, rng, &format!("{name}.proj"), channels, channels, 1, 1, 0, 1.0),
            channels,
        }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> (Tensor<F>, AttentionCache<F>) {
        let c = self.channels;
        let p = x.plane();
        let scale = F::lit(1.0 / (c as f64).sqrt());
        let (normed, norm) = self.norm.forward(ps, x);
        let qkv = self.qkv.forward(ps, &normed);
        let mut weights = vec![F::zero(); x.batch() * p * p];
        let mut mixed = Tensor::zeros(x.shape());
        for n in 0..x.batch() {
            let s = qkv.sample(n);
            let (q, k, v) = (&s[..c * p], &s[c * p..2 * c * p], &s[2 * c * p..]);
            let a = &mut weights[n * p * p..(n + 1) * p * p];
            matmul(p, c, p, q, true, k, false, a, F::zero());
            for row in a.chunks_exact_mut(p) {
                let mut max = F::neg_infinity();
                for v in row.iter_mut() {
                    *v *= scale;
                    max = max.max(*v);
                }
                let mut sum = F::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                let inv = F::one() / sum;
                row.iter_mut().for_each(|v| *v *= inv);
            }
            matmul(c, p, p, v, false, a, true, mixed.sample_mut(n), F::zero());
        }
        let mut y = self.proj.forward(ps, &mixed);
        y.add_assign(x);
        (
            y,
            AttentionCache {
                norm,
                normed,
                qkv,
                weights,
                mixed,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &AttentionCache<F>,
        dy: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Tensor<F> {
        let c = self.channels;
        let p = dy.plane();
        let scale = F::lit(1.0 / (c as f64).sqrt());
        let dmixed = self.proj.backward(ps, &cache.mixed, dy, grads);
        let mut dqkv = Tensor::zeros(cache.qkv.shape());
        let mut da = vec![F::zero(); p * p];
        for n in 0..dy.batch() {
            let s = cache.qkv.sample(n);
            let (q, k, v) = (&s[..c * p], &s[c * p..2 * c * p], &s[2 * c * p..]);
            let a = &cache.weights[n * p * p..(n + 1) * p * p];
            let dmix = dmixed.sample(n);
            let d = dqkv.sample_mut(n);
            let (dq, rest) = d.split_at_mut(c * p);
            let (dk, dv) = rest.split_at_mut(c * p);

            matmul(p, c, p, dmix, true, v, false, &mut da, F::zero());
            matmul(c, p, p, dmix, false, a, false, dv, F::zero());
            // Softmax backward, folding in the logit scale.
            for (drow, arow) in da.chunks_exact_mut(p).zip(a.chunks_exact(p)) {
                let dot: F = drow.iter().zip(arow).map(|(&g, &w)| g * w).sum();
                for (g, &w) in drow.iter_mut().zip(arow) {
                    *g = w * (*g - dot) * scale;
                }
            }
            matmul(c, p, p, k, false, &da, true, dq, F::zero());
            matmul(c, p, p, q, false, &da, false, dk, F::zero());
        }
        let dnormed = self.qkv.backward(ps, &cache.normed, &dqkv, grads);
        let mut dx = self.norm.backward(ps, &cache.norm, &dnormed, grads);
        dx.add_assign(dy);
        dx
    }
}
