//! Time-conditioned UNet `P(x_t, t) -> x0_hat`.
//!
//! Encoder: one residual block per level (plus self-attention from
//! `attention_from_level` on), strided-conv downsampling between levels.
//! Bottleneck: residual, attention, residual. Decoder: mirror of the encoder
//! with channel-concatenated skips and nearest-neighbour upsampling. The
//! timestep enters through a sinusoidal embedding and a two-layer MLP whose
//! output is projected and added inside every residual block. The head is
//! linear and predicts a correction added to the input image.

use rand::Rng;

use super::config::RestorerConfig;
use crate::nn::{
    silu, silu_backward, timestep_embedding, AttentionCache, Conv2d, Grads, GroupNorm,
    GroupNormCache, Linear, ParamStore, Real, SelfAttention, Tensor,
};

/// Init gain of the output convolution, keeping the untrained map close to
/// the identity.
const HEAD_GAIN: f64 = 0.1;

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

#[derive(Debug, Clone)]
struct ResCache<F> {
    x: Tensor<F>,
    norm1: GroupNormCache<F>,
    pre1: Tensor<F>,
    act1: Tensor<F>,
    norm2: GroupNormCache<F>,
    pre2: Tensor<F>,
    act2: Tensor<F>,
}

impl ResBlock {
    fn new<F: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        temb: usize,
        groups: usize,
    ) -> Self {
        ResBlock {
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), cin, groups),
            conv1: Conv2d::new(ps, rng, &format!("{name}.conv1"), cin, cout, 3, 1, 1, 1.0),
            time_proj: Linear::new(ps, rng, &format!("{name}.time_proj"), temb, cout),
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), cout, groups),
            conv2: Conv2d::new(ps, rng, &format!("{name}.conv2"), cout, cout, 3, 1, 1, 1.0),
            skip: (cin != cout)
                .then(|| Conv2d::new(ps, rng, &format!("{name}.skip"), cin, cout, 1, 1, 0, 1.0)),
        }
    }

    fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>, temb: &Tensor<F>) -> (Tensor<F>, ResCache<F>) {
        let (pre1, norm1) = self.norm1.forward(ps, x);
        let act1 = silu(&pre1);
        let mut h = self.conv1.forward(ps, &act1);
        let tp = self.time_proj.forward(ps, temb);
        let plane = h.plane();
        for n in 0..h.batch() {
            let shift = tp.sample(n);
            for (chunk, &s) in h.sample_mut(n).chunks_exact_mut(plane).zip(shift) {
                chunk.iter_mut().for_each(|v| *v += s);
            }
        }
        let (pre2, norm2) = self.norm2.forward(ps, &h);
        let act2 = silu(&pre2);
        let mut y = self.conv2.forward(ps, &act2);
        match &self.skip {
            Some(conv) => y.add_assign(&conv.forward(ps, x)),
            None => y.add_assign(x),
        }
        (
            y,
            ResCache {
                x: x.clone(),
                norm1,
                pre1,
                act1,
                norm2,
                pre2,
                act2,
            },
        )
    }

    fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &ResCache<F>,
        dy: &Tensor<F>,
        temb: &Tensor<F>,
        dtemb: &mut Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Tensor<F> {
        let dact2 = self.conv2.backward(ps, &cache.act2, dy, grads);
        let dpre2 = silu_backward(&cache.pre2, &dact2);
        let dh = self.norm2.backward(ps, &cache.norm2, &dpre2, grads);

        let plane = dh.plane();
        let mut dtp = Tensor::zeros([dh.batch(), dh.channels(), 1, 1]);
        for n in 0..dh.batch() {
            let src = dh.sample(n);
            for (d, chunk) in dtp.sample_mut(n).iter_mut().zip(src.chunks_exact(plane)) {
                *d = chunk.iter().copied().sum();
            }
        }
        dtemb.add_assign(&self.time_proj.backward(ps, temb, &dtp, grads));

        let dact1 = self.conv1.backward(ps, &cache.act1, &dh, grads);
        let dpre1 = silu_backward(&cache.pre1, &dact1);
        let mut dx = self.norm1.backward(ps, &cache.norm1, &dpre1, grads);
        match &self.skip {
            Some(conv) => dx.add_assign(&conv.backward(ps, &cache.x, dy, grads)),
            None => dx.add_assign(dy),
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct DownLevel {
    res: ResBlock,
    attn: Option<SelfAttention>,
    down: Option<Conv2d>,
}

#[derive(Debug, Clone)]
struct UpLevel {
    res: ResBlock,
    attn: Option<SelfAttention>,
    up: Option<Conv2d>,
    /// Channels of the incoming (non-skip) activation.
    carry: usize,
}

#[derive(Debug, Clone)]
pub struct UNet {
    embed_dim: usize,
    time1: Linear,
    time2: Linear,
    input: Conv2d,
    down: Vec<DownLevel>,
    mid1: ResBlock,
    mid_attn: Option<SelfAttention>,
    mid2: ResBlock,
    up: Vec<UpLevel>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

struct LevelTrace<F> {
    res: ResCache<F>,
    attn: Option<AttentionCache<F>>,
    /// Level output; the skip tensor for the encoder, the upsampled
    /// convolution input for the decoder.
    saved: Tensor<F>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<F> {
    batch: usize,
    embedding: Tensor<F>,
    time_pre: Tensor<F>,
    time_act: Tensor<F>,
    temb: Tensor<F>,
    temb_act: Tensor<F>,
    image: Tensor<F>,
    down: Vec<LevelTrace<F>>,
    mid1: ResCache<F>,
    mid_attn: Option<AttentionCache<F>>,
    mid2: ResCache<F>,
    up: Vec<LevelTrace<F>>,
    out_norm: GroupNormCache<F>,
    out_pre: Tensor<F>,
    out_act: Tensor<F>,
}

impl UNet {
    /// Caller must have validated `config`.
    pub fn new<F: Real, R: Rng + ?Sized>(config: &RestorerConfig, ps: &mut ParamStore<F>, rng: &mut R) -> Self {
        let ch = &config.channels_per_level;
        let levels = ch.len();
        let d = config.time_embed_dim;
        let g = config.norm_groups;

        let time1 = Linear::new(ps, rng, "time.fc1", d, d);
        let time2 = Linear::new(ps, rng, "time.fc2", d, d);
        let input = Conv2d::new(ps, rng, "input", 1, ch[0], 3, 1, 1, 1.0);

        let mut down = Vec::with_capacity(levels);
        let mut prev = ch[0];
        for (i, &c) in ch.iter().enumerate() {
            let name = format!("down{i}");
            let res = ResBlock::new(ps, rng, &format!("{name}.res"), prev, c, d, g);
            let attn = config
                .has_attention(i)
                .then(|| SelfAttention::new(ps, rng, &format!("{name}.attn"), c, g));
            let down_conv = (i + 1 < levels).then(|| Conv2d::new(ps, rng, &format!("{name}.down"), c, c, 3, 2, 1, 1.0));
            down.push(DownLevel { res, attn, down: down_conv });
            prev = c;
        }

        let deep = ch[levels - 1];
        let mid1 = ResBlock::new(ps, rng, "mid.res1", deep, deep, d, g);
        let mid_attn = config
            .has_attention(levels - 1)
            .then(|| SelfAttention::new(ps, rng, "mid.attn", deep, g));
        let mid2 = ResBlock::new(ps, rng, "mid.res2", deep, deep, d, g);

        let mut up = Vec::with_capacity(levels);
        let mut carry = deep;
        for i in (0..levels).rev() {
            let name = format!("up{i}");
            let c = ch[i];
            let res = ResBlock::new(ps, rng, &format!("{name}.res"), carry + c, c, d, g);
            let attn = config
                .has_attention(i)
                .then(|| SelfAttention::new(ps, rng, &format!("{name}.attn"), c, g));
            let up_conv = (i > 0).then(|| Conv2d::new(ps, rng, &format!("{name}.up"), c, c, 3, 1, 1, 1.0));
            up.push(UpLevel {
                res,
                attn,
                up: up_conv,
                carry,
            });
            carry = c;
        }

        let out_norm = GroupNorm::new(ps, "out.norm", ch[0], g);
        let out_conv = Conv2d::new(ps, rng, "out.conv", ch[0], 1, 3, 1, 1, HEAD_GAIN);

        UNet {
            embed_dim: d,
            time1,
            time2,
            input,
            down,
            mid1,
            mid_attn,
            mid2,
            up,
            out_norm,
            out_conv,
        }
    }

    /// `x` is `[batch, 1, H, W]`; one timestep per batch item.
    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Tensor<F>, ts: &[usize]) -> (Tensor<F>, Trace<F>) {
        assert_eq!(x.channels(), 1, "restorer takes single-channel images");
        assert_eq!(x.batch(), ts.len(), "one timestep per batch item");

        let embedding = timestep_embedding::<F>(ts, self.embed_dim);
        let time_pre = self.time1.forward(ps, &embedding);
        let time_act = silu(&time_pre);
        let temb = self.time2.forward(ps, &time_act);
        let temb_act = silu(&temb);

        let mut h = self.input.forward(ps, x);
        let mut down = Vec::with_capacity(self.down.len());
        for level in &self.down {
            let (mut y, res) = level.res.forward(ps, &h, &temb_act);
            let attn = level.attn.as_ref().map(|a| {
                let (out, cache) = a.forward(ps, &y);
                y = out;
                cache
            });
            h = match &level.down {
                Some(conv) => conv.forward(ps, &y),
                None => y.clone(),
            };
            down.push(LevelTrace { res, attn, saved: y });
        }

        let (y, mid1) = self.mid1.forward(ps, &h, &temb_act);
        h = y;
        let mid_attn = self.mid_attn.as_ref().map(|a| {
            let (out, cache) = a.forward(ps, &h);
            h = out;
            cache
        });
        let (y, mid2) = self.mid2.forward(ps, &h, &temb_act);
        h = y;

        let mut up = Vec::with_capacity(self.up.len());
        for (level, skip) in self.up.iter().zip(down.iter().rev()) {
            let cat = Tensor::concat_channels(&h, &skip.saved);
            let (mut y, res) = level.res.forward(ps, &cat, &temb_act);
            let attn = level.attn.as_ref().map(|a| {
                let (out, cache) = a.forward(ps, &y);
                y = out;
                cache
            });
            let (next, saved) = match &level.up {
                Some(conv) => {
                    let upsampled = y.upsample2();
                    (conv.forward(ps, &upsampled), upsampled)
                }
                None => (y, Tensor::zeros([0, 0, 0, 0])),
            };
            h = next;
            up.push(LevelTrace { res, attn, saved });
        }

        let (out_pre, out_norm) = self.out_norm.forward(ps, &h);
        let out_act = silu(&out_pre);
        let mut out = self.out_conv.forward(ps, &out_act);
        out.add_assign(x);

        let trace = Trace {
            batch: x.batch(),
            embedding,
            time_pre,
            time_act,
            temb,
            temb_act,
            image: x.clone(),
            down,
            mid1,
            mid_attn,
            mid2,
            up,
            out_norm,
            out_pre,
            out_act,
        };
        (out, trace)
    }

    /// Parameter gradients of `<output, dout>`.
    pub fn backward<F: Real>(&self, ps: &ParamStore<F>, trace: &Trace<F>, dout: &Tensor<F>) -> Grads<F> {
        let mut grads = Grads::zeros_like(ps);
        let mut dtemb = Tensor::zeros([trace.batch, self.embed_dim, 1, 1]);

        let dact = self.out_conv.backward(ps, &trace.out_act, dout, &mut grads);
        let dpre = silu_backward(&trace.out_pre, &dact);
        let mut dh = self.out_norm.backward(ps, &trace.out_norm, &dpre, &mut grads);

        let mut dskips: Vec<Tensor<F>> = Vec::with_capacity(self.up.len());
        for (level, lt) in self.up.iter().zip(&trace.up).rev() {
            if let Some(conv) = &level.up {
                dh = conv.backward(ps, &lt.saved, &dh, &mut grads).upsample2_backward();
            }
            if let (Some(attn), Some(cache)) = (&level.attn, &lt.attn) {
                dh = attn.backward(ps, cache, &dh, &mut grads);
            }
            let dcat = level.res.backward(ps, &lt.res, &dh, &trace.temb_act, &mut dtemb, &mut grads);
            let (dcarry, dskip) = dcat.split_channels(level.carry);
            dh = dcarry;
            dskips.push(dskip);
        }
        // dskips[k] now belongs to encoder level k.

        dh = self.mid2.backward(ps, &trace.mid2, &dh, &trace.temb_act, &mut dtemb, &mut grads);
        if let (Some(attn), Some(cache)) = (&self.mid_attn, &trace.mid_attn) {
            dh = attn.backward(ps, cache, &dh, &mut grads);
        }
        dh = self.mid1.backward(ps, &trace.mid1, &dh, &trace.temb_act, &mut dtemb, &mut grads);

        for ((level, lt), dskip) in self.down.iter().zip(&trace.down).zip(dskips).rev() {
            let mut dy = match &level.down {
                Some(conv) => conv.backward(ps, &lt.saved, &dh, &mut grads),
                None => dh,
            };
            dy.add_assign(&dskip);
            if let (Some(attn), Some(cache)) = (&level.attn, &lt.attn) {
                dy = attn.backward(ps, cache, &dy, &mut grads);
            }
            dh = level.res.backward(ps, &lt.res, &dy, &trace.temb_act, &mut dtemb, &mut grads);
        }

        self.input.backward(ps, &trace.image, &dh, &mut grads);

        let dtemb_pre = silu_backward(&trace.temb, &dtemb);
        let dtime_act = self.time2.backward(ps, &trace.time_act, &dtemb_pre, &mut grads);
        let dtime_pre = silu_backward(&trace.time_pre, &dtime_act);
        self.time1.backward(ps, &trace.embedding, &dtime_pre, &mut grads);
        grads
    }
}
