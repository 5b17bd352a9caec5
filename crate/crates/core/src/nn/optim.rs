use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    config: AdamWConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = params
            .params()
            .iter()
            .map(|p| vec![F::zero(); p.value.len()])
            .collect();
        AdamW {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Grads<F>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let decay = F::lit(1.0 - lr * c.weight_decay);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (nb1, nb2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let step_size = F::lit(lr / bc1);
        let inv_bc2 = F::lit(1.0 / bc2);
        let eps = F::lit(c.eps);
        for (((p, g), m), v) in params
            .params_mut()
            .iter_mut()
            .zip(grads.all())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *m = b1 * *m + nb1 * g;
                *v = b2 * *v + nb2 * g * g;
                *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// One-cycle learning-rate policy with cosine annealing: warm up from
/// `max_lr / div_factor` to `max_lr` over the first `pct_start` of training,
/// then anneal to `max_lr / (div_factor * final_div_factor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        let last = self.total_steps.saturating_sub(1) as f64;
        let warm_end = self.pct_start * self.total_steps as f64 - 1.0;
        let s = step as f64;
        let anneal = |start: f64, end: f64, pct: f64| end + (start - end) / 2.0 * (1.0 + (PI * pct.clamp(0.0, 1.0)).cos());
        if warm_end > 0.0 && s <= warm_end {
            anneal(initial, self.max_lr, s / warm_end)
        } else {
            let from = warm_end.max(0.0);
            let span = last - from;
            if span <= 0.0 {
                self.max_lr
            } else {
                anneal(self.max_lr, min, (s - from) / span)
            }
        }
    }
}
