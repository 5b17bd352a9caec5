//! The trainable restorer `P(x_t, t) -> x0_hat` and its training loop.

mod checkpoint;
mod config;
mod train;
mod unet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{RestorerCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{RestorerConfig, TrainConfig};
pub use train::{train, TrainLog, TrainOutcome, ValidationPoint};
pub use unet::{Trace, UNet};

use crate::corruption::CorruptionSample;
use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image};
use crate::nn::{Grads, ParamStore, Real, Tensor};
use crate::schedule::Schedule;

/// A UNet together with its parameters.
#[derive(Debug, Clone)]
pub struct Restorer<F = f32> {
    config: RestorerConfig,
    net: UNet,
    params: ParamStore<F>,
}

impl<F: Real> Restorer<F> {
    /// Builds a freshly initialized restorer; `seed` fixes the init.
    pub fn new(config: RestorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = UNet::new(&config, &mut params, &mut rng);
        Ok(Restorer { config, net, params })
    }

    /// Rebuilds the network for `config` and installs `params`, which must
    /// match its layout name by name and shape by shape.
    pub fn with_params(config: RestorerConfig, params: ParamStore<F>) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (want, got) in fresh.params.params().iter().zip(params.params()) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(Restorer {
            config: fresh.config,
            net: fresh.net,
            params,
        })
    }

    pub fn config(&self) -> &RestorerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn forward(&self, x: &Tensor<F>, ts: &[usize]) -> Tensor<F> {
        self.net.forward(&self.params, x, ts).0
    }

    pub fn forward_traced(&self, x: &Tensor<F>, ts: &[usize]) -> (Tensor<F>, Trace<F>) {
        self.net.forward(&self.params, x, ts)
    }

    /// Mean squared error against `target` and its parameter gradients.
    pub fn loss_and_grads(&self, x_t: &Tensor<F>, ts: &[usize], target: &Tensor<F>) -> (f64, Grads<F>) {
        let (pred, trace) = self.net.forward(&self.params, x_t, ts);
        let (loss, dpred) = mse(&pred, target);
        let grads = self.net.backward(&self.params, &trace, &dpred);
        (loss, grads)
    }
}

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> (f64, Tensor<F>) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let count = pred.data().len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0f64;
    let scale = F::lit(2.0 / count);
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.f64() * d.f64();
        *g = scale * d;
    }
    (sum / count, grad)
}

/// Stacks images into a `[n, 1, H, W]` tensor.
pub fn images_to_tensor<'a, F: Real>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<F> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        let d = img.dim();
        assert_eq!(*dims.get_or_insert(d), d, "images in a batch must share a shape");
        data.extend(img.as_slice().iter().map(|&v| F::lit(v as f64)));
        n += 1;
    }
    let (h, w) = dims.unwrap_or((0, 0));
    Tensor::from_vec([n, 1, h, w], data)
}

/// Builds `(x_t, t, x0)` batch tensors from corruption samples.
pub fn batch_from_samples<F: Real>(samples: &[CorruptionSample]) -> (Tensor<F>, Vec<usize>, Tensor<F>) {
    let x_t = images_to_tensor(samples.iter().map(|s| &s.x_t));
    let x0 = images_to_tensor(samples.iter().map(|s| &s.x_0));
    let ts = samples.iter().map(|s| s.t).collect();
    (x_t, ts, x0)
}

/// Training objective: mean squared restoration error over the batch.
pub fn loss<F: Real>(restorer: &Restorer<F>, batch: &[CorruptionSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Parameter("loss needs a nonempty batch".into()));
    }
    let (x_t, ts, x0) = batch_from_samples::<F>(batch);
    let pred = restorer.forward(&x_t, &ts);
    Ok(mse(&pred, &x0).0)
}

/// A trained restorer bound to the schedule it was trained with.
#[derive(Debug, Clone)]
pub struct Model {
    restorer: Restorer<f32>,
    schedule: Schedule,
}

impl Model {
    pub fn new(restorer: Restorer<f32>, schedule: Schedule) -> Self {
        Model { restorer, schedule }
    }

    pub fn restorer(&self) -> &Restorer<f32> {
        &self.restorer
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Single forward pass `P(x, t)`, clamped to `[0, 1]`.
    pub fn restore_single(&self, x: &Image, t: usize) -> Result<Image> {
        Ok(self.restore_many(std::slice::from_ref(x), &[t])?.remove(0))
    }

    /// One batched forward pass; `ts[i]` conditions `xs[i]`.
    pub fn restore_many(&self, xs: &[Image], ts: &[usize]) -> Result<Vec<Image>> {
        if xs.len() != ts.len() {
            return Err(Error::Shape {
                expected: vec![xs.len()],
                actual: vec![ts.len()],
            });
        }
        let steps = self.schedule.steps();
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > steps) {
            return Err(Error::Parameter(format!("t = {t} outside 1..={steps}")));
        }
        let size = self.restorer.config().input_size;
        if let Some(x) = xs.iter().find(|x| x.dim() != (size, size)) {
            return Err(Error::Shape {
                expected: vec![size, size],
                actual: vec![x.height(), x.width()],
            });
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.restorer.forward(&images_to_tensor::<f32>(xs), ts);
        Ok(out
            .data()
            .chunks_exact(size * size)
            .map(|plane| {
                let data = Array2::from_shape_vec((size, size), plane.iter().map(|&v| clamp_unit(v)).collect())
                    .expect("forward preserves shape");
                Image::from_array_unchecked(data)
            })
            .collect())
    }
}
