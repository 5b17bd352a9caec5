use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_from_samples, images_to_tensor, mse, Model, Restorer, RestorerCheckpoint, RestorerConfig, TrainConfig};
use crate::corruption::{make_training_sample, CorruptionSample, MaskConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{AdamW, OneCycle};
use crate::schedule::Schedule;

/// RNG stream ids derived from the training seed.
const STREAM_DATA: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    /// Training loss of every optimization step.
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// Validation restoration loss, starting with the untrained model.
    pub validation: Vec<ValidationPoint>,
    /// Mean `|P(x, 1) - x|` over the healthy validation images after
    /// training; `None` without a validation split.
    pub healthy_residual_t1: Option<f64>,
}

impl TrainLog {
    pub fn initial_validation_loss(&self) -> Option<f64> {
        self.validation.first().map(|v| v.loss)
    }

    pub fn final_validation_loss(&self) -> Option<f64> {
        self.validation.last().map(|v| v.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: RestorerCheckpoint,
    pub log: TrainLog,
}

/// Optimizes a fresh restorer on synthetic corruptions of `train_set`.
///
/// Each step draws `batch_size` images uniformly, corrupts each with a new
/// mask, foreign patch and `t ~ U[1, T]`, and takes one AdamW step on the
/// mean squared restoration error. The validation split is corrupted once
/// with a fixed stream so its loss is comparable across evaluations.
pub fn train(
    train_set: &[Image],
    val_set: &[Image],
    restorer_config: &RestorerConfig,
    train_config: &TrainConfig,
    schedule: &Schedule,
    mask_config: &MaskConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    mask_config.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 images, got {}",
            train_set.len()
        )));
    }
    if val_set.len() == 1 {
        return Err(Error::Config("validation split needs at least 2 images".into()));
    }
    let size = restorer_config.input_size;
    if let Some(img) = train_set.iter().chain(val_set).find(|i| i.dim() != (size, size)) {
        return Err(Error::Shape {
            expected: vec![size, size],
            actual: vec![img.height(), img.width()],
        });
    }

    let mut restorer = Restorer::<f32>::new(restorer_config.clone(), seed)?;
    let mut optimizer = AdamW::new(train_config.adamw, restorer.params());
    let policy = OneCycle {
        max_lr: train_config.max_lr,
        total_steps: train_config.steps,
        pct_start: train_config.pct_start,
        div_factor: train_config.div_factor,
        final_div_factor: train_config.final_div_factor,
    };

    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    data_rng.set_stream(STREAM_DATA);
    let val_samples = if val_set.is_empty() {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_VALIDATION);
        (0..val_set.len())
            .map(|i| make_training_sample(val_set, i, schedule, mask_config, &mut rng))
            .collect::<Result<Vec<_>>>()?
    };

    let mut log = TrainLog {
        seed,
        losses: Vec::with_capacity(train_config.steps),
        learning_rates: Vec::with_capacity(train_config.steps),
        validation: Vec::new(),
        healthy_residual_t1: None,
    };
    if !val_samples.is_empty() {
        let loss = validation_loss(&restorer, &val_samples, train_config.batch_size);
        log.validation.push(ValidationPoint { step: 0, loss });
        info!("step 0: validation loss {loss:.6}");
    }

    for step in 0..train_config.steps {
        let batch: Vec<CorruptionSample> = (0..train_config.batch_size)
            .map(|_| {
                let idx = data_rng.random_range(0..train_set.len());
                make_training_sample(train_set, idx, schedule, mask_config, &mut data_rng)
            })
            .collect::<Result<_>>()?;
        let (x_t, ts, x0) = batch_from_samples::<f32>(&batch);
        let (loss, grads) = restorer.loss_and_grads(&x_t, &ts, &x0);
        let lr = policy.lr(step);
        if !loss.is_finite() || !grads.is_finite() {
            let state = serde_json::json!({
                "step": step,
                "lr": lr,
                "loss": loss.to_string(),
                "grad_norm": grads.global_norm().to_string(),
                "recent_losses": &log.losses[log.losses.len().saturating_sub(10)..],
                "timesteps": ts,
            });
            return Err(Error::NonFiniteLoss {
                step,
                state: state.to_string(),
            });
        }
        optimizer.step(restorer.params_mut(), &grads, lr);
        log.losses.push(loss);
        log.learning_rates.push(lr);
        debug!("step {step}: loss {loss:.6} lr {lr:.3e}");

        let done = step + 1;
        if !val_samples.is_empty() && (done % train_config.val_every == 0 || done == train_config.steps) {
            let loss = validation_loss(&restorer, &val_samples, train_config.batch_size);
            log.validation.push(ValidationPoint { step: done, loss });
            info!("step {done}: validation loss {loss:.6}");
        }
    }

    let checkpoint = RestorerCheckpoint::new(
        &restorer,
        schedule.params(),
        Some(train_config),
        seed,
        train_config.steps,
    );
    if !val_set.is_empty() {
        let model = Model::new(restorer, schedule.clone());
        let mut total = 0.0;
        for img in val_set {
            let out = model.restore_single(img, 1)?;
            total += mean_abs_diff(&out, img);
        }
        log.healthy_residual_t1 = Some(total / val_set.len() as f64);
    }
    Ok(TrainOutcome { checkpoint, log })
}

pub(crate) fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum();
    sum / a.as_slice().len() as f64
}

fn validation_loss(restorer: &Restorer<f32>, samples: &[CorruptionSample], chunk: usize) -> f64 {
    let mut total = 0.0;
    for part in samples.chunks(chunk) {
        let x_t = images_to_tensor::<f32>(part.iter().map(|s| &s.x_t));
        let x0 = images_to_tensor::<f32>(part.iter().map(|s| &s.x_0));
        let ts: Vec<usize> = part.iter().map(|s| s.t).collect();
        let pred = restorer.forward(&x_t, &ts);
        total += mse(&pred, &x0).0 * part.len() as f64;
    }
    total / samples.len() as f64
}
