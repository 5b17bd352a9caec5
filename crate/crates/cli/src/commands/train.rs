use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use heal_core::restorer::train;
use heal_core::{Result, Split};
use log::info;

use super::{load_manifest, manifest_path, CHECKPOINT_FILE};
use crate::Context;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Healthy dataset directory with `train.json` and optionally
    /// `val.json`, or a training manifest.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,

    /// Validation manifest; defaults to `val.json` next to the data.
    #[arg(long, value_name = "FILE")]
    val: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let config = &ctx.config;
    let train_set = load_manifest(&args.data, Split::Train)?.images()?;
    let val_path = match &args.val {
        Some(p) => Some(p.clone()),
        None if args.data.is_dir() => Some(manifest_path(&args.data, Split::Val)).filter(|p| p.is_file()),
        None => None,
    };
    let val_set = match &val_path {
        Some(p) => load_manifest(p, Split::Val)?.images()?,
        None => Vec::new(),
    };
    let schedule = config.schedule.build()?;
    info!(
        "training on {} images ({} validation), {} steps of batch {}",
        train_set.len(),
        val_set.len(),
        config.train.steps,
        config.train.batch_size
    );
    let started = Instant::now();
    let outcome = train(
        &train_set,
        &val_set,
        &config.restorer,
        &config.train,
        &schedule,
        &config.mask,
        config.seed,
    )?;
    info!("training took {:.1} s", started.elapsed().as_secs_f64());

    outcome.checkpoint.save(ctx.out.path(CHECKPOINT_FILE))?;
    ctx.out.write_json("train_log.json", &outcome.log)?;
    let mut curve = String::from("step,loss,learning_rate\n");
    for (i, (loss, lr)) in outcome.log.losses.iter().zip(&outcome.log.learning_rates).enumerate() {
        writeln!(curve, "{i},{loss},{lr}").expect("writing to a string");
    }
    ctx.out.write_text("loss_curve.csv", &curve)?;
    let mut val = String::from("step,loss\n");
    for p in &outcome.log.validation {
        writeln!(val, "{},{}", p.step, p.loss).expect("writing to a string");
    }
    ctx.out.write_text("validation.csv", &val)?;
    if let (Some(first), Some(last)) = (outcome.log.initial_validation_loss(), outcome.log.final_validation_loss()) {
        info!("validation loss {first:.6} -> {last:.6}");
    }
    Ok(())
}
