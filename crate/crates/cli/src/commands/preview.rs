use std::path::PathBuf;

use clap::Args;
use heal_core::corruption::{corrupt, generate_mask, sample_foreign_patch, FOREGROUND_THRESHOLD};
use heal_core::datasets_io::{save_array2, save_image, save_stack};
use heal_core::phantom::generate_subjects;
use heal_core::{Error, Image, Result, Split};
use log::info;
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::load_manifest;
use crate::{plot, Context};

/// Subjects drawn when no dataset is given.
const PREVIEW_SUBJECTS: usize = 8;

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Healthy dataset (directory or manifest); phantom subjects otherwise.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,

    /// Item of the dataset to corrupt.
    #[arg(long, default_value_t = 0)]
    index: usize,

    /// Steps to render, comma separated.
    #[arg(long = "t", value_delimiter = ',', default_value = "0,25,50,75,100")]
    ts: Vec<usize>,
}

pub fn run(ctx: &Context, args: &PreviewArgs) -> Result<()> {
    let config = &ctx.config;
    let schedule = config.schedule.build()?;
    let images: Vec<Image> = match &args.data {
        Some(path) => load_manifest(path, Split::Train)?.images()?,
        None => generate_subjects(
            config.phantom.image_size,
            PREVIEW_SUBJECTS,
            &mut ChaCha8Rng::seed_from_u64(config.phantom.seed),
        ),
    };
    let x0 = images.get(args.index).ok_or(Error::Index {
        index: args.index,
        max: images.len().saturating_sub(1),
    })?;
    if args.ts.is_empty() {
        return Err(Error::Config("no t values to render".into()));
    }
    let alphas = args
        .ts
        .iter()
        .map(|&t| schedule.alpha_at(t))
        .collect::<Result<Vec<f64>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (h, w) = x0.dim();
    let mask = generate_mask(h, w, &mut rng, &config.mask, Some(&x0.foreground(FOREGROUND_THRESHOLD)))?;
    let foreign = sample_foreign_patch(&images, args.index, &mut rng)?;
    let tiles = alphas
        .iter()
        .map(|&a| corrupt(x0, &foreign, &mask, a))
        .collect::<Result<Vec<Image>>>()?;

    let mut stack = Array3::zeros((tiles.len(), h, w));
    for (k, tile) in tiles.iter().enumerate() {
        stack.index_axis_mut(ndarray::Axis(0), k).assign(tile.view());
    }
    save_stack(&ctx.out.path("corrupt_preview.tensor"), &stack)?;
    save_image(&ctx.out.path("preview_source.tensor"), x0)?;
    save_image(&ctx.out.path("preview_foreign.tensor"), &foreign)?;
    save_array2(&ctx.out.path("preview_mask.tensor"), mask.view())?;
    ctx.out.write_json("corrupt_preview.json", &serde_json::json!({ "t": args.ts, "alpha": alphas }))?;
    let views: Vec<_> = tiles.iter().map(|t| t.view()).collect();
    plot::save_tiles(&ctx.out.path("corrupt_preview.png"), &views, 3)?;
    info!("rendered {} tiles to {}", tiles.len(), ctx.out.path("corrupt_preview.png").display());
    Ok(())
}
