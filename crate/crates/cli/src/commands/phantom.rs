use heal_core::datasets_io::write_split;
use heal_core::phantom::generate_split;
use heal_core::{Result, Split};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Context;

pub fn run(ctx: &Context) -> Result<()> {
    let spec = &ctx.config.phantom;
    let split = generate_split(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))?;
    let provenance = format!("procedural nested-ellipse phantom, seed {}", spec.seed);
    let root = ctx.out.path("");
    write_split(&root, "phantom", Split::Train, &split.train, None, &provenance, Some(spec.seed))?;
    if !split.val.is_empty() {
        write_split(&root, "phantom", Split::Val, &split.val, None, &provenance, Some(spec.seed))?;
    }
    let images: Vec<_> = split.test.iter().map(|t| t.image.clone()).collect();
    let masks: Vec<_> = split.test.iter().map(|t| t.gt_mask.clone()).collect();
    write_split(&root, "phantom", Split::Test, &images, Some(&masks), &provenance, Some(spec.seed))?;
    let kinds: Vec<&str> = split.test.iter().map(|t| t.kind.map_or("healthy", |k| k.name())).collect();
    ctx.out.write_json("test_kinds.json", &kinds)?;
    let positive: usize = split.test.iter().map(|t| t.anomalous_pixels()).sum();
    let total = split.test.len() * spec.image_size * spec.image_size;
    info!(
        "wrote {} train, {} val, {} test images to {} (test prevalence {:.4})",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        root.display(),
        positive as f64 / total as f64
    );
    Ok(())
}
