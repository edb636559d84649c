//! Dataset commands: synthetic generation and manifest splitting.

use std::path::PathBuf;

use clap::Args as ClapArgs;

use batik_core::dataset::{self, generate_synthetic, Manifest};
use batik_core::Error;

use crate::Ctx;

#[derive(ClapArgs)]
pub struct GenArgs {
    /// Output directory; images land in per-category subdirectories.
    #[arg(long)]
    out: PathBuf,
    /// Images per category.
    #[arg(long)]
    per_class: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    size: Option<usize>,
}

pub fn gen(ctx: &Ctx, args: GenArgs) -> Result<(), Error> {
    let per_class = ctx.settings.resolve("per-class", args.per_class, 100)?;
    let size = ctx.settings.resolve("size", args.size, 64)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let manifest = generate_synthetic(&args.out, per_class, size, ctx.seed)?;
    let manifest_path = args.out.join("manifest.csv");
    manifest.save(&manifest_path)?;
    ctx.say(format!(
        "{} images ({size}x{size}) in {}, manifest {}",
        manifest.rows.len(),
        args.out.display(),
        manifest_path.display()
    ));
    Ok(())
}

#[derive(ClapArgs)]
pub struct SplitArgs {
    /// Manifest to split.
    #[arg(long)]
    manifest: PathBuf,
    /// Train fraction.
    #[arg(long)]
    ratio: Option<f64>,
    /// Output manifest; defaults to overwriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn split(ctx: &Ctx, args: SplitArgs) -> Result<(), Error> {
    let ratio = ctx.settings.resolve("ratio", args.ratio, 0.6)?;
    let manifest = Manifest::load(&args.manifest)?;
    let assigned = dataset::split(&manifest, ratio, ctx.seed)?;
    let out = args.out.unwrap_or(args.manifest);
    assigned.save(&out)?;
    let train = assigned
        .rows_in(dataset::Split::Train)
        .count();
    let test = assigned.rows_in(dataset::Split::Test).count();
    ctx.say(format!("split {train} train / {test} test -> {}", out.display()));
    Ok(())
}
