//! Classifier training and evaluation commands.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;

use batik_core::dataset::{load, Manifest, Split};
use batik_core::model::{
    self, build, metrics, roc_auc_per_category, ArchConfig, Model, TrainRun,
};
use batik_core::Error;

use crate::report::{aligned, write_json};
use crate::Ctx;

fn arch_from(name: &str, file: Option<&Path>) -> Result<ArchConfig, Error> {
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        return serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()));
    }
    Ok(match name {
        "default" => ArchConfig::default(),
        "default-stock" => ArchConfig::default().stock(),
        "mini" => ArchConfig::mini(),
        "mini-stock" => ArchConfig::mini().stock(),
        other => return Err(Error::Config(format!("unknown arch `{other}`"))),
    })
}

fn labels_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_os_string();
    s.push(".labels.json");
    PathBuf::from(s)
}

#[derive(ClapArgs)]
pub struct TrainArgs {
    /// Image directory (manifest paths are relative to it).
    #[arg(long)]
    data: PathBuf,
    /// Manifest with train/test splits; defaults to <data>/manifest.csv.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Architecture preset: default, default-stock, mini, mini-stock.
    #[arg(long, default_value = "mini")]
    arch: String,
    /// Architecture JSON file (overrides --arch).
    #[arg(long)]
    arch_file: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    /// Disable random-resized-crop and horizontal-flip augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

pub fn train(ctx: &Ctx, args: TrainArgs) -> Result<(), Error> {
    let s = &ctx.settings;
    let epochs = s.resolve("epochs", args.epochs, 100)?;
    let batch_size = s.resolve("batch-size", args.batch_size, 8)?;
    let lr_initial = s.resolve("lr-initial", args.lr_initial, 1e-3)?;
    let lr_final = s.resolve("lr-final", args.lr_final, 1e-4)?;

    let config = arch_from(&args.arch, args.arch_file.as_deref())?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.data.join("manifest.csv"));
    let manifest = Manifest::load(&manifest_path)?;
    if manifest.labels().len() != config.num_classes {
        return Err(Error::Config(format!(
            "manifest has {} labels, model head has {}",
            manifest.labels().len(),
            config.num_classes
        )));
    }
    let target = (config.input.1, config.input.2);
    let (samples, report) = load(&args.data, &manifest, target, Some(Split::Train), false)?;
    debug_assert!(report.skipped.is_empty());
    ctx.say(format!(
        "training on {} samples, {} parameters",
        samples.len(),
        build(&config, 0)?.parameter_count()
    ));

    let run = TrainRun {
        epochs,
        batch_size,
        lr_initial,
        lr_final,
        seed: ctx.seed,
        augment: !args.no_augment,
        ..TrainRun::default()
    };
    let mut model = build(&config, ctx.seed)?;
    let history = model::train(&mut model, &samples, &run)?;
    for e in &history.epochs {
        ctx.say(format!(
            "epoch {:3}  lr {:.6}  loss {:.4}  train-acc {:.3}",
            e.epoch, e.lr, e.mean_loss, e.train_accuracy
        ));
    }
    model.save(&args.out)?;
    let mut hist_path = args.out.as_os_str().to_os_string();
    hist_path.push(".history.json");
    write_json(
        Path::new(&hist_path),
        &serde_json::to_value(&history).expect("history serializes"),
    )?;
    write_json(
        &labels_path(&args.out),
        &serde_json::to_value(manifest.labels()).expect("labels serialize"),
    )?;
    ctx.say(format!("checkpoint written to {}", args.out.display()));
    Ok(())
}

#[derive(ClapArgs)]
pub struct EvalArgs {
    /// Image directory.
    #[arg(long)]
    data: PathBuf,
    /// Manifest; defaults to <data>/manifest.csv.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Which split to evaluate.
    #[arg(long, value_parser = ["train", "test", "all"], default_value = "test")]
    split: String,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report path prefix: writes <prefix>.metrics.json, .metrics.txt and
    /// per-category <prefix>.roc-<label>.csv.
    #[arg(long)]
    report: PathBuf,
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Result<(), Error> {
    let mut model = Model::load(&args.checkpoint)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.data.join("manifest.csv"));
    let manifest = Manifest::load(&manifest_path)?;
    let labels = manifest.labels();
    if labels.len() != model.config.num_classes {
        return Err(Error::Config(format!(
            "manifest has {} labels, checkpoint head has {}",
            labels.len(),
            model.config.num_classes
        )));
    }
    let split = match args.split.as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        _ => None,
    };
    let target = (model.config.input.1, model.config.input.2);
    let (samples, _) = load(&args.data, &manifest, target, split, false)?;
    let eval = model::evaluate(&mut model, &samples)?;
    let report = metrics(&eval.confusion)?;
    let (curves, macro_auc, roc_warnings) =
        roc_auc_per_category(&eval.score_rows, &eval.labels, labels.len())?;

    // confusion matrix rows in label order
    let matrix: Vec<Vec<u64>> = (0..labels.len())
        .map(|t| (0..labels.len()).map(|p| eval.confusion.get(t, p)).collect())
        .collect();
    let per_class: Vec<serde_json::Value> = report
        .per_class
        .iter()
        .zip(&labels)
        .zip(curves.iter())
        .map(|((c, label), curve)| {
            serde_json::json!({
                "label": label,
                "accuracy": c.accuracy,
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "auc": curve.as_ref().map(|c| c.auc),
            })
        })
        .collect();
    let json = serde_json::json!({
        "labels": labels,
        "samples": samples.len(),
        "confusion": matrix,
        "per_class": per_class,
        "macro": {
            "accuracy": report.macro_accuracy,
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "f1": report.macro_f1,
            "auc": macro_auc,
        },
        "overall_accuracy": report.overall_accuracy,
        "warnings": report.warnings.iter().chain(&roc_warnings).collect::<Vec<_>>(),
    });
    let mut json_path = args.report.as_os_str().to_os_string();
    json_path.push(".metrics.json");
    write_json(Path::new(&json_path), &json)?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undef".into());
    let mut pairs: Vec<(&str, String)> = vec![
        ("samples", samples.len().to_string()),
        ("overall accuracy", format!("{:.4}", report.overall_accuracy)),
        ("macro precision", fmt(report.macro_precision)),
        ("macro recall", fmt(report.macro_recall)),
        ("macro f1", fmt(report.macro_f1)),
        ("macro auc", fmt(macro_auc)),
    ];
    let class_lines: Vec<String> = report
        .per_class
        .iter()
        .zip(&labels)
        .zip(curves.iter())
        .map(|((c, label), curve)| {
            format!(
                "{label}: acc {} prec {} rec {} f1 {} auc {}",
                fmt(c.accuracy),
                fmt(c.precision),
                fmt(c.recall),
                fmt(c.f1),
                fmt(curve.as_ref().map(|c| c.auc)),
            )
        })
        .collect();
    let joined = class_lines.join("\n");
    pairs.push(("per-class", String::new()));
    let text = format!("{}{joined}\n", aligned(&pairs));
    let mut txt_path = args.report.as_os_str().to_os_string();
    txt_path.push(".metrics.txt");
    std::fs::write(Path::new(&txt_path), &text)
        .map_err(|e| Error::io(args.report.display().to_string(), e))?;
    ctx.say(text.trim_end());

    for (label, curve) in labels.iter().zip(curves.iter()) {
        if let Some(curve) = curve {
            let mut csv = String::from("threshold,fpr,tpr\n");
            for p in &curve.points {
                csv.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
            }
            let mut path = args.report.as_os_str().to_os_string();
            path.push(format!(".roc-{label}.csv"));
            std::fs::write(Path::new(&path), csv)
                .map_err(|e| Error::io(label.to_string(), e))?;
        }
    }
    Ok(())
}
