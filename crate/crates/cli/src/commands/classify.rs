//! The image-to-culture channel: classify one image, then walk the graph
//! from the matching pattern entity.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;

use batik_core::dataset::{bilinear_resize, read_ppm, CATEGORIES};
use batik_core::kgstore::{Direction, GraphStore};
use batik_core::model::Model;
use batik_core::tensor::{softmax_rows, Tensor};
use batik_core::Error;

use crate::report::write_json;
use crate::Ctx;

#[derive(ClapArgs)]
pub struct Args {
    /// Image to classify (P6 ppm).
    #[arg(long)]
    image: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Graph store for the cultural lookup.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Label-to-entity alias table (JSON object).
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// How many top classes to print.
    #[arg(long)]
    top_k: Option<usize>,
    /// Also write the result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn load_labels(checkpoint: &Path) -> Vec<String> {
    let mut path = checkpoint.as_os_str().to_os_string();
    path.push(".labels.json");
    std::fs::read_to_string(Path::new(&path))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok())
        .unwrap_or_else(|| CATEGORIES.iter().map(|s| s.to_string()).collect())
}

pub fn run(ctx: &Ctx, args: Args) -> Result<(), Error> {
    let top_k = ctx.settings.resolve("top-k", args.top_k, 3)?;
    let mut model = Model::load(&args.checkpoint)?;
    let labels = load_labels(&args.checkpoint);
    if labels.len() != model.config.num_classes {
        return Err(Error::Config(format!(
            "{} labels for a {}-class head",
            labels.len(),
            model.config.num_classes
        )));
    }

    let (w, h, rgb) = read_ppm(&args.image)?;
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = rgb[(y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    let tensor = Tensor::from_vec(&[3, h, w], data)?;
    let (_, th, tw) = model.config.input;
    let resized = if (h, w) == (th, tw) {
        tensor
    } else {
        bilinear_resize(&tensor, th, tw)?
    };
    let mut batched = vec![1usize];
    batched.extend_from_slice(resized.shape());
    let input = Tensor::from_vec(&batched, resized.data().to_vec())?;
    let logits = model.forward_eval(&input)?;
    let probs = softmax_rows(&logits)?;
    let row = probs.data();

    let mut ranked: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let (best, confidence) = ranked[0];
    ctx.say(format!("category: {} (confidence {:.4})", labels[best], confidence));
    for (i, p) in ranked.iter().take(top_k) {
        ctx.say(format!("  {:<12} {:.4}", labels[*i], p));
    }

    // image -> culture: alias the label to a graph entity and print its
    // meaning / worship / origin neighborhoods
    let aliases: HashMap<String, String> = match &args.aliases {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?
        }
        None => HashMap::new(),
    };
    let mut kg_section = serde_json::Value::Null;
    match (&args.store, aliases.get(&labels[best])) {
        (Some(store_path), Some(entity)) => {
            let store = GraphStore::load(store_path)?;
            if store.nodes_named(entity).is_empty() {
                ctx.say(format!("knowledge graph: alias {entity} not in store"));
            } else {
                ctx.say(format!("entity: {entity}"));
                let mut groups = serde_json::Map::new();
                for relation in ["蕴含", "崇拜", "来源"] {
                    let neighbors = store.neighbors(entity, Some(relation), Direction::Out)?;
                    let names: Vec<String> = neighbors
                        .iter()
                        .map(|(_, id)| store.node(*id).name.clone())
                        .collect();
                    if !names.is_empty() {
                        ctx.say(format!("  {relation}: {}", names.join(", ")));
                    }
                    groups.insert(
                        relation.to_string(),
                        serde_json::to_value(&names).expect("names serialize"),
                    );
                }
                kg_section = serde_json::json!({"entity": entity, "relations": groups});
            }
        }
        _ => ctx.say("knowledge graph: unavailable (no store or alias configured)".to_string()),
    }

    if let Some(path) = &args.json {
        let scores: Vec<serde_json::Value> = labels
            .iter()
            .zip(row)
            .map(|(l, p)| serde_json::json!({"label": l, "probability": p}))
            .collect();
        write_json(
            path,
            &serde_json::json!({
                "category": labels[best],
                "confidence": confidence,
                "scores": scores,
                "knowledge_graph": kg_section,
            }),
        )?;
    }
    Ok(())
}
