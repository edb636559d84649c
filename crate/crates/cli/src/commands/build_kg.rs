//! The text channel end to end: corpus file in, validated graph store out.

use std::path::PathBuf;

use clap::Args as ClapArgs;

use batik_core::corpus::{build_vocabulary, load_dictionary, subsample, tokenize};
use batik_core::embed::{train, TrainConfig, TrainMode};
use batik_core::extract::{
    cluster_entities, deduplicate, extract_relations, load_parses, load_rules, normalize,
    review_export, review_import, EntitySet,
};
use batik_core::kgstore::{load_ontology, GraphStore};
use batik_core::Error;

use crate::report::{aligned, write_json};
use crate::Ctx;

use super::StoreLock;

#[derive(ClapArgs)]
pub struct Args {
    /// Corpus: UTF-8 text, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Segmentation dictionary, one term per line; its terms seed the
    /// entity clustering.
    #[arg(long)]
    dictionary: PathBuf,
    /// Dependency parses (index form head deprel, blank-line separated).
    #[arg(long)]
    parses: PathBuf,
    /// Relation extraction rules.
    #[arg(long)]
    rules: PathBuf,
    /// Ontology schema JSON.
    #[arg(long)]
    ontology: PathBuf,
    /// Output store path (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Curated review file; without it every cluster candidate is kept.
    #[arg(long)]
    review: Option<PathBuf>,
    /// Write the cluster review file here for manual curation.
    #[arg(long)]
    export_review: Option<PathBuf>,
    /// Machine-readable report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Cosine threshold for cluster membership.
    #[arg(long)]
    cluster_threshold: Option<f64>,
    /// Vocabulary min-count.
    #[arg(long)]
    min_count: Option<u64>,
    /// Frequent-token subsampling threshold.
    #[arg(long)]
    sample: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Context window.
    #[arg(long)]
    window: Option<usize>,
    /// Negatives per positive pair.
    #[arg(long)]
    negatives: Option<usize>,
    /// Embedding training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Persist the trained embeddings here (binary + token sidecar).
    #[arg(long)]
    save_embeddings: Option<PathBuf>,
}

struct Stage(&'static str);

impl Stage {
    fn wrap<T>(&self, r: Result<T, Error>) -> Result<T, Error> {
        r.map_err(|e| match e {
            Error::Io { path, source } => Error::Io {
                path: format!("{} (stage {})", path, self.0),
                source,
            },
            Error::Format { path, message } => Error::Format {
                path,
                message: format!("stage {}: {message}", self.0),
            },
            Error::Config(m) => Error::Config(format!("stage {}: {m}", self.0)),
            Error::Schema(m) => Error::Schema(format!("stage {}: {m}", self.0)),
            other => other,
        })
    }
}

pub fn run(ctx: &Ctx, args: Args) -> Result<(), Error> {
    let s = &ctx.settings;
    let threshold = s.resolve("cluster-threshold", args.cluster_threshold, 0.5)?;
    let min_count = s.resolve("min-count", args.min_count, 5)?;
    let sample = s.resolve("sample", args.sample, 1e-4)?;
    let dim = s.resolve("dim", args.dim, 100)?;
    let window = s.resolve("window", args.window, 5)?;
    let negatives = s.resolve("negatives", args.negatives, 5)?;
    let epochs = s.resolve("epochs", args.epochs, 8)?;
    let alpha = s.resolve("alpha", args.alpha, 0.025)?;

    let (dict, duplicate_terms) =
        Stage("dictionary").wrap(load_dictionary(&args.dictionary))?;
    let corpus_text = Stage("corpus").wrap(
        std::fs::read_to_string(&args.corpus)
            .map_err(|e| Error::io(args.corpus.display().to_string(), e)),
    )?;
    let tokens = tokenize(&corpus_text, &dict);
    let vocab = Stage("vocabulary").wrap(build_vocabulary(&tokens, min_count))?;
    ctx.say(format!(
        "corpus: {} sentences, {} tokens, vocabulary {}",
        tokens.sentences.len(),
        tokens.total_tokens(),
        vocab.len()
    ));

    let (ontology, warnings) = Stage("ontology").wrap(load_ontology(&args.ontology))?;
    for w in warnings {
        ctx.say(format!("ontology warning: {w}"));
    }
    let rules = Stage("rules").wrap(load_rules(&args.rules))?;
    let parses = Stage("parses").wrap(load_parses(&args.parses))?;

    let (empty_store, entity_set, cluster_info) = if vocab.is_empty() {
        // an empty corpus yields an empty store; skip embedding stages
        (true, EntitySet::default(), (0usize, 0usize, 0usize))
    } else {
        let subsampled = Stage("subsample").wrap(subsample(&tokens, &vocab, sample, ctx.seed))?;
        let config = TrainConfig {
            mode: TrainMode::SkipGram,
            dim,
            window,
            negatives,
            alpha0: alpha,
            min_alpha: (alpha / 100.0).max(1e-5),
            epochs,
            seed: ctx.seed,
            workers: 1,
        };
        let emb = Stage("embedding").wrap(train(&subsampled, &vocab, &config))?;
        if let Some(path) = &args.save_embeddings {
            Stage("embedding").wrap(emb.save(path, &vocab.tokens().to_vec()))?;
        }
        let clusters =
            Stage("clustering").wrap(cluster_entities(&emb, &vocab, &dict, threshold))?;
        for seed in &clusters.missing_seeds {
            ctx.say(format!("seed not in vocabulary, skipped: {seed}"));
        }
        if let Some(path) = &args.export_review {
            let text = review_export(&clusters.clusters);
            Stage("review").wrap(
                std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e)),
            )?;
            ctx.say(format!("review file written to {}", path.display()));
        }
        let review_text = match &args.review {
            Some(path) => Stage("review").wrap(
                std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e)),
            )?,
            None => review_export(&clusters.clusters), // identity: keep everything
        };
        let entity_set =
            Stage("review").wrap(review_import(&clusters.clusters, &review_text))?;
        let members: usize = clusters.clusters.iter().map(|c| c.members.len()).sum();
        (
            false,
            entity_set,
            (clusters.clusters.len(), members, clusters.ties.len()),
        )
    };

    let mut raw_triples = Vec::new();
    if !empty_store {
        for sentence in &parses {
            let mut found =
                Stage("extraction").wrap(extract_relations(sentence, &entity_set, &rules))?;
            raw_triples.append(&mut found);
        }
    }
    let normalized: Vec<_> = raw_triples.iter().map(|t| normalize(t, &ontology)).collect();
    let dedup = deduplicate(&normalized);

    let mut store = GraphStore::new(ontology)?;
    let mut unnormalized = 0usize;
    for t in &dedup.kept {
        if t.normalized {
            Stage("store").wrap(
                store
                    .insert_edge(&t.subject, &t.predicate, &t.object)
                    .map(|_| ()),
            )?;
        } else {
            unnormalized += 1;
        }
    }
    Stage("store").wrap(store.validate())?;
    {
        let _lock = StoreLock::acquire(&args.out)?;
        Stage("store").wrap(store.save(&args.out))?;
    }

    let flagged: Vec<serde_json::Value> = dedup
        .multivalued_flagged
        .iter()
        .map(|(s, o)| serde_json::json!([s, o]))
        .collect();
    let report = serde_json::json!({
        "entities": store.node_count(),
        "triples": store.edge_count(),
        "duplicates_removed": dedup.duplicates_removed,
        "multivalued_flagged": flagged,
        "unnormalized_kept_out": unnormalized,
        "entity_set_size": entity_set.len(),
        "clusters": cluster_info.0,
        "cluster_members": cluster_info.1,
        "cluster_ties": cluster_info.2,
        "duplicate_dictionary_terms": duplicate_terms,
        "store": args.out.display().to_string(),
    });
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    ctx.say(aligned(&[
        ("entities", store.node_count().to_string()),
        ("triples", store.edge_count().to_string()),
        ("duplicates removed", dedup.duplicates_removed.to_string()),
        (
            "multi-valued flagged",
            dedup.multivalued_flagged.len().to_string(),
        ),
        ("unnormalized (kept out)", unnormalized.to_string()),
        ("store", args.out.display().to_string()),
    ]));
    Ok(())
}
