//! End-to-end checks of the `batik` binary: pipeline behavior, exit codes,
//! report shapes, and the dataset/model command surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn batik() -> Command {
    Command::new(env!("CARGO_BIN_EXE_batik"))
}

fn run(args: &[&str]) -> Output {
    batik().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn build_kg_into(out_store: &Path, report: Option<&Path>) -> Output {
    let mut args: Vec<String> = vec![
        "--seed".into(),
        "42".into(),
        "build-kg".into(),
        "--corpus".into(),
        fixture("corpus.txt").display().to_string(),
        "--dictionary".into(),
        fixture("dictionary.txt").display().to_string(),
        "--parses".into(),
        fixture("parses.tsv").display().to_string(),
        "--rules".into(),
        fixture("rules.tsv").display().to_string(),
        "--ontology".into(),
        fixture("ontology.json").display().to_string(),
        "--review".into(),
        fixture("review.tsv").display().to_string(),
        "--cluster-threshold".into(),
        "0".into(),
        "--out".into(),
        out_store.display().to_string(),
    ];
    if let Some(r) = report {
        args.push("--report".into());
        args.push(r.display().to_string());
    }
    batik().args(&args).output().expect("binary runs")
}

#[test]
fn build_kg_reproduces_the_shipped_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("graph.jsonl");
    let report_path = dir.path().join("report.json");
    let out = build_kg_into(&store, Some(&report_path));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["entities"], 120);
    assert_eq!(report["triples"], 419);
    assert_eq!(report["duplicates_removed"], 6);
    assert_eq!(report["multivalued_flagged"].as_array().unwrap().len(), 0);

    let built = std::fs::read(&store).unwrap();
    let shipped = std::fs::read(fixture("graph.jsonl")).unwrap();
    assert_eq!(built, shipped, "store bytes drifted from the shipped fixture");

    // report triple count equals the stored edge count
    let loaded = batik_core::kgstore::GraphStore::load(&store).unwrap();
    assert_eq!(loaded.edge_count() as u64, report["triples"].as_u64().unwrap());
}

/// The one-command pipeline equals running the stages individually through
/// the library with intermediate files.
#[test]
fn staged_pipeline_matches_build_kg_byte_for_byte() {
    use batik_core::corpus::{build_vocabulary, load_dictionary, subsample, tokenize};
    use batik_core::embed::{train, TrainConfig, TrainMode};
    use batik_core::extract::{
        cluster_entities, deduplicate, extract_relations, load_parses, load_rules, normalize,
        review_import,
    };
    use batik_core::kgstore::{load_ontology, GraphStore};

    let dir = tempfile::tempdir().unwrap();

    // stage 1: segmentation
    let (dict, _) = load_dictionary(fixture("dictionary.txt")).unwrap();
    let text = std::fs::read_to_string(fixture("corpus.txt")).unwrap();
    let tokens = tokenize(&text, &dict);
    // stage 2: vocabulary + subsampling (defaults of the build-kg command)
    let vocab = build_vocabulary(&tokens, 5).unwrap();
    let sub = subsample(&tokens, &vocab, 1e-4, 42).unwrap();
    // stage 3: embeddings, persisted and reloaded as the intermediate file
    let config = TrainConfig {
        mode: TrainMode::SkipGram,
        dim: 100,
        window: 5,
        negatives: 5,
        alpha0: 0.025,
        min_alpha: 0.025 / 100.0,
        epochs: 8,
        seed: 42,
        workers: 1,
    };
    let emb = train(&sub, &vocab, &config).unwrap();
    let emb_path = dir.path().join("vectors.bin");
    emb.save(&emb_path, &vocab.tokens().to_vec()).unwrap();
    let (emb, _) = batik_core::embed::EmbeddingMatrix::load(&emb_path).unwrap();
    // stage 4: clustering + review
    let clusters = cluster_entities(&emb, &vocab, &dict, 0.0).unwrap();
    let review = std::fs::read_to_string(fixture("review.tsv")).unwrap();
    let entities = review_import(&clusters.clusters, &review).unwrap();
    // stage 5: extraction + normalization + dedup
    let (ontology, _) = load_ontology(fixture("ontology.json")).unwrap();
    let rules = load_rules(fixture("rules.tsv")).unwrap();
    let parses = load_parses(fixture("parses.tsv")).unwrap();
    let mut raw = Vec::new();
    for sentence in &parses {
        raw.extend(extract_relations(sentence, &entities, &rules).unwrap());
    }
    let normalized: Vec<_> = raw.iter().map(|t| normalize(t, &ontology)).collect();
    let dedup = deduplicate(&normalized);
    // stage 6: store
    let mut store = GraphStore::new(ontology).unwrap();
    for t in &dedup.kept {
        assert!(t.normalized);
        store.insert_edge(&t.subject, &t.predicate, &t.object).unwrap();
    }
    let staged_path = dir.path().join("staged.jsonl");
    store.save(&staged_path).unwrap();

    let cli_path = dir.path().join("cli.jsonl");
    let out = build_kg_into(&cli_path, None);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&staged_path).unwrap(),
        std::fs::read(&cli_path).unwrap()
    );
}

#[test]
fn empty_corpus_builds_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let store = dir.path().join("empty.jsonl");
    let report = dir.path().join("report.json");
    let out = batik()
        .args([
            "build-kg",
            "--corpus",
            empty.to_str().unwrap(),
            "--dictionary",
            fixture("dictionary.txt").to_str().unwrap(),
            "--parses",
            fixture("parses.tsv").to_str().unwrap(),
            "--rules",
            fixture("rules.tsv").to_str().unwrap(),
            "--ontology",
            fixture("ontology.json").to_str().unwrap(),
            "--out",
            store.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["entities"], 0);
    assert_eq!(report["triples"], 0);
    let loaded = batik_core::kgstore::GraphStore::load(&store).unwrap();
    assert_eq!(loaded.node_count(), 0);
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let store = fixture("graph.jsonl");
    let store = store.to_str().unwrap();

    // 0: success with an empty (but well-typed) result
    let out = run(&["--quiet", "query", "--store", store, "MATCH (n:崇拜意识)<-[r:父女]-(m) RETURN m"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // 2: syntax error
    let out = run(&["query", "--store", store, "MATCH (n RETURN n"]);
    assert_eq!(out.status.code(), Some(2));

    // 2: unbound variable
    let out = run(&["query", "--store", store, "MATCH (n) RETURN x"]);
    assert_eq!(out.status.code(), Some(2));

    // 3: schema error (unknown relation label)
    let out = run(&["query", "--store", store, "MATCH (n)-[r:没这种]->(m) RETURN n"]);
    assert_eq!(out.status.code(), Some(3));

    // 1: missing store file
    let out = run(&["query", "--store", "/nonexistent/store.jsonl", "MATCH (n) RETURN n"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn meaning_search_lists_patterns() {
    let out = run(&[
        "--quiet",
        "query",
        "--store",
        fixture("graph.jsonl").to_str().unwrap(),
        "--meaning",
        "子嗣绵延",
        "--format",
        "tsv",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("鱼纹"), "{text}");
    assert!(text.contains("石榴纹"), "{text}");
}

#[test]
fn repl_reads_lines_and_keeps_history() {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = batik()
        .args(["--quiet", "repl", "--store", fixture("graph.jsonl").to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        writeln!(stdin, "MATCH (n)-[r:父女]->(m) RETURN n, m").unwrap();
        writeln!(stdin, "not a query").unwrap();
        writeln!(stdin, ":history").unwrap();
        writeln!(stdin, ":quit").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("姜央"), "{text}");
    assert!(text.contains("not a query"), "history should list the bad query: {text}");
}

#[test]
fn export_graph_dot_has_four_color_classes() {
    let out = run(&[
        "export-graph",
        "--store",
        fixture("graph.jsonl").to_str().unwrap(),
        "--format",
        "dot",
    ]);
    assert!(out.status.success());
    let dot = stdout_of(&out);
    let mut colors: Vec<&str> = dot
        .lines()
        .filter_map(|l| l.split("fillcolor=").nth(1))
        .map(|s| s.trim_end_matches("];"))
        .collect();
    colors.sort_unstable();
    colors.dedup();
    assert_eq!(colors.len(), 4, "one color class per concept");
}

#[test]
fn gen_split_train_eval_classify_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    let out = run(&[
        "--seed",
        "5",
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--per-class",
        "6",
        "--size",
        "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "--seed",
        "5",
        "split",
        "--manifest",
        data.join("manifest.csv").to_str().unwrap(),
        "--ratio",
        "0.5",
    ]);
    assert!(out.status.success());

    // a deliberately tiny architecture keeps this an interface test
    let arch = dir.path().join("arch.json");
    std::fs::write(
        &arch,
        serde_json::json!({
            "input": [3, 32, 32],
            "stem_width": 4,
            "stage_widths": [4, 8, 8, 16],
            "blocks_per_stage": [1, 1, 1, 1],
            "num_classes": 5,
            "pool_conv_shortcut": true,
            "long_range": "all_pairs",
        })
        .to_string(),
    )
    .unwrap();
    let ckpt = dir.path().join("model.btck");
    let out = run(&[
        "--seed",
        "5",
        "train",
        "--data",
        data.to_str().unwrap(),
        "--arch-file",
        arch.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "5",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let history: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("model.btck.history.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let report = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("eval.metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["per_class"].as_array().unwrap().len(), 5);
    assert!(metrics["macro"].is_object());
    assert_eq!(metrics["samples"], 15);
    // rerunning eval reproduces the identical confusion matrix
    let report2 = dir.path().join("eval2");
    run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--report",
        report2.to_str().unwrap(),
    ]);
    let metrics2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("eval2.metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["confusion"], metrics2["confusion"]);

    // classify without an alias table degrades to classification-only
    let image = data.join("drum/0000.ppm");
    let result = dir.path().join("classify.json");
    let out = run(&[
        "classify",
        "--image",
        image.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--json",
        result.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("unavailable"));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert!(result["knowledge_graph"].is_null());
    let sum: f64 = result["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["probability"].as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9, "softmax sums to {sum}");
}

#[test]
fn config_file_and_env_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d1");
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"per-class": 2, "size": 24}"#).unwrap();
    let out = batik()
        .args([
            "--config",
            config.to_str().unwrap(),
            "gen-data",
            "--out",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(data.join("drum")).unwrap().count(), 2);

    // env beats the file, flag beats env
    let data2 = dir.path().join("d2");
    let out = batik()
        .args([
            "--config",
            config.to_str().unwrap(),
            "gen-data",
            "--out",
            data2.to_str().unwrap(),
        ])
        .env("BATIK_PER_CLASS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(data2.join("drum")).unwrap().count(), 3);

    let data3 = dir.path().join("d3");
    let out = batik()
        .args([
            "--config",
            config.to_str().unwrap(),
            "gen-data",
            "--out",
            data3.to_str().unwrap(),
            "--per-class",
            "4",
        ])
        .env("BATIK_PER_CLASS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(data3.join("drum")).unwrap().count(), 4);
}

#[test]
fn store_lock_blocks_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("locked.jsonl");
    let mut lock_path = store.as_os_str().to_os_string();
    lock_path.push(".lock");
    std::fs::write(&lock_path, "").unwrap();
    let out = build_kg_into(&store, None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
