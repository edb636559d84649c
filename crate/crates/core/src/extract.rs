//! From embeddings and dependency parses to normalized knowledge triples.
//!
//! The pipeline stage by stage: seed-centered cosine clustering proposes
//! entity candidates, a review file round-trip models the manual keep/drop
//! pass, dependency-pattern rules lift (subject, pivot, object) triples out
//! of parsed sentences, predicate normalization maps raw pivots into the
//! ontology's relation set, and deduplication collapses exact repeats while
//! flagging multi-valued (subject, object) pairs for review.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::{UserDictionary, Vocabulary};
use crate::embed::{cosine, EmbeddingMatrix};
use crate::error::Error;
use crate::kgstore::OntologySchema;
use crate::Result;

/// One seed's cluster: members are (token, cosine similarity to the seed).
#[derive(Debug, Clone, PartialEq)]
pub struct EntityCluster {
    pub seed: String,
    pub members: Vec<(String, f64)>,
    pub threshold: f64,
}

/// Result of clustering: one cluster per usable seed, plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub clusters: Vec<EntityCluster>,
    /// Seeds absent from the vocabulary, skipped.
    pub missing_seeds: Vec<String>,
    /// Tokens equidistant to several seeds (assigned to the
    /// lexicographically first).
    pub ties: Vec<String>,
}

/// Assigns every non-seed vocabulary token to its highest-cosine seed when
/// that similarity reaches `threshold`. Ties go to the lexicographically
/// first seed and are flagged.
pub fn cluster_entities(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    seeds: &UserDictionary,
    threshold: f64,
) -> Result<ClusterReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "cluster threshold must be in [0, 1], got {threshold}"
        )));
    }
    let mut usable: Vec<(String, usize)> = Vec::new();
    let mut missing = Vec::new();
    for term in seeds.terms() {
        match vocab.id(term) {
            Some(id) => usable.push((term.to_string(), id)),
            None => missing.push(term.to_string()),
        }
    }
    if usable.is_empty() {
        return Err(Error::Config("no clustering seed is in the vocabulary".into()));
    }
    let seed_ids: HashSet<usize> = usable.iter().map(|(_, id)| *id).collect();
    let mut clusters: Vec<EntityCluster> = usable
        .iter()
        .map(|(term, _)| EntityCluster {
            seed: term.clone(),
            members: Vec::new(),
            threshold,
        })
        .collect();
    let mut ties = Vec::new();

    for id in 0..vocab.len() {
        if seed_ids.contains(&id) {
            continue;
        }
        let row = emb.input_row(id);
        let mut best: Option<(usize, f64)> = None;
        let mut tied = false;
        for (ci, (seed_name, seed_id)) in usable.iter().enumerate() {
            let sim = cosine(row, emb.input_row(*seed_id));
            match best {
                None => best = Some((ci, sim)),
                Some((bi, bs)) => {
                    if sim > bs {
                        best = Some((ci, sim));
                        tied = false;
                    } else if sim == bs {
                        tied = true;
                        // lexicographically first seed wins the tie
                        if seed_name < &usable[bi].0 {
                            best = Some((ci, sim));
                        }
                    }
                }
            }
        }
        let (ci, sim) = best.unwrap();
        if sim >= threshold {
            clusters[ci].members.push((vocab.token(id).to_string(), sim));
            if tied {
                ties.push(vocab.token(id).to_string());
            }
        }
    }

    Ok(ClusterReport {
        clusters,
        missing_seeds: missing,
        ties,
    })
}

/// Curated entity inventory, insertion-ordered and deduplicated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntitySet {
    names: Vec<String>,
    index: HashSet<String>,
}

impl EntitySet {
    pub fn insert(&mut self, name: &str) -> bool {
        if self.index.contains(name) {
            return false;
        }
        self.index.insert(name.to_string());
        self.names.push(name.to_string());
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }
}

impl<S: AsRef<str>> FromIterator<S> for EntitySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = EntitySet::default();
        for name in iter {
            set.insert(name.as_ref());
        }
        set
    }
}

/// Serializes clusters for manual review: one tab-separated line per
/// candidate, `seed<TAB>candidate<TAB>similarity<TAB>keep`. Edit the last
/// column to `drop` to reject a candidate.
pub fn review_export(clusters: &[EntityCluster]) -> String {
    let mut out = String::from("# cluster_seed\tcandidate\tsimilarity\tkeep|drop\n");
    for c in clusters {
        for (member, sim) in &c.members {
            out.push_str(&format!("{}\t{}\t{:.6}\tkeep\n", c.seed, member, sim));
        }
    }
    out
}

/// Applies review marks: the resulting entity set is every seed plus every
/// candidate marked `keep`. A candidate named in the file but absent from
/// every cluster is an error.
pub fn review_import(clusters: &[EntityCluster], text: &str) -> Result<EntitySet> {
    let known: HashSet<&str> = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(|(m, _)| m.as_str()))
        .collect();
    let mut kept: Vec<&str> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                "review file",
                format!("line {}: expected 4 tab-separated fields", lineno + 1),
            ));
        }
        let candidate = fields[1];
        if !known.contains(candidate) {
            return Err(Error::format(
                "review file",
                format!("line {}: unknown candidate {candidate}", lineno + 1),
            ));
        }
        match fields[3] {
            "keep" => kept.push(candidate),
            "drop" => {}
            other => {
                return Err(Error::format(
                    "review file",
                    format!("line {}: mark must be keep or drop, got {other}", lineno + 1),
                ));
            }
        }
    }
    let mut set = EntitySet::default();
    for c in clusters {
        set.insert(&c.seed);
    }
    for name in kept {
        set.insert(name);
    }
    Ok(set)
}

/// One token of a dependency parse. `head` is the 1-based index of the
/// governing token, 0 for the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseToken {
    pub index: usize,
    pub form: String,
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    /// Position in the parse file, used as triple provenance.
    pub id: usize,
    pub tokens: Vec<ParseToken>,
}

impl ParsedSentence {
    /// Structural sanity: contiguous 1-based indexes, exactly one root,
    /// heads in range, no cycles.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.index != i + 1 {
                return Err(Error::format(
                    format!("parse sentence {}", self.id),
                    format!("token index {} out of order", t.index),
                ));
            }
            if t.head > n {
                return Err(Error::format(
                    format!("parse sentence {}", self.id),
                    format!("token {} head {} out of range", t.index, t.head),
                ));
            }
        }
        let roots = self.tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(Error::format(
                format!("parse sentence {}", self.id),
                format!("expected exactly one root, found {roots}"),
            ));
        }
        for t in &self.tokens {
            let mut cur = t.head;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(Error::format(
                        format!("parse sentence {}", self.id),
                        format!("cycle through token {}", t.index),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Loads the tab-separated parse format: `index form head deprel` per
/// token, blank line between sentences, `#` comments.
pub fn load_parses(path: impl AsRef<Path>) -> Result<Vec<ParsedSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_parses(&text, &path.display().to_string())
}

pub fn parse_parses(text: &str, origin: &str) -> Result<Vec<ParsedSentence>> {
    let mut sentences = Vec::new();
    let mut current: Vec<ParseToken> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(ParsedSentence {
                    id: sentences.len(),
                    tokens: std::mem::take(&mut current),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                origin,
                format!("line {}: expected 4 tab-separated fields", lineno + 1),
            ));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(origin, format!("line {}: bad token index", lineno + 1)))?;
        let head: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(origin, format!("line {}: bad head index", lineno + 1)))?;
        current.push(ParseToken {
            index,
            form: fields[1].to_string(),
            head,
            deprel: fields[3].to_string(),
        });
    }
    if !current.is_empty() {
        sentences.push(ParsedSentence {
            id: sentences.len(),
            tokens: current,
        });
    }
    for s in &sentences {
        s.validate()?;
    }
    Ok(sentences)
}

/// A dependency-pattern rule: subject slot attached to the pivot via
/// `subject_deprel`, object slot via `object_deprel`, pivot constrained to
/// one lexeme. The matched triple carries `predicate` (for the shipped
/// rules this is the pivot word itself).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionRule {
    pub name: String,
    pub subject_deprel: String,
    pub pivot: String,
    pub object_deprel: String,
    pub predicate: String,
}

/// Loads the rule file: `deprel1 pivot deprel2 → predicate` per line,
/// whitespace-separated, `#` comments.
pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<ExtractionRule>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_rules(&text, &path.display().to_string())
}

pub fn parse_rules(text: &str, origin: &str) -> Result<Vec<ExtractionRule>> {
    let mut rules = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(i) => line[..i].trim(),
            None => line.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[3] != "→" {
            return Err(Error::format(
                origin,
                format!(
                    "line {}: expected `deprel1 pivot deprel2 → predicate`",
                    lineno + 1
                ),
            ));
        }
        rules.push(ExtractionRule {
            name: format!("{}+{}({})", fields[0], fields[2], fields[1]),
            subject_deprel: fields[0].to_string(),
            pivot: fields[1].to_string(),
            object_deprel: fields[2].to_string(),
            predicate: fields[4].to_string(),
        });
    }
    Ok(rules)
}

/// Triple as extracted, predicate still in surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    /// Sentence id the triple came from.
    pub provenance: usize,
}

/// Matches every rule against one parsed sentence. Both slot fillers must
/// be known entities and distinct; the pivot's dependents provide the
/// slots.
pub fn extract_relations(
    sentence: &ParsedSentence,
    entities: &EntitySet,
    rules: &[ExtractionRule],
) -> Result<Vec<RawTriple>> {
    sentence.validate()?;
    let mut triples = Vec::new();
    for rule in rules {
        for pivot in &sentence.tokens {
            if pivot.form != rule.pivot {
                continue;
            }
            let subjects: Vec<&ParseToken> = sentence
                .tokens
                .iter()
                .filter(|t| t.head == pivot.index && t.deprel == rule.subject_deprel)
                .collect();
            let objects: Vec<&ParseToken> = sentence
                .tokens
                .iter()
                .filter(|t| t.head == pivot.index && t.deprel == rule.object_deprel)
                .collect();
            for s in &subjects {
                for o in &objects {
                    if s.index == o.index || s.form == o.form {
                        continue;
                    }
                    if entities.contains(&s.form) && entities.contains(&o.form) {
                        triples.push(RawTriple {
                            subject: s.form.clone(),
                            predicate: rule.predicate.clone(),
                            object: o.form.clone(),
                            provenance: sentence.id,
                        });
                    }
                }
            }
        }
    }
    Ok(triples)
}

/// Miniature dependency parser covering only the copula pattern
/// `X 是 … Y`: the token before 是 becomes SBV, the final token VOB,
/// everything else ATT on the object. Enough for demos and tests; real
/// parses come from the parse file.
pub fn parse_copula(tokens: &[String], id: usize) -> Option<ParsedSentence> {
    let pivot_pos = tokens.iter().position(|t| t == "是")?;
    if pivot_pos == 0 || pivot_pos + 1 >= tokens.len() {
        return None;
    }
    let n = tokens.len();
    let parse_tokens: Vec<ParseToken> = tokens
        .iter()
        .enumerate()
        .map(|(i, form)| {
            let (head, deprel) = if i == pivot_pos {
                (0, "HED")
            } else if i == pivot_pos - 1 {
                (pivot_pos + 1, "SBV")
            } else if i == n - 1 {
                (pivot_pos + 1, "VOB")
            } else {
                (n, "ATT")
            };
            ParseToken {
                index: i + 1,
                form: form.clone(),
                head,
                deprel: deprel.to_string(),
            }
        })
        .collect();
    Some(ParsedSentence {
        id,
        tokens: parse_tokens,
    })
}

/// Triple after predicate normalization. `normalized` is false when no
/// mapping applied; such triples are kept for review, not dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub provenance: usize,
    pub normalized: bool,
}

/// Maps a raw predicate into the ontology relation set: a predicate that
/// already names a declared relation passes through; otherwise the
/// ontology's predicate mappings are scanned in order, honoring their
/// object-concept gate against the instance typing table.
pub fn normalize(raw: &RawTriple, ontology: &OntologySchema) -> NormalizedTriple {
    let mapped = if ontology.relation(&raw.predicate).is_some() {
        Some(raw.predicate.clone())
    } else {
        ontology
            .predicate_mappings
            .iter()
            .find(|m| {
                m.raw == raw.predicate
                    && match &m.object_concept {
                        Some(oc) => ontology.instance_concept(&raw.object) == Some(oc.as_str()),
                        None => true,
                    }
            })
            .map(|m| m.relation.clone())
    };
    match mapped {
        Some(predicate) => NormalizedTriple {
            subject: raw.subject.clone(),
            predicate,
            object: raw.object.clone(),
            provenance: raw.provenance,
            normalized: true,
        },
        None => NormalizedTriple {
            subject: raw.subject.clone(),
            predicate: raw.predicate.clone(),
            object: raw.object.clone(),
            provenance: raw.provenance,
            normalized: false,
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupResult {
    pub kept: Vec<NormalizedTriple>,
    pub duplicates_removed: usize,
    /// (subject, object) pairs carrying more than one distinct predicate.
    pub multivalued_flagged: Vec<(String, String)>,
}

/// Collapses exact (subject, predicate, object) repeats, preserving first
/// occurrences, and flags multi-valued pairs for manual adjudication.
pub fn deduplicate(triples: &[NormalizedTriple]) -> DedupResult {
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut kept = Vec::new();
    let mut removed = 0;
    for t in triples {
        let key = (t.subject.clone(), t.predicate.clone(), t.object.clone());
        if seen.insert(key) {
            kept.push(t.clone());
        } else {
            removed += 1;
        }
    }
    let mut pair_predicates: HashMap<(String, String), HashSet<String>> = HashMap::new();
    let mut pair_order: Vec<(String, String)> = Vec::new();
    for t in &kept {
        let pair = (t.subject.clone(), t.object.clone());
        let preds = pair_predicates.entry(pair.clone()).or_insert_with(|| {
            pair_order.push(pair.clone());
            HashSet::new()
        });
        preds.insert(t.predicate.clone());
    }
    let multivalued_flagged: Vec<(String, String)> = pair_order
        .into_iter()
        .filter(|p| pair_predicates[p].len() > 1)
        .collect();
    DedupResult {
        kept,
        duplicates_removed: removed,
        multivalued_flagged,
    }
}
