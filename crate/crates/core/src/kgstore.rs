//! Ontology schema and the triple graph store.
//!
//! The schema declares concepts, typed relations (domain/range), known
//! instance typings, and predicate normalization mappings. The store keeps
//! entities as `(name, concept)` nodes and facts as directed typed edges,
//! rejecting anything the schema does not allow. Persistence is JSON lines:
//! a header record carrying the format version and schema, then one record
//! per node, then one per edge.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// A typed relation: edges labelled `name` run from a `domain`-concept node
/// to a `range`-concept node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub domain: String,
    pub range: String,
}

/// Maps a raw extracted predicate to a schema relation, optionally gated on
/// the object's concept (resolved through the `instances` typing table).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateMapping {
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_concept: Option<String>,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySchema {
    pub concepts: Vec<String>,
    pub relations: Vec<RelationDef>,
    /// Known entity -> concept typings used during normalization.
    #[serde(default)]
    pub instances: BTreeMap<String, String>,
    #[serde(default)]
    pub predicate_mappings: Vec<PredicateMapping>,
}

impl OntologySchema {
    pub fn relation(&self, name: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn has_concept(&self, name: &str) -> bool {
        self.concepts.iter().any(|c| c == name)
    }

    pub fn instance_concept(&self, entity: &str) -> Option<&str> {
        self.instances.get(entity).map(|s| s.as_str())
    }

    /// Checks internal consistency; returns warnings for legal-but-odd
    /// schemas (no relations, no concepts).
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for c in &self.concepts {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate concept: {c}")));
            }
        }
        let mut rel_seen = std::collections::HashSet::new();
        for r in &self.relations {
            if !rel_seen.insert(r.name.as_str()) {
                return Err(Error::Schema(format!("duplicate relation: {}", r.name)));
            }
            for side in [&r.domain, &r.range] {
                if !self.has_concept(side) {
                    return Err(Error::Schema(format!(
                        "relation {} references undeclared concept {side}",
                        r.name
                    )));
                }
            }
        }
        for (entity, concept) in &self.instances {
            if !self.has_concept(concept) {
                return Err(Error::Schema(format!(
                    "instance {entity} typed with undeclared concept {concept}"
                )));
            }
        }
        for m in &self.predicate_mappings {
            if self.relation(&m.relation).is_none() {
                return Err(Error::Schema(format!(
                    "mapping for raw predicate {} targets undeclared relation {}",
                    m.raw, m.relation
                )));
            }
            if let Some(oc) = &m.object_concept {
                if !self.has_concept(oc) {
                    return Err(Error::Schema(format!(
                        "mapping for raw predicate {} gates on undeclared concept {oc}",
                        m.raw
                    )));
                }
            }
        }
        if self.concepts.is_empty() {
            warnings.push("schema declares no concepts".to_string());
        }
        if self.relations.is_empty() {
            warnings.push("schema declares no relations".to_string());
        }
        Ok(warnings)
    }
}

/// Loads and validates a schema file; returns the schema plus warnings.
pub fn load_ontology(path: impl AsRef<Path>) -> Result<(OntologySchema, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let schema: OntologySchema = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let warnings = schema.validate()?;
    Ok((schema, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub concept: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub relation_idx: usize,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Property graph validated against an [`OntologySchema`].
///
/// Entity identity is the `(name, concept)` pair, so a Pattern and a Meaning
/// may share a surface name without colliding. Insertion is idempotent on
/// exact repeats. Single-writer, multi-reader: `&mut` methods are the only
/// mutations.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStore {
    schema: OntologySchema,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    by_name: HashMap<String, Vec<usize>>,
    by_concept: HashMap<String, Vec<usize>>,
    by_relation: HashMap<usize, Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl GraphStore {
    pub fn new(schema: OntologySchema) -> Result<Self> {
        schema.validate()?;
        Ok(GraphStore {
            schema,
            nodes: Vec::new(),
            edges: Vec::new(),
            by_name: HashMap::new(),
            by_concept: HashMap::new(),
            by_relation: HashMap::new(),
            outgoing: Vec::new(),
            incoming: Vec::new(),
        })
    }

    pub fn schema(&self) -> &OntologySchema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn relation_name(&self, edge: &Edge) -> &str {
        &self.schema.relations[edge.relation_idx].name
    }

    pub fn nodes_named(&self, name: &str) -> &[usize] {
        self.by_name.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn nodes_with_concept(&self, concept: &str) -> &[usize] {
        self.by_concept
            .get(concept)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn edges_with_relation(&self, relation: &str) -> Vec<usize> {
        match self.schema.relations.iter().position(|r| r.name == relation) {
            Some(idx) => self.by_relation.get(&idx).cloned().unwrap_or_default(),
            None => Vec::new(),
        }
    }

    /// Edge ids leaving `node`, in insertion order.
    pub fn outgoing_edges(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    /// Edge ids arriving at `node`, in insertion order.
    pub fn incoming_edges(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    /// Finds or creates the node `(name, concept)`.
    pub fn upsert_node(&mut self, name: &str, concept: &str) -> Result<usize> {
        if !self.schema.has_concept(concept) {
            return Err(Error::Schema(format!("undeclared concept: {concept}")));
        }
        if let Some(ids) = self.by_name.get(name) {
            for &id in ids {
                if self.nodes[id].concept == concept {
                    return Ok(id);
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            name: name.to_string(),
            concept: concept.to_string(),
            attributes: BTreeMap::new(),
        });
        self.by_name.entry(name.to_string()).or_default().push(id);
        self.by_concept
            .entry(concept.to_string())
            .or_default()
            .push(id);
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        Ok(id)
    }

    /// Resolves an endpoint by name for a relation side expecting `concept`.
    /// An existing node with the right concept wins; a missing name is
    /// auto-created with that concept; a name present only under other
    /// concepts is a domain/range violation.
    fn resolve_endpoint(&mut self, name: &str, concept: &str, side: &str) -> Result<usize> {
        match self.by_name.get(name) {
            Some(ids) => {
                if let Some(&id) = ids.iter().find(|&&id| self.nodes[id].concept == concept) {
                    return Ok(id);
                }
                let found = &self.nodes[ids[0]].concept;
                Err(Error::Schema(format!(
                    "{side} {name} has concept {found}, expected {concept}"
                )))
            }
            None => self.upsert_node(name, concept),
        }
    }

    /// Inserts the edge `(subject, relation, object)`, creating endpoints
    /// with the relation's domain/range concepts when missing. Exact
    /// repeats are no-ops. Returns (subject id, object id).
    pub fn insert_edge(
        &mut self,
        subject: &str,
        relation: &str,
        object: &str,
    ) -> Result<(usize, usize)> {
        let rel_idx = self
            .schema
            .relations
            .iter()
            .position(|r| r.name == relation)
            .ok_or_else(|| Error::Schema(format!("unknown relation: {relation}")))?;
        let (domain, range) = {
            let r = &self.schema.relations[rel_idx];
            (r.domain.clone(), r.range.clone())
        };
        let source = self.resolve_endpoint(subject, &domain, "subject")?;
        let target = self.resolve_endpoint(object, &range, "object")?;
        let edge = Edge {
            source,
            relation_idx: rel_idx,
            target,
        };
        if !self.outgoing[source].iter().any(|&e| self.edges[e] == edge) {
            let eid = self.edges.len();
            self.edges.push(edge);
            self.by_relation.entry(rel_idx).or_default().push(eid);
            self.outgoing[source].push(eid);
            self.incoming[target].push(eid);
        }
        Ok((source, target))
    }

    /// Adjacency slice of every node named `entity`, in insertion order,
    /// optionally restricted to one relation. `Both` lists outgoing edges
    /// then incoming ones.
    pub fn neighbors(
        &self,
        entity: &str,
        relation: Option<&str>,
        direction: Direction,
    ) -> Result<Vec<(String, usize)>> {
        let ids = self
            .by_name
            .get(entity)
            .ok_or_else(|| Error::UnknownEntity(entity.to_string()))?;
        let mut out = Vec::new();
        let want = |e: &Edge| match relation {
            Some(r) => self.relation_name(e) == r,
            None => true,
        };
        for &id in ids {
            if matches!(direction, Direction::Out | Direction::Both) {
                for &eid in &self.outgoing[id] {
                    let e = &self.edges[eid];
                    if want(e) {
                        out.push((self.relation_name(e).to_string(), e.target));
                    }
                }
            }
            if matches!(direction, Direction::In | Direction::Both) {
                for &eid in &self.incoming[id] {
                    let e = &self.edges[eid];
                    if want(e) {
                        out.push((self.relation_name(e).to_string(), e.source));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Re-checks every structural invariant: endpoint ids in range, edge
    /// relations declared, endpoint concepts matching domain/range.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= self.nodes.len() || e.target >= self.nodes.len() {
                return Err(Error::Schema(format!("edge {i} has dangling endpoint")));
            }
            let rel = self
                .schema
                .relations
                .get(e.relation_idx)
                .ok_or_else(|| Error::Schema(format!("edge {i} has unknown relation")))?;
            if self.nodes[e.source].concept != rel.domain {
                return Err(Error::Schema(format!(
                    "edge {i}: subject concept {} violates domain {} of {}",
                    self.nodes[e.source].concept, rel.domain, rel.name
                )));
            }
            if self.nodes[e.target].concept != rel.range {
                return Err(Error::Schema(format!(
                    "edge {i}: object concept {} violates range {} of {}",
                    self.nodes[e.target].concept, rel.range, rel.name
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the JSON-lines persistence format.
    pub fn export_json(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            version: u32,
            nodes: usize,
            edges: usize,
            schema: &'a OntologySchema,
        }
        #[derive(Serialize)]
        struct EdgeRec<'a> {
            source: usize,
            relation: &'a str,
            target: usize,
        }
        let mut out = String::new();
        let header = Header {
            version: 1,
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            schema: &self.schema,
        };
        out.push_str(&serde_json::to_string(&header).unwrap());
        out.push('\n');
        for n in &self.nodes {
            out.push_str(&serde_json::to_string(n).unwrap());
            out.push('\n');
        }
        for e in &self.edges {
            let rec = EdgeRec {
                source: e.source,
                relation: self.relation_name(e),
                target: e.target,
            };
            out.push_str(&serde_json::to_string(&rec).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.export_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Parses the JSON-lines format produced by [`GraphStore::save`].
    pub fn import_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
            nodes: usize,
            edges: usize,
            schema: OntologySchema,
        }
        #[derive(Deserialize)]
        struct EdgeRec {
            source: usize,
            relation: String,
            target: usize,
        }
        let bad =
            |record: usize, msg: String| Error::format("graph store", format!("record {record}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or_else(|| bad(0, "missing header".into()))?;
        let header: Header =
            serde_json::from_str(header_line).map_err(|e| bad(1, e.to_string()))?;
        if header.version != 1 {
            return Err(bad(1, format!("unsupported version {}", header.version)));
        }
        let mut store = GraphStore::new(header.schema)?;
        for i in 0..header.nodes {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| bad(i + 2, "truncated: missing node record".into()))?;
            let node: Node =
                serde_json::from_str(line).map_err(|e| bad(lineno + 1, e.to_string()))?;
            let id = store.upsert_node(&node.name, &node.concept)?;
            if id != i {
                return Err(bad(lineno + 1, format!("duplicate node {}", node.name)));
            }
            store.nodes[id].attributes = node.attributes;
        }
        for i in 0..header.edges {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| bad(header.nodes + i + 2, "truncated: missing edge record".into()))?;
            let rec: EdgeRec =
                serde_json::from_str(line).map_err(|e| bad(lineno + 1, e.to_string()))?;
            if rec.source >= store.nodes.len() || rec.target >= store.nodes.len() {
                return Err(bad(lineno + 1, "edge endpoint out of range".into()));
            }
            let (s, t) = (
                store.nodes[rec.source].name.clone(),
                store.nodes[rec.target].name.clone(),
            );
            let (sid, tid) = store.insert_edge(&s, &rec.relation, &t)?;
            if sid != rec.source || tid != rec.target {
                return Err(bad(lineno + 1, "edge endpoints resolve to other nodes".into()));
            }
        }
        store.validate()?;
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::import_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    /// Graphviz DOT export; node fill color is keyed by concept.
    pub fn export_dot(&self) -> String {
        const PALETTE: [&str; 6] = [
            "lightskyblue",
            "palegoldenrod",
            "lightpink",
            "palegreen",
            "plum",
            "lightsalmon",
        ];
        let mut out = String::from("digraph batik {\n  node [style=filled];\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let class = self
                .schema
                .concepts
                .iter()
                .position(|c| c == &n.concept)
                .unwrap_or(0);
            let color = PALETTE[class % PALETTE.len()];
            let _ = writeln!(
                out,
                "  n{id} [label=\"{}\", fillcolor={color}];",
                escape_dot(&n.name)
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"{}\"];",
                e.source,
                e.target,
                escape_dot(self.relation_name(e))
            );
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    fn default_schema() -> OntologySchema {
        load_ontology(fixture_path("ontology.json")).unwrap().0
    }

    #[test]
    fn default_ontology_has_four_concepts_nine_relations() {
        let (schema, warnings) = load_ontology(fixture_path("ontology.json")).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(schema.concepts.len(), 4);
        assert_eq!(schema.relations.len(), 9);
        for rel in ["属于", "蕴含", "崇拜", "来源", "同义"] {
            assert!(schema.relation(rel).is_some(), "missing {rel}");
        }
    }

    #[test]
    fn schema_rejects_undeclared_concept_reference() {
        let schema = OntologySchema {
            concepts: vec!["纹样".into()],
            relations: vec![RelationDef {
                name: "蕴含".into(),
                domain: "纹样".into(),
                range: "寓意".into(),
            }],
            instances: BTreeMap::new(),
            predicate_mappings: vec![],
        };
        assert!(matches!(schema.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn schema_rejects_duplicate_relation() {
        let rel = RelationDef {
            name: "属于".into(),
            domain: "纹样".into(),
            range: "纹样".into(),
        };
        let schema = OntologySchema {
            concepts: vec!["纹样".into()],
            relations: vec![rel.clone(), rel],
            instances: BTreeMap::new(),
            predicate_mappings: vec![],
        };
        assert!(matches!(schema.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_relations_is_valid_with_warning() {
        let schema = OntologySchema {
            concepts: vec!["纹样".into()],
            relations: vec![],
            instances: BTreeMap::new(),
            predicate_mappings: vec![],
        };
        let warnings = schema.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("no relations"));
    }

    #[test]
    fn edges_accepted_when_schema_allows() {
        let mut g = GraphStore::new(default_schema()).unwrap();
        g.upsert_node("蝴蝶纹", "纹样").unwrap();
        g.insert_edge("蝴蝶纹", "蕴含", "敬重祖先").unwrap();
        g.insert_edge("鸟纹", "属于", "动物纹").unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 2);
        // auto-created object got the relation's range concept
        let meaning = g.nodes_named("敬重祖先")[0];
        assert_eq!(g.node(meaning).concept, "寓意");
        g.validate().unwrap();
    }

    #[test]
    fn domain_violation_rejected() {
        let mut g = GraphStore::new(default_schema()).unwrap();
        g.upsert_node("敬重祖先", "寓意").unwrap();
        let err = g.insert_edge("敬重祖先", "属于", "动物纹").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "got {err:?}");
    }

    #[test]
    fn unknown_relation_rejected() {
        let mut g = GraphStore::new(default_schema()).unwrap();
        assert!(g.insert_edge("a", "毫无关系", "b").is_err());
    }

    #[test]
    fn insertion_is_idempotent() {
        let mut g = GraphStore::new(default_schema()).unwrap();
        let a = g.upsert_node("鱼纹", "纹样").unwrap();
        let b = g.upsert_node("鱼纹", "纹样").unwrap();
        assert_eq!(a, b);
        g.insert_edge("鱼纹", "崇拜", "生殖崇拜").unwrap();
        g.insert_edge("鱼纹", "崇拜", "生殖崇拜").unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn homonyms_differ_by_concept() {
        let mut g = GraphStore::new(default_schema()).unwrap();
        let a = g.upsert_node("自然", "纹样").unwrap();
        let b = g.upsert_node("自然", "原型来源").unwrap();
        assert_ne!(a, b);
        assert_eq!(g.nodes_named("自然").len(), 2);
    }

    fn small_graph() -> GraphStore {
        let mut g = GraphStore::new(default_schema()).unwrap();
        g.insert_edge("蝴蝶纹", "蕴含", "敬重祖先").unwrap();
        g.insert_edge("蝴蝶纹", "同义", "蝴蝶妈妈").unwrap();
        g.insert_edge("鸟纹", "属于", "动物纹").unwrap();
        g.insert_edge("鱼纹", "崇拜", "生殖崇拜").unwrap();
        g.insert_edge("蝴蝶纹", "属于", "动物纹").unwrap();
        g
    }

    #[test]
    fn neighbors_filters_by_relation_and_direction() {
        let g = small_graph();
        let out = g.neighbors("蝴蝶纹", Some("蕴含"), Direction::Out).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(g.node(out[0].1).name, "敬重祖先");

        let all_out = g.neighbors("蝴蝶纹", None, Direction::Out).unwrap();
        assert_eq!(all_out.len(), 3);

        let incoming = g.neighbors("动物纹", None, Direction::In).unwrap();
        assert_eq!(incoming.len(), 2);

        let both = g.neighbors("蝴蝶纹", None, Direction::Both).unwrap();
        let union: Vec<_> = g
            .neighbors("蝴蝶纹", None, Direction::Out)
            .unwrap()
            .into_iter()
            .chain(g.neighbors("蝴蝶纹", None, Direction::In).unwrap())
            .collect();
        assert_eq!(both, union);
    }

    #[test]
    fn neighbors_of_isolated_node_is_empty() {
        let mut g = small_graph();
        g.upsert_node("孤立纹", "纹样").unwrap();
        assert!(g
            .neighbors("孤立纹", None, Direction::Both)
            .unwrap()
            .is_empty());
        assert!(g.neighbors("不存在", None, Direction::Both).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.jsonl");
        g.save(&path).unwrap();
        let loaded = GraphStore::load(&path).unwrap();
        assert_eq!(g, loaded);
    }

    #[test]
    fn empty_store_round_trip() {
        let g = GraphStore::new(default_schema()).unwrap();
        let loaded = GraphStore::import_json(&g.export_json()).unwrap();
        assert_eq!(g, loaded);
    }

    #[test]
    fn truncated_file_reports_record() {
        let g = small_graph();
        let text = g.export_json();
        let lines: Vec<&str> = text.lines().collect();
        let truncated = lines[..lines.len() - 2].join("\n");
        let err = GraphStore::import_json(&truncated).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record"), "missing record number: {msg}");
    }

    #[test]
    fn json_export_reimports_equal() {
        let g = small_graph();
        let again = GraphStore::import_json(&g.export_json()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn dot_export_colors_by_concept() {
        let g = small_graph();
        let dot = g.export_dot();
        assert!(dot.starts_with("digraph"));
        // Pattern, Meaning, Worship Consciousness concepts present -> 3 colors
        let mut colors: Vec<&str> = dot
            .lines()
            .filter_map(|l| l.split("fillcolor=").nth(1))
            .map(|s| s.trim_end_matches("];"))
            .collect();
        colors.sort_unstable();
        colors.dedup();
        assert_eq!(colors.len(), 3);
        assert!(dot.contains("label=\"蕴含\""));
    }

    #[test]
    fn empty_graph_is_valid_dot() {
        let g = GraphStore::new(default_schema()).unwrap();
        let dot = g.export_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.trim_end().ends_with('}'));
    }

    #[test]
    fn randomized_operations_keep_integrity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let schema = default_schema();
        let rel_names: Vec<String> = schema.relations.iter().map(|r| r.name.clone()).collect();
        let mut g = GraphStore::new(schema).unwrap();
        let names: Vec<String> = (0..12).map(|i| format!("e{i}")).collect();
        for _ in 0..300 {
            let s = &names[rng.gen_range(0..names.len())];
            let o = &names[rng.gen_range(0..names.len())];
            let r = &rel_names[rng.gen_range(0..rel_names.len())];
            // concept conflicts are legal outcomes; integrity must hold anyway
            let _ = g.insert_edge(s, r, o);
        }
        g.validate().unwrap();
        let reloaded = GraphStore::import_json(&g.export_json()).unwrap();
        assert_eq!(g, reloaded);
    }
}
