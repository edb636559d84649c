//! Chain matcher: left-to-right extension with label-index seeding,
//! homomorphic node bindings, distinct edges per match.

use std::collections::HashSet;

use crate::error::Error;
use crate::kgstore::GraphStore;
use crate::Result;

use super::ast::{Comparator, Condition, EdgeDirection, Property, QueryAst};

/// A bound value: a node id or an edge id in the queried store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Node(usize),
    Edge(usize),
}

/// Query result: one column per returned variable, one row per distinct
/// projected match, rows in lexicographic order of their bound ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// A complete assignment: node ids per node pattern position, edge ids per
/// hop.
#[derive(Debug, Clone)]
struct Assignment {
    nodes: Vec<usize>,
    edges: Vec<usize>,
}

fn condition_holds(store: &GraphStore, cond: &Condition, value: Value) -> bool {
    let field = match (value, cond.property) {
        (Value::Node(id), Property::Name) => store.node(id).name.as_str(),
        (Value::Node(id), Property::Concept) => store.node(id).concept.as_str(),
        (Value::Edge(eid), Property::Name) => store.relation_name(&store.edges()[eid]),
        // the parser rejects concept lookups on edge variables
        (Value::Edge(_), Property::Concept) => return false,
    };
    match cond.comparator {
        Comparator::Eq => field == cond.value,
        Comparator::Ne => field != cond.value,
        Comparator::Contains => field.contains(&cond.value),
    }
}

/// Evaluates a parsed query. Unknown concept or relation labels are schema
/// errors, distinguishable from an empty (but well-typed) result.
pub fn evaluate(ast: &QueryAst, store: &GraphStore) -> Result<BindingTable> {
    let schema = store.schema();
    for n in ast.node_patterns() {
        if let Some(label) = &n.label {
            if !schema.has_concept(label) {
                return Err(Error::Schema(format!("unknown concept label: {label}")));
            }
        }
    }
    for e in ast.edge_patterns() {
        if let Some(rel) = &e.relation {
            if schema.relation(rel).is_none() {
                return Err(Error::Schema(format!("unknown relation label: {rel}")));
            }
        }
    }

    // seed candidates for the first node
    let seeds: Vec<usize> = match &ast.start.label {
        Some(label) => store.nodes_with_concept(label).to_vec(),
        None => (0..store.node_count()).collect(),
    };

    let mut complete: Vec<Assignment> = Vec::new();
    for seed in seeds {
        let assignment = Assignment {
            nodes: vec![seed],
            edges: Vec::new(),
        };
        extend(ast, store, assignment, &mut complete);
    }

    // WHERE conjunction over fully bound assignments
    let var_value = |a: &Assignment, var: &str| -> Value {
        if let Some(pos) = ast
            .node_patterns()
            .position(|n| n.variable.as_deref() == Some(var))
        {
            return Value::Node(a.nodes[pos]);
        }
        let pos = ast
            .edge_patterns()
            .position(|e| e.variable.as_deref() == Some(var))
            .expect("binder guarantees the variable is bound");
        Value::Edge(a.edges[pos])
    };
    let filtered: Vec<&Assignment> = complete
        .iter()
        .filter(|a| {
            ast.conditions
                .iter()
                .all(|c| condition_holds(store, c, var_value(a, &c.variable)))
        })
        .collect();

    // project, order, dedup
    let mut rows: Vec<Vec<Value>> = filtered
        .iter()
        .map(|a| ast.returns.iter().map(|v| var_value(a, v)).collect())
        .collect();
    rows.sort();
    rows.dedup();

    Ok(BindingTable {
        columns: ast.returns.clone(),
        rows,
    })
}

/// Depth-first chain extension from the last bound node.
fn extend(ast: &QueryAst, store: &GraphStore, assignment: Assignment, complete: &mut Vec<Assignment>) {
    let hop = assignment.edges.len();
    if hop == ast.hops.len() {
        complete.push(assignment);
        return;
    }
    let (edge_pat, node_pat) = &ast.hops[hop];
    let current = *assignment.nodes.last().unwrap();
    let candidates: &[usize] = match edge_pat.direction {
        EdgeDirection::Forward => store.outgoing_edges(current),
        EdgeDirection::Backward => store.incoming_edges(current),
    };
    let used: HashSet<usize> = assignment.edges.iter().copied().collect();
    for &eid in candidates {
        if used.contains(&eid) {
            continue; // relationship uniqueness within one match
        }
        let edge = &store.edges()[eid];
        if let Some(rel) = &edge_pat.relation {
            if store.relation_name(edge) != rel {
                continue;
            }
        }
        let next = match edge_pat.direction {
            EdgeDirection::Forward => edge.target,
            EdgeDirection::Backward => edge.source,
        };
        if let Some(label) = &node_pat.label {
            if &store.node(next).concept != label {
                continue;
            }
        }
        let mut extended = assignment.clone();
        extended.edges.push(eid);
        extended.nodes.push(next);
        extend(ast, store, extended, complete);
    }
}
