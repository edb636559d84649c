//! Cypher-subset query engine: MATCH a node/edge chain, filter with WHERE,
//! project with RETURN.
//!
//! Supported surface, by example:
//!
//! ```text
//! MATCH (n:纹样)-[r:属于]->(m) WHERE n.name CONTAINS '鱼' RETURN n, r, m
//! ```
//!
//! Matching is homomorphic over nodes (one store node may bind several
//! pattern variables) with distinct edge bindings per match. Queries are
//! read-only.

mod ast;
mod eval;
mod format;
mod parser;

pub use ast::{
    Comparator, Condition, EdgeDirection, EdgePattern, NodePattern, Property, QueryAst,
};
pub use eval::{evaluate, BindingTable, Value};
pub use format::{format, FormatStyle};
pub use parser::parse;
