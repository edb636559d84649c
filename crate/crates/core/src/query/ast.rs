//! Query AST and its canonical printed form.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePattern {
    pub variable: Option<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeDirection {
    /// `-[..]->`: pattern order follows the stored edge.
    Forward,
    /// `<-[..]-`: pattern order runs against the stored edge.
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgePattern {
    pub variable: Option<String>,
    pub relation: Option<String>,
    pub direction: EdgeDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Name,
    Concept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Eq,
    Ne,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub variable: String,
    pub property: Property,
    pub comparator: Comparator,
    pub value: String,
}

/// A parsed query: a chain of node and edge patterns, a conjunction of
/// property conditions, and the returned variables. Construction through
/// [`super::parse`] guarantees every referenced variable is bound in MATCH.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub start: NodePattern,
    pub hops: Vec<(EdgePattern, NodePattern)>,
    pub conditions: Vec<Condition>,
    pub returns: Vec<String>,
}

impl QueryAst {
    pub fn node_patterns(&self) -> impl Iterator<Item = &NodePattern> {
        std::iter::once(&self.start).chain(self.hops.iter().map(|(_, n)| n))
    }

    pub fn edge_patterns(&self) -> impl Iterator<Item = &EdgePattern> {
        self.hops.iter().map(|(e, _)| e)
    }

    /// Canonical text form; parsing it back yields a structurally equal AST.
    pub fn pretty_print(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MATCH {}", node_str(&self.start))?;
        for (edge, node) in &self.hops {
            let inner = match (&edge.variable, &edge.relation) {
                (Some(v), Some(r)) => format!("{v}:{r}"),
                (Some(v), None) => v.clone(),
                (None, Some(r)) => format!(":{r}"),
                (None, None) => String::new(),
            };
            match edge.direction {
                EdgeDirection::Forward => write!(f, "-[{inner}]->")?,
                EdgeDirection::Backward => write!(f, "<-[{inner}]-")?,
            }
            write!(f, "{}", node_str(node))?;
        }
        if !self.conditions.is_empty() {
            write!(f, " WHERE ")?;
            for (i, c) in self.conditions.iter().enumerate() {
                if i > 0 {
                    write!(f, " AND ")?;
                }
                let prop = match c.property {
                    Property::Name => "name",
                    Property::Concept => "concept",
                };
                let op = match c.comparator {
                    Comparator::Eq => "=",
                    Comparator::Ne => "<>",
                    Comparator::Contains => "CONTAINS",
                };
                write!(f, "{}.{prop} {op} '{}'", c.variable, c.value)?;
            }
        }
        write!(f, " RETURN {}", self.returns.join(", "))
    }
}

fn node_str(n: &NodePattern) -> String {
    match (&n.variable, &n.label) {
        (Some(v), Some(l)) => format!("({v}:{l})"),
        (Some(v), None) => format!("({v})"),
        (None, Some(l)) => format!("(:{l})"),
        (None, None) => "()".to_string(),
    }
}
