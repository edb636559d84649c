//! Rendering of binding tables: aligned text for humans, TSV and JSON for
//! machines.

use crate::kgstore::GraphStore;

use super::eval::{BindingTable, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatStyle {
    /// Column-aligned table; long cells are truncated with `…`.
    AlignedText,
    /// Tab-separated, lossless cell values.
    Tsv,
    /// One JSON array of row objects mirroring the persistence model.
    Json,
}

const ALIGNED_MAX_WIDTH: usize = 28;

fn cell_text(store: &GraphStore, value: Value) -> String {
    match value {
        Value::Node(id) => {
            let n = store.node(id);
            format!("({}:{})", n.name, n.concept)
        }
        Value::Edge(eid) => {
            let e = &store.edges()[eid];
            format!("[{}]", store.relation_name(e))
        }
    }
}

fn cell_json(store: &GraphStore, value: Value) -> serde_json::Value {
    match value {
        Value::Node(id) => {
            let n = store.node(id);
            serde_json::json!({"kind": "node", "name": n.name, "concept": n.concept})
        }
        Value::Edge(eid) => {
            let e = &store.edges()[eid];
            serde_json::json!({
                "kind": "edge",
                "relation": store.relation_name(e),
                "source": store.node(e.source).name,
                "target": store.node(e.target).name,
            })
        }
    }
}

/// Renders a table. Empty tables still print their header (text styles) or
/// an empty array (JSON).
pub fn format(table: &BindingTable, store: &GraphStore, style: FormatStyle) -> String {
    match style {
        FormatStyle::Tsv => {
            let mut out = table.columns.join("\t");
            out.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(|&v| cell_text(store, v)).collect();
                out.push_str(&cells.join("\t"));
                out.push('\n');
            }
            out
        }
        FormatStyle::Json => {
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: serde_json::Map<String, serde_json::Value> = table
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, &v)| (c.clone(), cell_json(store, v)))
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            serde_json::to_string_pretty(&rows).unwrap()
        }
        FormatStyle::AlignedText => {
            let rendered: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|row| row.iter().map(|&v| truncate(cell_text(store, v))).collect())
                .collect();
            let mut widths: Vec<usize> = table.columns.iter().map(|c| display_width(c)).collect();
            for row in &rendered {
                for (i, cell) in row.iter().enumerate() {
                    widths[i] = widths[i].max(display_width(cell));
                }
            }
            let mut out = String::new();
            let line = |cells: &[String], widths: &[usize]| -> String {
                let mut s = String::new();
                for (i, cell) in cells.iter().enumerate() {
                    if i > 0 {
                        s.push_str("  ");
                    }
                    s.push_str(cell);
                    let pad = widths[i].saturating_sub(display_width(cell));
                    s.extend(std::iter::repeat(' ').take(pad));
                }
                s.trim_end().to_string()
            };
            out.push_str(&line(&table.columns.to_vec(), &widths));
            out.push('\n');
            for row in &rendered {
                out.push_str(&line(row, &widths));
                out.push('\n');
            }
            out
        }
    }
}

/// CJK-aware width approximation: wide chars count double.
fn display_width(s: &str) -> usize {
    s.chars()
        .map(|c| if (c as u32) > 0x2E7F { 2 } else { 1 })
        .sum()
}

fn truncate(s: String) -> String {
    if display_width(&s) <= ALIGNED_MAX_WIDTH {
        return s;
    }
    let mut out = String::new();
    let mut w = 0;
    for c in s.chars() {
        let cw = if (c as u32) > 0x2E7F { 2 } else { 1 };
        if w + cw > ALIGNED_MAX_WIDTH - 1 {
            break;
        }
        out.push(c);
        w += cw;
    }
    out.push('…');
    out
}
