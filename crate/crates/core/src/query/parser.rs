//! Hand-rolled lexer and recursive-descent parser with position-annotated
//! errors.

use crate::error::Error;
use crate::Result;

use super::ast::{
    Comparator, Condition, EdgeDirection, EdgePattern, NodePattern, Property, QueryAst,
};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Dot,
    Dash,
    Arrow,  // ->
    LArrow, // <-
    Eq,
    Ne, // <>
    Ident(String),
    Str(String),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn err_at(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut column = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (l, col) = (line, column);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '(' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::LParen, line: l, column: col });
            }
            ')' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::RParen, line: l, column: col });
            }
            '[' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::LBracket, line: l, column: col });
            }
            ']' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::RBracket, line: l, column: col });
            }
            ':' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::Colon, line: l, column: col });
            }
            ',' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::Comma, line: l, column: col });
            }
            '.' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::Dot, line: l, column: col });
            }
            '=' => {
                bump(&mut chars);
                out.push(Spanned { tok: Tok::Eq, line: l, column: col });
            }
            '-' => {
                bump(&mut chars);
                if chars.peek() == Some(&'>') {
                    bump(&mut chars);
                    out.push(Spanned { tok: Tok::Arrow, line: l, column: col });
                } else {
                    out.push(Spanned { tok: Tok::Dash, line: l, column: col });
                }
            }
            '<' => {
                bump(&mut chars);
                match chars.peek() {
                    Some('-') => {
                        bump(&mut chars);
                        out.push(Spanned { tok: Tok::LArrow, line: l, column: col });
                    }
                    Some('>') => {
                        bump(&mut chars);
                        out.push(Spanned { tok: Tok::Ne, line: l, column: col });
                    }
                    _ => return Err(err_at(l, col, "expected `<-` or `<>`")),
                }
            }
            '\'' | '"' => {
                let quote = bump(&mut chars);
                let mut s = String::new();
                loop {
                    match chars.peek() {
                        None => return Err(err_at(l, col, "unterminated string literal")),
                        Some(&ch) if ch == quote => {
                            bump(&mut chars);
                            break;
                        }
                        Some(_) => s.push(bump(&mut chars)),
                    }
                }
                out.push(Spanned { tok: Tok::Str(s), line: l, column: col });
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_alphanumeric() || ch == '_' {
                        s.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(s), line: l, column: col });
            }
            other => return Err(err_at(l, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|s| (s.line, s.column)).unwrap_or(self.end)
    }

    fn next(&mut self, what: &str) -> Result<Spanned> {
        let (l, c) = self.here();
        let s = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| err_at(l, c, format!("expected {what}, found end of query")))?;
        self.pos += 1;
        Ok(s)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Spanned> {
        let s = self.next(what)?;
        if s.tok != tok {
            return Err(err_at(s.line, s.column, format!("expected {what}")));
        }
        Ok(s)
    }

    fn keyword(&mut self, kw: &str) -> Result<Spanned> {
        let s = self.next(kw)?;
        match &s.tok {
            Tok::Ident(w) if w.eq_ignore_ascii_case(kw) => Ok(s),
            _ => Err(err_at(s.line, s.column, format!("expected {kw}"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Ident(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize, usize)> {
        let s = self.next(what)?;
        match s.tok {
            Tok::Ident(w) => Ok((w, s.line, s.column)),
            _ => Err(err_at(s.line, s.column, format!("expected {what}"))),
        }
    }

    fn node_pattern(&mut self) -> Result<NodePattern> {
        self.expect(Tok::LParen, "`(`")?;
        let mut variable = None;
        let mut label = None;
        if let Some(Spanned { tok: Tok::Ident(_), .. }) = self.peek() {
            variable = Some(self.ident("variable")?.0);
        }
        if matches!(self.peek(), Some(Spanned { tok: Tok::Colon, .. })) {
            self.next("`:`")?;
            label = Some(self.ident("concept label")?.0);
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(NodePattern { variable, label })
    }

    /// `[var?:REL?]` between the direction markers.
    fn edge_body(&mut self) -> Result<(Option<String>, Option<String>)> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut variable = None;
        let mut relation = None;
        if let Some(Spanned { tok: Tok::Ident(_), .. }) = self.peek() {
            variable = Some(self.ident("variable")?.0);
        }
        if matches!(self.peek(), Some(Spanned { tok: Tok::Colon, .. })) {
            self.next("`:`")?;
            relation = Some(self.ident("relation label")?.0);
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok((variable, relation))
    }

    fn condition(&mut self) -> Result<Condition> {
        let (variable, _, _) = self.ident("variable")?;
        self.expect(Tok::Dot, "`.`")?;
        let (prop, pl, pc) = self.ident("property")?;
        let property = match prop.as_str() {
            "name" => Property::Name,
            "concept" => Property::Concept,
            other => {
                return Err(err_at(
                    pl,
                    pc,
                    format!("unknown property `{other}` (supported: name, concept)"),
                ))
            }
        };
        let op = self.next("comparator")?;
        let comparator = match &op.tok {
            Tok::Eq => Comparator::Eq,
            Tok::Ne => Comparator::Ne,
            Tok::Ident(w) if w.eq_ignore_ascii_case("CONTAINS") => Comparator::Contains,
            _ => return Err(err_at(op.line, op.column, "expected `=`, `<>` or CONTAINS")),
        };
        let lit = self.next("string literal")?;
        let value = match lit.tok {
            Tok::Str(s) => s,
            _ => return Err(err_at(lit.line, lit.column, "expected quoted string literal")),
        };
        Ok(Condition {
            variable,
            property,
            comparator,
            value,
        })
    }
}

/// Parses a query, checking that every variable referenced by WHERE or
/// RETURN is bound in the MATCH pattern and that `concept` is only asked of
/// node variables.
pub fn parse(text: &str) -> Result<QueryAst> {
    let tokens = lex(text)?;
    let end = {
        let lines: Vec<&str> = text.lines().collect();
        let l = lines.len().max(1);
        (l, lines.last().map(|s| s.chars().count() + 1).unwrap_or(1))
    };
    let mut p = Parser { tokens, pos: 0, end };

    p.keyword("MATCH")?;
    let match_pos = p.here();
    let start = p.node_pattern()?;
    let mut hops = Vec::new();
    loop {
        match p.peek().map(|s| s.tok.clone()) {
            Some(Tok::Dash) => {
                p.next("`-`")?;
                let (variable, relation) = p.edge_body()?;
                p.expect(Tok::Arrow, "`->`")?;
                let node = p.node_pattern()?;
                hops.push((
                    EdgePattern {
                        variable,
                        relation,
                        direction: EdgeDirection::Forward,
                    },
                    node,
                ));
            }
            Some(Tok::LArrow) => {
                p.next("`<-`")?;
                let (variable, relation) = p.edge_body()?;
                p.expect(Tok::Dash, "`-`")?;
                let node = p.node_pattern()?;
                hops.push((
                    EdgePattern {
                        variable,
                        relation,
                        direction: EdgeDirection::Backward,
                    },
                    node,
                ));
            }
            _ => break,
        }
    }

    let mut conditions = Vec::new();
    let mut condition_positions = Vec::new();
    if p.at_keyword("WHERE") {
        p.keyword("WHERE")?;
        loop {
            condition_positions.push(p.here());
            conditions.push(p.condition()?);
            if p.at_keyword("AND") {
                p.keyword("AND")?;
            } else {
                break;
            }
        }
    }

    p.keyword("RETURN")?;
    let mut returns = Vec::new();
    let mut return_positions = Vec::new();
    loop {
        let (var, l, c) = p.ident("variable")?;
        returns.push(var);
        return_positions.push((l, c));
        if matches!(p.peek(), Some(Spanned { tok: Tok::Comma, .. })) {
            p.next("`,`")?;
        } else {
            break;
        }
    }
    if let Some(s) = p.peek() {
        return Err(err_at(s.line, s.column, "unexpected trailing input"));
    }

    let ast = QueryAst {
        start,
        hops,
        conditions,
        returns,
    };

    // binder: collect node and edge variables, then check references
    let node_vars: Vec<&str> = ast
        .node_patterns()
        .filter_map(|n| n.variable.as_deref())
        .collect();
    let edge_vars: Vec<&str> = ast
        .edge_patterns()
        .filter_map(|e| e.variable.as_deref())
        .collect();
    for (i, v) in node_vars.iter().enumerate() {
        if node_vars[..i].contains(v) || edge_vars.contains(v) {
            let (l, c) = match_pos;
            return Err(err_at(l, c, format!("variable `{v}` declared twice in MATCH")));
        }
    }
    for (i, v) in edge_vars.iter().enumerate() {
        if edge_vars[..i].contains(v) {
            let (l, c) = match_pos;
            return Err(err_at(l, c, format!("variable `{v}` declared twice in MATCH")));
        }
    }
    let bound = |v: &str| node_vars.contains(&v) || edge_vars.contains(&v);
    for (c, &(l, col)) in ast.conditions.iter().zip(&condition_positions) {
        if !bound(&c.variable) {
            return Err(err_at(l, col, format!("unbound variable `{}` in WHERE", c.variable)));
        }
        if c.property == Property::Concept && edge_vars.contains(&c.variable.as_str()) {
            return Err(err_at(
                l,
                col,
                format!("edge variable `{}` has no concept property", c.variable),
            ));
        }
    }
    for (v, &(l, col)) in ast.returns.iter().zip(&return_positions) {
        if !bound(v) {
            return Err(err_at(l, col, format!("unbound variable `{v}` in RETURN")));
        }
    }
    Ok(ast)
}
