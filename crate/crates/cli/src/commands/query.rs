//! One-shot queries, the meaning-keyword search, and the REPL.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::Args as ClapArgs;

use batik_core::kgstore::GraphStore;
use batik_core::query::{evaluate, format, parse, FormatStyle};
use batik_core::Error;

use crate::Ctx;

#[derive(ClapArgs)]
pub struct Args {
    /// Graph store to query.
    #[arg(long)]
    store: PathBuf,
    /// Query text (MATCH ... RETURN ...).
    query: Option<String>,
    /// Culture-to-image search: list patterns whose 蕴含 edge reaches a
    /// meaning containing this keyword.
    #[arg(long, conflicts_with = "query")]
    meaning: Option<String>,
    /// Output style.
    #[arg(long, value_parser = ["aligned", "tsv", "json"], default_value = "aligned")]
    format: String,
}

fn style_of(name: &str) -> FormatStyle {
    match name {
        "tsv" => FormatStyle::Tsv,
        "json" => FormatStyle::Json,
        _ => FormatStyle::AlignedText,
    }
}

pub fn run(_ctx: &Ctx, args: Args) -> Result<(), Error> {
    let store = GraphStore::load(&args.store)?;
    let text = match (&args.query, &args.meaning) {
        (Some(q), None) => q.clone(),
        (None, Some(keyword)) => meaning_query(keyword),
        _ => {
            return Err(Error::Config(
                "provide a query string or --meaning <keyword>".into(),
            ))
        }
    };
    let ast = parse(&text)?;
    let table = evaluate(&ast, &store)?;
    print!("{}", format(&table, &store, style_of(&args.format)));
    Ok(())
}

fn meaning_query(keyword: &str) -> String {
    let escaped = keyword.replace('\'', "");
    format!("MATCH (n:纹样)-[r:蕴含]->(m:寓意) WHERE m.name CONTAINS '{escaped}' RETURN n, m")
}

#[derive(ClapArgs)]
pub struct ReplArgs {
    /// Graph store to query.
    #[arg(long)]
    store: PathBuf,
    /// Output style.
    #[arg(long, value_parser = ["aligned", "tsv", "json"], default_value = "aligned")]
    format: String,
}

/// Line-oriented loop; `:history` prints this session's queries, `:quit`
/// leaves. History is not persisted.
pub fn repl(ctx: &Ctx, args: ReplArgs) -> Result<(), Error> {
    let store = GraphStore::load(&args.store)?;
    let style = style_of(&args.format);
    let stdin = std::io::stdin();
    let mut history: Vec<String> = Vec::new();
    ctx.say("batik query repl — :history, :quit");
    loop {
        if !ctx.quiet {
            print!("batik> ");
            let _ = std::io::stdout().flush();
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" | ":exit" => break,
            ":history" => {
                for (i, q) in history.iter().enumerate() {
                    println!("{:3}  {q}", i + 1);
                }
            }
            q => {
                history.push(q.to_string());
                match parse(q).and_then(|ast| evaluate(&ast, &store)) {
                    Ok(table) => print!("{}", format(&table, &store, style)),
                    Err(e) => eprintln!("error: {e}"),
                }
            }
        }
    }
    Ok(())
}
