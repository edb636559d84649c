//! Graph export.

use std::path::PathBuf;

use clap::Args as ClapArgs;

use batik_core::kgstore::GraphStore;
use batik_core::Error;

use crate::Ctx;

#[derive(ClapArgs)]
pub struct Args {
    /// Graph store to export.
    #[arg(long)]
    store: PathBuf,
    /// Output format.
    #[arg(long, value_parser = ["dot", "json"], default_value = "dot")]
    format: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(_ctx: &Ctx, args: Args) -> Result<(), Error> {
    let store = GraphStore::load(&args.store)?;
    let text = match args.format.as_str() {
        "json" => store.export_json(),
        _ => store.export_dot(),
    };
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
