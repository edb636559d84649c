//! Batik pattern knowledge toolkit.
//!
//! Two channels link batik pattern images to their cultural semantics:
//!
//! * a text channel that segments domain text, trains word embeddings,
//!   extracts entity/relation triples, and stores them in a schema-validated
//!   property graph queryable through a small Cypher-style language;
//! * an image channel that trains a residual CNN classifier whose predicted
//!   category keys back into the graph.
//!
//! The crate is organized along that pipeline: [`corpus`] → [`embed`] →
//! [`extract`] → [`kgstore`] → [`query`] for the text channel, and
//! [`dataset`] → [`tensor`] → [`model`] for the image channel.

pub mod corpus;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod extract;
pub mod kgstore;
pub mod model;
pub mod query;
pub mod tensor;

pub use corpus::{TokenSeq, UserDictionary, Vocabulary};
pub use embed::{EmbeddingMatrix, NoiseDistribution, TrainConfig, TrainMode};
pub use error::Error;
pub use extract::{EntitySet, ExtractionRule, NormalizedTriple, ParsedSentence, RawTriple};
pub use kgstore::{GraphStore, OntologySchema};
pub use model::{ArchConfig, ConfusionMatrix, Model};
pub use query::{BindingTable, QueryAst};
pub use tensor::{Parameter, Tensor};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
