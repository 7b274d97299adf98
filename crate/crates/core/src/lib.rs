//! Auditing and removing systematic biases in code-search rankings.
//!
//! The crate ingests query–code datasets and the ranked candidate lists an
//! external search model produced for them, measures how retrieval quality
//! varies with seven per-pair characteristics (code length, query length,
//! AST size and depth, control-flow keywords, query word importance and
//! query/code word overlap), and fits post-processing rerankers that boost
//! ground-truth-like candidates in regions where the model underperforms.
//!
//! Module map:
//!
//! * [`corpus`]: datasets, ranking runs, embedding tables and their file formats.
//! * [`pyast`]: Python-subset tokenizer and parser for AST size/depth.
//! * [`features`]: the seven bias features and the query IDF table.
//! * [`metrics`]: rank extraction, MRR and HR@K.
//! * [`similarity`]: cosine top-M retrieval over dense or TF-IDF vectors.
//! * [`clustering`]: deterministic k-means.
//! * [`audit`]: interval-grouped bias reports.
//! * [`reranker`]: fitting, gating, boosting and composing rerankers.
//! * [`synth`]: seeded generator of corpora and runs with planted biases.

pub mod audit;
pub mod bias;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pyast;
pub mod reranker;
pub mod similarity;
pub mod synth;

pub use bias::Bias;
pub use error::{Error, Result};
