//! Cross-lingual interference measurement at desk scale.
//!
//! The pipeline trains one monolingual masked-language model per language and
//! one bilingual model per unordered language pair, evaluates every model on
//! held-out data, and derives an interference matrix from the resulting loss
//! matrix: `I(A,B) = (L(A,A) - L(A,B)) / L(A,A)`. Downstream analyses cover
//! outlier screening, robustness/friendliness averages, script/family/resource
//! aggregation, embedding-similarity comparison, and linear-probe evaluation
//! of downstream degradation.
//!
//! Everything is deterministic: corpora, tokenizer, model initialization,
//! training, and evaluation are pure functions of their seeds, so a sweep
//! produces bit-identical results regardless of worker count or interruption.

pub mod analytics;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod registry;
pub mod report;
pub mod similarity;
pub mod sweep;
pub mod tokenizer;
pub mod trainer;
