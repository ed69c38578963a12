//! Producer-fairness re-ranking for top-K recommendation.
//!
//! The crate covers the whole offline loop:
//!
//! - [`dataio`]: interaction logs, k-core filtering, per-user splits, dataset statistics
//! - [`catalog`]: item popularity, novelty and the short-head / long-tail partition
//! - [`baselines`]: candidate generation (most-popular, pairwise matrix factorization)
//!   and the candidate file format used to import external rankers
//! - [`reranker`]: exact per-user selection trading relevance, novelty and group exposure
//! - [`metrics`]: NDCG, group fairness, sub-group cold-item fairness, `All`, relative change, harm
//! - [`pipeline`]: config-driven `prep`, `rank`, `rerank`, `eval` and `sweep` stages
//! - [`synthetic`]: seeded popularity-skewed corpora for experiments and tests

pub mod baselines;
pub mod catalog;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod reranker;
pub mod synthetic;

pub use error::{Error, Result};
