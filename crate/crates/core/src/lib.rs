//! Two-stage reranking of fact-checking articles for a claim.
//!
//! Stage one retrieves candidates with BM25 over an inverted index. Stage two
//! selects key sentences per candidate by fusing claim relevance (distance of
//! averaged token embeddings from a ROUGE-regressed encoder) with pattern
//! relevance (distance to a bank of clustered residual embeddings), then
//! predicts article relevance with a transformer interaction stack and a
//! score-weighted, memory-aware aggregation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! files and the command-line tool live in the `factrank` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod encoder;
mod error;
pub(crate) mod math;
pub mod memory;
pub mod metrics;
pub mod ranker;
pub mod retrieval;
pub mod rouge;
pub mod tensor;

pub use error::{Error, Result};
