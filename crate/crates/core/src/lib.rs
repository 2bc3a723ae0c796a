//! Knowledge-grounded neural conversation.
//!
//! A GRU encoder-decoder whose decoder is initialized from the dialog
//! summary plus a single-hop memory read over retrieved text facts. The crate
//! covers everything from tokenization and tf-idf retrieval to multi-task
//! training, beam search with log-linear N-best reranking, MERT and
//! corpus-level evaluation.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled as doc-tests of this crate.

pub mod config;
pub mod corpus;
pub mod curation;
pub mod decoding;
pub mod error;
pub mod experiment;
pub mod facts;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
