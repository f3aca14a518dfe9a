//! Citation-grounded retrieval-augmented generation.
//!
//! - [`retrieval`]: passage corpora and a BM25 index behind the [`retrieval::Retriever`] trait.
//! - [`markup`]: sentence segmentation, `[n]` citation markup, prompt templates.
//! - [`backends`]: generator and entailment-scorer interfaces, HTTP clients, test doubles.
//! - [`grounding`]: citation attachment and the grounding score.
//! - [`datagen`]: best-of-n construction of citation-annotated tuning data.
//! - [`tta`]: budgeted iterative inference that re-retrieves for unsupported statements.
//! - [`eval`]: citation quality, answer correctness, token cost, post-hoc citing.
//! - [`config`]: run configuration shared by the command-line tool.
//!
//! The guide under `book/` walks through each of these; its code listings are
//! compiled as doc-tests of this crate.

pub mod backends;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod grounding;
pub mod markup;
pub mod retrieval;
pub mod tta;

pub use backends::{Generator, NliScorer};
pub use grounding::{GroundedResponse, Thresholds};
pub use retrieval::{Corpus, Passage, Retriever};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/markup.md")]
    mod markup {}
    #[doc = include_str!("../../../book/src/grounding.md")]
    mod grounding {}
    #[doc = include_str!("../../../book/src/datagen.md")]
    mod datagen {}
    #[doc = include_str!("../../../book/src/tta.md")]
    mod tta {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
