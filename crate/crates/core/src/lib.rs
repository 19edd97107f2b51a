//! Augmenting document-level relation extraction datasets with triples
//! proposed by a chat LLM and mapped onto a fixed relation inventory by
//! entailment scoring.
//!
//! The stages, in run order:
//!
//! - [`corpus`]: DocRED-format documents, statistics and diffs
//! - [`registry`]: the relation inventory, templates and type constraints
//! - [`proposer`]: prompting, response parsing and entity linking
//! - [`scorer`]: NLI backends and score fusion
//! - [`align`]: choosing at most one relation per proposal
//! - [`pipeline`]: whole runs, merging and run manifests
//! - [`evaluate`]: exact-match precision, recall and F1
//! - [`verification`], [`store`], [`service`]: human verification of test-set candidates

pub mod align;
pub mod corpus;
pub mod evaluate;
pub mod pipeline;
pub mod proposer;
pub mod registry;
pub mod retry;
pub mod scorer;
pub mod service;
pub mod store;
pub mod verification;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/relations.md")]
    mod relations {}
    #[doc = include_str!("../../../book/src/proposing.md")]
    mod proposing {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
