//! Scientific claim generation toolkit.
//!
//! The crate covers the full pipeline from citation sentences to zero-shot
//! fact-checking training data:
//!
//! * [`kb`] loads a concept knowledge base and a concept-vector table and
//!   answers sibling / same-type / nearest-neighbor queries.
//! * [`linker`] finds dictionary mentions of KB concepts in text and links them.
//! * [`gateway`] fronts the perplexity, NLI and generation backends, with
//!   deterministic in-process reference implementations.
//! * [`kbin`] builds knowledge-base informed claim negations, plus the
//!   random same-type entity replacement baseline.
//! * [`claimgen`] orchestrates entity-centric and direct claim generation.
//! * [`dataset`] pairs claims and negations with cited/source abstracts.
//! * [`eval`] implements ROUGE, the max-average reference score, agreement
//!   statistics and the annotation aggregation tables.
//! * [`annotation`] is the rating store behind the annotation service, and
//!   [`server`] exposes it (and the scorer stubs) over HTTP.

pub mod annotation;
pub mod claimgen;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod hashing;
pub mod jsonl;
pub mod kb;
pub mod kbin;
pub mod linker;
pub mod manifest;
pub mod server;
mod text;
mod trie;

pub use kb::{Concept, Cui, KnowledgeBase, TypeMatch, VectorTable};
pub use linker::{find_mentions, link, EntityMention};
