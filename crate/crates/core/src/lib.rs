//! Ontology-grounded construction of custom evaluation benchmarks.
//!
//! The offline phase selects knowledge units from ontology DAGs
//! ([`units`]), tags a QA corpus against them ([`tagger`], [`corpus`]).
//! The online phase resolves a free-text requirement to units by ranker
//! voting, orders candidates, cuts the list with a majority-vote binary
//! search, picks a distribution-matched proxy subset ([`pipeline`]), turns
//! it into multiple-choice items ([`benchgen`]) and scores models against a
//! reference ranking ([`evalharness`]).
//!
//! All model calls go through [`oracles`], so the whole pipeline can run
//! offline against scripted fixtures.

pub mod benchgen;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalharness;
mod fsutil;
pub mod ontology;
pub mod oracles;
pub mod pipeline;
pub mod tagger;
pub mod units;

pub use error::{Error, ErrorClass, Result};

/// Sentinel unit for queries with no scientific content.
pub const NON_SCIENTIFIC: &str = "NON_SCIENTIFIC";
