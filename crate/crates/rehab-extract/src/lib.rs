//! Extraction and scoring of physical-rehabilitation exercise concepts from
//! therapy note text.
//!
//! The pipeline: filter note files and carve out the therapeutic-procedures
//! section ([`ingest`]), segment it into enumerated exercise sequences, tag
//! concept spans with a declarative rule set ([`ruletagger`]), train
//! per-concept bag-of-words classifiers ([`classifiers`]), and score either
//! prediction route against gold annotations ([`goldstore`], [`evaluator`]).
//! A seeded synthetic corpus generator ([`syngen`]) stands in for private
//! clinical data, and [`promptgen`] drives the few-shot yes/no chat baseline.

pub mod classifiers;
pub mod cli;
pub mod evaluator;
pub mod goldstore;
pub mod ingest;
pub mod ontology;
pub mod promptgen;
pub mod ruletagger;
pub mod span;
pub mod syngen;
