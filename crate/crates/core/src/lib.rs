//! Unified named-entity tagging from multiple partially annotated corpora.
//!
//! A single BiLSTM-CRF tagger is trained over the union of every corpus's
//! entity types. Positions labeled `O` in a corpus that does not annotate
//! some type may really be mentions of that type; the training objective
//! discounts such *alternative* labels by a factor `M` in the gold energy
//! and `M'` in the partition (see [`lattice`]).

pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lattice;
pub mod model;
pub mod optim;
pub mod par;
pub mod synthetic;
pub mod tagspace;
pub mod training;

pub use error::{Error, Result};
