//! Relational collaborative filtering.
//!
//! Item-based recommendation where a user's history is split by the explicit
//! relations (type + value) each history item shares with the candidate item.
//! A two-level attention network weighs relation types per user and history
//! entries per type; the item embeddings are shaped jointly by a DistMult
//! objective over the item-item relation graph.
//!
//! The crate is organised by stage:
//!
//! - [`corpus`]: ingestion, splits, history partitioning and batch samplers
//! - [`params`]: parameter storage, the reverse-mode tape, Adagrad and projection
//! - [`model`]: history encoders (full model and ablations) and the prediction head
//! - [`relation`]: relation embeddings, DistMult scoring and the relational loss
//! - [`trainer`]: the joint training loop
//! - [`eval`]: leave-one-out ranking evaluation
//! - [`experiment`]: train-then-evaluate runs, ablation grids and γ sweeps
//! - [`explain`], [`gradcheck`], [`config`], [`synthetic`]: tooling used by the command line

mod binio;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod explain;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod real;
pub mod registry;
pub mod relation;
pub mod synthetic;
pub mod trainer;

pub use error::{RcfError, Result};
pub use real::Real;
