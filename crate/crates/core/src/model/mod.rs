//! Two-level attention recommender: history encoders, forward pass and scoring.

mod config;
mod encoder;
pub mod forward;
pub mod ops;
mod scorer;

pub use config::{canonical_mode, AttnOverride, RcfConfig};
pub use encoder::{encoder_registry, AttentionLayout, Full, Group, HistoryEncoder, Single, TypeOnly, ValueOnly};
pub use forward::{Dropout, GraphBuilder};
pub use scorer::{GroupTrace, Prediction, Scorer};
