//! Role-selected sharing network for joint machine-human chatting handoff
//! (utterance level) and service satisfaction analysis (dialogue level).

pub mod config;
pub mod corpus;
pub mod decoders;
pub mod encoder;
pub mod error;
pub mod interaction;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
