//! Unified dialogue system: one autoregressive model for chit-chat and
//! task-oriented dialogue over a shared five-segment turn schema.

pub mod corpus;
pub mod db;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod schema;
pub mod tokenizer;

pub use error::{Error, Result};
