//! The guide under `book/` is plain mdbook, which cannot run Rust listings
//! against a workspace crate. Each chapter is included here as the docs of
//! an empty module, so `cargo test --doc` compiles and runs every listing.
//! One module per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/schema.md")]
pub mod schema {}

#[doc = include_str!("../../../book/src/weighted_loss.md")]
pub mod weighted_loss {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/switching.md")]
pub mod switching {}
