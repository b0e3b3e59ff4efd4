//! mdbook cannot run snippets that depend on workspace crates, so every
//! chapter of the guide is pulled in here as module documentation and
//! `cargo test` runs its code blocks as doc-tests. One module per chapter
//! keeps failures traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/information.md")]
pub mod information {}
#[doc = include_str!("../../../book/src/blocks.md")]
pub mod blocks {}
#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}
#[doc = include_str!("../../../book/src/chi_square.md")]
pub mod chi_square {}
#[doc = include_str!("../../../book/src/markov.md")]
pub mod markov {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/spikes.md")]
pub mod spikes {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
