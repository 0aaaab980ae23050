//! The book under `book/` is plain mdbook, which cannot link against
//! workspace crates when testing listings. Each chapter is pulled in here as
//! module docs instead, so `cargo test` runs every listing as a doctest.
//! One module per chapter keeps failures traceable to their page.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}
#[doc = include_str!("../../../book/src/skill-neurons.md")]
pub mod skill_neurons {}
#[doc = include_str!("../../../book/src/masking-and-replay.md")]
pub mod masking_and_replay {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
