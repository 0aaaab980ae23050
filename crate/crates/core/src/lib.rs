//! Neuron-level balancing of stability and plasticity for continual
//! reinforcement learning.
//!
//! The crate bundles a small dense-network engine ([`nn`]), two deterministic
//! task families ([`envs`]), soft actor-critic ([`sac`]), goal-oriented skill
//! neuron identification ([`skill`]), the masking/replay machinery ([`nbsp`]),
//! continual-learning metrics ([`metrics`]) and an experiment harness
//! ([`harness`]) that runs cycling task sequences and writes reproducible
//! run directories.
//!
//! ```
//! use nbsp::skill::{score_trace, NeuronId, NetworkKind, Trace};
//!
//! // A neuron that fires exactly on successful steps scores 1.
//! let mut trace = Trace::new(vec![NeuronId::new(NetworkKind::Actor, 0, 0)]);
//! for (a, gpm) in [(0.9, 1.0), (0.1, 0.0), (0.8, 1.0), (0.2, 0.0)] {
//!     trace.push(&[a], gpm, 0)?;
//! }
//! assert_eq!(score_trace(&trace)?[0].1, 1.0);
//! # Ok::<(), nbsp::Error>(())
//! ```
//!
//! The guide in `book/` walks through each stage with runnable listings.

pub mod config;
pub mod envs;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nbsp;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod sac;
pub mod skill;

pub use error::{Error, Result};
