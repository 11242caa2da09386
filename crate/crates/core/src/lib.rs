//! Structured prediction with latent variables on general discrete factor
//! graphs.
//!
//! The crate implements a temperature-smoothed family of latent-variable
//! objectives that spans hidden CRFs (`epsilon = 1`) and latent structured
//! SVMs (`epsilon -> 0`). Inference uses a local-polytope entropy
//! approximation with positive counting numbers, which keeps every
//! subproblem convex:
//!
//! * [`inference`] holds the dual of the loss-augmented term, its
//!   closed-form block updates and the latent completion solver.
//! * [`learning`] alternates latent completion, one message sweep and a
//!   line-searched weight step, never increasing the objective.
//! * [`oracle`] evaluates everything by brute-force enumeration on tiny
//!   instances so the fast paths can be certified.
//!
//! The crate only needs `core` and `alloc`. Enable the `parallel` feature to
//! map per-example work over a rayon pool; results are bit-identical either
//! way because every reduction runs in ascending example order.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

mod error;
pub mod graph;
pub mod inference;
pub mod learning;
pub mod math;
pub mod model;
pub mod oracle;
mod par;
pub mod tables;

pub use error::{Error, Result};
pub use graph::{FactorGraph, HiddenSubgraph};
pub use inference::{BeliefSet, MessageSet};
pub use learning::{train, LineSearchConfig, TrainOptions, TrainState, Trainer};
pub use model::{CountingNumbers, Example, HyperParams, ModelParams, PotentialSet};
pub use tables::Tables;
