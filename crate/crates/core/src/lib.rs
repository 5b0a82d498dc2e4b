//! A laboratory for binary linear hashing.
//!
//! Keys are vectors of F₂^u and the hash is a uniformly random linear map
//! h: F₂^u → F₂^ℓ. The crate provides
//!
//! - [`gf2`]: packed F₂ vectors, matrices and subspaces, plus samplers;
//! - [`hashing`]: key sets and bucket-load statistics;
//! - [`theory`]: closed-form tail bounds, rank distributions and solvers;
//! - [`potential`]: the kernel-chain exponential potential process and
//!   runtime checks of its growth and tail properties;
//! - [`experiments`]: seeded, parallel Monte Carlo campaigns comparing
//!   empirical tails with the bounds;
//! - [`io`]: the text formats for vectors, matrices, key sets and results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod gf2;
pub mod hashing;
pub mod io;
pub mod potential;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use experiments::{ExperimentSpec, TailEstimate, Threshold};
pub use gf2::{BitMatrix, BitVector, Subspace};
pub use hashing::{KeyKind, KeySet, LoadHistogram};
pub use potential::{KernelChain, PotentialTrace};
