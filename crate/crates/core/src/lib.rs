//! Numerics for path-dependent Hamilton-Jacobi equations with co-invariant
//! derivatives: sampled paths, ci-derivative estimators, retarded optimal
//! control, characteristic complexes, a Lyapunov-type functional, and
//! checks of minimax and viscosity properties.
//!
//! The crate is `no_std` with `alloc`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod characteristics;
pub mod classical;
pub mod control;
pub mod error;
pub mod functional;
pub mod lyapunov;
pub mod minimax;
pub mod path;
pub mod sampling;
pub mod value;
pub mod vecops;

pub use error::{Error, Result};
pub use path::{GridSpec, History, HistoryPoint, PathGrid, SlopeSelection};
