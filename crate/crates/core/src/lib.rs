//! Single-measurement reconstruction of the potential in the fractional
//! Schrödinger equation `((-Δ)^s + q) u = 0` on a truncated 1-D grid.

pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod io;
pub mod profile;
pub mod quadrature;
pub mod reconstruct;
pub mod sobolev;
pub mod ucp;

pub use error::{Error, Result};
