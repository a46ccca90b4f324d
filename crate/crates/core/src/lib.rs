//! Discontinuous Galerkin Poisson solver with CNN surrogates trained on
//! DG-based losses.

pub mod dg;
pub mod io;
pub mod mesh;
pub mod nn;
pub mod sparse;
pub mod symbolic;
pub mod train;
