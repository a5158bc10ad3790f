//! Bipolar Euler–Poisson laboratory: symmetrized two-fluid dynamics around an
//! exact Burgers reference flow, a free-space Poisson solver, the unipolar
//! infinity-ion-mass limit, and the diagnostics used to measure decay and
//! convergence rates.

pub mod burgers;
pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod grid;
pub mod lattice_green;
pub mod limit;
pub mod model;
pub mod params;
pub mod poisson;
pub mod solver;
pub mod study;
