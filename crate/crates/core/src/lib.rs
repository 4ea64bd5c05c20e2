//! Finite-volume solver for cross-diffusion systems with an entropy structure.

pub mod analysis;
pub mod config;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod scheme;
pub mod solver;
