//! Numerical laboratory for comparison theorems between coupled diffusions.

pub mod acceptance;
pub mod convex;
pub mod harness;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod pde;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod sde;
