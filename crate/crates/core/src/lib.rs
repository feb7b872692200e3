//! Bi-level ergodic exploration: information maps, Fourier ergodic metric,
//! trajectory optimization for a rover body and its pan-tilt camera, and a
//! simulated field for benchmarking.

pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod infomap;
pub mod planner;
pub mod bench;
pub mod solver;
pub mod world;

pub use error::{Error, Result};
