//! Matrix-free toolkit for plug-and-play image reconstruction.
//!
//! The crate assembles inverse-problem solvers from three interchangeable
//! parts: a matrix-free measurement operator ([`linops::LinearOperator`]),
//! a quadratic data-fidelity term ([`fidelity::DataFidelity`]), and a
//! pluggable prior operator ([`agents::Agent`]) — a denoiser, smoother, or
//! proximal map. On top of those it provides:
//!
//! - classical ADMM and FISTA, their plug-and-play variants, regularization
//!   by denoising (RED-SD), and online/minibatch versions (online PnP and
//!   SIMBA), all in [`solvers`];
//! - multi-agent consensus equilibrium (MACE) for fusing any number of
//!   agents in [`mace`];
//! - fixed-point diagnostics and image metrics in [`diagnostics`];
//! - a config-driven experiment runner with packaged demos in [`cli`].
//!
//! Everything is deterministic: one documented seeded generator
//! ([`rng::SeededRng`]) drives all randomness, and reductions accumulate
//! in a fixed order, so a run is bitwise reproducible from its manifest.

pub mod agents;
pub mod buffer;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fidelity;
pub mod linops;
pub mod mace;
pub mod rng;
pub mod solvers;

pub use buffer::ImageBuffer;
pub use error::{PnpError, Result};
pub use rng::SeededRng;
