//! Config-driven experiment runner: JSON experiment configs, synthetic
//! phantoms, PGM/RAWF64 image I/O, CSV traces, and packaged demos.
//!
//! The pipeline mirrors the standard plug-and-play workflow: simulate
//! measurements through the forward operator, seed the solver with a
//! denoised pseudo-inverse, run the configured algorithm, and write the
//! reconstruction together with a manifest that reproduces the run
//! bitwise.

mod config;
mod demos;
mod io;
mod phantom;
mod runner;

pub use config::{
    AgentSpec, ExperimentConfig, PhantomKind, PhantomSpec, ProblemSpec, SolverKind,
};
pub use demos::{demo_config, demo_names};
pub use io::{read_image, read_pgm, read_rawf64, write_pgm, write_rawf64, PgmEncoding};
pub use phantom::phantom;
pub use runner::{run_experiment, EquilibriumSummary, RunManifest, RunMetrics, RunOptions};
