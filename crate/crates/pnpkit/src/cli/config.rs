//! Experiment configuration: JSON-facing types and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agents::{
    Agent, GaussianSmooth, IdentityAgent, MedianFilter, ScaledIdentity, Slicewise2D,
    SoftThreshold, TvProx,
};
use crate::error::{PnpError, Result};
use crate::fidelity::{ProxMethod, SamplerRule};
use crate::solvers::ThetaSchedule;

fn config_err(field: &str, message: impl Into<String>) -> PnpError {
    PnpError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Forward-model family of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Blur with a periodic Gaussian, decimate by `rate` per axis, add
    /// noise.
    Superres {
        rate: usize,
        blur_sigma: f64,
        noise_sigma: f64,
    },
    /// Periodic Gaussian blur plus noise.
    Deblur {
        kernel_sigma: f64,
        noise_sigma: f64,
    },
    /// Dense Gaussian random projections keeping
    /// `round(subsample_fraction * n)` measurements.
    CompressiveSensing {
        subsample_fraction: f64,
        seed: u64,
        #[serde(default = "default_cs_noise")]
        noise_sigma: f64,
    },
    /// Randomly remove `mask_fraction` of the pixels.
    Inpaint {
        mask_fraction: f64,
        seed: u64,
        #[serde(default = "default_cs_noise")]
        noise_sigma: f64,
    },
    /// Identity measurements of a 3D volume plus noise; `axes` are the
    /// slice orientations for the consensus smoothing agents.
    VolumeFusion { axes: Vec<usize>, noise_sigma: f64 },
}

fn default_cs_noise() -> f64 {
    0.01
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemSpec::Superres {
                rate,
                blur_sigma,
                noise_sigma,
            } => {
                if ![2, 3, 4].contains(rate) {
                    return Err(config_err("problem.rate", format!("must be 2, 3, or 4, got {rate}")));
                }
                if !(*blur_sigma > 0.0) {
                    return Err(config_err("problem.blur_sigma", "must be positive"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(config_err("problem.noise_sigma", "must be nonnegative"));
                }
            }
            ProblemSpec::Deblur {
                kernel_sigma,
                noise_sigma,
            } => {
                if !(*kernel_sigma > 0.0) {
                    return Err(config_err("problem.kernel_sigma", "must be positive"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(config_err("problem.noise_sigma", "must be nonnegative"));
                }
            }
            ProblemSpec::CompressiveSensing {
                subsample_fraction,
                noise_sigma,
                ..
            } => {
                if !(*subsample_fraction > 0.0 && *subsample_fraction <= 1.0) {
                    return Err(config_err(
                        "problem.subsample_fraction",
                        format!("must lie in (0, 1], got {subsample_fraction}"),
                    ));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(config_err("problem.noise_sigma", "must be nonnegative"));
                }
            }
            ProblemSpec::Inpaint {
                mask_fraction,
                noise_sigma,
                ..
            } => {
                if !(*mask_fraction > 0.0 && *mask_fraction < 1.0) {
                    return Err(config_err(
                        "problem.mask_fraction",
                        format!("must lie in (0, 1), got {mask_fraction}"),
                    ));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(config_err("problem.noise_sigma", "must be nonnegative"));
                }
            }
            ProblemSpec::VolumeFusion { axes, noise_sigma } => {
                if axes.is_empty() {
                    return Err(config_err("problem.axes", "need at least one slicing axis"));
                }
                if axes.iter().any(|&a| a >= 3) {
                    return Err(config_err("problem.axes", "volume axes must be 0, 1, or 2"));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(config_err("problem.noise_sigma", "must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

/// Which algorithm runs the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Admm,
    Fista,
    PnpAdmm,
    PnpFista,
    PnpIsta,
    RedSd,
    OnlinePnp,
    Simba,
    Mace,
}

impl SolverKind {
    pub fn is_gradient_type(self) -> bool {
        matches!(
            self,
            SolverKind::Fista
                | SolverKind::PnpFista
                | SolverKind::PnpIsta
                | SolverKind::RedSd
                | SolverKind::OnlinePnp
                | SolverKind::Simba
        )
    }

    pub fn is_online(self) -> bool {
        matches!(self, SolverKind::OnlinePnp | SolverKind::Simba)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Admm => "admm",
            SolverKind::Fista => "fista",
            SolverKind::PnpAdmm => "pnp_admm",
            SolverKind::PnpFista => "pnp_fista",
            SolverKind::PnpIsta => "pnp_ista",
            SolverKind::RedSd => "red_sd",
            SolverKind::OnlinePnp => "online_pnp",
            SolverKind::Simba => "simba",
            SolverKind::Mace => "mace",
        }
    }
}

/// Buildable agent description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Identity,
    ScaledIdentity {
        alpha: f64,
    },
    SoftThreshold {
        threshold: f64,
    },
    TvProx {
        threshold: f64,
        #[serde(default = "default_tv_iters")]
        inner_iters: usize,
    },
    GaussianSmooth {
        sigma: f64,
    },
    MedianFilter {
        window: usize,
    },
    Slicewise2d {
        axis: usize,
        inner: Box<AgentSpec>,
    },
}

fn default_tv_iters() -> usize {
    crate::agents::TV_DEFAULT_INNER_ITERS
}

impl AgentSpec {
    pub fn build(&self) -> Result<Box<dyn Agent>> {
        Ok(match self {
            AgentSpec::Identity => Box::new(IdentityAgent),
            AgentSpec::ScaledIdentity { alpha } => Box::new(ScaledIdentity { alpha: *alpha }),
            AgentSpec::SoftThreshold { threshold } => Box::new(SoftThreshold::new(*threshold)?),
            AgentSpec::TvProx {
                threshold,
                inner_iters,
            } => Box::new(TvProx::new(*threshold, *inner_iters)?),
            AgentSpec::GaussianSmooth { sigma } => Box::new(GaussianSmooth::new(*sigma)?),
            AgentSpec::MedianFilter { window } => Box::new(MedianFilter::new(*window)?),
            AgentSpec::Slicewise2d { axis, inner } => {
                Box::new(Slicewise2D::new(*axis, inner.build()?)?)
            }
        })
    }
}

/// Synthetic ground-truth image family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    PiecewiseConstantBlocks,
    SmoothBumps,
    RandomSparse {
        #[serde(default = "default_sparsity")]
        sparsity: f64,
    },
}

fn default_sparsity() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub shape: Vec<usize>,
}

/// One experiment: problem, solver, agents, solver parameters, input, and
/// output location. Optional fields resolve to documented defaults; the
/// manifest records the fully resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solver: SolverKind,
    /// Prior agent for single-agent solvers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentSpec>,
    /// Prior agents for MACE (the fidelity prox agent is prepended
    /// automatically).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_schedule: Option<ThetaSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox: Option<ProxMethod>,
    /// Block count for online solvers (compressive sensing only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    /// Ground-truth image file (PGM or RAWF64). Exactly one of
    /// `input_image` and `phantom` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Structural validation with field-path errors. Does not touch the
    /// filesystem beyond checking that a referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;

        match (&self.input_image, &self.phantom) {
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "input_image",
                    "set either input_image or phantom, not both",
                ))
            }
            (None, None) => {
                return Err(config_err("input_image", "one of input_image or phantom is required"))
            }
            (Some(path), None) => {
                if !path.exists() {
                    return Err(config_err(
                        "input_image",
                        format!("file not found: {}", path.display()),
                    ));
                }
            }
            (None, Some(p)) => {
                if p.shape.is_empty() || p.shape.len() > crate::buffer::MAX_NDIM {
                    return Err(config_err("phantom.shape", "need 1 to 4 dimensions"));
                }
                if p.shape.iter().any(|&n| n == 0) {
                    return Err(config_err("phantom.shape", "zero extent"));
                }
                if let PhantomKind::RandomSparse { sparsity } = p.kind {
                    if !(sparsity > 0.0 && sparsity <= 1.0) {
                        return Err(config_err("phantom.sparsity", "must lie in (0, 1]"));
                    }
                }
            }
        }

        if self.solver == SolverKind::Mace {
            match &self.agents {
                None => {
                    return Err(config_err(
                        "agents",
                        "the consensus solver needs at least one prior agent",
                    ))
                }
                Some(list) if list.is_empty() => {
                    return Err(config_err("agents", "need at least one prior agent"))
                }
                _ => {}
            }
        } else if self.agent.is_none() {
            return Err(config_err("agent", "this solver needs a prior agent"));
        }

        if self.solver.is_online() {
            let b = self.blocks.unwrap_or(1);
            if b == 0 {
                return Err(config_err("blocks", "block count must be at least 1"));
            }
            if b > 1 && !matches!(self.problem, ProblemSpec::CompressiveSensing { .. }) {
                return Err(config_err(
                    "blocks",
                    "block decompositions are only available for compressive_sensing problems",
                ));
            }
        }

        if matches!(self.problem, ProblemSpec::VolumeFusion { .. }) {
            if self.solver != SolverKind::Mace {
                return Err(config_err("solver", "volume_fusion runs under the mace solver"));
            }
            if let Some(p) = &self.phantom {
                if p.shape.len() != 3 {
                    return Err(config_err("phantom.shape", "volume_fusion needs a 3D shape"));
                }
            }
        }

        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(config_err("gamma", "must be positive"));
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(config_err("tau", "must be positive"));
            }
        }
        if let Some(r) = self.rho {
            if !(r > 0.0 && r < 1.0) {
                return Err(config_err("rho", "must lie strictly inside (0, 1)"));
            }
        }
        if let Some(f) = self.fp_tol {
            if !(f > 0.0) {
                return Err(config_err("fp_tol", "must be positive"));
            }
        }
        if let Some(m) = self.max_iters {
            if m == 0 {
                return Err(config_err("max_iters", "need at least one iteration"));
            }
        }
        if let Some(p) = self.minibatch {
            if p == 0 {
                return Err(config_err("minibatch", "minibatch size must be at least 1"));
            }
        }
        Ok(())
    }
}
