//! Multi-agent consensus equilibrium.
//!
//! A stack of agents `F₁ … F_ℓ` (each keeping its own copy of the image)
//! is driven to the point where every agent outputs the same
//! reconstruction (*consensus*) and the weighted agent updates sum to
//! zero (*equilibrium*): `F(v*) = G(v*)`, with `G` the operator that
//! replaces every stack component by the weighted average. The solver is
//! the Mann iteration of `T = (2G − I)(2F − I)`, written in its
//! update-form `v ← v + 2ρ(z − x)`.

use crate::agents::Agent;
use crate::buffer::{ImageBuffer, EPS_DENOM};
use crate::error::{PnpError, Result};
use crate::solvers::{IterationRecord, SolverConfig, SolverTrace, StopReason};

/// An ordered stack of image buffers with a common shape.
#[derive(Debug, Clone)]
pub struct StackedImage {
    components: Vec<ImageBuffer>,
}

impl StackedImage {
    pub fn new(components: Vec<ImageBuffer>) -> Result<Self> {
        if components.is_empty() {
            return Err(PnpError::InvalidArgument {
                name: "components",
                reason: "stack must be nonempty".into(),
            });
        }
        let shape = components[0].shape().to_vec();
        for c in &components[1..] {
            if c.shape() != shape {
                return Err(PnpError::ShapeMismatch {
                    context: "StackedImage",
                    left: shape,
                    right: c.shape().to_vec(),
                });
            }
        }
        Ok(Self { components })
    }

    /// `ℓ` copies of one image.
    pub fn broadcast(x: &ImageBuffer, count: usize) -> Result<Self> {
        Self::new(vec![x.clone(); count])
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, j: usize) -> &ImageBuffer {
        &self.components[j]
    }

    pub fn components(&self) -> &[ImageBuffer] {
        &self.components
    }

    pub fn shape(&self) -> &[usize] {
        self.components[0].shape()
    }

    /// Euclidean norm of the concatenated stack.
    pub fn norm2(&self) -> f64 {
        let mut acc = 0.0;
        for c in &self.components {
            let n = c.norm2();
            acc += n * n;
        }
        acc.sqrt()
    }

    pub fn dist2(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(PnpError::InvalidArgument {
                name: "other",
                reason: format!("stack sizes differ: {} vs {}", self.len(), other.len()),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.components.iter().zip(&other.components) {
            let d = a.dist2(b)?;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }

    fn zip_map(&self, other: &Self, f: impl Fn(&ImageBuffer, &ImageBuffer) -> Result<ImageBuffer>) -> Result<Self> {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }
}

/// A weighted collection of at least two agents acting on a common shape.
pub struct AgentStack {
    agents: Vec<Box<dyn Agent>>,
    weights: Vec<f64>,
}

impl AgentStack {
    /// Uniform weights.
    pub fn new(agents: Vec<Box<dyn Agent>>) -> Result<Self> {
        let w = vec![1.0 / agents.len().max(1) as f64; agents.len()];
        Self::with_weights(agents, w)
    }

    pub fn with_weights(agents: Vec<Box<dyn Agent>>, weights: Vec<f64>) -> Result<Self> {
        if agents.len() < 2 {
            return Err(PnpError::InvalidArgument {
                name: "agents",
                reason: format!("need at least two agents, got {}", agents.len()),
            });
        }
        if weights.len() != agents.len() {
            return Err(PnpError::InvalidArgument {
                name: "weights",
                reason: format!(
                    "{} weights for {} agents",
                    weights.len(),
                    agents.len()
                ),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(PnpError::InvalidArgument {
                name: "weights",
                reason: "weights must be nonnegative and finite".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(PnpError::InvalidArgument {
                name: "weights",
                reason: format!("weights must sum to 1, got {sum}"),
            });
        }
        Ok(Self { agents, weights })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Componentwise agent application `F(v) = [F₁(v₁), …, F_ℓ(v_ℓ)]`.
    pub fn apply(&self, v: &StackedImage) -> Result<StackedImage> {
        if v.len() != self.agents.len() {
            return Err(PnpError::InvalidArgument {
                name: "v",
                reason: format!(
                    "stack has {} components for {} agents",
                    v.len(),
                    self.agents.len()
                ),
            });
        }
        let components = self
            .agents
            .iter()
            .zip(v.components())
            .map(|(agent, c)| agent.apply(c))
            .collect::<Result<Vec<_>>>()?;
        StackedImage::new(components)
    }
}

/// Weighted stack average `v̄ = Σ_j μ_j v_j`.
pub fn weighted_average(v: &StackedImage, weights: &[f64]) -> Result<ImageBuffer> {
    if weights.len() != v.len() {
        return Err(PnpError::InvalidArgument {
            name: "weights",
            reason: format!("{} weights for {} components", weights.len(), v.len()),
        });
    }
    let mut acc = v.component(0).scale(weights[0])?;
    for j in 1..v.len() {
        acc = ImageBuffer::axpy(weights[j], v.component(j), &acc)?;
    }
    Ok(acc)
}

/// The averaging operator `G(v) = (v̄, …, v̄)`: a linear projection, so
/// `G² = G` and `(2G − I)` is its own inverse.
pub fn averaging(v: &StackedImage, weights: &[f64]) -> Result<StackedImage> {
    let mean = weighted_average(v, weights)?;
    StackedImage::new(vec![mean; v.len()])
}

/// Consensus and equilibrium residuals of a stack against its agent
/// outputs: `max_j ‖F_j(v_j) − mean_F‖` and `‖Σ_j μ_j (v_j − F_j(v_j))‖`.
pub fn stack_residuals(
    v: &StackedImage,
    fv: &StackedImage,
    weights: &[f64],
) -> Result<(f64, f64)> {
    let mean_f = weighted_average(fv, weights)?;
    let mut consensus = 0.0f64;
    for j in 0..fv.len() {
        consensus = consensus.max(fv.component(j).dist2(&mean_f)?);
    }
    let mut acc = ImageBuffer::zeros(v.shape())?;
    for j in 0..v.len() {
        let upd = v.component(j).sub(fv.component(j))?;
        acc = ImageBuffer::axpy(weights[j], &upd, &acc)?;
    }
    Ok((consensus, acc.norm2()))
}

/// Solves the consensus-equilibrium system by Mann iteration with
/// relaxation `cfg.rho`, starting every stack component at `x0`.
///
/// Per iteration: apply the agents, reflect (`w = 2x − v`), average and
/// restack, then `v ← v + 2ρ(z − x)`. Convergence is declared on the
/// stacked relative change `‖v_k − v_{k−1}‖ / ‖v_{k−1}‖ ≤ fp_tol`; the
/// returned image is the final restacked average.
pub fn mace_solve(
    stack: &AgentStack,
    x0: &ImageBuffer,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    let rho = cfg.rho;
    let ell = stack.len();
    let mut v = StackedImage::broadcast(x0, ell)?;
    let mut result = x0.clone();

    let mut trace = SolverTrace {
        records: Vec::new(),
        stop_reason: StopReason::MaxIters,
        final_dual: None,
    };

    for k in 1..=cfg.max_iters {
        let x = stack.apply(&v)?;
        // w = 2x − v, reflected stack.
        let w = x.zip_map(&v, |xc, vc| ImageBuffer::lincomb(2.0, xc, -1.0, vc))?;
        let zbar = weighted_average(&w, stack.weights())?;
        let (consensus, equilibrium) = stack_residuals(&v, &x, stack.weights())?;

        // v ← v + 2ρ(z − x), componentwise with z = (z̄, …, z̄).
        let mut new_components = Vec::with_capacity(ell);
        for j in 0..ell {
            let zx = zbar.sub(x.component(j))?;
            new_components.push(ImageBuffer::axpy(2.0 * rho, &zx, v.component(j))?);
        }
        let v_new = StackedImage::new(new_components)?;

        let fp_residual = v_new.dist2(&v)? / v.norm2().max(EPS_DENOM);
        let mut rec = IterationRecord {
            iter: k,
            fp_residual,
            objective: None,
            ce_residual_g: None,
            ce_residual_d: None,
            red_residual: None,
            consensus_residual: Some(consensus),
            equilibrium_residual: Some(equilibrium),
            inner_residual: None,
            iterate: None,
        };
        if cfg.keep_iterates {
            rec.iterate = Some(zbar.clone());
        }
        trace.records.push(rec);

        v = v_new;
        result = zbar;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((result, trace))
}
