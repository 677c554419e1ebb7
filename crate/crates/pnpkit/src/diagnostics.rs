//! Fixed-point residual evaluators and image-quality metrics.
//!
//! Each solver family has a defining equilibrium condition; these
//! evaluators measure how far a given point is from satisfying it,
//! independently of how the point was produced. The fidelity prox inside
//! the G-side residual is evaluated in closed form when possible and by
//! tightly converged CG otherwise, so the report reflects the point, not
//! solver shortcuts.

use crate::agents::Agent;
use crate::buffer::{ImageBuffer, EPS_DENOM};
use crate::error::{PnpError, Result};
use crate::fidelity::{Fidelity, ProxMethod};
use crate::solvers::red_field;

/// CG settings used when the G-side prox has no closed form.
const TIGHT_CG_TOL: f64 = 1e-12;
const TIGHT_CG_MAXITER: usize = 500;

/// Residuals of the consensus-equilibrium, RED, and proximal-gradient
/// fixed-point conditions at a point `(x, u)`.
///
/// All entries are nonnegative and finite; the `ce_*`, `pnp_ista`, and
/// `grad_identity` entries are relative to `max(‖x‖, 1e-12)`, while
/// `red_residual` is the plain norm `‖∇g(x) + τ(x − D(x))‖`.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumReport {
    /// `‖x − G(x − u)‖ / ‖x‖` with `G = prox_{γg}`.
    pub ce_residual_g: f64,
    /// `‖x − D(x + u)‖ / ‖x‖`.
    pub ce_residual_d: f64,
    /// `‖∇g(x) + τ(x − D(x))‖` (absolute norm).
    pub red_residual: f64,
    /// `‖x − D(x − γ∇g(x))‖ / ‖x‖`.
    pub pnp_ista_residual: f64,
    /// Defect of the dual identity `u = −γ∇g(x)`, as `‖u + γ∇g(x)‖ / ‖x‖`.
    pub grad_identity_residual: f64,
}

fn tight_prox_method(g: &dyn Fidelity) -> ProxMethod {
    if g.hessian_diagonal().is_some() {
        ProxMethod::ClosedForm
    } else {
        ProxMethod::Cg {
            tol: TIGHT_CG_TOL,
            maxiter: TIGHT_CG_MAXITER,
        }
    }
}

/// Evaluates every fixed-point residual at `(x, u)` for the given
/// fidelity, agent, step `gamma`, and RED weight `tau`.
pub fn consensus_equilibrium_residuals(
    g: &dyn Fidelity,
    agent: &dyn Agent,
    x: &ImageBuffer,
    u: &ImageBuffer,
    gamma: f64,
    tau: f64,
) -> Result<EquilibriumReport> {
    if x.shape() != u.shape() {
        return Err(PnpError::ShapeMismatch {
            context: "consensus_equilibrium_residuals",
            left: x.shape().to_vec(),
            right: u.shape().to_vec(),
        });
    }
    let xnorm = x.norm2().max(EPS_DENOM);
    let method = tight_prox_method(g);

    let gx = g.prox(&x.sub(u)?, gamma, &method, None)?;
    let ce_residual_g = gx.dist2(x)? / xnorm;

    let dx_plus_u = agent.apply(&x.add(u)?)?;
    let ce_residual_d = dx_plus_u.dist2(x)? / xnorm;

    let grad = g.grad(x)?;
    let dx = agent.apply(x)?;
    let red_residual = red_field(&grad, x, &dx, tau)?.norm2();

    let ista_point = agent.apply(&ImageBuffer::axpy(-gamma, &grad, x)?)?;
    let pnp_ista_residual = ista_point.dist2(x)? / xnorm;

    let grad_identity_residual = ImageBuffer::axpy(gamma, &grad, u)?.norm2() / xnorm;

    Ok(EquilibriumReport {
        ce_residual_g,
        ce_residual_d,
        red_residual,
        pnp_ista_residual,
        grad_identity_residual,
    })
}

/// Mean squared error between two same-shaped buffers.
pub fn mse(x: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    let d = x.dist2(reference)?;
    Ok(d * d / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB: `10 log₁₀(peak² / MSE)`.
///
/// Exact equality (zero MSE) reports `f64::INFINITY`.
pub fn psnr(x: &ImageBuffer, reference: &ImageBuffer, peak: f64) -> Result<f64> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(PnpError::InvalidArgument {
            name: "peak",
            reason: format!("must be positive and finite, got {peak}"),
        });
    }
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}
