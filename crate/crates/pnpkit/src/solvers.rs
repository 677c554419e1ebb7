//! Iterative reconstruction algorithms.
//!
//! Batch solvers: ADMM and FISTA (classical, with a proximal-map agent for
//! the regularizer), their plug-and-play variants PnP-ADMM and
//! PnP-FISTA/PnP-ISTA (any agent), and RED steepest descent. Online
//! solvers: online PnP and SIMBA, which touch one block (or a minibatch)
//! of the measurements per iteration. A generic Mann iterator covers
//! relaxed fixed-point schemes.
//!
//! The classical and plug-and-play entry points share one loop, so ADMM
//! with a true proximal agent and PnP-ADMM with the same agent produce
//! bitwise-identical trajectories; likewise online solvers with one block
//! reproduce their batch counterparts bitwise.
//!
//! Stopping: relative fixed-point residual
//! `‖state_k − state_{k−1}‖ / max(‖state_{k−1}‖, 1e-12)`, joint over all
//! state variables for ADMM-type solvers, compared against `fp_tol`.

use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::buffer::{ImageBuffer, EPS_DENOM};
use crate::error::{PnpError, Result};
use crate::fidelity::{BlockFidelity, BlockSampler, Fidelity, ProxMethod, ProxWarmState};

/// Momentum schedule for FISTA-type solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum ThetaSchedule {
    /// θ ≡ 1: plain proximal-gradient / ISTA.
    Ista,
    /// Momentum extrapolation with q₀ = 1,
    /// `q_k = (1 + sqrt(1 + 4 q_{k−1}²)) / 2`,
    /// `x_k = s_k + ((q_{k−1} − 1)/q_k)(s_k − s_{k−1})`.
    Nesterov,
    /// Fixed θ in (0, 1]: `x_k = (1−θ) s_{k−1} + θ s_k`.
    Constant { theta: f64 },
}

/// Shared solver parameters.
///
/// `gamma` is the step size for gradient-type solvers and the penalty for
/// ADMM-type solvers; `tau` only matters for RED-SD and SIMBA; `rho` is
/// the Mann relaxation used by `mann_iterate` and MACE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tau: f64,
    pub rho: f64,
    pub theta: ThetaSchedule,
    pub max_iters: usize,
    pub fp_tol: f64,
    pub seed: u64,
    /// How ADMM-type solvers evaluate `prox_{γg}`.
    pub prox: ProxMethod,
    /// Minibatch size for online solvers.
    pub minibatch: usize,
    /// Keep a clone of each iterate in the trace (costs memory; used by
    /// the CLI for per-iteration metrics).
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 1.0,
            rho: 0.5,
            theta: ThetaSchedule::Nesterov,
            max_iters: 1000,
            fp_tol: 1e-6,
            seed: 0,
            prox: ProxMethod::Auto,
            minibatch: 1,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(PnpError::InvalidArgument {
                name: "gamma",
                reason: format!("must be positive, got {}", self.gamma),
            });
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(PnpError::InvalidArgument {
                name: "tau",
                reason: format!("must be positive, got {}", self.tau),
            });
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(PnpError::InvalidArgument {
                name: "rho",
                reason: format!("must lie strictly inside (0, 1), got {}", self.rho),
            });
        }
        if let ThetaSchedule::Constant { theta } = self.theta {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(PnpError::InvalidArgument {
                    name: "theta",
                    reason: format!("must lie in (0, 1], got {theta}"),
                });
            }
        }
        if self.max_iters == 0 {
            return Err(PnpError::InvalidArgument {
                name: "max_iters",
                reason: "need at least one iteration".into(),
            });
        }
        if !(self.fp_tol > 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "fp_tol",
                reason: format!("must be positive, got {}", self.fp_tol),
            });
        }
        if self.minibatch == 0 {
            return Err(PnpError::InvalidArgument {
                name: "minibatch",
                reason: "minibatch size must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Why a solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TolReached,
    MaxIters,
}

/// One iteration of a solver trace. Fields that do not apply to a solver
/// family stay `None`.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    /// Relative fixed-point residual of the solver state.
    pub fp_residual: f64,
    /// `g(x_k)`, plus the regularizer value when the agent exposes one.
    pub objective: Option<f64>,
    /// ADMM family: `‖x − G(x−u)‖/‖x‖`, evaluated with the iterate pair
    /// from the start of the step (the prox output is reused, so this
    /// lags the recorded x by one iteration).
    pub ce_residual_g: Option<f64>,
    /// ADMM family: `‖x − D(x+u)‖/‖x‖` at the current iterate. FISTA
    /// family: the same residual with `u = −γ∇g(x)`, which coincides with
    /// the PnP-ISTA fixed-point residual `‖x − D(x − γ∇g(x))‖/‖x‖`.
    pub ce_residual_d: Option<f64>,
    /// RED family: `‖∇g(x) + τ(x − D(x))‖`. For RED-SD this is evaluated
    /// at the recorded iterate; for SIMBA it is the norm of the sampled
    /// minibatch field that produced the step.
    pub red_residual: Option<f64>,
    /// MACE: `max_j ‖F_j(v_j) − mean_F‖`.
    pub consensus_residual: Option<f64>,
    /// MACE: `‖Σ_j μ_j (v_j − F_j(v_j))‖`.
    pub equilibrium_residual: Option<f64>,
    /// Final relative residual of the inner partial-prox solve.
    pub inner_residual: Option<f64>,
    /// Clone of the iterate when `keep_iterates` is set.
    pub iterate: Option<ImageBuffer>,
}

impl IterationRecord {
    fn new(iter: usize, fp_residual: f64) -> Self {
        Self {
            iter,
            fp_residual,
            objective: None,
            ce_residual_g: None,
            ce_residual_d: None,
            red_residual: None,
            consensus_residual: None,
            equilibrium_residual: None,
            inner_residual: None,
            iterate: None,
        }
    }
}

/// Per-iteration records plus the reason the run ended.
#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Final scaled dual variable for ADMM-type solvers (needed to check
    /// the consensus-equilibrium conditions post hoc).
    pub final_dual: Option<ImageBuffer>,
}

impl SolverTrace {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            stop_reason: StopReason::MaxIters,
            final_dual: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

fn resolve_x0(g: &dyn Fidelity, x0: Option<&ImageBuffer>) -> Result<ImageBuffer> {
    match x0 {
        Some(x) => {
            if x.shape() != g.input_shape() {
                return Err(PnpError::ShapeMismatch {
                    context: "x0",
                    left: g.input_shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
            Ok(x.clone())
        }
        None => g.default_init(),
    }
}

/// `x − γ·grad` as a single fused pass; every gradient-type solver uses
/// this same helper so trajectories coincide bitwise where the algorithms
/// coincide mathematically.
fn gradient_step(x: &ImageBuffer, grad: &ImageBuffer, gamma: f64) -> Result<ImageBuffer> {
    ImageBuffer::axpy(-gamma, grad, x)
}

/// RED search field `H = grad + τ(x − D(x))`, fused.
pub(crate) fn red_field(
    grad: &ImageBuffer,
    x: &ImageBuffer,
    dx: &ImageBuffer,
    tau: f64,
) -> Result<ImageBuffer> {
    if grad.shape() != x.shape() || x.shape() != dx.shape() {
        return Err(PnpError::ShapeMismatch {
            context: "red_field",
            left: grad.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let data: Vec<f64> = (0..x.len())
        .map(|i| grad.data()[i] + tau * (x.data()[i] - dx.data()[i]))
        .collect();
    ImageBuffer::new(x.shape().to_vec(), data)
}

fn objective_with_reg(
    g: &dyn Fidelity,
    agent: &dyn Agent,
    x: &ImageBuffer,
    gamma: f64,
) -> Option<f64> {
    let base = g.eval(x).ok()?;
    Some(match agent.reg_value(x, gamma) {
        Some(h) => base + h,
        None => base,
    })
}

/// Classical ADMM: the regularizer enters through its proximal map
/// `h_prox` (caller contract: the agent is `prox_{γh}` for some `h`).
pub fn admm(
    g: &dyn Fidelity,
    h_prox: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    admm_loop(g, h_prox, x0, cfg)
}

/// PnP-ADMM: ADMM with the regularizer prox replaced by an arbitrary
/// agent. With a true proximal agent this is exactly [`admm`].
pub fn pnp_admm(
    g: &dyn Fidelity,
    denoiser: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    admm_loop(g, denoiser, x0, cfg)
}

fn admm_loop(
    g: &dyn Fidelity,
    agent: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    let gamma = cfg.gamma;
    let mut x = resolve_x0(g, x0)?;
    let mut z = x.clone();
    let mut u = ImageBuffer::zeros(x.shape())?;
    let mut warm = ProxWarmState::new();
    let partial = matches!(cfg.prox, ProxMethod::Partial { .. });

    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let z_new = g.prox(
            &x.sub(&u)?,
            gamma,
            &cfg.prox,
            if partial { Some(&mut warm) } else { None },
        )?;
        let x_new = agent.apply(&z_new.add(&u)?)?;
        let u_new = u.add(&z_new)?.sub(&x_new)?;

        let delta = (x_new.dist2(&x)?.powi(2)
            + z_new.dist2(&z)?.powi(2)
            + u_new.dist2(&u)?.powi(2))
        .sqrt();
        let denom = (x.norm2().powi(2) + z.norm2().powi(2) + u.norm2().powi(2))
            .sqrt()
            .max(EPS_DENOM);
        let fp_residual = delta / denom;

        let mut rec = IterationRecord::new(k, fp_residual);
        rec.objective = objective_with_reg(g, agent, &x_new, gamma);
        // G-side consensus residual, using the prox output already in
        // hand: ‖x_{k−1} − G(x_{k−1} − u_{k−1})‖ / ‖x_{k−1}‖.
        rec.ce_residual_g = Some(z_new.dist2(&x)? / x.norm2().max(EPS_DENOM));
        // D-side residual at the new iterate.
        let d_at_new = agent.apply(&x_new.add(&u_new)?)?;
        rec.ce_residual_d = Some(d_at_new.dist2(&x_new)? / x_new.norm2().max(EPS_DENOM));
        if partial {
            rec.inner_residual = warm.last_residual();
        }
        if cfg.keep_iterates {
            rec.iterate = Some(x_new.clone());
        }
        trace.records.push(rec);

        x = x_new;
        z = z_new;
        u = u_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    trace.final_dual = Some(u);
    Ok((x, trace))
}

/// Classical FISTA (caller contract: `h_prox` is a proximal-map agent).
pub fn fista(
    g: &dyn Fidelity,
    h_prox: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    fista_loop(g, h_prox, x0, cfg, cfg.theta)
}

/// PnP-FISTA: gradient step on the data term, then an arbitrary agent.
pub fn pnp_fista(
    g: &dyn Fidelity,
    denoiser: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    fista_loop(g, denoiser, x0, cfg, cfg.theta)
}

/// PnP-ISTA: PnP-FISTA with the momentum disabled (θ ≡ 1).
pub fn pnp_ista(
    g: &dyn Fidelity,
    denoiser: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    fista_loop(g, denoiser, x0, cfg, ThetaSchedule::Ista)
}

fn fista_loop(
    g: &dyn Fidelity,
    agent: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
    schedule: ThetaSchedule,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    let gamma = cfg.gamma;
    let mut x = resolve_x0(g, x0)?;
    let mut s_prev = x.clone();
    let mut q = 1.0f64;

    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let grad = g.grad(&x)?;
        let z = gradient_step(&x, &grad, gamma)?;
        let s = agent.apply(&z)?;

        let x_new = match schedule {
            ThetaSchedule::Ista => s.clone(),
            ThetaSchedule::Constant { theta } => {
                if theta == 1.0 {
                    s.clone()
                } else {
                    ImageBuffer::lincomb(1.0 - theta, &s_prev, theta, &s)?
                }
            }
            ThetaSchedule::Nesterov => {
                let q_new = 0.5 * (1.0 + (1.0 + 4.0 * q * q).sqrt());
                let beta = (q - 1.0) / q_new;
                q = q_new;
                // s + beta (s - s_prev)
                ImageBuffer::lincomb(1.0 + beta, &s, -beta, &s_prev)?
            }
        };

        let fp_residual = x_new.rel_change(&x)?;
        let mut rec = IterationRecord::new(k, fp_residual);
        rec.objective = objective_with_reg(g, agent, &x_new, gamma);
        // Fixed-point residual of x = D(x − γ∇g(x)) at the new iterate;
        // with u = −γ∇g(x) this is the D-side consensus residual.
        let grad_new = g.grad(&x_new)?;
        let probe = agent.apply(&gradient_step(&x_new, &grad_new, gamma)?)?;
        rec.ce_residual_d = Some(probe.dist2(&x_new)? / x_new.norm2().max(EPS_DENOM));
        if cfg.keep_iterates {
            rec.iterate = Some(x_new.clone());
        }
        trace.records.push(rec);

        s_prev = s;
        x = x_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((x, trace))
}

/// RED steepest descent:
/// `x ← x − γ(∇g(x) + τ(x − D(x)))`.
pub fn red_sd(
    g: &dyn Fidelity,
    denoiser: &dyn Agent,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    let gamma = cfg.gamma;
    let tau = cfg.tau;
    let mut x = resolve_x0(g, x0)?;
    let mut field = {
        let grad = g.grad(&x)?;
        let dx = denoiser.apply(&x)?;
        red_field(&grad, &x, &dx, tau)?
    };

    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let x_new = gradient_step(&x, &field, gamma)?;
        let field_new = {
            let grad = g.grad(&x_new)?;
            let dx = denoiser.apply(&x_new)?;
            red_field(&grad, &x_new, &dx, tau)?
        };

        let fp_residual = x_new.rel_change(&x)?;
        let mut rec = IterationRecord::new(k, fp_residual);
        rec.objective = g.eval(&x_new).ok();
        rec.red_residual = Some(field_new.norm2());
        if cfg.keep_iterates {
            rec.iterate = Some(x_new.clone());
        }
        trace.records.push(rec);

        x = x_new;
        field = field_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((x, trace))
}

/// Online PnP: one gradient block (or a minibatch of `cfg.minibatch`
/// blocks) per iteration, then the agent. Per-iteration cost is
/// independent of the number of blocks.
pub fn online_pnp(
    bf: &BlockFidelity,
    denoiser: &dyn Agent,
    sampler: &mut BlockSampler,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    check_sampler(bf, sampler)?;
    let gamma = cfg.gamma;
    let mut x = resolve_x0(bf, x0)?;

    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let indices = sampler.next_batch(cfg.minibatch);
        let grad = bf.minibatch_grad(&indices, &x)?;
        let z = gradient_step(&x, &grad, gamma)?;
        let x_new = denoiser.apply(&z)?;

        let fp_residual = x_new.rel_change(&x)?;
        let mut rec = IterationRecord::new(k, fp_residual);
        // Minibatch objective estimate: unbiased for the batch objective
        // under uniform sampling, and exactly the batch value when the
        // minibatch covers every block.
        rec.objective = bf.minibatch_eval(&indices, &x_new).ok();
        if cfg.keep_iterates {
            rec.iterate = Some(x_new.clone());
        }
        trace.records.push(rec);

        x = x_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((x, trace))
}

/// SIMBA: online RED — a sampled gradient block plus the full residual
/// field `τ(x − D(x))` per iteration.
pub fn simba(
    bf: &BlockFidelity,
    denoiser: &dyn Agent,
    sampler: &mut BlockSampler,
    x0: Option<&ImageBuffer>,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    check_sampler(bf, sampler)?;
    let gamma = cfg.gamma;
    let tau = cfg.tau;
    let mut x = resolve_x0(bf, x0)?;

    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let indices = sampler.next_batch(cfg.minibatch);
        let grad = bf.minibatch_grad(&indices, &x)?;
        let dx = denoiser.apply(&x)?;
        let field = red_field(&grad, &x, &dx, tau)?;
        let x_new = gradient_step(&x, &field, gamma)?;

        let fp_residual = x_new.rel_change(&x)?;
        let mut rec = IterationRecord::new(k, fp_residual);
        rec.objective = bf.minibatch_eval(&indices, &x_new).ok();
        rec.red_residual = Some(field.norm2());
        if cfg.keep_iterates {
            rec.iterate = Some(x_new.clone());
        }
        trace.records.push(rec);

        x = x_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((x, trace))
}

fn check_sampler(bf: &BlockFidelity, sampler: &BlockSampler) -> Result<()> {
    if sampler.block_count() != bf.block_count() {
        return Err(PnpError::InvalidArgument {
            name: "sampler",
            reason: format!(
                "sampler covers {} blocks but the fidelity has {}",
                sampler.block_count(),
                bf.block_count()
            ),
        });
    }
    Ok(())
}

/// Relaxed fixed-point iteration `v ← (1−ρ) v + ρ T(v)`.
pub fn mann_iterate(
    t: &dyn Fn(&ImageBuffer) -> Result<ImageBuffer>,
    v0: &ImageBuffer,
    rho: f64,
    cfg: &SolverConfig,
) -> Result<(ImageBuffer, SolverTrace)> {
    cfg.validate()?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(PnpError::InvalidArgument {
            name: "rho",
            reason: format!("must lie strictly inside (0, 1), got {rho}"),
        });
    }
    let mut v = v0.clone();
    let mut trace = SolverTrace::new();
    for k in 1..=cfg.max_iters {
        let tv = t(&v)?;
        let v_new = ImageBuffer::lincomb(1.0 - rho, &v, rho, &tv)?;

        let fp_residual = v_new.rel_change(&v)?;
        let mut rec = IterationRecord::new(k, fp_residual);
        if cfg.keep_iterates {
            rec.iterate = Some(v_new.clone());
        }
        trace.records.push(rec);

        v = v_new;
        if fp_residual <= cfg.fp_tol {
            trace.stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok((v, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{IdentityAgent, ScaledIdentity, SoftThreshold};
    use crate::fidelity::{DataFidelity, SamplerRule};
    use crate::linops::LinearOperator;
    use crate::rng::{gaussian_noise, SeededRng};

    fn denoise_fidelity(y: ImageBuffer) -> DataFidelity {
        let op = LinearOperator::identity(y.shape());
        DataFidelity::new(op, y).unwrap()
    }

    fn assert_buffers_bitwise(a: &ImageBuffer, b: &ImageBuffer) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn admm_identity_prior_recovers_measurements() {
        let mut rng = SeededRng::new(1);
        let y = gaussian_noise(&mut rng, &[12], 1.0).unwrap();
        let g = denoise_fidelity(y.clone());
        let cfg = SolverConfig {
            fp_tol: 1e-10,
            max_iters: 500,
            ..Default::default()
        };
        let (x, trace) = admm(&g, &IdentityAgent, None, &cfg).unwrap();
        assert_eq!(trace.stop_reason, StopReason::TolReached);
        assert!(x.dist2(&y).unwrap() / y.norm2() <= 1e-8);
    }

    #[test]
    fn admm_converges_to_consensus() {
        // At convergence x = z, so u stops moving and the dual residual
        // vanishes: check via the returned dual and a fresh prox.
        let mut rng = SeededRng::new(2);
        let y = gaussian_noise(&mut rng, &[10], 1.0).unwrap();
        let g = denoise_fidelity(y);
        let d = SoftThreshold::new(0.05).unwrap();
        let cfg = SolverConfig {
            fp_tol: 1e-12,
            max_iters: 2000,
            ..Default::default()
        };
        let (x, trace) = admm(&g, &d, None, &cfg).unwrap();
        let u = trace.final_dual.clone().unwrap();
        let z = g
            .prox(&x.sub(&u).unwrap(), cfg.gamma, &ProxMethod::Auto, None)
            .unwrap();
        assert!(z.dist2(&x).unwrap() / x.norm2() <= 1e-9);
    }

    #[test]
    fn pnp_admm_with_prox_agent_is_admm_bitwise() {
        let mut rng = SeededRng::new(3);
        let y = gaussian_noise(&mut rng, &[16], 1.0).unwrap();
        let g = denoise_fidelity(y);
        let d = SoftThreshold::new(0.1).unwrap();
        let cfg = SolverConfig {
            max_iters: 60,
            fp_tol: 1e-14,
            keep_iterates: true,
            ..Default::default()
        };
        let (xa, ta) = admm(&g, &d, None, &cfg).unwrap();
        let (xb, tb) = pnp_admm(&g, &d, None, &cfg).unwrap();
        assert_buffers_bitwise(&xa, &xb);
        assert_eq!(ta.records.len(), tb.records.len());
        for (ra, rb) in ta.records.iter().zip(&tb.records) {
            assert_eq!(ra.fp_residual.to_bits(), rb.fp_residual.to_bits());
            assert_buffers_bitwise(ra.iterate.as_ref().unwrap(), rb.iterate.as_ref().unwrap());
        }
    }

    #[test]
    fn fista_identity_prior_recovers_measurements() {
        let mut rng = SeededRng::new(4);
        let y = gaussian_noise(&mut rng, &[12], 1.0).unwrap();
        let g = denoise_fidelity(y.clone());
        let cfg = SolverConfig {
            gamma: 0.9,
            fp_tol: 1e-12,
            max_iters: 2000,
            ..Default::default()
        };
        let (x, _) = pnp_fista(&g, &IdentityAgent, None, &cfg).unwrap();
        assert!(x.dist2(&y).unwrap() / y.norm2() <= 1e-9);
    }

    #[test]
    fn pnp_ista_scaled_identity_contracts_at_analytic_rate() {
        // x_{k+1} = α(1−γ)x_k + αγy: contraction factor α(1−γ).
        let mut rng = SeededRng::new(5);
        let y = gaussian_noise(&mut rng, &[16], 1.0).unwrap();
        let g = denoise_fidelity(y);
        let d = ScaledIdentity { alpha: 0.5 };
        let gamma = 0.9;
        let cfg = SolverConfig {
            gamma,
            fp_tol: 1e-15,
            max_iters: 12,
            keep_iterates: true,
            ..Default::default()
        };
        let x0 = ImageBuffer::zeros(&[16]).unwrap();
        let (_, trace) = pnp_ista(&g, &d, Some(&x0), &cfg).unwrap();
        let analytic = 0.5 * (1.0 - gamma);
        let mut prev_delta: Option<f64> = None;
        for w in trace.records.windows(2) {
            let a = w[0].iterate.as_ref().unwrap();
            let b = w[1].iterate.as_ref().unwrap();
            let delta = b.dist2(a).unwrap();
            if let Some(p) = prev_delta {
                if p > 1e-12 {
                    let ratio = delta / p;
                    assert!(
                        (ratio - analytic).abs() <= 1e-6,
                        "ratio {ratio} vs analytic {analytic}"
                    );
                }
            }
            prev_delta = Some(delta);
        }
    }

    #[test]
    fn red_sd_identity_denoiser_is_gradient_descent() {
        let mut rng = SeededRng::new(6);
        let y = gaussian_noise(&mut rng, &[10], 1.0).unwrap();
        let g = denoise_fidelity(y.clone());
        let cfg = SolverConfig {
            gamma: 0.5,
            tau: 1.0,
            fp_tol: 1e-12,
            max_iters: 3000,
            ..Default::default()
        };
        let (x, _) = red_sd(&g, &IdentityAgent, None, &cfg).unwrap();
        assert!(x.dist2(&y).unwrap() / y.norm2() <= 1e-9);
    }

    #[test]
    fn red_sd_scaled_identity_equilibrium_closed_form() {
        // A = I, D = α I: equilibrium x* = y / (1 + τ(1−α)).
        // y = 1, τ = 1, α = 0.5 gives x* = 2/3.
        let y = ImageBuffer::from_vec(vec![1.0]).unwrap();
        let g = denoise_fidelity(y);
        let cfg = SolverConfig {
            gamma: 0.4,
            tau: 1.0,
            fp_tol: 1e-14,
            max_iters: 5000,
            ..Default::default()
        };
        let (x, trace) = red_sd(&g, &ScaledIdentity { alpha: 0.5 }, None, &cfg).unwrap();
        assert!((x.data()[0] - 2.0 / 3.0).abs() <= 1e-10, "x = {}", x.data()[0]);
        assert!(trace.last().unwrap().red_residual.unwrap() <= 1e-10);
    }

    fn block_instance(b: usize, seed: u64) -> BlockFidelity {
        let blocks: Vec<DataFidelity> = (0..b)
            .map(|i| {
                let op =
                    LinearOperator::dense_random_projection(4, &[8], seed + i as u64).unwrap();
                let mut rng = SeededRng::new(seed + 1000 + i as u64);
                let y = gaussian_noise(&mut rng, &[4], 1.0).unwrap();
                DataFidelity::new(op, y).unwrap()
            })
            .collect();
        BlockFidelity::new(blocks).unwrap()
    }

    #[test]
    fn online_pnp_single_block_matches_pnp_ista_bitwise() {
        let bf = block_instance(1, 40);
        let d = SoftThreshold::new(0.02).unwrap();
        let cfg = SolverConfig {
            gamma: 0.2,
            max_iters: 80,
            fp_tol: 1e-14,
            keep_iterates: true,
            ..Default::default()
        };
        let (xb, tb) = pnp_ista(&bf, &d, None, &cfg).unwrap();
        let mut sampler =
            BlockSampler::new(SeededRng::new(7), 1, SamplerRule::IidUniform).unwrap();
        let (xo, to) = online_pnp(&bf, &d, &mut sampler, None, &cfg).unwrap();
        assert_buffers_bitwise(&xb, &xo);
        assert_eq!(tb.records.len(), to.records.len());
        for (ra, rb) in tb.records.iter().zip(&to.records) {
            assert_eq!(ra.fp_residual.to_bits(), rb.fp_residual.to_bits());
            assert_buffers_bitwise(ra.iterate.as_ref().unwrap(), rb.iterate.as_ref().unwrap());
        }
    }

    #[test]
    fn simba_single_block_matches_red_sd_bitwise() {
        let bf = block_instance(1, 41);
        let d = SoftThreshold::new(0.02).unwrap();
        let cfg = SolverConfig {
            gamma: 0.15,
            tau: 0.8,
            max_iters: 80,
            fp_tol: 1e-14,
            keep_iterates: true,
            ..Default::default()
        };
        let (xb, _) = red_sd(&bf, &d, None, &cfg).unwrap();
        let mut sampler =
            BlockSampler::new(SeededRng::new(8), 1, SamplerRule::EpochShuffle).unwrap();
        let (xo, _) = simba(&bf, &d, &mut sampler, None, &cfg).unwrap();
        assert_buffers_bitwise(&xb, &xo);
    }

    #[test]
    fn full_minibatch_epoch_matches_batch_bitwise() {
        // Epoch shuffling with minibatch = b hands every block to each
        // step, and the ascending-order minibatch sum reproduces the
        // batch gradient bitwise.
        let b = 4;
        let bf = block_instance(b, 42);
        let d = SoftThreshold::new(0.02).unwrap();
        let cfg_batch = SolverConfig {
            gamma: 0.2,
            max_iters: 50,
            fp_tol: 1e-14,
            keep_iterates: true,
            ..Default::default()
        };
        let cfg_online = SolverConfig {
            minibatch: b,
            ..cfg_batch.clone()
        };
        let (xb, _) = pnp_ista(&bf, &d, None, &cfg_batch).unwrap();
        let mut sampler =
            BlockSampler::new(SeededRng::new(9), b, SamplerRule::EpochShuffle).unwrap();
        let (xo, _) = online_pnp(&bf, &d, &mut sampler, None, &cfg_online).unwrap();
        assert_buffers_bitwise(&xb, &xo);
    }

    #[test]
    fn online_pnp_iid_stays_near_batch_fixed_point() {
        // Blocks are repeated views of one measurement with small
        // per-block perturbations, so the gradient noise (and hence the
        // stationary jitter of the constant-step online iteration) is
        // small enough to compare against the batch fixed point.
        let b = 4;
        let mut rng = SeededRng::new(43);
        let truth = gaussian_noise(&mut rng, &[8], 1.0).unwrap();
        let op = LinearOperator::dense_random_projection(8, &[8], 260).unwrap();
        let clean = op.apply(&truth).unwrap();
        let blocks: Vec<DataFidelity> = (0..b)
            .map(|_| {
                let noise = gaussian_noise(&mut rng, &[8], 0.002).unwrap();
                DataFidelity::new(op.clone(), clean.add(&noise).unwrap()).unwrap()
            })
            .collect();
        let bf = BlockFidelity::new(blocks).unwrap();
        let d = SoftThreshold::new(0.001).unwrap();

        let cfg_batch = SolverConfig {
            gamma: 0.1,
            max_iters: 20000,
            fp_tol: 1e-13,
            ..Default::default()
        };
        let (x_star, _) = pnp_ista(&bf, &d, None, &cfg_batch).unwrap();

        let cfg_online = SolverConfig {
            gamma: 0.1,
            max_iters: 5000,
            fp_tol: 1e-15,
            keep_iterates: true,
            ..Default::default()
        };
        let mut sampler =
            BlockSampler::new(SeededRng::new(10), b, SamplerRule::IidUniform).unwrap();
        let (_, trace) = online_pnp(&bf, &d, &mut sampler, None, &cfg_online).unwrap();
        // Average the last 100 iterates.
        let tail = &trace.records[trace.records.len() - 100..];
        let mut mean = ImageBuffer::zeros(&[8]).unwrap();
        for r in tail {
            mean = mean.add(r.iterate.as_ref().unwrap()).unwrap();
        }
        mean = mean.scale(1.0 / 100.0).unwrap();
        let gap = mean.dist2(&x_star).unwrap();
        assert!(gap <= 1e-2, "averaged online iterate {gap} from batch fixed point");
    }

    #[test]
    fn simba_identity_denoiser_converges_on_consistent_blocks() {
        // All blocks share A = I and the same y, so the online gradient
        // field always points at y.
        let mut rng = SeededRng::new(11);
        let y = gaussian_noise(&mut rng, &[6], 1.0).unwrap();
        let blocks: Vec<DataFidelity> = (0..3)
            .map(|_| DataFidelity::new(LinearOperator::identity(&[6]), y.clone()).unwrap())
            .collect();
        let bf = BlockFidelity::new(blocks).unwrap();
        let cfg = SolverConfig {
            gamma: 0.5,
            tau: 0.5,
            max_iters: 3000,
            fp_tol: 1e-13,
            ..Default::default()
        };
        let mut sampler =
            BlockSampler::new(SeededRng::new(12), 3, SamplerRule::IidUniform).unwrap();
        let (x, _) = simba(&bf, &IdentityAgent, &mut sampler, None, &cfg).unwrap();
        assert!(x.dist2(&y).unwrap() / y.norm2() <= 1e-8);
    }

    #[test]
    fn mann_negation_reaches_zero_in_one_step() {
        let v0 = ImageBuffer::from_vec(vec![3.0, -2.0]).unwrap();
        let cfg = SolverConfig {
            max_iters: 1,
            ..Default::default()
        };
        let (v, _) = mann_iterate(&|v| v.scale(-1.0), &v0, 0.5, &cfg).unwrap();
        assert_eq!(v.data(), &[0.0, 0.0]);
    }

    #[test]
    fn mann_affine_contraction_linear_rate() {
        // T(v) = 0.5 v + c: the Mann map contracts with factor 1 − ρ + 0.5ρ.
        let c = ImageBuffer::from_vec(vec![1.0, -1.0, 2.0]).unwrap();
        let t = move |v: &ImageBuffer| ImageBuffer::axpy(0.5, v, &c);
        let rho = 0.5;
        let expected = 1.0 - rho + 0.5 * rho;
        let v0 = ImageBuffer::zeros(&[3]).unwrap();
        let cfg = SolverConfig {
            max_iters: 30,
            fp_tol: 1e-15,
            keep_iterates: true,
            ..Default::default()
        };
        let (_, trace) = mann_iterate(&t, &v0, rho, &cfg).unwrap();
        let mut prev = v0.clone();
        let mut deltas = Vec::new();
        for r in &trace.records {
            let it = r.iterate.as_ref().unwrap();
            deltas.push(it.dist2(&prev).unwrap());
            prev = it.clone();
        }
        for w in deltas.windows(2) {
            if w[0] > 1e-10 {
                let ratio = w[1] / w[0];
                assert!(
                    (ratio - expected).abs() <= 1e-9,
                    "ratio {ratio} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn determinism_same_config_same_trace() {
        let mut rng = SeededRng::new(13);
        let y = gaussian_noise(&mut rng, &[10], 1.0).unwrap();
        let g = denoise_fidelity(y);
        let d = SoftThreshold::new(0.05).unwrap();
        let cfg = SolverConfig {
            max_iters: 40,
            keep_iterates: true,
            ..Default::default()
        };
        let (xa, ta) = pnp_admm(&g, &d, None, &cfg).unwrap();
        let (xb, tb) = pnp_admm(&g, &d, None, &cfg).unwrap();
        assert_buffers_bitwise(&xa, &xb);
        for (ra, rb) in ta.records.iter().zip(&tb.records) {
            assert_eq!(ra.fp_residual.to_bits(), rb.fp_residual.to_bits());
            assert_eq!(
                ra.objective.unwrap().to_bits(),
                rb.objective.unwrap().to_bits()
            );
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = SolverConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            rho: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            theta: ThetaSchedule::Constant { theta: 1.5 },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            fp_tol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
