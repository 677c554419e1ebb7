//! Pluggable prior operators ("agents"): denoisers, smoothers, and
//! proximal maps, plus the residual operator and a sampled
//! nonexpansiveness estimator.
//!
//! An agent is any shape-preserving map `D: ℝⁿ → ℝⁿ` that improves an
//! image. Solvers treat agents as black boxes, which is what lets a
//! median filter, a TV prox, and a Gaussian smoother plug into the same
//! iteration.

use crate::buffer::{strides, ImageBuffer};
use crate::error::{PnpError, Result};
use crate::fidelity::{Fidelity, ProxMethod, ProxWarmState};
use crate::rng::{gaussian_noise, SeededRng};

/// A shape-preserving image-improvement operator.
pub trait Agent: Send + Sync {
    fn label(&self) -> &str;

    /// Apply `D` to `v`. Output shape equals input shape; output values
    /// are finite for finite input.
    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer>;

    /// Noise level the agent was designed for, if declared. Metadata
    /// only; never enforced at runtime.
    fn noise_level(&self) -> Option<f64> {
        None
    }

    /// Value of the regularizer `h(x)` this agent is a proximal map of,
    /// interpreting the agent as `prox_{γh}`. `None` for agents that are
    /// not proximal maps (or do not expose `h`).
    fn reg_value(&self, x: &ImageBuffer, gamma: f64) -> Option<f64> {
        let _ = (x, gamma);
        None
    }
}

/// Residual operator `R(v) = v - D(v)`.
pub fn residual(agent: &dyn Agent, v: &ImageBuffer) -> Result<ImageBuffer> {
    v.sub(&agent.apply(v)?)
}

/// `D(v) = v`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityAgent;

impl Agent for IdentityAgent {
    fn label(&self) -> &str {
        "identity"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(v.clone())
    }
}

/// `D(v) = α v`; linear with Lipschitz constant exactly `|α|`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity {
    pub alpha: f64,
}

impl Agent for ScaledIdentity {
    fn label(&self) -> &str {
        "scaled_identity"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        v.scale(self.alpha)
    }
}

/// Proximal map of `(strength/2)·‖x - z₀‖²`:
/// `D(v) = (v + strength·z₀) / (1 + strength)`.
#[derive(Debug, Clone)]
pub struct ProxL2 {
    reference: ImageBuffer,
    strength: f64,
}

impl ProxL2 {
    pub fn new(reference: ImageBuffer, strength: f64) -> Result<Self> {
        if !(strength > 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "strength",
                reason: format!("must be > 0, got {strength}"),
            });
        }
        Ok(Self { reference, strength })
    }
}

impl Agent for ProxL2 {
    fn label(&self) -> &str {
        "prox_l2"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        if v.shape() != self.reference.shape() {
            return Err(PnpError::ShapeMismatch {
                context: "prox_l2",
                left: self.reference.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        let s = self.strength;
        let data: Vec<f64> = v
            .data()
            .iter()
            .zip(self.reference.data())
            .map(|(&a, &z)| (a + s * z) / (1.0 + s))
            .collect();
        ImageBuffer::new(v.shape().to_vec(), data)
    }

    fn reg_value(&self, x: &ImageBuffer, gamma: f64) -> Option<f64> {
        let d = x.dist2(&self.reference).ok()?;
        Some(0.5 * (self.strength / gamma) * d * d)
    }
}

/// Elementwise shrinkage `sign(z)·max(|z| - τ, 0)`: the proximal map of
/// `τ‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct SoftThreshold {
    pub threshold: f64,
}

impl SoftThreshold {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "threshold",
                reason: format!("must be >= 0, got {threshold}"),
            });
        }
        Ok(Self { threshold })
    }
}

impl Agent for SoftThreshold {
    fn label(&self) -> &str {
        "soft_threshold"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        let t = self.threshold;
        v.map(|z| {
            if z > t {
                z - t
            } else if z < -t {
                z + t
            } else {
                0.0
            }
        })
    }

    fn reg_value(&self, x: &ImageBuffer, gamma: f64) -> Option<f64> {
        let l1: f64 = x.data().iter().map(|v| v.abs()).sum();
        Some((self.threshold / gamma) * l1)
    }
}

/// Anisotropic total variation with forward differences and zero
/// (Neumann) boundary differences, summed over every axis.
pub fn anisotropic_tv(x: &ImageBuffer) -> f64 {
    let shape = x.shape();
    let st = strides(shape);
    let mut acc = 0.0;
    for d in 0..shape.len() {
        let n = shape[d];
        let s = st[d];
        for i in 0..x.len() {
            if (i / s) % n < n - 1 {
                acc += (x.data()[i + s] - x.data()[i]).abs();
            }
        }
    }
    acc
}

/// Proximal map of `τ·TV(x)` (anisotropic), computed by projected
/// gradient on the dual with step `1/(4·ndim)` and a fixed number of
/// inner iterations, so the agent is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct TvProx {
    pub threshold: f64,
    pub inner_iters: usize,
}

/// Default dual iterations for [`TvProx`].
pub const TV_DEFAULT_INNER_ITERS: usize = 50;

impl TvProx {
    pub fn new(threshold: f64, inner_iters: usize) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "threshold",
                reason: format!("must be >= 0, got {threshold}"),
            });
        }
        if inner_iters == 0 {
            return Err(PnpError::InvalidArgument {
                name: "inner_iters",
                reason: "need at least one dual iteration".into(),
            });
        }
        Ok(Self {
            threshold,
            inner_iters,
        })
    }
}

impl Agent for TvProx {
    fn label(&self) -> &str {
        "tv_prox"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        if self.threshold == 0.0 {
            return Ok(v.clone());
        }
        let shape = v.shape().to_vec();
        let st = strides(&shape);
        let nd = shape.len();
        let n = v.len();
        let tau = self.threshold;
        let step = 1.0 / (4.0 * nd as f64);

        let z = v.data();
        let mut p: Vec<Vec<f64>> = (0..nd).map(|_| vec![0.0; n]).collect();
        let mut x = vec![0.0; n];

        let compute_x = |p: &[Vec<f64>], x: &mut [f64]| {
            x.copy_from_slice(z);
            // x = z - Σ_d ∇_dᵀ p_d
            for d in 0..nd {
                let (nd_ext, s) = (shape[d], st[d]);
                let pd = &p[d];
                for i in 0..n {
                    let c = (i / s) % nd_ext;
                    let mut div = 0.0;
                    if c >= 1 {
                        div += pd[i - s];
                    }
                    if c < nd_ext - 1 {
                        div -= pd[i];
                    }
                    x[i] -= div;
                }
            }
        };

        for _ in 0..self.inner_iters {
            compute_x(&p, &mut x);
            for d in 0..nd {
                let (nd_ext, s) = (shape[d], st[d]);
                let pd = &mut p[d];
                for i in 0..n {
                    if (i / s) % nd_ext < nd_ext - 1 {
                        let g = x[i + s] - x[i];
                        pd[i] = (pd[i] + step * g).clamp(-tau, tau);
                    }
                }
            }
        }
        compute_x(&p, &mut x);
        ImageBuffer::new(shape, x)
    }

    fn reg_value(&self, x: &ImageBuffer, gamma: f64) -> Option<f64> {
        Some((self.threshold / gamma) * anisotropic_tv(x))
    }
}

/// Separable periodic Gaussian smoothing along every axis. The 1D kernel
/// is a sampled Gaussian truncated at `ceil(3σ)` and normalized to sum 1,
/// so the DC gain is exactly the kernel sum.
#[derive(Debug, Clone)]
pub struct GaussianSmooth {
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianSmooth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PnpError::InvalidArgument {
                name: "sigma",
                reason: format!("must be positive and finite, got {sigma}"),
            });
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as usize;
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|j| {
                let t = j as f64 - radius as f64;
                (-0.5 * t * t / (sigma * sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        Ok(Self { sigma, taps })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

impl Agent for GaussianSmooth {
    fn label(&self) -> &str {
        "gaussian_smooth"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        let shape = v.shape().to_vec();
        let st = strides(&shape);
        let radius = (self.taps.len() - 1) / 2;
        let mut cur = v.data().to_vec();
        let mut line = Vec::new();
        for d in 0..shape.len() {
            let (n, s) = (shape[d], st[d]);
            let mut next = vec![0.0; cur.len()];
            // Visit each 1D line along axis d once.
            for base in 0..cur.len() {
                if (base / s) % n != 0 {
                    continue;
                }
                line.clear();
                line.extend((0..n).map(|k| cur[base + k * s]));
                for k in 0..n {
                    let mut acc = 0.0;
                    for (j, &w) in self.taps.iter().enumerate() {
                        let src = (k as isize - (j as isize - radius as isize))
                            .rem_euclid(n as isize) as usize;
                        acc += w * line[src];
                    }
                    next[base + k * s] = acc;
                }
            }
            cur = next;
        }
        ImageBuffer::new(shape, cur)
    }
}

/// Moving median over a periodic hypercube window; deliberately neither a
/// proximal map nor a gradient step.
#[derive(Debug, Clone, Copy)]
pub struct MedianFilter {
    pub window: usize,
}

impl MedianFilter {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(PnpError::InvalidArgument {
                name: "window",
                reason: format!("must be odd and positive, got {window}"),
            });
        }
        Ok(Self { window })
    }
}

impl Agent for MedianFilter {
    fn label(&self) -> &str {
        "median_filter"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        let shape = v.shape().to_vec();
        let st = strides(&shape);
        let nd = shape.len();
        let w = self.window;
        let r = (w / 2) as isize;
        let count = w.pow(nd as u32);
        let mut out = vec![0.0; v.len()];
        let mut patch = vec![0.0; count];
        for (flat, slot) in out.iter_mut().enumerate() {
            for (m, p) in patch.iter_mut().enumerate() {
                let mut src = 0usize;
                let mut rem = m;
                for d in 0..nd {
                    let off = (rem % w) as isize - r;
                    rem /= w;
                    let c = ((flat / st[d]) % shape[d]) as isize;
                    let cc = (c + off).rem_euclid(shape[d] as isize) as usize;
                    src += cc * st[d];
                }
                *p = v.data()[src];
            }
            patch.sort_by(|a, b| a.partial_cmp(b).unwrap());
            *slot = patch[count / 2];
        }
        ImageBuffer::new(shape, out)
    }
}

/// Applies a 2D agent independently to every slice orthogonal to `axis`
/// of a 3D volume.
pub struct Slicewise2D {
    axis: usize,
    inner: Box<dyn Agent>,
    label: String,
}

impl Slicewise2D {
    pub fn new(axis: usize, inner: Box<dyn Agent>) -> Result<Self> {
        if axis >= 3 {
            return Err(PnpError::InvalidArgument {
                name: "axis",
                reason: format!("volume axis must be 0..3, got {axis}"),
            });
        }
        let label = format!("slicewise2d[{}]({})", axis, inner.label());
        Ok(Self { axis, inner, label })
    }

    pub fn axis(&self) -> usize {
        self.axis
    }
}

impl Agent for Slicewise2D {
    fn label(&self) -> &str {
        &self.label
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        if v.ndim() != 3 {
            return Err(PnpError::InvalidArgument {
                name: "v",
                reason: format!("slicewise agent needs a 3D volume, got {:?}", v.shape()),
            });
        }
        let shape = v.shape().to_vec();
        let st = strides(&shape);
        let keep: Vec<usize> = (0..3).filter(|&d| d != self.axis).collect();
        let slice_shape = vec![shape[keep[0]], shape[keep[1]]];
        let mut out = vec![0.0; v.len()];
        for a in 0..shape[self.axis] {
            let mut plane = Vec::with_capacity(slice_shape[0] * slice_shape[1]);
            for i in 0..slice_shape[0] {
                for j in 0..slice_shape[1] {
                    let flat = a * st[self.axis] + i * st[keep[0]] + j * st[keep[1]];
                    plane.push(v.data()[flat]);
                }
            }
            let filtered = self
                .inner
                .apply(&ImageBuffer::new(slice_shape.clone(), plane)?)?;
            for i in 0..slice_shape[0] {
                for j in 0..slice_shape[1] {
                    let flat = a * st[self.axis] + i * st[keep[0]] + j * st[keep[1]];
                    out[flat] = filtered.data()[i * slice_shape[1] + j];
                }
            }
        }
        ImageBuffer::new(shape, out)
    }
}

/// Wraps an agent with a declared design noise level (metadata only).
pub struct WithNoiseLevel<A> {
    inner: A,
    sigma: f64,
}

impl<A: Agent> WithNoiseLevel<A> {
    pub fn new(inner: A, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "sigma",
                reason: format!("declared noise level must be >= 0, got {sigma}"),
            });
        }
        Ok(Self { inner, sigma })
    }
}

impl<A: Agent> Agent for WithNoiseLevel<A> {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        self.inner.apply(v)
    }

    fn noise_level(&self) -> Option<f64> {
        Some(self.sigma)
    }

    fn reg_value(&self, x: &ImageBuffer, gamma: f64) -> Option<f64> {
        self.inner.reg_value(x, gamma)
    }
}

/// The data-fidelity proximal map packaged as an agent, e.g. for use as a
/// consensus-equilibrium agent alongside denoisers.
///
/// Partial prox updates carry mutable warm state and are not supported
/// here; use `ClosedForm`, `Cg`, or `Auto`.
pub struct FidelityProxAgent<F: Fidelity> {
    fidelity: F,
    gamma: f64,
    method: ProxMethod,
}

impl<F: Fidelity> FidelityProxAgent<F> {
    pub fn new(fidelity: F, gamma: f64, method: ProxMethod) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "gamma",
                reason: format!("must be > 0, got {gamma}"),
            });
        }
        if matches!(method, ProxMethod::Partial { .. }) {
            return Err(PnpError::InvalidArgument {
                name: "method",
                reason: "partial updates need solver-owned warm state".into(),
            });
        }
        Ok(Self {
            fidelity,
            gamma,
            method,
        })
    }
}

impl<F: Fidelity> Agent for FidelityProxAgent<F> {
    fn label(&self) -> &str {
        "fidelity_prox"
    }

    fn apply(&self, v: &ImageBuffer) -> Result<ImageBuffer> {
        self.fidelity.prox(v, self.gamma, &self.method, None)
    }
}

// Keep the unused import warning away when ProxWarmState only shows up in
// the trait default methods.
#[allow(unused)]
fn _warm_state_is_public(w: ProxWarmState) -> ProxWarmState {
    w
}

/// Largest sampled ratio `‖D(a) - D(b)‖ / ‖a - b‖` over `n_pairs` random
/// pairs with `b = a + perturb_scale·noise`. A lower bound on the true
/// Lipschitz constant.
pub fn nonexpansiveness_estimate(
    agent: &dyn Agent,
    rng: &mut SeededRng,
    shape: &[usize],
    n_pairs: usize,
    perturb_scale: f64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(PnpError::InvalidArgument {
            name: "n_pairs",
            reason: "need at least one probe pair".into(),
        });
    }
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let a = gaussian_noise(rng, shape, 1.0)?;
        let delta = gaussian_noise(rng, shape, perturb_scale)?;
        let b = a.add(&delta)?;
        let gap = a.dist2(&b)?;
        if gap == 0.0 {
            continue;
        }
        let da = agent.apply(&a)?;
        let db = agent.apply(&b)?;
        worst = worst.max(da.dist2(&db)? / gap);
    }
    Ok(worst)
}
