//! Quadratic data-fidelity terms: evaluation, gradient, proximal maps,
//! and block decompositions for online solvers.
//!
//! A [`DataFidelity`] is `g(x) = (weight/2)·‖A x − y‖²`. Its proximal map
//! solves the normal system `(I + γ w AᵀA) z = x + γ w Aᵀ y`, either in
//! closed form when `AᵀA` is diagonal, by conjugate gradient, or by a few
//! warm-started CG steps per outer iteration (partial updates).
//!
//! A [`BlockFidelity`] is the uniformly weighted decomposition
//! `g = (1/b) Σ gᵢ` used by online PnP and SIMBA; minibatch gradients
//! average `p` block gradients and are unbiased under uniform sampling.

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{PnpError, Result};
use crate::linops::{cg_solve, LinearOperator};
use crate::rng::SeededRng;

/// How a proximal map is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ProxMethod {
    /// Closed form when `AᵀA` is diagonal, otherwise CG with
    /// tol 1e-3 / maxiter 10.
    Auto,
    /// Exact elementwise solve; errors if `AᵀA` is not diagonal.
    ClosedForm,
    /// Conjugate gradient on the normal system.
    Cg { tol: f64, maxiter: usize },
    /// Exactly `k_inner` CG steps from the warm start kept in
    /// [`ProxWarmState`].
    Partial { k_inner: usize },
}

impl Default for ProxMethod {
    fn default() -> Self {
        ProxMethod::Auto
    }
}

/// Default CG tolerance for `ProxMethod::Auto`.
pub const AUTO_CG_TOL: f64 = 1e-3;
/// Default CG iteration cap for `ProxMethod::Auto`.
pub const AUTO_CG_MAXITER: usize = 10;
/// Default inner step count for partial updates.
pub const DEFAULT_K_INNER: usize = 3;

/// Warm-start state for partial proximal updates: the previous inner
/// solution and the residual it left.
#[derive(Debug, Clone, Default)]
pub struct ProxWarmState {
    last: Option<ImageBuffer>,
    last_residual: Option<f64>,
}

impl ProxWarmState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Relative residual of the most recent inner solve.
    pub fn last_residual(&self) -> Option<f64> {
        self.last_residual
    }
}

/// Shared surface of batch and block data-fidelity terms.
pub trait Fidelity: Send + Sync {
    fn input_shape(&self) -> &[usize];

    /// `g(x)`.
    fn eval(&self, x: &ImageBuffer) -> Result<f64>;

    /// `∇g(x)`; callers form the update `x − γ ∇g(x)` themselves.
    fn grad(&self, x: &ImageBuffer) -> Result<ImageBuffer>;

    /// Action of the normal-system operator `v ↦ (I + γ H) v`, where `H`
    /// is the Hessian of `g`.
    fn normal_apply(&self, gamma: f64, v: &ImageBuffer) -> Result<ImageBuffer>;

    /// Diagonal of the Hessian of `g` when it is exactly diagonal.
    fn hessian_diagonal(&self) -> Option<ImageBuffer>;

    /// Right-hand side of the prox normal system, `x + γ·(−∇g(0))`.
    fn prox_rhs(&self, gamma: f64, x: &ImageBuffer) -> Result<ImageBuffer>;

    /// Default solver initialization `Aᵀ y` (block terms average their
    /// per-block back-projections).
    fn default_init(&self) -> Result<ImageBuffer>;

    /// `prox_{γ g}(x)`, evaluated per `method`. `warm` is required for
    /// `ProxMethod::Partial` and ignored otherwise.
    fn prox(
        &self,
        x: &ImageBuffer,
        gamma: f64,
        method: &ProxMethod,
        warm: Option<&mut ProxWarmState>,
    ) -> Result<ImageBuffer> {
        if !(gamma > 0.0) {
            return Err(PnpError::InvalidArgument {
                name: "gamma",
                reason: format!("must be > 0, got {gamma}"),
            });
        }
        let rhs = self.prox_rhs(gamma, x)?;
        match method {
            ProxMethod::Auto => {
                if self.hessian_diagonal().is_some() {
                    self.prox_closed_form(gamma, &rhs)
                } else {
                    self.prox_cg(gamma, x, &rhs, AUTO_CG_TOL, AUTO_CG_MAXITER)
                        .map(|(z, _)| z)
                }
            }
            ProxMethod::ClosedForm => self.prox_closed_form(gamma, &rhs),
            ProxMethod::Cg { tol, maxiter } => self
                .prox_cg(gamma, x, &rhs, *tol, *maxiter)
                .map(|(z, _)| z),
            ProxMethod::Partial { k_inner } => {
                let warm = warm.ok_or_else(|| PnpError::InvalidArgument {
                    name: "warm",
                    reason: "partial prox updates need a warm state".into(),
                })?;
                let start = warm.last.take().unwrap_or_else(|| x.clone());
                let (z, residual) = self.prox_cg_from(gamma, &start, &rhs, 0.0, *k_inner)?;
                warm.last = Some(z.clone());
                warm.last_residual = Some(residual);
                Ok(z)
            }
        }
    }

    fn prox_closed_form(&self, gamma: f64, rhs: &ImageBuffer) -> Result<ImageBuffer> {
        let diag = self.hessian_diagonal().ok_or_else(|| PnpError::InvalidArgument {
            name: "method",
            reason: "closed-form prox requires a diagonal AᵀA".into(),
        })?;
        let data: Vec<f64> = rhs
            .data()
            .iter()
            .zip(diag.data())
            .map(|(&r, &d)| r / (1.0 + gamma * d))
            .collect();
        ImageBuffer::new(rhs.shape().to_vec(), data)
    }

    fn prox_cg(
        &self,
        gamma: f64,
        x: &ImageBuffer,
        rhs: &ImageBuffer,
        tol: f64,
        maxiter: usize,
    ) -> Result<(ImageBuffer, f64)> {
        self.prox_cg_from(gamma, x, rhs, tol, maxiter)
    }

    fn prox_cg_from(
        &self,
        gamma: f64,
        start: &ImageBuffer,
        rhs: &ImageBuffer,
        tol: f64,
        maxiter: usize,
    ) -> Result<(ImageBuffer, f64)> {
        let out = cg_solve(|v| self.normal_apply(gamma, v), rhs, start, tol, maxiter)?;
        Ok((out.x, out.residual))
    }
}

/// Least-squares data fidelity `g(x) = (weight/2)·‖A x − y‖²`.
#[derive(Debug, Clone)]
pub struct DataFidelity {
    op: LinearOperator,
    y: ImageBuffer,
    weight: f64,
    input_shape: Vec<usize>,
}

impl DataFidelity {
    pub fn new(op: LinearOperator, y: ImageBuffer) -> Result<Self> {
        Self::with_weight(op, y, 1.0)
    }

    pub fn with_weight(op: LinearOperator, y: ImageBuffer, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(PnpError::InvalidArgument {
                name: "weight",
                reason: format!("must be positive and finite, got {weight}"),
            });
        }
        if op.output_shape().as_slice() != y.shape() {
            return Err(PnpError::ShapeMismatch {
                context: "DataFidelity measurements",
                left: op.output_shape(),
                right: y.shape().to_vec(),
            });
        }
        let input_shape = op.input_shape();
        Ok(Self {
            op,
            y,
            weight,
            input_shape,
        })
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn measurements(&self) -> &ImageBuffer {
        &self.y
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

impl Fidelity for DataFidelity {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn eval(&self, x: &ImageBuffer) -> Result<f64> {
        let r = self.op.apply(x)?.sub(&self.y)?;
        let n = r.norm2();
        Ok(0.5 * self.weight * n * n)
    }

    fn grad(&self, x: &ImageBuffer) -> Result<ImageBuffer> {
        let r = self.op.apply(x)?.sub(&self.y)?;
        self.op.adjoint(&r)?.scale(self.weight)
    }

    fn normal_apply(&self, gamma: f64, v: &ImageBuffer) -> Result<ImageBuffer> {
        let av = self.op.apply(v)?;
        let atav = self.op.adjoint(&av)?;
        ImageBuffer::axpy(gamma * self.weight, &atav, v)
    }

    fn hessian_diagonal(&self) -> Option<ImageBuffer> {
        normal_diagonal(&self.op).and_then(|d| d.scale(self.weight).ok())
    }

    fn prox_rhs(&self, gamma: f64, x: &ImageBuffer) -> Result<ImageBuffer> {
        let aty = self.op.adjoint(&self.y)?;
        ImageBuffer::axpy(gamma * self.weight, &aty, x)
    }

    fn default_init(&self) -> Result<ImageBuffer> {
        self.op.adjoint(&self.y)
    }
}

/// Diagonal of `AᵀA` when the operator's normal matrix is exactly
/// diagonal, else `None`.
fn normal_diagonal(op: &LinearOperator) -> Option<ImageBuffer> {
    match op {
        LinearOperator::Identity { shape } => ImageBuffer::full(shape, 1.0).ok(),
        LinearOperator::DiagonalMask { weights } => weights.map(|w| w * w).ok(),
        LinearOperator::Decimation { rates, input_shape } => {
            // SᵀS keeps the sampled positions and zeroes the rest.
            let st = crate::buffer::strides(input_shape);
            let total: usize = input_shape.iter().product();
            let mut d = vec![0.0; total];
            for (flat, slot) in d.iter_mut().enumerate() {
                let kept = (0..input_shape.len()).all(|ax| {
                    let c = (flat / st[ax]) % input_shape[ax];
                    c % rates[ax] == 0
                });
                if kept {
                    *slot = 1.0;
                }
            }
            ImageBuffer::new(input_shape.clone(), d).ok()
        }
        LinearOperator::Composition { ops } => {
            // Only diagonal-times-diagonal chains stay diagonal.
            let mut acc: Option<ImageBuffer> = None;
            for op in ops {
                let d = match op {
                    LinearOperator::Identity { .. } | LinearOperator::DiagonalMask { .. } => {
                        normal_diagonal(op)?
                    }
                    _ => return None,
                };
                acc = Some(match acc {
                    None => d,
                    Some(a) => {
                        let data: Vec<f64> = a
                            .data()
                            .iter()
                            .zip(d.data())
                            .map(|(&p, &q)| p * q)
                            .collect();
                        ImageBuffer::new(a.shape().to_vec(), data).ok()?
                    }
                });
            }
            acc
        }
        _ => None,
    }
}

/// Uniformly weighted block decomposition `g = (1/b) Σ gᵢ`.
#[derive(Debug, Clone)]
pub struct BlockFidelity {
    blocks: Vec<DataFidelity>,
    input_shape: Vec<usize>,
}

impl BlockFidelity {
    pub fn new(blocks: Vec<DataFidelity>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(PnpError::InvalidArgument {
                name: "blocks",
                reason: "need at least one block".into(),
            });
        }
        let input_shape = blocks[0].input_shape().to_vec();
        for b in &blocks[1..] {
            if b.input_shape() != input_shape {
                return Err(PnpError::ShapeMismatch {
                    context: "BlockFidelity input shapes",
                    left: input_shape.clone(),
                    right: b.input_shape().to_vec(),
                });
            }
        }
        Ok(Self {
            blocks,
            input_shape,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, index: usize) -> Result<&DataFidelity> {
        self.blocks.get(index).ok_or_else(|| PnpError::InvalidArgument {
            name: "index",
            reason: format!("block {index} out of range 0..{}", self.blocks.len()),
        })
    }

    /// `gᵢ(x)` for one block (no `1/b` factor).
    pub fn block_eval(&self, index: usize, x: &ImageBuffer) -> Result<f64> {
        self.block(index)?.eval(x)
    }

    /// `∇gᵢ(x)` for one block (no `1/b` factor).
    pub fn block_grad(&self, index: usize, x: &ImageBuffer) -> Result<ImageBuffer> {
        self.block(index)?.grad(x)
    }

    /// Minibatch gradient `(1/p) Σⱼ ∇g_{iⱼ}(x)`.
    ///
    /// Indices are summed in ascending order (duplicates count once per
    /// occurrence), so a permutation of all blocks reproduces the batch
    /// gradient bitwise.
    pub fn minibatch_grad(&self, indices: &[usize], x: &ImageBuffer) -> Result<ImageBuffer> {
        if indices.is_empty() {
            return Err(PnpError::InvalidArgument {
                name: "indices",
                reason: "minibatch must be nonempty".into(),
            });
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let mut acc = self.block_grad(sorted[0], x)?;
        for &i in &sorted[1..] {
            acc = acc.add(&self.block_grad(i, x)?)?;
        }
        acc.scale(1.0 / sorted.len() as f64)
    }

    /// Minibatch objective estimate `(1/p) Σⱼ g_{iⱼ}(x)`.
    pub fn minibatch_eval(&self, indices: &[usize], x: &ImageBuffer) -> Result<f64> {
        if indices.is_empty() {
            return Err(PnpError::InvalidArgument {
                name: "indices",
                reason: "minibatch must be nonempty".into(),
            });
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let mut acc = 0.0;
        for &i in &sorted {
            acc += self.block_eval(i, x)?;
        }
        Ok(acc / sorted.len() as f64)
    }
}

impl Fidelity for BlockFidelity {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn eval(&self, x: &ImageBuffer) -> Result<f64> {
        let mut acc = 0.0;
        for b in &self.blocks {
            acc += b.eval(x)?;
        }
        Ok(acc * (1.0 / self.blocks.len() as f64))
    }

    fn grad(&self, x: &ImageBuffer) -> Result<ImageBuffer> {
        let mut acc = self.blocks[0].grad(x)?;
        for b in &self.blocks[1..] {
            acc = acc.add(&b.grad(x)?)?;
        }
        acc.scale(1.0 / self.blocks.len() as f64)
    }

    fn normal_apply(&self, gamma: f64, v: &ImageBuffer) -> Result<ImageBuffer> {
        // (I + (γ/b) Σ wᵢ AᵢᵀAᵢ) v
        let scale = gamma / self.blocks.len() as f64;
        let mut acc = v.clone();
        for b in &self.blocks {
            let av = b.op.apply(v)?;
            let atav = b.op.adjoint(&av)?;
            acc = ImageBuffer::axpy(scale * b.weight, &atav, &acc)?;
        }
        Ok(acc)
    }

    fn hessian_diagonal(&self) -> Option<ImageBuffer> {
        let inv_b = 1.0 / self.blocks.len() as f64;
        let mut acc: Option<ImageBuffer> = None;
        for b in &self.blocks {
            let d = b.hessian_diagonal()?;
            acc = Some(match acc {
                None => d,
                Some(a) => a.add(&d).ok()?,
            });
        }
        acc.and_then(|a| a.scale(inv_b).ok())
    }

    fn prox_rhs(&self, gamma: f64, x: &ImageBuffer) -> Result<ImageBuffer> {
        let scale = gamma / self.blocks.len() as f64;
        let mut acc = x.clone();
        for b in &self.blocks {
            let aty = b.op.adjoint(&b.y)?;
            acc = ImageBuffer::axpy(scale * b.weight, &aty, &acc)?;
        }
        Ok(acc)
    }

    fn default_init(&self) -> Result<ImageBuffer> {
        let mut acc = self.blocks[0].default_init()?;
        for b in &self.blocks[1..] {
            acc = acc.add(&b.default_init()?)?;
        }
        acc.scale(1.0 / self.blocks.len() as f64)
    }
}

/// Block selection rule for online solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerRule {
    /// Each draw uniform and independent over `{0..b}` (with replacement
    /// inside a minibatch).
    IidUniform,
    /// Consecutive windows of `b` draws are fresh permutations of `{0..b}`.
    EpochShuffle,
}

/// Seeded index stream over `b` blocks.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    rng: SeededRng,
    b: usize,
    rule: SamplerRule,
    epoch: Vec<usize>,
    pos: usize,
}

impl BlockSampler {
    pub fn new(rng: SeededRng, b: usize, rule: SamplerRule) -> Result<Self> {
        if b == 0 {
            return Err(PnpError::InvalidArgument {
                name: "b",
                reason: "need at least one block".into(),
            });
        }
        Ok(Self {
            rng,
            b,
            rule,
            epoch: (0..b).collect(),
            pos: b, // trigger a shuffle on the first epoch draw
        })
    }

    pub fn block_count(&self) -> usize {
        self.b
    }

    pub fn next_index(&mut self) -> usize {
        match self.rule {
            SamplerRule::IidUniform => self.rng.uniform_below(self.b as u64) as usize,
            SamplerRule::EpochShuffle => {
                if self.pos == self.b {
                    self.rng.shuffle(&mut self.epoch);
                    self.pos = 0;
                }
                let idx = self.epoch[self.pos];
                self.pos += 1;
                idx
            }
        }
    }

    pub fn next_batch(&mut self, p: usize) -> Vec<usize> {
        (0..p).map(|_| self.next_index()).collect()
    }
}
