//! Per-network optimizer steppers (Adam, diagonal GGN, K-FAC) and the
//! hyperparameter sets that PBT perturbs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::curvature::{
    damped_newton_step, diag_ggn_from_cache, empirical_fisher_diag, kfac_factors,
    kron_precondition, Damping, KroneckerBlocks,
};
use crate::error::{ensure, Error, Result};
use crate::linalg::Matrix;
use crate::loss::{loss_and_grad, LossKind};
use crate::net::{BackwardCapture, ForwardCache, NetworkParams};
use crate::scalar::Scalar;

/// Below this damping the K-FAC factor inverses are not reliably computable.
pub const KFAC_DAMPING_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptimizerKind {
    Adam,
    DiagGgn,
    Kfac,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [
        OptimizerKind::Adam,
        OptimizerKind::DiagGgn,
        OptimizerKind::Kfac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::DiagGgn => "diag_ggn",
            OptimizerKind::Kfac => "kfac",
        }
    }

    /// Checkpoint tag byte.
    pub fn tag(self) -> u8 {
        match self {
            OptimizerKind::Adam => 0,
            OptimizerKind::DiagGgn => 1,
            OptimizerKind::Kfac => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn is_second_order(self) -> bool {
        !matches!(self, OptimizerKind::Adam)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "diag_ggn" | "diagggn" | "ggn" => Ok(OptimizerKind::DiagGgn),
            "kfac" | "k_fac" => Ok(OptimizerKind::Kfac),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            t: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grad.len() == self.m.len(),
            "adam state has {} entries, params {}, grad {}",
            self.m.len(),
            params.len(),
            grad.len()
        );
        self.t += 1;
        let one = T::one();
        let t = self.t as i32;
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// What a network is being trained against on one batch.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a, T> {
    /// Regress network outputs onto `targets`.
    Regression {
        targets: &'a Matrix<T>,
        loss: LossKind,
    },
    /// Externally supplied per-sample cotangent `∂ℓ_n/∂ŷ_n`, e.g. a policy
    /// gradient flowing in from a critic.
    OutputGradient(&'a Matrix<T>),
}

/// K-FAC running statistics for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct KfacState<T> {
    /// `None` until the first batch; the first refresh uses fresh statistics.
    pub blocks: Option<KroneckerBlocks<T>>,
    pub decay: T,
    pub damping_floor: T,
}

impl<T: Scalar> KfacState<T> {
    pub fn new(decay: T) -> Self {
        Self {
            blocks: None,
            decay,
            damping_floor: T::lit(KFAC_DAMPING_FLOOR),
        }
    }
}

/// Optimizer state attached to one network.
#[derive(Debug, Clone, PartialEq)]
pub enum NetOptimizer<T> {
    Adam(AdamState<T>),
    DiagGgn,
    Kfac(KfacState<T>),
}

impl<T: Scalar> NetOptimizer<T> {
    pub fn fresh(kind: OptimizerKind, net: &NetworkParams<T>, kfac_decay: T) -> Self {
        match kind {
            OptimizerKind::Adam => NetOptimizer::Adam(AdamState::new(net.num_params())),
            OptimizerKind::DiagGgn => NetOptimizer::DiagGgn,
            OptimizerKind::Kfac => NetOptimizer::Kfac(KfacState::new(kfac_decay)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            NetOptimizer::Adam(_) => OptimizerKind::Adam,
            NetOptimizer::DiagGgn => OptimizerKind::DiagGgn,
            NetOptimizer::Kfac(_) => OptimizerKind::Kfac,
        }
    }

    /// One optimizer step. Returns the regression loss when there is one.
    ///
    /// On error the network is left untouched.
    pub fn step(
        &mut self,
        net: &mut NetworkParams<T>,
        inputs: &Matrix<T>,
        objective: Objective<'_, T>,
        lr: T,
        damping: T,
    ) -> Result<Option<T>> {
        match self {
            NetOptimizer::Adam(state) => {
                let (loss, cap, _) = gradient(net, inputs, objective, false)?;
                let mut flat = net.flatten();
                state.step(&mut flat, &cap.grad, lr)?;
                net.set_flat(&flat)?;
                Ok(loss)
            }
            NetOptimizer::DiagGgn => diag_ggn_step(net, inputs, objective, lr, damping),
            NetOptimizer::Kfac(state) => kfac_step(net, inputs, objective, lr, damping, state),
        }
    }
}

type GradientParts<T> = (Option<T>, BackwardCapture<T>, ForwardCache<T>);

fn gradient<T: Scalar>(
    net: &NetworkParams<T>,
    inputs: &Matrix<T>,
    objective: Objective<'_, T>,
    capture: bool,
) -> Result<GradientParts<T>> {
    let cache = net.forward_cached(inputs)?;
    let (loss, cotangent) = match objective {
        Objective::Regression { targets, loss } => {
            let (value, grad) = loss_and_grad(loss, &cache.output, targets)?;
            (Some(value), grad)
        }
        Objective::OutputGradient(g) => (None, g.clone()),
    };
    let cap = net.backward_cached(&cache, &cotangent, capture)?;
    Ok((loss, cap, cache))
}

/// `θ ← θ - α (diag(G) + δ I)^{-1} g` on one batch.
///
/// Regression objectives use the GGN diagonal of their loss. An external
/// output gradient has no output-space Hessian to sandwich, so the
/// empirical-Fisher diagonal is used instead.
pub fn diag_ggn_step<T: Scalar>(
    net: &mut NetworkParams<T>,
    inputs: &Matrix<T>,
    objective: Objective<'_, T>,
    lr: T,
    damping: T,
) -> Result<Option<T>> {
    let damping = Damping::new(damping)?;
    let external = matches!(objective, Objective::OutputGradient(_));
    let (loss, cap, cache) = gradient(net, inputs, objective, external)?;
    let curv = match objective {
        Objective::Regression { loss, .. } => diag_ggn_from_cache(net, &cache, loss)?,
        Objective::OutputGradient(_) => empirical_fisher_diag(&cap)?,
    };
    let delta = damped_newton_step(&curv, &cap.grad, damping, lr)?;
    net.apply_delta(&delta)?;
    Ok(loss)
}

/// Refreshes the Kronecker factors, then `θ ← θ - α (A⁻¹ ⊗ B⁻¹) g` per layer
/// with factored damping.
///
/// Damping below `state.damping_floor` is rejected. A Cholesky failure leaves
/// both the network and the running statistics unchanged.
pub fn kfac_step<T: Scalar>(
    net: &mut NetworkParams<T>,
    inputs: &Matrix<T>,
    objective: Objective<'_, T>,
    lr: T,
    damping: T,
    state: &mut KfacState<T>,
) -> Result<Option<T>> {
    if damping < state.damping_floor {
        return Err(Error::InvalidHyperparams(format!(
            "K-FAC damping {damping} below floor {}",
            state.damping_floor
        )));
    }
    let damping = Damping::new(damping)?;
    let (loss, cap, _) = gradient(net, inputs, objective, true)?;
    let blocks = kfac_factors(&cap, state.blocks.as_ref(), state.decay)?;
    let pre = kron_precondition(&blocks, damping, &cap.grad)?;
    let delta: Vec<T> = pre.into_iter().map(|p| -lr * p).collect();
    net.apply_delta(&delta)?;
    state.blocks = Some(blocks);
    Ok(loss)
}

/// Per-agent tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperparamSet {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    /// Present only for second-order kinds.
    pub damping: Option<f64>,
}

impl HyperparamSet {
    /// Damping as used by the steppers; zero for first-order kinds.
    pub fn damping_or_zero(&self) -> f64 {
        self.damping.unwrap_or(0.0)
    }

    pub fn validate(&self, kind: OptimizerKind, bounds: &HyperBounds) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidHyperparams(msg));
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be finite and > 0, got {lr}"));
            }
        }
        if self.batch_size < bounds.batch_min.max(1) || self.batch_size > bounds.batch_max {
            return fail(format!(
                "batch_size {} outside [{}, {}]",
                self.batch_size, bounds.batch_min, bounds.batch_max
            ));
        }
        match (kind.is_second_order(), self.damping) {
            (false, Some(_)) => fail(format!("{kind} takes no damping parameter")),
            (true, None) => fail(format!("{kind} requires a damping parameter")),
            (true, Some(d)) if !(d >= 0.0 && d.is_finite()) => {
                fail(format!("damping must be >= 0, got {d}"))
            }
            (true, Some(d)) if kind == OptimizerKind::Kfac && d < bounds.kfac_damping_floor => {
                fail(format!(
                "K-FAC damping {d} below {}: Kronecker factors are not reliably positive-definite",
                bounds.kfac_damping_floor
            ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperBounds {
    pub batch_min: usize,
    pub batch_max: usize,
    pub kfac_damping_floor: f64,
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            batch_min: 64,
            batch_max: 512,
            kfac_damping_floor: KFAC_DAMPING_FLOOR,
        }
    }
}

/// Multipliers drawn for one perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbFactors {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: f64,
    pub damping: f64,
}

impl PerturbFactors {
    /// Independent fair coins between 0.8 and 1.2, drawn in field order.
    /// The damping coin is drawn only for second-order kinds.
    pub fn sample<R: Rng + ?Sized>(kind: OptimizerKind, rng: &mut R) -> Self {
        let mut coin = || if rng.gen_bool(0.5) { 0.8 } else { 1.2 };
        let lr_actor = coin();
        let lr_critic = coin();
        let batch_size = coin();
        let damping = if kind.is_second_order() { coin() } else { 1.0 };
        Self {
            lr_actor,
            lr_critic,
            batch_size,
            damping,
        }
    }
}

/// Applies fixed factors: batch size is rounded to nearest and clamped to
/// bounds, K-FAC damping is clamped to the floor.
pub fn apply_perturbation(
    h: &HyperparamSet,
    kind: OptimizerKind,
    bounds: &HyperBounds,
    factors: PerturbFactors,
) -> HyperparamSet {
    let batch = (h.batch_size as f64 * factors.batch_size).round() as usize;
    let damping = h.damping.map(|d| {
        let d = d * factors.damping;
        if kind == OptimizerKind::Kfac {
            d.max(bounds.kfac_damping_floor)
        } else {
            d
        }
    });
    HyperparamSet {
        lr_actor: h.lr_actor * factors.lr_actor,
        lr_critic: h.lr_critic * factors.lr_critic,
        batch_size: batch.clamp(bounds.batch_min.max(1), bounds.batch_max),
        damping,
    }
}

pub fn perturb<R: Rng + ?Sized>(
    h: &HyperparamSet,
    kind: OptimizerKind,
    bounds: &HyperBounds,
    rng: &mut R,
) -> HyperparamSet {
    apply_perturbation(h, kind, bounds, PerturbFactors::sample(kind, rng))
}

/// Ranges for the initial hyperparameter draw of a population member.
#[derive(Debug, Clone, PartialEq)]
pub struct InitRanges {
    pub adam_lr: (f64, f64),
    pub diag_ggn_lr: (f64, f64),
    pub kfac_lr: (f64, f64),
    pub batch_choices: Vec<usize>,
    pub diag_ggn_damping: (f64, f64),
    pub kfac_damping: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        Self {
            adam_lr: (1e-4, 1e-3),
            diag_ggn_lr: (1e-4, 1e-3),
            kfac_lr: (1e-4, 1e-3),
            batch_choices: vec![128, 256],
            diag_ggn_damping: (1e-3, 1.0),
            kfac_damping: (1.0, 10.0),
        }
    }
}

impl InitRanges {
    pub fn lr_range(&self, kind: OptimizerKind) -> (f64, f64) {
        match kind {
            OptimizerKind::Adam => self.adam_lr,
            OptimizerKind::DiagGgn => self.diag_ggn_lr,
            OptimizerKind::Kfac => self.kfac_lr,
        }
    }

    /// Log-uniform learning rates and damping, uniform batch-size choice.
    pub fn sample<R: Rng + ?Sized>(&self, kind: OptimizerKind, rng: &mut R) -> HyperparamSet {
        let (lo, hi) = self.lr_range(kind);
        let lr_actor = log_uniform(rng, lo, hi);
        let lr_critic = log_uniform(rng, lo, hi);
        let batch_size = self.batch_choices[rng.gen_range(0..self.batch_choices.len())];
        let damping = match kind {
            OptimizerKind::Adam => None,
            OptimizerKind::DiagGgn => Some(log_uniform(
                rng,
                self.diag_ggn_damping.0,
                self.diag_ggn_damping.1,
            )),
            OptimizerKind::Kfac => Some(log_uniform(rng, self.kfac_damping.0, self.kfac_damping.1)),
        };
        HyperparamSet {
            lr_actor,
            lr_critic,
            batch_size,
            damping,
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}
