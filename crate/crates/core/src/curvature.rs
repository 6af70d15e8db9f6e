//! Curvature estimates built from backward-pass captures: the diagonal of the
//! generalized Gauss-Newton matrix and per-layer Kronecker factors, plus the
//! damped inverses applied to gradients.

use crate::error::{ensure, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::loss::LossKind;
use crate::net::{BackwardCapture, ForwardCache, NetworkParams};
use crate::scalar::Scalar;

/// Diagonal curvature over the flat parameter vector. Entries are `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCurvature<T> {
    pub diag: Vec<T>,
}

/// Tikhonov damping `δ >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping<T> {
    delta: T,
}

impl<T: Scalar> Damping<T> {
    pub fn new(delta: T) -> Result<Self> {
        if !(delta >= T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidHyperparams(format!(
                "damping must be finite and >= 0, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(self) -> T {
        self.delta
    }
}

/// Kronecker factors of one dense layer. `a` is `(in+1) x (in+1)` over the
/// bias-augmented input, `b` is `out x out` over pre-activation gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerFactors<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
}

impl<T: Scalar> KroneckerFactors<T> {
    pub fn identity(out_dim: usize, in_dim: usize) -> Self {
        Self {
            a: Matrix::identity(in_dim + 1),
            b: Matrix::identity(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.a.rows() - 1
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerBlocks<T> {
    pub layers: Vec<KroneckerFactors<T>>,
    /// Running-average decay in `[0, 1)`.
    pub decay: T,
}

impl<T: Scalar> KroneckerBlocks<T> {
    pub fn identity_for(net: &NetworkParams<T>, decay: T) -> Self {
        let layers = net
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| KroneckerFactors::identity(o, i))
            .collect();
        Self { layers, decay }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|f| f.out_dim() * (f.in_dim() + 1))
            .sum()
    }
}

/// Diagonal of the GGN `E[J^T H_f J]` averaged over the batch.
///
/// For MSE with the per-output mean convention `H_f = (2/C) I`, so the
/// diagonal needs one backward pass per output with a unit cotangent.
pub fn diag_ggn<T: Scalar>(
    net: &NetworkParams<T>,
    inputs: &Matrix<T>,
    loss: LossKind,
) -> Result<DiagCurvature<T>> {
    if !matches!(loss, LossKind::Mse) {
        return Err(Error::UnsupportedLoss(loss.name()));
    }
    ensure!(inputs.rows() > 0, "diag_ggn needs a non-empty batch");
    let cache = net.forward_cached(inputs)?;
    diag_ggn_from_cache(net, &cache, loss)
}

/// [`diag_ggn`] reusing an existing forward pass.
pub fn diag_ggn_from_cache<T: Scalar>(
    net: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    loss: LossKind,
) -> Result<DiagCurvature<T>> {
    if !matches!(loss, LossKind::Mse) {
        return Err(Error::UnsupportedLoss(loss.name()));
    }
    let (n, c) = cache.output.shape();
    ensure!(n > 0, "diag_ggn needs a non-empty batch");
    let nl = net.layers().len();
    let mut sq_sums: Vec<Matrix<T>> = net
        .layers()
        .iter()
        .map(|l| Matrix::zeros(n, l.out_dim()))
        .collect();
    for out_idx in 0..c {
        let cotangent =
            Matrix::from_fn(n, c, |_, j| if j == out_idx { T::one() } else { T::zero() });
        let (deltas, _) = net.preactivation_grads(cache, &cotangent)?;
        for (acc, d) in sq_sums.iter_mut().zip(&deltas) {
            for (s, &v) in acc.as_mut_slice().iter_mut().zip(d.as_slice()) {
                *s += v * v;
            }
        }
    }
    let scale = T::lit(2.0) / T::lit(c as f64) / T::lit(n as f64);
    let mut diag = Vec::with_capacity(net.num_params());
    for i in 0..nl {
        squared_outer_diag(&sq_sums[i], &cache.layer_inputs[i], scale, &mut diag);
    }
    Ok(DiagCurvature { diag })
}

/// Empirical-Fisher diagonal `mean_n g_n ⊙ g_n` from captured per-sample
/// layer inputs and pre-activation gradients.
pub fn empirical_fisher_diag<T: Scalar>(capture: &BackwardCapture<T>) -> Result<DiagCurvature<T>> {
    ensure!(
        capture.is_captured(),
        "backward capture missing per-layer activations"
    );
    let n = capture.batch_size();
    ensure!(n > 0, "empirical Fisher needs a non-empty batch");
    let scale = T::one() / T::lit(n as f64);
    let mut diag = Vec::with_capacity(capture.grad.len());
    for (b, a) in capture.preact_grads.iter().zip(&capture.activations) {
        let b_sq = b.map(|v| v * v);
        squared_outer_diag(&b_sq, a, scale, &mut diag);
    }
    Ok(DiagCurvature { diag })
}

/// Appends `scale * (b_sq^T (a ⊙ a))` (weights, row-major) then
/// `scale * colsum(b_sq)` (bias).
fn squared_outer_diag<T: Scalar>(b_sq: &Matrix<T>, a: &Matrix<T>, scale: T, out: &mut Vec<T>) {
    let a_sq = a.map(|v| v * v);
    let mut w = b_sq.matmul_tn(&a_sq);
    w.scale(scale);
    out.extend_from_slice(w.as_slice());
    out.extend(b_sq.col_sums().into_iter().map(|s| s * scale));
}

/// Kronecker factors `A_i = mean(ã ãᵀ)`, `B_i = mean(b bᵀ)` from a capture,
/// blended as `decay * prior + (1 - decay) * fresh` when a prior is given.
pub fn kfac_factors<T: Scalar>(
    capture: &BackwardCapture<T>,
    prior: Option<&KroneckerBlocks<T>>,
    decay: T,
) -> Result<KroneckerBlocks<T>> {
    ensure!(
        capture.is_captured(),
        "backward capture missing per-layer activations"
    );
    ensure!(
        decay >= T::zero() && decay < T::one(),
        "decay must lie in [0, 1), got {decay}"
    );
    let n = capture.batch_size();
    ensure!(n > 0, "kfac_factors needs a non-empty batch");
    let inv_n = T::one() / T::lit(n as f64);
    let mut layers = Vec::with_capacity(capture.activations.len());
    for (a, b) in capture.activations.iter().zip(&capture.preact_grads) {
        let ones = Matrix::from_fn(n, 1, |_, _| T::one());
        let aug = a.hcat(&ones);
        let mut fa = aug.matmul_tn(&aug);
        fa.scale(inv_n);
        let mut fb = b.matmul_tn(b);
        fb.scale(inv_n);
        layers.push(KroneckerFactors { a: fa, b: fb });
    }
    if let Some(prior) = prior {
        ensure!(
            prior.layers.len() == layers.len(),
            "prior has {} layers, capture has {}",
            prior.layers.len(),
            layers.len()
        );
        let fresh_w = T::one() - decay;
        for (fresh, old) in layers.iter_mut().zip(&prior.layers) {
            ensure!(
                fresh.a.shape() == old.a.shape() && fresh.b.shape() == old.b.shape(),
                "prior factor shapes do not match capture"
            );
            fresh.a.scale(fresh_w);
            fresh.a.add_scaled(&old.a, decay);
            fresh.b.scale(fresh_w);
            fresh.b.add_scaled(&old.b, decay);
        }
    }
    Ok(KroneckerBlocks { layers, decay })
}

/// Applies `(B_i + √δ I)^{-1} G_i (A_i + √δ I)^{-1}` to each layer's gradient
/// block `G_i = [∇W | ∇b]` (out x (in+1)) and re-flattens.
///
/// Does not enforce any damping floor; with `δ = 0` singular factors surface
/// as [`Error::CholeskyFailure`].
pub fn kron_precondition<T: Scalar>(
    blocks: &KroneckerBlocks<T>,
    damping: Damping<T>,
    grad: &[T],
) -> Result<Vec<T>> {
    ensure!(
        grad.len() == blocks.num_params(),
        "gradient length {} != Kronecker block parameter count {}",
        grad.len(),
        blocks.num_params()
    );
    let shift = damping.delta().sqrt();
    let mut out = Vec::with_capacity(grad.len());
    let mut off = 0;
    for (layer, f) in blocks.layers.iter().enumerate() {
        let (o, i) = (f.out_dim(), f.in_dim());
        let a_inv = damped_inverse(&f.a, shift)
            .map_err(|_| Error::CholeskyFailure { layer, factor: "A" })?;
        let b_inv = damped_inverse(&f.b, shift)
            .map_err(|_| Error::CholeskyFailure { layer, factor: "B" })?;
        let g = &grad[off..off + o * (i + 1)];
        let block = Matrix::from_fn(
            o,
            i + 1,
            |r, c| if c < i { g[r * i + c] } else { g[o * i + r] },
        );
        let pre = b_inv.matmul(&block).matmul(&a_inv);
        for r in 0..o {
            out.extend_from_slice(&pre.row(r)[..i]);
        }
        out.extend((0..o).map(|r| pre[(r, i)]));
        off += o * (i + 1);
    }
    Ok(out)
}

fn damped_inverse<T: Scalar>(
    m: &Matrix<T>,
    shift: T,
) -> Result<Matrix<T>, crate::linalg::NotPositiveDefinite> {
    let mut d = m.clone();
    if shift > T::zero() {
        d.add_diagonal(shift);
    }
    Ok(Cholesky::factor(&d)?.inverse())
}

/// Parameter delta `-α (diag(G) + δ I)^{-1} g`.
///
/// A coordinate whose damped curvature is exactly zero gets no update.
pub fn damped_newton_step<T: Scalar>(
    curv: &DiagCurvature<T>,
    grad: &[T],
    damping: Damping<T>,
    alpha: T,
) -> Result<Vec<T>> {
    ensure!(
        curv.diag.len() == grad.len(),
        "curvature length {} != gradient length {}",
        curv.diag.len(),
        grad.len()
    );
    let delta = damping.delta();
    Ok(curv
        .diag
        .iter()
        .zip(grad)
        .map(|(&h, &g)| {
            let denom = h + delta;
            if denom > T::zero() {
                -alpha * g / denom
            } else {
                T::zero()
            }
        })
        .collect())
}
