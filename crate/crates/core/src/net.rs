//! Fixed-topology multilayer perceptron with forward/backward passes that
//! expose the per-layer quantities used by curvature estimation.
//!
//! Batches are row-major: one sample per row. Each layer computes
//! `out = act(in * W^T + b)` with `W` stored `out x in`.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output<T: Scalar>(self, out: T) -> T {
        match self {
            Activation::Tanh => T::one() - out * out,
            Activation::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        ensure!(
            bias.len() == weight.rows(),
            "bias length {} != layer out-dim {}",
            bias.len(),
            weight.rows()
        );
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.out_dim() * (self.in_dim() + 1)
    }
}

/// Layered dense-network parameters `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Activations recorded by [`NetworkParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `layer_inputs[i]` is the input to layer `i` (batch x in_i).
    pub layer_inputs: Vec<Matrix<T>>,
    /// Post-activation output of the final layer.
    pub output: Matrix<T>,
}

/// Result of a backward pass.
///
/// `grad` is the batch-mean gradient in [`NetworkParams::flatten`] order.
/// When capture is requested, `activations[i]` and `preact_grads[i]` hold the
/// per-sample layer inputs `a_i` and pre-activation gradients `b_i`, so that
/// the weight gradient of layer `i` equals `b_i^T a_i / batch`.
#[derive(Debug, Clone)]
pub struct BackwardCapture<T> {
    pub grad: Vec<T>,
    pub activations: Vec<Matrix<T>>,
    pub preact_grads: Vec<Matrix<T>>,
    /// Per-sample gradient with respect to the network input (batch x in).
    pub input_grad: Matrix<T>,
}

impl<T: Scalar> BackwardCapture<T> {
    pub fn batch_size(&self) -> usize {
        self.input_grad.rows()
    }

    pub fn is_captured(&self) -> bool {
        !self.activations.is_empty()
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        ensure!(!layers.is_empty(), "network needs at least one layer");
        for (k, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].out_dim() == pair[1].in_dim(),
                "layer {k} out-dim {} does not chain into layer {} in-dim {}",
                pair[0].out_dim(),
                k + 1,
                pair[1].in_dim()
            );
        }
        Ok(Self { layers })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    ///
    /// `dims` lists the layer widths including input and output, e.g.
    /// `[2, 3, 1]`. Hidden layers use `hidden`, the last layer `output`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(dims.len() >= 2, "need at least input and output dims");
        ensure!(dims.iter().all(|&d| d > 0), "zero-width layer in {dims:?}");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Matrix::from_fn(fan_out, fan_in, |_, _| T::lit(rng.gen_range(-bound..bound)));
                let bias = (0..fan_out)
                    .map(|_| T::lit(rng.gen_range(-bound..bound)))
                    .collect();
                let activation = if i + 1 == n { output } else { hidden };
                DenseLayer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Flat parameter count `D = Σ out * (in + 1)`.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// `(out, in)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.out_dim(), l.in_dim()))
            .collect()
    }

    /// Layer-major flat view: each layer's weight in row-major order, then its bias.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrites all parameters from a flat vector in [`flatten`](Self::flatten) order.
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        ensure!(
            flat.len() == self.num_params(),
            "flat vector length {} != parameter count {}",
            flat.len(),
            self.num_params()
        );
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight
                .as_mut_slice()
                .copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// A network with this architecture and the given flat parameters.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    /// `θ += delta` for a flat delta.
    pub fn apply_delta(&mut self, delta: &[T]) -> Result<()> {
        ensure!(delta.len() == self.num_params(), "delta length mismatch");
        let mut flat = self.flatten();
        for (p, &d) in flat.iter_mut().zip(delta) {
            *p += d;
        }
        self.set_flat(&flat)
    }

    /// `self ← tau * source + (1 - tau) * self`
    pub fn polyak_from(&mut self, source: &Self, tau: T) {
        assert_eq!(
            self.layer_shapes(),
            source.layer_shapes(),
            "polyak architecture mismatch"
        );
        let keep = T::one() - tau;
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, &s) in dst
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(src.weight.as_slice())
            {
                *d = tau * s + keep * *d;
            }
            for (d, &s) in dst.bias.iter_mut().zip(&src.bias) {
                *d = tau * s + keep * *d;
            }
        }
    }

    pub fn forward(&self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(inputs)?.output)
    }

    pub fn forward_cached(&self, inputs: &Matrix<T>) -> Result<ForwardCache<T>> {
        ensure!(
            inputs.cols() == self.input_dim(),
            "input has {} columns, network expects {}",
            inputs.cols(),
            self.input_dim()
        );
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        for l in &self.layers {
            let mut z = current.matmul_nt(&l.weight);
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&l.bias) {
                    *v = l.activation.apply(*v + b);
                }
            }
            layer_inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardCache {
            layer_inputs,
            output: current,
        })
    }

    pub fn backward(
        &self,
        inputs: &Matrix<T>,
        loss_grad: &Matrix<T>,
        capture: bool,
    ) -> Result<BackwardCapture<T>> {
        let cache = self.forward_cached(inputs)?;
        self.backward_cached(&cache, loss_grad, capture)
    }

    /// Backward pass from a cached forward. `loss_grad` row `n` is the
    /// per-sample cotangent `∂ℓ_n/∂ŷ_n`; the returned gradient is the batch mean.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &Matrix<T>,
        capture: bool,
    ) -> Result<BackwardCapture<T>> {
        let (deltas, input_grad) = self.preactivation_grads(cache, loss_grad)?;
        let batch = loss_grad.rows();
        let inv_n = if batch == 0 {
            T::zero()
        } else {
            T::one() / T::lit(batch as f64)
        };
        let mut grad = Vec::with_capacity(self.num_params());
        for (delta, a) in deltas.iter().zip(&cache.layer_inputs) {
            let mut gw = delta.matmul_tn(a);
            gw.scale(inv_n);
            grad.extend_from_slice(gw.as_slice());
            grad.extend(delta.col_sums().into_iter().map(|s| s * inv_n));
        }
        let (activations, preact_grads) = if capture {
            (cache.layer_inputs.clone(), deltas)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(BackwardCapture {
            grad,
            activations,
            preact_grads,
            input_grad,
        })
    }

    /// Per-sample pre-activation gradients `b_i` for every layer, plus the
    /// per-sample input gradient, for an arbitrary output cotangent.
    pub fn preactivation_grads(
        &self,
        cache: &ForwardCache<T>,
        cotangent: &Matrix<T>,
    ) -> Result<(Vec<Matrix<T>>, Matrix<T>)> {
        ensure!(
            cache.layer_inputs.len() == self.layers.len(),
            "forward cache built for a different network"
        );
        ensure!(
            cotangent.shape() == cache.output.shape(),
            "loss gradient shape {:?} != output shape {:?}",
            cotangent.shape(),
            cache.output.shape()
        );
        let nl = self.layers.len();
        let mut deltas: Vec<Matrix<T>> = Vec::with_capacity(nl);
        let mut upstream = cotangent.clone();
        for i in (0..nl).rev() {
            let layer = &self.layers[i];
            let out = if i + 1 == nl {
                &cache.output
            } else {
                &cache.layer_inputs[i + 1]
            };
            let mut delta = upstream;
            for (d, &o) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *d *= layer.activation.derivative_from_output(o);
            }
            upstream = delta.matmul(&layer.weight);
            deltas.push(delta);
        }
        deltas.reverse();
        Ok((deltas, upstream))
    }
}
