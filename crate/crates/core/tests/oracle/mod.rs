//! Reference implementations used only by tests. None of these call into
//! the library's numeric routines; they read network weights through public
//! fields and recompute everything with plain loops.
#![allow(dead_code)]

use popforge::net::{Activation, NetworkParams};

pub fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
        Activation::Identity => z,
    }
}

pub fn act_prime(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => 1.0 - z.tanh().powi(2),
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Identity => 1.0,
    }
}

/// Forward pass of one sample, layer by layer.
pub fn forward(net: &NetworkParams<f64>, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in net.layers() {
        let (out, inp) = (layer.weight.rows(), layer.weight.cols());
        a = (0..out)
            .map(|r| {
                let z: f64 =
                    (0..inp).map(|c| layer.weight[(r, c)] * a[c]).sum::<f64>() + layer.bias[r];
                act(layer.activation, z)
            })
            .collect();
    }
    a
}

/// Forward pass with parameters supplied as a flat vector in layer-major
/// `W (row-major), b` order.
pub fn forward_flat(net: &NetworkParams<f64>, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    for layer in net.layers() {
        let (out, inp) = (layer.weight.rows(), layer.weight.cols());
        let w = &theta[off..off + out * inp];
        let b = &theta[off + out * inp..off + out * (inp + 1)];
        off += out * (inp + 1);
        a = (0..out)
            .map(|r| {
                act(
                    layer.activation,
                    (0..inp).map(|c| w[r * inp + c] * a[c]).sum::<f64>() + b[r],
                )
            })
            .collect();
    }
    a
}

/// Forward-mode Jacobian `∂f(x)/∂θ` (C x D) of one sample: one tangent
/// pass per parameter direction.
pub fn jacobian(net: &NetworkParams<f64>, x: &[f64]) -> Vec<Vec<f64>> {
    let theta = net.flatten();
    let d = theta.len();
    let c = net.output_dim();
    let mut jac = vec![vec![0.0; d]; c];
    for k in 0..d {
        let mut a = x.to_vec();
        let mut da = vec![0.0; x.len()];
        let mut off = 0;
        for layer in net.layers() {
            let (out, inp) = (layer.weight.rows(), layer.weight.cols());
            let mut na = vec![0.0; out];
            let mut nda = vec![0.0; out];
            for r in 0..out {
                let mut z = theta[off + out * inp + r];
                let mut dz = if k == off + out * inp + r { 1.0 } else { 0.0 };
                for col in 0..inp {
                    let idx = off + r * inp + col;
                    z += theta[idx] * a[col];
                    dz += theta[idx] * da[col];
                    if idx == k {
                        dz += a[col];
                    }
                }
                na[r] = act(layer.activation, z);
                nda[r] = act_prime(layer.activation, z) * dz;
            }
            a = na;
            da = nda;
            off += out * (inp + 1);
        }
        for (row, v) in jac.iter_mut().zip(da) {
            row[k] = v;
        }
    }
    jac
}

/// Diagonal of `(1/N) Σ_n J_nᵀ H_f J_n` with `H_f = (2/C) I` (per-output
/// mean squared error), assembled densely.
pub fn dense_ggn_diag(net: &NetworkParams<f64>, xs: &[Vec<f64>]) -> Vec<f64> {
    let d = net.num_params();
    let c = net.output_dim();
    let h = 2.0 / c as f64;
    let mut g = vec![vec![0.0; d]; d];
    for x in xs {
        let j = jacobian(net, x);
        for p in 0..d {
            for q in 0..d {
                let mut s = 0.0;
                for row in &j {
                    s += row[p] * h * row[q];
                }
                g[p][q] += s / xs.len() as f64;
            }
        }
    }
    (0..d).map(|i| g[i][i]).collect()
}

/// Batch MSE `(1/N) Σ_n (1/C) ‖f(x_n) − y_n‖²` at parameters `theta`.
pub fn mse(net: &NetworkParams<f64>, theta: &[f64], xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let p = forward_flat(net, theta, x);
        total += p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
    }
    total / xs.len() as f64
}

/// Central finite-difference gradient of [`mse`].
pub fn fd_gradient(net: &NetworkParams<f64>, xs: &[Vec<f64>], ys: &[Vec<f64>], h: f64) -> Vec<f64> {
    let theta = net.flatten();
    (0..theta.len())
        .map(|k| {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            (mse(net, &tp, xs, ys) - mse(net, &tm, xs, ys)) / (2.0 * h)
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Solves `(A ⊗ B) vec(X) = vec(G)` with column-major `vec`, for a layer
/// gradient laid out as `W (out x in, row-major)` followed by `b (out)`.
/// Returns `X` in the same layout.
pub fn dense_kron_solve(a: &[Vec<f64>], b: &[Vec<f64>], grad: &[f64]) -> Vec<f64> {
    let (ni, no) = (a.len(), b.len()); // ni = in + 1
    let inp = ni - 1;
    let g = |i: usize, j: usize| {
        if j < inp {
            grad[i * inp + j]
        } else {
            grad[no * inp + i]
        }
    };
    let n = ni * no;
    let mut k = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for j in 0..ni {
        for i in 0..no {
            rhs[j * no + i] = g(i, j);
            for jp in 0..ni {
                for ip in 0..no {
                    k[j * no + i][jp * no + ip] = a[j][jp] * b[i][ip];
                }
            }
        }
    }
    let x = solve(k, rhs);
    let mut out = vec![0.0; grad.len()];
    for i in 0..no {
        for j in 0..ni {
            let v = x[j * no + i];
            if j < inp {
                out[i * inp + j] = v;
            } else {
                out[no * inp + i] = v;
            }
        }
    }
    out
}

/// Textbook Adam on a parameter vector; returns the trajectory of `θ`.
pub fn adam_trajectory(
    theta0: &[f64],
    grad: impl Fn(&[f64]) -> Vec<f64>,
    lr: f64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(&theta);
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / (1.0 - b1.powi(t as i32));
            let vhat = v[i] / (1.0 - b2.powi(t as i32));
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        out.push(theta.clone());
    }
    out
}

/// Infinite-horizon LQR for `s' = A s + B a`, stage cost `sᵀQs + R a²`,
/// discount `γ`, via backward Riccati recursion on generic 2 x 2 arrays.
/// Returns `(P, K)` with the optimal action `a = −K s`.
pub fn riccati(
    a: [[f64; 2]; 2],
    b: [f64; 2],
    q: [[f64; 2]; 2],
    r: f64,
    gamma: f64,
) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut p = [[0.0; 2]; 2];
    let mut k = [0.0; 2];
    for _ in 0..200_000 {
        // K = γ (R + γ BᵀPB)⁻¹ BᵀPA
        let pb = [
            p[0][0] * b[0] + p[0][1] * b[1],
            p[1][0] * b[0] + p[1][1] * b[1],
        ];
        let btpb = b[0] * pb[0] + b[1] * pb[1];
        let btpa = [
            pb[0] * a[0][0] + pb[1] * a[1][0],
            pb[0] * a[0][1] + pb[1] * a[1][1],
        ];
        let denom = r + gamma * btpb;
        k = [gamma * btpa[0] / denom, gamma * btpa[1] / denom];
        // closed loop Acl = A − B K; P' = Q + KᵀRK + γ Aclᵀ P Acl
        let acl = [
            [a[0][0] - b[0] * k[0], a[0][1] - b[0] * k[1]],
            [a[1][0] - b[1] * k[0], a[1][1] - b[1] * k[1]],
        ];
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for u in 0..2 {
                    for w in 0..2 {
                        s += acl[u][i] * p[u][w] * acl[w][j];
                    }
                }
                next[i][j] = q[i][j] + k[i] * r * k[j] + gamma * s;
            }
        }
        let diff = (0..4)
            .map(|z| (next[z / 2][z % 2] - p[z / 2][z % 2]).abs())
            .fold(0.0, f64::max);
        p = next;
        if diff < 1e-15 {
            break;
        }
    }
    (p, k)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
