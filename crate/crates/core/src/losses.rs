//! Supervised, latent and reverse losses for bidirectional INN training.
//!
//! Distribution matching uses the maximum mean discrepancy with the inverse
//! multiquadric kernel `k(a, b) = 1 / (1 + ‖a − b‖ / h)`, summed over a fixed
//! set of bandwidths `h`.

use serde::{Deserialize, Serialize};

use crate::numgrad::{CustomOp, Graph, NodeId, NumError, Tensor};

/// Bandwidths used when none are given, on standardized coordinates.
pub const DEFAULT_BANDWIDTHS: [f64; 3] = [0.05, 0.2, 0.9];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{0} of an empty batch")]
    Empty(&'static str),
    #[error("{op}: shapes {left:?} and {right:?} are incompatible")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("loss weight {name} = {value} must be positive and finite")]
    Weight { name: &'static str, value: f64 },
    #[error("bandwidth {0} must be positive and finite")]
    Bandwidth(f64),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Weights of the reverse (`x`), supervised (`y`) and latent (`z`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            x: 2000.0,
            y: 4000.0,
            z: 400.0,
        }
    }
}

impl LossWeights {
    /// Strictly positive weights.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, LossError> {
        let w = Self { x, y, z };
        for (name, value) in [("x", x), ("y", y), ("z", z)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(w)
    }

    /// Accepts zero weights too, which switches the corresponding term off.
    pub fn validate_non_negative(&self) -> Result<(), LossError> {
        for (name, value) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.is_empty() {
        return Err(LossError::Empty(op));
    }
    Ok(())
}

/// Mean of squared differences over all entries.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64, LossError> {
    check_same_shape("mse", pred, target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(s / pred.len() as f64)
}

fn check_mmd_inputs(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> Result<(), LossError> {
    if a.rows() == 0 || b.rows() == 0 || a.cols() == 0 {
        return Err(LossError::Empty("mmd2"));
    }
    if a.cols() != b.cols() {
        return Err(LossError::Shape {
            op: "mmd2",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if bandwidths.is_empty() {
        return Err(LossError::Empty("mmd2 bandwidth set"));
    }
    for &h in bandwidths {
        if !(h.is_finite() && h > 0.0) {
            return Err(LossError::Bandwidth(h));
        }
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn kernel_sum(r: f64, bandwidths: &[f64]) -> f64 {
    bandwidths.iter().map(|h| 1.0 / (1.0 + r / h)).sum()
}

/// `Σ_h dk/dr`.
fn kernel_slope(r: f64, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|h| {
            let q = 1.0 + r / h;
            -1.0 / (h * q * q)
        })
        .sum()
}

/// Squared maximum mean discrepancy between the rows of `a` and `b`.
pub fn mmd2(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> Result<f64, LossError> {
    Ok(mmd2_with_grad(a, b, bandwidths, (false, false))?.0)
}

/// Kernel sum and `(Σ_h dk/dr) / r` for one pair. The kernel has a cusp at
/// `r = 0`; its gradient is taken as zero there.
fn pair_terms(p: &[f64], q: &[f64], bandwidths: &[f64]) -> (f64, f64) {
    let r = distance(p, q);
    let k = kernel_sum(r, bandwidths);
    let c = if r == 0.0 { 0.0 } else { kernel_slope(r, bandwidths) / r };
    (k, c)
}

fn add_scaled_diff(out: &mut [f64], p: &[f64], q: &[f64], c: f64) {
    for ((o, a), b) in out.iter_mut().zip(p).zip(q) {
        *o += c * (a - b);
    }
}

/// Within-set mean kernel value and, if asked, its gradient.
fn within_terms(a: &Tensor, bandwidths: &[f64], want_grad: bool) -> (f64, Option<Tensor>) {
    let n = a.rows();
    if n == 1 {
        return (kernel_sum(0.0, bandwidths), want_grad.then(|| Tensor::zeros(1, a.cols())));
    }
    let scale = 2.0 / (n * (n - 1)) as f64;
    let mut grad = want_grad.then(|| Tensor::zeros(n, a.cols()));
    let cols = a.cols();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (k, c) = pair_terms(a.row(i), a.row(j), bandwidths);
            s += k;
            if let Some(g) = grad.as_mut() {
                let c = scale * c;
                let (lo, hi) = g.data_mut().split_at_mut(j * cols);
                add_scaled_diff(&mut lo[i * cols..(i + 1) * cols], a.row(i), a.row(j), c);
                add_scaled_diff(&mut hi[..cols], a.row(j), a.row(i), c);
            }
        }
    }
    (scale * s, grad)
}

/// `mmd2(a, b)` with the gradients requested by `want`.
pub fn mmd2_with_grad(
    a: &Tensor,
    b: &Tensor,
    bandwidths: &[f64],
    want: (bool, bool),
) -> Result<(f64, Option<Tensor>, Option<Tensor>), LossError> {
    check_mmd_inputs(a, b, bandwidths)?;
    let (ka, mut ga) = within_terms(a, bandwidths, want.0);
    let (kb, mut gb) = within_terms(b, bandwidths, want.1);
    let scale = -2.0 / (a.rows() * b.rows()) as f64;
    let mut cross = 0.0;
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            let rb = b.row(j);
            let (k, c) = pair_terms(ra, rb, bandwidths);
            cross += k;
            if let Some(g) = ga.as_mut() {
                add_scaled_diff(g.row_mut(i), ra, rb, scale * c);
            }
            if let Some(g) = gb.as_mut() {
                add_scaled_diff(g.row_mut(j), rb, ra, scale * c);
            }
        }
    }
    let value = ka + kb + scale * cross;
    Ok((value, ga, gb))
}

/// Gradient of `mmd2` with respect to both inputs.
pub fn mmd2_grad(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> Result<(Tensor, Tensor), LossError> {
    let (_, ga, gb) = mmd2_with_grad(a, b, bandwidths, (true, true))?;
    Ok((ga.expect("requested"), gb.expect("requested")))
}

/// Gradients are computed together with the value when the node is recorded.
struct Mmd2Op {
    grads: [Option<Tensor>; 2],
}

impl CustomOp for Mmd2Op {
    fn name(&self) -> &'static str {
        "mmd2"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let g = grad_out.data()[0];
        self.grads
            .iter()
            .zip(inputs)
            .map(|(d, x)| match d {
                Some(d) => d.map(|v| v * g),
                None => Tensor::zeros(x.rows(), x.cols()),
            })
            .collect()
    }
}

/// Records `mmd2(a, b)` as a single differentiable node.
pub fn mmd2_graph(g: &mut Graph, a: NodeId, b: NodeId, bandwidths: &[f64]) -> Result<NodeId, LossError> {
    let want = (g.requires_grad(a), g.requires_grad(b));
    let (value, ga, gb) = mmd2_with_grad(g.value(a), g.value(b), bandwidths, want)?;
    let op = Mmd2Op { grads: [ga, gb] };
    Ok(g.custom(Box::new(op), &[a, b], Tensor::scalar(value)))
}

pub fn mse_graph(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId, LossError> {
    check_same_shape("mse", g.value(pred), g.value(target))?;
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq)?)
}

/// Unweighted parts of the forward objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardTerms {
    pub supervised: f64,
    pub latent: f64,
}

impl ForwardTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.y * self.supervised + w.z * self.latent
    }
}

/// `λ_y · mse(y_pred, y_true) + λ_z · mmd2(z_pred, z_samples)`.
pub fn forward_loss(
    y_pred: &Tensor,
    z_pred: &Tensor,
    y_true: &Tensor,
    z_samples: &Tensor,
    weights: &LossWeights,
    bandwidths: &[f64],
) -> Result<f64, LossError> {
    Ok(forward_terms(y_pred, z_pred, y_true, z_samples, bandwidths)?.weighted(weights))
}

pub fn forward_terms(
    y_pred: &Tensor,
    z_pred: &Tensor,
    y_true: &Tensor,
    z_samples: &Tensor,
    bandwidths: &[f64],
) -> Result<ForwardTerms, LossError> {
    if y_pred.rows() != z_pred.rows() {
        return Err(LossError::Shape {
            op: "forward_loss",
            left: y_pred.shape(),
            right: z_pred.shape(),
        });
    }
    Ok(ForwardTerms {
        supervised: mse(y_pred, y_true)?,
        latent: mmd2(z_pred, z_samples, bandwidths)?,
    })
}

/// `λ_x · mmd2(generated, data)`.
pub fn reverse_loss(generated: &Tensor, data: &Tensor, lambda_x: f64, bandwidths: &[f64]) -> Result<f64, LossError> {
    Ok(lambda_x * mmd2(generated, data, bandwidths)?)
}
