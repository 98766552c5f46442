//! Dense 2-D arrays with a recorded computation graph for reverse-mode
//! gradients, plus the Adam optimizer and dropout.
//!
//! Everything is `f64`. Forward operations on finite inputs stay finite:
//! softplus is evaluated in its overflow-safe form and every logarithm is
//! taken of `max(x, EPS_LOG)`.

mod adam;
mod graph;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
pub type Tensor = Array2<f64>;

/// Floor applied inside every logarithm.
pub const EPS_LOG: f64 = 1e-12;

/// Floor of guarded denominators. Only exact zeros are affected, so ratios
/// of tiny but positive probabilities stay exact.
pub const EPS_DIV: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
    Identity,
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus, for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn guarded_ln(x: f64) -> f64 {
    x.max(EPS_LOG).ln()
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }
}

pub(crate) fn check_matmul(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.ncols() != b.nrows() {
        return Err(Error::Dimension {
            op,
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    Ok(())
}

/// `activation(input · weights + bias)` with `bias` a `1 × out` row.
pub fn dense_layer(input: &Tensor, weights: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    check_matmul("dense_layer", input, weights)?;
    if bias.nrows() != 1 || bias.ncols() != weights.ncols() {
        return Err(Error::Dimension {
            op: "dense_layer bias",
            lhs: weights.dim(),
            rhs: bias.dim(),
        });
    }
    let mut out = input.dot(weights) + bias;
    out.mapv_inplace(|x| activation.apply(x));
    Ok(out)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Result<Tensor> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for m in mask.iter_mut() {
        if rng.random::<f64>() >= rate {
            *m = keep;
        }
    }
    Ok(mask)
}

pub fn dropout<R: Rng + ?Sized>(input: &Tensor, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.dim(), rate, rng)?;
    Ok(input * &mask)
}
