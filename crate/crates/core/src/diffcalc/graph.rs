use ndarray::{concatenate, s, Axis};
use rand::Rng;

use super::{check_matmul, dropout_mask, sigmoid, softplus, Activation, Tensor, EPS_DIV, EPS_LOG};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `a / max(b, EPS_DIV)`.
    DivGuarded(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    /// `ln(max(a, EPS_LOG))`.
    Log(Var),
    /// Elementwise product with a fixed tensor (dropout mask).
    Mask(Var, Tensor),
    /// `(a + eps) / rowsum(a + eps)`.
    NormalizeRows(Var, f64),
    SumAll(Var),
    MeanRows(Var),
    BroadcastRows(Var),
    ConcatCols(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded forward computation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the reverse pass is a single backwards sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; a zero tensor when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0]),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.iter().all(|v| !v.is_nan()), "NaN produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "expected a scalar node, found shape {:?}",
                t.dim()
            )));
        }
        Ok(t[[0, 0]])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_matmul("matmul", self.value(a), self.value(b))?;
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: (ar, ac),
                rhs: (rr, rc),
            });
        }
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn div_guarded(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div_guarded", a, b)?;
        let mut v = self.value(a).clone();
        v.zip_mut_with(self.value(b), |x, &d| *x /= d.max(EPS_DIV));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::DivGuarded(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(super::relu);
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(super::guarded_ln);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    pub fn activate(&mut self, a: Var, activation: Activation) -> Var {
        match activation {
            Activation::Relu => self.relu(a),
            Activation::Softplus => self.softplus(a),
            Activation::Identity => a,
        }
    }

    /// Recorded counterpart of [`super::dense_layer`].
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var, activation: Activation) -> Result<Var> {
        let h = self.matmul(input, weights)?;
        let h = self.add_row(h, bias)?;
        Ok(self.activate(h, activation))
    }

    /// Inverted dropout. Identity when not training or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !training || rate == 0.0 {
            super::check_rate(rate)?;
            return Ok(a);
        }
        let mask = dropout_mask(self.shape(a), rate, rng)?;
        let v = self.value(a) * &mask;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Mask(a, mask), rg))
    }

    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).mapv(|x| x + eps);
        for mut row in v.rows_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(a);
        self.push(v, Op::NormalizeRows(a, eps), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::from_elem((1, 1), s), Op::SumAll(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.nrows() == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        let v = t.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        let rg = self.rg(a);
        Ok(self.push(v, Op::MeanRows(a), rg))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.nrows() != 1 {
            return Err(Error::Dimension {
                op: "broadcast_rows",
                lhs: t.dim(),
                rhs: (1, t.ncols()),
            });
        }
        let v = t.broadcast((n, t.ncols())).expect("row broadcast").to_owned();
        let rg = self.rg(a);
        Ok(self.push(v, Op::BroadcastRows(a), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.nrows() != tb.nrows() {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: ta.dim(),
                rhs: tb.dim(),
            });
        }
        let v = concatenate(Axis(1), &[ta.view(), tb.view()]).expect("row counts agree");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.scalar(loss)?;
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones((1, 1)));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, d: Tensor| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.rg(*b) {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::DivGuarded(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let mut d = g.clone();
                        d.zip_mut_with(tb, |x, &den| *x /= den.max(EPS_DIV));
                        acc(*a, d);
                    }
                    if self.rg(*b) {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(ta).and(tb).for_each(|x, &num, &den| {
                            *x = if den > EPS_DIV { -*x * num / (den * den) } else { 0.0 };
                        });
                        acc(*b, d);
                    }
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |x, &v| {
                        if v <= 0.0 {
                            *x = 0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::Softplus(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |x, &v| *x *= sigmoid(v));
                    acc(*a, d);
                }
                Op::Log(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |x, &v| {
                        *x = if v > EPS_LOG { *x / v } else { 0.0 };
                    });
                    acc(*a, d);
                }
                Op::Mask(a, mask) => acc(*a, &g * mask),
                Op::NormalizeRows(a, eps) => {
                    let out = &node.value;
                    let inp = self.value(*a);
                    let mut d = Tensor::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let s: f64 = inp.row(i).iter().map(|x| x + eps).sum();
                        let dot: f64 = g.row(i).dot(&out.row(i));
                        for j in 0..g.ncols() {
                            d[[i, j]] = (g[[i, j]] - dot) / s;
                        }
                    }
                    acc(*a, d);
                }
                Op::SumAll(a) => acc(*a, Tensor::from_elem(self.shape(*a), g[[0, 0]])),
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let d = g
                        .broadcast((rows, cols))
                        .expect("row broadcast")
                        .mapv(|x| x / rows as f64);
                    acc(*a, d);
                }
                Op::BroadcastRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::ConcatCols(a, b) => {
                    let split = self.shape(*a).1;
                    acc(*a, g.slice(s![.., ..split]).to_owned());
                    acc(*b, g.slice(s![.., split..]).to_owned());
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    /// Gradients of `loss` with respect to each of `params`, in order.
    pub fn grad(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor>> {
        let g = self.backward(loss)?;
        Ok(params.iter().map(|&p| g.wrt(p)).collect())
    }
}
