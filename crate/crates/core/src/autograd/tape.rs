//! Reverse-mode tape.
//!
//! Every primitive appends one node holding its output value and the ids of
//! its inputs, so node order is a topological order by construction. A
//! single reverse sweep from the loss visits each node once. A tape supports
//! exactly one backward pass.

use super::kernels::{self, Conv1dGeom, Conv2dGeom};
use super::tensor::{Scalar, Tensor};
use crate::error::{AstnError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Abs(Var),
    Affine(Var, F),
    LeakyRelu(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var, usize),
    Conv2d(Var, Var, Conv2dGeom),
    Conv1d(Var, Var, Conv1dGeom),
    MaxPool(Var, Vec<usize>),
    Reshape(Var),
    Permute021(Var, [usize; 3]),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    ReverseRows(Var),
    Bce(Var, Vec<F>),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Lower/upper clamp applied to probabilities inside every BCE.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Option<Vec<F>>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [m] => Some((1, m)),
        [n, m] => Some((n, m)),
        _ => None,
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, mut value: Tensor<F>, requires_grad: bool) -> Var {
        value.set_requires_grad(false);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that gradients flow into.
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    /// Records a tensor treated as a constant.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Records a copy of `t`, tracking gradients iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor<F>) -> Var {
        let rg = t.requires_grad();
        self.leaf(t.clone(), rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AstnError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape(), data).expect("unary preserves shape");
        self.push(value, op, &[a])
    }

    fn binary(&mut self, opname: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        self.same_shape(opname, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Var {
        self.unary(a, Op::Affine(a, scale), move |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: F) -> Var {
        self.affine(a, scale, F::zero())
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -F::one(), F::one())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), move |x| leaky(x, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    /// `[n,k] × [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = match *self.shape(a) {
            [n, k] => (n, k),
            _ => return Err(AstnError::shape("matmul", format!("lhs {:?} not 2-D", self.shape(a)))),
        };
        let m = match *self.shape(b) {
            [k2, m] if k2 == k => m,
            _ => {
                return Err(AstnError::shape(
                    "matmul",
                    format!("{:?} × {:?}", self.shape(a), self.shape(b)),
                ))
            }
        };
        let (x, y) = (self.data(a), self.data(b));
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == F::zero() {
                    continue;
                }
                for (o, &yv) in orow.iter_mut().zip(&y[p * m..(p + 1) * m]) {
                    *o = *o + xv * yv;
                }
            }
        }
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · wᵀ` with `x: [n,k]` (or `[k]`) and `w: [m,k]`, giving `[n,m]`.
    pub fn matmul_bt(&mut self, x: Var, w: Var) -> Result<Var> {
        let Some((n, k)) = rows_cols(self.shape(x)) else {
            return Err(AstnError::shape("linear", format!("input {:?}", self.shape(x))));
        };
        let m = match *self.shape(w) {
            [m, k2] if k2 == k => m,
            _ => {
                return Err(AstnError::shape(
                    "linear",
                    format!("input {:?} vs weight {:?}", self.shape(x), self.shape(w)),
                ))
            }
        };
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            let xrow = &xd[i * k..(i + 1) * k];
            for j in 0..m {
                let wrow = &wd[j * k..(j + 1) * k];
                out[i * m + j] = dot(xrow, wrow);
            }
        }
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(value, Op::MatMulBt(x, w), &[x, w]))
    }

    /// Adds `b: [m]` to every row of `x: [n,m]` (or to `x: [m]`).
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let Some((_, m)) = rows_cols(self.shape(x)) else {
            return Err(AstnError::shape("add_row_bias", format!("input {:?}", self.shape(x))));
        };
        if self.shape(b) != [m] {
            return Err(AstnError::shape(
                "add_row_bias",
                format!("bias {:?} for width {m}", self.shape(b)),
            ));
        }
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % m])
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(value, Op::AddRowBias(x, b), &[x, b]))
    }

    /// Adds `b: [C]` along axis 1 of `x: [N,C,...]` (or axis 0 of `[C,...]`
    /// when `x` has no batch axis, detected by `batched`).
    pub fn add_channel_bias(&mut self, x: Var, b: Var, batched: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c_axis = usize::from(batched);
        if shape.len() <= c_axis || self.shape(b) != [shape[c_axis]] {
            return Err(AstnError::shape(
                "add_channel_bias",
                format!("bias {:?} for input {:?}", self.shape(b), shape),
            ));
        }
        let c = shape[c_axis];
        let inner: usize = shape[c_axis + 1..].iter().product();
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / inner) % c])
            .collect();
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::AddChannelBias(x, b, inner), &[x, b]))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(x), self.shape(kernel), stride, pad)?;
        let out = kernels::conv2d_forward(self.data(x), self.data(kernel), &geom);
        let shape: Vec<usize> = if self.shape(x).len() == 3 {
            vec![geom.out_ch, geom.out_w, geom.out_h]
        } else {
            vec![geom.batch, geom.out_ch, geom.out_w, geom.out_h]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Conv2d(x, kernel, geom), &[x, kernel]))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = Conv1dGeom::new(self.shape(x), self.shape(kernel), stride, pad)?;
        let out = kernels::conv1d_forward(self.data(x), self.data(kernel), &geom);
        let shape: Vec<usize> = if self.shape(x).len() == 2 {
            vec![geom.out_ch, geom.out_len]
        } else {
            vec![geom.batch, geom.out_ch, geom.out_len]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Conv1d(x, kernel, geom), &[x, kernel]))
    }

    /// Non-overlapping max pooling over the last two axes.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        self.max_pool(x, 2, size)
    }

    /// Non-overlapping max pooling over the last axis.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        self.max_pool(x, 1, size)
    }

    fn max_pool(&mut self, x: Var, dims: usize, size: usize) -> Result<Var> {
        let (vals, idx, shape) = kernels::max_pool(self.data(x), self.shape(x), dims, size)?;
        let value = Tensor::new(&shape, vals)?;
        Ok(self.push(value, Op::MaxPool(x, idx), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `[a,b,c] -> [a,c,b]`.
    pub fn permute_021(&mut self, x: Var) -> Result<Var> {
        let [a, b, c] = *self.shape(x) else {
            return Err(AstnError::shape("permute_021", format!("input {:?}", self.shape(x))));
        };
        let src = self.data(x);
        let mut out = vec![F::zero(); a * b * c];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out[(i * c + k) * b + j] = src[(i * b + j) * c + k];
                }
            }
        }
        let value = Tensor::new(&[a, c, b], out)?;
        Ok(self.push(value, Op::Permute021(x, [a, b, c]), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s: F = d.iter().copied().sum();
        let m = s / F::from_f64(d.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Column means of `x: [n,m]`, giving `[m]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let Some((n, m)) = rows_cols(self.shape(x)) else {
            return Err(AstnError::shape("mean_rows", format!("input {:?}", self.shape(x))));
        };
        if n == 0 {
            return Err(AstnError::shape("mean_rows", "no rows"));
        }
        let d = self.data(x);
        let mut out = vec![F::zero(); m];
        for row in d.chunks(m) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let inv = F::one() / F::from_f64(n as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let value = Tensor::new(&[m], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// Concatenates along the last axis. All inputs must be 1-D, or all
    /// 2-D with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AstnError::shape("concat", "no inputs"));
        }
        let one_d = self.shape(parts[0]).len() == 1;
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let shape = self.shape(p);
            if (shape.len() == 1) != one_d {
                return Err(AstnError::shape("concat", "mixed 1-D and 2-D inputs"));
            }
            let Some((n, m)) = rows_cols(shape) else {
                return Err(AstnError::shape("concat", format!("input {shape:?}")));
            };
            if *rows.get_or_insert(n) != n {
                return Err(AstnError::shape("concat", "row counts differ"));
            }
            widths.push(m);
        }
        let n = rows.unwrap_or(1);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &m) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * m..(r + 1) * m]);
            }
        }
        let shape: Vec<usize> = if one_d { vec![total] } else { vec![n, total] };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, m] = *self.shape(x) else {
            return Err(AstnError::shape("slice_rows", format!("input {:?}", self.shape(x))));
        };
        if start + len > n || len == 0 {
            return Err(AstnError::shape(
                "slice_rows",
                format!("rows {start}..{} of {n}", start + len),
            ));
        }
        let data = self.data(x)[start * m..(start + len) * m].to_vec();
        let value = Tensor::new(&[len, m], data)?;
        Ok(self.push(value, Op::SliceRows(x, start), &[x]))
    }

    /// Stacks equal-width row vectors (`[m]` or `[1,m]`) into `[n,m]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(AstnError::shape("stack_rows", "no inputs"));
        }
        let m = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            let shape = self.shape(r);
            if !(shape == [m] || shape == [1, m]) {
                return Err(AstnError::shape("stack_rows", format!("row {shape:?} vs width {m}")));
            }
            out.extend_from_slice(self.data(r));
        }
        let value = Tensor::new(&[rows.len(), m], out)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec()), rows))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Result<Var> {
        let [n, m] = *self.shape(x) else {
            return Err(AstnError::shape("reverse_rows", format!("input {:?}", self.shape(x))));
        };
        let src = self.data(x);
        let mut out = Vec::with_capacity(n * m);
        for r in (0..n).rev() {
            out.extend_from_slice(&src[r * m..(r + 1) * m]);
        }
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(value, Op::ReverseRows(x), &[x]))
    }

    /// Mean binary cross-entropy of probabilities `pred` against `targets`,
    /// with probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, targets: &[F]) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != targets.len() || p.is_empty() {
            return Err(AstnError::shape(
                "bce",
                format!("{} predictions vs {} targets", p.len(), targets.len()),
            ));
        }
        let total: F = p.iter().zip(targets).map(|(&p, &y)| bce_term(p, y)).sum();
        let loss = total / F::from_f64(p.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(pred, targets.to_vec()), &[pred]))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(AstnError::BackwardTwice);
        }
        let n_loss = self.value(loss).len();
        if n_loss != 1 || self.shape(loss).iter().any(|&d| d != 1) {
            return Err(AstnError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the loss with respect to `v`. `None` before backward or
    /// for constants; zeros for tracked nodes the loss does not reach.
    pub fn grad(&self, v: Var) -> Option<Vec<F>> {
        let grads = self.grads.as_ref()?;
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![F::zero(); self.value(v).len()]),
        )
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, &v)| *o = *o - v);
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o = *o + gv * y;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(ad) {
                        *o = *o + gv * x;
                    }
                });
            }
            Op::Square(a) => {
                let ad = self.data(*a);
                let two = F::from_f64(2.0);
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(ad) {
                        *o = *o + two * x * gv;
                    }
                });
            }
            Op::Abs(a) => {
                let ad = self.data(*a);
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(ad) {
                        let s = if x > F::zero() {
                            F::one()
                        } else if x < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        *o = *o + s * gv;
                    }
                });
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                self.acc(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, &gv)| *o = *o + s * gv);
                });
            }
            Op::LeakyRelu(a, slope) => {
                let ad = self.data(*a);
                let w = *slope;
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(ad) {
                        *o = *o + if x >= F::zero() { gv } else { w * gv };
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                        *o = *o + gv * y * (F::one() - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.acc(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                        *o = *o + gv * (F::one() - y * y);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                // dA = G · Bᵀ
                self.acc(grads, *a, |ga| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] = ga[i * k + p] + dot(grow, &bd[p * m..(p + 1) * m]);
                        }
                    }
                });
                // dB = Aᵀ · G
                self.acc(grads, *b, |gb| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for (o, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o = *o + av * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulBt(x, w) => {
                let (n, k) = rows_cols(self.shape(*x)).expect("checked in forward");
                let m = self.shape(*w)[0];
                let (xd, wd) = (self.data(*x), self.data(*w));
                // dX = G · W
                self.acc(grads, *x, |gx| {
                    for i in 0..n {
                        let gxrow = &mut gx[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gv = g[i * m + j];
                            if gv == F::zero() {
                                continue;
                            }
                            for (o, &wv) in gxrow.iter_mut().zip(&wd[j * k..(j + 1) * k]) {
                                *o = *o + gv * wv;
                            }
                        }
                    }
                });
                // dW = Gᵀ · X
                self.acc(grads, *w, |gw| {
                    for i in 0..n {
                        let xrow = &xd[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gv = g[i * m + j];
                            if gv == F::zero() {
                                continue;
                            }
                            for (o, &xv) in gw[j * k..(j + 1) * k].iter_mut().zip(xrow) {
                                *o = *o + gv * xv;
                            }
                        }
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let m = self.value(*b).len();
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *b, |gb| {
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::AddChannelBias(x, b, inner) => {
                let c = self.value(*b).len();
                let inner = *inner;
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *b, |gb| {
                    for (i, &gv) in g.iter().enumerate() {
                        let ch = (i / inner) % c;
                        gb[ch] = gb[ch] + gv;
                    }
                });
            }
            Op::Conv2d(x, k, geom) => {
                let (xd, kd) = (self.data(*x), self.data(*k));
                let need_x = self.nodes[x.0].requires_grad;
                let need_k = self.nodes[k.0].requires_grad;
                let mut gx = need_x.then(|| take_or_zero(grads, *x, xd.len()));
                let mut gk = need_k.then(|| take_or_zero(grads, *k, kd.len()));
                kernels::conv2d_backward(xd, kd, geom, g, gx.as_deref_mut(), gk.as_deref_mut());
                if let Some(v) = gx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[k.0] = Some(v);
                }
            }
            Op::Conv1d(x, k, geom) => {
                let (xd, kd) = (self.data(*x), self.data(*k));
                let need_x = self.nodes[x.0].requires_grad;
                let need_k = self.nodes[k.0].requires_grad;
                let mut gx = need_x.then(|| take_or_zero(grads, *x, xd.len()));
                let mut gk = need_k.then(|| take_or_zero(grads, *k, kd.len()));
                kernels::conv1d_backward(xd, kd, geom, g, gx.as_deref_mut(), gk.as_deref_mut());
                if let Some(v) = gx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[k.0] = Some(v);
                }
            }
            Op::MaxPool(x, idx) => {
                self.acc(grads, *x, |gx| {
                    for (&src, &gv) in idx.iter().zip(g) {
                        gx[src] = gx[src] + gv;
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |gx| add_into(gx, g)),
            Op::Permute021(x, [a, b, c]) => {
                let (a, b, c) = (*a, *b, *c);
                self.acc(grads, *x, |gx| {
                    for i in 0..a {
                        for j in 0..b {
                            for k in 0..c {
                                let src = (i * b + j) * c + k;
                                gx[src] = gx[src] + g[(i * c + k) * b + j];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o = *o + gv));
            }
            Op::Mean(x) => {
                let gv = g[0] / F::from_f64(self.value(*x).len() as f64);
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o = *o + gv));
            }
            Op::MeanRows(x) => {
                let (n, m) = rows_cols(self.shape(*x)).expect("checked in forward");
                let inv = F::one() / F::from_f64(n as f64);
                self.acc(grads, *x, |gx| {
                    for row in gx.chunks_mut(m) {
                        for (o, &gv) in row.iter_mut().zip(g) {
                            *o = *o + gv * inv;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|&p| rows_cols(self.shape(p)).expect("checked").1)
                    .collect();
                let total: usize = widths.iter().sum();
                let n = g.len() / total.max(1);
                let mut offset = 0;
                for (&p, &m) in parts.iter().zip(&widths) {
                    self.acc(grads, p, |gp| {
                        for r in 0..n {
                            let src = &g[r * total + offset..r * total + offset + m];
                            add_into(&mut gp[r * m..(r + 1) * m], src);
                        }
                    });
                    offset += m;
                }
            }
            Op::SliceRows(x, start) => {
                let m = self.shape(*x)[1];
                let s = *start;
                self.acc(grads, *x, |gx| add_into(&mut gx[s * m..s * m + g.len()], g));
            }
            Op::StackRows(rows) => {
                let m = g.len() / rows.len();
                for (r, &row) in rows.iter().enumerate() {
                    self.acc(grads, row, |gr| add_into(gr, &g[r * m..(r + 1) * m]));
                }
            }
            Op::ReverseRows(x) => {
                let [n, m] = *self.shape(*x) else { unreachable!() };
                self.acc(grads, *x, |gx| {
                    for r in 0..n {
                        add_into(&mut gx[r * m..(r + 1) * m], &g[(n - 1 - r) * m..(n - r) * m]);
                    }
                });
            }
            Op::Bce(p, targets) => {
                let pd = self.data(*p);
                let scale = g[0] / F::from_f64(pd.len() as f64);
                self.acc(grads, *p, |gp| {
                    for ((o, &pv), &y) in gp.iter_mut().zip(pd).zip(targets) {
                        *o = *o + scale * bce_grad(pv, y);
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<F>>], v: Var, f: impl FnOnce(&mut [F])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.value(v).len();
        let buf = grads[v.0].get_or_insert_with(|| vec![F::zero(); len]);
        f(buf);
    }
}

fn take_or_zero<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> Vec<F> {
    grads[v.0].take().unwrap_or_else(|| vec![F::zero(); len])
}

#[inline]
fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn leaky<F: Scalar>(x: F, slope: F) -> F {
    if x >= F::zero() {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn clamp_prob<F: Scalar>(p: F) -> (F, bool) {
    let lo = F::from_f64(PROB_CLAMP);
    let hi = F::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

fn bce_term<F: Scalar>(p: F, y: F) -> F {
    let (p, _) = clamp_prob(p);
    -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
}

fn bce_grad<F: Scalar>(p: F, y: F) -> F {
    let (pc, clamped) = clamp_prob(p);
    if clamped {
        return F::zero();
    }
    -y / pc + (F::one() - y) / (F::one() - pc)
}

/// Scalar BCE with the same clamping as the tape op.
pub fn bce_value(p: f64, y: f64) -> f64 {
    bce_term(p, y)
}
