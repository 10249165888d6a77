//! Tape-based reverse-mode differentiation over [`Tensor2D`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so a single reverse sweep over the tape
//! visits each node after all of its consumers. Parameters enter the tape by
//! value through [`Graph::param`] and their gradients are written back into
//! the owning [`ParamStore`] with [`Graph::accumulate_param_grads`].

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Shape, Tensor2D};
use crate::error::{Error, Result};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulNT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    RowScale(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Silu(usize),
    Relu(usize),
    Square(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        shift: usize,
        xhat: Tensor2D,
        inv_std: Vec<f64>,
    },
    Im2Col {
        x: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad: usize,
    },
    DepthwiseConv {
        x: usize,
        kernel: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, `None` when `v` does not
    /// influence the loss or does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor2D, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf that receives a gradient (used when differentiating w.r.t. data).
    pub fn variable(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Places a parameter on the tape. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Copies `v` into a new constant node, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.rows() {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let mut out = Tensor2D::zeros(va.rows(), vb.cols());
        gemm(false, false, va, vb, &mut out, 0.0);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), ng))
    }

    /// `a · bᵀ`, both operands with the same column count.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.cols() {
            return Err(Error::shape("matmul_nt", va.shape(), vb.shape()));
        }
        let mut out = Tensor2D::zeros(va.rows(), vb.rows());
        gemm(false, true, va, vb, &mut out, 0.0);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(out, Op::MatMulNT(a.0, b.0), ng))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(op_name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor2D::from_vec(va.rows(), va.cols(), data)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a `1 x C` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        if vr.rows() != 1 || vr.cols() != vx.cols() {
            return Err(Error::shape("add_row", vx.shape(), vr.shape()));
        }
        let mut out = vx.clone();
        let r = vr.data();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        let ng = self.ng(x.0) || self.ng(row.0);
        Ok(self.push(out, Op::AddRow(x.0, row.0), ng))
    }

    /// Multiplies row `i` of `x` by `scale[i]`; `scale` is `T x 1`.
    pub fn row_scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (vx, vs) = (&self.nodes[x.0].value, &self.nodes[scale.0].value);
        if vs.cols() != 1 || vs.rows() != vx.rows() {
            return Err(Error::shape("row_scale", vx.shape(), vs.shape()));
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            let s = vs.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let ng = self.ng(x.0) || self.ng(scale.0);
        Ok(self.push(out, Op::RowScale(x.0, scale.0), ng))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.nodes[x.0].value.map(|v| alpha * v);
        let ng = self.ng(x.0);
        self.push(out, Op::Scale(x.0, alpha), ng)
    }

    /// Elementwise logistic function, strictly inside (0, 1) for moderate inputs.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(sigmoid_scalar);
        let ng = self.ng(x.0);
        self.push(out, Op::Sigmoid(x.0), ng)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * sigmoid_scalar(v));
        let ng = self.ng(x.0);
        self.push(out, Op::Silu(x.0), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.max(0.0));
        let ng = self.ng(x.0);
        self.push(out, Op::Relu(x.0), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * v);
        let ng = self.ng(x.0);
        self.push(out, Op::Square(x.0), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let ng = self.ng(x.0);
        self.push(out, Op::SoftmaxRows(x.0), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.ng(x.0);
        self.push(out, Op::LogSoftmaxRows(x.0), ng)
    }

    /// Per-row normalization to zero mean and unit variance, then
    /// `gain ⊙ x̂ + shift`. `gain` and `shift` are `1 x C`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let c = vx.cols();
        for p in [gain, shift] {
            let vp = &self.nodes[p.0].value;
            if vp.rows() != 1 || vp.cols() != c {
                return Err(Error::shape("layer_norm", vx.shape(), vp.shape()));
            }
        }
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[shift.0].value.data();
        let mut xhat = vx.clone();
        let mut out = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.rows());
        for i in 0..vx.rows() {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for j in 0..c {
                xr[j] = (row[j] - mean) * is;
            }
            let or = out.row_mut(i);
            for j in 0..c {
                or[j] = xr[j] * g[j] + b[j];
            }
        }
        let ng = self.ng(x.0) || self.ng(gain.0) || self.ng(shift.0);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                shift: shift.0,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Unfolds `x` (`T x C`) into `T_out x (kernel·C)` patches so that a
    /// convolution becomes one matrix product. Column `k·C + c` of output row
    /// `t` holds `x[t·stride + k·dilation − pad, c]`, zero outside the input.
    pub fn im2col(
        &mut self,
        x: Var,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad: usize,
    ) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        if kernel == 0 || stride == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "im2col needs positive kernel/stride/dilation, got {kernel}/{stride}/{dilation}"
            )));
        }
        let span = (kernel - 1) * dilation + 1;
        let padded = vx.rows() + 2 * pad;
        if padded < span {
            return Err(Error::shape("im2col", vx.shape(), format!("kernel span {span}")));
        }
        let t_out = (padded - span) / stride + 1;
        let c = vx.cols();
        let mut out = Tensor2D::zeros(t_out, kernel * c);
        for t in 0..t_out {
            let orow = out.row_mut(t);
            for k in 0..kernel {
                let src = (t * stride + k * dilation) as isize - pad as isize;
                if src >= 0 && (src as usize) < vx.rows() {
                    orow[k * c..(k + 1) * c].copy_from_slice(vx.row(src as usize));
                }
            }
        }
        let ng = self.ng(x.0);
        Ok(self.push(
            out,
            Op::Im2Col {
                x: x.0,
                kernel,
                stride,
                dilation,
                pad,
            },
            ng,
        ))
    }

    /// Same-length depthwise convolution along time. `kernel` is `K x C` with
    /// odd `K`; channel `c` of the output only reads channel `c` of `x`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (vx, vk) = (&self.nodes[x.0].value, &self.nodes[kernel.0].value);
        let k = vk.rows();
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise_conv1d needs an odd kernel size, got {k}"
            )));
        }
        if vk.cols() != vx.cols() {
            return Err(Error::shape("depthwise_conv1d", vx.shape(), vk.shape()));
        }
        let half = (k / 2) as isize;
        let (t_len, c) = (vx.rows(), vx.cols());
        let mut out = Tensor2D::zeros(t_len, c);
        for t in 0..t_len {
            for j in 0..k {
                let src = t as isize + j as isize - half;
                if src < 0 || src as usize >= t_len {
                    continue;
                }
                let xr = vx.row(src as usize);
                let kr = vk.row(j);
                let or = out.row_mut(t);
                for ch in 0..c {
                    or[ch] += kr[ch] * xr[ch];
                }
            }
        }
        let ng = self.ng(x.0) || self.ng(kernel.0);
        Ok(self.push(
            out,
            Op::DepthwiseConv {
                x: x.0,
                kernel: kernel.0,
            },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        if start + width > vx.cols() {
            return Err(Error::shape(
                "slice_cols",
                vx.shape(),
                format!("cols {}..{}", start, start + width),
            ));
        }
        let out = Tensor2D::from_fn(vx.rows(), width, |r, c| vx.get(r, start + c));
        let ng = self.ng(x.0);
        Ok(self.push(out, Op::SliceCols { x: x.0, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.nodes[p.0].value.rows())
            .ok_or_else(|| Error::Config("concat_cols of nothing".into()))?;
        let mut cols = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", Shape(rows, cols), v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Tensor2D::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        let ng = self.ng(x.0);
        self.push(Tensor2D::filled(1, 1, s), Op::SumAll(x.0), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.sum() / v.len() as f64;
        let ng = self.ng(x.0);
        self.push(Tensor2D::filled(1, 1, s), Op::MeanAll(x.0), ng)
    }

    /// `x · W + b` with `W` of shape `in x out` and `b` of shape `1 x out`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[weight.0].value);
        if vx.cols() != vw.rows() {
            return Err(Error::shape("linear", vx.shape(), vw.shape()));
        }
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    /// Mean squared error `(1/T) Σ (y_i − s_i)²` between two equal-shape nodes.
    pub fn mse_loss(&mut self, scores: Var, targets: Var) -> Result<Var> {
        let (vs, vt) = (&self.nodes[scores.0].value, &self.nodes[targets.0].value);
        if vs.shape() != vt.shape() || vs.is_empty() {
            return Err(Error::shape("mse_loss", vs.shape(), vt.shape()));
        }
        let d = self.sub(scores, targets)?;
        let sq = self.square(d);
        Ok(self.mean_all(sq))
    }

    /// Reverse sweep from `loss`; the seed gradient is all ones, so a
    /// non-scalar `loss` is differentiated as the sum of its entries.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor2D>> = (0..n).map(|_| None).collect();
        let lv = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Tensor2D::filled(lv.rows(), lv.cols(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn backward_node(&self, i: usize, dy: &Tensor2D, grads: &mut [Option<Tensor2D>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |j: usize| &self.nodes[j].value;
        let ng = |j: usize| self.nodes[j].needs_grad;

        match &node.op {
            Op::Input | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                if ng(a) {
                    let g = slot(grads, a, val(a));
                    gemm(false, true, dy, val(b), g, 1.0);
                }
                if ng(b) {
                    let g = slot(grads, b, val(b));
                    gemm(true, false, val(a), dy, g, 1.0);
                }
            }
            &Op::MatMulNT(a, b) => {
                if ng(a) {
                    let g = slot(grads, a, val(a));
                    gemm(false, false, dy, val(b), g, 1.0);
                }
                if ng(b) {
                    let g = slot(grads, b, val(b));
                    gemm(true, false, dy, val(a), g, 1.0);
                }
            }
            &Op::Add(a, b) => {
                if ng(a) {
                    slot(grads, a, val(a)).add_scaled(dy, 1.0);
                }
                if ng(b) {
                    slot(grads, b, val(b)).add_scaled(dy, 1.0);
                }
            }
            &Op::Sub(a, b) => {
                if ng(a) {
                    slot(grads, a, val(a)).add_scaled(dy, 1.0);
                }
                if ng(b) {
                    slot(grads, b, val(b)).add_scaled(dy, -1.0);
                }
            }
            &Op::Mul(a, b) => {
                if ng(a) {
                    let g = slot(grads, a, val(a));
                    for ((g, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(val(b).data()) {
                        *g += d * o;
                    }
                }
                if ng(b) {
                    let g = slot(grads, b, val(b));
                    for ((g, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(val(a).data()) {
                        *g += d * o;
                    }
                }
            }
            &Op::AddRow(x, r) => {
                if ng(x) {
                    slot(grads, x, val(x)).add_scaled(dy, 1.0);
                }
                if ng(r) {
                    let g = slot(grads, r, val(r)).data_mut();
                    for t in 0..dy.rows() {
                        for (g, d) in g.iter_mut().zip(dy.row(t)) {
                            *g += d;
                        }
                    }
                }
            }
            &Op::RowScale(x, s) => {
                let (vx, vs) = (val(x), val(s));
                if ng(x) {
                    let g = slot(grads, x, vx);
                    for t in 0..dy.rows() {
                        let sc = vs.get(t, 0);
                        for (g, d) in g.row_mut(t).iter_mut().zip(dy.row(t)) {
                            *g += sc * d;
                        }
                    }
                }
                if ng(s) {
                    let g = slot(grads, s, vs);
                    for t in 0..dy.rows() {
                        let dot: f64 = dy.row(t).iter().zip(vx.row(t)).map(|(a, b)| a * b).sum();
                        g.data_mut()[t] += dot;
                    }
                }
            }
            &Op::Scale(x, alpha) => {
                slot(grads, x, val(x)).add_scaled(dy, alpha);
            }
            &Op::Sigmoid(x) => {
                let g = slot(grads, x, val(x));
                for ((g, d), s) in g.data_mut().iter_mut().zip(dy.data()).zip(y.data()) {
                    *g += d * s * (1.0 - s);
                }
            }
            &Op::Silu(x) => {
                let vx = val(x);
                let g = slot(grads, x, vx);
                for ((g, d), &xv) in g.data_mut().iter_mut().zip(dy.data()).zip(vx.data()) {
                    let s = sigmoid_scalar(xv);
                    *g += d * (s + xv * s * (1.0 - s));
                }
            }
            &Op::Relu(x) => {
                let vx = val(x);
                let g = slot(grads, x, vx);
                for ((g, d), &xv) in g.data_mut().iter_mut().zip(dy.data()).zip(vx.data()) {
                    if xv > 0.0 {
                        *g += d;
                    }
                }
            }
            &Op::Square(x) => {
                let vx = val(x);
                let g = slot(grads, x, vx);
                for ((g, d), &xv) in g.data_mut().iter_mut().zip(dy.data()).zip(vx.data()) {
                    *g += 2.0 * xv * d;
                }
            }
            &Op::SoftmaxRows(x) => {
                let g = slot(grads, x, val(x));
                for t in 0..y.rows() {
                    let (yr, dr) = (y.row(t), dy.row(t));
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for ((g, &yv), &dv) in g.row_mut(t).iter_mut().zip(yr).zip(dr) {
                        *g += yv * (dv - dot);
                    }
                }
            }
            &Op::LogSoftmaxRows(x) => {
                let g = slot(grads, x, val(x));
                for t in 0..y.rows() {
                    let (yr, dr) = (y.row(t), dy.row(t));
                    let total: f64 = dr.iter().sum();
                    for ((g, &yv), &dv) in g.row_mut(t).iter_mut().zip(yr).zip(dr) {
                        *g += dv - yv.exp() * total;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (x, gain, shift) = (*x, *gain, *shift);
                let c = xhat.cols();
                if ng(gain) {
                    let g = slot(grads, gain, val(gain)).data_mut();
                    for t in 0..dy.rows() {
                        for ((g, d), xh) in g.iter_mut().zip(dy.row(t)).zip(xhat.row(t)) {
                            *g += d * xh;
                        }
                    }
                }
                if ng(shift) {
                    let g = slot(grads, shift, val(shift)).data_mut();
                    for t in 0..dy.rows() {
                        for (g, d) in g.iter_mut().zip(dy.row(t)) {
                            *g += d;
                        }
                    }
                }
                if ng(x) {
                    let gv = val(gain).data().to_vec();
                    let g = slot(grads, x, val(x));
                    let mut dxhat = vec![0.0; c];
                    for t in 0..dy.rows() {
                        let (dr, xr) = (dy.row(t), xhat.row(t));
                        for j in 0..c {
                            dxhat[j] = dr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let is = inv_std[t];
                        for (j, g) in g.row_mut(t).iter_mut().enumerate() {
                            *g += is * (dxhat[j] - m1 - xr[j] * m2);
                        }
                    }
                }
            }
            &Op::Im2Col {
                x,
                kernel,
                stride,
                dilation,
                pad,
            } => {
                let vx = val(x);
                let (rows, c) = (vx.rows(), vx.cols());
                let g = slot(grads, x, vx);
                for t in 0..dy.rows() {
                    let dr = dy.row(t);
                    for k in 0..kernel {
                        let src = (t * stride + k * dilation) as isize - pad as isize;
                        if src >= 0 && (src as usize) < rows {
                            for (g, d) in g.row_mut(src as usize).iter_mut().zip(&dr[k * c..(k + 1) * c]) {
                                *g += d;
                            }
                        }
                    }
                }
            }
            &Op::DepthwiseConv { x, kernel } => {
                let (vx, vk) = (val(x), val(kernel));
                let k = vk.rows();
                let half = (k / 2) as isize;
                let (t_len, c) = (vx.rows(), vx.cols());
                if ng(x) {
                    let g = slot(grads, x, vx);
                    for t in 0..t_len {
                        for j in 0..k {
                            let src = t as isize + j as isize - half;
                            if src < 0 || src as usize >= t_len {
                                continue;
                            }
                            let kr = vk.row(j);
                            let dr = dy.row(t);
                            let gr = g.row_mut(src as usize);
                            for ch in 0..c {
                                gr[ch] += kr[ch] * dr[ch];
                            }
                        }
                    }
                }
                if ng(kernel) {
                    let g = slot(grads, kernel, vk);
                    for t in 0..t_len {
                        for j in 0..k {
                            let src = t as isize + j as isize - half;
                            if src < 0 || src as usize >= t_len {
                                continue;
                            }
                            let xr = vx.row(src as usize);
                            let dr = dy.row(t);
                            let gr = g.row_mut(j);
                            for ch in 0..c {
                                gr[ch] += xr[ch] * dr[ch];
                            }
                        }
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let g = slot(grads, x, val(x));
                let w = dy.cols();
                for t in 0..dy.rows() {
                    for (g, d) in g.row_mut(t)[start..start + w].iter_mut().zip(dy.row(t)) {
                        *g += d;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if ng(p) {
                        let g = slot(grads, p, val(p));
                        for t in 0..dy.rows() {
                            for (g, d) in g.row_mut(t).iter_mut().zip(&dy.row(t)[off..off + w]) {
                                *g += d;
                            }
                        }
                    }
                    off += w;
                }
            }
            &Op::SumAll(x) => {
                let d = dy.get(0, 0);
                slot(grads, x, val(x)).data_mut().iter_mut().for_each(|g| *g += d);
            }
            &Op::MeanAll(x) => {
                let d = dy.get(0, 0) / val(x).len() as f64;
                slot(grads, x, val(x)).data_mut().iter_mut().for_each(|g| *g += d);
            }
        }
    }

    /// Adds `scale ×` the gradient of every trainable parameter leaf into
    /// the store's gradient buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore, scale: f64) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[i] {
                    store.get_mut(id).grad.add_scaled(g, scale);
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor2D>], j: usize, like: &Tensor2D) -> &'a mut Tensor2D {
    grads[j].get_or_insert_with(|| Tensor2D::zeros(like.rows(), like.cols()))
}
