//! Reverse-mode tape. Nodes are appended in evaluation order, so walking the
//! tape backwards is a valid topological order for the backward pass.

use std::collections::HashMap;

use crate::error::{shape_err, AutodiffError, Result};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{conv_out_size, conv_transpose_out_size, Tensor};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    Mse,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        /// im2col of each batch item.
        cols: Vec<Vec<f64>>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        /// Geometry of the equivalent forward convolution over the output.
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Add {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        k: f64,
    },
    Loss {
        kind: LossKind,
        pred: Var,
        target: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(AutodiffError::Divergence(format!("non-finite value in {what}")))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g.data()),
        slot => *slot = Some(g),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "input")
    }

    /// Leaf whose gradient is kept after [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(t, Op::Leaf, requires_grad, "leaf")
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node so
    /// a parameter used twice accumulates one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.requires_grad, &p.name)?;
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, ci, kh, kw) = self.value(w).dims4()?;
        if ci != c || kh != kw {
            return Err(shape_err(format!(
                "conv2d weight {:?} does not fit input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(shape_err(format!("conv2d bias must have shape [{co}]")));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: kh,
            stride,
            padding,
            out_h: conv_out_size(h, kh, stride, padding)?,
            out_w: conv_out_size(wd, kw, stride, padding)?,
        };
        let (rows, hw) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; n * co * hw];
        let mut all_cols = Vec::with_capacity(n);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let cols = im2col(&xv[i * c * h * wd..(i + 1) * c * h * wd], &geom);
                let dst = &mut out[i * co * hw..(i + 1) * co * hw];
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (o, row) in dst.chunks_mut(hw).enumerate() {
                        row.fill(bv[o]);
                    }
                }
                gemm(co, rows, hw, wv, false, &cols, false, if b.is_some() { 1.0 } else { 0.0 }, dst);
                all_cols.push(cols);
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(&[n, co, geom.out_h, geom.out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: all_cols,
            },
            needs,
            "conv2d",
        )
    }

    /// Transposed convolution; `w` has shape (in_channels, out_channels, k, k).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (ci, co, kh, kw) = self.value(w).dims4()?;
        if ci != c || kh != kw {
            return Err(shape_err(format!(
                "conv_transpose2d weight {:?} does not fit input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(shape_err(format!("conv_transpose2d bias must have shape [{co}]")));
            }
        }
        let oh = conv_transpose_out_size(h, kh, stride, padding, output_padding)?;
        let ow = conv_transpose_out_size(wd, kw, stride, padding, output_padding)?;
        let geom = ConvGeom {
            channels: co,
            height: oh,
            width: ow,
            kernel: kh,
            stride,
            padding,
            out_h: h,
            out_w: wd,
        };
        debug_assert_eq!(conv_out_size(oh, kh, stride, padding)?, h);
        let (rows, hw) = (geom.col_rows(), h * wd);
        let mut out = vec![0.0; n * co * oh * ow];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let mut cols = vec![0.0; rows * hw];
            for i in 0..n {
                // cols = W^T x, W viewed as (ci) x (co k k)
                gemm(rows, ci, hw, wv, true, &xv[i * c * hw..(i + 1) * c * hw], false, 0.0, &mut cols);
                let dst = &mut out[i * co * oh * ow..(i + 1) * co * oh * ow];
                col2im(&cols, &geom, dst);
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
                        plane.iter_mut().for_each(|v| *v += bv[o]);
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(&[n, co, oh, ow], out)?;
        self.push(value, Op::ConvTranspose2d { x, w, b, geom }, needs, "conv_transpose2d")
    }

    /// Per-sample, per-channel normalization over the spatial dimensions (no affine terms).
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.chunks_mut(hw) {
            let mean = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&[n, c, h, w], out)?,
            Op::InstanceNorm { x, inv_std },
            needs,
            "instance_norm",
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            Activation::Relu => |v| v.max(0.0),
            Activation::LeakyRelu => |v| if v > 0.0 { v } else { LEAKY_SLOPE * v },
            Activation::Tanh => f64::tanh,
            Activation::Sigmoid => |v| 1.0 / (1.0 + (-v).exp()),
        };
        let value = self.value(x).map(f);
        let needs = self.needs(x);
        self.push(value, Op::Act { x, kind }, needs, "activation")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "add of shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add { a, b }, needs, "add")
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.affine(x, k, 0.0)
    }

    /// `k * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, k: f64, shift: f64) -> Result<Var> {
        let value = self.value(x).map(|v| k * v + shift);
        let needs = self.needs(x);
        self.push(value, Op::Affine { x, k }, needs, "affine")
    }

    /// Mean absolute (L1) or mean squared (MSE) error; a one-element tensor.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err(format!("loss of shapes {:?} and {:?}", p.shape(), t.shape())));
        }
        let n = p.numel().max(1) as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| match kind {
                LossKind::L1 => (a - b).abs(),
                LossKind::Mse => (a - b) * (a - b),
            })
            .sum();
        let needs = self.needs(pred) || self.needs(target);
        self.push(Tensor::scalar(sum / n), Op::Loss { kind, pred, target }, needs, "loss")
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.loss(LossKind::L1, pred, target)
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.loss(LossKind::Mse, pred, target)
    }

    /// Sum of `weights * x`; a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(shape_err("weighted_sum needs one weight per element"));
        }
        let s = self.value(x).data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, needs, "weighted_sum")
    }

    /// Backpropagate from a one-element output. Gradients of leaves that
    /// require them are then available through [`Graph::grad`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).numel() != 1 {
            return Err(shape_err("backward needs a one-element output"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(output) {
            self.grads = grads;
            return Ok(());
        }
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(i, &gy, &mut grads)?;
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                check_finite(g, &format!("gradient of node {i}"))?;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let gyd = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let (n, c, h, wd) = self.value(*x).dims4()?;
                let co = self.value(*w).shape()[0];
                let (rows, hw) = (geom.col_rows(), geom.col_cols());
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut gb = vec![0.0; co];
                    for i in 0..n {
                        for (o, row) in gyd[i * co * hw..(i + 1) * co * hw].chunks(hw).enumerate() {
                            gb[o] += row.iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, b, Tensor::from_vec(&[co], gb)?);
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; co * rows];
                    for (i, cols) in cols.iter().enumerate() {
                        gemm(co, hw, rows, &gyd[i * co * hw..(i + 1) * co * hw], false, cols, true, 1.0, &mut gw);
                    }
                    accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), gw)?);
                }
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let mut gx = vec![0.0; n * c * h * wd];
                    let mut gcols = vec![0.0; rows * hw];
                    for i in 0..n {
                        gemm(rows, co, hw, wv, true, &gyd[i * co * hw..(i + 1) * co * hw], false, 0.0, &mut gcols);
                        col2im(&gcols, geom, &mut gx[i * c * h * wd..(i + 1) * c * h * wd]);
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[n, c, h, wd], gx)?);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (n, ci, h, wd) = self.value(*x).dims4()?;
                let co = geom.channels;
                let (rows, hw, ohw) = (geom.col_rows(), h * wd, geom.height * geom.width);
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut gb = vec![0.0; co];
                    for i in 0..n {
                        for (o, plane) in gyd[i * co * ohw..(i + 1) * co * ohw].chunks(ohw).enumerate() {
                            gb[o] += plane.iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, b, Tensor::from_vec(&[co], gb)?);
                }
                let need_w = self.needs(*w);
                let need_x = self.needs(*x);
                if need_w || need_x {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let mut gw = vec![0.0; ci * rows];
                    let mut gx = vec![0.0; n * ci * hw];
                    for i in 0..n {
                        let gcols = im2col(&gyd[i * co * ohw..(i + 1) * co * ohw], geom);
                        if need_w {
                            gemm(ci, hw, rows, &xv[i * ci * hw..(i + 1) * ci * hw], false, &gcols, true, 1.0, &mut gw);
                        }
                        if need_x {
                            gemm(ci, rows, hw, wv, false, &gcols, false, 0.0, &mut gx[i * ci * hw..(i + 1) * ci * hw]);
                        }
                    }
                    if need_w {
                        accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), gw)?);
                    }
                    if need_x {
                        accumulate(grads, *x, Tensor::from_vec(&[n, ci, h, wd], gx)?);
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                if self.needs(*x) {
                    let (_, _, h, w) = node.value.dims4()?;
                    let hw = h * w;
                    let mut gx = vec![0.0; gyd.len()];
                    for (p, ((g, yhat), out)) in gyd
                        .chunks(hw)
                        .zip(node.value.data().chunks(hw))
                        .zip(gx.chunks_mut(hw))
                        .enumerate()
                    {
                        let mg = g.iter().sum::<f64>() / hw as f64;
                        let mgy = g.iter().zip(yhat).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
                        for ((o, gi), yi) in out.iter_mut().zip(g).zip(yhat) {
                            *o = inv_std[p] * (gi - mg - yi * mgy);
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(node.value.shape(), gx)?);
                }
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let gx: Vec<f64> = gyd
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(g, (xi, yi))| {
                        g * match kind {
                            Activation::Relu => {
                                if *xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::LeakyRelu => {
                                if *xi > 0.0 {
                                    1.0
                                } else {
                                    LEAKY_SLOPE
                                }
                            }
                            Activation::Tanh => 1.0 - yi * yi,
                            Activation::Sigmoid => yi * (1.0 - yi),
                        }
                    })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(node.value.shape(), gx)?);
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, gy.clone());
                    }
                }
            }
            Op::Affine { x, k } => {
                accumulate(grads, *x, gy.map(|g| g * k));
            }
            Op::Loss { kind, pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let n = p.numel().max(1) as f64;
                let g0 = gyd[0];
                let gp: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| match kind {
                        LossKind::L1 => {
                            let d = a - b;
                            g0 * if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            } / n
                        }
                        LossKind::Mse => g0 * 2.0 * (a - b) / n,
                    })
                    .collect();
                let gp = Tensor::from_vec(p.shape(), gp)?;
                if self.needs(*target) {
                    accumulate(grads, *target, gp.map(|v| -v));
                }
                if self.needs(*pred) {
                    accumulate(grads, *pred, gp);
                }
            }
            Op::WeightedSum { x, weights } => {
                let g0 = gyd[0];
                let gx = weights.iter().map(|w| w * g0).collect();
                accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), gx)?);
            }
        }
        Ok(())
    }

    /// Move the gradients of every parameter leaf into `store`.
    pub fn write_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (id, v) in &self.params {
            if let Some(g) = self.grad(*v) {
                store.accumulate_grad(*id, g)?;
            }
        }
        Ok(())
    }
}
