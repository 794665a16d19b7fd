use std::collections::HashMap;

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::params::{ParamId, Parameters};
use super::tensor::{Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Norm used by [`Graph::row_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
}

/// Probability clamp inside every log term, so cross-entropies stay finite.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Expr<S: Scalar> {
    Constant,
    Param { arena: u64, id: ParamId },
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Max { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: S },
    LeakyRelu { x: NodeId, slope: S },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Abs { x: NodeId },
    Conv2d { x: NodeId, w: NodeId, geom: ConvGeom },
    // `geom` describes the forward conv whose adjoint this is: its "input"
    // is this op's output image.
    ConvT2d { x: NodeId, w: NodeId, geom: ConvGeom },
    Mean { x: NodeId },
    L2Norm { x: NodeId },
    RowNorm { x: NodeId, kind: NormKind },
    Bce { p: NodeId, t: NodeId },
    Reshape { x: NodeId },
    ConcatLast { a: NodeId, b: NodeId },
    BroadcastSpatial { x: NodeId, h: usize, w: usize },
}

struct Node<S: Scalar> {
    expr: Expr<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

/// Reverse-mode tape. Forward ops append nodes; [`Graph::backward`] fills a
/// gradient per reachable node, and [`Graph::accumulate_param_grads`] adds
/// parameter-leaf gradients back into the arena.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    param_leaves: HashMap<(u64, usize), NodeId>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &str, expr: Expr<S>, value: Tensor<S>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name.to_string()));
        }
        let requires_grad = match &expr {
            Expr::Constant => false,
            Expr::Param { .. } => true,
            other => self.inputs_of(other).iter().any(|&i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            expr,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs_of(&self, expr: &Expr<S>) -> Vec<NodeId> {
        match expr {
            Expr::Constant | Expr::Param { .. } => vec![],
            Expr::MatMul { a, b }
            | Expr::Add { a, b }
            | Expr::Sub { a, b }
            | Expr::Mul { a, b }
            | Expr::Max { a, b }
            | Expr::ConcatLast { a, b } => vec![*a, *b],
            Expr::AddBias { x, bias } => vec![*x, *bias],
            Expr::Conv2d { x, w, .. } | Expr::ConvT2d { x, w, .. } => vec![*x, *w],
            Expr::Bce { p, t } => vec![*p, *t],
            Expr::Scale { x, .. }
            | Expr::LeakyRelu { x, .. }
            | Expr::Tanh { x }
            | Expr::Sigmoid { x }
            | Expr::Abs { x }
            | Expr::Mean { x }
            | Expr::L2Norm { x }
            | Expr::RowNorm { x, .. }
            | Expr::Reshape { x }
            | Expr::BroadcastSpatial { x, .. } => vec![*x],
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push("constant", Expr::Constant, value)
    }

    /// Leaf tied to a parameter. Memoised: the same parameter maps to the
    /// same node within one graph.
    pub fn param(&mut self, params: &Parameters<S>, id: ParamId) -> Result<NodeId> {
        let key = (params.arena_id(), id.index());
        if let Some(&node) = self.param_leaves.get(&key) {
            return Ok(node);
        }
        let value = params.get(id).value.clone();
        let node = self.push(
            "param",
            Expr::Param {
                arena: params.arena_id(),
                id,
            },
            value,
        )?;
        self.param_leaves.insert(key, node);
        Ok(node)
    }

    // ── Elementwise and linear ops ──────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        self.push("matmul", Expr::MatMul { a, b }, out)
    }

    /// Broadcast a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sb = self.value(bias).shape();
        let last = *sx.last().ok_or_else(|| Error::shape("add_bias on scalar"))?;
        if sb.len() != 1 || sb[0] != last {
            return Err(Error::shape(format!("add_bias {sx:?} + {sb:?}")));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(last) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v = *v + *bv;
            }
        }
        self.push("add_bias", Expr::AddBias { x, bias }, out)
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
    ) -> Result<(Tensor<S>, NodeId, NodeId)> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{name} {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for (v, &bv) in out.data_mut().iter_mut().zip(bd) {
            *v = f(*v, bv);
        }
        Ok((out, a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, a, b) = self.binary_same_shape("add", a, b, |x, y| x + y)?;
        self.push("add", Expr::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, a, b) = self.binary_same_shape("sub", a, b, |x, y| x - y)?;
        self.push("sub", Expr::Sub { a, b }, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, a, b) = self.binary_same_shape("mul", a, b, |x, y| x * y)?;
        self.push("mul", Expr::Mul { a, b }, out)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, a, b) = self.binary_same_shape("max", a, b, |x, y| if x >= y { x } else { y })?;
        self.push("max", Expr::Max { a, b }, out)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let c = S::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        self.push("scale", Expr::Scale { x, c }, out)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let slope = S::from_f64(slope);
        let out = self.value(x).map(|v| if v > S::zero() { v } else { v * slope });
        self.push("leaky_relu", Expr::LeakyRelu { x, slope }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.tanh());
        self.push("tanh", Expr::Tanh { x }, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let one = S::one();
        let out = self.value(x).map(|v| one / (one + (-v).exp()));
        self.push("sigmoid", Expr::Sigmoid { x }, out)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.abs());
        self.push("abs", Expr::Abs { x }, out)
    }

    // ── Convolutions (NHWC) ─────────────────────────────────────────────

    /// `x: [B,H,W,Cin]`, `w: [k,k,Cin,Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sw[1] || sw[2] != sx[3] {
            return Err(Error::shape(format!("conv2d x {sx:?} w {sw:?}")));
        }
        let k = sw[0];
        if k > sx[1] + 2 * pad || k > sx[2] + 2 * pad || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d kernel {k} too large for input {sx:?} with pad {pad}"
            )));
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], sx[3], k, stride, pad);
        let out_c = sw[3];
        let m = geom.batch * geom.out_positions();
        let kk = geom.patch_len();

        let mut cols = vec![S::zero(); m * kk];
        kernels::im2col(self.value(x).data(), &geom, &mut cols);
        let mut out = Tensor::zeros(&[geom.batch, geom.out_h, geom.out_w, out_c]);
        kernels::matmul_nn(&cols, self.value(w).data(), m, kk, out_c, out.data_mut());
        self.push("conv2d", Expr::Conv2d { x, w, geom }, out)
    }

    /// Transposed convolution: `x: [B,H,W,Cin]`, `w: [k,k,Cout,Cin]`.
    /// Output spatial size is `(H-1)*stride - 2*pad + k + out_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sw[1] || sw[3] != sx[3] {
            return Err(Error::shape(format!("conv_transpose2d x {sx:?} w {sw:?}")));
        }
        if stride == 0 || out_pad >= stride {
            return Err(Error::invalid(format!(
                "conv_transpose2d stride {stride} out_pad {out_pad}"
            )));
        }
        let k = sw[0];
        let out_c = sw[2];
        let out_h = (sx[1] - 1) * stride + k + out_pad;
        let out_w = (sx[2] - 1) * stride + k + out_pad;
        if out_h <= 2 * pad || out_w <= 2 * pad {
            return Err(Error::shape("conv_transpose2d output swallowed by padding"));
        }
        let out_h = out_h - 2 * pad;
        let out_w = out_w - 2 * pad;
        // Adjoint of the conv mapping [out] -> [in]; positions must agree.
        let geom = ConvGeom::new(sx[0], out_h, out_w, out_c, k, stride, pad);
        if geom.out_h != sx[1] || geom.out_w != sx[2] {
            return Err(Error::shape(format!(
                "conv_transpose2d geometry mismatch: forward conv of {out_h}x{out_w} gives {}x{}, input is {}x{}",
                geom.out_h, geom.out_w, sx[1], sx[2]
            )));
        }

        let m = sx[0] * sx[1] * sx[2];
        let kk = geom.patch_len(); // k*k*out_c
        let mut cols = vec![S::zero(); m * kk];
        kernels::matmul_nt(self.value(x).data(), self.value(w).data(), m, sx[3], kk, &mut cols);
        let mut out = Tensor::zeros(&[sx[0], out_h, out_w, out_c]);
        kernels::col2im(&cols, &geom, out.data_mut());
        self.push("conv_transpose2d", Expr::ConvT2d { x, w, geom }, out)
    }

    // ── Reductions and losses ───────────────────────────────────────────

    /// Mean over every element -> scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let n = S::from_f64(v.numel() as f64);
        let sum = v.data().iter().fold(S::zero(), |acc, &x| acc + x);
        self.push("mean", Expr::Mean { x }, Tensor::scalar(sum / n))
    }

    /// Euclidean norm over every element -> scalar.
    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let sum = self
            .value(x)
            .data()
            .iter()
            .fold(S::zero(), |acc, &v| acc + v * v);
        self.push("l2_norm", Expr::L2Norm { x }, Tensor::scalar(sum.sqrt()))
    }

    /// Per-row norm of a rank-2 tensor: `[b,n] -> [b]`.
    pub fn row_norm(&mut self, x: NodeId, kind: NormKind) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("row_norm expects rank 2, got {shape:?}")));
        }
        let n = shape[1];
        let out: Vec<S> = self
            .value(x)
            .data()
            .chunks(n)
            .map(|row| match kind {
                NormKind::L2 => row.iter().fold(S::zero(), |a, &v| a + v * v).sqrt(),
                NormKind::L1 => row.iter().fold(S::zero(), |a, &v| a + v.abs()),
            })
            .collect();
        let out = Tensor::new(vec![shape[0]], out)?;
        self.push("row_norm", Expr::RowNorm { x, kind }, out)
    }

    /// Binary cross-entropy between probabilities `p` and targets `t`, mean
    /// over elements. Probabilities are clamped to `[PROB_EPS, 1-PROB_EPS]`.
    pub fn bce(&mut self, p: NodeId, t: NodeId) -> Result<NodeId> {
        if self.value(p).shape() != self.value(t).shape() {
            return Err(Error::shape(format!(
                "bce {:?} vs {:?}",
                self.value(p).shape(),
                self.value(t).shape()
            )));
        }
        let eps = S::from_f64(PROB_EPS);
        let one = S::one();
        let lo = eps;
        let hi = one - eps;
        let n = S::from_f64(self.value(p).numel() as f64);
        let mut acc = S::zero();
        for (&pv, &tv) in self.value(p).data().iter().zip(self.value(t).data()) {
            let pc = if pv < lo {
                lo
            } else if pv > hi {
                hi
            } else {
                pv
            };
            acc = acc + tv * pc.ln() + (one - tv) * (one - pc).ln();
        }
        let val = -(acc / n);
        self.push("bce", Expr::Bce { p, t }, Tensor::scalar(val))
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", Expr::Reshape { x }, out)
    }

    /// Concatenate along the last axis; all leading dims must match.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(format!("concat_last {sa:?} vs {sb:?}")));
        }
        let (la, lb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).numel() / la;
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = la + lb;
        let mut data = Vec::with_capacity(rows * (la + lb));
        let da = self.value(a).data();
        let db = self.value(b).data();
        for r in 0..rows {
            data.extend_from_slice(&da[r * la..(r + 1) * la]);
            data.extend_from_slice(&db[r * lb..(r + 1) * lb]);
        }
        let out = Tensor::new(shape, data)?;
        self.push("concat_last", Expr::ConcatLast { a, b }, out)
    }

    /// `[B,C] -> [B,H,W,C]`, repeating each row over every spatial position.
    pub fn broadcast_spatial(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 || h == 0 || w == 0 {
            return Err(Error::shape(format!("broadcast_spatial {sx:?} to {h}x{w}")));
        }
        let (b, c) = (sx[0], sx[1]);
        let mut data = Vec::with_capacity(b * h * w * c);
        let src = self.value(x).data();
        for bi in 0..b {
            let row = &src[bi * c..(bi + 1) * c];
            for _ in 0..h * w {
                data.extend_from_slice(row);
            }
        }
        let out = Tensor::new(vec![b, h, w, c], data)?;
        self.push(
            "broadcast_spatial",
            Expr::BroadcastSpatial { x, h, w },
            out,
        )
    }

    // ── Reverse pass ────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar loss. Gradients for every reachable
    /// node that requires them are stored on the graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));

        for idx in (0..self.nodes.len()).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let go = self.grads[idx].clone().unwrap();
            self.propagate(idx, &go)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, grad: Tensor<S>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut self.grads[target.0] {
            Some(existing) => existing.add_assign(&grad).expect("gradient shape fixed"),
            slot @ None => *slot = Some(grad),
        }
    }

    fn propagate(&mut self, idx: usize, go: &Tensor<S>) -> Result<()> {
        // Work on a borrowed expr via raw destructure to keep borrowck happy.
        match self.nodes[idx].expr {
            Expr::Constant | Expr::Param { .. } => {}
            Expr::Add { a, b } => {
                self.accumulate(a, go.clone());
                self.accumulate(b, go.clone());
            }
            Expr::Sub { a, b } => {
                self.accumulate(a, go.clone());
                self.accumulate(b, go.map(|v| -v));
            }
            Expr::Mul { a, b } => {
                if self.nodes[a.0].requires_grad {
                    let mut g = go.clone();
                    for (gv, &bv) in g.data_mut().iter_mut().zip(self.value(b).data()) {
                        *gv = *gv * bv;
                    }
                    self.accumulate(a, g);
                }
                if self.nodes[b.0].requires_grad {
                    let mut g = go.clone();
                    for (gv, &av) in g.data_mut().iter_mut().zip(self.value(a).data()) {
                        *gv = *gv * av;
                    }
                    self.accumulate(b, g);
                }
            }
            Expr::Max { a, b } => {
                // Ties route to the first input.
                if self.nodes[a.0].requires_grad {
                    let mut g = go.clone();
                    for ((gv, &av), &bv) in g
                        .data_mut()
                        .iter_mut()
                        .zip(self.value(a).data())
                        .zip(self.value(b).data())
                    {
                        if av < bv {
                            *gv = S::zero();
                        }
                    }
                    self.accumulate(a, g);
                }
                if self.nodes[b.0].requires_grad {
                    let mut g = go.clone();
                    for ((gv, &av), &bv) in g
                        .data_mut()
                        .iter_mut()
                        .zip(self.value(a).data())
                        .zip(self.value(b).data())
                    {
                        if av >= bv {
                            *gv = S::zero();
                        }
                    }
                    self.accumulate(b, g);
                }
            }
            Expr::Scale { x, c } => {
                self.accumulate(x, go.map(|v| v * c));
            }
            Expr::LeakyRelu { x, slope } => {
                let mut g = go.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(self.value(x).data()) {
                    if xv <= S::zero() {
                        *gv = *gv * slope;
                    }
                }
                self.accumulate(x, g);
            }
            Expr::Tanh { x } => {
                let mut g = go.clone();
                let y = &self.nodes[idx].value;
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * (S::one() - yv * yv);
                }
                self.accumulate(x, g);
            }
            Expr::Sigmoid { x } => {
                let mut g = go.clone();
                let y = &self.nodes[idx].value;
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * yv * (S::one() - yv);
                }
                self.accumulate(x, g);
            }
            Expr::Abs { x } => {
                let mut g = go.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(self.value(x).data()) {
                    *gv = if xv > S::zero() {
                        *gv
                    } else if xv < S::zero() {
                        -*gv
                    } else {
                        S::zero()
                    };
                }
                self.accumulate(x, g);
            }
            Expr::MatMul { a, b } => {
                let sa = self.value(a).shape().to_vec();
                let sb = self.value(b).shape().to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(&sa);
                    kernels::matmul_nt(go.data(), self.value(b).data(), m, n, k, da.data_mut());
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(&sb);
                    kernels::matmul_tn(self.value(a).data(), go.data(), m, k, n, db.data_mut());
                    self.accumulate(b, db);
                }
            }
            Expr::AddBias { x, bias } => {
                if self.nodes[x.0].requires_grad {
                    self.accumulate(x, go.clone());
                }
                if self.nodes[bias.0].requires_grad {
                    let n = self.value(bias).numel();
                    let mut db = Tensor::zeros(&[n]);
                    for row in go.data().chunks(n) {
                        for (dv, &gv) in db.data_mut().iter_mut().zip(row) {
                            *dv = *dv + gv;
                        }
                    }
                    self.accumulate(bias, db);
                }
            }
            Expr::Conv2d { x, w, geom } => {
                let m = geom.batch * geom.out_positions();
                let kk = geom.patch_len();
                let out_c = go.numel() / m;
                // Recompute cols from the saved input value.
                let mut cols = vec![S::zero(); m * kk];
                kernels::im2col(self.value(x).data(), &geom, &mut cols);
                if self.nodes[w.0].requires_grad {
                    let mut dw = Tensor::zeros(self.value(w).shape());
                    kernels::matmul_tn(&cols, go.data(), m, kk, out_c, dw.data_mut());
                    self.accumulate(w, dw);
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![S::zero(); m * kk];
                    kernels::matmul_nt(go.data(), self.value(w).data(), m, out_c, kk, &mut dcols);
                    let mut dx = Tensor::zeros(self.value(x).shape());
                    kernels::col2im(&dcols, &geom, dx.data_mut());
                    self.accumulate(x, dx);
                }
            }
            Expr::ConvT2d { x, w, geom } => {
                let sx = self.value(x).shape().to_vec();
                let m = sx[0] * sx[1] * sx[2];
                let cin = sx[3];
                let kk = geom.patch_len();
                let mut dcols = vec![S::zero(); m * kk];
                kernels::im2col(go.data(), &geom, &mut dcols);
                if self.nodes[x.0].requires_grad {
                    let mut dx = Tensor::zeros(&sx);
                    kernels::matmul_nn(&dcols, self.value(w).data(), m, kk, cin, dx.data_mut());
                    self.accumulate(x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = Tensor::zeros(self.value(w).shape());
                    kernels::matmul_tn(&dcols, self.value(x).data(), m, kk, cin, dw.data_mut());
                    self.accumulate(w, dw);
                }
            }
            Expr::Mean { x } => {
                let n = self.value(x).numel();
                let gv = go.item().expect("mean output is scalar") / S::from_f64(n as f64);
                self.accumulate(x, Tensor::full(self.value(x).shape(), gv));
            }
            Expr::L2Norm { x } => {
                let y = self.nodes[idx].value.item().expect("l2_norm output is scalar");
                let gv = go.item().expect("scalar");
                let mut g = self.value(x).clone();
                if y == S::zero() {
                    g.fill(S::zero());
                } else {
                    for v in g.data_mut().iter_mut() {
                        *v = gv * *v / y;
                    }
                }
                self.accumulate(x, g);
            }
            Expr::RowNorm { x, kind } => {
                let shape = self.value(x).shape().to_vec();
                let n = shape[1];
                let mut g = self.value(x).clone();
                let norms = self.nodes[idx].value.data().to_vec();
                for (r, row) in g.data_mut().chunks_mut(n).enumerate() {
                    let gr = go.data()[r];
                    match kind {
                        NormKind::L2 => {
                            let y = norms[r];
                            for v in row.iter_mut() {
                                *v = if y == S::zero() { S::zero() } else { gr * *v / y };
                            }
                        }
                        NormKind::L1 => {
                            for v in row.iter_mut() {
                                *v = if *v > S::zero() {
                                    gr
                                } else if *v < S::zero() {
                                    -gr
                                } else {
                                    S::zero()
                                };
                            }
                        }
                    }
                }
                self.accumulate(x, g);
            }
            Expr::Bce { p, t } => {
                let eps = S::from_f64(PROB_EPS);
                let one = S::one();
                let lo = eps;
                let hi = one - eps;
                let n = S::from_f64(self.value(p).numel() as f64);
                let gv = go.item().expect("bce output is scalar");
                if self.nodes[p.0].requires_grad {
                    let mut g = self.value(p).clone();
                    let td = self.value(t).data().to_vec();
                    for (v, &tv) in g.data_mut().iter_mut().zip(&td) {
                        let pv = *v;
                        // Clamped regions have zero slope.
                        *v = if pv < lo || pv > hi {
                            S::zero()
                        } else {
                            -gv * (tv / pv - (one - tv) / (one - pv)) / n
                        };
                    }
                    self.accumulate(p, g);
                }
                if self.nodes[t.0].requires_grad {
                    let mut g = self.value(p).clone();
                    for v in g.data_mut().iter_mut() {
                        let pc = if *v < lo {
                            lo
                        } else if *v > hi {
                            hi
                        } else {
                            *v
                        };
                        *v = -gv * (pc.ln() - (one - pc).ln()) / n;
                    }
                    self.accumulate(t, g);
                }
            }
            Expr::Reshape { x } => {
                let g = go.reshape(self.value(x).shape())?;
                self.accumulate(x, g);
            }
            Expr::ConcatLast { a, b } => {
                let la = *self.value(a).shape().last().unwrap();
                let lb = *self.value(b).shape().last().unwrap();
                let rows = self.value(a).numel() / la;
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(self.value(a).shape());
                    for r in 0..rows {
                        let src = &go.data()[r * (la + lb)..r * (la + lb) + la];
                        da.data_mut()[r * la..(r + 1) * la].copy_from_slice(src);
                    }
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(self.value(b).shape());
                    for r in 0..rows {
                        let src = &go.data()[r * (la + lb) + la..(r + 1) * (la + lb)];
                        db.data_mut()[r * lb..(r + 1) * lb].copy_from_slice(src);
                    }
                    self.accumulate(b, db);
                }
            }
            Expr::BroadcastSpatial { x, h, w } => {
                let sx = self.value(x).shape().to_vec();
                let (b, c) = (sx[0], sx[1]);
                let mut dx = Tensor::zeros(&sx);
                for bi in 0..b {
                    let dst = &mut dx.data_mut()[bi * c..(bi + 1) * c];
                    let base = bi * h * w * c;
                    for pos in 0..h * w {
                        let src = &go.data()[base + pos * c..base + (pos + 1) * c];
                        for (dv, &gv) in dst.iter_mut().zip(src) {
                            *dv = *dv + gv;
                        }
                    }
                }
                self.accumulate(x, dx);
            }
        }
        Ok(())
    }

    /// Add each parameter leaf's gradient into its arena slot. Gradients
    /// accumulate until the caller zeroes them.
    pub fn accumulate_param_grads(&self, params: &mut Parameters<S>) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Expr::Param { arena, id } = node.expr {
                if arena != params.arena_id() {
                    continue;
                }
                if let Some(g) = self.grads.get(idx).and_then(|g| g.as_ref()) {
                    params
                        .get_mut(id)
                        .gradient
                        .add_assign(g)
                        .expect("parameter gradient shape fixed");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // loss = x^2 at x = 3 -> dx = 6
        let mut g = Graph::<f64>::new();
        let mut ps = Parameters::new();
        let x = ps.add("x", Tensor::scalar(3.0)).unwrap();
        let xn = g.param(&ps, x).unwrap();
        let sq = g.mul(xn, xn).unwrap();
        g.backward(sq).unwrap();
        g.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(x).gradient.item().unwrap(), 6.0);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let k = 5;
        let mut g = Graph::<f64>::new();
        let mut ps = Parameters::new();
        let x = ps.add("x", Tensor::from_vec(vec![2.0; k])).unwrap();
        let xn = g.param(&ps, x).unwrap();
        let m = g.mean(xn).unwrap();
        g.backward(m).unwrap();
        g.accumulate_param_grads(&mut ps);
        for &gv in ps.get(x).gradient.data() {
            assert_eq!(gv, 1.0 / k as f64);
        }
    }

    #[test]
    fn tanh_at_origin_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.tanh(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_all_ones_center() {
        // 4x4 ones, 3x3 ones kernel, stride 1, pad 1: interior output is 9.
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 4, 4, 1], 1.0)).unwrap();
        let w = g.constant(Tensor::full(&[3, 3, 1, 1], 1.0)).unwrap();
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 4, 4, 1]);
        // Position (1,1) sees the full 3x3 window.
        assert_eq!(g.value(y).data()[4 * 1 + 1], 9.0);
        // Corner (0,0) sees a 2x2 window.
        assert_eq!(g.value(y).data()[0], 4.0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_output_is_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[2], 1e30)).unwrap();
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bce_constant_half_is_two_log_two_halves() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::full(&[8], 0.5)).unwrap();
        let ones = g.constant(Tensor::full(&[8], 1.0)).unwrap();
        let zeros = g.constant(Tensor::zeros(&[8])).unwrap();
        let a = g.bce(p, ones).unwrap();
        let b = g.bce(p, zeros).unwrap();
        let total = g.value(a).item().unwrap() + g.value(b).item().unwrap();
        assert!((total - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut ps = Parameters::new();
        let x = ps.add("x", Tensor::scalar(2.0f64)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let xn = g.param(&ps, x).unwrap();
            let sq = g.mul(xn, xn).unwrap();
            g.backward(sq).unwrap();
            g.accumulate_param_grads(&mut ps);
        }
        assert_eq!(ps.get(x).gradient.item().unwrap(), 8.0);
        ps.zero_all_grads();
        assert_eq!(ps.get(x).gradient.item().unwrap(), 0.0);
    }

    #[test]
    fn concat_and_broadcast_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::full(&[2, 3], 1.0)).unwrap();
        let b = g.constant(Tensor::full(&[2, 2], 2.0)).unwrap();
        let c = g.concat_last(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 5]);
        assert_eq!(g.value(c).data()[3], 2.0);

        let l = g.constant(Tensor::full(&[2, 4], 3.0)).unwrap();
        let lb = g.broadcast_spatial(l, 5, 6).unwrap();
        assert_eq!(g.value(lb).shape(), &[2, 5, 6, 4]);
    }
}
