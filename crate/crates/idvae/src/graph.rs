//! Tape-based reverse-mode automatic differentiation.
//!
//! Ops are methods on [`Graph`]. Each call computes the result eagerly and,
//! when recording and any input is tracked, appends a node (op tag, input
//! handles, saved activations) to the tape. `backward` replays nodes in
//! strict reverse append order, accumulating gradients additively into every
//! reachable parameter until `zero_grad`.
//!
//! Shape rules are the minimum the networks here need: elementwise ops want
//! identical shapes, `broadcast_to` covers the bias/conditioning patterns
//! (scalar -> any, [n] -> [b,n], [c] -> [b,c,h,w]), matmul is 2-D, and the
//! convolutions are square-kernel NCHW.
//!
//! A tensor produced by one graph is treated as a constant leaf by any other
//! graph; the tape is rebuilt every forward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{numel, Tensor};

/// Inputs to `log` are clamped to at least this value.
pub const LOG_EPS: f32 = 1e-7;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

enum Op {
    Add,
    Sub,
    Mul,
    Scale(f32),
    AddScalar,
    Broadcast { from: Vec<usize> },
    Matmul { m: usize, k: usize, n: usize },
    Conv2d { geom: ConvGeom },
    ConvTranspose2d { geom: ConvGeom, out_h: usize, out_w: usize },
    Relu,
    LeakyRelu(f32),
    Sigmoid { y: Vec<f32> },
    Tanh { y: Vec<f32> },
    Exp { y: Vec<f32> },
    Log,
    Square,
    Clamp { lo: f32, hi: f32 },
    SumAll,
    MeanAll,
    Concat { axis: usize, parts: Vec<usize> },
    Reshape,
    CrossEntropy { probs: Vec<f32>, labels: Vec<usize> },
}

struct Node {
    op: Op,
    inputs: Vec<Tensor>,
    out_shape: Vec<usize>,
}

pub struct Graph {
    id: u64,
    recording: bool,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// Recording graph: ops with tracked inputs are appended to the tape.
    pub fn new() -> Graph {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), recording: true, nodes: Vec::new() }
    }

    /// Non-recording graph for plain forward evaluation.
    pub fn inference() -> Graph {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), recording: false, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn tracked(&self, t: &Tensor) -> bool {
        t.node_in(self.id).is_some() || t.requires_grad()
    }

    fn push(&mut self, op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        let out = Tensor::from_vec(&shape, data);
        if self.recording && inputs.iter().any(|t| self.tracked(t)) {
            out.set_node(self.id, self.nodes.len());
            self.nodes.push(Node { op, inputs, out_shape: shape });
        }
        out
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.check_same_shape(b, "add")?;
        let data = {
            let (xa, xb) = (a.borrow(), b.borrow());
            xa.data.iter().zip(&xb.data).map(|(x, y)| x + y).collect()
        };
        Ok(self.push(Op::Add, vec![a.clone(), b.clone()], a.shape(), data))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.check_same_shape(b, "sub")?;
        let data = {
            let (xa, xb) = (a.borrow(), b.borrow());
            xa.data.iter().zip(&xb.data).map(|(x, y)| x - y).collect()
        };
        Ok(self.push(Op::Sub, vec![a.clone(), b.clone()], a.shape(), data))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.check_same_shape(b, "mul")?;
        let data = {
            let (xa, xb) = (a.borrow(), b.borrow());
            xa.data.iter().zip(&xb.data).map(|(x, y)| x * y).collect()
        };
        Ok(self.push(Op::Mul, vec![a.clone(), b.clone()], a.shape(), data))
    }

    pub fn scale(&mut self, a: &Tensor, c: f32) -> Tensor {
        let data = a.borrow().data.iter().map(|x| x * c).collect();
        self.push(Op::Scale(c), vec![a.clone()], a.shape(), data)
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f32) -> Tensor {
        let data = a.borrow().data.iter().map(|x| x + c).collect();
        self.push(Op::AddScalar, vec![a.clone()], a.shape(), data)
    }

    /// Supported expansions: same shape (copy), scalar -> any,
    /// [n] -> [b, n], [c] -> [b, c, h, w], and per-sample [b, c] -> [b, c, h, w].
    pub fn broadcast_to(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let from = a.shape();
        let data = {
            let inner = a.borrow();
            let x = &inner.data;
            if from == shape {
                x.clone()
            } else if from.is_empty() {
                vec![x[0]; numel(shape)]
            } else if from.len() == 1 && shape.len() == 2 && from[0] == shape[1] {
                let mut out = Vec::with_capacity(numel(shape));
                for _ in 0..shape[0] {
                    out.extend_from_slice(x);
                }
                out
            } else if from.len() == 1 && shape.len() == 4 && from[0] == shape[1] {
                let plane = shape[2] * shape[3];
                let mut out = Vec::with_capacity(numel(shape));
                for _ in 0..shape[0] {
                    for c in 0..shape[1] {
                        out.extend(std::iter::repeat(x[c]).take(plane));
                    }
                }
                out
            } else if from.len() == 2
                && shape.len() == 4
                && from[0] == shape[0]
                && from[1] == shape[1]
            {
                let plane = shape[2] * shape[3];
                let mut out = Vec::with_capacity(numel(shape));
                for &v in x.iter() {
                    out.extend(std::iter::repeat(v).take(plane));
                }
                out
            } else {
                return Err(Error::Shape { op: "broadcast", lhs: from, rhs: shape.to_vec() });
            }
        };
        Ok(self.push(Op::Broadcast { from }, vec![a.clone()], shape.to_vec(), data))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * n];
        {
            let (xa, xb) = (a.borrow(), b.borrow());
            kernels::mm_nn(&xa.data, &xb.data, m, k, n, &mut out);
        }
        Ok(self.push(Op::Matmul { m, k, n }, vec![a.clone(), b.clone()], vec![m, n], out))
    }

    /// x: [b, in_ch, h, w], weight: [out_ch, in_ch, k, k] -> [b, out_ch, oh, ow].
    pub fn conv2d(&mut self, x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (sx, sw) = (x.shape(), weight.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] {
            return Err(Error::Shape { op: "conv2d", lhs: sx, rhs: sw });
        }
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[2] {
            return Err(Error::Shape { op: "conv2d", lhs: sx, rhs: sw });
        }
        let geom = ConvGeom::forward(sx[1], sw[0], sx[2], sx[3], sw[2], stride, pad);
        let batch = sx[0];
        let (patch, pos) = (geom.patch(), geom.positions());
        let mut out = vec![0.0f32; batch * geom.out_ch * pos];
        {
            let (xx, ww) = (x.borrow(), weight.borrow());
            let mut cols = vec![0.0f32; pos * patch];
            let mut tmp = vec![0.0f32; geom.out_ch * pos];
            for s in 0..batch {
                let sample = &xx.data[s * geom.in_ch * geom.h * geom.w..(s + 1) * geom.in_ch * geom.h * geom.w];
                kernels::im2col(sample, &geom, &mut cols);
                kernels::mm_nt(&ww.data, &cols, geom.out_ch, patch, pos, &mut tmp);
                out[s * geom.out_ch * pos..(s + 1) * geom.out_ch * pos].copy_from_slice(&tmp);
            }
        }
        let shape = vec![batch, geom.out_ch, geom.oh, geom.ow];
        Ok(self.push(Op::Conv2d { geom }, vec![x.clone(), weight.clone()], shape, out))
    }

    /// x: [b, in_ch, h, w], weight: [in_ch, out_ch, k, k] -> [b, out_ch, oh, ow]
    /// with oh = (h-1)*stride + k + out_pad - 2*pad.
    pub fn conv2d_transpose(
        &mut self,
        x: &Tensor,
        weight: &Tensor,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Tensor> {
        let (sx, sw) = (x.shape(), weight.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] || sw[2] != sw[3] {
            return Err(Error::Shape { op: "conv2d_transpose", lhs: sx, rhs: sw });
        }
        let k = sw[2];
        let out_h = kernels::conv_transpose_out(sx[2], k, stride, pad, out_pad);
        let out_w = kernels::conv_transpose_out(sx[3], k, stride, pad, out_pad);
        // The adjoint pairing treats x as the *output* grid of a forward conv
        // over the result, so geom is built on the result extents.
        let geom = ConvGeom { in_ch: sw[1], out_ch: sx[1], h: out_h, w: out_w, kernel: k, stride, pad, oh: sx[2], ow: sx[3] };
        let batch = sx[0];
        let mut out = vec![0.0f32; batch * sw[1] * out_h * out_w];
        {
            let (xx, ww) = (x.borrow(), weight.borrow());
            scatter_conv_transpose(&xx.data, &ww.data, &geom, batch, &mut out);
        }
        let shape = vec![batch, sw[1], out_h, out_w];
        Ok(self.push(
            Op::ConvTranspose2d { geom, out_h, out_w },
            vec![x.clone(), weight.clone()],
            shape,
            out,
        ))
    }

    // ── activations and pointwise functions ─────────────────────────────

    pub fn relu(&mut self, a: &Tensor) -> Tensor {
        let data = a.borrow().data.iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu, vec![a.clone()], a.shape(), data)
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: f32) -> Tensor {
        let data = a.borrow().data.iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        self.push(Op::LeakyRelu(slope), vec![a.clone()], a.shape(), data)
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        let y: Vec<f32> = a
            .borrow()
            .data
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push(Op::Sigmoid { y: y.clone() }, vec![a.clone()], a.shape(), y)
    }

    pub fn tanh(&mut self, a: &Tensor) -> Tensor {
        let y: Vec<f32> = a.borrow().data.iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh { y: y.clone() }, vec![a.clone()], a.shape(), y)
    }

    pub fn exp(&mut self, a: &Tensor) -> Tensor {
        let y: Vec<f32> = a.borrow().data.iter().map(|&x| x.exp()).collect();
        self.push(Op::Exp { y: y.clone() }, vec![a.clone()], a.shape(), y)
    }

    /// Natural log of `max(x, 1e-7)`; the guard keeps saturated probabilities finite.
    pub fn log(&mut self, a: &Tensor) -> Tensor {
        let data = a.borrow().data.iter().map(|&x| x.max(LOG_EPS).ln()).collect();
        self.push(Op::Log, vec![a.clone()], a.shape(), data)
    }

    pub fn square(&mut self, a: &Tensor) -> Tensor {
        let data = a.borrow().data.iter().map(|&x| x * x).collect();
        self.push(Op::Square, vec![a.clone()], a.shape(), data)
    }

    pub fn clamp(&mut self, a: &Tensor, lo: f32, hi: f32) -> Tensor {
        let data = a.borrow().data.iter().map(|&x| x.clamp(lo, hi)).collect();
        self.push(Op::Clamp { lo, hi }, vec![a.clone()], a.shape(), data)
    }

    // ── reductions ──────────────────────────────────────────────────────

    /// Sum of all elements -> scalar (f64 accumulation).
    pub fn sum_all(&mut self, a: &Tensor) -> Tensor {
        let s = a.borrow().data.iter().map(|&x| x as f64).sum::<f64>() as f32;
        self.push(Op::SumAll, vec![a.clone()], vec![], vec![s])
    }

    /// Mean of all elements -> scalar (f64 accumulation).
    pub fn mean_all(&mut self, a: &Tensor) -> Tensor {
        let inner = a.borrow();
        let n = inner.data.len().max(1);
        let s = (inner.data.iter().map(|&x| x as f64).sum::<f64>() / n as f64) as f32;
        drop(inner);
        self.push(Op::MeanAll, vec![a.clone()], vec![], vec![s])
    }

    // ── structure ───────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::Shape { op: "concat", lhs: first, rhs: s });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let b = p.borrow();
                let len = b.shape[axis] * inner;
                data.extend_from_slice(&b.data[o * len..(o + 1) * len]);
            }
        }
        let sizes = parts.iter().map(|p| p.shape()[axis]).collect();
        let handles = parts.iter().map(|&p| p.clone()).collect();
        Ok(self.push(Op::Concat { axis, parts: sizes }, handles, shape, data))
    }

    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != a.numel() {
            return Err(Error::Shape { op: "reshape", lhs: a.shape(), rhs: shape.to_vec() });
        }
        let data = a.borrow().data.clone();
        Ok(self.push(Op::Reshape, vec![a.clone()], shape.to_vec(), data))
    }

    /// Mean negative log-softmax of the target class. logits: [b, classes].
    pub fn cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let shape = logits.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("logits {shape:?} vs {} labels", labels.len()),
            ));
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} out of range {k}")));
        }
        let mut probs = vec![0.0f32; b * k];
        let mut loss = 0.0f64;
        {
            let x = logits.borrow();
            for i in 0..b {
                let row = &x.data[i * k..(i + 1) * k];
                let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0f64;
                for j in 0..k {
                    let e = ((row[j] - m) as f64).exp();
                    probs[i * k + j] = e as f32;
                    z += e;
                }
                for j in 0..k {
                    probs[i * k + j] = (probs[i * k + j] as f64 / z) as f32;
                }
                loss -= (probs[i * k + labels[i]] as f64).max(LOG_EPS as f64).ln();
            }
        }
        let mean = (loss / b as f64) as f32;
        Ok(self.push(
            Op::CrossEntropy { probs, labels: labels.to_vec() },
            vec![logits.clone()],
            vec![],
            vec![mean],
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Parameter grads accumulate
    /// additively across calls until zeroed.
    pub fn backward(&mut self, root: &Tensor) -> Result<()> {
        if !root.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", root.shape()),
            ));
        }
        let Some(root_id) = root.node_in(self.id) else {
            // Constant root: nothing reachable, grads untouched.
            return Ok(());
        };
        let mut adjoint: Vec<Option<Vec<f32>>> = Vec::with_capacity(self.nodes.len());
        adjoint.resize_with(self.nodes.len(), || None);
        adjoint[root_id] = Some(vec![1.0]);
        for idx in (0..=root_id).rev() {
            let Some(g) = adjoint[idx].take() else { continue };
            let deltas = self.vjp(idx, &g);
            for (input, delta) in self.nodes[idx].inputs.clone().iter().zip(deltas) {
                let Some(delta) = delta else { continue };
                if let Some(nid) = input.node_in(self.id) {
                    match &mut adjoint[nid] {
                        Some(acc) => {
                            for (a, d) in acc.iter_mut().zip(&delta) {
                                *a += d;
                            }
                        }
                        None => adjoint[nid] = Some(delta),
                    }
                } else if input.requires_grad() {
                    input.accumulate_grad(&delta);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products for node `idx` given output adjoint `g`.
    /// Returns one optional delta per input (None = no gradient, e.g. the
    /// label side of cross-entropy has no inputs to skip here but untracked
    /// inputs are filtered by the caller).
    fn vjp(&self, idx: usize, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            Op::Mul => {
                let (a, b) = (node.inputs[0].borrow(), node.inputs[1].borrow());
                let da = g.iter().zip(&b.data).map(|(v, y)| v * y).collect();
                let db = g.iter().zip(&a.data).map(|(v, x)| v * x).collect();
                vec![Some(da), Some(db)]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::AddScalar => vec![Some(g.to_vec())],
            Op::Broadcast { from } => {
                let to = &node.out_shape;
                let delta = if *from == *to {
                    g.to_vec()
                } else if from.is_empty() {
                    vec![g.iter().map(|&v| v as f64).sum::<f64>() as f32]
                } else if from.len() == 1 && to.len() == 2 {
                    let (b, n) = (to[0], to[1]);
                    let mut acc = vec![0.0f64; n];
                    for i in 0..b {
                        for j in 0..n {
                            acc[j] += g[i * n + j] as f64;
                        }
                    }
                    acc.iter().map(|&v| v as f32).collect()
                } else if from.len() == 1 {
                    let (b, c, plane) = (to[0], to[1], to[2] * to[3]);
                    let mut acc = vec![0.0f64; c];
                    for i in 0..b {
                        for ch in 0..c {
                            let base = (i * c + ch) * plane;
                            for p in 0..plane {
                                acc[ch] += g[base + p] as f64;
                            }
                        }
                    }
                    acc.iter().map(|&v| v as f32).collect()
                } else {
                    // [b, c] -> [b, c, h, w]: reduce each spatial plane.
                    let (b, c, plane) = (to[0], to[1], to[2] * to[3]);
                    let mut acc = vec![0.0f32; b * c];
                    for i in 0..b * c {
                        let mut s = 0.0f64;
                        for p in 0..plane {
                            s += g[i * plane + p] as f64;
                        }
                        acc[i] = s as f32;
                    }
                    acc
                };
                vec![Some(delta)]
            }
            Op::Matmul { m, k, n } => {
                let (a, b) = (node.inputs[0].borrow(), node.inputs[1].borrow());
                // dA[i,p] = sum_j g[i,j] * B[p,j]: rows of g against rows of B.
                let mut da = vec![0.0f32; m * k];
                kernels::mm_nt(g, &b.data, *m, *n, *k, &mut da);
                // dB = A^T * g
                let mut at = vec![0.0f32; m * k];
                kernels::transpose(&a.data, *m, *k, &mut at);
                let mut db = vec![0.0f32; k * n];
                kernels::mm_nn(&at, g, *k, *m, *n, &mut db);
                vec![Some(da), Some(db)]
            }
            Op::Conv2d { geom } => {
                let (x, w) = (node.inputs[0].borrow(), node.inputs[1].borrow());
                let batch = node.out_shape[0];
                let (patch, pos) = (geom.patch(), geom.positions());
                let sample_in = geom.in_ch * geom.h * geom.w;
                let mut dw = vec![0.0f32; w.data.len()];
                let mut dx = vec![0.0f32; x.data.len()];
                let mut cols = vec![0.0f32; pos * patch];
                let mut colsd = vec![0.0f32; pos * patch];
                let mut gt = vec![0.0f32; pos * geom.out_ch];
                for s in 0..batch {
                    let gs = &g[s * geom.out_ch * pos..(s + 1) * geom.out_ch * pos];
                    let xs = &x.data[s * sample_in..(s + 1) * sample_in];
                    kernels::im2col(xs, geom, &mut cols);
                    // dW += g_s [oc,pos] * cols [pos,patch]
                    let mut dws = vec![0.0f32; geom.out_ch * patch];
                    kernels::mm_nn(gs, &cols, geom.out_ch, pos, patch, &mut dws);
                    for (acc, v) in dw.iter_mut().zip(&dws) {
                        *acc += v;
                    }
                    // d cols = g_s^T [pos,oc] * W [oc,patch]; rows of W are contiguous
                    kernels::transpose(gs, geom.out_ch, pos, &mut gt);
                    kernels::mm_nn(&gt, &w.data, pos, geom.out_ch, patch, &mut colsd);
                    let dxs = &mut dx[s * sample_in..(s + 1) * sample_in];
                    kernels::col2im(&colsd, geom, dxs);
                }
                vec![Some(dx), Some(dw)]
            }
            Op::ConvTranspose2d { geom, out_h, out_w } => {
                let (x, w) = (node.inputs[0].borrow(), node.inputs[1].borrow());
                let batch = node.out_shape[0];
                let sample_out = geom.in_ch * out_h * out_w;
                let sample_in = geom.out_ch * geom.oh * geom.ow;
                let mut dx = vec![0.0f32; x.data.len()];
                let mut dw = vec![0.0f32; w.data.len()];
                grad_conv_transpose(&x.data, &w.data, g, geom, batch, sample_in, sample_out, &mut dx, &mut dw);
                vec![Some(dx), Some(dw)]
            }
            Op::Relu => {
                let x = node.inputs[0].borrow();
                vec![Some(g.iter().zip(&x.data).map(|(v, &xi)| if xi > 0.0 { *v } else { 0.0 }).collect())]
            }
            Op::LeakyRelu(slope) => {
                let x = node.inputs[0].borrow();
                vec![Some(
                    g.iter().zip(&x.data).map(|(v, &xi)| if xi > 0.0 { *v } else { slope * v }).collect(),
                )]
            }
            Op::Sigmoid { y } => {
                vec![Some(g.iter().zip(y).map(|(v, &yi)| v * yi * (1.0 - yi)).collect())]
            }
            Op::Tanh { y } => vec![Some(g.iter().zip(y).map(|(v, &yi)| v * (1.0 - yi * yi)).collect())],
            Op::Exp { y } => vec![Some(g.iter().zip(y).map(|(v, &yi)| v * yi).collect())],
            Op::Log => {
                let x = node.inputs[0].borrow();
                vec![Some(
                    g.iter()
                        .zip(&x.data)
                        .map(|(v, &xi)| if xi > LOG_EPS { v / xi } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Square => {
                let x = node.inputs[0].borrow();
                vec![Some(g.iter().zip(&x.data).map(|(v, &xi)| 2.0 * xi * v).collect())]
            }
            Op::Clamp { lo, hi } => {
                let x = node.inputs[0].borrow();
                vec![Some(
                    g.iter()
                        .zip(&x.data)
                        .map(|(v, &xi)| if xi >= *lo && xi <= *hi { *v } else { 0.0 })
                        .collect(),
                )]
            }
            Op::SumAll => {
                let n = node.inputs[0].numel();
                vec![Some(vec![g[0]; n])]
            }
            Op::MeanAll => {
                let n = node.inputs[0].numel();
                vec![Some(vec![g[0] / n as f32; n])]
            }
            Op::Concat { axis, parts } => {
                let shape = &node.out_shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total_axis = shape[*axis];
                let mut deltas: Vec<Vec<f32>> =
                    parts.iter().map(|&len| Vec::with_capacity(outer * len * inner)).collect();
                for o in 0..outer {
                    let mut off = 0;
                    for (pi, &len) in parts.iter().enumerate() {
                        let start = o * total_axis * inner + off * inner;
                        deltas[pi].extend_from_slice(&g[start..start + len * inner]);
                        off += len;
                    }
                }
                deltas.into_iter().map(Some).collect()
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::CrossEntropy { probs, labels } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f32;
                let mut d = vec![0.0f32; probs.len()];
                for i in 0..b {
                    for j in 0..k {
                        let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                        d[i * k + j] = (probs[i * k + j] - onehot) * scale;
                    }
                }
                vec![Some(d)]
            }
        }
    }
}

/// Forward scatter for transposed convolution.
/// geom is phrased on the *output* grid: (geom.h, geom.w) are the output
/// extents, (geom.oh, geom.ow) the input extents, geom.out_ch the input
/// channels and geom.in_ch the output channels.
fn scatter_conv_transpose(x: &[f32], w: &[f32], geom: &ConvGeom, batch: usize, out: &mut [f32]) {
    let (k, s, p) = (geom.kernel, geom.stride, geom.pad);
    let (ic, oc) = (geom.out_ch, geom.in_ch); // input/output channels of this op
    let (ih, iw) = (geom.oh, geom.ow);
    let (oh, ow) = (geom.h, geom.w);
    let in_plane = ih * iw;
    let out_plane = oh * ow;
    for b in 0..batch {
        let xs = &x[b * ic * in_plane..(b + 1) * ic * in_plane];
        let os = &mut out[b * oc * out_plane..(b + 1) * oc * out_plane];
        for ci in 0..ic {
            let plane = &xs[ci * in_plane..(ci + 1) * in_plane];
            let wk = &w[ci * oc * k * k..(ci + 1) * oc * k * k];
            for i in 0..ih {
                for j in 0..iw {
                    let v = plane[i * iw + j];
                    if v == 0.0 {
                        continue;
                    }
                    for co in 0..oc {
                        let wck = &wk[co * k * k..(co + 1) * k * k];
                        let op = &mut os[co * out_plane..(co + 1) * out_plane];
                        for ki in 0..k {
                            let oi = (i * s + ki) as isize - p as isize;
                            if oi < 0 || oi as usize >= oh {
                                continue;
                            }
                            for kj in 0..k {
                                let oj = (j * s + kj) as isize - p as isize;
                                if oj < 0 || oj as usize >= ow {
                                    continue;
                                }
                                op[oi as usize * ow + oj as usize] += v * wck[ki * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Backward for transposed convolution: gather for dx, accumulate for dw.
#[allow(clippy::too_many_arguments)]
fn grad_conv_transpose(
    x: &[f32],
    w: &[f32],
    g: &[f32],
    geom: &ConvGeom,
    batch: usize,
    sample_in: usize,
    sample_out: usize,
    dx: &mut [f32],
    dw: &mut [f32],
) {
    let (k, s, p) = (geom.kernel, geom.stride, geom.pad);
    let (ic, oc) = (geom.out_ch, geom.in_ch);
    let (ih, iw) = (geom.oh, geom.ow);
    let (oh, ow) = (geom.h, geom.w);
    let in_plane = ih * iw;
    let out_plane = oh * ow;
    for b in 0..batch {
        let xs = &x[b * sample_in..(b + 1) * sample_in];
        let gs = &g[b * sample_out..(b + 1) * sample_out];
        let dxs = &mut dx[b * sample_in..(b + 1) * sample_in];
        for ci in 0..ic {
            let wk_base = ci * oc * k * k;
            for i in 0..ih {
                for j in 0..iw {
                    let xv = xs[ci * in_plane + i * iw + j];
                    let mut acc = 0.0f32;
                    for co in 0..oc {
                        let gp = &gs[co * out_plane..(co + 1) * out_plane];
                        for ki in 0..k {
                            let oi = (i * s + ki) as isize - p as isize;
                            if oi < 0 || oi as usize >= oh {
                                continue;
                            }
                            for kj in 0..k {
                                let oj = (j * s + kj) as isize - p as isize;
                                if oj < 0 || oj as usize >= ow {
                                    continue;
                                }
                                let gv = gp[oi as usize * ow + oj as usize];
                                let widx = wk_base + co * k * k + ki * k + kj;
                                acc += gv * w[widx];
                                dw[widx] += gv * xv;
                            }
                        }
                    }
                    dxs[ci * in_plane + i * iw + j] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_elementwise() {
        let mut g = Graph::new();
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]);
        assert_eq!(g.add(&a, &b).unwrap().value(), vec![4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        let err = g.add(&a, &b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = g.matmul(&eye, &a).unwrap();
        assert_eq!(out.value(), a.value());
    }

    #[test]
    fn conv2d_scaling_kernel() {
        // 1x1 kernel of value 2 doubles a single-channel input.
        let mut g = Graph::new();
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect());
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let y = g.conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert_eq!(y.value(), x.value().iter().map(|v| v * 2.0).collect::<Vec<_>>());
    }

    #[test]
    fn backward_sum_square() {
        // d/dw sum(w^2) = 2w
        let mut g = Graph::new();
        let w = Tensor::param(&[2], vec![1.0, -2.0]);
        let sq = g.square(&w);
        let root = g.sum_all(&sq);
        g.backward(&root).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, -4.0]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = Tensor::param(&[1], vec![0.0]);
        let y = g.sigmoid(&x);
        let root = g.sum_all(&y);
        g.backward(&root).unwrap();
        let grad = x.grad().unwrap()[0];
        assert!((grad - 0.25).abs() < 1e-6, "sigmoid'(0) = {grad}");
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = g.square(&x);
        assert!(g.backward(&y).is_err());
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let w = Tensor::param(&[2], vec![1.0, -2.0]);
        for _ in 0..2 {
            let mut g = Graph::new();
            let sq = g.square(&w);
            let root = g.sum_all(&sq);
            g.backward(&root).unwrap();
        }
        assert_eq!(w.grad().unwrap(), vec![4.0, -8.0]);
        w.zero_grad();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
        assert_eq!(w.value(), vec![1.0, -2.0]);
    }

    #[test]
    fn shared_subexpression_gets_both_contributions() {
        // y = x*x via mul uses x twice: dy/dx = 2x.
        let mut g = Graph::new();
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let y = g.mul(&x, &x).unwrap();
        let root = g.sum_all(&y);
        g.backward(&root).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn detached_tensor_blocks_gradient() {
        let mut g = Graph::new();
        let w = Tensor::param(&[2], vec![1.0, 2.0]);
        let h = g.square(&w);
        let d = h.detach();
        let y = g.mul(&d, &d);
        // y has no tracked input: nothing recorded on the tape for it.
        let root = g.sum_all(&y.unwrap());
        g.backward(&root).unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn cross_graph_tensor_is_a_leaf() {
        let w = Tensor::param(&[1], vec![3.0]);
        let mut g1 = Graph::new();
        let y1 = g1.square(&w);
        let mut g2 = Graph::new();
        let y2 = g2.scale(&y1, 2.0);
        let root = g2.sum_all(&y2);
        g2.backward(&root).unwrap();
        // y1 was made by g1; g2 treats it as a constant, so w sees nothing.
        assert_eq!(w.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn concat_axis1_roundtrip_gradient() {
        let mut g = Graph::new();
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::param(&[2, 1], vec![5.0, 6.0]);
        let c = g.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.value(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let sq = g.square(&c);
        let root = g.sum_all(&sq);
        g.backward(&root).unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(b.grad().unwrap(), vec![10.0, 12.0]);
    }

    #[test]
    fn broadcast_row_gradient_sums_over_batch() {
        let mut g = Graph::new();
        let bias = Tensor::param(&[3], vec![0.1, 0.2, 0.3]);
        let big = g.broadcast_to(&bias, &[4, 3]).unwrap();
        let root = g.sum_all(&big);
        g.backward(&root).unwrap();
        assert_eq!(bias.grad().unwrap(), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_transpose_mirrors_conv_shapes() {
        let mut g = Graph::new();
        let x = Tensor::from_vec(&[1, 2, 3, 3], vec![0.5; 18]);
        let w = Tensor::from_vec(&[2, 1, 4, 4], vec![0.1; 32]);
        let y = g.conv2d_transpose(&x, &w, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 7, 7]);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let w = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = g.square(&w);
        assert_eq!(g.len(), 0);
        let root = g.sum_all(&y);
        g.backward(&root).unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
    }
}
