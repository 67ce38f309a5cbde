//! Dense 64-bit tensors with a tape of recorded operations for
//! reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Leaves are
//! either constants or views of persistent [`Param`] storage; after
//! [`Graph::backward`] the leaf gradients are accumulated back into the
//! parameters, so shared parameters (an LSTM applied at every timestep)
//! collect contributions from all their uses. Callers zero gradients between
//! optimizer steps.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};

/// exp() argument clamp that keeps sigmoid/softmax finite on any finite input.
pub const EXP_CLAMP: f64 = 700.0;
/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Persistent tensor storage: parameter values plus accumulated gradient.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(grad) => {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Shared handle to persistent tensor storage.
pub type Param = Rc<RefCell<Tensor>>;

pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Param {
    Rc::new(RefCell::new(Tensor::new(shape, data)))
}

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<Param> },
    MatMul { a: NodeId, b: NodeId },
    // y = x * w^T + b, with x [r x d], w [o x d], b [o]
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Softmax { x: NodeId },
    CrossEntropy { probs: NodeId, target: NodeId, mask: Vec<f64> },
    Mse { x: NodeId, target: NodeId, mask: Vec<f64> },
    Dropout { x: NodeId, keep: Vec<f64> },
    Sum { x: NodeId },
    Scale { x: NodeId, c: f64 },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

/// Tape of recorded operations; append order is topological order and
/// backward traverses it in exact reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-EXP_CLAMP, EXP_CLAMP)).exp())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> NodeId {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: vec![0.0; n],
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(Op::Leaf { param: None }, shape, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(vec![1], vec![v])
    }

    /// Leaf backed by persistent parameter storage. After backward, this
    /// node's gradient is accumulated into the parameter.
    pub fn param(&mut self, p: &Param) -> NodeId {
        let (shape, data, rg) = {
            let t = p.borrow();
            (t.shape.clone(), t.data.clone(), t.requires_grad)
        };
        self.push(Op::Leaf { param: Some(Rc::clone(p)) }, shape, data, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mat_mul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul { a, b }, vec![m, n], out, rg))
    }

    /// y = x * w^T (+ b broadcast over rows). x is [r x d], w is [o x d].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::Dimension { op: "linear", lhs: sx, rhs: sw });
        }
        let (r, d, o) = (sx[0], sx[1], sw[0]);
        if let Some(bid) = b {
            let sb = self.shape(bid);
            if sb != [o] {
                return Err(Error::Dimension { op: "linear bias", lhs: sb.to_vec(), rhs: vec![o] });
            }
        }
        let mut out = vec![0.0; r * o];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            for i in 0..r {
                for j in 0..o {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += xv[i * d + t] * wv[j * d + t];
                    }
                    out[i * o + j] = acc;
                }
            }
        }
        if let Some(bid) = b {
            let bv = self.value(bid).to_vec();
            for i in 0..r {
                for j in 0..o {
                    out[i * o + j] += bv[j];
                }
            }
        }
        let rg = self.requires(x)
            || self.requires(w)
            || b.map(|bid| self.requires(bid)).unwrap_or(false);
        Ok(self.push(Op::Linear { x, w, b }, vec![r, o], out, rg))
    }

    fn broadcast_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        // Equal shapes, or one shape is a trailing suffix of the other
        // (leading-axis expansion, the bias-add pattern).
        if sa == sb || sa.ends_with(sb) {
            Ok(sa.to_vec())
        } else if sb.ends_with(sa) {
            Ok(sb.to_vec())
        } else {
            Err(Error::Dimension { op, lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shapes("add", a, b)?;
        let n = shape.iter().product();
        let (av, bv) = (self.value(a), self.value(b));
        let (la, lb) = (av.len(), bv.len());
        let out: Vec<f64> = (0..n).map(|i| av[i % la] + bv[i % lb]).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add { a, b }, shape, out, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shapes("mul", a, b)?;
        let n = shape.iter().product();
        let (av, bv) = (self.value(a), self.value(b));
        let (la, lb) = (av.len(), bv.len());
        let out: Vec<f64> = (0..n).map(|i| av[i % la] * bv[i % lb]).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul { a, b }, shape, out, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(Op::Sigmoid { x }, shape, out, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(Op::Tanh { x }, shape, out, rg)
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat_n(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension { op: "concat axis", lhs: first, rhs: vec![axis] });
        }
        let mut total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        // outer = product of axes before `axis`, inner = product after.
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; shape.iter().product()];
        let row_out = total * inner;
        let mut offset = 0usize;
        for &p in parts {
            let k = self.shape(p)[axis];
            let v = self.value(p);
            for i in 0..outer {
                let src = &v[i * k * inner..(i + 1) * k * inner];
                out[i * row_out + offset..i * row_out + offset + k * inner].copy_from_slice(src);
            }
            offset += k * inner;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, shape, out, rg))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        self.concat_n(&[a, b], axis)
    }

    /// Contiguous slice of length `len` along `axis`, starting at `start`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Dimension { op: "slice", lhs: s, rhs: vec![axis, start, len] });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.clone();
        shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let v = self.value(x);
        let row_in = s[axis] * inner;
        for i in 0..outer {
            let src = &v[i * row_in + start * inner..i * row_in + (start + len) * inner];
            out[i * len * inner..(i + 1) * len * inner].copy_from_slice(src);
        }
        let rg = self.requires(x);
        Ok(self.push(Op::Slice { x, axis, start }, shape, out, rg))
    }

    /// Softmax over the last axis, computed with max-subtraction.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        let cols = *s.last().expect("softmax on 0-d tensor");
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for (row_in, row_out) in v.chunks(cols).zip(out.chunks_mut(cols)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &xi) in row_out.iter_mut().zip(row_in) {
                *o = (xi - max).clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.requires(x);
        self.push(Op::Softmax { x }, s, out, rg)
    }

    /// Masked categorical cross-entropy: -(1/sum(mask)) * sum_t mask_t * ln p[t, target_t].
    pub fn cross_entropy(&mut self, probs: NodeId, target: NodeId, mask: &[f64]) -> Result<NodeId> {
        let sp = self.shape(probs).to_vec();
        let st = self.shape(target).to_vec();
        if sp != st || sp.len() != 2 {
            return Err(Error::Dimension { op: "cross_entropy", lhs: sp, rhs: st });
        }
        let (t, c) = (sp[0], sp[1]);
        if mask.len() != t {
            return Err(Error::Dimension { op: "cross_entropy mask", lhs: vec![mask.len()], rhs: vec![t] });
        }
        let msum: f64 = mask.iter().sum();
        if msum == 0.0 {
            return Err(Error::DegenerateInput("cross_entropy over all-pad mask".into()));
        }
        let pv = self.value(probs);
        let tv = self.value(target);
        let mut loss = 0.0;
        for ti in 0..t {
            if mask[ti] == 0.0 {
                continue;
            }
            for ci in 0..c {
                if tv[ti * c + ci] != 0.0 {
                    loss -= tv[ti * c + ci] * pv[ti * c + ci].max(LOG_FLOOR).ln();
                }
            }
        }
        loss /= msum;
        let rg = self.requires(probs) || self.requires(target);
        Ok(self.push(
            Op::CrossEntropy { probs, target, mask: mask.to_vec() },
            vec![1],
            vec![loss],
            rg,
        ))
    }

    /// Mean squared difference over masked rows and all columns.
    pub fn mse(&mut self, x: NodeId, target: NodeId, mask: &[f64]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let st = self.shape(target).to_vec();
        if sx != st || sx.len() != 2 {
            return Err(Error::Dimension { op: "mse", lhs: sx, rhs: st });
        }
        let (t, d) = (sx[0], sx[1]);
        if mask.len() != t {
            return Err(Error::Dimension { op: "mse mask", lhs: vec![mask.len()], rhs: vec![t] });
        }
        let msum: f64 = mask.iter().sum();
        if msum == 0.0 {
            return Err(Error::DegenerateInput("mse over all-pad mask".into()));
        }
        let xv = self.value(x);
        let tv = self.value(target);
        let mut acc = 0.0;
        for ti in 0..t {
            if mask[ti] == 0.0 {
                continue;
            }
            for di in 0..d {
                let diff = xv[ti * d + di] - tv[ti * d + di];
                acc += diff * diff;
            }
        }
        let loss = acc / (msum * d as f64);
        let rg = self.requires(x) || self.requires(target);
        Ok(self.push(Op::Mse { x, target, mask: mask.to_vec() }, vec![1], vec![loss], rg))
    }

    /// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
    /// Identity in eval mode or at p = 0 (no node is recorded).
    pub fn dropout<R: Rng>(
        &mut self,
        x: NodeId,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        if p >= 1.0 || p < 0.0 {
            return Err(Error::Parameter {
                name: "dropout_p",
                reason: format!("must be in [0, 1), got {p}"),
            });
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let out: Vec<f64> = self.value(x).iter().zip(&keep).map(|(v, k)| v * k).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        Ok(self.push(Op::Dropout { x, keep }, shape, out, rg))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).iter().sum();
        let rg = self.requires(x);
        self.push(Op::Sum { x }, vec![1], vec![total], rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(Op::Scale { x, c }, shape, out, rg)
    }

    /// Reverse-mode pass from a scalar loss. Gradients accumulate both on
    /// graph nodes and in the backing parameters.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension {
                op: "backward (loss must be scalar)",
                lhs: self.nodes[loss.0].shape.clone(),
                rhs: vec![1],
            });
        }
        // node grads are scratch per pass; only parameters accumulate
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.step_backward(i);
        }
        // flush leaf gradients into parameter storage
        for node in &self.nodes {
            if let Op::Leaf { param: Some(p) } = &node.op {
                if node.requires_grad {
                    p.borrow_mut().accumulate_grad(&node.grad);
                }
            }
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, g: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        for (a, b) in self.nodes[id.0].grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Reduce an out-shaped gradient to an operand broadcast with suffix tiling.
    fn reduce_grad(out_grad: &[f64], operand_len: usize) -> Vec<f64> {
        if out_grad.len() == operand_len {
            return out_grad.to_vec();
        }
        let mut g = vec![0.0; operand_len];
        for (i, v) in out_grad.iter().enumerate() {
            g[i % operand_len] += v;
        }
        g
    }

    fn step_backward(&mut self, i: usize) {
        let out_grad = self.nodes[i].grad.clone();
        // cheap structural copy of the op (NodeIds and saved context)
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = self.value(a).to_vec();
                let bv = self.value(b).to_vec();
                // dA = dC * B^T
                let mut da = vec![0.0; m * k];
                for im in 0..m {
                    for ik in 0..k {
                        let mut acc = 0.0;
                        for jn in 0..n {
                            acc += out_grad[im * n + jn] * bv[ik * n + jn];
                        }
                        da[im * k + ik] = acc;
                    }
                }
                // dB = A^T * dC
                let mut db = vec![0.0; k * n];
                for ik in 0..k {
                    for jn in 0..n {
                        let mut acc = 0.0;
                        for im in 0..m {
                            acc += av[im * k + ik] * out_grad[im * n + jn];
                        }
                        db[ik * n + jn] = acc;
                    }
                }
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let sx = self.shape(x).to_vec();
                let (r, d) = (sx[0], sx[1]);
                let o = self.shape(w)[0];
                let xv = self.value(x).to_vec();
                let wv = self.value(w).to_vec();
                // dX = dY * W
                let mut dx = vec![0.0; r * d];
                for ir in 0..r {
                    for id in 0..d {
                        let mut acc = 0.0;
                        for jo in 0..o {
                            acc += out_grad[ir * o + jo] * wv[jo * d + id];
                        }
                        dx[ir * d + id] = acc;
                    }
                }
                // dW = dY^T * X
                let mut dw = vec![0.0; o * d];
                for jo in 0..o {
                    for id in 0..d {
                        let mut acc = 0.0;
                        for ir in 0..r {
                            acc += out_grad[ir * o + jo] * xv[ir * d + id];
                        }
                        dw[jo * d + id] = acc;
                    }
                }
                self.add_grad(x, &dx);
                self.add_grad(w, &dw);
                if let Some(bid) = b {
                    let mut db = vec![0.0; o];
                    for ir in 0..r {
                        for jo in 0..o {
                            db[jo] += out_grad[ir * o + jo];
                        }
                    }
                    self.add_grad(bid, &db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let la = self.value(a).len();
                let lb = self.value(b).len();
                let da = Self::reduce_grad(&out_grad, la);
                let db = Self::reduce_grad(&out_grad, lb);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.value(a).to_vec();
                let bv = self.value(b).to_vec();
                let (la, lb) = (av.len(), bv.len());
                let n = out_grad.len();
                let da_full: Vec<f64> = (0..n).map(|i| out_grad[i] * bv[i % lb]).collect();
                let db_full: Vec<f64> = (0..n).map(|i| out_grad[i] * av[i % la]).collect();
                let da = Self::reduce_grad(&da_full, la);
                let db = Self::reduce_grad(&db_full, lb);
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let sv = self.nodes[i].value.clone();
                let dx: Vec<f64> = sv
                    .iter()
                    .zip(&out_grad)
                    .map(|(s, g)| g * s * (1.0 - s))
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Tanh { x } => {
                let x = *x;
                let tv = self.nodes[i].value.clone();
                let dx: Vec<f64> = tv
                    .iter()
                    .zip(&out_grad)
                    .map(|(t, g)| g * (1.0 - t * t))
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].shape.clone();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let row_out = out_shape[axis] * inner;
                let mut offset = 0usize;
                for p in parts {
                    let k = self.shape(p)[axis];
                    let mut dp = vec![0.0; outer * k * inner];
                    for io in 0..outer {
                        dp[io * k * inner..(io + 1) * k * inner].copy_from_slice(
                            &out_grad[io * row_out + offset..io * row_out + offset + k * inner],
                        );
                    }
                    self.add_grad(p, &dp);
                    offset += k * inner;
                }
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let in_shape = self.shape(x).to_vec();
                let out_shape = self.nodes[i].shape.clone();
                let len = out_shape[axis];
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let row_in = in_shape[axis] * inner;
                let mut dx = vec![0.0; in_shape.iter().product()];
                for io in 0..outer {
                    dx[io * row_in + start * inner..io * row_in + (start + len) * inner]
                        .copy_from_slice(&out_grad[io * len * inner..(io + 1) * len * inner]);
                }
                self.add_grad(x, &dx);
            }
            Op::Softmax { x } => {
                let x = *x;
                let cols = *self.nodes[i].shape.last().unwrap();
                let pv = self.nodes[i].value.clone();
                let mut dx = vec![0.0; pv.len()];
                for r in 0..pv.len() / cols {
                    let p = &pv[r * cols..(r + 1) * cols];
                    let g = &out_grad[r * cols..(r + 1) * cols];
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = p[c] * (g[c] - dot);
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::CrossEntropy { probs, target, mask } => {
                let (probs, target) = (*probs, *target);
                let mask = mask.clone();
                let msum: f64 = mask.iter().sum();
                let c = self.shape(probs)[1];
                let pv = self.value(probs).to_vec();
                let tv = self.value(target).to_vec();
                let g0 = out_grad[0];
                let mut dp = vec![0.0; pv.len()];
                for ti in 0..mask.len() {
                    if mask[ti] == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        let t = tv[ti * c + ci];
                        if t != 0.0 && pv[ti * c + ci] > LOG_FLOOR {
                            dp[ti * c + ci] = -g0 * t / (pv[ti * c + ci] * msum);
                        }
                    }
                }
                self.add_grad(probs, &dp);
            }
            Op::Mse { x, target, mask } => {
                let (x, target) = (*x, *target);
                let mask = mask.clone();
                let msum: f64 = mask.iter().sum();
                let d = self.shape(x)[1];
                let xv = self.value(x).to_vec();
                let tv = self.value(target).to_vec();
                let g0 = out_grad[0];
                let coef = 2.0 * g0 / (msum * d as f64);
                let mut dx = vec![0.0; xv.len()];
                for ti in 0..mask.len() {
                    if mask[ti] == 0.0 {
                        continue;
                    }
                    for di in 0..d {
                        dx[ti * d + di] = coef * (xv[ti * d + di] - tv[ti * d + di]);
                    }
                }
                let dt: Vec<f64> = dx.iter().map(|v| -v).collect();
                self.add_grad(x, &dx);
                self.add_grad(target, &dt);
            }
            Op::Dropout { x, keep } => {
                let x = *x;
                let keep = keep.clone();
                let dx: Vec<f64> = out_grad.iter().zip(&keep).map(|(g, k)| g * k).collect();
                self.add_grad(x, &dx);
            }
            Op::Sum { x } => {
                let x = *x;
                let g0 = out_grad[0];
                let dx = vec![g0; self.value(x).len()];
                self.add_grad(x, &dx);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<f64> = out_grad.iter().map(|g| g * c).collect();
                self.add_grad(x, &dx);
            }
        }
    }
}

fn mat_mul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[t * n + j];
            }
        }
    }
}
