//! Parameterized layers on top of the tensor tape: LSTM cell and sequence,
//! bidirectional wrapper, dense layer, Glorot initialization, and the
//! ordered parameter registry used for checkpointing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{param, Graph, NodeId, Param};

/// Sequence direction for [`lstm_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Output activation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Tanh,
    Softmax,
}

/// Glorot-uniform weight matrix [rows x cols]:
/// Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Param> {
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter {
            name: "glorot",
            reason: format!("non-positive dimensions {rows}x{cols}"),
        });
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Ok(param(vec![rows, cols], data))
}

/// Packed LSTM parameters. Gate weights are stacked in the fixed order
/// (input i, forget f, cell g, output o) along the first axis; that order is
/// part of the checkpoint contract.
#[derive(Debug, Clone)]
pub struct LstmParams {
    /// [4H x D_in] input weights.
    pub w: Param,
    /// [4H x H] recurrent weights.
    pub u: Param,
    /// [4H] biases; rows H..2H (forget gate) start at 1.0.
    pub b: Param,
    pub hidden: usize,
    pub input: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Parameter {
                name: "lstm_params",
                reason: format!("non-positive dimensions input={input} hidden={hidden}"),
            });
        }
        let w = glorot(4 * hidden, input, rng)?;
        let u = glorot(4 * hidden, hidden, rng)?;
        let mut bias = vec![0.0; 4 * hidden];
        for v in bias.iter_mut().take(2 * hidden).skip(hidden) {
            *v = 1.0; // forget gate
        }
        Ok(LstmParams {
            w,
            u,
            b: param(vec![4 * hidden], bias),
            hidden,
            input,
        })
    }

    pub fn to_nodes(&self, g: &mut Graph) -> LstmNodes {
        LstmNodes {
            w: g.param(&self.w),
            u: g.param(&self.u),
            b: g.param(&self.b),
            hidden: self.hidden,
            input: self.input,
        }
    }
}

/// Graph-resident view of [`LstmParams`] for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w: NodeId,
    pub u: NodeId,
    pub b: NodeId,
    pub hidden: usize,
    pub input: usize,
}

/// Dense layer parameters: y = activation(x W^T + b).
#[derive(Debug, Clone)]
pub struct DenseParams {
    /// [D_out x D_in]
    pub w: Param,
    /// [D_out]
    pub b: Param,
    pub activation: Activation,
    pub input: usize,
    pub output: usize,
}

impl DenseParams {
    pub fn new<R: Rng>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = glorot(output, input, rng)?;
        Ok(DenseParams {
            w,
            b: param(vec![output], vec![0.0; output]),
            activation,
            input,
            output,
        })
    }
}

/// One LSTM step. `x` is [1 x D_in], `h_prev`/`c_prev` are [1 x H].
pub fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmNodes,
) -> Result<(NodeId, NodeId)> {
    let zx = g.linear(x, p.w, Some(p.b))?;
    let zh = g.linear(h_prev, p.u, None)?;
    let z = g.add(zx, zh)?;
    lstm_gates(g, z, c_prev, p.hidden)
}

/// Apply the gate nonlinearities to a preactivation row [1 x 4H].
fn lstm_gates(g: &mut Graph, z: NodeId, c_prev: NodeId, h: usize) -> Result<(NodeId, NodeId)> {
    let zi = g.slice(z, 1, 0, h)?;
    let zf = g.slice(z, 1, h, h)?;
    let zg = g.slice(z, 1, 2 * h, h)?;
    let zo = g.slice(z, 1, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let gt = g.tanh(zg);
    let o = g.sigmoid(zo);
    let fc = g.mul(f, c_prev)?;
    let ig = g.mul(i, gt)?;
    let c = g.add(fc, ig)?;
    let ct = g.tanh(c);
    let hn = g.mul(o, ct)?;
    Ok((hn, c))
}

/// Run an LSTM over a [T x D_in] sequence. Output is [T x H] in original
/// time order regardless of direction. Initial states default to zero.
///
/// `mask` marks real rows with 1.0 and pad rows with 0.0. A masked step is
/// skipped entirely: its output row is exactly zero and the carried state
/// resets to exactly zero, so pad rows cannot influence real rows in either
/// direction.
pub fn lstm_sequence(
    g: &mut Graph,
    xs: NodeId,
    p: &LstmNodes,
    direction: Direction,
    init: Option<(NodeId, NodeId)>,
    mask: Option<&[f64]>,
) -> Result<NodeId> {
    let shape = g.shape(xs).to_vec();
    if shape.len() != 2 || shape[1] != p.input {
        return Err(Error::Dimension {
            op: "lstm_sequence",
            lhs: shape,
            rhs: vec![p.input],
        });
    }
    let t_len = shape[0];
    if t_len == 0 {
        return Err(Error::DegenerateInput("lstm_sequence over empty sequence".into()));
    }
    if let Some(m) = mask {
        if m.len() != t_len {
            return Err(Error::Dimension {
                op: "lstm_sequence mask",
                lhs: vec![t_len],
                rhs: vec![m.len()],
            });
        }
    }
    // input projection for the whole sequence at once
    let zx_all = g.linear(xs, p.w, Some(p.b))?;
    let (mut h, mut c) = match init {
        Some(hc) => hc,
        None => {
            let h0 = g.constant(vec![1, p.hidden], vec![0.0; p.hidden]);
            let c0 = g.constant(vec![1, p.hidden], vec![0.0; p.hidden]);
            (h0, c0)
        }
    };
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..t_len).collect(),
        Direction::Backward => (0..t_len).rev().collect(),
    };
    let mut hs: Vec<Option<NodeId>> = vec![None; t_len];
    for &t in &order {
        if mask.is_some_and(|m| m[t] == 0.0) {
            let zero_h = g.constant(vec![1, p.hidden], vec![0.0; p.hidden]);
            let zero_c = g.constant(vec![1, p.hidden], vec![0.0; p.hidden]);
            h = zero_h;
            c = zero_c;
            hs[t] = Some(zero_h);
            continue;
        }
        let zx = g.slice(zx_all, 0, t, 1)?;
        let zh = g.linear(h, p.u, None)?;
        let z = g.add(zx, zh)?;
        let (hn, cn) = lstm_gates(g, z, c, p.hidden)?;
        h = hn;
        c = cn;
        hs[t] = Some(hn);
    }
    let rows: Vec<NodeId> = hs.into_iter().map(|n| n.unwrap()).collect();
    g.concat_n(&rows, 0)
}

/// Bidirectional LSTM: per-timestep concat of forward and backward hidden
/// states, [T x 2H].
pub fn bilstm(
    g: &mut Graph,
    xs: NodeId,
    fwd: &LstmNodes,
    bwd: &LstmNodes,
    mask: Option<&[f64]>,
) -> Result<NodeId> {
    if fwd.hidden != bwd.hidden {
        return Err(Error::Dimension {
            op: "bilstm hidden",
            lhs: vec![fwd.hidden],
            rhs: vec![bwd.hidden],
        });
    }
    let hf = lstm_sequence(g, xs, fwd, Direction::Forward, None, mask)?;
    let hb = lstm_sequence(g, xs, bwd, Direction::Backward, None, mask)?;
    g.concat(hf, hb, 1)
}

/// Dense layer applied rowwise: activation(x W^T + b).
pub fn dense(g: &mut Graph, x: NodeId, p: &DenseParams) -> Result<NodeId> {
    let w = g.param(&p.w);
    let b = g.param(&p.b);
    let y = g.linear(x, w, Some(b))?;
    Ok(match p.activation {
        Activation::None => y,
        Activation::Tanh => g.tanh(y),
        Activation::Softmax => g.softmax(y),
    })
}

/// Ordered name -> parameter map; insertion order defines checkpoint
/// serialization order.
#[derive(Debug, Default, Clone)]
pub struct ParamRegistry {
    entries: Vec<(String, Param)>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        ParamRegistry::default()
    }

    pub fn register(&mut self, name: impl Into<String>, p: &Param) {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, std::rc::Rc::clone(p)));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn params(&self) -> Vec<Param> {
        self.entries.iter().map(|(_, p)| std::rc::Rc::clone(p)).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.borrow().numel()).sum()
    }

    /// Hex digest over names, shapes, and exact parameter bytes, in
    /// registration order. Any bit flip in any value changes the digest.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, p) in &self.entries {
            hasher.update(name.as_bytes());
            let t = p.borrow();
            for d in &t.shape {
                hasher.update(d.to_le_bytes());
            }
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }

    /// Deep copy of all parameter values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|(_, p)| p.borrow().data.clone()).collect()
    }

    /// Restore values captured by [`snapshot`](Self::snapshot).
    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for ((_, p), s) in self.entries.iter().zip(snapshot) {
            p.borrow_mut().data.copy_from_slice(s);
        }
    }
}
