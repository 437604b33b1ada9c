//! Building blocks of the forward pass, written against the tape.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Edge structure of a (possibly batched) graph.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl Topology {
    /// Incoming edge count per node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &d in self.dst.iter() {
            deg[d] += 1;
        }
        deg
    }

    fn require_incoming(&self) -> Result<()> {
        match self.in_degrees().iter().position(|&d| d == 0) {
            Some(node) => Err(Error::Structure(format!(
                "node {node} has no incoming edges"
            ))),
            None => Ok(()),
        }
    }
}

/// `ELU(x · W + b)` applied rowwise.
pub fn project_shared<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xv = tape.value(x);
    let wv = tape.value(w);
    if xv.cols() != wv.rows() {
        return Err(Error::Dimension(format!(
            "node features are {} wide but the shared projection expects {}",
            xv.cols(),
            wv.rows()
        )));
    }
    let h = tape.matmul(x, w)?;
    let h = tape.add_row_bias(h, b)?;
    tape.elu(h, T::one())
}

/// One attention head's parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionHead {
    pub w_feat: Var,
    pub b_feat: Option<Var>,
    /// `None` when attention scores reuse the message projection.
    pub w_att: Option<Var>,
    pub b_att: Option<Var>,
    /// Attention vector: destination half first, then source half.
    pub a: Var,
}

/// Result of one attention head: aggregated messages and per-edge weights.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub messages: Var,
    pub attention: Var,
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row_bias(h, b),
        None => Ok(h),
    }
}

/// Scores every edge, normalizes over each destination's incoming edges
/// and sums the weighted source messages. No output nonlinearity.
pub fn attention_head<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    head: &AttentionHead,
    topo: &Topology,
    leaky_slope: T,
) -> Result<HeadOutput> {
    topo.require_incoming()?;
    let messages = linear(tape, x, head.w_feat, head.b_feat)?;
    let keys = match head.w_att {
        Some(w) => linear(tape, x, w, head.b_att)?,
        None => match head.b_att {
            Some(b) => tape.add_row_bias(messages, b)?,
            None => messages,
        },
    };
    let d = tape.value(keys).cols();
    if tape.value(head.a).len() != 2 * d {
        return Err(Error::Dimension(format!(
            "attention vector has {} entries, expected {}",
            tape.value(head.a).len(),
            2 * d
        )));
    }
    let a_dst = tape.slice(head.a, 0, d)?;
    let a_dst = tape.reshape(a_dst, vec![d, 1])?;
    let a_src = tape.slice(head.a, d, d)?;
    let a_src = tape.reshape(a_src, vec![d, 1])?;
    let n = topo.n_nodes;
    let s_dst = tape.matmul(keys, a_dst)?;
    let s_dst = tape.reshape(s_dst, vec![n])?;
    let s_src = tape.matmul(keys, a_src)?;
    let s_src = tape.reshape(s_src, vec![n])?;
    let e_dst = tape.gather(s_dst, topo.dst.clone())?;
    let e_src = tape.gather(s_src, topo.src.clone())?;
    let scores = tape.add(e_dst, e_src)?;
    let scores = tape.leaky_relu(scores, leaky_slope)?;
    let attention = tape.segment_softmax(scores, topo.dst.clone(), n)?;
    if cfg!(debug_assertions) {
        let sums = incoming_sums(tape.value(attention).data(), &topo.dst, n);
        debug_assert!(
            sums.iter().all(|s| (s.to_f64().unwrap() - 1.0).abs() < 1e-5),
            "attention weights do not sum to one: {sums:?}"
        );
    }
    let messages = tape.edge_aggregate(attention, messages, topo.src.clone(), topo.dst.clone(), n)?;
    Ok(HeadOutput { messages, attention })
}

/// Sum of incoming edge weights per destination node.
pub fn incoming_sums<T: Real>(weights: &[T], dst: &[usize], n_nodes: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); n_nodes];
    for (&d, &w) in dst.iter().zip(weights) {
        sums[d] += w;
    }
    sums
}

/// Output of a graph attention layer.
#[derive(Debug, Clone)]
pub struct GatOutput {
    pub nodes: Var,
    /// Per-head edge weights.
    pub attention: Vec<Var>,
}

/// Graph attention layer: optional input dropout, one or more heads whose
/// messages are averaged, then ELU.
pub fn gat_layer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    heads: &[AttentionHead],
    topo: &Topology,
    leaky_slope: T,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<GatOutput> {
    let x = match rng {
        Some(rng) => tape.dropout(x, dropout, true, rng)?,
        None => x,
    };
    let mut merged: Option<Var> = None;
    let mut attention = Vec::with_capacity(heads.len());
    for head in heads {
        let out = attention_head(tape, x, head, topo, leaky_slope)?;
        attention.push(out.attention);
        merged = Some(match merged {
            Some(acc) => tape.add(acc, out.messages)?,
            None => out.messages,
        });
    }
    let mut merged = merged.ok_or_else(|| Error::Contract("attention layer needs a head".into()))?;
    if heads.len() > 1 {
        merged = tape.scale(merged, T::one() / T::from_usize(heads.len()).expect("heads"))?;
    }
    let nodes = tape.elu(merged, T::one())?;
    Ok(GatOutput { nodes, attention })
}

/// `1 / sqrt(deg(dst) * deg(src))` for every edge.
pub fn symmetric_norm<T: Real>(topo: &Topology) -> Result<Tensor<T>> {
    topo.require_incoming()?;
    let deg = topo.in_degrees();
    Tensor::vector(
        topo.src
            .iter()
            .zip(topo.dst.iter())
            .map(|(&s, &d)| T::one() / T::from_usize(deg[s] * deg[d]).expect("degree").sqrt())
            .collect(),
    )
}

/// Degree-normalized graph convolution followed by ELU.
pub fn gcn_layer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w_feat: Var,
    b_feat: Option<Var>,
    topo: &Topology,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let x = match rng {
        Some(rng) => tape.dropout(x, dropout, true, rng)?,
        None => x,
    };
    let coeff = tape.constant(symmetric_norm(topo)?);
    let messages = linear(tape, x, w_feat, b_feat)?;
    let agg = tape.edge_aggregate(coeff, messages, topo.src.clone(), topo.dst.clone(), topo.n_nodes)?;
    tape.elu(agg, T::one())
}

/// Per-graph mean of node rows.
pub fn mean_pool<T: Real>(
    tape: &mut Tape<T>,
    nodes: Var,
    graph_of: Arc<[usize]>,
    n_graphs: usize,
) -> Result<Var> {
    tape.segment_mean(nodes, graph_of, n_graphs)
}

/// Classifier weights.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Two-layer perceptron with ReLU and dropout after the hidden layer.
/// Returns logits.
pub fn classify<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    cls: &ClassifierVars,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let hidden = linear(tape, h, cls.w1, Some(cls.b1))?;
    let hidden = tape.relu(hidden)?;
    let hidden = match rng {
        Some(rng) => tape.dropout(hidden, dropout, true, rng)?,
        None => hidden,
    };
    linear(tape, hidden, cls.w2, Some(cls.b2))
}
