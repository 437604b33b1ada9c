//! Fully-connected unimodal and multimodal graphs, and mini-batching.
//!
//! Edges are stored explicitly as parallel `src`/`dst` index arrays grouped
//! by destination node, so message passing code never needs to know the
//! topology is complete.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Width of text node features and of the shared input space.
pub const TEXT_DIM: usize = 768;
/// Width of raw visual node features before resizing.
pub const VISUAL_RAW_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
}

/// Adaptive average pooling of `input` down to `out_len` values.
///
/// Output `i` averages input indices
/// `[floor(i * n / out_len), ceil((i + 1) * n / out_len))`.
pub fn adaptive_mean_pool<T: Real>(input: &[T], out_len: usize) -> Result<Vec<T>> {
    let n = input.len();
    if out_len == 0 || n < out_len {
        return Err(Error::Dimension(format!(
            "cannot mean-pool {n} values down to {out_len}"
        )));
    }
    Ok((0..out_len)
        .map(|i| {
            let start = i * n / out_len;
            let end = ((i + 1) * n).div_ceil(out_len);
            let window = &input[start..end];
            window.iter().copied().sum::<T>() / T::from_usize(window.len()).expect("window")
        })
        .collect())
}

/// Resizes one raw visual feature from 2048 to 768 values.
pub fn resize_visual_feature<T: Real>(raw: &[T]) -> Result<Vec<T>> {
    if raw.len() != VISUAL_RAW_DIM {
        return Err(Error::Dimension(format!(
            "visual feature has {} values, expected {VISUAL_RAW_DIM}",
            raw.len()
        )));
    }
    adaptive_mean_pool(raw, TEXT_DIM)
}

/// Resizes every row of an `n×2048` matrix.
pub fn resize_visual_rows<T: Real>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(raw.rows() * TEXT_DIM);
    for r in 0..raw.rows() {
        data.extend(resize_visual_feature(raw.row(r))?);
    }
    Tensor::matrix(raw.rows(), TEXT_DIM, data)
}

/// Every ordered pair over `n` nodes, grouped by destination.
pub fn complete_edges(n: usize, self_loops: bool) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(n * n);
    let mut dst = Vec::with_capacity(n * n);
    for d in 0..n {
        for s in 0..n {
            if s != d || self_loops {
                src.push(s);
                dst.push(d);
            }
        }
    }
    (src, dst)
}

/// A graph whose nodes carry features and a modality tag.
///
/// Unimodal graphs have only one kind of node; a multimodal graph lists the
/// visual block first and then the text block. Row 0 of each block is that
/// modality's global node.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalGraph<T> {
    features: Tensor<T>,
    modality: Vec<Modality>,
    n_text: usize,
    n_visual: usize,
    self_loops: bool,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

impl<T: Real> MultimodalGraph<T> {
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn n_nodes(&self) -> usize {
        self.modality.len()
    }

    pub fn n_text(&self) -> usize {
        self.n_text
    }

    pub fn n_visual(&self) -> usize {
        self.n_visual
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    pub fn is_unimodal(&self, modality: Modality) -> bool {
        self.modality.iter().all(|&m| m == modality)
    }

    /// Edges whose endpoints have different modalities.
    pub fn cross_modal_edges(&self) -> usize {
        self.edges()
            .filter(|&(s, d)| self.modality[s] != self.modality[d])
            .count()
    }

    /// Reorders nodes so that new node `k` is old node `perm[k]`, relabelling
    /// every edge accordingly.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::Contract(format!("{perm:?} is not a permutation of 0..{n}")));
            }
            inverse[old] = new;
        }
        if perm.len() != n {
            return Err(Error::Contract(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(n * d);
        for &old in perm {
            data.extend_from_slice(self.features.row(old));
        }
        Ok(Self {
            features: Tensor::matrix(n, d, data)?,
            modality: perm.iter().map(|&old| self.modality[old]).collect(),
            n_text: self.n_text,
            n_visual: self.n_visual,
            self_loops: self.self_loops,
            src: self.src.iter().map(|&s| inverse[s]).collect(),
            dst: self.dst.iter().map(|&t| inverse[t]).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> MultimodalGraph<U> {
        MultimodalGraph {
            features: self.features.cast(),
            modality: self.modality.clone(),
            n_text: self.n_text,
            n_visual: self.n_visual,
            self_loops: self.self_loops,
            src: self.src.clone(),
            dst: self.dst.clone(),
        }
    }
}

/// Fully connected single-modality graph over the rows of `features`.
pub fn build_unimodal_graph<T: Real>(
    features: Tensor<T>,
    modality: Modality,
    self_loops: bool,
) -> Result<MultimodalGraph<T>> {
    if features.rank() != 2 {
        return Err(Error::Structure(format!(
            "a {modality:?} graph needs a node feature matrix, got shape {:?}",
            features.shape()
        )));
    }
    let n = features.rows();
    let (src, dst) = complete_edges(n, self_loops);
    let (n_text, n_visual) = match modality {
        Modality::Text => (n, 0),
        Modality::Visual => (0, n),
    };
    Ok(MultimodalGraph {
        features,
        modality: vec![modality; n],
        n_text,
        n_visual,
        self_loops,
        src: src.into(),
        dst: dst.into(),
    })
}

/// Unites a text graph and a visual graph, connecting every node to every
/// other node in both directions. Visual nodes come first.
pub fn build_multimodal_graph<T: Real>(
    text: &MultimodalGraph<T>,
    visual: &MultimodalGraph<T>,
) -> Result<MultimodalGraph<T>> {
    if !text.is_unimodal(Modality::Text) || !visual.is_unimodal(Modality::Visual) {
        return Err(Error::Contract(
            "multimodal graphs are built from one text graph and one visual graph".into(),
        ));
    }
    if text.feature_dim() != visual.feature_dim() {
        return Err(Error::Dimension(format!(
            "text features are {} wide but visual features are {}",
            text.feature_dim(),
            visual.feature_dim()
        )));
    }
    if text.self_loops != visual.self_loops {
        return Err(Error::Contract("unimodal graphs disagree on self-loops".into()));
    }
    let n = text.n_nodes() + visual.n_nodes();
    let d = text.feature_dim();
    let mut data = Vec::with_capacity(n * d);
    data.extend_from_slice(visual.features.data());
    data.extend_from_slice(text.features.data());
    let mut modality = visual.modality.clone();
    modality.extend_from_slice(&text.modality);
    let (src, dst) = complete_edges(n, text.self_loops);
    Ok(MultimodalGraph {
        features: Tensor::matrix(n, d, data)?,
        modality,
        n_text: text.n_nodes(),
        n_visual: visual.n_nodes(),
        self_loops: text.self_loops,
        src: src.into(),
        dst: dst.into(),
    })
}

/// Disjoint union of graphs with node ids shifted per graph.
#[derive(Debug, Clone)]
pub struct BatchedGraph<T> {
    features: Tensor<T>,
    modality: Vec<Modality>,
    graph_of: Arc<[usize]>,
    node_ranges: Vec<Range<usize>>,
    edge_ranges: Vec<Range<usize>>,
    counts: Vec<(usize, usize)>,
    self_loops: Vec<bool>,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

impl<T: Real> BatchedGraph<T> {
    pub fn new(graphs: &[&MultimodalGraph<T>]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Contract("cannot batch an empty list of graphs".into()))?;
        let d = first.feature_dim();
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
            return Err(Error::Dimension(format!(
                "batched graphs mix feature widths {d} and {}",
                g.feature_dim()
            )));
        }
        let n_total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let e_total: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let mut data = Vec::with_capacity(n_total * d);
        let mut modality = Vec::with_capacity(n_total);
        let mut graph_of = Vec::with_capacity(n_total);
        let mut src = Vec::with_capacity(e_total);
        let mut dst = Vec::with_capacity(e_total);
        let mut node_ranges = Vec::with_capacity(graphs.len());
        let mut edge_ranges = Vec::with_capacity(graphs.len());
        for (gid, g) in graphs.iter().enumerate() {
            let offset = modality.len();
            data.extend_from_slice(g.features.data());
            modality.extend_from_slice(&g.modality);
            graph_of.extend(std::iter::repeat_n(gid, g.n_nodes()));
            node_ranges.push(offset..offset + g.n_nodes());
            edge_ranges.push(src.len()..src.len() + g.n_edges());
            src.extend(g.src.iter().map(|s| s + offset));
            dst.extend(g.dst.iter().map(|t| t + offset));
        }
        Ok(Self {
            features: Tensor::matrix(n_total, d, data)?,
            modality,
            graph_of: graph_of.into(),
            node_ranges,
            edge_ranges,
            counts: graphs.iter().map(|g| (g.n_text, g.n_visual)).collect(),
            self_loops: graphs.iter().map(|g| g.self_loops).collect(),
            src: src.into(),
            dst: dst.into(),
        })
    }

    pub fn single(graph: &MultimodalGraph<T>) -> Self {
        Self::new(&[graph]).expect("one graph always batches")
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn n_graphs(&self) -> usize {
        self.node_ranges.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.modality.len()
    }

    pub fn graph_of(&self) -> &Arc<[usize]> {
        &self.graph_of
    }

    pub fn node_range(&self, graph: usize) -> Range<usize> {
        self.node_ranges[graph].clone()
    }

    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }

    /// True when every node in the batch has the given modality.
    pub fn is_unimodal(&self, modality: Modality) -> bool {
        self.modality.iter().all(|&m| m == modality)
    }

    /// Recovers the graphs this batch was built from.
    pub fn unbatch(&self) -> Result<Vec<MultimodalGraph<T>>> {
        let d = self.features.cols();
        (0..self.n_graphs())
            .map(|g| {
                let nodes = self.node_ranges[g].clone();
                let edges = self.edge_ranges[g].clone();
                let rows = self.features.data()[nodes.start * d..nodes.end * d].to_vec();
                Ok(MultimodalGraph {
                    features: Tensor::matrix(nodes.len(), d, rows)?,
                    modality: self.modality[nodes.clone()].to_vec(),
                    n_text: self.counts[g].0,
                    n_visual: self.counts[g].1,
                    self_loops: self.self_loops[g],
                    src: self.src[edges.clone()].iter().map(|s| s - nodes.start).collect(),
                    dst: self.dst[edges].iter().map(|t| t - nodes.start).collect(),
                })
            })
            .collect()
    }
}
