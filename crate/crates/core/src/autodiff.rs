//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Tape`] holding the output value and
//! the information its backward rule needs. Nodes are only ever appended, so
//! the tape is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! ```
//! use gameon_core::autodiff::Tape;
//! use gameon_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate defects for exercising the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the ELU derivative by 1.5.
    EluBackward,
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    AddRowBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Elu { x: Var, alpha: T },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Mask { x: Var, mask: Vec<T> },
    Reshape { x: Var },
    Slice { x: Var, start: usize },
    Gather { x: Var, index: Arc<[usize]> },
    SegmentSoftmax { x: Var, segment: Arc<[usize]>, n_segments: usize },
    EdgeAggregate { weights: Var, x: Var, src: Arc<[usize]>, dst: Arc<[usize]> },
    SegmentMean { x: Var, segment: Arc<[usize]>, counts: Vec<usize> },
    ConcatCols { a: Var, b: Var },
    SoftmaxRows { x: Var },
    Nll { probs: Var, labels: Vec<usize>, floor: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// A tape is used by one thread at a time; independent tapes can run in
/// parallel against shared read-only parameters.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `var` does not require a gradient or does not reach the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// A tape whose backward pass contains a known defect.
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {} at tape position {}",
                op_name(&op),
                self.nodes.len()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = av.matmul(bv)?;
        self.push(out, Op::MatMul { a, b }, &[a, b])
    }

    /// Adds a length-`d` vector to every row of an `n×d` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || xv.cols() != bv.cols() {
            return Err(shape_err("add_row_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let d = bv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % d];
        }
        self.push(out, Op::AddRowBias { x, bias }, &[x, bias])
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    pub fn elu(&mut self, x: Var, alpha: T) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { alpha * v.exp_m1() });
        self.push(out, Op::Elu { x, alpha }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::Contract(format!("leaky_relu slope {slope} outside (0,1)")));
        }
        let out = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x }, &[x])
    }

    /// Inverted dropout. Returns `x` itself, with no new node, when
    /// `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0,1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Mask { x, mask }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape { x }, &[x])
    }

    /// Contiguous sub-range of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || start + len > xv.len() {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) of shape {:?}",
                start + len,
                xv.shape()
            )));
        }
        let out = Tensor::vector(xv.data()[start..start + len].to_vec())?;
        self.push(out, Op::Slice { x, start }, &[x])
    }

    /// Selects rows of a matrix (or elements of a vector) by index.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = if xv.rank() == 1 { (xv.len(), 1) } else { (xv.rows(), xv.cols()) };
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!("gather index {bad} out of range {n}")));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let shape = if xv.rank() == 1 { vec![index.len()] } else { vec![index.len(), c] };
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Gather { x, index }, &[x])
    }

    /// Softmax of a score vector within groups sharing a segment id.
    pub fn segment_softmax(
        &mut self,
        x: Var,
        segment: Arc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.len() != segment.len() {
            return Err(Error::Dimension(format!(
                "segment_softmax scores {:?} vs {} segment ids",
                xv.shape(),
                segment.len()
            )));
        }
        let out = segment_softmax_values(xv.data(), &segment, n_segments)?;
        let out = Tensor::vector(out)?;
        self.push(out, Op::SegmentSoftmax { x, segment, n_segments }, &[x])
    }

    /// `out[dst[e]] += weights[e] * x[src[e]]` over all edges, into
    /// `n_out` output rows.
    pub fn edge_aggregate(
        &mut self,
        weights: Var,
        x: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        n_out: usize,
    ) -> Result<Var> {
        let (wv, xv) = (self.value(weights), self.value(x));
        if wv.rank() != 1 || wv.len() != src.len() || src.len() != dst.len() || xv.rank() != 2 {
            return Err(Error::Dimension(format!(
                "edge_aggregate weights {:?}, features {:?}, {} src, {} dst",
                wv.shape(),
                xv.shape(),
                src.len(),
                dst.len()
            )));
        }
        if src.iter().any(|&s| s >= xv.rows()) || dst.iter().any(|&d| d >= n_out) {
            return Err(Error::Structure("edge endpoint out of range".into()));
        }
        let d = xv.cols();
        let mut out = vec![T::zero(); n_out * d];
        for ((&s, &t), &w) in src.iter().zip(dst.iter()).zip(wv.data()) {
            let (from, to) = (&xv.data()[s * d..(s + 1) * d], &mut out[t * d..(t + 1) * d]);
            for (o, &v) in to.iter_mut().zip(from) {
                *o += w * v;
            }
        }
        let out = Tensor::matrix(n_out, d, out)?;
        self.push(out, Op::EdgeAggregate { weights, x, src, dst }, &[weights, x])
    }

    /// Row means grouped by segment id, summed in ascending row order.
    pub fn segment_mean(&mut self, x: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.rows() != segment.len() {
            return Err(Error::Dimension(format!(
                "segment_mean over {:?} with {} segment ids",
                xv.shape(),
                segment.len()
            )));
        }
        let mut counts = vec![0usize; n_segments];
        for &s in segment.iter() {
            if s >= n_segments {
                return Err(Error::Structure(format!("segment id {s} >= {n_segments}")));
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Structure(format!("graph {empty} has no nodes to pool")));
        }
        let d = xv.cols();
        let mut out = vec![T::zero(); n_segments * d];
        for (i, &s) in segment.iter().enumerate() {
            for (o, &v) in out[s * d..(s + 1) * d].iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            let inv = T::one() / T::from_usize(c).expect("count");
            out[s * d..(s + 1) * d].iter_mut().for_each(|o| *o *= inv);
        }
        let out = Tensor::matrix(n_segments, d, out)?;
        self.push(out, Op::SegmentMean { x, segment, counts }, &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::matrix(av.rows(), av.cols() + bv.cols(), data)?;
        self.push(out, Op::ConcatCols { a, b }, &[a, b])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let c = xv.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows { x }, &[x])
    }

    /// Mean negative log-likelihood of the labelled class, with
    /// probabilities clamped to `[floor, 1 - floor]` before the logarithm.
    pub fn nll(&mut self, probs: Var, labels: &[usize], floor: T) -> Result<Var> {
        let pv = self.value(probs);
        if pv.rank() != 2 || pv.rows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} labels",
                pv.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= pv.cols()) {
            return Err(Error::Contract(format!("label {bad} outside {} classes", pv.cols())));
        }
        let n = T::from_usize(labels.len()).expect("batch size");
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -clamp(pv.row(i)[y], floor).ln())
            .sum();
        let out = Tensor::scalar(total / n);
        self.push(
            out,
            Op::Nll {
                probs,
                labels: labels.to_vec(),
                floor,
            },
            &[probs],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    // dA = dC * B^T
                    let ga = slot(grads, *a, av.len());
                    T::gemm(m, n, k, T::one(), g, (n as isize, 1), bv.data(), (1, n as isize), T::one(), ga);
                }
                if wants(*b) {
                    // dB = A^T * dC
                    let gb = slot(grads, *b, bv.len());
                    T::gemm(k, m, n, T::one(), av.data(), (1, k as isize), g, (n as isize, 1), T::one(), gb);
                }
            }
            Op::AddRowBias { x, bias } => {
                if wants(*x) {
                    accumulate(slot(grads, *x, g.len()), g);
                }
                if wants(*bias) {
                    let d = val(*bias).len();
                    let gb = slot(grads, *bias, d);
                    for row in g.chunks(d) {
                        accumulate(gb, row);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if wants(*v) {
                        accumulate(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    for (o, &gi) in gx.iter_mut().zip(g) {
                        *o += gi * *factor;
                    }
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let n = val(*x).len();
                    slot(grads, *x, n).iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Elu { x, alpha } => {
                if wants(*x) {
                    let boost = match self.fault {
                        Some(Fault::EluBackward) => T::lit(1.5),
                        None => T::one(),
                    };
                    let xv = val(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        let d = if xi > T::zero() { T::one() } else { *alpha * xi.exp() };
                        *o += gi * d * boost;
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *o += if xi >= T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Relu { x } => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > T::zero() {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Mask { x, mask } => {
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::Reshape { x } => {
                if wants(*x) {
                    accumulate(slot(grads, *x, g.len()), g);
                }
            }
            Op::Slice { x, start } => {
                if wants(*x) {
                    let n = val(*x).len();
                    accumulate(&mut slot(grads, *x, n)[*start..*start + g.len()], g);
                }
            }
            Op::Gather { x, index } => {
                if wants(*x) {
                    let xv = val(*x);
                    let c = if xv.rank() == 1 { 1 } else { xv.cols() };
                    let gx = slot(grads, *x, xv.len());
                    for (e, &i) in index.iter().enumerate() {
                        accumulate(&mut gx[i * c..(i + 1) * c], &g[e * c..(e + 1) * c]);
                    }
                }
            }
            Op::SegmentSoftmax { x, segment, n_segments } => {
                if wants(*x) {
                    let y = node.value.data();
                    let mut dot = vec![T::zero(); *n_segments];
                    for ((&s, &yi), &gi) in segment.iter().zip(y).zip(g) {
                        dot[s] += yi * gi;
                    }
                    let gx = slot(grads, *x, g.len());
                    for (e, &s) in segment.iter().enumerate() {
                        gx[e] += y[e] * (g[e] - dot[s]);
                    }
                }
            }
            Op::EdgeAggregate { weights, x, src, dst } => {
                let xv = val(*x);
                let d = xv.cols();
                if wants(*weights) {
                    let gw = slot(grads, *weights, src.len());
                    for (e, (&s, &t)) in src.iter().zip(dst.iter()).enumerate() {
                        gw[e] += dot(&g[t * d..(t + 1) * d], xv.row(s));
                    }
                }
                if wants(*x) {
                    let wv = val(*weights).data();
                    let gx = slot(grads, *x, xv.len());
                    for ((&s, &t), &w) in src.iter().zip(dst.iter()).zip(wv) {
                        let (from, to) = (&g[t * d..(t + 1) * d], &mut gx[s * d..(s + 1) * d]);
                        for (o, &gi) in to.iter_mut().zip(from) {
                            *o += w * gi;
                        }
                    }
                }
            }
            Op::SegmentMean { x, segment, counts } => {
                if wants(*x) {
                    let d = node.value.cols();
                    let gx = slot(grads, *x, segment.len() * d);
                    for (i, &s) in segment.iter().enumerate() {
                        let inv = T::one() / T::from_usize(counts[s]).expect("count");
                        for (o, &gi) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[s * d..(s + 1) * d]) {
                            *o += gi * inv;
                        }
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let width = ca + cb;
                if wants(*a) {
                    let ga = slot(grads, *a, val(*a).len());
                    for (r, row) in g.chunks(width).enumerate() {
                        accumulate(&mut ga[r * ca..(r + 1) * ca], &row[..ca]);
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, val(*b).len());
                    for (r, row) in g.chunks(width).enumerate() {
                        accumulate(&mut gb[r * cb..(r + 1) * cb], &row[ca..]);
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                if wants(*x) {
                    let c = node.value.cols();
                    let y = node.value.data();
                    let gx = slot(grads, *x, g.len());
                    for ((yr, gr), or) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let d = dot(yr, gr);
                        for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - d);
                        }
                    }
                }
            }
            Op::Nll { probs, labels, floor } => {
                if wants(*probs) {
                    let pv = val(*probs);
                    let c = pv.cols();
                    let scale = g[0] / T::from_usize(labels.len()).expect("batch size");
                    let gp = slot(grads, *probs, pv.len());
                    for (i, &y) in labels.iter().enumerate() {
                        let p = pv.row(i)[y];
                        if p > *floor && p < T::one() - *floor {
                            gp[i * c + y] -= scale / p;
                        }
                    }
                }
            }
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::AddRowBias { .. } => "add_row_bias",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Sum { .. } => "sum",
        Op::Elu { .. } => "elu",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Relu { .. } => "relu",
        Op::Mask { .. } => "dropout",
        Op::Reshape { .. } => "reshape",
        Op::Slice { .. } => "slice",
        Op::Gather { .. } => "gather",
        Op::SegmentSoftmax { .. } => "segment_softmax",
        Op::EdgeAggregate { .. } => "edge_aggregate",
        Op::SegmentMean { .. } => "segment_mean",
        Op::ConcatCols { .. } => "concat_cols",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::Nll { .. } => "nll",
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Real>(into: &mut [T], from: &[T]) {
    for (o, &v) in into.iter_mut().zip(from) {
        *o += v;
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn clamp<T: Real>(p: T, floor: T) -> T {
    p.max(floor).min(T::one() - floor)
}

/// Numerically stable softmax over a slice.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Forward values of a segment softmax; shared with untaped callers.
pub fn segment_softmax_values<T: Real>(
    scores: &[T],
    segment: &[usize],
    n_segments: usize,
) -> Result<Vec<T>> {
    let mut max = vec![T::neg_infinity(); n_segments];
    for (&s, &x) in segment.iter().zip(scores) {
        if s >= n_segments {
            return Err(Error::Structure(format!("segment id {s} >= {n_segments}")));
        }
        max[s] = max[s].max(x);
    }
    if let Some(empty) = max.iter().position(|m| *m == T::neg_infinity()) {
        return Err(Error::Structure(format!(
            "node {empty} has no incoming edges and cannot be attended"
        )));
    }
    let mut out: Vec<T> = segment
        .iter()
        .zip(scores)
        .map(|(&s, &x)| (x - max[s]).exp())
        .collect();
    let mut total = vec![T::zero(); n_segments];
    for (&s, &e) in segment.iter().zip(&out) {
        total[s] += e;
    }
    for (o, &s) in out.iter_mut().zip(segment) {
        *o /= total[s];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec64(v: &[f64]) -> Tensor<f64> {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param(vec64(&[1.0, -2.0, 3.0]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(vec64(&[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(vec64(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(vec64(&[1.0, 2.0]));
        let c = tape.constant(vec64(&[3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elu_and_leaky_relu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec64(&[0.0, 2.0, -1.0]));
        let y = tape.elu(x, 1.0).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 2.0);
        assert!((v[2] - (-0.632121)).abs() < 1e-6);

        let x = tape.constant(vec64(&[3.0, -5.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0, 0.0]);
        assert!(tape.leaky_relu(x, 1.5).is_err());
    }

    #[test]
    fn segment_softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let seg: Arc<[usize]> = vec![0, 0, 0, 1, 2, 2].into();
        let x = tape.constant(vec64(&[0.7, 0.7, 0.7, -4.0, 0.0, 2f64.ln()]));
        let y = tape.segment_softmax(x, seg, 3).unwrap();
        let v = tape.value(y).data();
        for p in &v[..3] {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(v[3], 1.0);
        assert!((v[4] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[5] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec64(&[1.0, 2.0]));
        let err = tape.segment_softmax(x, vec![0, 2].into(), 3).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn dropout_identities_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::vector(vec![0.3, -1.7, 2.5]).unwrap());
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.4, false, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        // Each element is 0 or 1/(1-p); the sample mean of 1e5 draws has
        // standard deviation sqrt(p/(1-p)/n).
        let (n, p) = (100_000usize, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[n], 1.0).unwrap());
        let y = tape.dropout(x, p, true, &mut rng).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / n as f64;
        let sigma = (p / (1.0 - p) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn nll_of_uniform_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::matrix(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let l = tape.nll(p, &[0, 1], 1e-7).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
        assert!(tape.nll(p, &[0], 1e-7).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        if !cfg!(debug_assertions) {
            return;
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec64(&[f64::MAX, f64::MAX]));
        let err = tape.add(x, x).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
