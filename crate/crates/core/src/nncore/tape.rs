//! Reverse-mode tape over dense matrices.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! nodes in reverse and returns one gradient per node. Parameters enter the
//! tape once per name, so repeated uses accumulate into the same node.

use std::collections::HashMap;

use super::{NnError, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Concat(Vec<Var>),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    /// `winner[seg * cols + c]` is the source row that produced the max.
    SegmentMax {
        src: Var,
        winner: Vec<Option<usize>>,
    },
    SegmentSum {
        src: Var,
        segment: Vec<usize>,
    },
    SegmentSoftmax {
        src: Var,
        segment: Vec<usize>,
        segments: usize,
    },
    ScaleRows {
        src: Var,
        weights: Var,
    },
    SoftmaxRows(Var),
    Scale(Var, f64),
    Sum(Var),
    /// Scalar function of `input` whose local gradient was computed eagerly.
    Scalar {
        input: Var,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<(), NnError> {
        for (name, var) in &self.params {
            if let Some(g) = self.get(*var) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, what: &'static str) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(what));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Constant, "constant")
    }

    /// Leaf for a named parameter; later calls with the same name reuse it.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param, "parameter")?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Adds a bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(NnError::ShapeMismatch(format!(
                "bias of {} for {} columns",
                bv.len(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return Err(NnError::ShapeMismatch(format!(
                "add {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NnError> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| NnError::ShapeMismatch("empty concat".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NnError::ShapeMismatch("concat row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    /// Row `i` of the output is row `index[i]` of `src`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Result<Var, NnError> {
        let sv = self.value(src);
        let cols = sv.cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= sv.rows()) {
            return Err(NnError::ShapeMismatch(format!(
                "gather row {bad} of {}",
                sv.rows()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(sv.row(i));
        }
        let out = Tensor::matrix(index.len(), cols, data)?;
        self.push(
            out,
            Op::Gather {
                src,
                index: index.to_vec(),
            },
            "gather",
        )
    }

    /// Element-wise max over the rows assigned to each segment; segments with
    /// no rows produce zeros. Ties keep the lowest row index.
    pub fn segment_max(
        &mut self,
        src: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, NnError> {
        let sv = self.value(src);
        check_segments(sv, segment, segments)?;
        let cols = sv.cols();
        let mut out = vec![0.0; segments * cols];
        let mut winner: Vec<Option<usize>> = vec![None; segments * cols];
        for (row, &s) in segment.iter().enumerate() {
            let vals = sv.row(row);
            for c in 0..cols {
                let slot = s * cols + c;
                if winner[slot].is_none() || vals[c] > out[slot] {
                    out[slot] = vals[c];
                    winner[slot] = Some(row);
                }
            }
        }
        let out = Tensor::matrix(segments, cols, out)?;
        self.push(out, Op::SegmentMax { src, winner }, "segment_max")
    }

    pub fn segment_sum(
        &mut self,
        src: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, NnError> {
        let sv = self.value(src);
        check_segments(sv, segment, segments)?;
        let cols = sv.cols();
        let mut out = Tensor::zeros(vec![segments, cols]);
        for (row, &s) in segment.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(sv.row(row)) {
                *o += v;
            }
        }
        self.push(
            out,
            Op::SegmentSum {
                src,
                segment: segment.to_vec(),
            },
            "segment_sum",
        )
    }

    /// Softmax of a column of scores within each segment.
    pub fn segment_softmax(
        &mut self,
        src: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, NnError> {
        let sv = self.value(src);
        if sv.cols() != 1 {
            return Err(NnError::ShapeMismatch(
                "segment_softmax expects one column".into(),
            ));
        }
        check_segments(sv, segment, segments)?;
        let weights = segment_softmax_values(sv.data(), segment, segments);
        let out = Tensor::matrix(weights.len(), 1, weights)?;
        self.push(
            out,
            Op::SegmentSoftmax {
                src,
                segment: segment.to_vec(),
                segments,
            },
            "segment_softmax",
        )
    }

    /// Multiplies row `i` of `src` by the scalar `weights[i]` (an n×1 column).
    pub fn scale_rows(&mut self, src: Var, weights: Var) -> Result<Var, NnError> {
        let (sv, wv) = (self.value(src), self.value(weights));
        if wv.cols() != 1 || wv.rows() != sv.rows() {
            return Err(NnError::ShapeMismatch("scale_rows weight column".into()));
        }
        let mut out = sv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|x| *x *= w);
        }
        self.push(out, Op::ScaleRows { src, weights }, "scale_rows")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Records a scalar `value` whose gradient w.r.t. `input` is `grad`.
    pub fn scalar_fn(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var, NnError> {
        if !self.value(input).same_shape(&grad) {
            return Err(NnError::ShapeMismatch("scalar_fn gradient shape".into()));
        }
        if !grad.all_finite() {
            return Err(NnError::NonFinite("scalar_fn gradient"));
        }
        self.push(
            Tensor::scalar(value),
            Op::Scalar { input, grad },
            "scalar_fn",
        )
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let node = self.nodes.get(loss.0).ok_or(NnError::GraphNotRecorded)?;
        if node.value.len() != 1 {
            return Err(NnError::NotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(node.value.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(n, v)| (n.clone(), *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NnError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b))?;
                let gb = self.value(*a).t_matmul(g)?;
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.clone());
                let mut gb = Tensor::zeros(self.value(*b).shape().to_vec());
                for r in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                for (d, x) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Scale(a, s) => {
                let mut ga = g.clone();
                ga.data_mut().iter_mut().for_each(|x| *x *= s);
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Tensor::filled(self.value(*a).shape().to_vec(), g.data()[0]);
                self.acc(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut gp = Tensor::zeros(pv.shape().to_vec());
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.acc(grads, p, gp);
                }
            }
            Op::Gather { src, index } => {
                let mut gs = Tensor::zeros(self.value(*src).shape().to_vec());
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.acc(grads, *src, gs);
            }
            Op::SegmentMax { src, winner } => {
                let sv = self.value(*src);
                let cols = sv.cols();
                let mut gs = Tensor::zeros(sv.shape().to_vec());
                for (slot, w) in winner.iter().enumerate() {
                    if let Some(row) = w {
                        gs.data_mut()[row * cols + slot % cols] += g.data()[slot];
                    }
                }
                self.acc(grads, *src, gs);
            }
            Op::SegmentSum { src, segment } => {
                let mut gs = Tensor::zeros(self.value(*src).shape().to_vec());
                for (r, &s) in segment.iter().enumerate() {
                    gs.row_mut(r).copy_from_slice(g.row(s));
                }
                self.acc(grads, *src, gs);
            }
            Op::SegmentSoftmax {
                src,
                segment,
                segments,
            } => {
                let y = node.value.data();
                let mut dot = vec![0.0; *segments];
                for (r, &s) in segment.iter().enumerate() {
                    dot[s] += g.data()[r] * y[r];
                }
                let gs: Vec<f64> = segment
                    .iter()
                    .enumerate()
                    .map(|(r, &s)| y[r] * (g.data()[r] - dot[s]))
                    .collect();
                let gs = Tensor::new(self.value(*src).shape().to_vec(), gs)?;
                self.acc(grads, *src, gs);
            }
            Op::ScaleRows { src, weights } => {
                let (sv, wv) = (self.value(*src), self.value(*weights));
                let mut gs = g.clone();
                let mut gw = Tensor::zeros(wv.shape().to_vec());
                for r in 0..sv.rows() {
                    let w = wv.get(r, 0);
                    gw.data_mut()[r] = g.row(r).iter().zip(sv.row(r)).map(|(a, b)| a * b).sum();
                    gs.row_mut(r).iter_mut().for_each(|x| *x *= w);
                }
                self.acc(grads, *src, gs);
                self.acc(grads, *weights, gw);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.shape().to_vec());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Scalar { input, grad } => {
                let mut ga = grad.clone();
                let up = g.data()[0];
                ga.data_mut().iter_mut().for_each(|x| *x *= up);
                self.acc(grads, *input, ga);
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn check_segments(src: &Tensor, segment: &[usize], segments: usize) -> Result<(), NnError> {
    if segment.len() != src.rows() {
        return Err(NnError::ShapeMismatch(format!(
            "{} segment ids for {} rows",
            segment.len(),
            src.rows()
        )));
    }
    if let Some(&bad) = segment.iter().find(|&&s| s >= segments) {
        return Err(NnError::ShapeMismatch(format!(
            "segment id {bad} out of {segments}"
        )));
    }
    Ok(())
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Softmax of `scores` taken separately within each segment.
pub fn segment_softmax_values(scores: &[f64], segment: &[usize], segments: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; segments];
    for (&x, &s) in scores.iter().zip(segment) {
        max[s] = max[s].max(x);
    }
    let mut total = vec![0.0; segments];
    let mut out: Vec<f64> = scores
        .iter()
        .zip(segment)
        .map(|(&x, &s)| {
            let e = (x - max[s]).exp();
            total[s] += e;
            e
        })
        .collect();
    for (o, &s) in out.iter_mut().zip(segment) {
        *o /= total[s];
    }
    out
}
