//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order and `backward` is a single
//! reverse sweep. Parameters are read straight out of a borrowed
//! [`ParamStore`] and their gradients come back in a [`Gradients`] value
//! that the caller folds into the store.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Concat(Var, Var),
    VStack(Vec<Var>),
    Gather(Var, Vec<usize>),
    SelectRows(Vec<bool>, Var, Var),
    SoftmaxRows(Var, Vec<usize>),
    CosineRows { a: Var, b: Var, norms: Vec<(f64, f64)> },
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    GroupScores { q: Var, k: Var, group: usize },
    GroupMix { w: Var, v: Var, group: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Reshape(..) => "reshape",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Concat(..) => "concat",
            Op::VStack(..) => "vstack",
            Op::Gather(..) => "gather",
            Op::SelectRows(..) => "select_rows",
            Op::SoftmaxRows(..) => "softmax",
            Op::CosineRows { .. } => "cosine_similarity",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumSquares(..) => "sum_squares",
            Op::GroupScores { .. } => "group_scores",
            Op::GroupMix { .. } => "group_mix",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to every leaf that required one.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Vec<f64>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.leaves.get(&var.0).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self
                .store
                .expect("param node without store")
                .get(*id)
                .data(),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    fn cols(&self, v: Var) -> usize {
        *self.nodes[v.0].shape.last().unwrap()
    }

    fn rows(&self, v: Var) -> usize {
        self.value(v).len() / self.cols(v)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Adds an input tensor as a leaf. It receives a gradient iff
    /// `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(tensor.into_data()),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    /// Leaf node reading a parameter from the bound store. Repeated calls for
    /// the same id return the same node, so gradients from every use land in
    /// one buffer.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let t = self.store.expect("graph has no parameter store").get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(op.name()));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::AddBias(a, b) | Op::Concat(a, b) | Op::SelectRows(_, a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::CosineRows { a, b, .. } => self.needs(*a) || self.needs(*b),
            Op::GroupScores { q, k, .. } => self.needs(*q) || self.needs(*k),
            Op::GroupMix { w, v, .. } => self.needs(*w) || self.needs(*v),
            Op::VStack(vs) => vs.iter().any(|v| self.needs(*v)),
            Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Gather(a, _)
            | Op::SoftmaxRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumSquares(a) => self.needs(*a),
        };
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(a).iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.zip_map(a, b, |x, y| x + y);
        self.push(self.shape(a).to_vec(), data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.zip_map(a, b, |x, y| x - y);
        self.push(self.shape(a).to_vec(), data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.zip_map(a, b, |x, y| x * y);
        self.push(self.shape(a).to_vec(), data, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.map(a, |x| x * c);
        self.push(self.shape(a).to_vec(), data, Op::Scale(a, c))
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        crate::autodiff::tensor::check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} to {:?}", self.shape(a), shape),
            ));
        }
        let data = self.value(a).to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.map(a, |x| x + c);
        self.push(self.shape(a).to_vec(), data, Op::AddScalar(a))
    }

    /// Elementwise product with a constant (non-differentiable) mask.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::shape(
                "mul_const",
                format!("mask of {} for {} values", mask.len(), self.value(a).len()),
            ));
        }
        let data = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::MulConst(a, mask))
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k, 1),
            self.value(b),
            (n, 1),
            &mut out,
        );
        self.push(vec![m, n], out, Op::MatMul(a, b))
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.cols(x);
        if self.shape(bias) != [n] {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias);
        let data = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        self.push(self.shape(x).to_vec(), data, Op::AddBias(x, bias))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(self.shape(a).to_vec(), data, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.map(a, sigmoid);
        self.push(self.shape(a).to_vec(), data, Op::Sigmoid(a))
    }

    /// `ln σ(x)` evaluated without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.map(a, log_sigmoid);
        self.push(self.shape(a).to_vec(), data, Op::LogSigmoid(a))
    }

    /// Concatenates along the last axis. Both operands must have the same
    /// shape.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("concat", a, b)?;
        let c = self.cols(a);
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(va.len() * 2);
        for (ra, rb) in va.chunks(c).zip(vb.chunks(c)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = 2 * c;
        self.push(shape, data, Op::Concat(a, b))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("vstack input"))?;
        let c = self.cols(first);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.cols(p) != c {
                return Err(Error::shape(
                    "vstack",
                    format!("{} columns vs {}", self.cols(p), c),
                ));
            }
            rows += self.rows(p);
            data.extend_from_slice(self.value(p));
        }
        self.push(vec![rows, c], data, Op::VStack(parts.to_vec()))
    }

    /// Selects rows of `table` by index (embedding lookup). Rank-1 tables are
    /// treated as a single row.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, c) = (self.rows(table), self.cols(table));
        let src = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= rows {
                return Err(Error::OutOfBounds {
                    what: "gather",
                    index: i,
                    len: rows,
                });
            }
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        if indices.is_empty() {
            return Err(Error::Empty("gather indices"));
        }
        self.push(
            vec![indices.len(), c],
            data,
            Op::Gather(table, indices.to_vec()),
        )
    }

    /// Row `i` comes from `a` where `mask[i]`, else from `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_shape("select_rows", a, b)?;
        if mask.len() != self.rows(a) {
            return Err(Error::shape(
                "select_rows",
                format!("{} mask entries for {} rows", mask.len(), self.rows(a)),
            ));
        }
        let c = self.cols(a);
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(va.len());
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { va } else { vb };
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(
            self.shape(a).to_vec(),
            data,
            Op::SelectRows(mask.to_vec(), a, b),
        )
    }

    /// Softmax of a rank-1 tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if self.shape(a).len() != 1 {
            return Err(Error::shape("softmax", format!("{:?}", self.shape(a))));
        }
        let data = softmax_prefix(self.value(a), n);
        self.push(vec![n], data, Op::SoftmaxRows(a, vec![n]))
    }

    /// Row-wise softmax over the first `lens[i]` entries of row `i`; the
    /// remaining entries are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, lens: &[usize]) -> Result<Var> {
        let c = self.cols(a);
        let rows = self.rows(a);
        if lens.len() != rows || lens.iter().any(|&l| l == 0 || l > c) {
            return Err(Error::shape(
                "softmax",
                format!("row lengths {:?} for {} x {}", lens, rows, c),
            ));
        }
        let mut data = Vec::with_capacity(rows * c);
        for (row, &l) in self.value(a).chunks(c).zip(lens) {
            data.extend(softmax_prefix(row, l));
        }
        self.push(
            self.shape(a).to_vec(),
            data,
            Op::SoftmaxRows(a, lens.to_vec()),
        )
    }

    /// Cosine similarity of two rank-1 tensors, as a scalar.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape(
                "cosine_similarity",
                format!("expected rank-1 operands, got {:?}", self.shape(a)),
            ));
        }
        self.cosine_rows(a, b)
    }

    /// Row-wise cosine similarity of two `[m, d]` matrices, giving `[m]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let c = self.cols(a);
        let mut data = Vec::new();
        let mut norms = Vec::new();
        for (ra, rb) in self.value(a).chunks(c).zip(self.value(b).chunks(c)) {
            let na = dot(ra, ra).sqrt();
            let nb = dot(rb, rb).sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm("cosine_similarity"));
            }
            data.push((dot(ra, rb) / (na * nb)).clamp(-1.0, 1.0));
            norms.push((na, nb));
        }
        let m = data.len();
        self.push(vec![m], data, Op::CosineRows { a, b, norms })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = dot(self.value(a), self.value(a));
        self.push(vec![1], vec![s], Op::SumSquares(a))
    }

    /// Within each block of `group` consecutive rows, all pairwise dot
    /// products: `out[b*g + i, j] = q[b*g + i] · k[b*g + j]`.
    pub fn group_scores(&mut self, q: Var, k: Var, group: usize) -> Result<Var> {
        self.same_shape("group_scores", q, k)?;
        let (rows, d) = (self.rows(q), self.cols(q));
        if group == 0 || rows % group != 0 {
            return Err(Error::shape(
                "group_scores",
                format!("{} rows not divisible into groups of {}", rows, group),
            ));
        }
        let (vq, vk) = (self.value(q), self.value(k));
        let mut out = vec![0.0; rows * group];
        for r in 0..rows {
            let base = r - r % group;
            let qr = &vq[r * d..(r + 1) * d];
            for j in 0..group {
                let kr = &vk[(base + j) * d..(base + j + 1) * d];
                out[r * group + j] = dot(qr, kr);
            }
        }
        self.push(vec![rows, group], out, Op::GroupScores { q, k, group })
    }

    /// Within each block of `group` rows, mixes value rows by weights:
    /// `out[b*g + i] = Σ_j w[b*g + i, j] · v[b*g + j]`.
    pub fn group_mix(&mut self, w: Var, v: Var, group: usize) -> Result<Var> {
        let (rows, d) = (self.rows(v), self.cols(v));
        if self.shape(w) != [rows, group] || group == 0 || rows % group != 0 {
            return Err(Error::shape(
                "group_mix",
                format!("weights {:?} for values {:?}", self.shape(w), self.shape(v)),
            ));
        }
        let (vw, vv) = (self.value(w), self.value(v));
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let base = r - r % group;
            let o = &mut out[r * d..(r + 1) * d];
            for j in 0..group {
                let wj = vw[r * group + j];
                if wj != 0.0 {
                    axpy(wj, &vv[(base + j) * d..(base + j + 1) * d], o);
                }
            }
        }
        self.push(vec![rows, d], out, Op::GroupMix { w, v, group })
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Reverse sweep from a scalar root. Consumes the graph.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let g = grads[i]
                .take()
                .unwrap_or_else(|| vec![0.0; self.value(Var(i)).len()]);
            match node.value {
                Value::Param(id) => out.params.push((id, g)),
                Value::Owned(_) => {
                    out.leaves.insert(i, g);
                }
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i];
        let out_val = match &out.value {
            Value::Owned(d) => d.as_slice(),
            Value::Param(_) => unreachable!("param nodes are leaves"),
        };
        match &out.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, g, d));
                self.acc(grads, *b, |d| axpy(1.0, g, d));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, g, d));
                self.acc(grads, *b, |d| axpy(-1.0, g, d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |d| axpy(*c, g, d)),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |d| axpy(1.0, g, d)),
            Op::MulConst(a, mask) => self.acc(grads, *a, |d| {
                for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                // dA = dC · Bᵀ
                self.acc(grads, *a, |d| {
                    gemm(m, n, k, g, (n, 1), self.value(*b), (1, n), d);
                });
                // dB = Aᵀ · dC
                self.acc(grads, *b, |d| {
                    gemm(k, m, n, self.value(*a), (1, k), g, (n, 1), d);
                });
            }
            Op::AddBias(x, bias) => {
                let n = self.cols(*x);
                self.acc(grads, *x, |d| axpy(1.0, g, d));
                self.acc(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, d);
                    }
                });
            }
            Op::Relu(a) => self.acc(grads, *a, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out_val) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for ((d, g), s) in d.iter_mut().zip(g).zip(out_val) {
                    *d += g * s * (1.0 - s);
                }
            }),
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        *d += g * sigmoid(-x);
                    }
                })
            }
            Op::Concat(a, b) => {
                let c = self.cols(*a);
                self.acc(grads, *a, |d| {
                    for (dr, gr) in d.chunks_mut(c).zip(g.chunks(2 * c)) {
                        axpy(1.0, &gr[..c], dr);
                    }
                });
                self.acc(grads, *b, |d| {
                    for (dr, gr) in d.chunks_mut(c).zip(g.chunks(2 * c)) {
                        axpy(1.0, &gr[c..], dr);
                    }
                });
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.acc(grads, *p, |d| axpy(1.0, &g[off..off + len], d));
                    off += len;
                }
            }
            Op::Gather(table, idx) => {
                let c = self.cols(*table);
                self.acc(grads, *table, |d| {
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(1.0, &g[r * c..(r + 1) * c], &mut d[src * c..(src + 1) * c]);
                    }
                });
            }
            Op::SelectRows(mask, a, b) => {
                let c = self.cols(*a);
                self.acc(grads, *a, |d| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            axpy(1.0, &g[r * c..(r + 1) * c], &mut d[r * c..(r + 1) * c]);
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for (r, &m) in mask.iter().enumerate() {
                        if !m {
                            axpy(1.0, &g[r * c..(r + 1) * c], &mut d[r * c..(r + 1) * c]);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a, lens) => {
                let c = self.cols(*a);
                self.acc(grads, *a, |d| {
                    for (r, &l) in lens.iter().enumerate() {
                        let y = &out_val[r * c..r * c + l];
                        let gy = &g[r * c..r * c + l];
                        let inner = dot(y, gy);
                        for j in 0..l {
                            d[r * c + j] += y[j] * (gy[j] - inner);
                        }
                    }
                });
            }
            Op::CosineRows { a, b, norms } => {
                let c = self.cols(*a);
                let (va, vb) = (self.value(*a), self.value(*b));
                // ∂cos/∂a = b/(|a||b|) − cos · a/|a|²
                self.acc(grads, *a, |d| {
                    for (r, &(na, nb)) in norms.iter().enumerate() {
                        let s = r * c..(r + 1) * c;
                        let cos = out_val[r];
                        let (ra, rb) = (&va[s.clone()], &vb[s.clone()]);
                        let dr = &mut d[s];
                        for j in 0..c {
                            dr[j] += g[r] * (rb[j] / (na * nb) - cos * ra[j] / (na * na));
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for (r, &(na, nb)) in norms.iter().enumerate() {
                        let s = r * c..(r + 1) * c;
                        let cos = out_val[r];
                        let (ra, rb) = (&va[s.clone()], &vb[s.clone()]);
                        let dr = &mut d[s];
                        for j in 0..c {
                            dr[j] += g[r] * (ra[j] / (na * nb) - cos * rb[j] / (nb * nb));
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::SumSquares(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |d| axpy(2.0 * g[0], x, d))
            }
            Op::GroupScores { q, k, group } => {
                let d_ = self.cols(*q);
                let rows = self.rows(*q);
                let (vq, vk) = (self.value(*q), self.value(*k));
                self.acc(grads, *q, |dq| {
                    for r in 0..rows {
                        let base = r - r % group;
                        for j in 0..*group {
                            let gj = g[r * group + j];
                            if gj != 0.0 {
                                axpy(
                                    gj,
                                    &vk[(base + j) * d_..(base + j + 1) * d_],
                                    &mut dq[r * d_..(r + 1) * d_],
                                );
                            }
                        }
                    }
                });
                self.acc(grads, *k, |dk| {
                    for r in 0..rows {
                        let base = r - r % group;
                        for j in 0..*group {
                            let gj = g[r * group + j];
                            if gj != 0.0 {
                                axpy(
                                    gj,
                                    &vq[r * d_..(r + 1) * d_],
                                    &mut dk[(base + j) * d_..(base + j + 1) * d_],
                                );
                            }
                        }
                    }
                });
            }
            Op::GroupMix { w, v, group } => {
                let d_ = self.cols(*v);
                let rows = self.rows(*v);
                let (vw, vv) = (self.value(*w), self.value(*v));
                self.acc(grads, *w, |dw| {
                    for r in 0..rows {
                        let base = r - r % group;
                        let gr = &g[r * d_..(r + 1) * d_];
                        for j in 0..*group {
                            dw[r * group + j] += dot(gr, &vv[(base + j) * d_..(base + j + 1) * d_]);
                        }
                    }
                });
                self.acc(grads, *v, |dv| {
                    for r in 0..rows {
                        let base = r - r % group;
                        let gr = &g[r * d_..(r + 1) * d_];
                        for j in 0..*group {
                            let wj = vw[r * group + j];
                            if wj != 0.0 {
                                axpy(wj, gr, &mut dv[(base + j) * d_..(base + j + 1) * d_]);
                            }
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let len = self.value(v).len();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `c += a · b` for an `[m, k]` by `[k, n]` product with explicit
/// (row, column) strides on the inputs; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and `c` (m x n); every caller derives them from tensor shapes checked
    // against the slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn softmax_prefix(row: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    let max = row[..len].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for j in 0..len {
        let e = (row[j] - max).exp();
        out[j] = e;
        z += e;
    }
    for v in &mut out[..len] {
        *v /= z;
    }
    out
}
