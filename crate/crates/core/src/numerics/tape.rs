//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every primitive appends a node holding its forward value. Node ids grow
//! monotonically, so the node list is already a topological order and
//! [`Tape::backward`] is a single reverse sweep.

use std::collections::BTreeMap;

use super::tensor::{
    gemm_acc, gemm_at_acc, gemm_bt_acc, log_softmax_row, sigmoid, softmax_row, Tensor,
};
use super::ParamSet;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    MeanRows(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BceWithLogits { logit: Var, label: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of a scalar output with respect to every leaf of a tape.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (or an input to differentiate against).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a named parameter; repeated requests return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params.require(name)?.clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `a[m,k] @ b[k,n]`; a rank-1 `a` is treated as a single row and yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() == 0 || av.rank() > 2 || bv.rank() != 2 || av.cols() != bv.dims()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let dims = if av.rank() == 1 { vec![n] } else { vec![m, n] };
        let value = Tensor::new(dims, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(shape_err("transpose", av, av));
        }
        let (m, n) = (av.dims()[0], av.dims()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(shape_err(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds the vector `b[n]` to every row of `a[.., n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 1 || av.rank() == 0 || av.cols() != bv.len() {
            return Err(shape_err("add_row", av, bv));
        }
        let n = bv.len();
        let mut value = av.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += bv.data()[i % n];
        }
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| gelu_parts(x).0);
        self.push(value, Op::Gelu(a))
    }

    /// Softmax along the trailing axis (row-wise for matrices).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() == 0 {
            return Err(Error::invalid("softmax of a scalar"));
        }
        let mut value = av.clone();
        let c = av.cols();
        for (x, out) in av.data().chunks(c).zip(value.data_mut().chunks_mut(c)) {
            softmax_row(x, out);
        }
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || av.rows() > av.cols() {
            return Err(shape_err("causal_softmax", av, av));
        }
        let c = av.cols();
        let mut value = Tensor::zeros(av.dims());
        for (i, (x, out)) in av
            .data()
            .chunks(c)
            .zip(value.data_mut().chunks_mut(c))
            .enumerate()
        {
            softmax_row(&x[..=i], &mut out[..=i]);
        }
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// Log-softmax along the trailing axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() == 0 {
            return Err(Error::invalid("log_softmax of a scalar"));
        }
        let mut value = av.clone();
        let c = av.cols();
        for (x, out) in av.data().chunks(c).zip(value.data_mut().chunks_mut(c)) {
            log_softmax_row(x, out);
        }
        Ok(self.push(value, Op::LogSoftmax(a)))
    }

    /// Extracts one element of a vector as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 {
            return Err(shape_err("pick", av, av));
        }
        if index >= av.len() {
            return Err(Error::Index {
                index,
                len: av.len(),
            });
        }
        let value = Tensor::scalar(av.data()[index]);
        Ok(self.push(value, Op::Pick(a, index)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Sums scalars (or equally shaped tensors) left to right.
    pub fn sum_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("sum of no terms"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(shape_err("mean_rows", av, av));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::vector(out), Op::MeanRows(a)))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of no parts"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 1 {
                return Err(shape_err("concat", pv, pv));
            }
            out.extend_from_slice(pv.data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec())))
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::invalid("stack of no rows"))?;
        let n = self.value(first).len();
        let mut out = Vec::with_capacity(n * rows.len());
        for &r in rows {
            let rv = self.value(r);
            if rv.rank() != 1 || rv.len() != n {
                return Err(shape_err("stack_rows", self.value(first), rv));
            }
            out.extend_from_slice(rv.data());
        }
        let value = Tensor::new(vec![rows.len(), n], out)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec())))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(shape_err("row", av, av));
        }
        if i >= av.rows() {
            return Err(Error::Index {
                index: i,
                len: av.rows(),
            });
        }
        let value = Tensor::vector(av.row(i).to_vec());
        Ok(self.push(value, Op::Row(a, i)))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || len == 0 || start + len > av.cols() {
            return Err(shape_err("slice_cols", av, av));
        }
        let m = av.rows();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av.row(i)[start..start + len]);
        }
        let value = Tensor::new(vec![m, len], out)?;
        Ok(self.push(value, Op::SliceCols { x: a, start }))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols of no parts"))?;
        let m = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.rows() != m {
                return Err(shape_err("concat_cols", self.value(first), pv));
            }
            total += pv.cols();
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `ids` of `table`, as a `[ids.len(), cols]` matrix (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids.is_empty() {
            return Err(shape_err("gather", tv, tv));
        }
        let mut out = Vec::with_capacity(ids.len() * tv.cols());
        for &id in ids {
            if id >= tv.rows() {
                return Err(Error::Index {
                    index: id,
                    len: tv.rows(),
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), tv.cols()], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(dims.to_vec())?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols();
        if xv.rank() == 0 || gv.dims() != [n] || bv.dims() != [n] {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                normalized[r * n + j] = xh;
                out[r * n + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.dims().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `label`, computed from the logit.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        let lv = self.value(logit);
        if lv.len() != 1 {
            return Err(shape_err("bce_with_logits", lv, lv));
        }
        let z = lv.item();
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logit, label }))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward_all(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got dims {:?}",
                out.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.dims(), 1.0));
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                leaves[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { leaves })
    }

    /// Gradients of `output` for every parameter in `params`; parameters that
    /// were never registered or are not on any path get exact zeros.
    pub fn backward(&self, output: Var, params: &ParamSet) -> Result<ParamSet> {
        let all = self.backward_all(output)?;
        let mut out = params.zeros_like();
        for (name, &v) in &self.params {
            if let (Some(g), Some(slot)) = (all.get(v), out.get_mut(name)) {
                slot.add_assign(g);
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut ga = vec![0.0; m * k];
                gemm_bt_acc(g.data(), bv.data(), &mut ga, m, k, n);
                let mut gb = vec![0.0; k * n];
                gemm_at_acc(av.data(), g.data(), &mut gb, m, k, n);
                acc(*a, Tensor::new(av.dims().to_vec(), ga).expect("matmul grad"));
                acc(*b, Tensor::new(bv.dims().to_vec(), gb).expect("matmul grad"));
            }
            Op::Transpose(a) => {
                let (n, m) = (y.dims()[0], y.dims()[1]);
                let mut ga = vec![0.0; n * m];
                for j in 0..n {
                    for i in 0..m {
                        ga[i * n + j] = g.data()[j * m + i];
                    }
                }
                acc(*a, Tensor::new(vec![m, n], ga).expect("transpose grad"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (o, x) in gb.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                acc(*a, g.clone());
                acc(*b, Tensor::vector(gb));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |gi, bi| gi * bi));
                acc(*b, g.zip_map(av, |gi, ai| gi * ai));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, s| gi * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gi, t| gi * (1.0 - t * t))),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |gi, x| gi * gelu_parts(x).1));
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut ga = g.clone();
                for ((gr, yr), out) in g
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(ga.data_mut().chunks_mut(c))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, p)| x * p).sum();
                    for ((o, &gi), &p) in out.iter_mut().zip(gr).zip(yr) {
                        *o = p * (gi - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut ga = g.clone();
                for ((gr, yr), out) in g
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(ga.data_mut().chunks_mut(c))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, &gi), &lp) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gi - lp.exp() * total;
                    }
                }
                acc(*a, ga);
            }
            Op::Pick(a, index) => {
                let mut ga = Tensor::zeros(self.value(*a).dims());
                ga.data_mut()[*index] = g.item();
                acc(*a, ga);
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.value(*a).dims(), g.item())),
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let m = av.rows() as f64;
                let mut ga = Tensor::zeros(av.dims());
                let n = av.cols();
                for (i, v) in ga.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i % n] / m;
                }
                acc(*a, ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, Tensor::vector(g.data()[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    acc(r, Tensor::vector(g.row(i).to_vec()));
                }
            }
            Op::Row(a, i) => {
                let mut ga = Tensor::zeros(self.value(*a).dims());
                let c = ga.cols();
                ga.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.data());
                acc(*a, ga);
            }
            Op::SliceCols { x, start } => {
                let mut ga = Tensor::zeros(self.value(*x).dims());
                let (c, len) = (ga.cols(), y.cols());
                for i in 0..y.rows() {
                    ga.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                acc(*x, ga);
            }
            Op::ConcatCols(parts) => {
                let m = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut gp = Vec::with_capacity(m * pc);
                    for i in 0..m {
                        gp.extend_from_slice(&g.row(i)[offset..offset + pc]);
                    }
                    acc(p, Tensor::new(vec![m, pc], gp).expect("concat_cols grad"));
                    offset += pc;
                }
            }
            Op::Gather { table, ids } => {
                let mut gt = Tensor::zeros(self.value(*table).dims());
                let c = gt.cols();
                for (r, &id) in ids.iter().enumerate() {
                    for (o, x) in gt.data_mut()[id * c..(id + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*table, gt);
            }
            Op::Reshape(a) => {
                acc(*a, g.reshaped(self.value(*a).dims().to_vec()).expect("reshape grad"));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let n = gv.len();
                let mut gx = vec![0.0; g.len()];
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                for (r, &is) in inv_std.iter().enumerate() {
                    let base = r * n;
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        let gi = g.data()[base + j];
                        let xh = normalized[base + j];
                        ggain[j] += gi * xh;
                        gbias[j] += gi;
                        let d = gi * gv.data()[j];
                        sum_d += d;
                        sum_dx += d * xh;
                    }
                    for j in 0..n {
                        let d = g.data()[base + j] * gv.data()[j];
                        let xh = normalized[base + j];
                        gx[base + j] = is * (d - sum_d / n as f64 - xh * sum_dx / n as f64);
                    }
                }
                acc(*x, Tensor::new(y.dims().to_vec(), gx).expect("layer_norm grad"));
                acc(*gain, Tensor::vector(ggain));
                acc(*bias, Tensor::vector(gbias));
            }
            Op::BceWithLogits { logit, label } => {
                let lv = self.value(*logit);
                let d = (sigmoid(lv.item()) - label) * g.item();
                acc(*logit, Tensor::filled(lv.dims(), d));
            }
        }
    }
}

/// `(gelu(x), gelu'(x))` for the tanh approximation.
fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4;
    const K: f64 = 0.044_715;
    let t = (C * (x + K * x * x * x)).tanh();
    let value = 0.5 * x * (1.0 + t);
    let slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (value, slope)
}
