//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Graph`]; nodes are therefore
//! stored in topological order and [`Graph::backward`] is a single reverse
//! sweep. Parameters are pulled in by path so that repeated uses of the same
//! parameter share one node and one gradient accumulator.

use std::collections::HashMap;

use super::params::{GradStore, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Reshape(Var),
    SoftmaxXentFirst(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let (_, c) = t.dims2()?;
    let mut out = t.clone();
    if c > 0 {
        out.data_mut().chunks_mut(c).for_each(softmax_row);
    }
    Ok(out)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf (inputs whose gradient the caller wants back).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "input")
    }

    /// Leaf whose gradient is never read.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    /// Looks up a parameter by path; the same path always yields the same node.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let t = store
            .get(path)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {path}")))?
            .clone();
        let v = self.push(t, Op::Leaf, "param")?;
        self.params.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        out.add_assign(tb)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds the row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, c) = self.value(a).dims2()?;
        let tb = self.value(b);
        if tb.len() != c {
            return Err(Error::dim(format!(
                "broadcast add of width {} onto {:?}",
                tb.len(),
                self.value(a).shape()
            )));
        }
        let bias = tb.data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(c) {
            row.iter_mut().zip(&bias).for_each(|(x, b)| *x += b);
        }
        self.push(out, Op::AddRow(a, b), "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        self.push(out, Op::SoftmaxRows(a), "softmax")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start >= end || end > c {
            return Err(Error::dim(format!("column slice {start}..{end} of {c} columns")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let out = Tensor::matrix(r, end - start, data)?;
        self.push(out, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence("concat_cols"))?;
        let (r, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(Error::dim(format!("concat_cols rows {pr} != {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Vertically concatenates rows (1-D parts count as single rows).
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence("stack_rows"))?;
        let (_, c) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(Error::dim(format!("stack_rows width {pc} != {c}")));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        self.push(out, Op::StackRows(parts.to_vec()), "stack_rows")
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather"));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Index { index: id, len: r });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::matrix(ids.len(), c, data)?;
        self.push(out, Op::Gather(table, ids.to_vec()), "gather")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// `log Σ_j exp(s_j) − s_0` for a score row whose first entry is the positive.
    pub fn softmax_xent_first(&mut self, scores: Var) -> Result<Var> {
        let s = self.value(scores).data();
        if s.is_empty() {
            return Err(Error::EmptySequence("softmax_xent_first"));
        }
        let out = Tensor::scalar(log_sum_exp(s) - s[0]);
        self.push(out, Op::SoftmaxXentFirst(scores), "softmax_xent")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                // Leaves keep their gradient for the caller.
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let ga = g.matmul(&tb.transpose()?)?.reshape(ta.shape().to_vec())?;
                    let gb = ta.transpose()?.matmul(&g)?.reshape(tb.shape().to_vec())?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Transpose(a) => {
                    let ga = g.transpose()?.reshape(self.value(*a).shape().to_vec())?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddRow(a, b) => {
                    let (_, c) = g.dims2()?;
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), gb)?;
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let ga = zip_map(&g, tb, |x, y| x * y)?;
                    let gb = zip_map(&g, ta, |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c))?;
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |x, y| x * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SoftmaxRows(a) => {
                    // dx = y ⊙ (dy − Σ_j dy_j y_j), per row
                    let y = &node.value;
                    let (_, c) = y.dims2()?;
                    let mut ga = g.clone();
                    for (grow, yrow) in ga.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let inner: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        grow.iter_mut().zip(yrow).for_each(|(gv, yv)| *gv = yv * (*gv - inner));
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let (_, c) = ta.dims2()?;
                    let mut ga = Tensor::zeros(ta.shape());
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let (r, c) = ta.dims2()?;
                    let (_, w) = g.dims2()?;
                    let mut ga = Tensor::zeros(ta.shape());
                    for i in 0..r {
                        ga.data_mut()[i * c + start..i * c + start + w]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let (_, w) = tp.dims2()?;
                        let mut gp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            gp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(&mut grads, p, Tensor::new(tp.shape().to_vec(), gp)?)?;
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let n = tp.len();
                        let gp = Tensor::new(tp.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        accumulate(&mut grads, p, gp)?;
                        offset += n;
                    }
                }
                Op::Gather(table, ids) => {
                    let tt = self.value(*table);
                    let (_, c) = tt.dims2()?;
                    let mut gt = Tensor::zeros(tt.shape());
                    for (k, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * c..(id + 1) * c];
                        dst.iter_mut().zip(&g.data()[k * c..(k + 1) * c]).for_each(|(d, s)| *d += s);
                    }
                    accumulate(&mut grads, *table, gt)?;
                }
                Op::Sum(a) => {
                    let seed = g.item()?;
                    accumulate(&mut grads, *a, Tensor::full(self.value(*a).shape(), seed))?;
                }
                Op::Reshape(a) => {
                    let ga = g.reshape(self.value(*a).shape().to_vec())?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SoftmaxXentFirst(a) => {
                    // ∂/∂s_j = p_j − [j = 0]
                    let seed = g.item()?;
                    let ta = self.value(*a);
                    let mut p = ta.clone();
                    softmax_row(p.data_mut());
                    p.data_mut()[0] -= 1.0;
                    p.scale_in_place(seed);
                    accumulate(&mut grads, *a, p)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and collects gradients for every parameter in
    /// `store`; parameters never touched by the loss get zero tensors.
    pub fn backward_params(&self, loss: Var, store: &ParamStore) -> Result<GradStore> {
        let grads = self.backward(loss)?;
        Ok(self.param_grads(&grads, store))
    }

    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> GradStore {
        let mut out = GradStore::zeros_like(store);
        for (path, &v) in &self.params {
            if let (Some(slot), Some(g)) = (out.get_mut(path), grads.get(v)) {
                *slot = g.clone();
            }
        }
        out
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of a reverse sweep. Only leaves retain their gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `v`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
