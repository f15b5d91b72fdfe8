//! Tape-based reverse-mode autodiff. Nodes only reference earlier nodes,
//! so the tape is a topological order by construction and backward is a
//! single reverse sweep.

use crate::error::{Result, XpError};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    LogSumExp(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> XpError {
    XpError::ShapeMismatch(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

pub const LN_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient in `backward`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a), &[a])
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(shape_err(name, x.dims(), y.dims()));
        }
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor {
            shape: vec![x.rows(), x.cols()],
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, a: Var, row: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err(name, x.dims(), r.dims()));
        }
        let c = x.cols();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, r.data[i % c]))
            .collect();
        Ok(Tensor {
            shape: vec![x.rows(), c],
            data,
        })
    }

    /// `a + row` with `row` (1 x c) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast(a, row, "add_row", |p, q| p + q)?;
        Ok(self.push(t, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast(a, row, "mul_row", |p, q| p * q)?;
        Ok(self.push(t, Op::MulRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        self.push(t, Op::Gelu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c) = x.dims();
        let mut data = vec![0.0; n * c];
        for i in 0..n {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                z += e;
            }
            for v in &mut data[i * c..(i + 1) * c] {
                *v /= z;
            }
        }
        let t = Tensor {
            shape: vec![n, c],
            data,
        };
        self.push(t, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row standardisation without affine terms.
    pub fn layernorm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c) = x.dims();
        let mut data = vec![0.0; n * c];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mu) * s;
            }
            inv_std.push(s);
        }
        let t = Tensor {
            shape: vec![n, c],
            data,
        };
        self.push(t, Op::LayerNormRows(a, inv_std), &[a])
    }

    /// Column means: n x c -> 1 x c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c) = x.dims();
        let mut data = vec![0.0; c];
        for i in 0..n {
            for (d, v) in data.iter_mut().zip(x.row(i)) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= n as f64;
        }
        self.push(Tensor::row_vector(data), Op::MeanRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != n) {
            return Err(XpError::ShapeMismatch("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor {
            shape: vec![n, total],
            data,
        };
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != c) {
            return Err(XpError::ShapeMismatch("concat_rows: col counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let t = Tensor {
            shape: vec![data.len() / c, c],
            data,
        };
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims();
        if start >= end || end > c {
            return Err(XpError::ShapeMismatch(format!("slice_cols {start}..{end} of {c}")));
        }
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&x.row(i)[start..end]);
        }
        let t = Tensor {
            shape: vec![n, end - start],
            data,
        };
        Ok(self.push(t, Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims();
        if start >= end || end > n {
            return Err(XpError::ShapeMismatch(format!("slice_rows {start}..{end} of {n}")));
        }
        let t = Tensor {
            shape: vec![end - start, c],
            data: x.data[start * c..end * c].to_vec(),
        };
        Ok(self.push(t, Op::SliceRows(a, start), &[a]))
    }

    /// Row lookup; indices may repeat (embedding tables, broadcasting).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims();
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(XpError::ShapeMismatch(format!("gather_rows {idx:?} of {n} rows")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let t = Tensor {
            shape: vec![idx.len(), c],
            data,
        };
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// log(sum(exp(a))) over all elements, max-shifted.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = x.data.iter().map(|v| (v - m).exp()).sum();
        self.push(Tensor::scalar(m + s.ln()), Op::LogSumExp(a), &[a])
    }

    /// Gradients of a scalar node with respect to every node, indexed by `Var`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(XpError::NotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor| -> Result<()> {
            if v.0 >= idx {
                return Err(XpError::GraphCycle);
            }
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
            Ok(())
        };
        let like = |v: Var, data: Vec<f64>| Tensor {
            shape: vec![self.dims(v).0, self.dims(v).1],
            data,
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul_t(false, self.value(*b), true)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, self.value(*a).matmul_t(true, g, false)?)?;
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose())?,
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                acc(*a, like(*a, g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect()))?;
                acc(*b, like(*b, g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect()))?;
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone())?;
                let c = g.cols();
                let mut dr = vec![0.0; c];
                for (i, v) in g.data.iter().enumerate() {
                    dr[i % c] += v;
                }
                acc(*r, Tensor::row_vector(dr))?;
            }
            Op::MulRow(a, r) => {
                let (x, row) = (self.value(*a), self.value(*r));
                let c = g.cols();
                let da = g.data.iter().enumerate().map(|(i, v)| v * row.data[i % c]).collect();
                acc(*a, like(*a, da))?;
                let mut dr = vec![0.0; c];
                for (i, v) in g.data.iter().enumerate() {
                    dr[i % c] += v * x.data[i];
                }
                acc(*r, Tensor::row_vector(dr))?;
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c))?,
            Op::AddScalar(a) => acc(*a, g.clone())?,
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(*a, like(*a, g.data.iter().zip(&x.data).map(|(d, &v)| d * gelu_grad(v)).collect()))?;
            }
            Op::Tanh(a) => {
                acc(*a, like(*a, g.data.iter().zip(&out.data).map(|(d, y)| d * (1.0 - y * y)).collect()))?;
            }
            Op::Sigmoid(a) => {
                acc(*a, like(*a, g.data.iter().zip(&out.data).map(|(d, y)| d * y * (1.0 - y)).collect()))?;
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, like(*a, g.data.iter().zip(&x.data).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect()))?;
            }
            Op::SoftmaxRows(a) => {
                let (n, c) = out.dims();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    let y = out.row(i);
                    let dy = g.row(i);
                    let dot: f64 = y.iter().zip(dy).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        dx[i * c + j] = y[j] * (dy[j] - dot);
                    }
                }
                acc(*a, like(*a, dx))?;
            }
            Op::LayerNormRows(a, inv_std) => {
                let (n, c) = out.dims();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    let y = out.row(i);
                    let dy = g.row(i);
                    let m1 = dy.iter().sum::<f64>() / c as f64;
                    let m2 = dy.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv_std[i] * (dy[j] - m1 - y[j] * m2);
                    }
                }
                acc(*a, like(*a, dx))?;
            }
            Op::MeanRows(a) => {
                let (n, c) = self.dims(*a);
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        dx[i * c + j] = g.data[j] / n as f64;
                    }
                }
                acc(*a, like(*a, dx))?;
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let mut d = Vec::with_capacity(n * w);
                    for i in 0..n {
                        d.extend_from_slice(&g.row(i)[off..off + w]);
                    }
                    acc(p, like(p, d))?;
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, like(p, g.data[off..off + len].to_vec()))?;
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (n, c) = self.dims(*a);
                let w = g.cols();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    dx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                acc(*a, like(*a, dx))?;
            }
            Op::SliceRows(a, start) => {
                let (n, c) = self.dims(*a);
                let mut dx = vec![0.0; n * c];
                dx[start * c..start * c + g.len()].copy_from_slice(&g.data);
                acc(*a, like(*a, dx))?;
            }
            Op::GatherRows(a, idx_list) => {
                let (n, c) = self.dims(*a);
                let mut dx = vec![0.0; n * c];
                for (k, &i) in idx_list.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g.data[k * c + j];
                    }
                }
                acc(*a, like(*a, dx))?;
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, like(*a, vec![g.data[0]; n]))?;
            }
            Op::LogSumExp(a) => {
                let l = out.data[0];
                let x = self.value(*a);
                acc(*a, like(*a, x.data.iter().map(|v| g.data[0] * (v - l).exp()).collect()))?;
            }
        }
        Ok(())
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
