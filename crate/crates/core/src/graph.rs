//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a node
//! holding its value and whatever activations its backward rule needs;
//! [`Graph::backward`] then walks the nodes in exact reverse creation order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-column statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-average updates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
        train: bool,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols {
        x: Var,
        start: usize,
    },
    RepeatRows(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Mse(Var, Var),
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of operations for a single forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// `(rows, cols)` of a rank-1 (treated as a single row) or rank-2 shape.
fn as_rows(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [c] => Some((1, c)),
        [r, c] => Some((r, c)),
        _ => None,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, inputs: &[Var], node_op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: node_op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are not tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Registers a parameter from `store`, once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if self.params.len() <= i {
            self.params.resize(i + 1, None);
        }
        if let Some(v) = self.params[i] {
            return v;
        }
        let entry = store.entry(id);
        let v = self.push_leaf(entry.value.clone(), entry.trainable);
        self.params[i] = Some(v);
        v
    }

    /// Gradient accumulated for a registered parameter, if it took part in the pass.
    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|v| self.grad(v))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            _ => Err(dim_err(op, &[0, 0], self.shape(v))),
        }
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(dim_err("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        self.push("matmul", Tensor::new(&[m, n], out)?, &[a, b], Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(dim_err("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.data(a), self.data(b), &mut out, m, k, n);
        self.push("matmul_nt", Tensor::new(&[m, n], out)?, &[a, b], Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        self.push("transpose", t, &[x], Op::Transpose(x))
    }

    // ----- elementwise -----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape(a), data)?;
        self.push(op, t, &[a, b], node)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, op: &'static str, x: Var, row: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (_, c) = as_rows(self.shape(x)).ok_or_else(|| dim_err(op, &[0, 0], self.shape(x)))?;
        if self.value(row).len() != c {
            return Err(dim_err(op, &[c], self.shape(row)));
        }
        let r = self.data(row);
        let data = self
            .data(x)
            .chunks(c)
            .flat_map(|xr| xr.iter().zip(r).map(|(&a, &b)| f(a, b)))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(op, t, &[x, row], node)
    }

    /// Adds a length-C vector to every row of an R×C matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every row of an R×C matrix elementwise by a length-C vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x).map(|v| scale * v + shift);
        self.push("affine", t, &[x], Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(sigmoid);
        self.push("sigmoid", t, &[x], Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", t, &[x], Op::Relu(x))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + libm::erf(v * core::f64::consts::FRAC_1_SQRT_2)));
        self.push("gelu", t, &[x], Op::Gelu(x))
    }

    // ----- normalisation -----

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err("softmax", &[axis], &shape));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in 0..len {
                    let e = libm::exp(src[idx(l)] - max);
                    out[idx(l)] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[idx(l)] /= sum;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push("softmax", t, &[x], Op::Softmax { x, len, inner })
    }

    /// Row softmax of a matrix (last axis).
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let axis = self.shape(x).len() - 1;
        self.softmax(x, axis)
    }

    /// Layer normalisation over the last dimension followed by a per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(dim_err("layer_norm", &[c], self.shape(gamma)));
        }
        let src = self.data(x);
        let rows = src.len() / c;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        let (g, b) = (self.data(gamma), self.data(beta));
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.push(
            "layer_norm",
            t,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Batch normalisation over the rows of an R×C matrix using the batch's own
    /// statistics. Returns the observed statistics for running-average updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (r, c) = self.dims2("batch_norm", x)?;
        let src = self.data(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in src.chunks(c) {
            for j in 0..c {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        for row in src.chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / r as f64).collect();
        let unbiased: Vec<f64> = if r > 1 {
            var.iter().map(|v| v / (r - 1) as f64).collect()
        } else {
            biased.clone()
        };
        let v = self.batch_norm_with(x, gamma, beta, &mean, &biased, eps, true)?;
        Ok((
            v,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Batch normalisation with frozen statistics (evaluation mode).
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        self.batch_norm_with(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_with(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64, train: bool) -> Result<Var> {
        let (_, c) = self.dims2("batch_norm", x)?;
        if self.value(gamma).len() != c || self.value(beta).len() != c || mean.len() != c || var.len() != c {
            return Err(dim_err("batch_norm", &[c], self.shape(gamma)));
        }
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let src = self.data(x);
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for (i, &v) in src.iter().enumerate() {
            let j = i % c;
            let h = (v - mean[j]) * rstd[j];
            xhat[i] = h;
            out[i] = h * g[j] + b[j];
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.push(
            "batch_norm",
            t,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            },
        )
    }

    // ----- convolution -----

    /// 1-D cross-correlation along the sequence axis.
    ///
    /// `x` is L×C_in, `w` is K×C_in×C_out, `b` has C_out entries.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (l, cin) = self.dims2("conv1d", x)?;
        let (k, wcin, cout) = match *self.shape(w) {
            [k, ci, co] => (k, ci, co),
            _ => return Err(dim_err("conv1d", &[0, cin, 0], self.shape(w))),
        };
        if wcin != cin {
            return Err(dim_err("conv1d", &[k, cin, cout], self.shape(w)));
        }
        if self.value(b).len() != cout {
            return Err(dim_err("conv1d", &[cout], self.shape(b)));
        }
        if stride == 0 || l + 2 * padding < k {
            return Err(Error::DegenerateLength { op: "conv1d" });
        }
        let lout = (l + 2 * padding - k) / stride + 1;
        let (xs, ws, bs) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; lout * cout];
        for o in 0..lout {
            let orow = &mut out[o * cout..(o + 1) * cout];
            orow.copy_from_slice(bs);
            for kk in 0..k {
                let pos = (o * stride + kk) as isize - padding as isize;
                if pos < 0 || pos >= l as isize {
                    continue;
                }
                let pos = pos as usize;
                gemm_nn(
                    &xs[pos * cin..(pos + 1) * cin],
                    &ws[kk * cin * cout..(kk + 1) * cin * cout],
                    orow,
                    1,
                    cin,
                    cout,
                );
            }
        }
        let t = Tensor::new(&[lout, cout], out)?;
        self.push(
            "conv1d",
            t,
            &[x, w, b],
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        )
    }

    // ----- structural -----

    /// Stacks matrices (or row vectors) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let (_, c) = as_rows(self.shape(first)).ok_or_else(|| dim_err("concat_rows", &[0, 0], self.shape(first)))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            match as_rows(self.shape(p)) {
                Some((r, pc)) if pc == c => rows += r,
                _ => return Err(dim_err("concat_rows", &[0, c], self.shape(p))),
            }
            data.extend_from_slice(self.data(p));
        }
        let t = Tensor::new(&[rows, c], data)?;
        self.push("concat_rows", t, parts, Op::ConcatRows(parts.to_vec()))
    }

    /// Joins matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let (r, _) = as_rows(self.shape(first)).ok_or_else(|| dim_err("concat_cols", &[0, 0], self.shape(first)))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match as_rows(self.shape(p)) {
                Some((pr, pc)) if pr == r => widths.push(pc),
                _ => return Err(dim_err("concat_cols", &[r, 0], self.shape(p))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.data(p);
            for i in 0..r {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(&[r, total], data)?;
        self.push("concat_cols", t, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = as_rows(self.shape(x)).ok_or_else(|| dim_err("gather_rows", &[0, 0], self.shape(x)))?;
        if idx.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(dim_err("gather_rows", &[r], &[i]));
            }
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(&[idx.len(), c], data)?;
        self.push("gather_rows", t, &[x], Op::GatherRows(x, idx.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(x, &idx)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_cols", &[c], &[start, len]));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(&[r, len], data)?;
        self.push("slice_cols", t, &[x], Op::SliceCols { x, start })
    }

    /// Tiles a single row `n` times.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let c = match as_rows(self.shape(row)) {
            Some((1, c)) => c,
            _ => return Err(dim_err("repeat_rows", &[1, 0], self.shape(row))),
        };
        if n == 0 {
            return Err(Error::EmptyInput("repeat_rows"));
        }
        let src = self.data(row);
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(src);
        }
        let t = Tensor::new(&[n, c], data)?;
        self.push("repeat_rows", t, &[row], Op::RepeatRows(row))
    }

    // ----- reductions -----

    /// Global average pooling over the sequence axis: R×C → 1×C.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("mean_rows", x)?;
        let mut out = vec![0.0; c];
        for row in self.data(x).chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let t = Tensor::new(&[1, c], out)?;
        self.push("mean_rows", t, &[x], Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum::<f64>() / self.value(x).len() as f64;
        self.push("mean", Tensor::scalar(s), &[x], Op::Mean(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().map(|v| v * v).sum();
        self.push("sum_squares", Tensor::scalar(s), &[x], Op::SumSquares(x))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len() as f64;
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push("mse", Tensor::scalar(s), &[a, b], Op::Mse(a, b))
    }

    /// Mean softmax cross-entropy of B×K logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = self.dims2("softmax_cross_entropy", logits)?;
        if targets.len() != b {
            return Err(dim_err("softmax_cross_entropy", &[b], &[targets.len()]));
        }
        let src = self.data(logits);
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(dim_err("softmax_cross_entropy", &[k], &[t]));
            }
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for j in 0..k {
                probs[i * k + j] = libm::exp(row[j] - lse);
            }
            loss += lse - row[t];
        }
        let t = Tensor::scalar(loss / b as f64);
        self.push(
            "softmax_cross_entropy",
            t,
            &[logits],
            Op::SoftmaxCe {
                logits,
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    // ----- backward -----

    /// Back-propagates from a scalar output. Gradients accumulate on every node
    /// that requires them; call on a fresh graph.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(dim_err("backward", &[1], self.shape(out)));
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(gout) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contribs = self.local_grads(idx, &gout);
            self.nodes[idx].grad = Some(gout);
            for (v, g) in contribs {
                self.accumulate(v, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = as_rows(self.shape(a)).unwrap();
                let n = self.shape(b)[1];
                if self.needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(g, self.data(b), &mut ga, m, n, k);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(self.data(a), g, &mut gb, k, m, n);
                    out.push((b, gb));
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = as_rows(self.shape(a)).unwrap();
                let n = self.shape(b)[0];
                if self.needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nn(g, self.data(b), &mut ga, m, n, k);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; n * k];
                    gemm_tn(g, self.data(a), &mut gb, n, m, k);
                    out.push((b, gb));
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = as_rows(self.shape(x)).unwrap();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                out.push((x, gx));
            }
            &Op::Add(a, b) => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Sub(a, b) => {
                out.push((a, g.to_vec()));
                out.push((b, g.iter().map(|v| -v).collect()));
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                if self.needs(a) {
                    out.push((a, g.iter().zip(db).map(|(g, b)| g * b).collect()));
                }
                if self.needs(b) {
                    out.push((b, g.iter().zip(da).map(|(g, a)| g * a).collect()));
                }
            }
            &Op::AddRow(x, row) => {
                let c = self.value(row).len();
                out.push((x, g.to_vec()));
                if self.needs(row) {
                    let mut gr = vec![0.0; c];
                    for grow in g.chunks(c) {
                        gr.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                    out.push((row, gr));
                }
            }
            &Op::MulRow(x, row) => {
                let c = self.value(row).len();
                let (xs, rs) = (self.data(x), self.data(row));
                if self.needs(x) {
                    let gx = g.chunks(c).flat_map(|gr| gr.iter().zip(rs).map(|(a, b)| a * b)).collect();
                    out.push((x, gx));
                }
                if self.needs(row) {
                    let mut gr = vec![0.0; c];
                    for (grow, xrow) in g.chunks(c).zip(xs.chunks(c)) {
                        for j in 0..c {
                            gr[j] += grow[j] * xrow[j];
                        }
                    }
                    out.push((row, gr));
                }
            }
            &Op::Affine(x, s) => out.push((x, g.iter().map(|v| v * s).collect())),
            &Op::Sigmoid(x) => out.push((x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())),
            &Op::Relu(x) => out.push((
                x,
                g.iter()
                    .zip(self.data(x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )),
            &Op::Gelu(x) => out.push((
                x,
                g.iter()
                    .zip(self.data(x))
                    .map(|(g, &v)| {
                        let cdf = 0.5 * (1.0 + libm::erf(v * core::f64::consts::FRAC_1_SQRT_2));
                        let pdf = FRAC_1_SQRT_2PI * libm::exp(-0.5 * v * v);
                        g * (cdf + v * pdf)
                    })
                    .collect(),
            )),
            &Op::Softmax { x, len, inner } => {
                let mut gx = vec![0.0; y.len()];
                let outer = y.len() / (len * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let s: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            gx[idx(l)] = y[idx(l)] * (g[idx(l)] - s);
                        }
                    }
                }
                out.push((x, gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = self.value(*gamma).len();
                let gam = self.data(*gamma);
                if self.needs(*x) {
                    let mut gx = vec![0.0; xhat.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let base = r * c;
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let d = g[base + j] * gam[j];
                            m1 += d;
                            m2 += d * xhat[base + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let d = g[base + j] * gam[j];
                            gx[base + j] = rs * (d - m1 - xhat[base + j] * m2);
                        }
                    }
                    out.push((*x, gx));
                }
                self.affine_param_grads(g, xhat, c, *gamma, *beta, &mut out);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            } => {
                let c = self.value(*gamma).len();
                let gam = self.data(*gamma);
                if self.needs(*x) {
                    let rows = xhat.len() / c;
                    let mut gx = vec![0.0; xhat.len()];
                    if *train {
                        let mut m1 = vec![0.0; c];
                        let mut m2 = vec![0.0; c];
                        for i in 0..xhat.len() {
                            let j = i % c;
                            let d = g[i] * gam[j];
                            m1[j] += d;
                            m2[j] += d * xhat[i];
                        }
                        for j in 0..c {
                            m1[j] /= rows as f64;
                            m2[j] /= rows as f64;
                        }
                        for i in 0..xhat.len() {
                            let j = i % c;
                            gx[i] = rstd[j] * (g[i] * gam[j] - m1[j] - xhat[i] * m2[j]);
                        }
                    } else {
                        for i in 0..xhat.len() {
                            let j = i % c;
                            gx[i] = g[i] * gam[j] * rstd[j];
                        }
                    }
                    out.push((*x, gx));
                }
                self.affine_param_grads(g, xhat, c, *gamma, *beta, &mut out);
            }
            &Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (l, cin) = as_rows(self.shape(x)).unwrap();
                let k = self.shape(w)[0];
                let cout = self.shape(w)[2];
                let lout = y.len() / cout;
                let (xs, ws) = (self.data(x), self.data(w));
                let mut gx = vec![0.0; l * cin];
                let mut gw = vec![0.0; k * cin * cout];
                let mut gb = vec![0.0; cout];
                for o in 0..lout {
                    let grow = &g[o * cout..(o + 1) * cout];
                    gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    for kk in 0..k {
                        let pos = (o * stride + kk) as isize - padding as isize;
                        if pos < 0 || pos >= l as isize {
                            continue;
                        }
                        let pos = pos as usize;
                        let wk = &ws[kk * cin * cout..(kk + 1) * cin * cout];
                        gemm_nt(grow, wk, &mut gx[pos * cin..(pos + 1) * cin], 1, cout, cin);
                        gemm_tn(
                            &xs[pos * cin..(pos + 1) * cin],
                            grow,
                            &mut gw[kk * cin * cout..(kk + 1) * cin * cout],
                            cin,
                            1,
                            cout,
                        );
                    }
                }
                if self.needs(x) {
                    out.push((x, gx));
                }
                if self.needs(w) {
                    out.push((w, gw));
                }
                if self.needs(b) {
                    out.push((b, gb));
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.needs(p) {
                        out.push((p, g[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = *self.value(Var(idx)).shape().last().unwrap();
                let rows = y.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).len() / rows;
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            gp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        out.push((p, gp));
                    }
                    off += w;
                }
            }
            Op::GatherRows(x, idxs) => {
                let n = self.value(*x).len();
                let c = y.len() / idxs.len();
                let mut gx = vec![0.0; n];
                for (o, &i) in idxs.iter().enumerate() {
                    gx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[o * c..(o + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                out.push((*x, gx));
            }
            &Op::SliceCols { x, start } => {
                let (r, c) = as_rows(self.shape(x)).unwrap();
                let len = y.len() / r;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                out.push((x, gx));
            }
            &Op::RepeatRows(row) => {
                let c = self.value(row).len();
                let mut gr = vec![0.0; c];
                for grow in g.chunks(c) {
                    gr.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                }
                out.push((row, gr));
            }
            &Op::MeanRows(x) => {
                let (r, c) = as_rows(self.shape(x)).unwrap();
                let mut gx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    gx.extend(g.iter().map(|v| v / r as f64));
                }
                out.push((x, gx));
            }
            &Op::Sum(x) => out.push((x, vec![g[0]; self.value(x).len()])),
            &Op::Mean(x) => {
                let n = self.value(x).len();
                out.push((x, vec![g[0] / n as f64; n]));
            }
            &Op::SumSquares(x) => out.push((x, self.data(x).iter().map(|v| 2.0 * v * g[0]).collect())),
            &Op::Mse(a, b) => {
                let n = self.value(a).len() as f64;
                let d: Vec<f64> = self
                    .data(a)
                    .iter()
                    .zip(self.data(b))
                    .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                    .collect();
                if self.needs(b) {
                    out.push((b, d.iter().map(|v| -v).collect()));
                }
                out.push((a, d));
            }
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            } => {
                let b = targets.len();
                let k = probs.len() / b;
                let mut gl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * k + t] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= g[0] / b as f64);
                out.push((*logits, gl));
            }
        }
        out
    }

    fn affine_param_grads(&self, g: &[f64], xhat: &[f64], c: usize, gamma: Var, beta: Var, out: &mut Vec<(Var, Vec<f64>)>) {
        if self.needs(gamma) {
            let mut gg = vec![0.0; c];
            for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                gg[i % c] += gv * h;
            }
            out.push((gamma, gg));
        }
        if self.needs(beta) {
            let mut gb = vec![0.0; c];
            for (i, gv) in g.iter().enumerate() {
                gb[i % c] += gv;
            }
            out.push((beta, gb));
        }
    }
}
