use std::collections::HashMap;
use std::fmt;

use crate::error::{Result, TensorError};
use crate::tensor::{ParamGrads, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for a user-supplied op: receives the upstream
/// gradient and must return one gradient buffer per parent.
pub type CustomBackward = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Conv2d { input: Var, kernel: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    L2NormalizeRows { input: Var, norms: Vec<f64> },
    NormRows(Var),
    GatherRows { input: Var, rows: Vec<usize> },
    GatherCols { input: Var, cols: Vec<usize> },
    SliceCols { input: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Clip { input: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    Reshape(Var),
    Custom { parents: Vec<Var>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive ops in evaluation order; [`Tape::backward`] replays
/// them in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params.len())
            .finish()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn as_image(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Some((*c, *h, *w)),
        _ => None,
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NumericError { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Leaf that receives gradient; read it back with [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// Records a parameter leaf once; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ((m, k), (k2, n)) = match (as_matrix(sa), as_matrix(sb)) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(mismatch("matmul", sa, sb)),
        };
        debug_assert_eq!(k, k2);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                row.iter_mut().zip(brow).for_each(|(o, w)| *o += x * w);
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg, "matmul")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(Tensor::from_parts(sa.to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "div", |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Div(a, b), rg, "div")
    }

    fn row_broadcast(&mut self, x: Var, row: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        let cols = match as_matrix(sx) {
            Some((_, c)) if self.value(row).len() == c => c,
            _ => return Err(mismatch(name, sx, sr)),
        };
        let rv = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| f(*v, rv[i % cols]))
            .collect();
        Ok(Tensor::from_parts(sx.to_vec(), data))
    }

    /// `x[r, c] + bias[c]` for every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let t = self.row_broadcast(x, bias, "add_row", |a, b| a + b)?;
        let rg = self.rg(&[x, bias]);
        self.push(t, Op::AddRow(x, bias), rg, "add_row")
    }

    /// `x[r, c] * gain[c]` for every row.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let t = self.row_broadcast(x, gain, "mul_row", |a, b| a * b)?;
        let rg = self.rg(&[x, gain]);
        self.push(t, Op::MulRow(x, gain), rg, "mul_row")
    }

    fn map(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(x);
        let t = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|v| f(*v)).collect());
        let rg = self.rg(&[x]);
        self.push(t, op, rg, name)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(x, Op::Scale(x, c), "scale", |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(x, Op::AddScalar(x), "add_scalar", |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Log(x), "log", f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Square(x), "square", |v| v * v)
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(x, Op::Clip { input: x, lo, hi }, "clip", |v| v.clamp(lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "minimum", f64::min)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Minimum(a, b), rg, "minimum")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = as_matrix(sx).ok_or_else(|| mismatch("softmax_rows", sx, &[]))?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (oj, xj) in o.iter_mut().zip(row) {
                *oj = (xj - m).exp();
                z += *oj;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(sx.to_vec(), out), Op::SoftmaxRows(x), rg, "softmax_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    /// Column-wise mean over rows: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = as_matrix(sx).ok_or_else(|| mismatch("mean_rows", sx, &[]))?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            out.iter_mut()
                .zip(&xv[i * c..(i + 1) * c])
                .for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(x), rg, "mean_rows")
    }

    /// Valid (no padding, stride 1) 2-D convolution of a `[cin, h, w]` image
    /// with `[cout, cin, kh, kw]` kernels plus per-channel bias.
    pub fn conv2d_valid(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        let ((cin, h, w), (cout, kc, kh, kw)) = match (as_image(si), sk) {
            (Some(i), [a, b, c, d]) if i.0 == *b && i.1 >= *c && i.2 >= *d => (i, (*a, *b, *c, *d)),
            _ => return Err(mismatch("conv2d_valid", si, sk)),
        };
        debug_assert_eq!(cin, kc);
        if self.value(bias).len() != cout {
            return Err(mismatch("conv2d_valid", sk, self.shape(bias)));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let (xv, kv, bv) = (
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; cout * oh * ow];
        for oc in 0..cout {
            let o = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            o.iter_mut().for_each(|v| *v = bv[oc]);
            for ic in 0..cin {
                let img = &xv[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wgt = kv[((oc * cin + ic) * kh + ky) * kw + kx];
                        for y in 0..oh {
                            let src = &img[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            let dst = &mut o[y * ow..(y + 1) * ow];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += wgt * s);
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[input, kernel, bias]);
        self.push(
            Tensor::from_parts(vec![cout, oh, ow], out),
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            rg,
            "conv2d_valid",
        )
    }

    /// 2×2 max pooling with stride 2 on `[c, h, w]`; odd trailing rows and
    /// columns are dropped. Ties pick the first maximum in scan order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let si = self.shape(input);
        let (c, h, w) = match as_image(si) {
            Some(d) if d.1 >= 2 && d.2 >= 2 => d,
            _ => return Err(mismatch("maxpool2", si, &[])),
        };
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(input).data();
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let base = ch * h * w;
                    let cands = [
                        base + (2 * y) * w + 2 * x,
                        base + (2 * y) * w + 2 * x + 1,
                        base + (2 * y + 1) * w + 2 * x,
                        base + (2 * y + 1) * w + 2 * x + 1,
                    ];
                    let mut best = cands[0];
                    for &cand in &cands[1..] {
                        if xv[cand] > xv[best] {
                            best = cand;
                        }
                    }
                    let o = (ch * oh + y) * ow + x;
                    out[o] = xv[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.rg(&[input]);
        self.push(
            Tensor::from_parts(vec![c, oh, ow], out),
            Op::MaxPool2 { input, argmax },
            rg,
            "maxpool2",
        )
    }

    /// `[c, h, w] -> [1, c]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let si = self.shape(input);
        let (c, h, w) = as_image(si).ok_or_else(|| mismatch("global_avg_pool", si, &[]))?;
        let xv = self.value(input).data();
        let n = (h * w) as f64;
        let out = (0..c)
            .map(|ch| xv[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n)
            .collect();
        let rg = self.rg(&[input]);
        self.push(Tensor::from_parts(vec![1, c], out), Op::GlobalAvgPool(input), rg, "global_avg_pool")
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = as_matrix(sx).ok_or_else(|| mismatch("layer_norm", sx, &[]))?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            out[i * c..(i + 1) * c]
                .iter_mut()
                .zip(row)
                .for_each(|(o, v)| *o = (v - mean) * is);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(sx.to_vec(), out),
            Op::LayerNormRows { input: x, inv_std },
            rg,
            "layer_norm",
        )
    }

    /// Scales each row to unit L2 norm. An all-zero row stays zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = as_matrix(sx).ok_or_else(|| mismatch("l2_normalize_rows", sx, &[]))?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let mut norms = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[i] = n;
            if n > 0.0 {
                out[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(o, v)| *o = v / n);
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(sx.to_vec(), out),
            Op::L2NormalizeRows { input: x, norms },
            rg,
            "l2_normalize_rows",
        )
    }

    /// Euclidean norm of each row: `[r, c] -> [r, 1]`. Subgradient 0 at the origin.
    pub fn norm_rows(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = as_matrix(sx).ok_or_else(|| mismatch("norm_rows", sx, &[]))?;
        let xv = self.value(x).data();
        let out = (0..r)
            .map(|i| xv[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(vec![r, 1], out), Op::NormRows(x), rg, "norm_rows")
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = match as_matrix(sx) {
            Some(d) if rows.iter().all(|&i| i < d.0) => d,
            _ => return Err(mismatch("gather_rows", sx, &[rows.len()])),
        };
        let _ = r;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(vec![rows.len(), c], out),
            Op::GatherRows {
                input: x,
                rows: rows.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// Picks one column per row: `out[i] = x[i, cols[i]]`, shape `[r, 1]`.
    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = match as_matrix(sx) {
            Some(d) if d.0 == cols.len() && cols.iter().all(|&j| j < d.1) => d,
            _ => return Err(mismatch("gather_cols", sx, &[cols.len()])),
        };
        let xv = self.value(x).data();
        let out = (0..r).map(|i| xv[i * c + cols[i]]).collect();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(vec![r, 1], out),
            Op::GatherCols {
                input: x,
                cols: cols.to_vec(),
            },
            rg,
            "gather_cols",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        let (r, c) = match as_matrix(sx) {
            Some(d) if start + len <= d.1 => d,
            _ => return Err(mismatch("slice_cols", sx, &[start, len])),
        };
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_parts(vec![r, len], out),
            Op::SliceCols { input: x, start },
            rg,
            "slice_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat_rows", &[], &[]))?;
        let c = self.value(first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let sp = self.shape(p);
            match as_matrix(sp) {
                Some((r, pc)) if pc == c => rows += r,
                _ => return Err(mismatch("concat_rows", self.shape(first), sp)),
            }
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_parts(vec![rows, c], out),
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat_cols", &[], &[]))?;
        let r = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let sp = self.shape(p);
            match as_matrix(sp) {
                Some((pr, pc)) if pr == r => widths.push(pc),
                _ => return Err(mismatch("concat_cols", self.shape(first), sp)),
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_parts(vec![r, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg, "reshape")
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: CustomBackward) -> Result<Var> {
        let rg = self.rg(parents);
        self.push(
            value,
            Op::Custom {
                parents: parents.to_vec(),
                backward,
            },
            rg,
            "custom",
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.backprop_node(i, g, lo);
        }
        let params = self.params.iter().map(|(k, v)| (*k, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.shape(*a)).unwrap();
                let n = self.value(*b).cols();
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let ga = acc(&mut lo[a.0], m * k);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*b) {
                    let gb = acc(&mut lo[b.0], k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, gv)| *o += x * gv);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        acc(&mut lo[v.0], g.len()).iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(&mut lo[a.0], g.len()).iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if needs(*b) {
                    acc(&mut lo[b.0], g.len()).iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let ga = acc(&mut lo[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if needs(*b) {
                    let gb = acc(&mut lo[b.0], g.len());
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let ga = acc(&mut lo[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] / bv[j];
                    }
                }
                if needs(*b) {
                    let gb = acc(&mut lo[b.0], g.len());
                    for j in 0..g.len() {
                        gb[j] -= g[j] * av[j] / (bv[j] * bv[j]);
                    }
                }
            }
            Op::AddRow(x, b) => {
                let c = len(*b);
                if needs(*x) {
                    acc(&mut lo[x.0], g.len()).iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if needs(*b) {
                    let gb = acc(&mut lo[b.0], c);
                    for (j, v) in g.iter().enumerate() {
                        gb[j % c] += v;
                    }
                }
            }
            Op::MulRow(x, s) => {
                let c = len(*s);
                let (xv, sv) = (val(*x), val(*s));
                if needs(*x) {
                    let gx = acc(&mut lo[x.0], g.len());
                    for (j, v) in g.iter().enumerate() {
                        gx[j] += v * sv[j % c];
                    }
                }
                if needs(*s) {
                    let gs = acc(&mut lo[s.0], c);
                    for (j, v) in g.iter().enumerate() {
                        gs[j % c] += v * xv[j];
                    }
                }
            }
            Op::Scale(x, c) => {
                acc(&mut lo[x.0], g.len()).iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
            }
            Op::AddScalar(x) => {
                acc(&mut lo[x.0], g.len()).iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    if xv[j] > 0.0 {
                        gx[j] += g[j];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    gx[j] += g[j] * out[j] * (1.0 - out[j]);
                }
            }
            Op::Tanh(x) => {
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    gx[j] += g[j] * (1.0 - out[j] * out[j]);
                }
            }
            Op::Exp(x) => {
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    gx[j] += g[j] * out[j];
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    gx[j] += g[j] / xv[j];
                }
            }
            Op::Square(x) => {
                let xv = val(*x);
                let gx = acc(&mut lo[x.0], g.len());
                for j in 0..g.len() {
                    gx[j] += 2.0 * g[j] * xv[j];
                }
            }
            Op::Clip { input, lo: l, hi: h } => {
                let xv = val(*input);
                let gx = acc(&mut lo[input.0], g.len());
                for j in 0..g.len() {
                    if xv[j] >= *l && xv[j] <= *h {
                        gx[j] += g[j];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let ga = acc(&mut lo[a.0], g.len());
                    for j in 0..g.len() {
                        if av[j] <= bv[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                if needs(*b) {
                    let gb = acc(&mut lo[b.0], g.len());
                    for j in 0..g.len() {
                        if av[j] > bv[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                let gx = acc(&mut lo[x.0], g.len());
                for r in 0..g.len() / c {
                    let (gr, yr) = (&g[r * c..(r + 1) * c], &out[r * c..(r + 1) * c]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Sum(x) => {
                let n = len(*x);
                acc(&mut lo[x.0], n).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(x) => {
                let n = len(*x);
                let v = g[0] / n as f64;
                acc(&mut lo[x.0], n).iter_mut().for_each(|o| *o += v);
            }
            Op::MeanRows(x) => {
                let n = len(*x);
                let c = g.len();
                let r = n / c;
                let gx = acc(&mut lo[x.0], n);
                for (j, o) in gx.iter_mut().enumerate() {
                    *o += g[j % c] / r as f64;
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let (cin, h, w) = as_image(self.shape(*input)).unwrap();
                let sk = self.shape(*kernel);
                let (cout, kh, kw) = (sk[0], sk[2], sk[3]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let (xv, kv) = (val(*input), val(*kernel));
                if needs(*bias) {
                    let gb = acc(&mut lo[bias.0], cout);
                    for oc in 0..cout {
                        gb[oc] += g[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
                if needs(*kernel) {
                    let gk = acc(&mut lo[kernel.0], kv.len());
                    for oc in 0..cout {
                        let go = &g[oc * oh * ow..(oc + 1) * oh * ow];
                        for ic in 0..cin {
                            let img = &xv[ic * h * w..(ic + 1) * h * w];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let mut s = 0.0;
                                    for y in 0..oh {
                                        let src = &img[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                                        s += go[y * ow..(y + 1) * ow]
                                            .iter()
                                            .zip(src)
                                            .map(|(a, b)| a * b)
                                            .sum::<f64>();
                                    }
                                    gk[((oc * cin + ic) * kh + ky) * kw + kx] += s;
                                }
                            }
                        }
                    }
                }
                if needs(*input) {
                    let gi = acc(&mut lo[input.0], xv.len());
                    for oc in 0..cout {
                        let go = &g[oc * oh * ow..(oc + 1) * oh * ow];
                        for ic in 0..cin {
                            let gimg = &mut gi[ic * h * w..(ic + 1) * h * w];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let wgt = kv[((oc * cin + ic) * kh + ky) * kw + kx];
                                    for y in 0..oh {
                                        let dst = &mut gimg[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                                        dst.iter_mut()
                                            .zip(&go[y * ow..(y + 1) * ow])
                                            .for_each(|(d, s)| *d += wgt * s);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let gi = acc(&mut lo[input.0], len(*input));
                for (j, &src) in argmax.iter().enumerate() {
                    gi[src] += g[j];
                }
            }
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = as_image(self.shape(*x)).unwrap();
                let n = (h * w) as f64;
                let gx = acc(&mut lo[x.0], c * h * w);
                for ch in 0..c {
                    let v = g[ch] / n;
                    gx[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|o| *o += v);
                }
            }
            Op::LayerNormRows { input, inv_std } => {
                let c = node.value.cols();
                let gx = acc(&mut lo[input.0], g.len());
                for (r, is) in inv_std.iter().enumerate() {
                    let (gr, yr) = (&g[r * c..(r + 1) * c], &out[r * c..(r + 1) * c]);
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        gx[r * c + j] += is * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::L2NormalizeRows { input, norms } => {
                let c = node.value.cols();
                let gx = acc(&mut lo[input.0], g.len());
                for (r, n) in norms.iter().enumerate() {
                    if *n == 0.0 {
                        continue;
                    }
                    let (gr, yr) = (&g[r * c..(r + 1) * c], &out[r * c..(r + 1) * c]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += (gr[j] - yr[j] * dot) / n;
                    }
                }
            }
            Op::NormRows(x) => {
                let xv = val(*x);
                let c = len(*x) / g.len();
                let gx = acc(&mut lo[x.0], xv.len());
                for r in 0..g.len() {
                    if out[r] == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        gx[r * c + j] += g[r] * xv[r * c + j] / out[r];
                    }
                }
            }
            Op::GatherRows { input, rows } => {
                let c = node.value.cols();
                let gx = acc(&mut lo[input.0], len(*input));
                for (k, &r) in rows.iter().enumerate() {
                    gx[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::GatherCols { input, cols } => {
                let c = self.value(*input).cols();
                let gx = acc(&mut lo[input.0], len(*input));
                for (r, &j) in cols.iter().enumerate() {
                    gx[r * c + j] += g[r];
                }
            }
            Op::SliceCols { input, start } => {
                let c = self.value(*input).cols();
                let width = node.value.cols();
                let gx = acc(&mut lo[input.0], len(*input));
                for r in 0..g.len() / width {
                    gx[r * c + start..r * c + start + width]
                        .iter_mut()
                        .zip(&g[r * width..(r + 1) * width])
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = len(*p);
                    if needs(*p) {
                        acc(&mut lo[p.0], n)
                            .iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(o, v)| *o += v);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(*p) {
                        let gp = acc(&mut lo[p.0], rows * w);
                        for r in 0..rows {
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * total + off..r * total + off + w])
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                    off += w;
                }
            }
            Op::Reshape(x) => {
                acc(&mut lo[x.0], g.len()).iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            Op::Custom { parents, backward } => {
                let pg = backward(g);
                for (p, gp) in parents.iter().zip(pg) {
                    if needs(*p) {
                        acc(&mut lo[p.0], gp.len())
                            .iter_mut()
                            .zip(&gp)
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to any recorded var; `None` when unreached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Dense gradients for every parameter in `store`; params that did not
    /// contribute to the loss get zeros.
    pub fn to_param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (id, v) in &self.params {
            if let Some(g) = self.wrt(*v) {
                out.get_mut(*id).copy_from_slice(g);
            }
        }
        out
    }
}
