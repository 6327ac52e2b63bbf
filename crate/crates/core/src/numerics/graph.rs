//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node to the [`Graph`]. Because nodes are only
//! ever appended, the node vector is already in topological order and
//! [`Graph::backward`] is a single reverse sweep over it.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layer normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Silu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ChwToRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    OuterAdd(Var, Var),
    GatherRows {
        table: Var,
        ids: Vec<Option<usize>>,
    },
    MaskMul {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    ScalarFn {
        x: Var,
        grad: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of the primitive operations applied during one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// require gradients or is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// c = beta·c + a·b for an (m×k)·(k×n) product with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every strided access
    // implied by (m, k, n) and the given strides; `c` is dense row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds an input tensor. Leaves with `requires_grad = false` never
    /// receive gradient.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// a·bᵀ for a: m×k and b: n×k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul_nt")?;
        let (n, k2) = matrix_dims(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            1,
            k as isize,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    /// Adds a length-n bias to every row of an m×n matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(x), "add_row_bias")?;
        let b = self.value(bias);
        if b.numel() != n {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for rows of width {}", b.shape(), n),
            ));
        }
        let mut out = self.value(x).data().to_vec();
        for r in 0..m {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRowBias(x, bias), rg))
    }

    /// x·w + b with w: in×out and b: out.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Swish / SiLU: x·sigmoid(x).
    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(t, Op::Silu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(t, Op::Tanh(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            row.iter_mut().for_each(|e| *e /= sum);
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|e| *e -= lse);
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::LogSoftmax(x), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.cols();
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?} with gamma {:?} and beta {:?}",
                    v.shape(),
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = v.rows();
        let mut out = vec![0.0; v.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..n {
                out[r * n + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            rg,
        ))
    }

    /// Depthwise 1-D convolution along time for x: t×c, w: c×k (k odd),
    /// b: c, with zero "same" padding.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t, c) = matrix_dims(self.value(x), "depthwise_conv1d")?;
        let (wc, k) = matrix_dims(self.value(w), "depthwise_conv1d")?;
        if wc != c || k % 2 == 0 || self.value(b).numel() != c {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!(
                    "input {:?}, kernel {:?}, bias {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let pad = (k - 1) / 2;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; t * c];
        for i in 0..t {
            let orow = &mut out[i * c..(i + 1) * c];
            orow.copy_from_slice(bv);
            for j in 0..k {
                let src = i + j;
                if src < pad || src - pad >= t {
                    continue;
                }
                let xrow = &xv[(src - pad) * c..(src - pad + 1) * c];
                for ch in 0..c {
                    orow[ch] += wv[ch * k + j] * xrow[ch];
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::matrix(t, c, out)?,
            Op::DepthwiseConv1d { x, w, b },
            rg,
        ))
    }

    /// 2-D convolution of x: [c_in, h, w] with weight [c_out, c_in, kh, kw]
    /// and bias [c_out], producing [c_out, oh, ow].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bad = || {
            Error::shape(
                "conv2d",
                format!(
                    "input {:?}, weight {:?}, stride {}, padding {}",
                    xs, ws, stride, pad
                ),
            )
        };
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || stride == 0 {
            return Err(bad());
        }
        if self.value(b).numel() != ws[0] {
            return Err(bad());
        }
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(bad());
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let kdim = c_in * kh * kw;
        let npix = oh * ow;
        let mut out = vec![0.0; c_out * npix];
        gemm(
            c_out,
            kdim,
            npix,
            self.value(w).data(),
            kdim as isize,
            1,
            &cols,
            npix as isize,
            1,
            &mut out,
            0.0,
        );
        let bv = self.value(b).data();
        for (co, chunk) in out.chunks_mut(npix).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bv[co]);
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![c_out, oh, ow], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Rearranges [c, h, w] into an h × (c·w) matrix (time-major flatten).
    pub fn chw_to_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape(
                "chw_to_rows",
                format!("expected rank 3, got {:?}", s),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                let src = &xv[(ch * h + i) * w..(ch * h + i + 1) * w];
                out[i * c * w + ch * w..i * c * w + (ch + 1) * w].copy_from_slice(src);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(h, c * w, out)?, Op::ChwToRows(x), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no operands"));
        }
        let rows = matrix_dims(self.value(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = matrix_dims(self.value(p), "concat_cols")?;
            if r != rows {
                let shapes: Vec<_> = parts
                    .iter()
                    .map(|&p| self.value(p).shape().to_vec())
                    .collect();
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {:?}", shapes),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no operands"));
        }
        let cols = matrix_dims(self.value(parts[0]), "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = matrix_dims(self.value(p), "concat_rows")?;
            if c != cols {
                let shapes: Vec<_> = parts
                    .iter()
                    .map(|&p| self.value(p).shape().to_vec())
                    .collect();
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts differ: {:?}", shapes),
                ));
            }
            out.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims(self.value(x), "slice_cols")?;
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!(
                    "columns {}..{} of {:?}",
                    start,
                    start + len,
                    self.value(x).shape()
                ),
            ));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(rows, len, out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims(self.value(x), "slice_rows")?;
        if start + len > rows {
            return Err(Error::shape(
                "slice_rows",
                format!(
                    "rows {}..{} of {:?}",
                    start,
                    start + len,
                    self.value(x).shape()
                ),
            ));
        }
        let out = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(len, cols, out)?,
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = matrix_dims(self.value(x), "transpose")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(x), rg))
    }

    /// For a: m×k and b: n×k, row i·n + j of the result is a[i] + b[j].
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "outer_add")?;
        let (n, k2) = matrix_dims(self.value(b), "outer_add")?;
        if k != k2 {
            return Err(Error::shape(
                "outer_add",
                format!("{:?} ⊕ {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n * k];
        for i in 0..m {
            for j in 0..n {
                let o = &mut out[(i * n + j) * k..(i * n + j + 1) * k];
                for c in 0..k {
                    o[c] = av[i * k + c] + bv[j * k + c];
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m * n, k, out)?, Op::OuterAdd(a, b), rg))
    }

    /// Row lookup into an embedding table; `None` selects an all-zero row.
    pub fn gather_rows(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (rows, cols) = matrix_dims(self.value(table), "gather_rows")?;
        let tv = self.value(table).data();
        let mut out = vec![0.0; ids.len() * cols];
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= rows {
                    return Err(Error::shape(
                        "gather_rows",
                        format!("row {} of table {:?}", id, self.value(table).shape()),
                    ));
                }
                out[r * cols..(r + 1) * cols].copy_from_slice(&tv[id * cols..(id + 1) * cols]);
            }
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::matrix(ids.len(), cols, out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Multiplies by a fixed mask (used for inverted dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(Error::shape(
                "mask_mul",
                format!("mask of {} for {:?}", mask.len(), v.shape()),
            ));
        }
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaskMul { x, mask }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean over all elements of (a − b)².
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let n = va.len().max(1) as f64;
        let s = va
            .iter()
            .zip(vb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), rg))
    }

    /// Scalar node whose value and gradient with respect to `x` were computed
    /// externally (used by the dynamic-programming losses).
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(Error::shape(
                "scalar_fn",
                format!("gradient of {} for {:?}", grad.len(), self.value(x).shape()),
            ));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { x, grad }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        n as isize,
                        1,
                        self.value(*b).data(),
                        1,
                        n as isize,
                        ga,
                        1.0,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        self.value(*a).data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        gb,
                        1.0,
                    );
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        n as isize,
                        1,
                        self.value(*b).data(),
                        k as isize,
                        1,
                        ga,
                        1.0,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(
                        n,
                        m,
                        k,
                        g,
                        1,
                        n as isize,
                        self.value(*a).data(),
                        k as isize,
                        1,
                        gb,
                        1.0,
                    );
                }
            }
            Op::AddRowBias(x, bias) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                let n = out.cols();
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let bv = self.value(*b).data();
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let av = self.value(*a).data();
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += f * s);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, s), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, s), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += s * y * (1.0 - y);
                    }
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, s), v) in gx.iter_mut().zip(g).zip(xv) {
                        let sg = sigmoid(*v);
                        *d += s * (sg + v * sg * (1.0 - sg));
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, s), y) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += s * (1.0 - y * y);
                    }
                }
            }
            Op::Softmax(x) => {
                let n = out.cols().max(1);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((dr, gr), yr) in
                        gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let n = out.cols().max(1);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((dr, gr), yr) in
                        gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let total: f64 = gr.iter().sum();
                        for c in 0..n {
                            dr[c] += gr[c] - yr[c].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x).data();
                let n = out.cols();
                let gam = self.value(*gamma).data();
                let rows = mean.len();
                if let Some(gg) = self.slot(grads, *gamma) {
                    for r in 0..rows {
                        for c in 0..n {
                            let xhat = (xv[r * n + c] - mean[r]) * rstd[r];
                            gg[c] += g[r * n + c] * xhat;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0; n];
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..n {
                            dxhat[c] = g[r * n + c] * gam[c];
                            let xhat = (xv[r * n + c] - mean[r]) * rstd[r];
                            m1 += dxhat[c];
                            m2 += dxhat[c] * xhat;
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for c in 0..n {
                            let xhat = (xv[r * n + c] - mean[r]) * rstd[r];
                            gx[r * n + c] += rstd[r] * (dxhat[c] - m1 - xhat * m2);
                        }
                    }
                }
            }
            Op::DepthwiseConv1d { x, w, b } => {
                let (t, c) = (out.shape()[0], out.shape()[1]);
                let k = self.value(*w).shape()[1];
                let pad = (k - 1) / 2;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for i in 0..t {
                        for j in 0..k {
                            let src = i + j;
                            if src < pad || src - pad >= t {
                                continue;
                            }
                            for ch in 0..c {
                                gw[ch * k + j] += g[i * c + ch] * xv[(src - pad) * c + ch];
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..t {
                        for j in 0..k {
                            let src = i + j;
                            if src < pad || src - pad >= t {
                                continue;
                            }
                            for ch in 0..c {
                                gx[(src - pad) * c + ch] += g[i * c + ch] * wv[ch * k + j];
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let npix = geom.oh * geom.ow;
                let kdim = geom.c_in * geom.kh * geom.kw;
                if let Some(gb) = self.slot(grads, *b) {
                    for (co, chunk) in g.chunks(npix).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    // dW (c_out × kdim) += G (c_out × npix) · colsᵀ
                    gemm(
                        geom.c_out,
                        npix,
                        kdim,
                        g,
                        npix as isize,
                        1,
                        cols,
                        1,
                        npix as isize,
                        gw,
                        1.0,
                    );
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; kdim * npix];
                    gemm(
                        kdim,
                        geom.c_out,
                        npix,
                        self.value(*w).data(),
                        1,
                        kdim as isize,
                        g,
                        npix as isize,
                        1,
                        &mut dcols,
                        0.0,
                    );
                    if let Some(gx) = self.slot(grads, *x) {
                        col2im_add(&dcols, geom, gx);
                    }
                }
            }
            Op::ChwToRows(x) => {
                let s = self.value(*x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                if let Some(gx) = self.slot(grads, *x) {
                    for ch in 0..c {
                        for i in 0..h {
                            let src = &g[i * c * w + ch * w..i * c * w + (ch + 1) * w];
                            add_into(&mut gx[(ch * h + i) * w..(ch * h + i + 1) * w], src);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (out.shape()[0], out.shape()[1]);
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).shape()[1];
                let (rows, len) = (out.shape()[0], out.shape()[1]);
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        add_into(
                            &mut gx[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let cols = out.shape()[1];
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(&mut gx[start * cols..start * cols + g.len()], g);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::OuterAdd(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            add_into(
                                &mut ga[i * k..(i + 1) * k],
                                &g[(i * n + j) * k..(i * n + j + 1) * k],
                            );
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            add_into(
                                &mut gb[j * k..(j + 1) * k],
                                &g[(i * n + j) * k..(i * n + j + 1) * k],
                            );
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = out.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(id) = *id {
                            add_into(
                                &mut gt[id * cols..(id + 1) * cols],
                                &g[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                }
            }
            Op::MaskMul { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, s), m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += s * m;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1) as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = 2.0 * g[0] / av.len().max(1) as f64;
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *d += scale * (x - y);
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *d -= scale * (x - y);
                    }
                }
            }
            Op::ScalarFn { x, grad } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(grad).for_each(|(d, s)| *d += g[0] * s);
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let npix = g.oh * g.ow;
    let mut cols = vec![0.0; g.c_in * g.kh * g.kw * npix];
    for ci in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oi in 0..g.oh {
                    let ii = oi * g.stride + ki;
                    if ii < g.pad || ii - g.pad >= g.h {
                        continue;
                    }
                    let src_row =
                        &x[(ci * g.h + ii - g.pad) * g.w..(ci * g.h + ii - g.pad + 1) * g.w];
                    for oj in 0..g.ow {
                        let jj = oj * g.stride + kj;
                        if jj < g.pad || jj - g.pad >= g.w {
                            continue;
                        }
                        dst[oi * g.ow + oj] = src_row[jj - g.pad];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let npix = g.oh * g.ow;
    for ci in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oi in 0..g.oh {
                    let ii = oi * g.stride + ki;
                    if ii < g.pad || ii - g.pad >= g.h {
                        continue;
                    }
                    let base = (ci * g.h + ii - g.pad) * g.w;
                    for oj in 0..g.ow {
                        let jj = oj * g.stride + kj;
                        if jj < g.pad || jj - g.pad >= g.w {
                            continue;
                        }
                        dx[base + jj - g.pad] += src[oi * g.ow + oj];
                    }
                }
            }
        }
    }
}
