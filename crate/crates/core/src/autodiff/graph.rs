//! Define-by-run computation graph.
//!
//! Every operation appends a node holding its output and whatever it needs
//! for the backward pass, so node inputs always precede the node and
//! [`Graph::backward`] can walk the node list in reverse.

use std::fmt;

use super::kernels::{
    batch_to_channel_major, channel_major_to_batch, col2im, gemm, im2col, ConvGeom,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    MulConst,
    AddConst,
    AddBias,
    Conv2d,
    ConvTranspose2d,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Clamp,
    BatchNorm2d,
    BatchNorm2dEval,
    Reshape,
    Sum,
    Mean,
    SumPerSample,
    Abs,
    Log,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::MulConst,
        OpKind::AddConst,
        OpKind::AddBias,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Clamp,
        OpKind::BatchNorm2d,
        OpKind::BatchNorm2dEval,
        OpKind::Reshape,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumPerSample,
        OpKind::Abs,
        OpKind::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "elementwise_sub",
            OpKind::Mul => "mul",
            OpKind::MulConst => "elementwise_mul_const",
            OpKind::AddConst => "add_const",
            OpKind::AddBias => "add_bias",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Clamp => "clamp",
            OpKind::BatchNorm2d => "batchnorm2d",
            OpKind::BatchNorm2dEval => "batchnorm2d_eval",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumPerSample => "sum_per_sample",
            OpKind::Abs => "abs",
            OpKind::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        std::iter::once(OpKind::Leaf)
            .chain(OpKind::ALL)
            .find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel batch statistics produced by [`Graph::batchnorm2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the quantity tracked by running averages.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, f64),
    AddConst(Var),
    AddBias {
        x: Var,
        bias: Var,
        channels: usize,
        inner: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cout: usize,
        cols: Option<Vec<f64>>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        /// Geometry of the forward convolution this op is the adjoint of.
        geom: ConvGeom,
        cin: usize,
        xmat: Option<Vec<f64>>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        shape: (usize, usize, usize),
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        shape: (usize, usize, usize),
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Abs(Var),
    Log(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MulConst(..) => OpKind::MulConst,
            Op::AddConst(..) => OpKind::AddConst,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Relu(..) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Clamp(..) => OpKind::Clamp,
            Op::BatchNorm { .. } => OpKind::BatchNorm2d,
            Op::BatchNormEval { .. } => OpKind::BatchNorm2dEval,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::SumPerSample(..) => OpKind::SumPerSample,
            Op::Abs(..) => OpKind::Abs,
            Op::Log(..) => OpKind::Log,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A reverse-mode computation graph over [`Tensor`]s.
///
/// Gradients of leaves accumulate across calls to [`Graph::backward`] until
/// [`Graph::zero_grad`] is called.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

fn as_4d(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0, 0, 0],
        }),
    }
}

/// `(n, c, spatial)` view of an `n×c×…` tensor used by batch norm.
fn channel_view(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0],
        });
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: corrupts the backward rule of `kind` so verification
    /// tooling can be shown to catch a broken operation.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `tensor` as a leaf; its own `requires_grad` flag decides
    /// whether gradients flow into it.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward of {}", op.kind())));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let input = self.value(x);
        let out = Tensor::new(input.shape(), input.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, m, k, n }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("elementwise_sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::MulConst(x, c), |v| v * c)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::AddConst(x), |v| v + c)
    }

    /// Adds a per-channel `bias` (`c`) to `x` (`n×c×…`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let s = tx.shape();
        if s.len() < 2 || tb.shape() != [s[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: s.to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let channels = s[1];
        let inner: usize = s[2..].iter().product();
        let mut data = tx.data().to_vec();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let b = tb.data()[i % channels];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let out = Tensor::new(s, data)?;
        let rg = self.rg(x) || self.rg(bias);
        self.push(
            out,
            Op::AddBias {
                x,
                bias,
                channels,
                inner,
            },
            rg,
        )
    }

    /// Cross-correlation of `x` (`n×cin×h×w`) with `w` (`cout×cin×kh×kw`),
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let xs = as_4d("conv2d", tx)?;
        let ws = as_4d("conv2d", tw)?;
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: tx.shape().to_vec(),
            rhs: tw.shape().to_vec(),
        };
        if ws[1] != xs[1] {
            return Err(mismatch());
        }
        let geom = ConvGeom::new(xs, (ws[2], ws[3]), stride, pad).ok_or_else(mismatch)?;
        let cout = ws[0];
        let cols = im2col(tx.data(), &geom);
        let mut out_cm = vec![0.0; cout * geom.cols()];
        gemm(
            cout,
            geom.rows(),
            geom.cols(),
            tw.data(),
            false,
            &cols,
            false,
            &mut out_cm,
            false,
        );
        let out = channel_major_to_batch(&out_cm, geom.n, cout, geom.ho * geom.wo);
        let out = Tensor::new(&[geom.n, cout, geom.ho, geom.wo], out)?;
        let w_rg = self.rg(w);
        let rg = self.rg(x) || w_rg;
        let cols = w_rg.then_some(cols);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                geom,
                cout,
                cols,
            },
            rg,
        )
    }

    /// Transposed convolution of `x` (`n×cin×h×w`) with `w` (`cin×cout×kh×kw`);
    /// output spatial size is `(h − 1)·stride − 2·pad + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let [n, cin, h, wd] = as_4d("conv_transpose2d", tx)?;
        let ws = as_4d("conv_transpose2d", tw)?;
        let mismatch = || Error::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: tx.shape().to_vec(),
            rhs: tw.shape().to_vec(),
        };
        if ws[0] != cin || stride == 0 {
            return Err(mismatch());
        }
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let ho = ((h - 1) * stride + kh).checked_sub(2 * pad).ok_or_else(mismatch)?;
        let wo = ((wd - 1) * stride + kw).checked_sub(2 * pad).ok_or_else(mismatch)?;
        let geom = ConvGeom::new([n, cout, ho, wo], (kh, kw), stride, pad)
            .filter(|g| g.ho == h && g.wo == wd)
            .ok_or_else(mismatch)?;
        let xmat = batch_to_channel_major(tx.data(), n, cin, h * wd);
        let mut cols = vec![0.0; geom.rows() * geom.cols()];
        gemm(
            geom.rows(),
            cin,
            geom.cols(),
            tw.data(),
            true,
            &xmat,
            false,
            &mut cols,
            false,
        );
        let mut out = vec![0.0; n * cout * ho * wo];
        col2im(&cols, &geom, &mut out);
        let out = Tensor::new(&[n, cout, ho, wo], out)?;
        let w_rg = self.rg(w);
        let rg = self.rg(x) || w_rg;
        let xmat = w_rg.then_some(xmat);
        self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                geom,
                cin,
                xmat,
            },
            rg,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.unary(x, Op::LeakyRelu(x, alpha), |v| if v > 0.0 { v } else { alpha * v })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp engages.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp: lo {lo} > hi {hi}")));
        }
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::NonPositiveLog {
                op: "log",
                value: bad,
            });
        }
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::new(self.value(x).shape(), self.value(x).data().to_vec())?.reshaped(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sums every axis but the first: `n×…` → `n×1`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        let inner = t.numel() / n;
        let data = t.data().chunks(inner).map(|c| c.iter().sum()).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, 1], data)?, Op::SumPerSample(x), rg)
    }

    /// Batch normalisation with batch statistics over `n` and the spatial
    /// axes of an `n×c×…` input; `gamma` and `beta` have shape `c`.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let tx = self.value(x);
        let (n, c, p) = channel_view("batchnorm2d", tx)?;
        self.check_affine("batchnorm2d", gamma, beta, c)?;
        let m = n * p;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, chunk) in tx.data().chunks(p).enumerate() {
            mean[i % c] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for (i, chunk) in tx.data().chunks(p).enumerate() {
            let mu = mean[i % c];
            var[i % c] += chunk.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
        let unbiased: Vec<f64> = if m > 1 {
            var.iter().map(|v| v / (m - 1) as f64).collect()
        } else {
            biased.clone()
        };
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std, c, p);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::new(self.value(x).shape(), out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                shape: (n, c, p),
            },
            rg,
        )?;
        Ok((
            v,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let tx = self.value(x);
        let (n, c, p) = channel_view("batchnorm2d_eval", tx)?;
        self.check_affine("batchnorm2d_eval", gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d_eval",
                lhs: vec![c],
                rhs: vec![running_mean.len(), running_var.len()],
            });
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt())
            .collect();
        let (out, xhat) = self.normalize(x, gamma, beta, running_mean, &inv_std, c, p);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::new(self.value(x).shape(), out)?;
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                shape: (n, c, p),
            },
            rg,
        )
    }

    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for v in [gamma, beta] {
            if self.value(v).shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: vec![c],
                    rhs: self.value(v).shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        c: usize,
        p: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = self.value(x).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for (i, ((src, xh), o)) in data
            .chunks(p)
            .zip(xhat.chunks_mut(p))
            .zip(out.chunks_mut(p))
            .enumerate()
        {
            let ch = i % c;
            for ((s, xh), o) in src.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *xh = (s - mean[ch]) * inv_std[ch];
                *o = g[ch] * *xh + b[ch];
            }
        }
        (out, xhat)
    }

    /// Back-propagates from the scalar `loss`, accumulating into the `grad`
    /// of every leaf that requires it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("backward into a leaf".into()));
                }
                self.nodes[id].value.accumulate_grad(&g);
                continue;
            }
            let kind = self.nodes[id].op.kind();
            let scale = if self.fault == Some(kind) { 1.5 } else { 1.0 };
            for (input, mut contrib) in self.node_backward(id, &g) {
                if scale != 1.0 {
                    contrib.iter_mut().for_each(|v| *v *= scale);
                }
                if !contrib.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("backward of {kind}")));
                }
                accumulate(&mut grads, input, contrib);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to each of its inputs that
    /// requires a gradient.
    fn node_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let out = node.value.data();
        let mut res = Vec::with_capacity(2);
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.rg(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(b), true, &mut ga, false);
                    res.push((a, ga));
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(a), true, g, false, &mut gb, false);
                    res.push((b, gb));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(v) {
                        res.push((v, g.to_vec()));
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.rg(a) {
                    res.push((a, g.to_vec()));
                }
                if self.rg(b) {
                    res.push((b, g.iter().map(|v| -v).collect()));
                }
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    res.push((a, g.iter().zip(val(b)).map(|(g, y)| g * y).collect()));
                }
                if self.rg(b) {
                    res.push((b, g.iter().zip(val(a)).map(|(g, x)| g * x).collect()));
                }
            }
            &Op::MulConst(x, c) => res.push((x, g.iter().map(|v| v * c).collect())),
            &Op::AddConst(x) | &Op::Reshape(x) => res.push((x, g.to_vec())),
            &Op::AddBias {
                x,
                bias,
                channels,
                inner,
            } => {
                if self.rg(x) {
                    res.push((x, g.to_vec()));
                }
                if self.rg(bias) {
                    let mut gb = vec![0.0; channels];
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        gb[i % channels] += chunk.iter().sum::<f64>();
                    }
                    res.push((bias, gb));
                }
            }
            Op::Conv2d {
                x,
                w,
                geom,
                cout,
                cols,
            } => {
                let dmat = batch_to_channel_major(g, geom.n, *cout, geom.ho * geom.wo);
                if self.rg(*w) {
                    let cols = cols.as_ref().expect("conv2d caches columns when weights need grads");
                    let mut gw = vec![0.0; cout * geom.rows()];
                    gemm(*cout, geom.cols(), geom.rows(), &dmat, false, cols, true, &mut gw, false);
                    res.push((*w, gw));
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                    gemm(geom.rows(), *cout, geom.cols(), val(*w), true, &dmat, false, &mut dcols, false);
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    col2im(&dcols, geom, &mut gx);
                    res.push((*x, gx));
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                geom,
                cin,
                xmat,
            } => {
                let dcols = im2col(g, geom);
                if self.rg(*w) {
                    let xmat = xmat.as_ref().expect("conv_transpose2d caches input when weights need grads");
                    let mut gw = vec![0.0; cin * geom.rows()];
                    gemm(*cin, geom.cols(), geom.rows(), xmat, false, &dcols, true, &mut gw, false);
                    res.push((*w, gw));
                }
                if self.rg(*x) {
                    let mut dxmat = vec![0.0; cin * geom.cols()];
                    gemm(*cin, geom.rows(), geom.cols(), val(*w), false, &dcols, false, &mut dxmat, false);
                    let gx = channel_major_to_batch(&dxmat, geom.n, *cin, geom.ho * geom.wo);
                    res.push((*x, gx));
                }
            }
            &Op::Relu(x) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )),
            &Op::LeakyRelu(x, alpha) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { alpha * g })
                    .collect(),
            )),
            &Op::Tanh(x) => res.push((x, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect())),
            &Op::Sigmoid(x) => res.push((x, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect())),
            &Op::Clamp(x, lo, hi) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
                    .collect(),
            )),
            &Op::Abs(x) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(g, &v)| {
                        if v > 0.0 {
                            *g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )),
            &Op::Log(x) => res.push((x, g.iter().zip(val(x)).map(|(g, v)| g / v).collect())),
            &Op::Sum(x) => res.push((x, vec![g[0]; self.value(x).numel()])),
            &Op::Mean(x) => {
                let n = self.value(x).numel();
                res.push((x, vec![g[0] / n as f64; n]));
            }
            &Op::SumPerSample(x) => {
                let t = self.value(x);
                let inner = t.numel() / t.shape()[0];
                let gx = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, inner)).collect();
                res.push((x, gx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                shape: (n, c, p),
            } => {
                let (sum_g, sum_gx) = channel_sums(g, xhat, *c, *p);
                if self.rg(*gamma) {
                    res.push((*gamma, sum_gx.clone()));
                }
                if self.rg(*beta) {
                    res.push((*beta, sum_g.clone()));
                }
                if self.rg(*x) {
                    let gam = val(*gamma);
                    let m = (n * p) as f64;
                    let mut gx = vec![0.0; g.len()];
                    for (i, ((gc, xc), oc)) in g
                        .chunks(*p)
                        .zip(xhat.chunks(*p))
                        .zip(gx.chunks_mut(*p))
                        .enumerate()
                    {
                        let ch = i % c;
                        let k = gam[ch] * inv_std[ch] / m;
                        for ((gv, xv), o) in gc.iter().zip(xc).zip(oc.iter_mut()) {
                            *o = k * (m * gv - sum_g[ch] - xv * sum_gx[ch]);
                        }
                    }
                    res.push((*x, gx));
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                shape: (_, c, p),
            } => {
                if self.rg(*gamma) || self.rg(*beta) {
                    let (sum_g, sum_gx) = channel_sums(g, xhat, *c, *p);
                    if self.rg(*gamma) {
                        res.push((*gamma, sum_gx));
                    }
                    if self.rg(*beta) {
                        res.push((*beta, sum_g));
                    }
                }
                if self.rg(*x) {
                    let gam = val(*gamma);
                    let mut gx = vec![0.0; g.len()];
                    for (i, (gc, oc)) in g.chunks(*p).zip(gx.chunks_mut(*p)).enumerate() {
                        let k = gam[i % c] * inv_std[i % c];
                        gc.iter().zip(oc.iter_mut()).for_each(|(gv, o)| *o = k * gv);
                    }
                    res.push((*x, gx));
                }
            }
        }
        res.retain(|(v, _)| self.rg(*v));
        res
    }
}

fn channel_sums(g: &[f64], xhat: &[f64], c: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (i, (gc, xc)) in g.chunks(p).zip(xhat.chunks(p)).enumerate() {
        sum_g[i % c] += gc.iter().sum::<f64>();
        sum_gx[i % c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
    }
    (sum_g, sum_gx)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
