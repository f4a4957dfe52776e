//! Central finite-difference verification of analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, OpKind, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default step for central differences in 64-bit arithmetic.
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Acceptance threshold on the maximum relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Relative error used throughout: `|a − n| / max(1e−8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(builder: &F, input: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(input.clone())?;
    let loss = builder(&mut g, x)?;
    g.value(loss).item()
}

/// Compares the gradient of `builder` at `input` with central differences
/// of step `eps` and returns the maximum relative error over coordinates.
pub fn grad_check<F>(builder: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_with(builder, input, eps, None)
}

pub(crate) fn grad_check_with<F>(
    builder: F,
    input: &Tensor,
    eps: f64,
    fault: Option<OpKind>,
) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check: eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    if let Some(kind) = fault {
        g.inject_fault(kind);
    }
    let x = g.param(input.clone())?;
    let loss = builder(&mut g, x)?;
    let base = g.value(loss).item()?;
    g.backward(loss)?;
    let analytic = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.numel()]);

    let again = evaluate(&builder, input)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut probe = input.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = evaluate(&builder, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = evaluate(&builder, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Outcome of checking one operation kind over many random points.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub checks: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, so kinks at the origin are never crossed
/// by a finite-difference probe.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Projects an arbitrary output onto a scalar with fixed random weights so
/// every output coordinate contributes a distinct gradient.
fn project(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone())?;
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

type Builder = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Random test cases for one op kind: `(builder, input)` pairs, one per
/// differentiable argument.
fn cases(kind: OpKind, rng: &mut ChaCha8Rng) -> Vec<(Builder, Tensor)> {
    let d = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| rng.random_range(lo..=hi);
    let mut out: Vec<(Builder, Tensor)> = Vec::new();
    macro_rules! single {
        ($input:expr, $out_shape:expr, |$g:ident, $x:ident| $body:expr) => {{
            let input = $input;
            let weights = uniform(rng, &$out_shape, -1.0, 1.0);
            out.push((
                Box::new(move |$g: &mut Graph, $x: Var| {
                    let y = $body?;
                    project($g, y, &weights)
                }),
                input,
            ));
        }};
    }
    macro_rules! pair {
        ($a:expr, $b:expr, $out_shape:expr, |$g:ident, $x:ident, $y:ident| $body:expr) => {{
            let (a, b) = ($a, $b);
            let weights = uniform(rng, &$out_shape, -1.0, 1.0);
            let (fixed_b, w1) = (b.clone(), weights.clone());
            out.push((
                Box::new(move |$g: &mut Graph, $x: Var| {
                    let $y = $g.constant(fixed_b.clone())?;
                    let r = $body?;
                    project($g, r, &w1)
                }),
                a.clone(),
            ));
            out.push((
                Box::new(move |$g: &mut Graph, $y: Var| {
                    let $x = $g.constant(a.clone())?;
                    let r = $body?;
                    project($g, r, &weights)
                }),
                b,
            ));
        }};
    }
    match kind {
        OpKind::Leaf => {}
        OpKind::MatMul => {
            let (m, k, n) = (d(rng, 1, 4), d(rng, 1, 5), d(rng, 1, 4));
            let a = uniform(rng, &[m, k], -1.0, 1.0);
            let b = uniform(rng, &[k, n], -1.0, 1.0);
            pair!(a, b, [m, n], |g, x, y| g.matmul(x, y));
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let shape = [d(rng, 1, 3), d(rng, 1, 4)];
            let a = uniform(rng, &shape, -1.0, 1.0);
            let b = uniform(rng, &shape, -1.0, 1.0);
            match kind {
                OpKind::Add => pair!(a, b, shape, |g, x, y| g.add(x, y)),
                OpKind::Sub => pair!(a, b, shape, |g, x, y| g.sub(x, y)),
                _ => pair!(a, b, shape, |g, x, y| g.mul(x, y)),
            }
        }
        OpKind::MulConst => {
            let shape = [d(rng, 1, 3), d(rng, 1, 4)];
            let c = rng.random_range(-2.0..2.0);
            single!(uniform(rng, &shape, -1.0, 1.0), shape, |g, x| g.mul_const(x, c));
        }
        OpKind::AddConst => {
            let shape = [d(rng, 1, 3), d(rng, 1, 4)];
            let c = rng.random_range(-2.0..2.0);
            single!(uniform(rng, &shape, -1.0, 1.0), shape, |g, x| g.add_const(x, c));
        }
        OpKind::AddBias => {
            let shape = [d(rng, 1, 2), d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3)];
            let a = uniform(rng, &shape, -1.0, 1.0);
            let b = uniform(rng, &[shape[1]], -1.0, 1.0);
            pair!(a, b, shape, |g, x, y| g.add_bias(x, y));
        }
        OpKind::Conv2d => {
            let (n, cin, cout) = (d(rng, 1, 2), d(rng, 1, 3), d(rng, 1, 3));
            let (h, w) = (d(rng, 3, 6), d(rng, 3, 6));
            let k = d(rng, 1, 3);
            let (stride, pad) = (d(rng, 1, 2), d(rng, 0, 1));
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            let x = uniform(rng, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(rng, &[cout, cin, k, k], -1.0, 1.0);
            pair!(x, wt, [n, cout, ho, wo], |g, x, y| g.conv2d(x, y, stride, pad));
        }
        OpKind::ConvTranspose2d => {
            let (n, cin, cout) = (d(rng, 1, 2), d(rng, 1, 3), d(rng, 1, 3));
            let (h, w) = (d(rng, 2, 4), d(rng, 2, 4));
            let (k, stride, pad) = *[(4, 2, 1), (3, 1, 1), (3, 2, 0), (2, 2, 0)]
                .get(rng.random_range(0..4))
                .unwrap();
            let ho = (h - 1) * stride + k - 2 * pad;
            let wo = (w - 1) * stride + k - 2 * pad;
            let x = uniform(rng, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(rng, &[cin, cout, k, k], -1.0, 1.0);
            pair!(x, wt, [n, cout, ho, wo], |g, x, y| g.conv_transpose2d(x, y, stride, pad));
        }
        OpKind::Relu => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(away_from_zero(rng, &shape), shape, |g, x| g.relu(x));
        }
        OpKind::LeakyRelu => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(away_from_zero(rng, &shape), shape, |g, x| g.leaky_relu(x, 0.2));
        }
        OpKind::Tanh => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(uniform(rng, &shape, -2.0, 2.0), shape, |g, x| g.tanh(x));
        }
        OpKind::Sigmoid => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(uniform(rng, &shape, -3.0, 3.0), shape, |g, x| g.sigmoid(x));
        }
        OpKind::Clamp => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            // Keep probes off the clamp boundaries at ±0.5.
            let input = Tensor::from_fn(&shape, |_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if (v.abs() - 0.5).abs() < 0.01 {
                    v * 0.9
                } else {
                    v
                }
            });
            single!(input, shape, |g, x| g.clamp(x, -0.5, 0.5));
        }
        OpKind::BatchNorm2d => {
            let shape = [d(rng, 2, 3), d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3)];
            let c = shape[1];
            let x = uniform(rng, &shape, -1.0, 1.0);
            let gamma = uniform(rng, &[c], 0.5, 1.5);
            let beta = uniform(rng, &[c], -0.5, 0.5);
            let (b1, g2, w1) = (beta.clone(), gamma.clone(), uniform(rng, &shape, -1.0, 1.0));
            let (xa, ba) = (x.clone(), beta.clone());
            let (xb, gb) = (x.clone(), gamma.clone());
            let (w2, w3) = (w1.clone(), w1.clone());
            out.push((
                Box::new(move |g: &mut Graph, v: Var| {
                    let gm = g.constant(g2.clone())?;
                    let bt = g.constant(b1.clone())?;
                    let (y, _) = g.batchnorm2d(v, gm, bt)?;
                    project(g, y, &w1)
                }),
                x,
            ));
            out.push((
                Box::new(move |g: &mut Graph, v: Var| {
                    let xv = g.constant(xa.clone())?;
                    let bt = g.constant(ba.clone())?;
                    let (y, _) = g.batchnorm2d(xv, v, bt)?;
                    project(g, y, &w2)
                }),
                gamma,
            ));
            out.push((
                Box::new(move |g: &mut Graph, v: Var| {
                    let xv = g.constant(xb.clone())?;
                    let gm = g.constant(gb.clone())?;
                    let (y, _) = g.batchnorm2d(xv, gm, v)?;
                    project(g, y, &w3)
                }),
                beta,
            ));
        }
        OpKind::BatchNorm2dEval => {
            let shape = [d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3)];
            let c = shape[1];
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
            let x = uniform(rng, &shape, -1.0, 1.0);
            let gamma = uniform(rng, &[c], 0.5, 1.5);
            let beta = uniform(rng, &[c], -0.5, 0.5);
            let weights = uniform(rng, &shape, -1.0, 1.0);
            for which in 0..3 {
                let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
                let (mean, var, weights) = (mean.clone(), var.clone(), weights.clone());
                let input = [&x, &gamma, &beta][which].clone();
                out.push((
                    Box::new(move |g: &mut Graph, v: Var| {
                        let mut args = [None; 3];
                        args[which] = Some(v);
                        let mut get = |i: usize, t: &Tensor| match args[i] {
                            Some(v) => Ok(v),
                            None => g.constant(t.clone()),
                        };
                        let xv = get(0, &x)?;
                        let gm = get(1, &gamma)?;
                        let bt = get(2, &beta)?;
                        let y = g.batchnorm2d_eval(xv, gm, bt, &mean, &var)?;
                        project(g, y, &weights)
                    }),
                    input,
                ));
            }
        }
        OpKind::Reshape => {
            let (a, b, c) = (d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3));
            single!(uniform(rng, &[a, b, c], -1.0, 1.0), [a * b, c], |g, x| g.reshape(x, &[a * b, c]));
        }
        OpKind::Sum => {
            let shape = [d(rng, 1, 3), d(rng, 1, 4)];
            single!(uniform(rng, &shape, -1.0, 1.0), [1], |g, x| g.sum(x));
        }
        OpKind::Mean => {
            let shape = [d(rng, 1, 3), d(rng, 1, 4)];
            single!(uniform(rng, &shape, -1.0, 1.0), [1], |g, x| g.mean(x));
        }
        OpKind::SumPerSample => {
            let shape = [d(rng, 1, 3), d(rng, 1, 3), d(rng, 1, 3)];
            single!(uniform(rng, &shape, -1.0, 1.0), [shape[0], 1], |g, x| g.sum_per_sample(x));
        }
        OpKind::Abs => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(away_from_zero(rng, &shape), shape, |g, x| g.abs(x));
        }
        OpKind::Log => {
            let shape = [d(rng, 1, 3), d(rng, 1, 5)];
            single!(uniform(rng, &shape, 0.2, 2.0), shape, |g, x| g.log(x));
        }
    }
    out
}

/// Checks one op kind at `points` random configurations.
pub fn check_op(kind: OpKind, points: usize, seed: u64, fault: Option<OpKind>) -> Result<OpCheck> {
    let mut rng = crate::rng::stream(seed, kind.name());
    let mut worst = 0.0f64;
    let mut checks = 0;
    for _ in 0..points {
        for (builder, input) in cases(kind, &mut rng) {
            worst = worst.max(grad_check_with(builder, &input, GRAD_CHECK_EPS, fault)?);
            checks += 1;
        }
    }
    Ok(OpCheck {
        op: kind.name().to_string(),
        checks,
        max_relative_error: worst,
        passed: worst < GRAD_CHECK_TOL,
    })
}

/// Runs [`check_op`] over every registered operation.
pub fn check_all_ops(points: usize, seed: u64, fault: Option<OpKind>) -> Result<Vec<OpCheck>> {
    OpKind::ALL
        .iter()
        .map(|&kind| check_op(kind, points, seed, fault))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_is_exact() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = grad_check(|g, v| g.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_non_determinism() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let res = grad_check(
            |g, v| {
                calls.set(calls.get() + 1.0);
                let s = g.sum(v)?;
                g.add_const(s, calls.get())
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonDeterministic { .. })));
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|g, v| g.sum(v), &x, 0.0).is_err());
    }

    #[test]
    fn every_op_passes_a_few_points() {
        for check in check_all_ops(3, 11, None).unwrap() {
            assert!(check.passed, "{check:?}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let check = check_op(OpKind::Tanh, 2, 3, Some(OpKind::Tanh)).unwrap();
        assert!(!check.passed);
        let other = check_op(OpKind::Relu, 2, 3, Some(OpKind::Tanh)).unwrap();
        assert!(other.passed);
    }
}
