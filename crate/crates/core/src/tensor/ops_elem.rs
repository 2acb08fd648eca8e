//! Elementwise binary (broadcasting) and unary primitives with adjoints.

use super::graph::{acc_grad, Graph, Op, Var};
use super::shape::{broadcast_shapes, numel, ravel_broadcast, unravel};
use super::{Scalar, Tensor};
use crate::error::Result;

fn binary_forward<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        // Fast path, no index arithmetic.
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let rank = out_shape.len();
    let n = numel(&out_shape);
    let mut coords = vec![0usize; rank];
    let mut data = Vec::with_capacity(n);
    for flat in 0..n {
        unravel(flat, &out_shape, &mut coords);
        let av = a.data()[ravel_broadcast(&coords, rank, a.shape())];
        let bv = b.data()[ravel_broadcast(&coords, rank, b.shape())];
        data.push(f(av, bv));
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` (shaped like the broadcast output) back down to `target_shape`.
pub(super) fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, target_shape: &[usize]) -> Tensor<T> {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let rank = grad.rank();
    let mut out = Tensor::zeros(target_shape);
    let mut coords = vec![0usize; rank];
    for flat in 0..grad.numel() {
        unravel(flat, grad.shape(), &mut coords);
        let t = ravel_broadcast(&coords, rank, target_shape);
        out.data_mut()[t] += grad.data()[flat];
    }
    out
}

/// Expand a broadcast operand's value at every output coordinate.
fn gathered<T: Scalar>(src: &Tensor<T>, out_shape: &[usize]) -> Vec<T> {
    let rank = out_shape.len();
    let n = numel(out_shape);
    let mut coords = vec![0usize; rank];
    let mut data = Vec::with_capacity(n);
    for flat in 0..n {
        unravel(flat, out_shape, &mut coords);
        data.push(src.data()[ravel_broadcast(&coords, rank, src.shape())]);
    }
    data
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_forward("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.record(Op::Add, vec![a.0, b.0], v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_forward("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.record(Op::Sub, vec![a.0, b.0], v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_forward("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.record(Op::Mul, vec![a.0, b.0], v))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_forward("div", self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.record(Op::Div, vec![a.0, b.0], v))
    }

    pub(super) fn bw_binary(&self, id: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let (ai, bi) = (node.inputs[0], node.inputs[1]);
        let a = &self.values[ai];
        let b = &self.values[bi];
        let out_shape = gout.shape().to_vec();

        let mut da: Option<Vec<T>> = None;
        let mut db: Option<Vec<T>> = None;
        match node.op {
            Op::Add => {
                if self.wants(ai) {
                    da = Some(gout.data().to_vec());
                }
                if self.wants(bi) {
                    db = Some(gout.data().to_vec());
                }
            }
            Op::Sub => {
                if self.wants(ai) {
                    da = Some(gout.data().to_vec());
                }
                if self.wants(bi) {
                    db = Some(gout.data().iter().map(|&g| -g).collect());
                }
            }
            Op::Mul => {
                if self.wants(ai) {
                    let bvals = gathered(b, &out_shape);
                    da = Some(
                        gout.data()
                            .iter()
                            .zip(&bvals)
                            .map(|(&g, &bv)| g * bv)
                            .collect(),
                    );
                }
                if self.wants(bi) {
                    let avals = gathered(a, &out_shape);
                    db = Some(
                        gout.data()
                            .iter()
                            .zip(&avals)
                            .map(|(&g, &av)| g * av)
                            .collect(),
                    );
                }
            }
            Op::Div => {
                let bvals = gathered(b, &out_shape);
                if self.wants(ai) {
                    da = Some(
                        gout.data()
                            .iter()
                            .zip(&bvals)
                            .map(|(&g, &bv)| g / bv)
                            .collect(),
                    );
                }
                if self.wants(bi) {
                    let avals = gathered(a, &out_shape);
                    db = Some(
                        gout.data()
                            .iter()
                            .zip(avals.iter().zip(&bvals))
                            .map(|(&g, (&av, &bv))| -g * av / (bv * bv))
                            .collect(),
                    );
                }
            }
            _ => unreachable!(),
        }
        if let Some(d) = da {
            let t = Tensor::new(out_shape.clone(), d).unwrap();
            acc_grad(grads, ai, reduce_to_shape(&t, a.shape()));
        }
        if let Some(d) = db {
            let t = Tensor::new(out_shape, d).unwrap();
            acc_grad(grads, bi, reduce_to_shape(&t, b.shape()));
        }
    }
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_scalar<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x / T::from_f64(SQRT_2)).erf())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x / T::from_f64(SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, op: Op, x: Var, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x).map(f);
        self.record(op, vec![x.0], v)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Neg, x, |v| -v))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Exp, x, |v| v.exp()))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Log, x, |v| v.ln()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Sigmoid, x, sigmoid_scalar))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Relu, x, |v| v.max(T::zero())))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        Ok(self.unary(Op::LeakyRelu { slope }, x, move |v| {
            if v >= T::zero() {
                v
            } else {
                s * v
            }
        }))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Gelu, x, gelu_scalar))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Silu, x, |v| v * sigmoid_scalar(v)))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(Op::Softplus, x, softplus_scalar))
    }

    /// y = a*x + b with scalar constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Result<Var> {
        let (av, bv) = (T::from_f64(a), T::from_f64(b));
        Ok(self.unary(Op::Affine { a, b }, x, move |v| av * v + bv))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var> {
        self.affine(x, a, 0.0)
    }

    pub(super) fn bw_unary(&self, id: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let xi = node.inputs[0];
        if !self.wants(xi) {
            return;
        }
        let x = &self.values[xi];
        let y = &self.values[id];
        let data: Vec<T> = match &node.op {
            Op::Neg => gout.data().iter().map(|&g| -g).collect(),
            Op::Exp => gout
                .data()
                .iter()
                .zip(y.data())
                .map(|(&g, &yv)| g * yv)
                .collect(),
            Op::Log => gout
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| g / xv)
                .collect(),
            Op::Sigmoid => gout
                .data()
                .iter()
                .zip(y.data())
                .map(|(&g, &yv)| g * yv * (T::one() - yv))
                .collect(),
            Op::Relu => gout
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| if xv > T::zero() { g } else { T::zero() })
                .collect(),
            Op::LeakyRelu { slope } => {
                let s = T::from_f64(*slope);
                gout.data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &xv)| if xv >= T::zero() { g } else { g * s })
                    .collect()
            }
            Op::Gelu => gout
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| g * gelu_grad_scalar(xv))
                .collect(),
            Op::Silu => gout
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| {
                    let s = sigmoid_scalar(xv);
                    g * (s + xv * s * (T::one() - s))
                })
                .collect(),
            Op::Softplus => gout
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| g * sigmoid_scalar(xv))
                .collect(),
            Op::Affine { a, .. } => {
                let av = T::from_f64(*a);
                gout.data().iter().map(|&g| g * av).collect()
            }
            _ => unreachable!(),
        };
        acc_grad(grads, xi, Tensor::new(x.shape().to_vec(), data).unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_bias() {
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf(Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap(), true);
        let b = g.leaf(Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap(), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.of(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.of(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn incompatible_broadcast_is_an_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn silu_matches_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.silu(x).unwrap();
        for (xv, yv) in [-1.0f64, 0.0, 2.0].iter().zip(g.value(y).data()) {
            let expect = xv / (1.0 + (-xv).exp());
            assert!((yv - expect).abs() < 1e-12);
        }
    }
}
