//! Reductions and softmax. Accumulation order over the input is row-major
//! flat order, fixed regardless of axis choice.

use super::graph::{acc_grad, Graph, Op, Var};
use super::shape::{fmt_shape, unravel};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn reduced_shape(shape: &[usize], axes: &[usize], keepdims: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (d, &s) in shape.iter().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out.push(1);
            }
        } else {
            out.push(s);
        }
    }
    out
}

/// Map each input flat index to its output flat index under the reduction.
fn out_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let kept: Vec<usize> = (0..rank).filter(|d| !axes.contains(d)).collect();
    let mut coords = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for flat in 0..n {
        unravel(flat, shape, &mut coords);
        let mut o = 0usize;
        for &d in &kept {
            o = o * shape[d] + coords[d];
        }
        map.push(o);
    }
    map
}

impl<T: Scalar> Graph<T> {
    fn check_axes(&self, op: &'static str, x: Var, axes: &[usize]) -> Result<()> {
        let rank = self.shape(x).len();
        for &a in axes {
            if a >= rank {
                return Err(Error::shape(
                    op,
                    format!("axis < {rank}"),
                    format!("axis {a} on {}", fmt_shape(self.shape(x))),
                ));
            }
        }
        Ok(())
    }

    pub fn sum_axes(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.check_axes("sum", x, axes)?;
        let xs = self.value(x);
        let out_shape = reduced_shape(xs.shape(), axes, keepdims);
        let map = out_index_map(xs.shape(), axes);
        let mut out = Tensor::zeros(&out_shape);
        for (i, &v) in xs.data().iter().enumerate() {
            out.data_mut()[map[i]] += v;
        }
        Ok(self.record(
            Op::SumAxes {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![x.0],
            out,
        ))
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.check_axes("mean", x, axes)?;
        let xs = self.value(x);
        let count: usize = axes.iter().map(|&a| xs.shape()[a]).product();
        let inv = T::from_f64(1.0 / count as f64);
        let out_shape = reduced_shape(xs.shape(), axes, keepdims);
        let map = out_index_map(xs.shape(), axes);
        let mut out = Tensor::zeros(&out_shape);
        for (i, &v) in xs.data().iter().enumerate() {
            out.data_mut()[map[i]] += v;
        }
        for v in out.data_mut() {
            *v *= inv;
        }
        Ok(self.record(
            Op::MeanAxes {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![x.0],
            out,
        ))
    }

    /// Reduce every axis to a scalar (shape []).
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum_axes(x, &axes, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean_axes(x, &axes, false)
    }

    pub(super) fn bw_reduce(
        &self,
        id: usize,
        axes: &[usize],
        _keepdims: bool,
        mean: bool,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xshape = self.values[xi].shape();
        let count: usize = axes.iter().map(|&a| xshape[a]).product();
        let inv = if mean {
            T::from_f64(1.0 / count as f64)
        } else {
            T::one()
        };
        let map = out_index_map(xshape, axes);
        let mut dx = Tensor::zeros(xshape);
        for (i, slot) in dx.data_mut().iter_mut().enumerate() {
            *slot = gout.data()[map[i]] * inv;
        }
        acc_grad(grads, xi, dx);
    }

    /// Numerically stable softmax along one axis.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axes("softmax", x, &[axis])?;
        let xs = self.value(x);
        let out = softmax_forward(xs, axis);
        Ok(self.record(Op::Softmax { axis }, vec![x.0], out))
    }

    pub(super) fn bw_softmax(
        &self,
        id: usize,
        axis: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let y = &self.values[id];
        let shape = y.shape();
        let mut dx = Tensor::zeros(shape);
        for_each_lane(shape, axis, |offset, stride, len| {
            // s = sum_j dy_j y_j; dx_i = y_i (dy_i - s)
            let mut s = T::zero();
            for i in 0..len {
                let idx = offset + i * stride;
                s += gout.data()[idx] * y.data()[idx];
            }
            for i in 0..len {
                let idx = offset + i * stride;
                dx.data_mut()[idx] = y.data()[idx] * (gout.data()[idx] - s);
            }
        });
        acc_grad(grads, xi, dx);
    }
}

pub(super) fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape());
    for_each_lane(x.shape(), axis, |offset, stride, len| {
        let mut m = x.data()[offset];
        for i in 1..len {
            m = m.max(x.data()[offset + i * stride]);
        }
        let mut denom = T::zero();
        for i in 0..len {
            let e = (x.data()[offset + i * stride] - m).exp();
            out.data_mut()[offset + i * stride] = e;
            denom += e;
        }
        for i in 0..len {
            out.data_mut()[offset + i * stride] /= denom;
        }
    });
    out
}

/// Visit every 1-D lane along `axis`: calls f(start_offset, stride, len).
pub(super) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let strides = super::shape::strides(shape);
    let len = shape[axis];
    let stride = strides[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * stride * len + i, stride, len);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_over_all_axes_of_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3], 1.0));
        let s = g.sum_all(x).unwrap();
        assert_eq!(g.value(s).item(), 6.0);
    }

    #[test]
    fn softmax_symmetry_on_zeros() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[3, 5], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0));
        let y = g.softmax(x, 1).unwrap();
        for r in 0..3 {
            let s: f64 = (0..5).map(|c| g.value(y).at(&[r, c])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_axis_keepdims() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let m = g.mean_axes(x, &[1], true).unwrap();
        assert_eq!(g.shape(m), &[2, 1]);
        assert_eq!(g.value(m).data(), &[2.0, 6.0]);
    }

    #[test]
    fn sum_axis_gradient_broadcasts_back() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let s = g.sum_axes(x, &[0], false).unwrap();
        let w = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let p = g.mul(s, w).unwrap();
        let loss = g.sum_all(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.of(x).unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }
}
