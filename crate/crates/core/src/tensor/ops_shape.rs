//! Layout primitives: concat, slice, reshape, permute, pad.

use super::graph::{acc_grad, Graph, Op, Var};
use super::shape::{fmt_shape, numel, ravel, strides, unravel};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Graph<T> {
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis < {}", first.len()),
                format!("axis {axis}"),
            ));
        }
        let mut axis_total = 0usize;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &v)| d != axis && v != first[d])
            {
                return Err(Error::shape("concat", fmt_shape(&first), fmt_shape(s)));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        let mut axis_off = 0usize;
        for &x in xs {
            let xs_t = self.value(x);
            let ax = xs_t.shape()[axis];
            for o in 0..outer {
                let src = &xs_t.data()[o * ax * inner..(o + 1) * ax * inner];
                let dst_base = (o * axis_total + axis_off) * inner;
                out.data_mut()[dst_base..dst_base + ax * inner].copy_from_slice(src);
            }
            axis_off += ax;
        }
        Ok(self.record(Op::Concat { axis }, xs.iter().map(|v| v.0).collect(), out))
    }

    pub(super) fn bw_concat(
        &self,
        id: usize,
        axis: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let node = &self.nodes[id];
        let out_shape = gout.shape();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let axis_total = out_shape[axis];
        let mut axis_off = 0usize;
        for &xi in &node.inputs {
            let xshape = self.values[xi].shape();
            let ax = xshape[axis];
            if self.wants(xi) {
                let mut dx = Tensor::zeros(xshape);
                for o in 0..outer {
                    let src_base = (o * axis_total + axis_off) * inner;
                    let dst = &mut dx.data_mut()[o * ax * inner..(o + 1) * ax * inner];
                    dst.copy_from_slice(&gout.data()[src_base..src_base + ax * inner]);
                }
                acc_grad(grads, xi, dx);
            }
            axis_off += ax;
        }
    }

    /// Half-open `[start, end)` range per axis.
    pub fn slice(&mut self, x: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        if ranges.len() != xshape.len() {
            return Err(Error::shape(
                "slice",
                format!("{} ranges", xshape.len()),
                format!("{} ranges", ranges.len()),
            ));
        }
        for (d, &(s, e)) in ranges.iter().enumerate() {
            if s >= e || e > xshape[d] {
                return Err(Error::shape(
                    "slice",
                    format!("0 <= start < end <= {} on axis {d}", xshape[d]),
                    format!("{s}..{e}"),
                ));
            }
        }
        let out_shape: Vec<usize> = ranges.iter().map(|&(s, e)| e - s).collect();
        let xt = self.value(x);
        let xstrides = strides(&xshape);
        let n = numel(&out_shape);
        let mut coords = vec![0usize; out_shape.len()];
        let mut data = Vec::with_capacity(n);
        for flat in 0..n {
            unravel(flat, &out_shape, &mut coords);
            let mut src = 0usize;
            for d in 0..coords.len() {
                src += (coords[d] + ranges[d].0) * xstrides[d];
            }
            data.push(xt.data()[src]);
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.record(
            Op::Slice {
                ranges: ranges.to_vec(),
            },
            vec![x.0],
            out,
        ))
    }

    pub(super) fn bw_slice(
        &self,
        id: usize,
        ranges: &[(usize, usize)],
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xshape = self.values[xi].shape();
        let xstrides = strides(xshape);
        let mut dx = Tensor::zeros(xshape);
        let out_shape = gout.shape();
        let mut coords = vec![0usize; out_shape.len()];
        for flat in 0..gout.numel() {
            unravel(flat, out_shape, &mut coords);
            let mut dst = 0usize;
            for d in 0..coords.len() {
                dst += (coords[d] + ranges[d].0) * xstrides[d];
            }
            dx.data_mut()[dst] = gout.data()[flat];
        }
        acc_grad(grads, xi, dx);
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if numel(shape) != xt.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", xt.numel()),
                fmt_shape(shape),
            ));
        }
        let out = Tensor::new(shape.to_vec(), xt.data().to_vec())?;
        Ok(self.record(Op::Reshape, vec![x.0], out))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let rank = xshape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("permutation of 0..{rank}"),
                format!("{perm:?}"),
            ));
        }
        let out = permute_data(self.value(x), perm);
        Ok(self.record(
            Op::Permute {
                perm: perm.to_vec(),
            },
            vec![x.0],
            out,
        ))
    }

    pub(super) fn bw_permute(
        &self,
        id: usize,
        perm: &[usize],
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        acc_grad(grads, xi, permute_data(gout, &inv));
    }

    /// Constant padding; `pads[d] = (before, after)`.
    pub fn pad(&mut self, x: Var, pads: &[(usize, usize)], value: f64) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        if pads.len() != xshape.len() {
            return Err(Error::shape(
                "pad",
                format!("{} pad pairs", xshape.len()),
                format!("{} pad pairs", pads.len()),
            ));
        }
        let out_shape: Vec<usize> = xshape
            .iter()
            .zip(pads)
            .map(|(&d, &(b, a))| d + b + a)
            .collect();
        let mut out = Tensor::full(&out_shape, T::from_f64(value));
        let xt = self.value(x);
        let out_strides = strides(&out_shape);
        let mut coords = vec![0usize; xshape.len()];
        for flat in 0..xt.numel() {
            unravel(flat, &xshape, &mut coords);
            let mut dst = 0usize;
            for d in 0..coords.len() {
                dst += (coords[d] + pads[d].0) * out_strides[d];
            }
            out.data_mut()[dst] = xt.data()[flat];
        }
        Ok(self.record(
            Op::Pad {
                pads: pads.to_vec(),
                value,
            },
            vec![x.0],
            out,
        ))
    }

    pub(super) fn bw_pad(
        &self,
        id: usize,
        pads: &[(usize, usize)],
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xshape = self.values[xi].shape();
        let out_strides = strides(gout.shape());
        let mut dx = Tensor::zeros(xshape);
        let mut coords = vec![0usize; xshape.len()];
        for flat in 0..dx.numel() {
            unravel(flat, xshape, &mut coords);
            let mut src = 0usize;
            for d in 0..coords.len() {
                src += (coords[d] + pads[d].0) * out_strides[d];
            }
            dx.data_mut()[flat] = gout.data()[src];
        }
        acc_grad(grads, xi, dx);
    }
}

fn permute_data<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let xshape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| xshape[p]).collect();
    let mut out = Tensor::zeros(&out_shape);
    let mut ocoords = vec![0usize; perm.len()];
    let mut icoords = vec![0usize; perm.len()];
    for flat in 0..x.numel() {
        unravel(flat, &out_shape, &mut ocoords);
        for (d, &p) in perm.iter().enumerate() {
            icoords[p] = ocoords[d];
        }
        out.data_mut()[flat] = x.data()[ravel(&icoords, xshape)];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slices_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[2, 2], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[2, 3], |i| 10.0 + i as f64));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 5]);
        let back = g.slice(c, &[(0, 2), (2, 5)]).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
    }

    #[test]
    fn permute_round_trip_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        let back = g.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn pad_then_slice_recovers_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 2], |i| i as f64 + 1.0));
        let p = g.pad(x, &[(1, 1), (2, 0)], 0.0).unwrap();
        assert_eq!(g.shape(p), &[4, 4]);
        assert_eq!(g.value(p).at(&[0, 0]), 0.0);
        let back = g.slice(p, &[(1, 3), (2, 4)]).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn slice_rejects_empty_range() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3]));
        assert!(g.slice(x, &[(2, 2)]).is_err());
    }
}
