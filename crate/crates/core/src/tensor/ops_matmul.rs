//! Batched matrix multiply with right-aligned batch broadcasting.

use super::graph::{acc_grad, Graph, Op, Var};
use super::ops_elem::reduce_to_shape;
use super::shape::{fmt_shape, numel, ravel_broadcast, unravel};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// C = A' B' where A' is A with its last two dims optionally transposed
/// (likewise B'). Batch dims broadcast. Accumulation over k runs in
/// increasing k order for every output element.
pub(super) fn bmm<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
) -> Result<Tensor<T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(Error::shape(
            "matmul",
            "rank >= 2".to_string(),
            format!("{} x {}", fmt_shape(ash), fmt_shape(bsh)),
        ));
    }
    let (ar, ac) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (br, bc) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner dims to agree, lhs {}", fmt_shape(ash)),
            fmt_shape(bsh),
        ));
    }
    let k = ka;

    let abatch = &ash[..ash.len() - 2];
    let bbatch = &bsh[..bsh.len() - 2];
    let batch_shape = super::shape::broadcast_shapes("matmul", abatch, bbatch)?;
    let batch_n = numel(&batch_shape);
    let rank = batch_shape.len();

    let mut out_shape = batch_shape.clone();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = vec![T::zero(); batch_n * m * n];

    let a_mat = ar * ac;
    let b_mat = br * bc;
    let mut coords = vec![0usize; rank];
    for bi in 0..batch_n {
        unravel(bi, &batch_shape, &mut coords);
        let a_off = ravel_broadcast(&coords, rank, abatch) * a_mat;
        let b_off = ravel_broadcast(&coords, rank, bbatch) * b_mat;
        let ad = &a.data()[a_off..a_off + a_mat];
        let bd = &b.data()[b_off..b_off + b_mat];
        let od = &mut out[bi * m * n..(bi + 1) * m * n];
        match (ta, tb) {
            (false, false) => {
                // Row-wise axpy: od[i, :] += ad[i, t] * bd[t, :]
                for i in 0..m {
                    let orow = &mut od[i * n..(i + 1) * n];
                    for t in 0..k {
                        let av = ad[i * k + t];
                        let brow = &bd[t * n..(t + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            (false, true) => {
                // Dot of contiguous rows: od[i, j] = ad[i, :] . bd[j, :]
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    for j in 0..n {
                        let brow = &bd[j * k..(j + 1) * k];
                        let mut s = T::zero();
                        for t in 0..k {
                            s += arow[t] * brow[t];
                        }
                        od[i * n + j] = s;
                    }
                }
            }
            (true, false) => {
                // od[i, :] += ad[t, i] * bd[t, :], t outermost keeps k-order fixed.
                for t in 0..k {
                    let arow = &ad[t * m..(t + 1) * m];
                    let brow = &bd[t * n..(t + 1) * n];
                    for i in 0..m {
                        let av = arow[i];
                        let orow = &mut od[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            (true, true) => {
                for i in 0..m {
                    for j in 0..n {
                        let mut s = T::zero();
                        for t in 0..k {
                            s += ad[t * m + i] * bd[j * k + t];
                        }
                        od[i * n + j] = s;
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

impl<T: Scalar> Graph<T> {
    /// Matrix product over the trailing two dims; leading dims broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = bmm(self.value(a), self.value(b), false, false)?;
        Ok(self.record(Op::MatMul, vec![a.0, b.0], v))
    }

    pub(super) fn bw_matmul(&self, id: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let (ai, bi) = (node.inputs[0], node.inputs[1]);
        let a = &self.values[ai];
        let b = &self.values[bi];
        if self.wants(ai) {
            // dA = dC B^T, then fold broadcast batch dims back down.
            let da = bmm(gout, b, false, true).unwrap();
            acc_grad(grads, ai, reduce_to_shape(&da, a.shape()));
        }
        if self.wants(bi) {
            // dB = A^T dC
            let db = bmm(a, gout, true, false).unwrap();
            acc_grad(grads, bi, reduce_to_shape(&db, b.shape()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x3_3x2() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2]);
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn batched_broadcast_against_2d() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[2, 2, 3], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[3, 4], |i| (i as f64) * 0.5));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2, 4]);
        // Spot-check one element: c[1,1,2] = sum_t a[1,1,t]*b[t,2]
        let a_row = [9.0, 10.0, 11.0];
        let b_col = [1.0, 3.0, 5.0];
        let expect: f64 = a_row.iter().zip(&b_col).map(|(x, y)| x * y).sum();
        let c_val = g.value(c).at(&[1, 1, 2]);
        assert!((c_val - expect).abs() < 1e-12);
    }

    #[test]
    fn matmul_gradients_match_formula() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::from_fn(&[2, 3], |i| (i + 1) as f64), true);
        let b = g.leaf(Tensor::from_fn(&[3, 2], |i| (i + 1) as f64 * 0.1), true);
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum_all(c).unwrap();
        let grads = g.backward(loss).unwrap();
        // dA[i,t] = sum_j B[t,j]; dB[t,j] = sum_i A[i,t]
        let da = grads.of(a).unwrap();
        assert!((da.at(&[0, 0]) - 0.3).abs() < 1e-12);
        assert!((da.at(&[1, 2]) - 1.1).abs() < 1e-12);
        let db = grads.of(b).unwrap();
        assert!((db.at(&[0, 0]) - 5.0).abs() < 1e-12);
        assert!((db.at(&[2, 1]) - 9.0).abs() < 1e-12);
    }
}
