//! Layer norm (trailing-axis) and instance norm, with learned affine inputs.

use super::graph::{acc_grad, Graph, Op, Var};
use super::shape::fmt_shape;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Graph<T> {
    /// Layer normalization over the trailing dims covered by gamma's shape.
    /// gamma/beta must share a shape that matches the trailing dims of x.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let gshape = self.shape(gamma).to_vec();
        self.check_same_shape("layer_norm", gamma, beta)?;
        if gshape.len() > xshape.len() || xshape[xshape.len() - gshape.len()..] != gshape[..] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma matching trailing dims of {}", fmt_shape(&xshape)),
                fmt_shape(&gshape),
            ));
        }
        let inner: usize = gshape.iter().product();
        let outer = self.value(x).numel() / inner;
        let epsv = T::from_f64(eps);

        let xt = self.value(x);
        let gm = self.value(gamma);
        let bt = self.value(beta);
        let mut out = Tensor::zeros(&xshape);
        let inv_n = T::from_f64(1.0 / inner as f64);
        for o in 0..outer {
            let src = &xt.data()[o * inner..(o + 1) * inner];
            let dst = &mut out.data_mut()[o * inner..(o + 1) * inner];
            let mut mean = T::zero();
            for &v in src {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv_std = T::one() / (var + epsv).sqrt();
            for i in 0..inner {
                dst[i] = (src[i] - mean) * inv_std * gm.data()[i] + bt.data()[i];
            }
        }
        Ok(self.record(Op::LayerNorm { eps }, vec![x.0, gamma.0, beta.0], out))
    }

    pub(super) fn bw_layer_norm(
        &self,
        id: usize,
        eps: f64,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let ins = &self.nodes[id].inputs;
        let (xi, gi, bi) = (ins[0], ins[1], ins[2]);
        let xt = &self.values[xi];
        let gm = &self.values[gi];
        let inner = gm.numel();
        let outer = xt.numel() / inner;
        let epsv = T::from_f64(eps);
        let inv_n = T::from_f64(1.0 / inner as f64);

        let mut dx = self.wants(xi).then(|| Tensor::zeros(xt.shape()));
        let mut dgamma = self.wants(gi).then(|| Tensor::zeros(gm.shape()));
        let mut dbeta = self.wants(bi).then(|| Tensor::zeros(gm.shape()));

        for o in 0..outer {
            let src = &xt.data()[o * inner..(o + 1) * inner];
            let gy = &gout.data()[o * inner..(o + 1) * inner];
            let mut mean = T::zero();
            for &v in src {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let inv_std = T::one() / (var + epsv).sqrt();

            if let Some(dg) = dgamma.as_mut() {
                for i in 0..inner {
                    let xhat = (src[i] - mean) * inv_std;
                    dg.data_mut()[i] += gy[i] * xhat;
                }
            }
            if let Some(db) = dbeta.as_mut() {
                for i in 0..inner {
                    db.data_mut()[i] += gy[i];
                }
            }
            if let Some(dxt) = dx.as_mut() {
                // dxhat_i = gy_i * gamma_i
                // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for i in 0..inner {
                    let dxhat = gy[i] * gm.data()[i];
                    let xhat = (src[i] - mean) * inv_std;
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                }
                m1 *= inv_n;
                m2 *= inv_n;
                let dst = &mut dxt.data_mut()[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    let dxhat = gy[i] * gm.data()[i];
                    let xhat = (src[i] - mean) * inv_std;
                    dst[i] = inv_std * (dxhat - m1 - xhat * m2);
                }
            }
        }
        if let Some(t) = dx {
            acc_grad(grads, xi, t);
        }
        if let Some(t) = dgamma {
            acc_grad(grads, gi, t);
        }
        if let Some(t) = dbeta {
            acc_grad(grads, bi, t);
        }
    }

    /// Instance norm on B×C×H×W: normalize each (b, c) plane over H×W.
    /// gamma/beta are per-channel (shape [C]).
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        if xshape.len() != 4 {
            return Err(Error::shape(
                "instance_norm",
                "rank-4 (B, C, H, W)".to_string(),
                fmt_shape(&xshape),
            ));
        }
        let (b, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
        self.check_same_shape("instance_norm", gamma, beta)?;
        if self.shape(gamma) != [c] {
            return Err(Error::shape(
                "instance_norm",
                format!("gamma shape [{c}]"),
                fmt_shape(self.shape(gamma)),
            ));
        }
        let hw = h * w;
        let inv_n = T::from_f64(1.0 / hw as f64);
        let epsv = T::from_f64(eps);
        let xt = self.value(x);
        let gm = self.value(gamma);
        let bt = self.value(beta);
        let mut out = Tensor::zeros(&xshape);
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let src = &xt.data()[base..base + hw];
                let dst = &mut out.data_mut()[base..base + hw];
                let mut mean = T::zero();
                for &v in src {
                    mean += v;
                }
                mean *= inv_n;
                let mut var = T::zero();
                for &v in src {
                    let d = v - mean;
                    var += d * d;
                }
                var *= inv_n;
                let inv_std = T::one() / (var + epsv).sqrt();
                let (gc, bc2) = (gm.data()[ci], bt.data()[ci]);
                for i in 0..hw {
                    dst[i] = (src[i] - mean) * inv_std * gc + bc2;
                }
            }
        }
        Ok(self.record(Op::InstanceNorm { eps }, vec![x.0, gamma.0, beta.0], out))
    }

    pub(super) fn bw_instance_norm(
        &self,
        id: usize,
        eps: f64,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let ins = &self.nodes[id].inputs;
        let (xi, gi, bi) = (ins[0], ins[1], ins[2]);
        let xt = &self.values[xi];
        let gm = &self.values[gi];
        let s = xt.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let inv_n = T::from_f64(1.0 / hw as f64);
        let epsv = T::from_f64(eps);

        let mut dx = self.wants(xi).then(|| Tensor::zeros(s));
        let mut dgamma = self.wants(gi).then(|| Tensor::zeros(gm.shape()));
        let mut dbeta = self.wants(bi).then(|| Tensor::zeros(gm.shape()));

        for bi2 in 0..b {
            for ci in 0..c {
                let base = (bi2 * c + ci) * hw;
                let src = &xt.data()[base..base + hw];
                let gy = &gout.data()[base..base + hw];
                let mut mean = T::zero();
                for &v in src {
                    mean += v;
                }
                mean *= inv_n;
                let mut var = T::zero();
                for &v in src {
                    let d = v - mean;
                    var += d * d;
                }
                var *= inv_n;
                let inv_std = T::one() / (var + epsv).sqrt();
                let gc = gm.data()[ci];

                if let Some(dg) = dgamma.as_mut() {
                    let mut s1 = T::zero();
                    for i in 0..hw {
                        s1 += gy[i] * (src[i] - mean) * inv_std;
                    }
                    dg.data_mut()[ci] += s1;
                }
                if let Some(db) = dbeta.as_mut() {
                    let mut s1 = T::zero();
                    for &g in gy {
                        s1 += g;
                    }
                    db.data_mut()[ci] += s1;
                }
                if let Some(dxt) = dx.as_mut() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for i in 0..hw {
                        let dxhat = gy[i] * gc;
                        let xhat = (src[i] - mean) * inv_std;
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    let dst = &mut dxt.data_mut()[base..base + hw];
                    for i in 0..hw {
                        let dxhat = gy[i] * gc;
                        let xhat = (src[i] - mean) * inv_std;
                        dst[i] = inv_std * (dxhat - m1 - xhat * m2);
                    }
                }
            }
        }
        if let Some(t) = dx {
            acc_grad(grads, xi, t);
        }
        if let Some(t) = dgamma {
            acc_grad(grads, gi, t);
        }
        if let Some(t) = dbeta {
            acc_grad(grads, bi, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 8], |i| (i as f64) * 0.7 - 3.0));
        let gamma = g.constant(Tensor::full(&[8], 1.0));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(x, gamma, beta, 1e-6).unwrap();
        for r in 0..2 {
            let vals: Vec<f64> = (0..8).map(|i| g.value(y).at(&[r, i])).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 8.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn instance_norm_constant_plane_goes_to_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 3, 3], 4.0));
        let gamma = g.constant(Tensor::full(&[2], 2.0));
        let beta = g.constant(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let y = g.instance_norm(x, gamma, beta, 1e-5).unwrap();
        assert!((g.value(y).at(&[0, 0, 1, 1]) - 0.5).abs() < 1e-9);
        assert!((g.value(y).at(&[0, 1, 1, 1]) + 0.5).abs() < 1e-9);
    }
}
