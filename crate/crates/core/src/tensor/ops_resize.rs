//! Spatial resizing on B×C×H×W maps: integer-scale upsampling and max pooling.

use super::graph::{acc_grad, Graph, Op, Saved, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_4d<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            op,
            "rank-4 (B, C, H, W)".to_string(),
            super::shape::fmt_shape(s),
        ));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Source positions and lerp weights for one upsampled axis
/// (align_corners = false convention).
fn bilinear_axis(out_len: usize, in_len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    let s = scale as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / s - 0.5;
            let clamped = src.max(0.0).min(in_len as f64 - 1.0);
            let lo = clamped.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            let w_hi = clamped - lo as f64;
            (lo, hi, w_hi)
        })
        .collect()
}

impl<T: Scalar> Graph<T> {
    pub fn upsample_nearest(&mut self, x: Var, scale: usize) -> Result<Var> {
        let (b, c, h, w) = check_4d("upsample_nearest", self.value(x))?;
        if scale == 0 {
            return Err(Error::InvalidArgument("upsample scale must be >= 1".into()));
        }
        let (oh, ow) = (h * scale, w * scale);
        let xt = self.value(x);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        for bc in 0..b * c {
            let src = &xt.data()[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out.data_mut()[bc * oh * ow..(bc + 1) * oh * ow];
            for y in 0..oh {
                let sy = y / scale;
                for xo in 0..ow {
                    dst[y * ow + xo] = src[sy * w + xo / scale];
                }
            }
        }
        Ok(self.record(Op::UpsampleNearest { scale }, vec![x.0], out))
    }

    pub(super) fn bw_upsample_nearest(
        &self,
        id: usize,
        scale: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xs = self.values[xi].shape();
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h * scale, w * scale);
        let mut dx = Tensor::zeros(xs);
        for bc in 0..b * c {
            let src = &gout.data()[bc * oh * ow..(bc + 1) * oh * ow];
            let dst = &mut dx.data_mut()[bc * h * w..(bc + 1) * h * w];
            for y in 0..oh {
                let sy = y / scale;
                for xo in 0..ow {
                    dst[sy * w + xo / scale] += src[y * ow + xo];
                }
            }
        }
        acc_grad(grads, xi, dx);
    }

    pub fn upsample_bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        let (b, c, h, w) = check_4d("upsample_bilinear", self.value(x))?;
        if scale == 0 {
            return Err(Error::InvalidArgument("upsample scale must be >= 1".into()));
        }
        let (oh, ow) = (h * scale, w * scale);
        let ys = bilinear_axis(oh, h, scale);
        let xs_map = bilinear_axis(ow, w, scale);
        let xt = self.value(x);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        for bc in 0..b * c {
            let src = &xt.data()[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out.data_mut()[bc * oh * ow..(bc + 1) * oh * ow];
            for (y, &(ylo, yhi, wy)) in ys.iter().enumerate() {
                let wy = T::from_f64(wy);
                for (xo, &(xlo, xhi, wx)) in xs_map.iter().enumerate() {
                    let wx = T::from_f64(wx);
                    let a = src[ylo * w + xlo];
                    let bb = src[ylo * w + xhi];
                    let cc = src[yhi * w + xlo];
                    let d = src[yhi * w + xhi];
                    let top = a + wx * (bb - a);
                    let bot = cc + wx * (d - cc);
                    dst[y * ow + xo] = top + wy * (bot - top);
                }
            }
        }
        Ok(self.record(Op::UpsampleBilinear { scale }, vec![x.0], out))
    }

    pub(super) fn bw_upsample_bilinear(
        &self,
        id: usize,
        scale: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xs = self.values[xi].shape();
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h * scale, w * scale);
        let ys = bilinear_axis(oh, h, scale);
        let xs_map = bilinear_axis(ow, w, scale);
        let mut dx = Tensor::zeros(xs);
        for bc in 0..b * c {
            let src = &gout.data()[bc * oh * ow..(bc + 1) * oh * ow];
            let dst = &mut dx.data_mut()[bc * h * w..(bc + 1) * h * w];
            for (y, &(ylo, yhi, wy)) in ys.iter().enumerate() {
                let wy = T::from_f64(wy);
                for (xo, &(xlo, xhi, wx)) in xs_map.iter().enumerate() {
                    let wx = T::from_f64(wx);
                    let gv = src[y * ow + xo];
                    let one = T::one();
                    dst[ylo * w + xlo] += gv * (one - wy) * (one - wx);
                    dst[ylo * w + xhi] += gv * (one - wy) * wx;
                    dst[yhi * w + xlo] += gv * wy * (one - wx);
                    dst[yhi * w + xhi] += gv * wy * wx;
                }
            }
        }
        acc_grad(grads, xi, dx);
    }

    pub fn max_pool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let (b, c, h, w) = check_4d("max_pool2d", self.value(x))?;
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidArgument("max_pool2d kernel/stride must be >= 1".into()));
        }
        if kh > h || kw > w {
            return Err(Error::shape(
                "max_pool2d",
                format!("kernel <= input ({h}x{w})"),
                format!("{kh}x{kw}"),
            ));
        }
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let xt = self.value(x);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0usize; b * c * oh * ow];
        for bc in 0..b * c {
            let src = &xt.data()[bc * h * w..(bc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = src[oy * sh * w + ox * sw];
                    let mut best_idx = oy * sh * w + ox * sw;
                    for dy in 0..kh {
                        for dxx in 0..kw {
                            let idx = (oy * sh + dy) * w + ox * sw + dxx;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = bc * oh * ow + oy * ow + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = bc * h * w + best_idx;
                }
            }
        }
        Ok(self.record_saved(
            Op::MaxPool2d { kernel, stride },
            vec![x.0],
            out,
            Saved::Argmax(argmax),
        ))
    }

    pub(super) fn bw_max_pool2d(
        &self,
        id: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let argmax = match &self.saved[id] {
            Saved::Argmax(a) => a,
            _ => unreachable!(),
        };
        let mut dx = Tensor::zeros(self.values[xi].shape());
        for (o, &src_idx) in argmax.iter().enumerate() {
            dx.data_mut()[src_idx] += gout.data()[o];
        }
        acc_grad(grads, xi, dx);
    }
}
