//! 2-D convolution (cross-correlation) and transposed convolution.
//!
//! Accumulation per output element runs over (channel, kh, kw) in a fixed
//! loop nest, so results are bit-reproducible across runs and thread counts.

use super::graph::{acc_grad, Graph, Op, Var};
use super::par::par_blocks;
use super::shape::fmt_shape;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(super) struct ConvGeom {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

fn conv_out_dim(input: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
    let eff = d * (k - 1) + 1;
    if input + 2 * p < eff {
        return None;
    }
    Some((input + 2 * p - eff) / s + 1)
}

/// Valid output range along one axis for a fixed kernel tap:
/// positions `o` with 0 <= o*s - p + k*d < len.
fn tap_range(len: usize, out_len: usize, s: usize, p: usize, kd: usize) -> (usize, usize) {
    let off = kd as isize - p as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(s)
    };
    let hi_num = len as isize - 1 - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize) / s + 1;
    (lo.min(out_len), hi.min(out_len))
}

/// out[b,o,oh,ow] = bias[o] + sum_{c,kh,kw} x[b, cbase+c, oh*sh-ph+kh*dh, ow*sw-pw+kw*dw] * w[o,c,kh,kw]
fn conv2d_fwd<T: Scalar>(
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
    threads: usize,
) -> Vec<T> {
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (dh, dw) = g.dilation;
    let cg = g.c / g.groups;
    let og = g.o / g.groups;
    let mut out = vec![T::zero(); g.b * g.o * g.oh * g.ow];
    par_blocks(&mut out, g.oh * g.ow, threads, |bo, plane| {
        let (bi, oi) = (bo / g.o, bo % g.o);
        let grp = oi / og;
        let x_base = bi * g.c * g.h * g.w + grp * cg * g.h * g.w;
        let w_base = oi * cg * g.kh * g.kw;
        if let Some(bs) = bias {
            for v in plane.iter_mut() {
                *v = bs[oi];
            }
        }
        for ci in 0..cg {
            let x_chan = &x[x_base + ci * g.h * g.w..x_base + (ci + 1) * g.h * g.w];
            for kh in 0..g.kh {
                for oy in 0..g.oh {
                    let iy = oy as isize * sh as isize - ph as isize + (kh * dh) as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let x_row = &x_chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let o_row = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                    for kw in 0..g.kw {
                        let wv = wgt[w_base + (ci * g.kh + kh) * g.kw + kw];
                        let (lo, hi) = tap_range(g.w, g.ow, sw, pw, kw * dw);
                        if lo >= hi {
                            continue;
                        }
                        if sw == 1 {
                            let xoff = kw as isize * dw as isize - pw as isize;
                            let xs = &x_row[(lo as isize + xoff) as usize
                                ..(hi as isize - 1 + xoff) as usize + 1];
                            for (ov, &xv) in o_row[lo..hi].iter_mut().zip(xs) {
                                *ov += wv * xv;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox as isize * sw as isize - pw as isize
                                    + (kw * dw) as isize;
                                o_row[ox] += wv * x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// dW[o,c,kh,kw] = sum_{b,oh,ow} dOut[b,o,oh,ow] * x[b, cbase+c, ...]
fn conv2d_dw<T: Scalar>(x: &[T], dout: &[T], g: &ConvGeom, threads: usize) -> Vec<T> {
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (dh, dw) = g.dilation;
    let cg = g.c / g.groups;
    let og = g.o / g.groups;
    let mut dwgt = vec![T::zero(); g.o * cg * g.kh * g.kw];
    par_blocks(&mut dwgt, cg * g.kh * g.kw, threads, |oi, wslab| {
        let grp = oi / og;
        for bi in 0..g.b {
            let x_base = bi * g.c * g.h * g.w + grp * cg * g.h * g.w;
            let do_base = (bi * g.o + oi) * g.oh * g.ow;
            for ci in 0..cg {
                let x_chan = &x[x_base + ci * g.h * g.w..x_base + (ci + 1) * g.h * g.w];
                for kh in 0..g.kh {
                    for oy in 0..g.oh {
                        let iy =
                            oy as isize * sh as isize - ph as isize + (kh * dh) as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let x_row = &x_chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let d_row = &dout[do_base + oy * g.ow..do_base + (oy + 1) * g.ow];
                        for kw in 0..g.kw {
                            let (lo, hi) = tap_range(g.w, g.ow, sw, pw, kw * dw);
                            let mut s = T::zero();
                            for ox in lo..hi {
                                let ix = ox as isize * sw as isize - pw as isize
                                    + (kw * dw) as isize;
                                s += d_row[ox] * x_row[ix as usize];
                            }
                            wslab[(ci * g.kh + kh) * g.kw + kw] += s;
                        }
                    }
                }
            }
        }
    });
    dwgt
}

/// dX scatter: dX[b, c, iy, ix] += w[o,c,kh,kw] * dOut[b,o,oy,ox]
fn conv2d_dx<T: Scalar>(dout: &[T], wgt: &[T], g: &ConvGeom, threads: usize) -> Vec<T> {
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (dh, dw) = g.dilation;
    let cg = g.c / g.groups;
    let og = g.o / g.groups;
    let mut dx = vec![T::zero(); g.b * g.c * g.h * g.w];
    par_blocks(&mut dx, g.c * g.h * g.w, threads, |bi, dx_img| {
        for oi in 0..g.o {
            let grp = oi / og;
            let do_base = (bi * g.o + oi) * g.oh * g.ow;
            let w_base = oi * cg * g.kh * g.kw;
            for ci in 0..cg {
                let dx_chan = &mut dx_img
                    [(grp * cg + ci) * g.h * g.w..(grp * cg + ci + 1) * g.h * g.w];
                for kh in 0..g.kh {
                    for oy in 0..g.oh {
                        let iy =
                            oy as isize * sh as isize - ph as isize + (kh * dh) as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dx_row =
                            &mut dx_chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let d_row = &dout[do_base + oy * g.ow..do_base + (oy + 1) * g.ow];
                        for kw in 0..g.kw {
                            let wv = wgt[w_base + (ci * g.kh + kh) * g.kw + kw];
                            let (lo, hi) = tap_range(g.w, g.ow, sw, pw, kw * dw);
                            if lo >= hi {
                                continue;
                            }
                            if sw == 1 {
                                let xoff = kw as isize * dw as isize - pw as isize;
                                let xs = &mut dx_row[(lo as isize + xoff) as usize
                                    ..(hi as isize - 1 + xoff) as usize + 1];
                                for (xv, &dv) in xs.iter_mut().zip(&d_row[lo..hi]) {
                                    *xv += wv * dv;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox as isize * sw as isize - pw as isize
                                        + (kw * dw) as isize;
                                    dx_row[ix as usize] += wv * d_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

impl<T: Scalar> Graph<T> {
    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
    ) -> Result<ConvGeom> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                op,
                "rank-4 input and weight".to_string(),
                format!("{} / {}", fmt_shape(xs), fmt_shape(ws)),
            ));
        }
        let (b, c, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || c % groups != 0 || o % groups != 0 {
            return Err(Error::Divisibility {
                what: format!("{op}: channels {c} and filters {o}"),
                required: groups.max(1),
                got: c,
            });
        }
        if wc != c / groups {
            return Err(Error::shape(
                op,
                format!("weight in-channels {} (C/groups)", c / groups),
                format!("{wc}"),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: stride/dilation must be >= 1"
            )));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [o] {
                return Err(Error::shape(
                    op,
                    format!("bias shape [{o}]"),
                    fmt_shape(self.shape(bv)),
                ));
            }
        }
        let oh = conv_out_dim(h, kh, stride.0, padding.0, dilation.0);
        let ow = conv_out_dim(wdt, kw, stride.1, padding.1, dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(ConvGeom {
                b,
                c,
                h,
                w: wdt,
                o,
                kh,
                kw,
                oh,
                ow,
                stride,
                padding,
                dilation,
                groups,
            }),
            _ => Err(Error::shape(
                op,
                format!("kernel {kh}x{kw} (dilation {dilation:?}) to fit padded input"),
                format!("input {h}x{wdt} pad {padding:?}"),
            )),
        }
    }

    /// Cross-correlation (no kernel flip). Weight layout (O, C/groups, kh, kw).
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, w, bias, stride, padding, dilation, groups)?;
        let bias_data = bias.map(|bv| self.value(bv).data());
        let out = conv2d_fwd(
            self.value(x).data(),
            self.value(w).data(),
            bias_data,
            &geom,
            self.threads,
        );
        let out = Tensor::new(vec![geom.b, geom.o, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x.0, w.0];
        if let Some(bv) = bias {
            inputs.push(bv.0);
        }
        Ok(self.record(
            Op::Conv2d {
                stride,
                padding,
                dilation,
                groups,
            },
            inputs,
            out,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn bw_conv2d(
        &self,
        id: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let ins = &self.nodes[id].inputs;
        let (xi, wi) = (ins[0], ins[1]);
        let xs = self.values[xi].shape();
        let ws = self.values[wi].shape();
        let geom = ConvGeom {
            b: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kh: ws[2],
            kw: ws[3],
            oh: gout.shape()[2],
            ow: gout.shape()[3],
            stride,
            padding,
            dilation,
            groups,
        };
        if self.wants(xi) {
            let dx = conv2d_dx(gout.data(), self.values[wi].data(), &geom, self.threads);
            acc_grad(grads, xi, Tensor::new(xs.to_vec(), dx).unwrap());
        }
        if self.wants(wi) {
            let dw = conv2d_dw(self.values[xi].data(), gout.data(), &geom, self.threads);
            acc_grad(grads, wi, Tensor::new(ws.to_vec(), dw).unwrap());
        }
        if ins.len() == 3 && self.wants(ins[2]) {
            let mut db = vec![T::zero(); geom.o];
            for bi in 0..geom.b {
                for oi in 0..geom.o {
                    let base = (bi * geom.o + oi) * geom.oh * geom.ow;
                    let mut s = T::zero();
                    for &v in &gout.data()[base..base + geom.oh * geom.ow] {
                        s += v;
                    }
                    db[oi] += s;
                }
            }
            acc_grad(grads, ins[2], Tensor::new(vec![geom.o], db).unwrap());
        }
    }

    /// Adjoint of conv2d in its input. Weight layout (C_in, C_out, kh, kw);
    /// output dims (H-1)*stride - 2*padding + k.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv_transpose2d",
                "rank-4 input and weight".to_string(),
                format!("{} / {}", fmt_shape(xs), fmt_shape(ws)),
            ));
        }
        let (b, cin, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (wci, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wci != cin {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("weight leading dim {cin}"),
                format!("{wci}"),
            ));
        }
        let oh = ((h - 1) * stride.0 + kh).checked_sub(2 * padding.0);
        let ow = ((wdt - 1) * stride.1 + kw).checked_sub(2 * padding.1);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "conv_transpose2d",
                    "positive output dims".to_string(),
                    format!("input {h}x{wdt}, stride {stride:?}, padding {padding:?}"),
                ))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("bias shape [{cout}]"),
                    fmt_shape(self.shape(bv)),
                ));
            }
        }

        // Gather form: out[b,co,y,x] = sum_{ci,kh,kw, (y+p-kh)%s==0} w[ci,co,kh,kw]*in[b,ci,oy,ox]
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        let xt = self.value(x).data();
        let wt = self.value(w).data();
        let bias_data = bias.map(|bv| self.value(bv).data());
        let mut out = vec![T::zero(); b * cout * oh * ow];
        par_blocks(&mut out, oh * ow, self.threads, |bco, plane| {
            let (bi, co) = (bco / cout, bco % cout);
            if let Some(bs) = bias_data {
                for v in plane.iter_mut() {
                    *v = bs[co];
                }
            }
            for ci in 0..cin {
                let x_chan = &xt[(bi * cin + ci) * h * wdt..(bi * cin + ci + 1) * h * wdt];
                for khi in 0..kh {
                    for y in 0..oh {
                        let ynum = y as isize + ph as isize - khi as isize;
                        if ynum < 0 || ynum % sh as isize != 0 {
                            continue;
                        }
                        let oy = (ynum / sh as isize) as usize;
                        if oy >= h {
                            continue;
                        }
                        let x_row = &x_chan[oy * wdt..(oy + 1) * wdt];
                        let o_row = &mut plane[y * ow..(y + 1) * ow];
                        for kwi in 0..kw {
                            let wv = wt[((ci * cout + co) * kh + khi) * kw + kwi];
                            for (xo, &xv) in x_row.iter().enumerate() {
                                let xnum = xo as isize * sw as isize - pw as isize
                                    + kwi as isize;
                                if xnum >= 0 && (xnum as usize) < ow {
                                    o_row[xnum as usize] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        });
        let out = Tensor::new(vec![b, cout, oh, ow], out)?;
        let mut inputs = vec![x.0, w.0];
        if let Some(bv) = bias {
            inputs.push(bv.0);
        }
        Ok(self.record(Op::ConvTranspose2d { stride, padding }, inputs, out))
    }

    pub(super) fn bw_conv_transpose2d(
        &self,
        id: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let ins = &self.nodes[id].inputs;
        let (xi, wi) = (ins[0], ins[1]);
        let xs = self.values[xi].shape();
        let ws = self.values[wi].shape();
        let (b, cin, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[1];
        let (kh, kw) = (ws[2], ws[3]);
        let (goh, gow) = (gout.shape()[2], gout.shape()[3]);

        // dX = conv2d(dOut, W) with W read as (O=C_in, C=C_out, kh, kw).
        let geom = ConvGeom {
            b,
            c: cout,
            h: goh,
            w: gow,
            o: cin,
            kh,
            kw,
            oh: h,
            ow: wdt,
            stride,
            padding,
            dilation: (1, 1),
            groups: 1,
        };
        if self.wants(xi) {
            let dx = conv2d_fwd(gout.data(), self.values[wi].data(), None, &geom, self.threads);
            acc_grad(grads, xi, Tensor::new(xs.to_vec(), dx).unwrap());
        }
        if self.wants(wi) {
            // dW[ci,co,kh,kw] = sum_{b,oy,ox} x[b,ci,oy,ox] * dOut[b,co,oy*s-p+kh, ox*s-p+kw]
            let xt = self.values[xi].data();
            let dt = gout.data();
            let (sh, sw) = stride;
            let (ph, pw) = padding;
            let mut dwgt = vec![T::zero(); cin * cout * kh * kw];
            par_blocks(&mut dwgt, cout * kh * kw, self.threads, |ci, slab| {
                for bi in 0..b {
                    let x_chan = &xt[(bi * cin + ci) * h * wdt..(bi * cin + ci + 1) * h * wdt];
                    for co in 0..cout {
                        let d_chan =
                            &dt[(bi * cout + co) * goh * gow..(bi * cout + co + 1) * goh * gow];
                        for khi in 0..kh {
                            for oy in 0..h {
                                let y = oy as isize * sh as isize - ph as isize + khi as isize;
                                if y < 0 || y >= goh as isize {
                                    continue;
                                }
                                let d_row = &d_chan[y as usize * gow..(y as usize + 1) * gow];
                                let x_row = &x_chan[oy * wdt..(oy + 1) * wdt];
                                for kwi in 0..kw {
                                    let mut s = T::zero();
                                    for (xo, &xv) in x_row.iter().enumerate() {
                                        let xpos = xo as isize * sw as isize - pw as isize
                                            + kwi as isize;
                                        if xpos >= 0 && (xpos as usize) < gow {
                                            s += xv * d_row[xpos as usize];
                                        }
                                    }
                                    slab[(co * kh + khi) * kw + kwi] += s;
                                }
                            }
                        }
                    }
                }
            });
            acc_grad(grads, wi, Tensor::new(ws.to_vec(), dwgt).unwrap());
        }
        if ins.len() == 3 && self.wants(ins[2]) {
            let mut db = vec![T::zero(); cout];
            for bi in 0..b {
                for co in 0..cout {
                    let base = (bi * cout + co) * goh * gow;
                    let mut s = T::zero();
                    for &v in &gout.data()[base..base + goh * gow] {
                        s += v;
                    }
                    db[co] += s;
                }
            }
            acc_grad(grads, ins[2], Tensor::new(vec![cout], db).unwrap());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, (1, 1), (0, 0), (1, 1), 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.3 - 2.0));
        let mut wd = vec![0.0; 9];
        wd[4] = 1.0;
        let w = g.constant(Tensor::new(vec![1, 1, 3, 3], wd).unwrap());
        let y = g.conv2d(x, w, None, (1, 1), (1, 1), (1, 1), 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_transpose_spreads_single_pixel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv_transpose2d(x, w, None, (2, 2), (0, 0)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn group_mismatch_reported() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
        assert!(g.conv2d(x, w, None, (1, 1), (1, 1), (1, 1), 2).is_err());
    }

    #[test]
    fn kernel_larger_than_padded_input_reported() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(g.conv2d(x, w, None, (1, 1), (1, 1), (1, 1), 1).is_err());
    }
}
