//! Dropout, sequence reordering, row gather, and the fused cross-entropy op.

use super::graph::{acc_grad, Graph, Op, Saved, Var};
use super::shape::{fmt_shape, strides};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use std::sync::Arc;

impl<T: Scalar> Graph<T> {
    /// Inverted dropout: scales kept activations by 1/(1-p) in train mode,
    /// identity in eval mode. Mask order is drawn from the graph rng.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !self.is_train() || p == 0.0 {
            let v = self.value(x).clone();
            return Ok(self.record(Op::Dropout { p }, vec![x.0], v));
        }
        let n = self.value(x).numel();
        let mask: Vec<bool> = (0..n).map(|_| self.rng.gen::<f64>() >= p).collect();
        let inv = T::from_f64(1.0 / (1.0 - p));
        let xt = self.value(x);
        let data: Vec<T> = xt
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v * inv } else { T::zero() })
            .collect();
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.record_saved(Op::Dropout { p }, vec![x.0], out, Saved::Mask(mask)))
    }

    pub(super) fn bw_dropout(
        &self,
        id: usize,
        p: f64,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let g = match &self.saved[id] {
            Saved::Mask(mask) => {
                let inv = T::from_f64(1.0 / (1.0 - p));
                let data: Vec<T> = gout
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &keep)| if keep { v * inv } else { T::zero() })
                    .collect();
                Tensor::new(gout.shape().to_vec(), data).unwrap()
            }
            _ => gout.clone(),
        };
        acc_grad(grads, xi, g);
    }

    /// Reorder the L axis of a (B, L, C) tensor: out[b,t,c] = x[b, perm[t], c].
    /// perm must be a bijection on 0..L; the adjoint is the inverse reorder.
    pub fn seq_permute(&mut self, x: Var, perm: Arc<Vec<usize>>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(
                "seq_permute",
                "rank-3 (B, L, C)".to_string(),
                fmt_shape(&xs),
            ));
        }
        let (b, l, c) = (xs[0], xs[1], xs[2]);
        if perm.len() != l {
            return Err(Error::shape(
                "seq_permute",
                format!("permutation of length {l}"),
                format!("{}", perm.len()),
            ));
        }
        let xt = self.value(x);
        let mut out = Tensor::zeros(&xs);
        for bi in 0..b {
            for t in 0..l {
                let src = (bi * l + perm[t]) * c;
                let dst = (bi * l + t) * c;
                out.data_mut()[dst..dst + c].copy_from_slice(&xt.data()[src..src + c]);
            }
        }
        Ok(self.record(Op::SeqPermute { perm }, vec![x.0], out))
    }

    pub(super) fn bw_seq_permute(
        &self,
        id: usize,
        perm: &Arc<Vec<usize>>,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xs = self.values[xi].shape();
        let (b, l, c) = (xs[0], xs[1], xs[2]);
        let mut dx = Tensor::zeros(xs);
        for bi in 0..b {
            for t in 0..l {
                let dst = (bi * l + perm[t]) * c;
                let src = (bi * l + t) * c;
                dx.data_mut()[dst..dst + c].copy_from_slice(&gout.data()[src..src + c]);
            }
        }
        acc_grad(grads, xi, dx);
    }

    /// Gather slices along `axis` by (possibly repeating) indices.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: Arc<Vec<usize>>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::shape(
                "index_select",
                format!("axis < {}", xs.len()),
                format!("axis {axis}"),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xs[axis]) {
            return Err(Error::shape(
                "index_select",
                format!("indices < {}", xs[axis]),
                format!("{bad}"),
            ));
        }
        let mut out_shape = xs.clone();
        out_shape[axis] = indices.len();
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let xt = self.value(x);
        let mut out = Tensor::zeros(&out_shape);
        for o in 0..outer {
            for (i, &src_i) in indices.iter().enumerate() {
                let src = (o * xs[axis] + src_i) * inner;
                let dst = (o * indices.len() + i) * inner;
                out.data_mut()[dst..dst + inner]
                    .copy_from_slice(&xt.data()[src..src + inner]);
            }
        }
        Ok(self.record(Op::IndexSelect { axis, indices }, vec![x.0], out))
    }

    pub(super) fn bw_index_select(
        &self,
        id: usize,
        axis: usize,
        indices: &Arc<Vec<usize>>,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xi = self.nodes[id].inputs[0];
        if !self.wants(xi) {
            return;
        }
        let xs = self.values[xi].shape();
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mut dx = Tensor::zeros(xs);
        for o in 0..outer {
            for (i, &dst_i) in indices.iter().enumerate() {
                let dst = (o * xs[axis] + dst_i) * inner;
                let src = (o * indices.len() + i) * inner;
                for k in 0..inner {
                    dx.data_mut()[dst + k] += gout.data()[src + k];
                }
            }
        }
        acc_grad(grads, xi, dx);
    }

    /// Mean over non-ignored pixels of -log softmax(logits)[label].
    /// logits: (B, K, H, W); labels: flat (B*H*W) class ids; `ignore` skips.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<u32>>, ignore: u32) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 4 {
            return Err(Error::shape(
                "cross_entropy",
                "rank-4 logits (B, K, H, W)".to_string(),
                fmt_shape(&ls),
            ));
        }
        let (b, k, h, w) = (ls[0], ls[1], ls[2], ls[3]);
        if labels.len() != b * h * w {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels", b * h * w),
                format!("{}", labels.len()),
            ));
        }
        let st = strides(&ls);
        let lt = self.value(logits).data();
        let mut total = T::zero();
        let mut count = 0usize;
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let lab = labels[(bi * h + y) * w + x];
                    if lab == ignore {
                        continue;
                    }
                    if lab as usize >= k {
                        return Err(Error::DataValidation(format!(
                            "cross_entropy: label {lab} out of range (K = {k}) at (b={bi}, y={y}, x={x})"
                        )));
                    }
                    let base = bi * st[0] + y * st[2] + x * st[3];
                    let mut m = lt[base];
                    for ki in 1..k {
                        m = m.max(lt[base + ki * st[1]]);
                    }
                    let mut denom = T::zero();
                    for ki in 0..k {
                        denom += (lt[base + ki * st[1]] - m).exp();
                    }
                    let lse = m + denom.ln();
                    total += lse - lt[base + lab as usize * st[1]];
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::DataValidation(
                "cross_entropy: every pixel is ignored".into(),
            ));
        }
        let out = Tensor::scalar(total / T::from_f64(count as f64));
        Ok(self.record(Op::CrossEntropy { labels, ignore }, vec![logits.0], out))
    }

    pub(super) fn bw_cross_entropy(
        &self,
        id: usize,
        labels: &Arc<Vec<u32>>,
        ignore: u32,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let li = self.nodes[id].inputs[0];
        if !self.wants(li) {
            return;
        }
        let ls = self.values[li].shape();
        let (b, k, h, w) = (ls[0], ls[1], ls[2], ls[3]);
        let st = strides(ls);
        let lt = self.values[li].data();
        let count = labels.iter().filter(|&&l| l != ignore).count();
        let scale = gout.item() / T::from_f64(count as f64);
        let mut dl = Tensor::zeros(ls);
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let lab = labels[(bi * h + y) * w + x];
                    if lab == ignore {
                        continue;
                    }
                    let base = bi * st[0] + y * st[2] + x * st[3];
                    let mut m = lt[base];
                    for ki in 1..k {
                        m = m.max(lt[base + ki * st[1]]);
                    }
                    let mut denom = T::zero();
                    for ki in 0..k {
                        denom += (lt[base + ki * st[1]] - m).exp();
                    }
                    for ki in 0..k {
                        let p = (lt[base + ki * st[1]] - m).exp() / denom;
                        let ind = if ki == lab as usize { T::one() } else { T::zero() };
                        dl.data_mut()[base + ki * st[1]] = (p - ind) * scale;
                    }
                }
            }
        }
        acc_grad(grads, li, dl);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_mode_dropout_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[4, 4], |i| i as f64));
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn train_mode_dropout_scales_kept_units() {
        let mut g = Graph::<f64>::new().with_train(true).with_seed(7);
        let x = g.constant(Tensor::full(&[1000], 1.0));
        let y = g.dropout(x, 0.25).unwrap();
        let kept = g.value(y).data().iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 600 && kept < 900);
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn seq_permute_inverse_restores_order() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 4, 2], |i| i as f64));
        let perm = Arc::new(vec![2usize, 0, 3, 1]);
        let mut inv = vec![0usize; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let y = g.seq_permute(x, perm).unwrap();
        let back = g.seq_permute(y, Arc::new(inv)).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_k() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        let labels = Arc::new(vec![0u32, 1, 2, 3]);
        let loss = g.cross_entropy(logits, labels, u32::MAX).unwrap();
        assert!((g.value(loss).item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut g = Graph::<f64>::new();
        let margin = 20.0;
        let mut t = Tensor::zeros(&[1, 3, 1, 2]);
        // pixel 0 -> class 1, pixel 1 -> class 2
        t.set(&[0, 1, 0, 0], margin);
        t.set(&[0, 2, 0, 1], margin);
        let logits = g.constant(t);
        let loss = g
            .cross_entropy(logits, Arc::new(vec![1u32, 2]), u32::MAX)
            .unwrap();
        assert!(g.value(loss).item() < 1e-8);
    }

    #[test]
    fn out_of_range_label_is_an_error() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(g
            .cross_entropy(logits, Arc::new(vec![5u32]), u32::MAX)
            .is_err());
    }
}
