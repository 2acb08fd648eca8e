//! Segmentation losses: soft dice (batch-aggregated before the ratio) and
//! the weighted dice + cross-entropy combination. Ignored pixels are skipped.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use std::sync::Arc;

pub const DICE_EPS: f64 = 1e-5;

/// One-hot foreground targets and validity mask as constant tensors.
fn dice_constants<T: Scalar>(
    labels: &[u32],
    ignore: u32,
    b: usize,
    k: usize,
    h: usize,
    w: usize,
) -> (Tensor<T>, Tensor<T>) {
    let mut onehot = Tensor::zeros(&[b, k, h, w]);
    let mut mask = Tensor::zeros(&[b, 1, h, w]);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let lab = labels[(bi * h + y) * w + x];
                if lab == ignore {
                    continue;
                }
                mask.set(&[bi, 0, y, x], T::one());
                onehot.set(&[bi, lab as usize, y, x], T::one());
            }
        }
    }
    (onehot, mask)
}

/// 1 - mean over foreground classes of (2 Σ p·g + ε) / (Σ p + Σ g + ε),
/// sums over batch and pixels together, ε = 1e-5.
pub fn soft_dice_loss<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    labels: Arc<Vec<u32>>,
    ignore: u32,
    num_classes: usize,
) -> Result<Var> {
    let s = g.shape(probs).to_vec();
    if s.len() != 4 || s[1] != num_classes {
        return Err(Error::shape(
            "soft_dice_loss",
            format!("(B, {num_classes}, H, W)"),
            format!("{s:?}"),
        ));
    }
    let (b, k, h, w) = (s[0], s[1], s[2], s[3]);
    if labels.len() != b * h * w {
        return Err(Error::shape(
            "soft_dice_loss",
            format!("{} labels", b * h * w),
            format!("{}", labels.len()),
        ));
    }
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    let (onehot, mask) = dice_constants::<T>(&labels, ignore, b, k, h, w);
    let onehot = g.constant(onehot);
    let mask = g.constant(mask);

    let p_valid = g.mul(probs, mask)?;
    let inter = {
        let prod = g.mul(p_valid, onehot)?;
        g.sum_axes(prod, &[0, 2, 3], false)? // (K)
    };
    let psum = g.sum_axes(p_valid, &[0, 2, 3], false)?;
    let gsum = g.sum_axes(onehot, &[0, 2, 3], false)?;

    // Foreground classes only.
    let fg = |g: &mut Graph<T>, v: Var| g.slice(v, &[(1, k)]);
    let inter_fg = fg(g, inter)?;
    let psum_fg = fg(g, psum)?;
    let gsum_fg = fg(g, gsum)?;

    let num = g.affine(inter_fg, 2.0, DICE_EPS)?;
    let den_sum = g.add(psum_fg, gsum_fg)?;
    let den = g.affine(den_sum, 1.0, DICE_EPS)?;
    let ratio = g.div(num, den)?;
    let dice = g.mean_all(ratio)?;
    g.affine(dice, -1.0, 1.0)
}

/// w_dice * soft_dice(softmax(logits)) + w_ce * cross_entropy(logits).
#[allow(clippy::too_many_arguments)]
pub fn combined_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: Arc<Vec<u32>>,
    ignore: u32,
    num_classes: usize,
    w_dice: f64,
    w_ce: f64,
) -> Result<Var> {
    if w_dice < 0.0 || w_ce < 0.0 || (w_dice == 0.0 && w_ce == 0.0) {
        return Err(Error::InvalidArgument(
            "loss weights must be nonnegative and not both zero".into(),
        ));
    }
    let mut total: Option<Var> = None;
    if w_dice > 0.0 {
        let probs = g.softmax(logits, 1)?;
        let dice = soft_dice_loss(g, probs, labels.clone(), ignore, num_classes)?;
        let weighted = g.scale(dice, w_dice)?;
        total = Some(weighted);
    }
    if w_ce > 0.0 {
        let ce = g.cross_entropy(logits, labels, ignore)?;
        let weighted = g.scale(ce, w_ce)?;
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("at least one loss term"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{finite_diff_grad, rel_err_tensors};
    use crate::testdata::uniform_tensor;

    #[test]
    fn perfect_one_hot_probs_give_near_zero_loss() {
        let labels: Vec<u32> = vec![0, 1, 2, 1];
        let mut probs = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        for (i, &l) in labels.iter().enumerate() {
            let (y, x) = (i / 2, i % 2);
            probs.set(&[0, l as usize, y, x], 1.0);
        }
        let mut g = Graph::new();
        let pv = g.constant(probs);
        let loss = soft_dice_loss(&mut g, pv, Arc::new(labels), u32::MAX, 3).unwrap();
        assert!(g.value(loss).item().abs() < 1e-4);
    }

    #[test]
    fn uniform_probs_all_foreground_is_one_third() {
        // K = 2, labels all class 1: dice term = 2*(0.5n)/(0.5n + n) = 2/3.
        let n = 16 * 16;
        let labels: Vec<u32> = vec![1; n];
        let probs = Tensor::<f64>::full(&[1, 2, 16, 16], 0.5);
        let mut g = Graph::new();
        let pv = g.constant(probs);
        let loss = soft_dice_loss(&mut g, pv, Arc::new(labels), u32::MAX, 2).unwrap();
        assert!((g.value(loss).item() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let labels: Arc<Vec<u32>> = Arc::new(vec![0, 1, 2, 1, 0, 2, 65535, 1]);
        let logits = uniform_tensor::<f64>(&[2, 3, 2, 2], -1.0, 1.0, 31);
        let eval = |t: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let lv = g.leaf(t.clone(), true);
            let probs = g.softmax(lv, 1).unwrap();
            let loss = soft_dice_loss(&mut g, probs, labels.clone(), 65535, 3).unwrap();
            g.value(loss).item()
        };
        let fd = finite_diff_grad(&logits, 1e-5, eval);
        let mut g = Graph::new();
        let lv = g.leaf(logits, true);
        let probs = g.softmax(lv, 1).unwrap();
        let loss = soft_dice_loss(&mut g, probs, labels.clone(), 65535, 3).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(rel_err_tensors(grads.of(lv).unwrap(), &fd) < 1e-4);
    }

    #[test]
    fn combined_loss_rejects_zero_weights() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(combined_loss(&mut g, logits, Arc::new(vec![0]), u32::MAX, 2, 0.0, 0.0).is_err());
    }
}
