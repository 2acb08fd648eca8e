//! Metrics, statistical comparison, timing benchmarks, and report emission.

pub mod bench;
pub mod report;
pub mod wilcoxon;

pub use bench::{benchmark_model, TimingRecord};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult};

use crate::data::IGNORE_LABEL;
use crate::error::{Error, Result};

/// Overlap 2|P ∩ G| / (|P| + |G|) for one class; 1.0 when both sets are
/// empty (both agree the class is absent). Ignored pixels are skipped.
pub fn dice_score(pred: &[u16], gt: &[u16], class: u16) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "dice_score",
            format!("{} pixels", gt.len()),
            format!("{} pixels", pred.len()),
        ));
    }
    let mut p = 0usize;
    let mut g = 0usize;
    let mut inter = 0usize;
    for (&pv, &gv) in pred.iter().zip(gt) {
        if gv == IGNORE_LABEL {
            continue;
        }
        let pin = pv == class;
        let gin = gv == class;
        p += pin as usize;
        g += gin as usize;
        inter += (pin && gin) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Mean dice over foreground classes present in the ground truth; when no
/// foreground class is present, falls back to the mean over all foreground
/// classes (each scored with the empty-vs-empty = 1.0 convention).
pub fn mean_foreground_dice(pred: &[u16], gt: &[u16], num_classes: usize) -> Result<f64> {
    let present: Vec<u16> = (1..num_classes as u16)
        .filter(|k| gt.iter().any(|&g| g == *k))
        .collect();
    let classes: Vec<u16> = if present.is_empty() {
        (1..num_classes as u16).collect()
    } else {
        present
    };
    let mut total = 0.0;
    for &k in &classes {
        total += dice_score(pred, gt, k)?;
    }
    Ok(total / classes.len() as f64)
}

/// Per-architecture record of parameters, timing, dice scores, and pairwise
/// significance, mirroring the benchmark tables.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub architecture: String,
    pub preset: String,
    pub param_count: usize,
    pub forward_ms: bench::Stats,
    pub train_step_ms: bench::Stats,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub dtype: String,
    #[serde(default)]
    pub dice_cases: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_masks_score_one() {
        let m = vec![0u16, 1, 1, 2, 0, 1];
        assert_eq!(dice_score(&m, &m, 1).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = vec![1u16, 1, 0, 0];
        let b = vec![0u16, 0, 1, 1];
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_scores_half() {
        // |P| = 4, |G| = 4, |P ∩ G| = 2 -> 2*2/8 = 0.5
        let p = vec![1u16, 1, 1, 1, 0, 0, 0, 0];
        let g = vec![0u16, 0, 1, 1, 1, 1, 0, 0];
        assert_eq!(dice_score(&p, &g, 1).unwrap(), 0.5);
    }

    #[test]
    fn both_empty_is_one_by_convention() {
        let a = vec![0u16, 0];
        assert_eq!(dice_score(&a, &a, 3).unwrap(), 1.0);
    }

    #[test]
    fn dice_is_symmetric_and_relabel_invariant() {
        let a = vec![1u16, 2, 0, 1, 2, 2];
        let b = vec![1u16, 1, 0, 2, 2, 0];
        assert_eq!(
            dice_score(&a, &b, 2).unwrap(),
            dice_score(&b, &a, 2).unwrap()
        );
        // Swap labels 1 <-> 2 consistently in both masks: class 2's score
        // becomes class 1's.
        let swap = |v: &[u16]| -> Vec<u16> {
            v.iter()
                .map(|&x| match x {
                    1 => 2,
                    2 => 1,
                    o => o,
                })
                .collect()
        };
        assert_eq!(
            dice_score(&a, &b, 2).unwrap(),
            dice_score(&swap(&a), &swap(&b), 1).unwrap()
        );
    }

    #[test]
    fn ignored_pixels_are_excluded() {
        let p = vec![1u16, 1, 0];
        let g = vec![1u16, IGNORE_LABEL, 0];
        assert_eq!(dice_score(&p, &g, 1).unwrap(), 2.0 * 1.0 / 2.0);
    }
}
