//! Z-score normalization with center pad-or-crop, deterministic splitting,
//! and flip/rot90 augmentation applied identically to image and label.

use super::{Dataset, LabelMap, SegmentationSample, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Z-score normalize per channel (std guard 1e-8), then center pad-or-crop
/// to `patch` dims. Padded pixels get image 0 and the ignore label.
pub fn preprocess(sample: &SegmentationSample, patch: (usize, usize)) -> Result<SegmentationSample> {
    let s = sample.image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if h == 0 || w == 0 {
        return Err(Error::DataValidation("empty image".into()));
    }
    let (ph, pw) = patch;

    // Per-channel z-score over the (unpadded) source pixels.
    let mut normalized = sample.image.clone();
    for ci in 0..c {
        let plane = &mut normalized.data_mut()[ci * h * w..(ci + 1) * h * w];
        let n = (h * w) as f64;
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = plane
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-8);
        for v in plane.iter_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }

    // Center pad-or-crop each axis independently.
    let mut out_img = Tensor::zeros(&[c, ph, pw]);
    let mut out_lab = LabelMap::new(ph, pw, vec![IGNORE_LABEL; ph * pw])?;
    // Source window and destination offset per axis.
    let (src_y, dst_y, copy_h) = axis_window(h, ph);
    let (src_x, dst_x, copy_w) = axis_window(w, pw);
    for ci in 0..c {
        for y in 0..copy_h {
            for x in 0..copy_w {
                let v = normalized.data()[(ci * h + src_y + y) * w + src_x + x];
                out_img.data_mut()[(ci * ph + dst_y + y) * pw + dst_x + x] = v;
            }
        }
    }
    for y in 0..copy_h {
        for x in 0..copy_w {
            out_lab.data[(dst_y + y) * pw + dst_x + x] =
                sample.label.data[(src_y + y) * w + src_x + x];
        }
    }
    Ok(SegmentationSample {
        image: out_img,
        label: out_lab,
    })
}

/// (source offset, destination offset, copy length) for one axis.
fn axis_window(src: usize, dst: usize) -> (usize, usize, usize) {
    if src >= dst {
        ((src - dst) / 2, 0, dst)
    } else {
        (0, (dst - src) / 2, src)
    }
}

/// Deterministic shuffle split; |train| = round(ratio * n).
pub fn split_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least 2 samples, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (ratio * n as f64).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let take = |ids: &[usize]| Dataset {
        name: dataset.name.clone(),
        num_classes: dataset.num_classes,
        samples: ids.iter().map(|&i| dataset.samples[i].clone()).collect(),
    };
    Ok((take(&idx[..n_train]), take(&idx[n_train..])))
}

/// Minimal augmentation set, identical across architectures: axis flips and
/// square rot90s. Rotations are skipped on non-square patches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub rot90_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rot90_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            rot90_prob: 0.0,
        }
    }
}

pub fn flip_horizontal(sample: &SegmentationSample) -> SegmentationSample {
    let s = sample.image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut img = sample.image.clone();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                img.data_mut()[(ci * h + y) * w + x] =
                    sample.image.data()[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    let mut lab = sample.label.clone();
    for y in 0..h {
        for x in 0..w {
            lab.data[y * w + x] = sample.label.data[y * w + (w - 1 - x)];
        }
    }
    SegmentationSample { image: img, label: lab }
}

pub fn flip_vertical(sample: &SegmentationSample) -> SegmentationSample {
    let s = sample.image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut img = sample.image.clone();
    for ci in 0..c {
        for y in 0..h {
            let src = (ci * h + (h - 1 - y)) * w;
            let dst = (ci * h + y) * w;
            for x in 0..w {
                img.data_mut()[dst + x] = sample.image.data()[src + x];
            }
        }
    }
    let mut lab = sample.label.clone();
    for y in 0..h {
        for x in 0..w {
            lab.data[y * w + x] = sample.label.data[(h - 1 - y) * w + x];
        }
    }
    SegmentationSample { image: img, label: lab }
}

/// Counter-clockwise quarter turn (square only): out[y][x] = in[x][w-1-y].
pub fn rot90(sample: &SegmentationSample) -> SegmentationSample {
    let s = sample.image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    assert_eq!(h, w, "rot90 requires square patches");
    let mut img = sample.image.clone();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                img.data_mut()[(ci * h + y) * w + x] =
                    sample.image.data()[(ci * h + x) * w + (w - 1 - y)];
            }
        }
    }
    let mut lab = sample.label.clone();
    for y in 0..h {
        for x in 0..w {
            lab.data[y * w + x] = sample.label.data[x * w + (w - 1 - y)];
        }
    }
    SegmentationSample { image: img, label: lab }
}

/// Random flips and rot90s drawn from `rng`.
pub fn augment<R: Rng>(
    sample: &SegmentationSample,
    config: &AugmentConfig,
    rng: &mut R,
) -> SegmentationSample {
    let mut out = sample.clone();
    if config.flip_prob > 0.0 && rng.gen_bool(config.flip_prob) {
        out = flip_horizontal(&out);
    }
    if config.flip_prob > 0.0 && rng.gen_bool(config.flip_prob) {
        out = flip_vertical(&out);
    }
    let s = out.image.shape();
    if s[1] == s[2] && config.rot90_prob > 0.0 && rng.gen_bool(config.rot90_prob) {
        let turns = rng.gen_range(1..4);
        for _ in 0..turns {
            out = rot90(&out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthSpec};
    use crate::testdata::uniform_tensor;

    fn sample(h: usize, w: usize) -> SegmentationSample {
        let image = uniform_tensor::<f32>(&[1, h, w], -2.0, 3.0, 9);
        let label = LabelMap::new(
            h,
            w,
            (0..h * w).map(|i| (i % 3) as u16).collect(),
        )
        .unwrap();
        SegmentationSample { image, label }
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let s = SegmentationSample {
            image: Tensor::full(&[1, 8, 8], 5.0),
            label: LabelMap::zeros(8, 8),
        };
        let p = preprocess(&s, (8, 8)).unwrap();
        assert!(p.image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_stats_are_standard() {
        let s = sample(32, 32);
        let p = preprocess(&s, (32, 32)).unwrap();
        let n = p.image.numel() as f64;
        let mean: f64 = p.image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = p
            .image
            .data()
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 1e-5);
        assert!((var.sqrt() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn center_crop_and_symmetric_pad_arithmetic() {
        // 300 -> 256: crop starting at 22; 200 -> 256: pad 28 per side.
        assert_eq!(axis_window(300, 256), (22, 0, 256));
        assert_eq!(axis_window(200, 256), (0, 28, 200));
        let s = sample(200, 200);
        let p = preprocess(&s, (256, 256)).unwrap();
        assert_eq!(p.image.shape(), &[1, 256, 256]);
        assert_eq!(p.label.at(0, 0), IGNORE_LABEL);
        assert_eq!(p.label.at(28, 28), s.label.at(0, 0));
    }

    #[test]
    fn split_80_20_deterministic_and_disjoint() {
        let ds = generate_synthetic(&SynthSpec::default(), 10, 1).unwrap();
        let (train, val) = split_dataset(&ds, 0.8, 5).unwrap();
        assert_eq!(train.samples.len(), 8);
        assert_eq!(val.samples.len(), 2);
        let (train2, val2) = split_dataset(&ds, 0.8, 5).unwrap();
        for (a, b) in train.samples.iter().zip(&train2.samples) {
            assert_eq!(a.label.data, b.label.data);
        }
        for (a, b) in val.samples.iter().zip(&val2.samples) {
            assert_eq!(a.label.data, b.label.data);
        }
        // Union preserves the pixel multiset of the original.
        let count_pixels = |d: &Dataset| -> usize {
            d.samples.iter().map(|s| s.label.data.len()).sum()
        };
        assert_eq!(count_pixels(&train) + count_pixels(&val), count_pixels(&ds));
    }

    #[test]
    fn split_rejects_singleton() {
        let ds = generate_synthetic(&SynthSpec::default(), 1, 1).unwrap();
        assert!(split_dataset(&ds, 0.8, 0).is_err());
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample(16, 16);
        let f2 = flip_horizontal(&flip_horizontal(&s));
        assert_eq!(f2.label.data, s.label.data);
        assert_eq!(f2.image.data(), s.image.data());
        let v2 = flip_vertical(&flip_vertical(&s));
        assert_eq!(v2.label.data, s.label.data);
    }

    #[test]
    fn rot90_tracks_corner_pixel_and_label_together() {
        let mut s = sample(8, 8);
        s.image.data_mut()[7] = 99.0; // (0, 7)
        s.label.data[7] = 2;
        let r = rot90(&s);
        // out[y][x] = in[x][w-1-y], so in(0,7) lands at out(0,0).
        assert_eq!(r.image.data()[0], 99.0);
        assert_eq!(r.label.data[0], 2);
        // Four turns restore.
        let r4 = rot90(&rot90(&rot90(&r)));
        assert_eq!(r4.label.data, s.label.data);
    }

    #[test]
    fn zero_probability_augment_is_identity() {
        let s = sample(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = augment(&s, &AugmentConfig::none(), &mut rng);
        assert_eq!(a.label.data, s.label.data);
        assert_eq!(a.image.data(), s.image.data());
    }

    #[test]
    fn flips_preserve_pixel_multisets() {
        let s = sample(12, 12);
        let f = flip_horizontal(&s);
        let mut a: Vec<u32> = s.image.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = f.image.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        let mut la = s.label.data.clone();
        let mut lb = f.label.data.clone();
        la.sort_unstable();
        lb.sort_unstable();
        assert_eq!(la, lb);
    }
}
