//! Patch merging (space-to-depth + projection) and expansion
//! (projection + depth-to-space): the down/up layers of the
//! transformer and state-space stages.

use crate::error::{Error, Result};
use crate::nn::{LayerNormLayer, Linear};
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;

/// (B, C, H, W) -> (B, C*s^2, H/s, W/s); channel layout c*s^2 + i*s + j.
pub fn space_to_depth<T: Scalar>(g: &mut Graph<T>, x: Var, s: usize) -> Result<Var> {
    let sh = g.shape(x).to_vec();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h % s != 0 || w % s != 0 {
        return Err(Error::Divisibility {
            what: format!("space_to_depth input {h}x{w}"),
            required: s,
            got: h,
        });
    }
    let r = g.reshape(x, &[b, c, h / s, s, w / s, s])?;
    let p = g.permute(r, &[0, 1, 3, 5, 2, 4])?;
    g.reshape(p, &[b, c * s * s, h / s, w / s])
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(g: &mut Graph<T>, x: Var, s: usize) -> Result<Var> {
    let sh = g.shape(x).to_vec();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if c % (s * s) != 0 {
        return Err(Error::Divisibility {
            what: format!("depth_to_space channels {c}"),
            required: s * s,
            got: c,
        });
    }
    let cout = c / (s * s);
    let r = g.reshape(x, &[b, cout, s, s, h, w])?;
    let p = g.permute(r, &[0, 1, 4, 2, 5, 3])?;
    g.reshape(p, &[b, cout, h * s, w * s])
}

/// Apply a per-channel function on (B, C, H, W) via a (B, L, C) detour.
fn on_channels_last<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let sh = g.shape(x).to_vec();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let flat = g.reshape(x, &[b, c, h * w])?;
    let seq = g.permute(flat, &[0, 2, 1])?;
    let out = f(g, seq)?;
    let cout = g.shape(out)[2];
    let back = g.permute(out, &[0, 2, 1])?;
    g.reshape(back, &[b, cout, h, w])
}

pub struct PatchMerge<T> {
    pub scale: usize,
    pub norm: Option<LayerNormLayer<T>>,
    pub proj: Linear<T>,
}

impl<T: Scalar> PatchMerge<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        scale: usize,
        rng: &mut R,
    ) -> Self {
        PatchMerge {
            scale,
            norm: Some(LayerNormLayer::new(&format!("{name}.norm"), in_ch * scale * scale)),
            proj: Linear::new(&format!("{name}.proj"), in_ch * scale * scale, out_ch, false, rng),
        }
    }

    /// Norm-free variant with an exact identity projection (round-trip tests).
    pub fn identity(name: &str, in_ch: usize, scale: usize) -> Self {
        PatchMerge {
            scale,
            norm: None,
            proj: Linear::identity(&format!("{name}.proj"), in_ch * scale * scale),
        }
    }

    /// (B, C, H, W) -> (B, C', H/s, W/s).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let packed = space_to_depth(g, x, self.scale)?;
        on_channels_last(g, packed, |g, seq| {
            let n = match &self.norm {
                Some(norm) => norm.forward(g, seq)?,
                None => seq,
            };
            self.proj.forward(g, n)
        })
    }
}

impl<T: Scalar> Parameterized<T> for PatchMerge<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm.visit(f);
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

pub struct PatchExpand<T> {
    pub scale: usize,
    pub norm: Option<LayerNormLayer<T>>,
    pub proj: Linear<T>,
}

impl<T: Scalar> PatchExpand<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        scale: usize,
        rng: &mut R,
    ) -> Self {
        PatchExpand {
            scale,
            norm: Some(LayerNormLayer::new(&format!("{name}.norm"), in_ch)),
            proj: Linear::new(&format!("{name}.proj"), in_ch, out_ch * scale * scale, false, rng),
        }
    }

    pub fn identity(name: &str, in_ch: usize, scale: usize) -> Self {
        PatchExpand {
            scale,
            norm: None,
            proj: Linear::identity(&format!("{name}.proj"), in_ch),
        }
    }

    /// (B, C, H, W) -> (B, C', H*s, W*s).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let projected = on_channels_last(g, x, |g, seq| {
            let n = match &self.norm {
                Some(norm) => norm.forward(g, seq)?,
                None => seq,
            };
            self.proj.forward(g, n)
        })?;
        depth_to_space(g, projected, self.scale)
    }
}

impl<T: Scalar> Parameterized<T> for PatchExpand<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm.visit(f);
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::testdata::uniform_tensor;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn merge_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pm = PatchMerge::<f64>::new("pm", 4, 8, 2, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 4, 8, 8]));
        let y = pm.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[1, 8, 4, 4]);
    }

    #[test]
    fn scale_one_identity_projection_is_identity() {
        let pm = PatchMerge::<f64>::identity("pm", 5, 1);
        let mut g = Graph::new();
        let x = g.constant(uniform_tensor(&[2, 5, 3, 3], -1.0, 1.0, 14));
        let y = pm.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn merge_then_expand_identity_round_trip() {
        let s = 2;
        let pm = PatchMerge::<f64>::identity("pm", 3, s);
        let pe = PatchExpand::<f64>::identity("pe", 3 * s * s, s);
        let mut g = Graph::new();
        let x = g.constant(uniform_tensor(&[2, 3, 6, 6], -1.0, 1.0, 15));
        let merged = pm.forward(&mut g, x).unwrap();
        let back = pe.forward(&mut g, merged).unwrap();
        assert_eq!(g.shape(back), g.shape(x));
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn non_divisible_dims_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let pm = PatchMerge::<f64>::new("pm", 2, 4, 2, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 5, 6]));
        assert!(pm.forward(&mut g, x).is_err());
    }
}
