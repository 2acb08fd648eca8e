//! ReSidual U-blocks: the convolutional U-inside-a-U unit, in the pooled
//! form (RSU) and the dilated resolution-preserving form (RSU-F) used at the
//! deepest stages.

use crate::error::{Error, Result};
use crate::nn::ConvNormAct;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;

pub struct RsuBlock<T> {
    conv_in: ConvNormAct<T>,
    enc: Vec<ConvNormAct<T>>,
    bottom: ConvNormAct<T>,
    dec: Vec<ConvNormAct<T>>, // dec[l] consumes 2*mid at level l
    scales: Vec<usize>,
    pub dilated: bool,
}

impl<T: Scalar> RsuBlock<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        depth: usize,
        scales: &[usize],
        dilated: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if depth < 1 || scales.len() != depth {
            return Err(Error::InvalidArgument(format!(
                "rsu: depth {depth} requires a scale schedule of the same length"
            )));
        }
        if scales[0] != 1 {
            return Err(Error::InvalidArgument(
                "rsu: scale_schedule[0] must be 1 (blocks preserve resolution)".into(),
            ));
        }
        if dilated && scales.iter().any(|&s| s != 1) {
            return Err(Error::InvalidArgument(
                "rsu-f replaces down/upsampling with dilation; schedule must be all ones".into(),
            ));
        }
        let dil = |l: usize| if dilated { 1usize << l } else { 1 };
        let conv_in = ConvNormAct::new(&format!("{name}.conv_in"), in_ch, out_ch, 1, rng);
        let mut enc = Vec::with_capacity(depth);
        for l in 0..depth {
            let ic = if l == 0 { out_ch } else { mid_ch };
            enc.push(ConvNormAct::new(
                &format!("{name}.enc{l}"),
                ic,
                mid_ch,
                dil(l),
                rng,
            ));
        }
        let bottom_dil = if dilated { 1usize << depth } else { 2 };
        let bottom = ConvNormAct::new(&format!("{name}.bottom"), mid_ch, mid_ch, bottom_dil, rng);
        let mut dec = Vec::with_capacity(depth);
        for l in 0..depth {
            let oc = if l == 0 { out_ch } else { mid_ch };
            dec.push(ConvNormAct::new(
                &format!("{name}.dec{l}"),
                2 * mid_ch,
                oc,
                dil(l),
                rng,
            ));
        }
        Ok(RsuBlock {
            conv_in,
            enc,
            bottom,
            dec,
            scales: scales.to_vec(),
            dilated,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let depth = self.enc.len();
        let x_in = self.conv_in.forward(g, x)?;
        g.retain_push(&[x_in]);

        let mut skips: Vec<Var> = Vec::with_capacity(depth);
        let mut h = x_in;
        for l in 0..depth {
            if self.scales[l] > 1 {
                let s = self.scales[l];
                h = g.max_pool2d(h, (s, s), (s, s))?;
            }
            h = self.enc[l].forward(g, h)?;
            skips.push(h);
            g.retain_push(&[h]);
            g.trim(&[h]);
        }
        let mut d = self.bottom.forward(g, h)?;
        g.trim(&[d]);
        for l in (0..depth).rev() {
            let cat = g.concat(&[d, skips[l]], 1)?;
            d = self.dec[l].forward(g, cat)?;
            g.retain_pop(); // release skip l
            if l > 0 && self.scales[l] > 1 {
                d = g.upsample_bilinear(d, self.scales[l])?;
            }
            g.trim(&[d]);
        }
        let out = g.add(d, x_in)?;
        g.retain_pop(); // x_in
        g.trim(&[out]);
        Ok(out)
    }
}

impl<T: Scalar> Parameterized<T> for RsuBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv_in.visit(f);
        self.enc.visit(f);
        self.bottom.visit(f);
        self.dec.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv_in.visit_mut(f);
        self.enc.visit_mut(f);
        self.bottom.visit_mut(f);
        self.dec.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rsu_preserves_resolution_and_maps_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let rsu =
            RsuBlock::<f64>::new("rsu", 3, 4, 8, 4, &[1, 2, 2, 2], false, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 16, 16]));
        let y = rsu.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[1, 8, 16, 16]);
    }

    #[test]
    fn rsu_f_is_resolution_preserving_without_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rsu = RsuBlock::<f64>::new("rsuf", 4, 4, 4, 3, &[1, 1, 1], true, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 8, 8]));
        let y = rsu.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 8, 8]);
    }

    #[test]
    fn rsu_f_rejects_pooling_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        assert!(RsuBlock::<f64>::new("bad", 4, 4, 4, 3, &[1, 2, 2], true, &mut rng).is_err());
    }
}
