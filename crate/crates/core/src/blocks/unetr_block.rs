//! Tokenize -> transformer encoder stack -> progressive conv-transpose
//! decoder, shaped as a resolution-preserving U-block.

use super::Mlp;
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, ConvNormAct, ConvTranspose2dLayer, LayerNormLayer, Linear};
use crate::tensor::{Graph, Param, Parameterized, Scalar, Tensor, Var};
use rand::Rng;

/// Pre-LN transformer layer on (B, L, C).
pub struct TransformerLayer<T> {
    norm1: LayerNormLayer<T>,
    attn: crate::kernels::AttentionWeights<T>,
    norm2: LayerNormLayer<T>,
    mlp: Mlp<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerLayer {
            norm1: LayerNormLayer::new(&format!("{name}.norm1"), dim),
            attn: crate::kernels::AttentionWeights::new(&format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNormLayer::new(&format!("{name}.norm2"), dim),
            mlp: Mlp::new(&format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let n1 = self.norm1.forward(g, x)?;
        let a = self.attn.mhsa(g, n1)?;
        let x = g.add(x, a)?;
        let n2 = self.norm2.forward(g, x)?;
        let m = self.mlp.forward(g, n2)?;
        g.add(x, m)
    }
}

impl<T: Scalar> Parameterized<T> for TransformerLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm1.visit(f);
        self.attn.visit(f);
        self.norm2.visit(f);
        self.mlp.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_mut(f);
        self.attn.visit_mut(f);
        self.norm2.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

/// Fixed sinusoidal position table (1, L, E); parameter-free so the block's
/// size is independent of the input resolution.
pub fn sinusoidal_positions<T: Scalar>(l: usize, e: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[1, l, e]);
    for pos in 0..l {
        for i in 0..e {
            let pair = i / 2;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair as f64 / e as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(&[0, pos, i], T::from_f64(v));
        }
    }
    t
}

pub struct UnetrBlock<T> {
    stem: ConvNormAct<T>,
    tokenizer: Conv2dLayer<T>,
    layers: Vec<TransformerLayer<T>>,
    bottom_proj: Linear<T>,
    skip_proj: Vec<Linear<T>>,
    ups: Vec<ConvTranspose2dLayer<T>>,
    fuses: Vec<ConvNormAct<T>>,
    head: ConvNormAct<T>,
    patch: usize,
}

impl<T: Scalar> UnetrBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        depth: usize,
        scales: &[usize],
        embed: usize,
        heads: usize,
        mlp_ratio: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if depth < 1 || scales.len() != depth || scales[0] != 1 {
            return Err(Error::InvalidArgument(
                "unetr block: depth/scale schedule mismatch".into(),
            ));
        }
        if n_layers < 1 {
            return Err(Error::InvalidArgument(
                "unetr block: needs at least one transformer layer".into(),
            ));
        }
        // Token patch size is 2 per scaling level of the schedule.
        let patch: usize = scales.iter().product();
        let steps = patch.trailing_zeros() as usize; // number of x2 ups
        let stem = ConvNormAct::new(&format!("{name}.stem"), in_ch, out_ch, 1, rng);
        let tokenizer = Conv2dLayer::new(
            &format!("{name}.tokenizer"),
            in_ch,
            embed,
            patch.max(1),
            patch.max(1),
            0,
            1,
            1,
            true,
            rng,
        );
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            layers.push(TransformerLayer::new(
                &format!("{name}.layer{i}"),
                embed,
                heads,
                mlp_ratio,
                rng,
            )?);
        }
        let bottom_proj = Linear::new(&format!("{name}.bottom_proj"), embed, mid_ch, true, rng);
        let mut skip_proj = Vec::new();
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        for s in 0..steps {
            skip_proj.push(Linear::new(
                &format!("{name}.skip_proj{s}"),
                embed,
                mid_ch,
                true,
                rng,
            ));
            ups.push(ConvTranspose2dLayer::new(
                &format!("{name}.up{s}"),
                mid_ch,
                mid_ch,
                2,
                2,
                0,
                true,
                rng,
            ));
            fuses.push(ConvNormAct::new(
                &format!("{name}.fuse{s}"),
                2 * mid_ch,
                mid_ch,
                1,
                rng,
            ));
        }
        let head = ConvNormAct::new(&format!("{name}.head"), mid_ch + out_ch, out_ch, 1, rng);
        Ok(UnetrBlock {
            stem,
            tokenizer,
            layers,
            bottom_proj,
            skip_proj,
            ups,
            fuses,
            head,
            patch: patch.max(1),
        })
    }

    /// (B, L, E) tokens back to a (B, C, Ht, Wt) grid.
    fn to_grid(&self, g: &mut Graph<T>, z: Var, ht: usize, wt: usize) -> Result<Var> {
        let s = g.shape(z).to_vec();
        let (b, _l, c) = (s[0], s[1], s[2]);
        let p = g.permute(z, &[0, 2, 1])?;
        g.reshape(p, &[b, c, ht, wt])
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let sh = g.shape(x).to_vec();
        let (b, _c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Divisibility {
                what: format!("unetr block input {h}x{w}"),
                required: self.patch,
                got: h,
            });
        }
        let (ht, wt) = (h / self.patch, w / self.patch);

        let stem_out = self.stem.forward(g, x)?;
        g.retain_push(&[stem_out]);

        // Tokenize + fixed positions.
        let tok = self.tokenizer.forward(g, x)?;
        let flat = g.reshape(tok, &[b, g.shape(tok)[1], ht * wt])?;
        let mut z = g.permute(flat, &[0, 2, 1])?;
        let pos = g.constant(sinusoidal_positions(ht * wt, g.shape(z)[2]));
        z = g.add(z, pos)?;

        // Encoder stack, keeping one hidden state per upsampling step.
        let steps = self.ups.len();
        let mut taps: Vec<Var> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            z = layer.forward(g, z)?;
            if i + 1 < self.layers.len() && taps.len() < steps {
                taps.push(z);
                g.retain_push(&[z]);
            }
            g.trim(&[z]);
        }
        while taps.len() < steps {
            taps.push(z);
            g.retain_push(&[z]);
        }

        // Decoder: token grid up to full resolution.
        let bottom = self.bottom_proj.forward(g, z)?;
        let mut d = self.to_grid(g, bottom, ht, wt)?;
        g.trim(&[d]);
        for s in 0..steps {
            d = self.ups[s].forward(g, d)?;
            // Deepest tap feeds the first up step; taps live at the token
            // grid, so lift them to d's current resolution.
            let tap = taps[steps - 1 - s];
            let skip_tokens = self.skip_proj[s].forward(g, tap)?;
            let skip_grid = self.to_grid(g, skip_tokens, ht, wt)?;
            let skip_up = g.upsample_nearest(skip_grid, 1 << (s + 1))?;
            let cat = g.concat(&[d, skip_up], 1)?;
            d = self.fuses[s].forward(g, cat)?;
            g.retain_pop();
            g.trim(&[d]);
        }
        debug_assert_eq!(g.shape(d)[2], h);

        let cat = g.concat(&[d, stem_out], 1)?;
        let out = self.head.forward(g, cat)?;
        g.retain_pop(); // stem_out
        g.trim(&[out]);
        Ok(out)
    }
}

impl<T: Scalar> Parameterized<T> for UnetrBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        self.tokenizer.visit(f);
        self.layers.visit(f);
        self.bottom_proj.visit(f);
        self.skip_proj.visit(f);
        self.ups.visit(f);
        self.fuses.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        self.tokenizer.visit_mut(f);
        self.layers.visit_mut(f);
        self.bottom_proj.visit_mut(f);
        self.skip_proj.visit_mut(f);
        self.ups.visit_mut(f);
        self.fuses.visit_mut(f);
        self.head.visit_mut(f);
    }
}
