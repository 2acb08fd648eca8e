//! Baseline networks: a plain encoder-decoder UNet, UNETR, a Swin-UNet-style
//! transformer, and the Mamba U-Net family (VSS, light single-scan, and
//! GSC+SS2D encoders over a shared CNN decoder).

use crate::blocks::{Mamba1dLayer, PatchStage, SwinLayer, UnetrBlock, VssLayer};
use crate::error::Result;
use crate::kernels::{GatedSpatialConv, PatchExpand, PatchMerge, ScanConfig, TraversalOrder};
use crate::nn::{Conv2dLayer, ConvNormAct, ConvTranspose2dLayer};
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

// --------------------------------------------------------------- plain UNet

/// Fixed-plan 2D encoder-decoder with instance norm + leaky ReLU and
/// transposed-conv upsampling. Deep-supervision heads are not built; the
/// single fused head supervises training.
pub struct PlainUnet<T> {
    enc: Vec<[ConvNormAct<T>; 2]>,
    downs: Vec<Conv2dLayer<T>>,
    ups: Vec<ConvTranspose2dLayer<T>>,
    dec: Vec<[ConvNormAct<T>; 2]>,
    head: Conv2dLayer<T>,
}

impl<T: Scalar> PlainUnet<T> {
    pub fn new<R: Rng>(
        in_ch: usize,
        num_classes: usize,
        features: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let levels = features.len();
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for (l, &f) in features.iter().enumerate() {
            let ic = if l == 0 { in_ch } else { features[l - 1] };
            enc.push([
                ConvNormAct::new(&format!("enc{l}a"), ic, f, 1, rng),
                ConvNormAct::new(&format!("enc{l}b"), f, f, 1, rng),
            ]);
            if l + 1 < levels {
                downs.push(Conv2dLayer::new(
                    &format!("down{l}"),
                    f,
                    f,
                    3,
                    2,
                    1,
                    1,
                    1,
                    true,
                    rng,
                ));
            }
        }
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for l in (0..levels - 1).rev() {
            ups.push(ConvTranspose2dLayer::new(
                &format!("up{l}"),
                features[l + 1],
                features[l],
                2,
                2,
                0,
                true,
                rng,
            ));
            dec.push([
                ConvNormAct::new(&format!("dec{l}a"), 2 * features[l], features[l], 1, rng),
                ConvNormAct::new(&format!("dec{l}b"), features[l], features[l], 1, rng),
            ]);
        }
        let head = Conv2dLayer::new("head", features[0], num_classes, 1, 1, 0, 1, 1, true, rng);
        Ok(PlainUnet {
            enc,
            downs,
            ups,
            dec,
            head,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let levels = self.enc.len();
        let mut skips = Vec::new();
        let mut h = x;
        for l in 0..levels {
            h = self.enc[l][0].forward(g, h)?;
            h = self.enc[l][1].forward(g, h)?;
            if l + 1 < levels {
                skips.push(h);
                g.retain_push(&[h]);
                h = self.downs[l].forward(g, h)?;
            }
            g.trim(&[h]);
        }
        for (i, l) in (0..levels - 1).rev().enumerate() {
            h = self.ups[i].forward(g, h)?;
            let cat = g.concat(&[h, skips[l]], 1)?;
            h = self.dec[i][0].forward(g, cat)?;
            h = self.dec[i][1].forward(g, h)?;
            g.retain_pop();
            g.trim(&[h]);
        }
        self.head.forward(g, h)
    }
}

impl<T: Scalar> Parameterized<T> for PlainUnet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for pair in &self.enc {
            pair[0].visit(f);
            pair[1].visit(f);
        }
        self.downs.visit(f);
        self.ups.visit(f);
        for pair in &self.dec {
            pair[0].visit(f);
            pair[1].visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for pair in &mut self.enc {
            pair[0].visit_mut(f);
            pair[1].visit_mut(f);
        }
        self.downs.visit_mut(f);
        self.ups.visit_mut(f);
        for pair in &mut self.dec {
            pair[0].visit_mut(f);
            pair[1].visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

// ------------------------------------------------------------------- UNETR

/// UNETR is structurally the token U-block run as a whole network with a
/// logits head on top.
pub struct UnetrNet<T> {
    body: UnetrBlock<T>,
    head: Conv2dLayer<T>,
}

impl<T: Scalar> UnetrNet<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_ch: usize,
        num_classes: usize,
        feature_ch: usize,
        decoder_ch: usize,
        embed: usize,
        layers: usize,
        heads: usize,
        mlp_ratio: usize,
        patch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let depth = patch.trailing_zeros() as usize + 1;
        let mut scales = vec![2usize; depth];
        scales[0] = 1;
        // The ViT stack length is independent of the U depth.
        let body = UnetrBlock::new(
            "unetr",
            in_ch,
            decoder_ch,
            feature_ch,
            depth,
            &scales,
            embed,
            heads,
            mlp_ratio,
            layers,
            rng,
        )?;
        let head = Conv2dLayer::new("head", feature_ch, num_classes, 1, 1, 0, 1, 1, true, rng);
        Ok(UnetrNet { body, head })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let f = self.body.forward(g, x)?;
        self.head.forward(g, f)
    }
}

impl<T: Scalar> Parameterized<T> for UnetrNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.body.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.body.visit_mut(f);
        self.head.visit_mut(f);
    }
}

// --------------------------------------------------------------- Swin-UNet

pub struct SwinUnet<T: Scalar> {
    patch_embed: Conv2dLayer<T>,
    enc: Vec<Vec<SwinLayer<T>>>,
    merges: Vec<PatchMerge<T>>,
    bottleneck: Vec<SwinLayer<T>>,
    expands: Vec<PatchExpand<T>>,
    fuses: Vec<Conv2dLayer<T>>,
    dec: Vec<Vec<SwinLayer<T>>>,
    final_expand: PatchExpand<T>,
    head: Conv2dLayer<T>,
}

fn swin_stage<T: Scalar, R: Rng>(
    name: &str,
    dim: usize,
    layers: usize,
    heads: usize,
    window: usize,
    mlp_ratio: usize,
    rng: &mut R,
) -> Result<Vec<SwinLayer<T>>> {
    (0..layers)
        .map(|i| {
            let shift = if i % 2 == 1 { window / 2 } else { 0 };
            SwinLayer::new(&format!("{name}.l{i}"), dim, heads, window, shift, mlp_ratio, rng)
        })
        .collect()
}

impl<T: Scalar> SwinUnet<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_ch: usize,
        num_classes: usize,
        embed: usize,
        depths: &[usize],
        heads: &[usize],
        window: usize,
        mlp_ratio: usize,
        patch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = depths.len();
        let dim = |l: usize| embed << l;
        let patch_embed =
            Conv2dLayer::new("patch_embed", in_ch, embed, patch, patch, 0, 1, 1, true, rng);
        let mut enc = Vec::new();
        let mut merges = Vec::new();
        for l in 0..n - 1 {
            enc.push(swin_stage(
                &format!("enc{l}"),
                dim(l),
                depths[l],
                heads[l],
                window,
                mlp_ratio,
                rng,
            )?);
            merges.push(PatchMerge::new(
                &format!("merge{l}"),
                dim(l),
                dim(l + 1),
                2,
                rng,
            ));
        }
        let bottleneck = swin_stage(
            "bottleneck",
            dim(n - 1),
            depths[n - 1],
            heads[n - 1],
            window,
            mlp_ratio,
            rng,
        )?;
        let mut expands = Vec::new();
        let mut fuses = Vec::new();
        let mut dec = Vec::new();
        for l in (0..n - 1).rev() {
            expands.push(PatchExpand::new(
                &format!("expand{l}"),
                dim(l + 1),
                dim(l),
                2,
                rng,
            ));
            fuses.push(Conv2dLayer::new(
                &format!("fuse{l}"),
                2 * dim(l),
                dim(l),
                1,
                1,
                0,
                1,
                1,
                true,
                rng,
            ));
            dec.push(swin_stage(
                &format!("dec{l}"),
                dim(l),
                2,
                heads[l],
                window,
                mlp_ratio,
                rng,
            )?);
        }
        let final_expand = PatchExpand::new("final_expand", embed, embed, patch, rng);
        let head = Conv2dLayer::new("head", embed, num_classes, 1, 1, 0, 1, 1, true, rng);
        Ok(SwinUnet {
            patch_embed,
            enc,
            merges,
            bottleneck,
            expands,
            fuses,
            dec,
            final_expand,
            head,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = self.patch_embed.forward(g, x)?;
        g.trim(&[h]);
        let mut skips = Vec::new();
        for l in 0..self.enc.len() {
            for layer in &self.enc[l] {
                h = layer.forward(g, h)?;
                g.trim(&[h]);
            }
            skips.push(h);
            g.retain_push(&[h]);
            h = self.merges[l].forward(g, h)?;
            g.trim(&[h]);
        }
        for layer in &self.bottleneck {
            h = layer.forward(g, h)?;
            g.trim(&[h]);
        }
        for (i, l) in (0..self.enc.len()).rev().enumerate() {
            h = self.expands[i].forward(g, h)?;
            let cat = g.concat(&[h, skips[l]], 1)?;
            h = self.fuses[i].forward(g, cat)?;
            for layer in &self.dec[i] {
                h = layer.forward(g, h)?;
            }
            g.retain_pop();
            g.trim(&[h]);
        }
        let up = self.final_expand.forward(g, h)?;
        self.head.forward(g, up)
    }
}

impl<T: Scalar> Parameterized<T> for SwinUnet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.patch_embed.visit(f);
        for s in &self.enc {
            s.visit(f);
        }
        self.merges.visit(f);
        self.bottleneck.visit(f);
        self.expands.visit(f);
        self.fuses.visit(f);
        for s in &self.dec {
            s.visit(f);
        }
        self.final_expand.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.patch_embed.visit_mut(f);
        for s in &mut self.enc {
            s.visit_mut(f);
        }
        self.merges.visit_mut(f);
        self.bottleneck.visit_mut(f);
        self.expands.visit_mut(f);
        self.fuses.visit_mut(f);
        for s in &mut self.dec {
            s.visit_mut(f);
        }
        self.final_expand.visit_mut(f);
        self.head.visit_mut(f);
    }
}

// --------------------------------------------------------- Mamba U-Net kin

/// Which state-space encoder body a [`MambaUnet`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MambaFlavor {
    /// Four-direction VSS stages (SwinUMamba-style).
    Vss,
    /// Single fixed-direction light scan stages (LightUMamba-style).
    Light,
    /// GSC + four-direction scan stages (SegMamba-style, realized in 2D).
    GscSs2d,
}

enum MambaEncStage<T: Scalar> {
    Plain(PatchStage<T>),
    Gsc(GatedSpatialConv<T>, PatchStage<T>),
}

impl<T: Scalar> MambaEncStage<T> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            MambaEncStage::Plain(s) => s.forward(g, x),
            MambaEncStage::Gsc(gsc, s) => {
                let h = gsc.forward(g, x)?;
                g.trim(&[h]);
                s.forward(g, h)
            }
        }
    }
}

impl<T: Scalar> Parameterized<T> for MambaEncStage<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            MambaEncStage::Plain(s) => s.visit(f),
            MambaEncStage::Gsc(gsc, s) => {
                gsc.visit(f);
                s.visit(f);
            }
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            MambaEncStage::Plain(s) => s.visit_mut(f),
            MambaEncStage::Gsc(gsc, s) => {
                gsc.visit_mut(f);
                s.visit_mut(f);
            }
        }
    }
}

/// State-space encoder over a CNN decoder: stem (patch conv), scan stages
/// with patch merging, then bilinear-up + skip-fuse decoding.
pub struct MambaUnet<T: Scalar> {
    stem: Conv2dLayer<T>,
    enc: Vec<MambaEncStage<T>>,
    merges: Vec<PatchMerge<T>>,
    dec: Vec<[ConvNormAct<T>; 2]>,
    head: Conv2dLayer<T>,
    patch: usize,
}

impl<T: Scalar> MambaUnet<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_ch: usize,
        num_classes: usize,
        dims: &[usize],
        layers_per_stage: usize,
        expansion: usize,
        scan: &ScanConfig,
        flavor: MambaFlavor,
        patch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = dims.len();
        let stem = Conv2dLayer::new("stem", in_ch, dims[0], patch, patch, 0, 1, 1, true, rng);
        let mut enc = Vec::new();
        let mut merges = Vec::new();
        for (l, &d) in dims.iter().enumerate() {
            let name = format!("enc{l}");
            let body = match flavor {
                MambaFlavor::Vss => PatchStage::Vss(
                    (0..layers_per_stage)
                        .map(|i| VssLayer::new(&format!("{name}.l{i}"), d, expansion, scan, rng))
                        .collect(),
                ),
                MambaFlavor::Light => PatchStage::MambaNd(
                    (0..layers_per_stage)
                        .map(|i| {
                            Mamba1dLayer::new(
                                &format!("{name}.l{i}"),
                                d,
                                expansion,
                                scan,
                                TraversalOrder::RowMajorForward,
                                rng,
                            )
                        })
                        .collect(),
                ),
                MambaFlavor::GscSs2d => PatchStage::Vss(
                    (0..layers_per_stage)
                        .map(|i| VssLayer::new(&format!("{name}.l{i}"), d, expansion, scan, rng))
                        .collect(),
                ),
            };
            enc.push(match flavor {
                MambaFlavor::GscSs2d => {
                    MambaEncStage::Gsc(GatedSpatialConv::new(&format!("{name}.gsc"), d, rng), body)
                }
                _ => MambaEncStage::Plain(body),
            });
            if l + 1 < n {
                merges.push(PatchMerge::new(
                    &format!("merge{l}"),
                    d,
                    dims[l + 1],
                    2,
                    rng,
                ));
            }
        }
        let mut dec = Vec::new();
        for l in (0..n - 1).rev() {
            dec.push([
                ConvNormAct::new(&format!("dec{l}a"), dims[l + 1] + dims[l], dims[l], 1, rng),
                ConvNormAct::new(&format!("dec{l}b"), dims[l], dims[l], 1, rng),
            ]);
        }
        let head = Conv2dLayer::new("head", dims[0], num_classes, 1, 1, 0, 1, 1, true, rng);
        Ok(MambaUnet {
            stem,
            enc,
            merges,
            dec,
            head,
            patch,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(g, x)?;
        g.trim(&[h]);
        let mut skips = Vec::new();
        for l in 0..self.enc.len() {
            h = self.enc[l].forward(g, h)?;
            if l + 1 < self.enc.len() {
                skips.push(h);
                g.retain_push(&[h]);
                h = self.merges[l].forward(g, h)?;
            }
            g.trim(&[h]);
        }
        for (i, l) in (0..self.enc.len() - 1).rev().enumerate() {
            let up = g.upsample_bilinear(h, 2)?;
            let cat = g.concat(&[up, skips[l]], 1)?;
            h = self.dec[i][0].forward(g, cat)?;
            h = self.dec[i][1].forward(g, h)?;
            g.retain_pop();
            g.trim(&[h]);
        }
        let up = g.upsample_bilinear(h, self.patch)?;
        self.head.forward(g, up)
    }
}

impl<T: Scalar> Parameterized<T> for MambaUnet<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        self.enc.visit(f);
        self.merges.visit(f);
        for pair in &self.dec {
            pair[0].visit(f);
            pair[1].visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        self.enc.visit_mut(f);
        self.merges.visit_mut(f);
        for pair in &mut self.dec {
            pair[0].visit_mut(f);
            pair[1].visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
