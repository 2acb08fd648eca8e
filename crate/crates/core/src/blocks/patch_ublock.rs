//! The patch-based U-block shared by the window-attention and state-space
//! kinds: embed -> [stage, merge]* -> bottom stage -> [expand, fuse, stage]*
//! -> head, resolution preserving end to end.

use super::Mlp;
use crate::error::{Error, Result};
use crate::kernels::{
    grid_to_seq, seq_to_grid, GatedSpatialConv, PatchExpand, PatchMerge, ScanConfig, ScanParams,
    Ss2d, TraversalOrder, WindowAttention,
};
use crate::nn::{Conv2dLayer, LayerNormLayer, Linear};
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;

/// Swin layer pair member: window attention + MLP with pre-norm, on BCHW.
pub struct SwinLayer<T> {
    norm1: LayerNormLayer<T>,
    attn: WindowAttention<T>,
    norm2: LayerNormLayer<T>,
    mlp: Mlp<T>,
}

impl<T: Scalar> SwinLayer<T> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        shift: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SwinLayer {
            norm1: LayerNormLayer::new(&format!("{name}.norm1"), dim),
            attn: WindowAttention::new(&format!("{name}.attn"), dim, heads, window, shift, rng)?,
            norm2: LayerNormLayer::new(&format!("{name}.norm2"), dim),
            mlp: Mlp::new(&format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
        })
    }

    /// x: (B, C, H, W).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hwc = g.permute(x, &[0, 2, 3, 1])?;
        let n1 = self.norm1.forward(g, hwc)?;
        let a = self.attn.forward(g, n1)?;
        let x1 = g.add(hwc, a)?;
        let n2 = self.norm2.forward(g, x1)?;
        let flat = g.reshape(n2, &[b, h * w, c])?;
        let m = self.mlp.forward(g, flat)?;
        let mg = g.reshape(m, &[b, h, w, c])?;
        let x2 = g.add(x1, mg)?;
        g.permute(x2, &[0, 3, 1, 2])
    }
}

impl<T: Scalar> Parameterized<T> for SwinLayer<T> {
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

/// VSS layer: norm -> expand -> depthwise conv -> four-direction scan ->
/// gate -> project, with residual. On BCHW.
pub struct VssLayer<T> {
    norm: LayerNormLayer<T>,
    in_proj: Linear<T>,
    dwconv: Conv2dLayer<T>,
    ss2d: Ss2d<T>,
    out_norm: LayerNormLayer<T>,
    out_proj: Linear<T>,
    d_inner: usize,
}

impl<T: Scalar> VssLayer<T> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        expansion: usize,
        scan: &ScanConfig,
        rng: &mut R,
    ) -> Self {
        let d_inner = dim * expansion;
        VssLayer {
            norm: LayerNormLayer::new(&format!("{name}.norm"), dim),
            in_proj: Linear::new(&format!("{name}.in_proj"), dim, 2 * d_inner, true, rng),
            dwconv: Conv2dLayer::new(
                &format!("{name}.dwconv"),
                d_inner,
                d_inner,
                3,
                1,
                1,
                1,
                d_inner,
                true,
                rng,
            ),
            ss2d: Ss2d::new(&format!("{name}.ss2d"), d_inner, scan, rng),
            out_norm: LayerNormLayer::new(&format!("{name}.out_norm"), d_inner),
            out_proj: Linear::new(&format!("{name}.out_proj"), d_inner, dim, true, rng),
            d_inner,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, _c, h, w) = (s[0], s[1], s[2], s[3]);
        let l = h * w;
        let d = self.d_inner;
        g.retain_push(&[x]);

        let seq = grid_to_seq(g, x, TraversalOrder::RowMajorForward)?;
        let n = self.norm.forward(g, seq)?;
        let xz = self.in_proj.forward(g, n)?; // (B, L, 2d)
        let xt = g.slice(xz, &[(0, b), (0, l), (0, d)])?;
        let z = g.slice(xz, &[(0, b), (0, l), (d, 2 * d)])?;
        g.retain_push(&[z]);
        g.trim(&[xt]);

        let xg = seq_to_grid(g, xt, TraversalOrder::RowMajorForward, h, w)?;
        let conv = self.dwconv.forward(g, xg)?;
        let act = g.silu(conv)?;
        g.trim(&[act]);
        let scanned = self.ss2d.forward(g, act)?;
        g.trim(&[scanned]);

        let yseq = grid_to_seq(g, scanned, TraversalOrder::RowMajorForward)?;
        let yn = self.out_norm.forward(g, yseq)?;
        let zs = g.silu(z)?;
        let gated = g.mul(yn, zs)?;
        let out = self.out_proj.forward(g, gated)?;
        let out_grid = seq_to_grid(g, out, TraversalOrder::RowMajorForward, h, w)?;
        g.retain_pop(); // z
        let res = g.add(x, out_grid)?;
        g.retain_pop(); // x
        g.trim(&[res]);
        Ok(res)
    }
}

impl<T: Scalar> Parameterized<T> for VssLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm.visit(f);
        self.in_proj.visit(f);
        self.dwconv.visit(f);
        self.ss2d.visit(f);
        self.out_norm.visit(f);
        self.out_proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.in_proj.visit_mut(f);
        self.dwconv.visit_mut(f);
        self.ss2d.visit_mut(f);
        self.out_norm.visit_mut(f);
        self.out_proj.visit_mut(f);
    }
}

/// Single-direction scan layer with a 1-D depthwise conv along the ordered
/// sequence and a SiLU gate; the direction is fixed per layer at build time.
pub struct Mamba1dLayer<T> {
    pub order: TraversalOrder,
    norm: LayerNormLayer<T>,
    in_proj: Linear<T>,
    conv1d: Conv2dLayer<T>,
    scan: ScanParams<T>,
    out_proj: Linear<T>,
    d_inner: usize,
}

impl<T: Scalar> Mamba1dLayer<T> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        expansion: usize,
        scan_cfg: &ScanConfig,
        order: TraversalOrder,
        rng: &mut R,
    ) -> Self {
        let d_inner = dim * expansion;
        Mamba1dLayer {
            order,
            norm: LayerNormLayer::new(&format!("{name}.norm"), dim),
            in_proj: Linear::new(&format!("{name}.in_proj"), dim, 2 * d_inner, true, rng),
            // depthwise width-3 conv along the sequence, run as (B, d, 1, L)
            conv1d: Conv2dLayer {
                w: Param::new(
                    format!("{name}.conv1d.weight"),
                    crate::tensor::Tensor::randn(
                        &[d_inner, 1, 1, 3],
                        (2.0 / 3.0f64).sqrt(),
                        rng,
                    ),
                ),
                b: Some(Param::new(
                    format!("{name}.conv1d.bias"),
                    crate::tensor::Tensor::zeros(&[d_inner]),
                )),
                stride: (1, 1),
                padding: (0, 1),
                dilation: (1, 1),
                groups: d_inner,
            },
            scan: ScanParams::new(&format!("{name}.scan"), d_inner, scan_cfg, rng),
            out_proj: Linear::new(&format!("{name}.out_proj"), d_inner, dim, true, rng),
            d_inner,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, _c, h, w) = (s[0], s[1], s[2], s[3]);
        let l = h * w;
        let d = self.d_inner;
        g.retain_push(&[x]);

        let seq = grid_to_seq(g, x, TraversalOrder::RowMajorForward)?;
        let n = self.norm.forward(g, seq)?;
        let xz = self.in_proj.forward(g, n)?;
        let xt = g.slice(xz, &[(0, b), (0, l), (0, d)])?;
        let z = g.slice(xz, &[(0, b), (0, l), (d, 2 * d)])?;
        g.retain_push(&[z]);
        g.trim(&[xt]);

        // Reorder to this layer's direction, conv along the sequence, scan.
        let ordered = if self.order == TraversalOrder::RowMajorForward {
            xt
        } else {
            let xg = seq_to_grid(g, xt, TraversalOrder::RowMajorForward, h, w)?;
            grid_to_seq(g, xg, self.order)?
        };
        let as_img = {
            let p = g.permute(ordered, &[0, 2, 1])?; // (B, d, L)
            g.reshape(p, &[b, d, 1, l])?
        };
        let conv = self.conv1d.forward(g, as_img)?;
        let act = g.silu(conv)?;
        let back = {
            let r = g.reshape(act, &[b, d, l])?;
            g.permute(r, &[0, 2, 1])?
        };
        let scanned = self.scan.scan(g, back)?;
        let row_major = if self.order == TraversalOrder::RowMajorForward {
            scanned
        } else {
            let grid = seq_to_grid(g, scanned, self.order, h, w)?;
            grid_to_seq(g, grid, TraversalOrder::RowMajorForward)?
        };
        g.trim(&[row_major]);

        let zs = g.silu(z)?;
        let gated = g.mul(row_major, zs)?;
        let out = self.out_proj.forward(g, gated)?;
        let out_grid = seq_to_grid(g, out, TraversalOrder::RowMajorForward, h, w)?;
        g.retain_pop(); // z
        let res = g.add(x, out_grid)?;
        g.retain_pop(); // x
        g.trim(&[res]);
        Ok(res)
    }
}

impl<T: Scalar> Parameterized<T> for Mamba1dLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm.visit(f);
        self.in_proj.visit(f);
        self.conv1d.visit(f);
        self.scan.visit(f);
        self.out_proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm.visit_mut(f);
        self.in_proj.visit_mut(f);
        self.conv1d.visit_mut(f);
        self.scan.visit_mut(f);
        self.out_proj.visit_mut(f);
    }
}

/// One resolution level's worth of computation for a patch U-block.
pub enum PatchStage<T: Scalar> {
    Swin(Vec<SwinLayer<T>>),
    Vss(Vec<VssLayer<T>>),
    /// GSC then a single-direction scan whose order alternates by block index.
    Alt(GatedSpatialConv<T>, Mamba1dLayer<T>),
    /// Multi-axis alternating 1-D scans within the stage.
    MambaNd(Vec<Mamba1dLayer<T>>),
}

impl<T: Scalar> PatchStage<T> {
    pub fn forward(&self, g: &mut Graph<T>, mut x: Var) -> Result<Var> {
        match self {
            PatchStage::Swin(layers) => {
                for l in layers {
                    x = l.forward(g, x)?;
                }
            }
            PatchStage::Vss(layers) => {
                for l in layers {
                    x = l.forward(g, x)?;
                }
            }
            PatchStage::Alt(gsc, scan) => {
                x = gsc.forward(g, x)?;
                g.trim(&[x]);
                x = scan.forward(g, x)?;
            }
            PatchStage::MambaNd(layers) => {
                for l in layers {
                    x = l.forward(g, x)?;
                }
            }
        }
        Ok(x)
    }

    /// Traversal orders used by scan-based stages, in layer order.
    pub fn traversal_orders(&self) -> Vec<TraversalOrder> {
        match self {
            PatchStage::Alt(_, scan) => vec![scan.order],
            PatchStage::MambaNd(layers) => layers.iter().map(|l| l.order).collect(),
            _ => Vec::new(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for PatchStage<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            PatchStage::Swin(l) => l.visit(f),
            PatchStage::Vss(l) => l.visit(f),
            PatchStage::Alt(gsc, s) => {
                gsc.visit(f);
                s.visit(f);
            }
            PatchStage::MambaNd(l) => l.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            PatchStage::Swin(l) => l.visit_mut(f),
            PatchStage::Vss(l) => l.visit_mut(f),
            PatchStage::Alt(gsc, s) => {
                gsc.visit_mut(f);
                s.visit_mut(f);
            }
            PatchStage::MambaNd(l) => l.visit_mut(f),
        }
    }
}

pub struct PatchUBlock<T: Scalar> {
    embed: Conv2dLayer<T>,
    enc_stages: Vec<PatchStage<T>>,
    merges: Vec<Option<PatchMerge<T>>>,
    bottom: PatchStage<T>,
    fuses: Vec<Conv2dLayer<T>>,
    dec_stages: Vec<PatchStage<T>>,
    expands: Vec<Option<PatchExpand<T>>>,
    head: Conv2dLayer<T>,
    scales: Vec<usize>,
    level_dims: Vec<usize>,
}

/// Builds one stage at a given dim; `slot` distinguishes enc/dec/bottom and
/// `global_index` advances the traversal alternation.
pub type StageBuilder<'a, T, R> =
    dyn FnMut(&str, usize, usize, &mut R) -> Result<PatchStage<T>> + 'a;

impl<T: Scalar> PatchUBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        embed_ch: usize,
        out_ch: usize,
        depth: usize,
        scales: &[usize],
        build_stage: &mut StageBuilder<'_, T, R>,
        rng: &mut R,
    ) -> Result<Self> {
        if depth < 1 || scales.len() != depth || scales[0] != 1 {
            return Err(Error::InvalidArgument(
                "patch u-block: depth/scale schedule mismatch".into(),
            ));
        }
        // Dims double where the schedule shrinks resolution.
        let mut level_dims = Vec::with_capacity(depth);
        let mut dim = embed_ch;
        for (l, &s) in scales.iter().enumerate() {
            if l > 0 && s > 1 {
                dim *= 2;
            }
            level_dims.push(dim);
        }

        let embed = Conv2dLayer::new(&format!("{name}.embed"), in_ch, embed_ch, 1, 1, 0, 1, 1, true, rng);
        let mut enc_stages = Vec::new();
        let mut merges = Vec::new();
        let mut stage_idx = 0usize;
        for l in 0..depth {
            merges.push(if l > 0 && scales[l] > 1 {
                Some(PatchMerge::new(
                    &format!("{name}.merge{l}"),
                    level_dims[l - 1],
                    level_dims[l],
                    scales[l],
                    rng,
                ))
            } else {
                None
            });
            enc_stages.push(build_stage(
                &format!("{name}.enc{l}"),
                level_dims[l],
                stage_idx,
                rng,
            )?);
            stage_idx += 1;
        }
        let bottom = build_stage(
            &format!("{name}.bottom"),
            level_dims[depth - 1],
            stage_idx,
            rng,
        )?;
        stage_idx += 1;

        let mut dec_stages = Vec::new();
        let mut fuses = Vec::new();
        let mut expands = Vec::new();
        for l in (0..depth).rev() {
            fuses.push(Conv2dLayer::new(
                &format!("{name}.fuse{l}"),
                2 * level_dims[l],
                level_dims[l],
                1,
                1,
                0,
                1,
                1,
                true,
                rng,
            ));
            dec_stages.push(build_stage(
                &format!("{name}.dec{l}"),
                level_dims[l],
                stage_idx,
                rng,
            )?);
            stage_idx += 1;
            expands.push(if l > 0 && scales[l] > 1 {
                Some(PatchExpand::new(
                    &format!("{name}.expand{l}"),
                    level_dims[l],
                    level_dims[l - 1],
                    scales[l],
                    rng,
                ))
            } else {
                None
            });
        }
        let head = Conv2dLayer::new(&format!("{name}.head"), embed_ch, out_ch, 1, 1, 0, 1, 1, true, rng);
        Ok(PatchUBlock {
            embed,
            enc_stages,
            merges,
            bottom,
            fuses,
            dec_stages,
            expands,
            head,
            scales: scales.to_vec(),
            level_dims,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let depth = self.enc_stages.len();
        let sh = g.shape(x).to_vec();
        let total: usize = self.scales.iter().product();
        if sh[2] % total != 0 || sh[3] % total != 0 {
            return Err(Error::Divisibility {
                what: format!("patch u-block input {}x{}", sh[2], sh[3]),
                required: total,
                got: sh[2],
            });
        }
        let mut h = self.embed.forward(g, x)?;
        g.trim(&[h]);

        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            if let Some(m) = &self.merges[l] {
                h = m.forward(g, h)?;
                g.trim(&[h]);
            }
            h = self.enc_stages[l].forward(g, h)?;
            skips.push(h);
            g.retain_push(&[h]);
            g.trim(&[h]);
        }
        let mut d = self.bottom.forward(g, h)?;
        g.trim(&[d]);
        for (i, l) in (0..depth).rev().enumerate() {
            let cat = g.concat(&[d, skips[l]], 1)?;
            let fused = self.fuses[i].forward(g, cat)?;
            d = self.dec_stages[i].forward(g, fused)?;
            g.retain_pop();
            if let Some(e) = &self.expands[i] {
                d = e.forward(g, d)?;
            }
            g.trim(&[d]);
        }
        let out = self.head.forward(g, d)?;
        g.trim(&[out]);
        Ok(out)
    }

    pub fn traversal_orders(&self) -> Vec<TraversalOrder> {
        let mut orders = Vec::new();
        for s in &self.enc_stages {
            orders.extend(s.traversal_orders());
        }
        orders.extend(self.bottom.traversal_orders());
        for s in &self.dec_stages {
            orders.extend(s.traversal_orders());
        }
        orders
    }

    pub fn level_dims(&self) -> &[usize] {
        &self.level_dims
    }
}

impl<T: Scalar> Parameterized<T> for PatchUBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.embed.visit(f);
        for l in 0..self.enc_stages.len() {
            self.merges[l].visit(f);
            self.enc_stages[l].visit(f);
        }
        self.bottom.visit(f);
        for i in 0..self.dec_stages.len() {
            self.fuses[i].visit(f);
            self.dec_stages[i].visit(f);
            self.expands[i].visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.embed.visit_mut(f);
        for l in 0..self.enc_stages.len() {
            self.merges[l].visit_mut(f);
            self.enc_stages[l].visit_mut(f);
        }
        self.bottom.visit_mut(f);
        for i in 0..self.dec_stages.len() {
            self.fuses[i].visit_mut(f);
            self.dec_stages[i].visit_mut(f);
            self.expands[i].visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
