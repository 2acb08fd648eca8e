//! U-Block construction: the reusable "U inside a U" units, one per family
//! (convolutional, transformer, state-space), plus the depthwise-separable
//! residual adapters joining them.

pub mod patch_ublock;
pub mod rsu;
pub mod unetr_block;

pub use patch_ublock::{Mamba1dLayer, PatchStage, PatchUBlock, SwinLayer, VssLayer};
pub use rsu::RsuBlock;
pub use unetr_block::{sinusoidal_positions, TransformerLayer, UnetrBlock};

use crate::error::{Error, Result};
use crate::kernels::{DepthwiseSeparableConv, GatedSpatialConv, ScanConfig, TraversalOrder};
use crate::nn::Linear;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Two-layer MLP with GELU, on the trailing dim.
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng>(name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(&format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let a = g.gelu(h)?;
        self.fc2.forward(g, a)
    }
}

impl<T: Scalar> Parameterized<T> for Mlp<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// The seven U-Block families. Every model stage names exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Rsu,
    RsuF,
    UnetrB,
    SwtB,
    Ss2dB,
    Alt1dmB,
    MambaNdB,
}

/// Kernel attributes shared by the non-CNN kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockAttrs {
    pub heads: usize,
    pub window: usize,
    /// Token embedding dim for the UNETR kind (patch kinds take their level-0
    /// width from the spec's mid_ch).
    pub embed: usize,
    pub state_dim: usize,
    pub dt_rank_divisor: usize,
    /// Mamba inner expansion factor.
    pub expansion: usize,
    pub mlp_ratio: usize,
    /// Layers per stage for VSS stages.
    pub vss_layers: usize,
    /// Scans per stage for the multi-axis alternating kind.
    pub nd_axes: usize,
}

impl Default for BlockAttrs {
    fn default() -> Self {
        BlockAttrs {
            heads: 4,
            window: 8,
            embed: 32,
            state_dim: 16,
            dt_rank_divisor: 16,
            expansion: 2,
            mlp_ratio: 2,
            vss_layers: 2,
            nd_axes: 2,
        }
    }
}

impl BlockAttrs {
    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            state_dim: self.state_dim,
            dt_rank_divisor: self.dt_rank_divisor,
        }
    }
}

/// Description of one U-Block: kind, channel plan, internal depth, and the
/// per-level merge/expand schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UBlockSpec {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub mid_ch: usize,
    pub out_ch: usize,
    pub depth: usize,
    pub scale_schedule: Vec<usize>,
    pub attrs: BlockAttrs,
    /// Starting index into the traversal alternation for scan kinds.
    pub traversal_seed: usize,
}

impl UBlockSpec {
    pub fn new(kind: BlockKind, in_ch: usize, mid_ch: usize, out_ch: usize, depth: usize) -> Self {
        let scale_schedule = match kind {
            BlockKind::RsuF => vec![1; depth],
            _ => {
                let mut s = vec![2; depth];
                s[0] = 1;
                s
            }
        };
        UBlockSpec {
            kind,
            in_ch,
            mid_ch,
            out_ch,
            depth,
            scale_schedule,
            attrs: BlockAttrs::default(),
            traversal_seed: 0,
        }
    }

    pub fn with_attrs(mut self, attrs: BlockAttrs) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn with_traversal_seed(mut self, seed: usize) -> Self {
        self.traversal_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidArgument("u-block depth must be >= 1".into()));
        }
        if self.scale_schedule.len() != self.depth {
            return Err(Error::InvalidArgument(format!(
                "scale schedule length {} != depth {}",
                self.scale_schedule.len(),
                self.depth
            )));
        }
        if self.in_ch < 1 || self.mid_ch < 1 || self.out_ch < 1 {
            return Err(Error::InvalidArgument("u-block channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Total internal downsampling factor.
    pub fn total_scale(&self) -> usize {
        self.scale_schedule.iter().product()
    }
}

/// A built U-Block: forward maps (B, in_ch, H, W) -> (B, out_ch, H, W).
pub enum UBlock<T: Scalar> {
    Rsu(RsuBlock<T>),
    Unetr(UnetrBlock<T>),
    Patch(PatchUBlock<T>),
}

impl<T: Scalar> UBlock<T> {
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            UBlock::Rsu(b) => b.forward(g, x),
            UBlock::Unetr(b) => b.forward(g, x),
            UBlock::Patch(b) => b.forward(g, x),
        }
    }

    /// Scan directions used by this block's stages, in construction order.
    pub fn traversal_orders(&self) -> Vec<TraversalOrder> {
        match self {
            UBlock::Patch(b) => b.traversal_orders(),
            _ => Vec::new(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for UBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            UBlock::Rsu(b) => b.visit(f),
            UBlock::Unetr(b) => b.visit(f),
            UBlock::Patch(b) => b.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            UBlock::Rsu(b) => b.visit_mut(f),
            UBlock::Unetr(b) => b.visit_mut(f),
            UBlock::Patch(b) => b.visit_mut(f),
        }
    }
}

/// Build one U-Block from its spec.
pub fn build_ublock<T: Scalar, R: Rng>(
    spec: &UBlockSpec,
    name: &str,
    rng: &mut R,
) -> Result<UBlock<T>> {
    spec.validate()?;
    let attrs = &spec.attrs;
    match spec.kind {
        BlockKind::Rsu => Ok(UBlock::Rsu(RsuBlock::new(
            name,
            spec.in_ch,
            spec.mid_ch,
            spec.out_ch,
            spec.depth,
            &spec.scale_schedule,
            false,
            rng,
        )?)),
        BlockKind::RsuF => Ok(UBlock::Rsu(RsuBlock::new(
            name,
            spec.in_ch,
            spec.mid_ch,
            spec.out_ch,
            spec.depth,
            &spec.scale_schedule,
            true,
            rng,
        )?)),
        BlockKind::UnetrB => Ok(UBlock::Unetr(UnetrBlock::new(
            name,
            spec.in_ch,
            spec.mid_ch,
            spec.out_ch,
            spec.depth,
            &spec.scale_schedule,
            attrs.embed,
            attrs.heads,
            attrs.mlp_ratio,
            spec.depth,
            rng,
        )?)),
        BlockKind::SwtB => {
            let (heads, window, ratio) = (attrs.heads, attrs.window, attrs.mlp_ratio);
            let mut build = move |n: &str, dim: usize, _idx: usize, rng: &mut R| {
                Ok(PatchStage::Swin(vec![
                    SwinLayer::new(&format!("{n}.l0"), dim, heads, window, 0, ratio, rng)?,
                    SwinLayer::new(&format!("{n}.l1"), dim, heads, window, window / 2, ratio, rng)?,
                ]))
            };
            Ok(UBlock::Patch(PatchUBlock::new(
                name,
                spec.in_ch,
                spec.mid_ch,
                spec.out_ch,
                spec.depth,
                &spec.scale_schedule,
                &mut build,
                rng,
            )?))
        }
        BlockKind::Ss2dB => {
            let scan = attrs.scan_config();
            let (expansion, n_layers) = (attrs.expansion, attrs.vss_layers);
            let mut build = move |n: &str, dim: usize, _idx: usize, rng: &mut R| {
                let layers = (0..n_layers)
                    .map(|i| VssLayer::new(&format!("{n}.l{i}"), dim, expansion, &scan, rng))
                    .collect();
                Ok(PatchStage::Vss(layers))
            };
            Ok(UBlock::Patch(PatchUBlock::new(
                name,
                spec.in_ch,
                spec.mid_ch,
                spec.out_ch,
                spec.depth,
                &spec.scale_schedule,
                &mut build,
                rng,
            )?))
        }
        BlockKind::Alt1dmB => {
            let scan = attrs.scan_config();
            let expansion = attrs.expansion;
            let seed = spec.traversal_seed;
            let mut build = move |n: &str, dim: usize, idx: usize, rng: &mut R| {
                let order = TraversalOrder::cycle(seed + idx);
                Ok(PatchStage::Alt(
                    GatedSpatialConv::new(&format!("{n}.gsc"), dim, rng),
                    Mamba1dLayer::new(&format!("{n}.scan"), dim, expansion, &scan, order, rng),
                ))
            };
            Ok(UBlock::Patch(PatchUBlock::new(
                name,
                spec.in_ch,
                spec.mid_ch,
                spec.out_ch,
                spec.depth,
                &spec.scale_schedule,
                &mut build,
                rng,
            )?))
        }
        BlockKind::MambaNdB => {
            let scan = attrs.scan_config();
            let (expansion, axes) = (attrs.expansion, attrs.nd_axes);
            let seed = spec.traversal_seed;
            let mut build = move |n: &str, dim: usize, idx: usize, rng: &mut R| {
                let layers = (0..axes)
                    .map(|i| {
                        let order = TraversalOrder::cycle(seed + idx * axes + i);
                        Mamba1dLayer::new(
                            &format!("{n}.l{i}"),
                            dim,
                            expansion,
                            &scan,
                            order,
                            rng,
                        )
                    })
                    .collect();
                Ok(PatchStage::MambaNd(layers))
            };
            Ok(UBlock::Patch(PatchUBlock::new(
                name,
                spec.in_ch,
                spec.mid_ch,
                spec.out_ch,
                spec.depth,
                &spec.scale_schedule,
                &mut build,
                rng,
            )?))
        }
    }
}

/// Skip path joining a stage's input to its output: y + dsconv(x_in).
/// Identity-initialized when channel counts match, so the adapter starts as
/// a plain residual.
pub struct ResidualAdapter<T> {
    pub ds: DepthwiseSeparableConv<T>,
}

impl<T: Scalar> ResidualAdapter<T> {
    pub fn new<R: Rng>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let ds = if in_ch == out_ch {
            DepthwiseSeparableConv::identity(name, in_ch, 3)
        } else {
            DepthwiseSeparableConv::new(name, in_ch, out_ch, 3, false, rng)
        };
        ResidualAdapter { ds }
    }

    pub fn forward(&self, g: &mut Graph<T>, x_in: Var, y_block: Var) -> Result<Var> {
        if g.shape(x_in)[2..] != g.shape(y_block)[2..] {
            return Err(Error::shape(
                "residual_adapter",
                format!("{:?}", &g.shape(y_block)[2..]),
                format!("{:?}", &g.shape(x_in)[2..]),
            ));
        }
        let skip = self.ds.forward(g, x_in)?;
        g.add(y_block, skip)
    }
}

impl<T: Scalar> Parameterized<T> for ResidualAdapter<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.ds.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ds.visit_mut(f);
    }
}
