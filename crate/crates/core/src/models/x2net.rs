//! The nested-U topology: 11 resolution-preserving U-Block stages (En1-En6,
//! De5-De1) joined by 2x pool/upsample and concatenating skips, with
//! per-decoder side heads and a fused output head. Stage kinds vary by
//! architecture; non-CNN stages get depthwise-separable residual adapters.

use crate::blocks::{build_ublock, BlockKind, ResidualAdapter, UBlock, UBlockSpec};
use crate::error::Result;
use crate::nn::Conv2dLayer;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;

pub struct X2Stage<T: Scalar> {
    pub block: UBlock<T>,
    pub adapter: Option<ResidualAdapter<T>>,
    pub kind: BlockKind,
}

impl<T: Scalar> X2Stage<T> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        // The adapter reads x after the block's internal trims.
        g.retain_push(&[x]);
        let y = self.block.forward(g, x)?;
        let out = match &self.adapter {
            Some(a) => a.forward(g, x, y),
            None => Ok(y),
        };
        g.retain_pop();
        out
    }
}

impl<T: Scalar> Parameterized<T> for X2Stage<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.block.visit(f);
        self.adapter.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.block.visit_mut(f);
        self.adapter.visit_mut(f);
    }
}

pub struct X2Net<T: Scalar> {
    /// En1..En6 then De5..De1.
    pub stages: Vec<X2Stage<T>>,
    /// Side heads on De1..De5 outputs and En6, each 3x3 to num_classes.
    sides: Vec<Conv2dLayer<T>>,
    /// Class-grouped 1x1 fusion over the side logits.
    fuse: Conv2dLayer<T>,
    num_classes: usize,
}

impl<T: Scalar> X2Net<T> {
    pub fn new<R: Rng>(specs: &[UBlockSpec], num_classes: usize, rng: &mut R) -> Result<Self> {
        assert_eq!(specs.len(), 11, "x2net takes 11 stage specs");
        let mut stages = Vec::with_capacity(11);
        for (i, spec) in specs.iter().enumerate() {
            let name = stage_name(i);
            let block = build_ublock(spec, &name, rng)?;
            let adapter = match spec.kind {
                BlockKind::Rsu | BlockKind::RsuF => None,
                _ => Some(ResidualAdapter::new(
                    &format!("{name}.adapter"),
                    spec.in_ch,
                    spec.out_ch,
                    rng,
                )),
            };
            stages.push(X2Stage {
                block,
                adapter,
                kind: spec.kind,
            });
        }
        // Side channel sources: De1, De2, De3, De4, De5, En6.
        let side_src = [
            specs[10].out_ch,
            specs[9].out_ch,
            specs[8].out_ch,
            specs[7].out_ch,
            specs[6].out_ch,
            specs[5].out_ch,
        ];
        let sides = side_src
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Conv2dLayer::new(
                    &format!("side{}", i + 1),
                    c,
                    num_classes,
                    3,
                    1,
                    1,
                    1,
                    1,
                    true,
                    rng,
                )
            })
            .collect();
        // Class-grouped fusion: each class's logit is a learned combination
        // of its own six side logits, so the head stays affine in the class
        // count.
        let fuse = Conv2dLayer::new(
            "fuse",
            6 * num_classes,
            num_classes,
            1,
            1,
            0,
            1,
            num_classes,
            true,
            rng,
        );
        Ok(X2Net {
            stages,
            sides,
            fuse,
            num_classes,
        })
    }

    /// Returns (fused logits, six side logit maps), all at input resolution.
    pub fn forward_with_sides(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let pool = |g: &mut Graph<T>, v: Var| g.max_pool2d(v, (2, 2), (2, 2));

        let hx1 = self.stages[0].forward(g, x)?;
        g.retain_push(&[hx1]);
        g.trim(&[hx1]);
        let p1 = pool(g, hx1)?;
        let hx2 = self.stages[1].forward(g, p1)?;
        g.retain_push(&[hx2]);
        g.trim(&[hx2]);
        let p2 = pool(g, hx2)?;
        let hx3 = self.stages[2].forward(g, p2)?;
        g.retain_push(&[hx3]);
        g.trim(&[hx3]);
        let p3 = pool(g, hx3)?;
        let hx4 = self.stages[3].forward(g, p3)?;
        g.retain_push(&[hx4]);
        g.trim(&[hx4]);
        let p4 = pool(g, hx4)?;
        let hx5 = self.stages[4].forward(g, p4)?;
        g.retain_push(&[hx5]);
        g.trim(&[hx5]);
        let p5 = pool(g, hx5)?;
        let hx6 = self.stages[5].forward(g, p5)?;
        g.retain_push(&[hx6]);
        g.trim(&[hx6]);

        let hx6up = g.upsample_bilinear(hx6, 2)?;
        let cat5 = g.concat(&[hx6up, hx5], 1)?;
        let hx5d = self.stages[6].forward(g, cat5)?;
        g.retain_push(&[hx5d]);
        g.trim(&[hx5d]);

        let hx5dup = g.upsample_bilinear(hx5d, 2)?;
        let cat4 = g.concat(&[hx5dup, hx4], 1)?;
        let hx4d = self.stages[7].forward(g, cat4)?;
        g.retain_push(&[hx4d]);
        g.trim(&[hx4d]);

        let hx4dup = g.upsample_bilinear(hx4d, 2)?;
        let cat3 = g.concat(&[hx4dup, hx3], 1)?;
        let hx3d = self.stages[8].forward(g, cat3)?;
        g.retain_push(&[hx3d]);
        g.trim(&[hx3d]);

        let hx3dup = g.upsample_bilinear(hx3d, 2)?;
        let cat2 = g.concat(&[hx3dup, hx2], 1)?;
        let hx2d = self.stages[9].forward(g, cat2)?;
        g.retain_push(&[hx2d]);
        g.trim(&[hx2d]);

        let hx2dup = g.upsample_bilinear(hx2d, 2)?;
        let cat1 = g.concat(&[hx2dup, hx1], 1)?;
        let hx1d = self.stages[10].forward(g, cat1)?;
        g.trim(&[hx1d]);

        // Side logits, upsampled to full resolution.
        let d1 = self.sides[0].forward(g, hx1d)?;
        let d2 = {
            let s = self.sides[1].forward(g, hx2d)?;
            g.upsample_bilinear(s, 2)?
        };
        let d3 = {
            let s = self.sides[2].forward(g, hx3d)?;
            g.upsample_bilinear(s, 4)?
        };
        let d4 = {
            let s = self.sides[3].forward(g, hx4d)?;
            g.upsample_bilinear(s, 8)?
        };
        let d5 = {
            let s = self.sides[4].forward(g, hx5d)?;
            g.upsample_bilinear(s, 16)?
        };
        let d6 = {
            let s = self.sides[5].forward(g, hx6)?;
            g.upsample_bilinear(s, 32)?
        };
        // Release the ten retained stage outputs (En1..En6, De5..De2).
        for _ in 0..10 {
            g.retain_pop();
        }
        let sides = vec![d1, d2, d3, d4, d5, d6];
        let cat = g.concat(&sides, 1)?;
        // Regroup channels from [side][class] to [class][side] so the
        // grouped fusion sees each class's six sides contiguously.
        let k = self.num_classes;
        let order: Vec<usize> = (0..k)
            .flat_map(|c| (0..6).map(move |s| s * k + c))
            .collect();
        let regrouped = g.index_select(cat, 1, std::sync::Arc::new(order))?;
        let fused = self.fuse.forward(g, regrouped)?;
        g.retain_push(&sides);
        g.trim(&[fused]);
        g.retain_pop();
        Ok((fused, sides))
    }
}

fn stage_name(i: usize) -> String {
    if i < 6 {
        format!("en{}", i + 1)
    } else {
        format!("de{}", 11 - i)
    }
}

impl<T: Scalar> Parameterized<T> for X2Net<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stages.visit(f);
        self.sides.visit(f);
        self.fuse.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stages.visit_mut(f);
        self.sides.visit_mut(f);
        self.fuse.visit_mut(f);
    }
}
