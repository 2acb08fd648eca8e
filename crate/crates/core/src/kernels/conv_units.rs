//! Depthwise-separable convolution and gated spatial convolution.

use crate::error::Result;
use crate::nn::Conv2dLayer;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Var};
use rand::Rng;

/// Per-channel k x k conv (groups = C) followed by 1x1 pointwise projection.
pub struct DepthwiseSeparableConv<T> {
    pub dw: Conv2dLayer<T>,
    pub pw: Conv2dLayer<T>,
}

impl<T: Scalar> DepthwiseSeparableConv<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "depthwise separable conv needs odd kernel");
        DepthwiseSeparableConv {
            dw: Conv2dLayer::new(
                &format!("{name}.dw"),
                in_ch,
                in_ch,
                kernel,
                1,
                kernel / 2,
                1,
                in_ch,
                bias,
                rng,
            ),
            pw: Conv2dLayer::new(&format!("{name}.pw"), in_ch, out_ch, 1, 1, 0, 1, 1, bias, rng),
        }
    }

    /// Exact identity at init: delta depthwise kernels, identity pointwise.
    pub fn identity(name: &str, ch: usize, kernel: usize) -> Self {
        DepthwiseSeparableConv {
            dw: Conv2dLayer::depthwise_identity(&format!("{name}.dw"), ch, kernel),
            pw: Conv2dLayer::pointwise_identity(&format!("{name}.pw"), ch),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let d = self.dw.forward(g, x)?;
        self.pw.forward(g, d)
    }
}

impl<T: Scalar> Parameterized<T> for DepthwiseSeparableConv<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.dw.visit(f);
        self.pw.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.dw.visit_mut(f);
        self.pw.visit_mut(f);
    }
}

/// x + feat(x) * sigmoid(gate(x)): a 3x3 feature branch gated by a 1x1
/// branch, with the residual keeping the unit stable at init.
pub struct GatedSpatialConv<T> {
    pub feat: Conv2dLayer<T>,
    pub gate: Conv2dLayer<T>,
}

impl<T: Scalar> GatedSpatialConv<T> {
    pub fn new<R: Rng>(name: &str, ch: usize, rng: &mut R) -> Self {
        GatedSpatialConv {
            feat: Conv2dLayer::same(&format!("{name}.feat"), ch, ch, 1, rng),
            gate: Conv2dLayer::new(&format!("{name}.gate"), ch, ch, 1, 1, 0, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let f = self.feat.forward(g, x)?;
        let gt = self.gate.forward(g, x)?;
        let sig = g.sigmoid(gt)?;
        let gated = g.mul(f, sig)?;
        g.add(x, gated)
    }
}

impl<T: Scalar> Parameterized<T> for GatedSpatialConv<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.feat.visit(f);
        self.gate.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.feat.visit_mut(f);
        self.gate.visit_mut(f);
    }
}
