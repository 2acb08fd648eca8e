//! Small layer toolkit: linear/conv layers with named, initialized
//! parameters. Kernels and blocks compose these; nothing here is clever.

use crate::error::Result;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Tensor, Var};
use rand::Rng;

pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// y = x W + b on the trailing dim; x: (..., in), W: (in, out).
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = Param::new(
            format!("{name}.weight"),
            Tensor::randn(&[fan_in, fan_out], xavier_std(fan_in, fan_out), rng),
        );
        let b = bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear { w, b }
    }

    /// Exact identity map (square only); used by identity-initialized adapters.
    pub fn identity(name: &str, dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.set(&[i, i], T::one());
        }
        Linear {
            w: Param::new(format!("{name}.weight"), w),
            b: None,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.w);
        let y = g.matmul(x, w)?;
        match &self.b {
            Some(b) => {
                let bv = g.param(b);
                g.add(y, bv)
            }
            None => Ok(y),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.w);
        if let Some(b) = &self.b {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

pub struct Conv2dLayer<T> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch / groups) * kernel * kernel;
        let w = Param::new(
            format!("{name}.weight"),
            Tensor::randn(
                &[out_ch, in_ch / groups, kernel, kernel],
                he_std(fan_in),
                rng,
            ),
        );
        let b = bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Conv2dLayer {
            w,
            b,
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (dilation, dilation),
            groups,
        }
    }

    /// 3x3 same-resolution conv.
    pub fn same<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        Conv2dLayer::new(name, in_ch, out_ch, 3, 1, dilation, dilation, 1, true, rng)
    }

    /// Depthwise conv with centered-delta ("identity") kernels.
    pub fn depthwise_identity(name: &str, ch: usize, kernel: usize) -> Self {
        let mut w = Tensor::zeros(&[ch, 1, kernel, kernel]);
        let mid = kernel / 2;
        for c in 0..ch {
            w.set(&[c, 0, mid, mid], T::one());
        }
        Conv2dLayer {
            w: Param::new(format!("{name}.weight"), w),
            b: None,
            stride: (1, 1),
            padding: (kernel / 2, kernel / 2),
            dilation: (1, 1),
            groups: ch,
        }
    }

    /// 1x1 conv whose matrix is the identity (square only).
    pub fn pointwise_identity(name: &str, ch: usize) -> Self {
        let mut w = Tensor::zeros(&[ch, ch, 1, 1]);
        for c in 0..ch {
            w.set(&[c, c, 0, 0], T::one());
        }
        Conv2dLayer {
            w: Param::new(format!("{name}.weight"), w),
            b: None,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.w);
        let b = self.b.as_ref().map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.padding, self.dilation, self.groups)
    }
}

impl<T: Scalar> Parameterized<T> for Conv2dLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.w);
        if let Some(b) = &self.b {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

pub struct ConvTranspose2dLayer<T> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvTranspose2dLayer<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = Param::new(
            format!("{name}.weight"),
            Tensor::randn(&[in_ch, out_ch, kernel, kernel], he_std(fan_in), rng),
        );
        let b = bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        ConvTranspose2dLayer {
            w,
            b,
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.w);
        let b = self.b.as_ref().map(|b| g.param(b));
        g.conv_transpose2d(x, w, b, self.stride, self.padding)
    }
}

impl<T: Scalar> Parameterized<T> for ConvTranspose2dLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.w);
        if let Some(b) = &self.b {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

/// Layer norm over the trailing dim(s) covered by gamma.
pub struct LayerNormLayer<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNormLayer<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNormLayer {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

impl<T: Scalar> Parameterized<T> for LayerNormLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

pub struct InstanceNormLayer<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> InstanceNormLayer<T> {
    pub fn new(name: &str, ch: usize) -> Self {
        InstanceNormLayer {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[ch], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[ch])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.instance_norm(x, gamma, beta, self.eps)
    }
}

impl<T: Scalar> Parameterized<T> for InstanceNormLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// conv 3x3 -> instance norm -> leaky relu(0.01), the CNN stage unit.
pub struct ConvNormAct<T> {
    pub conv: Conv2dLayer<T>,
    pub norm: InstanceNormLayer<T>,
}

impl<T: Scalar> ConvNormAct<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        ConvNormAct {
            conv: Conv2dLayer::same(&format!("{name}.conv"), in_ch, out_ch, dilation, rng),
            norm: InstanceNormLayer::new(&format!("{name}.norm"), out_ch),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn strided<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        ConvNormAct {
            conv: Conv2dLayer::new(
                &format!("{name}.conv"),
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                1,
                1,
                true,
                rng,
            ),
            norm: InstanceNormLayer::new(&format!("{name}.norm"), out_ch),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let c = self.conv.forward(g, x)?;
        let n = self.norm.forward(g, c)?;
        g.leaky_relu(n, 0.01)
    }
}

impl<T: Scalar> Parameterized<T> for ConvNormAct<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

impl<T: Scalar, M: Parameterized<T>> Parameterized<T> for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for m in self {
            m.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for m in self {
            m.visit_mut(f);
        }
    }
}

impl<T: Scalar, M: Parameterized<T>> Parameterized<T> for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(f);
        }
    }
}
