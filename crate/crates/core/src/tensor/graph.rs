//! The recording tape: eager op execution plus reverse-mode replay.
//!
//! Every primitive application appends one node (op id, input handles,
//! attributes, output value). Nodes are appended in execution order, so the
//! node list is already topologically sorted and [`Graph::backward`] walks it
//! in reverse, accumulating adjoints into every `requires_grad` leaf exactly
//! once per use.

use super::shape::fmt_shape;
use super::{Param, Scalar, Tensor};
use crate::error::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::Arc;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

// Attribute fields are part of the recorded node even when an adjoint can
// reconstruct them from saved context.
#[allow(dead_code)]
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { requires_grad: bool },
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Relu,
    LeakyRelu { slope: f64 },
    Gelu,
    Silu,
    Softplus,
    /// y = a*x + b, elementwise with scalar constants.
    Affine { a: f64, b: f64 },
    MatMul,
    SumAxes { axes: Vec<usize>, keepdims: bool },
    MeanAxes { axes: Vec<usize>, keepdims: bool },
    Softmax { axis: usize },
    Concat { axis: usize },
    Slice { ranges: Vec<(usize, usize)> },
    Reshape,
    Permute { perm: Vec<usize> },
    Pad { pads: Vec<(usize, usize)>, value: f64 },
    UpsampleNearest { scale: usize },
    UpsampleBilinear { scale: usize },
    MaxPool2d { kernel: (usize, usize), stride: (usize, usize) },
    LayerNorm { eps: f64 },
    InstanceNorm { eps: f64 },
    Dropout { p: f64 },
    Conv2d {
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
    },
    ConvTranspose2d {
        stride: (usize, usize),
        padding: (usize, usize),
    },
    /// Sequence reorder along L of a (B, L, C) tensor: out[b,t,c] = x[b, perm[t], c].
    SeqPermute { perm: Arc<Vec<usize>> },
    IndexSelect { axis: usize, indices: Arc<Vec<usize>> },
    SelectiveScan,
    CrossEntropy { labels: Arc<Vec<u32>>, ignore: u32 },
}

/// Per-node context captured in forward and consumed by the adjoint.
#[derive(Debug, Clone)]
pub(crate) enum Saved<T> {
    None,
    /// max_pool2d: flat input index of each output element's argmax.
    Argmax(Vec<usize>),
    /// dropout keep mask.
    Mask(Vec<bool>),
    /// selective_scan: full hidden-state trajectory, laid out (B, L, D, N).
    States(Vec<T>),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub needs_grad: bool,
}

/// Recording tape plus value arena. Single-owner, single-threaded.
pub struct Graph<T: Scalar> {
    pub(crate) values: Vec<Tensor<T>>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) saved: Vec<Saved<T>>,
    param_nodes: HashMap<u64, usize>,
    pub(crate) rng: ChaCha8Rng,
    train: bool,
    inference: bool,
    retained: Vec<Vec<usize>>,
    pub(crate) threads: usize,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            nodes: Vec::new(),
            saved: Vec::new(),
            param_nodes: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            train: false,
            inference: false,
            retained: Vec::new(),
            threads: 1,
        }
    }

    /// Inference mode: leaves are never tracked, adjoint context is not
    /// saved, and [`Graph::trim`] may free dead activations.
    pub fn with_inference(mut self) -> Self {
        self.inference = true;
        self
    }

    pub fn is_inference(&self) -> bool {
        self.inference
    }

    /// Protect `vars` from trimming until the matching [`Graph::retain_pop`].
    pub fn retain_push(&mut self, vars: &[Var]) {
        self.retained.push(vars.iter().map(|v| v.0).collect());
    }

    pub fn retain_pop(&mut self) {
        self.retained.pop();
    }

    /// In inference mode, free every activation buffer except leaves, the
    /// retain stack, and `keep`. No-op when gradients are being recorded.
    pub fn trim(&mut self, keep: &[Var]) {
        if !self.inference {
            return;
        }
        let mut live = vec![false; self.nodes.len()];
        for frame in &self.retained {
            for &id in frame {
                live[id] = true;
            }
        }
        for v in keep {
            live[v.0] = true;
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { .. }) {
                live[id] = true;
            }
        }
        for (id, alive) in live.iter().enumerate() {
            if !alive && !self.values[id].data().is_empty() {
                self.values[id] = Tensor::tombstone(self.values[id].shape().to_vec());
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_train(mut self, train: bool) -> Self {
        self.train = train;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub(crate) fn record(&mut self, op: Op, inputs: Vec<usize>, value: Tensor<T>) -> Var {
        self.record_saved(op, inputs, value, Saved::None)
    }

    pub(crate) fn record_saved(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        value: Tensor<T>,
        saved: Saved<T>,
    ) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite output from {:?} (inputs {:?})",
            op,
            inputs
        );
        let needs_grad = match op {
            Op::Leaf { requires_grad } => requires_grad,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, needs_grad });
        self.values.push(value);
        self.saved.push(saved);
        Var(id)
    }

    /// Register a leaf tensor, optionally tracked for gradients. In
    /// inference mode nothing is tracked.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && !self.inference;
        self.record(Op::Leaf { requires_grad: rg }, vec![], value)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Register a parameter as a tracked leaf. Repeated uses of the same
    /// parameter in one graph share a single node so adjoints accumulate.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&id) = self.param_nodes.get(&p.id()) {
            return Var(id);
        }
        let v = self.leaf(p.value.clone(), true);
        self.param_nodes.insert(p.id(), v.0);
        v
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                fmt_shape(self.shape(a)),
                fmt_shape(self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar loss. The tape stays intact and
    /// reusable (values remain readable; a fresh backward can be run from
    /// any later loss node).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        if self.values[loss.0].numel() != 1 {
            return Err(Error::LossNotScalar(fmt_shape(self.values[loss.0].shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), T::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            // Every consumer of `id` has a larger id, so grads[id] is final here.
            let gout = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(id, &gout, &mut grads)?;
        }

        Ok(Gradients {
            by_node: grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    pub(crate) fn wants(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn backward_node(
        &self,
        id: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                self.bw_binary(id, gout, grads);
            }
            Op::Neg
            | Op::Exp
            | Op::Log
            | Op::Sigmoid
            | Op::Relu
            | Op::LeakyRelu { .. }
            | Op::Gelu
            | Op::Silu
            | Op::Softplus
            | Op::Affine { .. } => {
                self.bw_unary(id, gout, grads);
            }
            Op::MatMul => self.bw_matmul(id, gout, grads),
            Op::SumAxes { axes, keepdims } | Op::MeanAxes { axes, keepdims } => {
                let mean = matches!(node.op, Op::MeanAxes { .. });
                self.bw_reduce(id, axes, *keepdims, mean, gout, grads);
            }
            Op::Softmax { axis } => self.bw_softmax(id, *axis, gout, grads),
            Op::Concat { axis } => self.bw_concat(id, *axis, gout, grads),
            Op::Slice { ranges } => self.bw_slice(id, ranges, gout, grads),
            Op::Reshape => {
                if self.wants(ins[0]) {
                    let g = gout.clone().reshaped(self.values[ins[0]].shape().to_vec())?;
                    acc_grad(grads, ins[0], g);
                }
            }
            Op::Permute { perm } => self.bw_permute(id, perm, gout, grads),
            Op::Pad { pads, .. } => self.bw_pad(id, pads, gout, grads),
            Op::UpsampleNearest { scale } => self.bw_upsample_nearest(id, *scale, gout, grads),
            Op::UpsampleBilinear { scale } => self.bw_upsample_bilinear(id, *scale, gout, grads),
            Op::MaxPool2d { .. } => self.bw_max_pool2d(id, gout, grads),
            Op::LayerNorm { eps } => self.bw_layer_norm(id, *eps, gout, grads),
            Op::InstanceNorm { eps } => self.bw_instance_norm(id, *eps, gout, grads),
            Op::Dropout { p } => self.bw_dropout(id, *p, gout, grads),
            Op::Conv2d {
                stride,
                padding,
                dilation,
                groups,
            } => self.bw_conv2d(id, *stride, *padding, *dilation, *groups, gout, grads),
            Op::ConvTranspose2d { stride, padding } => {
                self.bw_conv_transpose2d(id, *stride, *padding, gout, grads)
            }
            Op::SeqPermute { perm } => self.bw_seq_permute(id, perm, gout, grads),
            Op::IndexSelect { axis, indices } => {
                self.bw_index_select(id, *axis, indices, gout, grads)
            }
            Op::SelectiveScan => self.bw_selective_scan(id, gout, grads),
            Op::CrossEntropy { labels, ignore } => {
                self.bw_cross_entropy(id, labels, *ignore, gout, grads)
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

/// Accumulate `g` into the slot for node `id`.
pub(crate) fn acc_grad<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            let dst = existing.data_mut();
            for (d, s) in dst.iter_mut().zip(g.data()) {
                *d += *s;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by one backward sweep. Leaf slots hold the accumulated
/// adjoints; interior slots were consumed during the sweep.
pub struct Gradients<T: Scalar> {
    by_node: Vec<Option<Tensor<T>>>,
    param_nodes: HashMap<u64, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a leaf variable.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the loss with respect to a registered parameter.
    pub fn of_param(&self, p: &Param<T>) -> Option<&Tensor<T>> {
        self.param_nodes
            .get(&p.id())
            .and_then(|&id| self.by_node[id].as_ref())
    }
}

/// Attribute bag for the string-keyed [`Graph::apply_primitive`] entry point.
#[derive(Debug, Default, Clone)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub axes: Option<Vec<usize>>,
    pub keepdims: Option<bool>,
    pub slope: Option<f64>,
    pub eps: Option<f64>,
    pub p: Option<f64>,
    pub value: Option<f64>,
    pub scale: Option<usize>,
    pub kernel: Option<(usize, usize)>,
    pub stride: Option<(usize, usize)>,
    pub padding: Option<(usize, usize)>,
    pub dilation: Option<(usize, usize)>,
    pub groups: Option<usize>,
    pub ranges: Option<Vec<(usize, usize)>>,
    pub pads: Option<Vec<(usize, usize)>>,
    pub shape: Option<Vec<usize>>,
    pub perm: Option<Vec<usize>>,
}

macro_rules! need {
    ($attrs:expr, $field:ident, $op:expr) => {
        $attrs.$field.clone().ok_or(Error::BadAttribute {
            op: $op,
            attr: stringify!($field).to_string(),
        })?
    };
}

impl<T: Scalar> Graph<T> {
    /// Dynamic dispatch over the primitive catalog by name. The typed methods
    /// are the first-class interface; this entry point exists so callers can
    /// drive the catalog generically and get `UnknownOp` for anything else.
    pub fn apply_primitive(&mut self, op_id: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let want = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(
                    "apply_primitive",
                    format!("{n} inputs"),
                    format!("{} inputs", inputs.len()),
                ));
            }
            Ok(())
        };
        match op_id {
            "add" => { want(2)?; self.add(inputs[0], inputs[1]) }
            "sub" => { want(2)?; self.sub(inputs[0], inputs[1]) }
            "mul" => { want(2)?; self.mul(inputs[0], inputs[1]) }
            "div" => { want(2)?; self.div(inputs[0], inputs[1]) }
            "neg" => { want(1)?; self.neg(inputs[0]) }
            "exp" => { want(1)?; self.exp(inputs[0]) }
            "log" => { want(1)?; self.log(inputs[0]) }
            "sigmoid" => { want(1)?; self.sigmoid(inputs[0]) }
            "relu" => { want(1)?; self.relu(inputs[0]) }
            "leaky_relu" => {
                want(1)?;
                let slope = need!(attrs, slope, "leaky_relu");
                self.leaky_relu(inputs[0], slope)
            }
            "gelu" => { want(1)?; self.gelu(inputs[0]) }
            "silu" => { want(1)?; self.silu(inputs[0]) }
            "softplus" => { want(1)?; self.softplus(inputs[0]) }
            "matmul" => { want(2)?; self.matmul(inputs[0], inputs[1]) }
            "sum" => {
                want(1)?;
                let axes = need!(attrs, axes, "sum");
                self.sum_axes(inputs[0], &axes, attrs.keepdims.unwrap_or(false))
            }
            "mean" => {
                want(1)?;
                let axes = need!(attrs, axes, "mean");
                self.mean_axes(inputs[0], &axes, attrs.keepdims.unwrap_or(false))
            }
            "softmax" => {
                want(1)?;
                let axis = need!(attrs, axis, "softmax");
                self.softmax(inputs[0], axis)
            }
            "concat" => {
                let axis = need!(attrs, axis, "concat");
                self.concat(inputs, axis)
            }
            "slice" => {
                want(1)?;
                let ranges = need!(attrs, ranges, "slice");
                self.slice(inputs[0], &ranges)
            }
            "reshape" => {
                want(1)?;
                let shape = need!(attrs, shape, "reshape");
                self.reshape(inputs[0], &shape)
            }
            "permute" => {
                want(1)?;
                let perm = need!(attrs, perm, "permute");
                self.permute(inputs[0], &perm)
            }
            "pad" => {
                want(1)?;
                let pads = need!(attrs, pads, "pad");
                self.pad(inputs[0], &pads, attrs.value.unwrap_or(0.0))
            }
            "upsample_nearest" => {
                want(1)?;
                let scale = need!(attrs, scale, "upsample_nearest");
                self.upsample_nearest(inputs[0], scale)
            }
            "upsample_bilinear" => {
                want(1)?;
                let scale = need!(attrs, scale, "upsample_bilinear");
                self.upsample_bilinear(inputs[0], scale)
            }
            "max_pool2d" => {
                want(1)?;
                let kernel = need!(attrs, kernel, "max_pool2d");
                let stride = need!(attrs, stride, "max_pool2d");
                self.max_pool2d(inputs[0], kernel, stride)
            }
            "layer_norm" => {
                want(3)?;
                let eps = need!(attrs, eps, "layer_norm");
                self.layer_norm(inputs[0], inputs[1], inputs[2], eps)
            }
            "instance_norm" => {
                want(3)?;
                let eps = need!(attrs, eps, "instance_norm");
                self.instance_norm(inputs[0], inputs[1], inputs[2], eps)
            }
            "dropout" => {
                want(1)?;
                let p = need!(attrs, p, "dropout");
                self.dropout(inputs[0], p)
            }
            "conv2d" => {
                let (x, w, b) = match inputs.len() {
                    2 => (inputs[0], inputs[1], None),
                    3 => (inputs[0], inputs[1], Some(inputs[2])),
                    n => {
                        return Err(Error::shape(
                            "conv2d",
                            "2 or 3 inputs".to_string(),
                            format!("{n} inputs"),
                        ))
                    }
                };
                self.conv2d(
                    x,
                    w,
                    b,
                    attrs.stride.unwrap_or((1, 1)),
                    attrs.padding.unwrap_or((0, 0)),
                    attrs.dilation.unwrap_or((1, 1)),
                    attrs.groups.unwrap_or(1),
                )
            }
            "conv_transpose2d" => {
                let (x, w, b) = match inputs.len() {
                    2 => (inputs[0], inputs[1], None),
                    3 => (inputs[0], inputs[1], Some(inputs[2])),
                    n => {
                        return Err(Error::shape(
                            "conv_transpose2d",
                            "2 or 3 inputs".to_string(),
                            format!("{n} inputs"),
                        ))
                    }
                };
                self.conv_transpose2d(
                    x,
                    w,
                    b,
                    attrs.stride.unwrap_or((1, 1)),
                    attrs.padding.unwrap_or((0, 0)),
                )
            }
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_then_backward_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap(), true);
        let s = g.sum_all(x).unwrap();
        assert_eq!(g.value(s).item(), 6.0);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        assert!(matches!(g.backward(x), Err(Error::LossNotScalar(_))));
    }

    #[test]
    fn unknown_primitive_is_reported() {
        let mut g = Graph::<f64>::new();
        let err = g
            .apply_primitive("frobnicate", &[], &Attrs::default())
            .unwrap_err();
        assert!(matches!(err, Error::UnknownOp(_)));
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.of(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }
}
