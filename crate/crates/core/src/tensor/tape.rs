//! Wengert-style tape: ops are appended as they execute, backward walks the
//! list in reverse.

use super::{conv, ops, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Mixing weight for [`Tape::adaptive_mix`].
#[derive(Clone, Copy, Debug)]
pub enum MixWeight<T> {
    /// One constant weight for every element.
    Const(T),
    /// `[N, 1]` tensor: one weight per sample.
    PerSample(Var),
    /// `[N, C]` tensor: one weight per sample and channel.
    PerChannel(Var),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, kernel: Var, bias: Var, padding: usize },
    Linear { x: Var, weight: Var, bias: Var },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    PixelShuffle(Var, usize),
    Add(Var, Var),
    Sum(Var),
    L1Loss { pred: Var, target: Var },
    ChannelScale { x: Var, factors: Vec<T> },
    AdaptiveMix { x: Var, w: MixWeight<T>, factors: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, kernel, bias, .. } => vec![*x, *kernel, *bias],
            Op::Linear { x, weight, bias } => vec![*x, *weight, *bias],
            Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::GlobalAvgPool(x)
            | Op::PixelShuffle(x, _)
            | Op::Sum(x) => vec![*x],
            Op::Add(a, b) => vec![*a, *b],
            Op::L1Loss { pred, target } => vec![*pred, *target],
            Op::ChannelScale { x, .. } => vec![*x],
            Op::AdaptiveMix { x, w, .. } => match w {
                MixWeight::Const(_) => vec![*x],
                MixWeight::PerSample(w) | MixWeight::PerChannel(w) => vec![*x, *w],
            },
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation so gradients can be pulled back through it.
///
/// A tape is single-threaded by construction; build one per training step.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are collected for it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Drops every accumulated leaf gradient.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, op, needs_grad)
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(kernel), self.value(bias), padding)?;
        Ok(self.push_op(out, Op::Conv2d { x, kernel, bias, padding }))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear_forward(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push_op(out, Op::Linear { x, weight, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        self.push_op(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = ops::map(self.value(x), |v| if v > T::zero() { v } else { v * slope });
        self.push_op(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::sigmoid);
        self.push_op(out, Op::Sigmoid(x))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool_forward(self.value(x))?;
        Ok(self.push_op(out, Op::GlobalAvgPool(x)))
    }

    pub fn pixel_shuffle(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = ops::pixel_shuffle_forward(self.value(x), scale)?;
        Ok(self.push_op(out, Op::PixelShuffle(x, scale)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ops::same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::Add(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_op(out, Op::Sum(x))
    }

    /// Mean absolute error over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        ops::same_shape("l1_loss", p, t)?;
        let n = T::of(p.len() as f64);
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum();
        Ok(self.push_op(Tensor::scalar(total / n), Op::L1Loss { pred, target }))
    }

    /// Multiplies each `(n, c)` slice of a rank-4 tensor by `factors[n * C + c]`.
    pub fn channel_scale(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let out = ops::channel_scale_forward(self.value(x), &factors)?;
        Ok(self.push_op(out, Op::ChannelScale { x, factors }))
    }

    /// `w * x + (1 - w) * (factors ⊙ x)` with per-channel `factors`.
    pub fn adaptive_mix(&mut self, x: Var, w: MixWeight<T>, factors: Vec<T>) -> Result<Var> {
        let weights = match w {
            MixWeight::Const(v) => ops::MixView::Const(v),
            MixWeight::PerSample(v) => ops::MixView::PerSample(self.value(v)),
            MixWeight::PerChannel(v) => ops::MixView::PerChannel(self.value(v)),
        };
        let out = ops::adaptive_mix_forward(self.value(x), weights, &factors)?;
        Ok(self.push_op(out, Op::AdaptiveMix { x, w, factors }))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_len = self.value(loss).len();
        if loss_len != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                dim: "loss element count",
                expected: 1,
                actual: loss_len,
            });
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                adj[id] = Some(g);
                continue;
            }
            for (input, contribution) in self.local_grads(id, &g)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        for (id, g) in adj.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[id];
                if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    /// Signs of every value that sits at a non-differentiable point of a
    /// recorded op (activation inputs, `pred - target` of L1 losses).
    ///
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<i8> {
        fn sign<T: Scalar>(v: T) -> i8 {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        }
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => sig.extend(self.value(*x).data().iter().map(|&v| sign(v))),
                Op::L1Loss { pred, target } => sig.extend(
                    self.value(*pred).data().iter().zip(self.value(*target).data()).map(|(&a, &b)| sign(a - b)),
                ),
                _ => {}
            }
        }
        sig
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `id` for each of its inputs.
    fn local_grads(&self, id: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut grads = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, kernel, bias, padding } => {
                let (dx, dk, db) = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*kernel),
                    g,
                    *padding,
                    self.wants(*x),
                    self.wants(*kernel) || self.wants(*bias),
                )?;
                if let Some(dx) = dx {
                    grads.push((*x, dx));
                }
                if let Some((dk, db)) = dk.zip(db) {
                    grads.push((*kernel, dk));
                    grads.push((*bias, db));
                }
            }
            Op::Linear { x, weight, bias } => {
                let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*weight), g);
                grads.push((*x, dx));
                grads.push((*weight, dw));
                grads.push((*bias, db));
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                let dx = xs.iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() });
                grads.push((*x, dx.collect()));
            }
            Op::LeakyRelu(x, slope) => {
                let xs = self.value(*x).data();
                let dx = xs.iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { gv * *slope });
                grads.push((*x, dx.collect()));
            }
            Op::Sigmoid(x) => {
                let dx = out.data().iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s));
                grads.push((*x, dx.collect()));
            }
            Op::GlobalAvgPool(x) => {
                grads.push((*x, ops::global_avg_pool_backward(self.value(*x), g)));
            }
            Op::PixelShuffle(x, s) => {
                grads.push((*x, ops::pixel_shuffle_backward(self.value(*x), g, *s)));
            }
            Op::Add(a, b) => {
                grads.push((*a, g.to_vec()));
                grads.push((*b, g.to_vec()));
            }
            Op::Sum(x) => {
                grads.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::L1Loss { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = g[0] / T::of(p.len() as f64);
                let dp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(*target) {
                    grads.push((*target, dp.iter().map(|&v| -v).collect()));
                }
                grads.push((*pred, dp));
            }
            Op::ChannelScale { x, factors } => {
                grads.push((*x, ops::channel_scale_backward(self.value(*x), g, factors)));
            }
            Op::AdaptiveMix { x, w, factors } => {
                let weights = match w {
                    MixWeight::Const(v) => ops::MixView::Const(*v),
                    MixWeight::PerSample(v) => ops::MixView::PerSample(self.value(*v)),
                    MixWeight::PerChannel(v) => ops::MixView::PerChannel(self.value(*v)),
                };
                let (dx, dw) = ops::adaptive_mix_backward(self.value(*x), weights, factors, g);
                grads.push((*x, dx));
                if let (MixWeight::PerSample(wv) | MixWeight::PerChannel(wv), Some(dw)) = (w, dw) {
                    grads.push((*wv, dw));
                }
            }
        }
        Ok(grads)
    }
}
