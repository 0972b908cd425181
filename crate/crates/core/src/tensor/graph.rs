//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, so nodes are
//! already topologically sorted and [`Graph::backward`] is a single reverse
//! sweep.

use super::array::Tensor;
use super::conv::{self, ConvGeom};
use super::loss;
use super::ops::{self, NormCache};
use super::resample::{self, DownMode, UpMode};
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    InstanceNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, cache: NormCache<T> },
    LeakyRelu { x: Var, slope: T },
    Softmax { x: Var },
    Concat { a: Var, b: Var },
    SelectChannel { x: Var, channel: usize },
    Affine { x: Var, scale: T },
    Mul { a: Var, b: Var },
    Inner { a: Var, b: Var },
    Down { x: Var, mode: DownMode },
    Up { x: Var, mode: UpMode },
    Dice { p: Var, target: Var, eps: f64 },
    Ce { p: Var, target: Var },
    WeightedSum { terms: Vec<(Var, T)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of leaf nodes produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn bias_slice<T: Scalar>(g: &Graph<T>, b: Option<Var>) -> &[T] {
    b.map(|b| g.value(b).data()).unwrap_or(&[])
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv3d(self.value(x), self.value(w), bias_slice(self, b), &geom)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(y, Op::Conv { x, w, b, geom }, &inputs, "conv3d")
    }

    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv_transpose3d(self.value(x), self.value(w), bias_slice(self, b), &geom)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(y, Op::ConvT { x, w, b, geom }, &inputs, "conv_transpose3d")
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: f64) -> Result<Var> {
        let (y, cache) = ops::instance_norm(
            self.value(x),
            bias_slice(self, gamma),
            bias_slice(self, beta),
            T::from_f64(eps),
        )?;
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        self.push(y, Op::InstanceNorm { x, gamma, beta, cache }, &inputs, "instance_norm")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let slope = T::from_f64(slope);
        let y = ops::leaky_relu(self.value(x), slope);
        self.push(y, Op::LeakyRelu { x, slope }, &[x], "leaky_relu")
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_channels(self.value(x));
        self.push(y, Op::Softmax { x }, &[x], "softmax_channels")
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        self.push(y, Op::Concat { a, b }, &[a, b], "concat_channels")
    }

    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let y = ops::select_channel(self.value(x), channel)?;
        self.push(y, Op::SelectChannel { x, channel }, &[x], "select_channel")
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        let y = self.value(x).map(|v| s * v + t);
        self.push(y, Op::Affine { x, scale: s }, &[x], "affine")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        self.push(y, Op::Mul { a, b }, &[a, b], "elementwise_mul")
    }

    /// `sum_i a_i * b_i` as a one-element tensor.
    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("inner", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let v = T::from_f64(ta.dot(tb));
        self.push(Tensor::scalar(v), Op::Inner { a, b }, &[a, b], "inner")
    }

    pub fn downsample(&mut self, x: Var, mode: DownMode) -> Result<Var> {
        let y = resample::downsample(self.value(x), mode)?;
        self.push(y, Op::Down { x, mode }, &[x], "downsample")
    }

    pub fn upsample(&mut self, x: Var, mode: UpMode) -> Result<Var> {
        let y = resample::upsample(self.value(x), mode);
        self.push(y, Op::Up { x, mode }, &[x], "upsample")
    }

    pub fn dice_loss(&mut self, p: Var, target: Var, eps: f64) -> Result<Var> {
        let l = loss::dice_loss(self.value(p), self.value(target), eps)?;
        self.push(Tensor::scalar(l), Op::Dice { p, target, eps }, &[p], "dice_loss")
    }

    pub fn ce_loss(&mut self, p: Var, target: Var) -> Result<Var> {
        let l = loss::ce_loss(self.value(p), self.value(target))?;
        self.push(Tensor::scalar(l), Op::Ce { p, target }, &[p], "ce_loss")
    }

    /// `sum_i w_i * s_i` over one-element tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = T::ZERO;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("weighted_sum", format!("term of shape {:?}", t.shape())));
            }
            acc += T::from_f64(w) * t.item();
        }
        let terms: Vec<(Var, T)> = terms.iter().map(|&(v, w)| (v, T::from_f64(w))).collect();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::scalar(acc), Op::WeightedSum { terms }, &inputs, "weighted_sum")
    }

    /// Reverse sweep from a one-element node. Only leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "loss must be a single value"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var, g: Tensor<T>) {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = conv::conv3d_backward(self.value(*x), self.value(*w), geom, &dy);
                    acc(&mut grads, nodes, *x, dx);
                    acc(&mut grads, nodes, *w, dw);
                    if let Some(b) = b {
                        let shape = self.value(*b).shape();
                        acc(&mut grads, nodes, *b, Tensor::from_vec(shape, db)?);
                    }
                }
                Op::ConvT { x, w, b, geom } => {
                    let (dx, dw, db) = conv::conv_transpose3d_backward(self.value(*x), self.value(*w), geom, &dy);
                    acc(&mut grads, nodes, *x, dx);
                    acc(&mut grads, nodes, *w, dw);
                    if let Some(b) = b {
                        let shape = self.value(*b).shape();
                        acc(&mut grads, nodes, *b, Tensor::from_vec(shape, db)?);
                    }
                }
                Op::InstanceNorm { x, gamma, beta, cache } => {
                    let (dx, dg, dbt) = ops::instance_norm_backward(cache, bias_slice(self, *gamma), &dy);
                    acc(&mut grads, nodes, *x, dx);
                    if let Some(g) = gamma {
                        let shape = self.value(*g).shape();
                        acc(&mut grads, nodes, *g, Tensor::from_vec(shape, dg)?);
                    }
                    if let Some(b) = beta {
                        let shape = self.value(*b).shape();
                        acc(&mut grads, nodes, *b, Tensor::from_vec(shape, dbt)?);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = ops::leaky_relu_backward(self.value(*x), *slope, &dy);
                    acc(&mut grads, nodes, *x, dx);
                }
                Op::Softmax { x } => {
                    let dx = ops::softmax_channels_backward(&node.value, &dy);
                    acc(&mut grads, nodes, *x, dx);
                }
                Op::Concat { a, b } => {
                    let (da, db) = ops::split_channels(&dy, self.value(*a).channels());
                    acc(&mut grads, nodes, *a, da);
                    acc(&mut grads, nodes, *b, db);
                }
                Op::SelectChannel { x, channel } => {
                    let src = self.value(*x);
                    let mut dx = Tensor::zeros(src.shape());
                    for b in 0..src.batch() {
                        dx.plane_mut(b, *channel).copy_from_slice(dy.plane(b, 0));
                    }
                    acc(&mut grads, nodes, *x, dx);
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    acc(&mut grads, nodes, *x, dy.map(|v| s * v));
                }
                Op::Mul { a, b } => {
                    let da = ops::mul(&dy, self.value(*b))?;
                    let db = ops::mul(&dy, self.value(*a))?;
                    acc(&mut grads, nodes, *a, da);
                    acc(&mut grads, nodes, *b, db);
                }
                Op::Inner { a, b } => {
                    let s = dy.item();
                    acc(&mut grads, nodes, *a, self.value(*b).map(|v| v * s));
                    acc(&mut grads, nodes, *b, self.value(*a).map(|v| v * s));
                }
                Op::Down { x, mode } => {
                    let dx = resample::downsample_backward(self.value(*x), *mode, &dy);
                    acc(&mut grads, nodes, *x, dx);
                }
                Op::Up { x, mode } => {
                    let dx = resample::upsample_backward(*mode, &dy);
                    acc(&mut grads, nodes, *x, dx);
                }
                Op::Dice { p, target, eps } => {
                    let dp = loss::dice_loss_backward(self.value(*p), self.value(*target), *eps, dy.item());
                    acc(&mut grads, nodes, *p, dp);
                }
                Op::Ce { p, target } => {
                    let dp = loss::ce_loss_backward(self.value(*p), self.value(*target), dy.item());
                    acc(&mut grads, nodes, *p, dp);
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        acc(&mut grads, nodes, v, Tensor::scalar(w * dy.item()));
                    }
                }
            }
        }
        // Intermediate gradients were consumed above; only leaves remain.
        Ok(Grads { grads })
    }
}
