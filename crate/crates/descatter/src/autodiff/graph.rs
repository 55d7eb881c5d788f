//! Reverse-mode differentiation over an append-only op graph.
//!
//! A forward pass records one node per op; `backward` walks the nodes in
//! reverse creation order (a topological order by construction) and fills
//! per-node gradients. Gradients are overwritten, not accumulated, across
//! `backward` calls.

use super::conv;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Predicted probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`
/// before the logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Var,
    Param(usize),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: usize,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2x {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    BceLoss {
        pred: NodeId,
        target: NodeId,
    },
    Sum {
        input: NodeId,
    },
}

struct Node<E: Scalar> {
    op: Op,
    value: Tensor<E>,
    grad: Option<Tensor<E>>,
    requires_grad: bool,
}

/// Computation graph for one forward pass.
pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor<E>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node<E> {
        &self.nodes[id.0]
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable input (used by gradient checks).
    pub fn var(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Op::Var, value, true)
    }

    /// Differentiable input bound to a model parameter slot.
    pub fn param(&mut self, slot: usize, value: Tensor<E>) -> NodeId {
        self.push(Op::Param(slot), value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.node(id).value
    }

    /// Gradient of the last `backward` target w.r.t. this node, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.node(id).grad.as_ref()
    }

    /// Same-padding cross-correlation with bias.
    /// `input` is `[B, Cin, H, W]`, `kernel` `[Cout, Cin, k, k]`, `bias` `[Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        pad: usize,
    ) -> Result<NodeId> {
        let dims = self.node(input).value.dims4()?;
        let (b_n, ci_n, h, w) = dims;
        let kshape = self.node(kernel).value.shape().to_vec();
        let (co_n, kci, k, k2) = match kshape.as_slice() {
            [a, b, c, d] => (*a, *b, *c, *d),
            other => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel must be 4-D, got {other:?}"),
                ))
            }
        };
        if kci != ci_n {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {ci_n} (input shape {:?}) do not match kernel Cin {kci} (kernel shape {kshape:?})",
                    self.node(input).value.shape()
                ),
            ));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel must be square with odd side, got {k}x{k2}"
            )));
        }
        if pad != (k - 1) / 2 {
            return Err(Error::Config(format!(
                "conv2d supports same-padding only: kernel {k} needs padding {}, got {pad}",
                (k - 1) / 2
            )));
        }
        if self.node(bias).value.shape() != [co_n] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match Cout {co_n}",
                    self.node(bias).value.shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(&[b_n, co_n, h, w]);
        conv::conv2d_forward(
            self.node(input).value.data(),
            self.node(kernel).value.data(),
            self.node(bias).value.data(),
            out.data_mut(),
            dims,
            co_n,
            k,
            pad,
        );
        let rg = self.node(input).requires_grad
            || self.node(kernel).requires_grad
            || self.node(bias).requires_grad;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad,
            },
            out,
            rg,
        ))
    }

    /// 2x2 max pooling; height and width must be even.
    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let dims = self.node(input).value.dims4()?;
        let (b_n, c_n, h, w) = dims;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2d",
                format!("spatial size {h}x{w} must be even"),
            ));
        }
        let mut out = Tensor::zeros(&[b_n, c_n, h / 2, w / 2]);
        let mut argmax = vec![0u32; out.numel()];
        conv::maxpool2d_forward(self.node(input).value.data(), out.data_mut(), &mut argmax, dims);
        let rg = self.node(input).requires_grad;
        Ok(self.push(Op::MaxPool2d { input, argmax }, out, rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2x(&mut self, input: NodeId) -> Result<NodeId> {
        let dims = self.node(input).value.dims4()?;
        let (b_n, c_n, h, w) = dims;
        let mut out = Tensor::zeros(&[b_n, c_n, 2 * h, 2 * w]);
        conv::upsample2x_forward(self.node(input).value.data(), out.data_mut(), dims);
        let rg = self.node(input).requires_grad;
        Ok(self.push(Op::Upsample2x { input }, out, rg))
    }

    /// Concatenates along the channel axis; `a` keeps the leading channels.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ba, c1, ha, wa) = self.node(a).value.dims4()?;
        let (bb, c2, hb, wb) = self.node(b).value.dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "batch/spatial mismatch: {:?} vs {:?}",
                    self.node(a).value.shape(),
                    self.node(b).value.shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(&[ba, c1 + c2, ha, wa]);
        conv::concat_forward(
            self.node(a).value.data(),
            self.node(b).value.data(),
            out.data_mut(),
            (ba, c1, c2, ha * wa),
        );
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::ConcatChannels { a, b }, out, rg))
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.node(input).value.map(|v| v.max(E::zero()));
        let rg = self.node(input).requires_grad;
        self.push(Op::Relu { input }, out, rg)
    }

    /// Numerically stable logistic function; output is clamped into the open
    /// interval (0, 1) even where the exponential saturates.
    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let lo = E::min_positive_value();
        let hi = E::one() - E::epsilon() / (E::one() + E::one());
        let out = self.node(input).value.map(|v| {
            let s = if v >= E::zero() {
                E::one() / (E::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (E::one() + e)
            };
            s.max(lo).min(hi)
        });
        let rg = self.node(input).requires_grad;
        self.push(Op::Sigmoid { input }, out, rg)
    }

    /// Binary cross entropy averaged over every element of the batch:
    /// `-(1/(n*N)) * sum(y*ln(a) + (1-y)*ln(1-a))` with `a` clamped away
    /// from 0 and 1. The sum is accumulated in `f64`.
    pub fn bce_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.node(pred).value.shape() != self.node(target).value.shape() {
            return Err(Error::shape(
                "bce_loss",
                format!(
                    "prediction shape {:?} does not match target shape {:?}",
                    self.node(pred).value.shape(),
                    self.node(target).value.shape()
                ),
            ));
        }
        let mut acc = 0.0f64;
        for (&a, &y) in self
            .node(pred)
            .value
            .data()
            .iter()
            .zip(self.node(target).value.data())
        {
            let a = a.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.as_f64();
            acc += y * a.ln() + (1.0 - y) * (1.0 - a).ln();
        }
        let count = self.node(pred).value.numel() as f64;
        let loss = Tensor::scalar(E::from_f64(-acc / count));
        let rg = self.node(pred).requires_grad;
        Ok(self.push(Op::BceLoss { pred, target }, loss, rg))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.node(input).value.data().iter().map(|v| v.as_f64()).sum();
        let rg = self.node(input).requires_grad;
        self.push(Op::Sum { input }, Tensor::scalar(E::from_f64(total)), rg)
    }

    fn add_to_grad(&mut self, id: NodeId, delta: Tensor<E>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn ensure_grad(&mut self, id: NodeId) {
        if self.nodes[id.0].grad.is_none() {
            let shape = self.nodes[id.0].value.shape().to_vec();
            self.nodes[id.0].grad = Some(Tensor::zeros(&shape));
        }
    }

    /// Reverse pass from a scalar node. Fills gradients for every node that
    /// requires them; previous gradients are discarded first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "backward requested for node {} but the graph has {} nodes (no forward pass recorded it)",
                loss.0,
                self.nodes.len()
            )));
        }
        if !self.node(loss).value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.node(loss).value.shape()
                ),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(E::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backprop_node(NodeId(i))?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: NodeId) -> Result<()> {
        // The node's own gradient is complete by now (all consumers have
        // larger indices); take it out to sidestep aliasing, restore after.
        let grad_out = self.nodes[id.0].grad.take().expect("grad present");
        self.backprop_with(id, &grad_out)?;
        self.nodes[id.0].grad = Some(grad_out);
        Ok(())
    }

    fn backprop_with(&mut self, id: NodeId, grad_out: &Tensor<E>) -> Result<()> {
        match &self.nodes[id.0].op {
            Op::Leaf | Op::Var | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad,
            } => {
                let (input, kernel, bias, pad) = (*input, *kernel, *bias, *pad);
                let dims = self.node(input).value.dims4()?;
                let k = self.node(kernel).value.shape()[2];
                let co_n = self.node(kernel).value.shape()[0];
                if self.node(input).requires_grad {
                    let mut gi = Tensor::zeros(self.node(input).value.shape());
                    conv::conv2d_backward_input(
                        grad_out.data(),
                        self.node(kernel).value.data(),
                        gi.data_mut(),
                        dims,
                        co_n,
                        k,
                        pad,
                    );
                    self.add_to_grad(input, gi);
                }
                if self.node(kernel).requires_grad || self.node(bias).requires_grad {
                    let mut gk = Tensor::zeros(self.node(kernel).value.shape());
                    let mut gb = Tensor::zeros(self.node(bias).value.shape());
                    conv::conv2d_backward_kernel(
                        self.node(input).value.data(),
                        grad_out.data(),
                        gk.data_mut(),
                        gb.data_mut(),
                        dims,
                        co_n,
                        k,
                        pad,
                    );
                    if self.node(kernel).requires_grad {
                        self.add_to_grad(kernel, gk);
                    }
                    if self.node(bias).requires_grad {
                        self.add_to_grad(bias, gb);
                    }
                }
            }
            Op::MaxPool2d { input, .. } => {
                let input = *input;
                let argmax = match &mut self.nodes[id.0].op {
                    Op::MaxPool2d { argmax, .. } => std::mem::take(argmax),
                    _ => unreachable!(),
                };
                self.ensure_grad(input);
                let mut gi = self.nodes[input.0].grad.take().expect("ensured");
                conv::maxpool2d_backward(grad_out.data(), &argmax, gi.data_mut());
                self.nodes[input.0].grad = Some(gi);
                match &mut self.nodes[id.0].op {
                    Op::MaxPool2d { argmax: slot, .. } => *slot = argmax,
                    _ => unreachable!(),
                }
            }
            Op::Upsample2x { input } => {
                let input = *input;
                let dims = self.node(input).value.dims4()?;
                self.ensure_grad(input);
                let mut gi = self.nodes[input.0].grad.take().expect("ensured");
                conv::upsample2x_backward(grad_out.data(), gi.data_mut(), dims);
                self.nodes[input.0].grad = Some(gi);
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let (b_n, c1, h, w) = self.node(a).value.dims4()?;
                let c2 = self.node(b).value.shape()[1];
                let mut ga = Tensor::zeros(self.node(a).value.shape());
                let mut gb = Tensor::zeros(self.node(b).value.shape());
                conv::concat_backward(
                    grad_out.data(),
                    ga.data_mut(),
                    gb.data_mut(),
                    (b_n, c1, c2, h * w),
                );
                if self.node(a).requires_grad {
                    self.add_to_grad(a, ga);
                }
                if self.node(b).requires_grad {
                    self.add_to_grad(b, gb);
                }
            }
            Op::Relu { input } => {
                let input = *input;
                let mut gi = Tensor::zeros(self.node(input).value.shape());
                for ((g, &go), &x) in gi
                    .data_mut()
                    .iter_mut()
                    .zip(grad_out.data())
                    .zip(self.node(input).value.data())
                {
                    if x > E::zero() {
                        *g = go;
                    }
                }
                self.add_to_grad(input, gi);
            }
            Op::Sigmoid { input } => {
                let input = *input;
                let mut gi = Tensor::zeros(self.node(input).value.shape());
                for ((g, &go), &y) in gi
                    .data_mut()
                    .iter_mut()
                    .zip(grad_out.data())
                    .zip(self.nodes[id.0].value.data())
                {
                    *g = go * y * (E::one() - y);
                }
                self.add_to_grad(input, gi);
            }
            Op::BceLoss { pred, target } => {
                let (pred, target) = (*pred, *target);
                let upstream = grad_out.data()[0].as_f64();
                let count = self.node(pred).value.numel() as f64;
                let mut gp = Tensor::zeros(self.node(pred).value.shape());
                for ((g, &a), &y) in gp
                    .data_mut()
                    .iter_mut()
                    .zip(self.node(pred).value.data())
                    .zip(self.node(target).value.data())
                {
                    let a = a.as_f64();
                    // No gradient through the clamp.
                    if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&a) {
                        let y = y.as_f64();
                        *g = E::from_f64(upstream * (a - y) / (a * (1.0 - a)) / count);
                    }
                }
                self.add_to_grad(pred, gp);
            }
            Op::Sum { input } => {
                let input = *input;
                let upstream = grad_out.data()[0];
                let gi = Tensor::filled(self.node(input).value.shape(), upstream);
                self.add_to_grad(input, gi);
            }
        }
        Ok(())
    }

    /// Distance of the recorded pass to the nearest point of
    /// non-differentiability: relu inputs near 0, near-tied pooling windows,
    /// and BCE predictions near the clamp bounds. Finite-difference checks
    /// are only meaningful on instances where this margin comfortably
    /// exceeds the probe step.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::MaxPool2d { input, .. } => {
                    let t = &self.nodes[input.0].value;
                    if let Ok((b_n, c_n, h, w)) = t.dims4() {
                        let data = t.data();
                        for bc in 0..b_n * c_n {
                            let plane = &data[bc * h * w..][..h * w];
                            for oy in 0..h / 2 {
                                for ox in 0..w / 2 {
                                    let base = oy * 2 * w + ox * 2;
                                    let mut vals = [
                                        plane[base].as_f64(),
                                        plane[base + 1].as_f64(),
                                        plane[base + w].as_f64(),
                                        plane[base + w + 1].as_f64(),
                                    ];
                                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                                    // windows pinned at relu's zero plateau tie
                                    // with identical (zero) slopes; no kink there
                                    if vals[0] > 0.0 {
                                        margin = margin.min(vals[0] - vals[1]);
                                    }
                                }
                            }
                        }
                    }
                }
                Op::BceLoss { pred, .. } => {
                    for &v in self.nodes[pred.0].value.data() {
                        let a = v.as_f64();
                        margin = margin
                            .min((a - BCE_CLAMP).abs())
                            .min((1.0 - BCE_CLAMP - a).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Gradients of parameter nodes, keyed by slot.
    pub fn param_grads(&self) -> Vec<(usize, &Tensor<E>)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(slot) => n.grad.as_ref().map(|g| (slot, g)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, random_tensor, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent reference convolution: plain nested loops over every
    /// output element, batch, channel and tap.
    fn conv2d_reference(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        bias: &[f64],
        pad: usize,
    ) -> Tensor<f64> {
        let (b_n, ci_n, h, w) = input.dims4().unwrap();
        let co_n = kernel.shape()[0];
        let k = kernel.shape()[2];
        let mut out = Tensor::zeros(&[b_n, co_n, h, w]);
        for b in 0..b_n {
            for co in 0..co_n {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..ci_n {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let iy = oy as isize + dy as isize - pad as isize;
                                    let ix = ox as isize + dx as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input.data()
                                        [((b * ci_n + ci) * h + iy as usize) * w + ix as usize];
                                    let kv =
                                        kernel.data()[((co * ci_n + ci) * k + dy) * k + dx];
                                    acc += iv * kv;
                                }
                            }
                        }
                        out.data_mut()[((b * co_n + co) * h + oy) * w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::new();
        let x = g.leaf(random_tensor(&mut rng(1), &[1, 1, 4, 4], -1.0, 1.0));
        let k = g.leaf(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_constant_field_interior() {
        let c = 0.7f64;
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 1, 6, 6], c));
        let k = g.leaf(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = g.leaf(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 1).unwrap();
        for oy in 1..5 {
            for ox in 1..5 {
                let v = g.value(y).data()[oy * 6 + ox];
                assert!((v - 9.0 * c).abs() < 1e-12, "interior {oy},{ox}: {v}");
            }
        }
        // border rows lose taps to zero padding
        assert!((g.value(y).data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut r = rng(7);
        let input = random_tensor(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        let kernel = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[3], -0.5, 0.5);
        let expect = conv2d_reference(&input, &kernel, bias.data(), 1);
        let mut g = Graph::new();
        let (x, k, b) = (g.leaf(input), g.leaf(kernel), g.leaf(bias));
        let y = g.conv2d(x, k, b, 1).unwrap();
        for (got, want) in g.value(y).data().iter().zip(expect.data()) {
            let rel = (got - want).abs() / want.abs().max(1e-9);
            assert!(rel < 1e-6, "got {got}, want {want}");
        }
    }

    #[test]
    fn conv2d_channel_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3, 4, 4]));
        let k = g.leaf(Tensor::zeros(&[2, 2, 3, 3]));
        let b = g.leaf(Tensor::zeros(&[2]));
        let err = g.conv2d(x, k, b, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut r = rng(11);
        let inputs = vec![
            random_tensor(&mut r, &[2, 2, 4, 4], -1.0, 1.0),
            random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0),
            random_tensor(&mut r, &[3], -0.5, 0.5),
        ];
        let checks = check_gradients(&inputs, DEFAULT_STEP, |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], 1)?;
            Ok(g.sum(y))
        })
        .unwrap();
        for (i, c) in checks.iter().enumerate() {
            assert!(c.rel_err < 1e-3, "conv input {i}: rel err {}", c.rel_err);
        }
    }

    #[test]
    fn maxpool_single_window() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_constant_input_quarter_size() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[2, 3, 8, 8], 0.25));
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(g.maxpool2d(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn maxpool_ties_take_first_in_row_major_order() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap());
        let y = g.maxpool2d(x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), None, "leaf tracks no gradient");
        let mut g = Graph::new();
        let x = g.var(Tensor::from_vec(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap());
        let y = g.maxpool2d(x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        // Window entries are forced well apart so the FD probe cannot
        // cross an argmax boundary.
        let mut r = rng(13);
        let mut t = random_tensor(&mut r, &[1, 2, 4, 4], 0.0, 0.05);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += ((i * 7919) % 4) as f64 * 0.3;
        }
        let checks = check_gradients(&[t], DEFAULT_STEP, |g, ids| {
            let y = g.maxpool2d(ids[0])?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(checks[0].rel_err < 1e-3, "rel err {}", checks[0].rel_err);
    }

    #[test]
    fn upsample_replicates_into_blocks() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.upsample_nearest2x(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let want = [1.0, 1.0, 2.0, 2.0,
                    1.0, 1.0, 2.0, 2.0,
                    3.0, 3.0, 4.0, 4.0,
                    3.0, 3.0, 4.0, 4.0];
        assert_eq!(g.value(y).data(), &want);
    }

    #[test]
    fn maxpool_inverts_upsample() {
        let mut r = rng(17);
        let t = random_tensor(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
        let mut g = Graph::new();
        let x = g.leaf(t.clone());
        let up = g.upsample_nearest2x(x).unwrap();
        let down = g.maxpool2d(up).unwrap();
        assert_eq!(g.value(down).data(), t.data());
    }

    #[test]
    fn upsample_gradient_matches_finite_differences() {
        let mut r = rng(19);
        let t = random_tensor(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
        let checks = check_gradients(&[t], DEFAULT_STEP, |g, ids| {
            let y = g.upsample_nearest2x(ids[0])?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(checks[0].rel_err < 1e-3);
    }

    #[test]
    fn concat_with_empty_channel_tensor_is_identity() {
        let mut r = rng(23);
        let t = random_tensor(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
        let mut g = Graph::new();
        let a = g.leaf(t.clone());
        let b = g.leaf(Tensor::zeros(&[2, 0, 4, 4]));
        let y = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 4, 4]);
        assert_eq!(g.value(y).data(), t.data());
    }

    #[test]
    fn concat_places_channels_in_order() {
        let mut r = rng(29);
        let ta = random_tensor(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
        let tb = random_tensor(&mut r, &[1, 3, 3, 3], -1.0, 1.0);
        let mut g = Graph::new();
        let a = g.leaf(ta.clone());
        let b = g.leaf(tb.clone());
        let y = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(y).data()[..9], ta.data()[..9]);
        assert_eq!(g.value(y).data()[2 * 9..3 * 9], tb.data()[..9]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.leaf(Tensor::zeros(&[1, 2, 4, 6]));
        assert!(matches!(g.concat_channels(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut r = rng(31);
        let inputs = vec![
            random_tensor(&mut r, &[2, 2, 3, 3], -1.0, 1.0),
            random_tensor(&mut r, &[2, 1, 3, 3], -1.0, 1.0),
        ];
        let checks = check_gradients(&inputs, DEFAULT_STEP, |g, ids| {
            let y = g.concat_channels(ids[0], ids[1])?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(checks[0].rel_err < 1e-3);
        assert!(checks[1].rel_err < 1e-3);
    }

    #[test]
    fn activation_point_values() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::from_vec(&[3], vec![0.0, -3.0, 3.0]).unwrap());
        let s = g.sigmoid(x);
        assert!((g.value(s).data()[0] - 0.5).abs() < 1e-15);
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
        // sigmoid'(0) = 0.25
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        g.backward(s).unwrap();
        assert!((g.grad(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut r = rng(37);
        for rep in 0..3 {
            // keep relu inputs away from the kink at 0
            let mut t = random_tensor(&mut r, &[2, 2, 4, 4], 0.05, 1.0);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                if (i + rep) % 2 == 0 {
                    *v = -*v;
                }
            }
            let checks = check_gradients(&[t.clone()], DEFAULT_STEP, |g, ids| {
                let y = g.relu(ids[0]);
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(checks[0].rel_err < 1e-3, "relu rep {rep}");
            let checks = check_gradients(&[t], DEFAULT_STEP, |g, ids| {
                let y = g.sigmoid(ids[0]);
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(checks[0].rel_err < 1e-3, "sigmoid rep {rep}");
        }
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::filled(&[2, 1, 2, 2], 1.0f64));
        let t = g.leaf(Tensor::filled(&[2, 1, 2, 2], 1.0f64));
        let loss = g.bce_loss(p, t).unwrap();
        let v = g.value(loss).scalar_value().unwrap();
        assert!(v >= 0.0 && v < 1e-6, "loss {v}");
    }

    #[test]
    fn bce_uniform_half_is_ln_two() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::filled(&[1, 1, 4, 4], 0.5f64));
        let t = g.leaf(Tensor::filled(&[1, 1, 4, 4], 1.0f64));
        let loss = g.bce_loss(p, t).unwrap();
        let v = g.value(loss).scalar_value().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "loss {v}");
    }

    #[test]
    fn bce_matches_direct_formula_on_random_batch() {
        let mut r = rng(41);
        let pred = random_tensor(&mut r, &[2, 1, 3, 3], 0.02, 0.98);
        let target = random_tensor(&mut r, &[2, 1, 3, 3], 0.0, 1.0);
        // direct summation of the definition
        let mut acc = 0.0;
        for (&a, &y) in pred.data().iter().zip(target.data()) {
            acc += y * a.ln() + (1.0 - y) * (1.0 - a).ln();
        }
        let expect = -acc / pred.numel() as f64;
        let mut g = Graph::new();
        let p = g.leaf(pred);
        let t = g.leaf(target);
        let loss = g.bce_loss(p, t).unwrap();
        let got = g.value(loss).scalar_value().unwrap();
        assert!((got - expect).abs() / expect.abs() < 1e-10);
    }

    #[test]
    fn bce_rejects_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        let t = g.leaf(Tensor::zeros(&[1, 1, 2, 4]));
        assert!(matches!(g.bce_loss(p, t), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut g = Graph::new();
        let x = g.var(Tensor::<f64>::filled(&[2, 3], 0.4));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_requires_recorded_scalar() {
        let mut g = Graph::<f64>::new();
        assert!(matches!(g.backward(NodeId(0)), Err(Error::State(_))));
        let x = g.var(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn full_chain_gradient_matches_finite_differences() {
        let mut r = rng(43);
        let inputs = vec![
            random_tensor(&mut r, &[1, 1, 4, 4], -1.0, 1.0),
            random_tensor(&mut r, &[2, 1, 3, 3], -0.8, 0.8),
            random_tensor(&mut r, &[2], -0.2, 0.2),
        ];
        let target = random_tensor(&mut r, &[1, 2, 4, 4], 0.0, 1.0);
        let checks = check_gradients(&inputs, DEFAULT_STEP, |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], 1)?;
            let s = g.sigmoid(y);
            let t = g.leaf(target.clone());
            g.bce_loss(s, t)
        })
        .unwrap();
        for (i, c) in checks.iter().enumerate() {
            assert!(c.rel_err < 1e-3, "chain input {i}: rel err {}", c.rel_err);
        }
    }

    #[test]
    fn repeated_backward_is_bitwise_deterministic() {
        let mut r = rng(47);
        let x0 = random_tensor(&mut r, &[1, 2, 4, 4], -1.0, 1.0);
        let k0 = random_tensor(&mut r, &[2, 2, 3, 3], -1.0, 1.0);
        let b0 = random_tensor(&mut r, &[2], -0.1, 0.1);
        let run = || {
            let mut g = Graph::new();
            let x = g.var(x0.clone());
            let k = g.var(k0.clone());
            let b = g.var(b0.clone());
            let y = g.conv2d(x, k, b, 1).unwrap();
            let s = g.sigmoid(y);
            let l = g.sum(s);
            g.backward(l).unwrap();
            (
                g.grad(x).unwrap().clone(),
                g.grad(k).unwrap().clone(),
                g.grad(b).unwrap().clone(),
            )
        };
        let (a1, a2, a3) = run();
        let (b1, b2, b3) = run();
        assert_eq!(a1.data(), b1.data());
        assert_eq!(a2.data(), b2.data());
        assert_eq!(a3.data(), b3.data());
    }
}
