use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Convolution implementation used by [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    /// im2col + matrix multiply.
    #[default]
    Im2col,
    /// Direct nested loops with 64-bit accumulation.
    Direct,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// Output of an op evaluated without recording (no saved state).
    Detached(&'static str),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    },
    MaxPool {
        input: NodeId,
        geom: PoolGeometry,
        argmax: Vec<u32>,
    },
    Resize {
        input: NodeId,
        planes: usize,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    Concat {
        inputs: Vec<NodeId>,
        channels: Vec<usize>,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Sse {
        pred: NodeId,
        target: Vec<f32>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detached(name) => name,
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Resize { .. } => "bilinear_resize",
            Op::Concat { .. } => "concat_channels",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Sse { .. } => "sse_loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Full-precision value of scalar reductions.
    scalar: Option<f64>,
}

/// Summary of one reverse pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackwardReport {
    /// Number of recorded (non-leaf) ops whose backward rule ran.
    pub visited_ops: usize,
}

/// Append-only op tape. Nodes are stored in creation order, which is a
/// topological order, so the reverse pass is a single backwards sweep.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    recording: bool,
    conv_algo: ConvAlgo,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records saved activations for backward.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
            conv_algo: ConvAlgo::Im2col,
        }
    }

    /// A forward-only graph; calling [`Graph::backward`] through its ops fails.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.conv_algo = algo;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded non-leaf ops.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let op = if self.recording || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Detached(op.name())
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            scalar: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown node {}", id.0)))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: &Tensor) -> Result<NodeId> {
        let mut v = value.clone();
        v.grad = None;
        self.push(v, Op::Leaf, true)
    }

    /// Leaf input whose gradient should be computed.
    pub fn input_with_grad(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Full-precision value of a scalar node (falls back to the stored f32).
    pub fn scalar(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.0];
        n.scalar.unwrap_or_else(|| n.value.data()[0] as f64)
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Copies gradients of `ids` into the `grad` slots of `params` (zeros if unreached).
    pub fn export_grads(&self, ids: &[NodeId], params: &mut [Tensor]) -> Result<()> {
        if ids.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter nodes for {} tensors",
                ids.len(),
                params.len()
            )));
        }
        for (id, p) in ids.iter().zip(params.iter_mut()) {
            let g = self
                .grad(*id)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()]);
            p.set_grad(Some(g))?;
        }
        Ok(())
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let (x, w, b) = (self.node(input)?, self.node(weight)?, self.node(bias)?);
        let geom = ConvGeometry::new(x.value.shape(), w.value.shape(), stride, pad)?;
        if b.value.numel() != geom.out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: w.value.shape().to_vec(),
                rhs: b.value.shape().to_vec(),
            });
        }
        let out = match self.conv_algo {
            ConvAlgo::Im2col => kernels::conv2d_im2col(&geom, x.value.data(), w.value.data(), b.value.data())?,
            ConvAlgo::Direct => kernels::conv2d_direct(&geom, x.value.data(), w.value.data(), b.value.data())?,
        };
        let rg = x.requires_grad || w.requires_grad || b.requires_grad;
        let value = Tensor::new(geom.output_shape().to_vec(), out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    pub fn max_pool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let x = self.node(input)?;
        let shape = x.value.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "max_pool2d (expects N,C,H,W)",
                lhs: shape,
                rhs: vec![4],
            });
        }
        let geom = PoolGeometry::new(shape[0] * shape[1], shape[2], shape[3], window, stride)?;
        let (out, argmax) = kernels::max_pool2d_forward(&geom, x.value.data());
        let rg = x.requires_grad;
        let value = Tensor::new(vec![shape[0], shape[1], geom.out_h, geom.out_w], out)?;
        self.push(value, Op::MaxPool { input, geom, argmax }, rg)
    }

    /// Corner-aligned bilinear resize of the two trailing axes.
    pub fn bilinear_resize(&mut self, input: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument("bilinear_resize target must be >= 1x1".into()));
        }
        let x = self.node(input)?;
        let shape = x.value.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "bilinear_resize (expects >= 2 axes)",
                lhs: shape,
                rhs: vec![out_h, out_w],
            });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = x.value.numel() / (h * w).max(1);
        let out = kernels::bilinear_forward(planes, h, w, out_h, out_w, x.value.data());
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = out_h;
        out_shape[r - 1] = out_w;
        let rg = x.requires_grad;
        let value = Tensor::new(out_shape, out)?;
        self.push(
            value,
            Op::Resize {
                input,
                planes,
                in_hw: (h, w),
                out_hw: (out_h, out_w),
            },
            rg,
        )
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_channels needs at least one input".into()))?;
        let base = self.node(*first)?.value.shape().to_vec();
        if base.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "concat_channels (expects N,C,H,W)",
                lhs: base,
                rhs: vec![4],
            });
        }
        let mut channels = Vec::with_capacity(inputs.len());
        let mut rg = false;
        for id in inputs {
            let s = self.node(*id)?.value.shape();
            if s.len() != 4 || s[0] != base[0] || s[2] != base[2] || s[3] != base[3] {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            channels.push(s[1]);
            rg |= self.node(*id)?.requires_grad;
        }
        let (n, plane) = (base[0], base[2] * base[3]);
        let total: usize = channels.iter().sum();
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (id, &c) in inputs.iter().zip(&channels) {
                let d = self.nodes[id.0].value.data();
                out.extend_from_slice(&d[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, base[2], base[3]], out)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                channels,
            },
            rg,
        )
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.node(input)?;
        let data = x.value.data().iter().map(|&v| v.max(0.0)).collect();
        let rg = x.requires_grad;
        let value = Tensor::new(x.value.shape().to_vec(), data)?;
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.node(input)?;
        let data = x.value.data().iter().map(|&v| sigmoid(v)).collect();
        let rg = x.requires_grad;
        let value = Tensor::new(x.value.shape().to_vec(), data)?;
        self.push(value, Op::Sigmoid { input }, rg)
    }

    /// `sum((pred - target)^2)` accumulated in 64-bit.
    pub fn sse_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.node(pred)?;
        if p.value.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "sse_loss",
                lhs: p.value.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let loss: f64 = p
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        let rg = p.requires_grad;
        let value = Tensor::new(vec![1], vec![loss as f32])?;
        let id = self.push(
            value,
            Op::Sse {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "sse_loss" });
        }
        self.nodes[id.0].scalar = Some(loss);
        Ok(id)
    }

    /// Reverse pass from a scalar node. Gradients of reachable leaves are
    /// retained until the next call.
    pub fn backward(&mut self, root: NodeId) -> Result<BackwardReport> {
        let root_node = self.node(root)?;
        if root_node.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        let mut visited = 0;
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::Detached(name) => return Err(Error::MissingSaved { op: name }),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let x = &self.nodes[input.0];
                    let w = &self.nodes[weight.0];
                    let g = kernels::conv2d_backward(geom, x.value.data(), w.value.data(), &upstream, x.requires_grad)?;
                    if let Some(gi) = g.input {
                        accumulate(&mut grads[input.0], gi);
                    }
                    if w.requires_grad {
                        accumulate(&mut grads[weight.0], g.weight);
                    }
                    if self.nodes[bias.0].requires_grad {
                        accumulate(&mut grads[bias.0], g.bias);
                    }
                }
                Op::MaxPool { input, geom, argmax } => {
                    let gi = kernels::max_pool2d_backward(geom, argmax, &upstream);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Resize {
                    input,
                    planes,
                    in_hw,
                    out_hw,
                } => {
                    let gi = kernels::bilinear_backward(*planes, in_hw.0, in_hw.1, out_hw.0, out_hw.1, &upstream);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Concat { inputs, channels } => {
                    let shape = node.value.shape();
                    let (n, plane, total) = (shape[0], shape[2] * shape[3], shape[1]);
                    let mut offset = 0;
                    for (id, &c) in inputs.iter().zip(channels) {
                        if self.nodes[id.0].requires_grad {
                            let mut part = Vec::with_capacity(n * c * plane);
                            for b in 0..n {
                                let start = (b * total + offset) * plane;
                                part.extend_from_slice(&upstream[start..start + c * plane]);
                            }
                            accumulate(&mut grads[id.0], part);
                        }
                        offset += c;
                    }
                }
                Op::Relu { input } => {
                    let gi = upstream
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Sigmoid { input } => {
                    let gi = upstream
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Sse { pred, target } => {
                    let up = upstream[0] as f64;
                    let gi = self.nodes[pred.0]
                        .value
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&p, &t)| (2.0 * up * (p as f64 - t as f64)) as f32)
                        .collect();
                    accumulate(&mut grads[pred.0], gi);
                }
            }
            visited += 1;
        }
        self.grads = grads;
        Ok(BackwardReport { visited_ops: visited })
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let w = g.param(&Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let b = g.param(&Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d(x, w, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let w = g.param(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        let b = g.param(&Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d(x, w, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        let w = g.param(&Tensor::zeros(&[1, 3, 3, 3])).unwrap();
        let b = g.param(&Tensor::zeros(&[1])).unwrap();
        let msg = g.conv2d(x, w, b, (1, 1), (0, 0)).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn zero_upstream_gives_zero_conv_grads() {
        let mut g = Graph::new();
        let x = g
            .input_with_grad(t(&[1, 1, 3, 3], &[1.0, -2.0, 3.0, 0.5, 0.1, 2.0, -1.0, 4.0, 0.0]))
            .unwrap();
        let w = g.param(&t(&[1, 1, 2, 2], &[0.3, -0.2, 0.7, 1.1])).unwrap();
        let b = g.param(&t(&[1], &[0.2])).unwrap();
        let y = g.conv2d(x, w, b, (1, 1), (0, 0)).unwrap();
        let target = g.value(y).clone();
        let loss = g.sse_loss(y, &target).unwrap();
        g.backward(loss).unwrap();
        for id in [x, w, b] {
            assert!(g.grad(id).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bias_grad_counts_output_cells() {
        // loss = sum(y) realized as sse against (y - 0.5): d/dy = 2 * 0.5 = 1
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 1, 5, 5], 0.3)).unwrap();
        let w = g.param(&Tensor::full(&[3, 1, 3, 3], 0.1)).unwrap();
        let b = g.param(&Tensor::zeros(&[3])).unwrap();
        let y = g.conv2d(x, w, b, (2, 2), (1, 1)).unwrap();
        let mut target = g.value(y).clone();
        target.data_mut().iter_mut().for_each(|v| *v -= 0.5);
        let loss = g.sse_loss(y, &target).unwrap();
        g.backward(loss).unwrap();
        // N * H' * W' = 2 * 3 * 3
        assert_eq!(g.grad(b).unwrap(), &[18.0, 18.0, 18.0]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn max_pool_tie_routes_to_first_cell() {
        let mut g = Graph::new();
        let x = g.input_with_grad(Tensor::full(&[1, 1, 4, 4], 2.0)).unwrap();
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
        let target = Tensor::full(&[1, 1, 2, 2], 1.5);
        let loss = g.sse_loss(y, &target).unwrap();
        g.backward(loss).unwrap();
        let gx = g.grad(x).unwrap();
        let hits: Vec<usize> = (0..16).filter(|&i| gx[i] != 0.0).collect();
        assert_eq!(hits, vec![0, 2, 8, 10]);
    }

    #[test]
    fn resize_preserves_corners_and_blends_center() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 2, 2], &[0.0, 2.0, 4.0, 6.0])).unwrap();
        let y = g.bilinear_resize(x, 3, 3).unwrap();
        let v = g.value(y).data();
        assert_eq!((v[0], v[2], v[6], v[8]), (0.0, 2.0, 4.0, 6.0));
        assert_eq!(v[4], 3.0);
        let same = g.bilinear_resize(x, 2, 2).unwrap();
        assert_eq!(g.value(same).data(), &[0.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn concat_orders_channels_and_splits_grads() {
        let mut g = Graph::new();
        let a = g.input_with_grad(t(&[1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        let b = g.input_with_grad(t(&[1, 1, 1, 2], &[3.0, 4.0])).unwrap();
        let single = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(single), g.value(a));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 2, 1, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        let loss = g.sse_loss(c, &Tensor::zeros(&[1, 2, 1, 2])).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[2.0, 4.0]);
        assert_eq!(g.grad(b).unwrap(), &[6.0, 8.0]);
    }

    #[test]
    fn concat_rejects_extent_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        let b = g.input(Tensor::zeros(&[1, 1, 2, 3])).unwrap();
        assert!(matches!(g.concat_channels(&[a, b]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sse_values() {
        let mut g = Graph::new();
        let p = g.input(Tensor::full(&[24, 80], 0.1)).unwrap();
        let same = g.sse_loss(p, &Tensor::full(&[24, 80], 0.1)).unwrap();
        assert_eq!(g.scalar(same), 0.0);
        let l = g.sse_loss(p, &Tensor::zeros(&[24, 80])).unwrap();
        assert!((g.scalar(l) - 19.2).abs() < 1e-5, "{}", g.scalar(l));
        assert!(g.sse_loss(p, &Tensor::zeros(&[24, 81])).is_err());
    }

    #[test]
    fn backward_visits_each_op_once() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 4, 4], 0.5)).unwrap();
        let w = g.param(&Tensor::full(&[2, 1, 3, 3], 0.2)).unwrap();
        let b = g.param(&Tensor::zeros(&[2])).unwrap();
        let c = g.conv2d(x, w, b, (1, 1), (1, 1)).unwrap();
        let r = g.relu(c).unwrap();
        let p = g.max_pool2d(r, 2, 2).unwrap();
        let u = g.bilinear_resize(p, 4, 4).unwrap();
        let k = g.concat_channels(&[u, r]).unwrap();
        let s = g.sigmoid(k).unwrap();
        let loss = g.sse_loss(s, &Tensor::zeros(&[1, 4, 4, 4])).unwrap();
        let report = g.backward(loss).unwrap();
        assert_eq!(report.visited_ops, g.op_count());
    }

    #[test]
    fn inference_graph_has_no_saved_state() {
        let mut g = Graph::inference();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let w = g.param(&Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let b = g.param(&Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d(x, w, b, (1, 1), (0, 0)).unwrap();
        let loss = g.sse_loss(y, &Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::MissingSaved { .. })));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        assert!(matches!(
            g.input(Tensor::full(&[2], f32::NAN)),
            Err(Error::NonFinite { .. })
        ));
        let x = g.input(Tensor::full(&[1, 1, 1, 1], 3.0e38)).unwrap();
        let w = g.param(&Tensor::full(&[1, 1, 1, 1], 10.0)).unwrap();
        let b = g.param(&Tensor::zeros(&[1])).unwrap();
        assert!(matches!(
            g.conv2d(x, w, b, (1, 1), (0, 0)),
            Err(Error::NonFinite { op: "conv2d" })
        ));
    }
}
