use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    AdaptiveAvgPool(NodeId),
    Upsample(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// C×H×W map times a C×1×1 gate.
    MulGate { map: NodeId, gate: NodeId },
    /// Per-channel `scale · x + shift`.
    Affine { input: NodeId, scale: NodeId, shift: NodeId },
    Scale(NodeId, f64),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Narrow { input: NodeId, axis: usize, start: usize },
    Sum(NodeId),
    CrossEntropy { logits: NodeId, target: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    BceWithLogits { logits: NodeId, target: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Single-owner record of executed operations. Values are computed
/// eagerly; [`Tape::backward`] replays the record in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = self.push(value, Op::Leaf, requires_grad);
        if requires_grad {
            let shape = self.nodes[id.0].value.shape().to_vec();
            self.nodes[id.0].grad = Some(Tensor::zeros(&shape));
        }
        id
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient of a leaf that requires it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Zeroes leaf gradients and re-arms [`Tape::backward`].
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
        self.backward_done = false;
    }

    fn chw(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        self.value(id)
            .chw()
            .map_err(|_| Error::invalid(format!("{what} expects C×H×W, got {:?}", self.shape(id))))
    }

    /// 2-D cross-correlation of a C_in×H×W input with a square
    /// C_out×C_in×k×k kernel. Output extents follow the usual floor rule
    /// `(H + 2·pad − k) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (c_in, h, w) = self.chw(input, "conv2d")?;
        let (c_out, wc, k) = match self.shape(weight) {
            &[o, c, k1, k2] if k1 == k2 => (o, c, k1),
            s => return Err(Error::invalid(format!("conv2d weight must be O×C×k×k, got {s:?}"))),
        };
        if wc != c_in {
            return Err(Error::invalid(format!("conv2d weight expects {wc} input channels, input has {c_in}")));
        }
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv2d kernel size must be odd, got {k}")));
        }
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::invalid(format!("conv2d kernel {k} does not fit {h}x{w} with pad {pad}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::invalid(format!("conv2d bias must have shape [{c_out}]")));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        };
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        let value = Tensor::from_vec(vec![c_out, geom.oh, geom.ow], out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom, cols }, rg))
    }

    pub fn adaptive_avg_pool(&mut self, input: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let (c, h, w) = self.chw(input, "adaptive_avg_pool")?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::invalid(format!("pool grid {out_h}x{out_w} does not fit {h}x{w}")));
        }
        let out = kernels::adaptive_avg_pool(self.value(input).data(), c, h, w, out_h, out_w);
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::from_vec(vec![c, out_h, out_w], out)?, Op::AdaptiveAvgPool(input), rg))
    }

    /// Bilinear resize with half-pixel centres (align-corners false).
    pub fn upsample_bilinear(&mut self, input: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let (c, h, w) = self.chw(input, "upsample_bilinear")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("upsample target must be non-empty"));
        }
        if (out_h, out_w) == (h, w) {
            return Ok(input);
        }
        let out = kernels::upsample_bilinear(self.value(input).data(), c, h, w, out_h, out_w);
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::from_vec(vec![c, out_h, out_w], out)?, Op::Upsample(input), rg))
    }

    fn map_unary(&mut self, input: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(input);
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.needs(&[input]);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        self.map_unary(input, sigmoid, Op::Sigmoid(input))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.map_unary(input, |x| x.max(0.0), Op::Relu(input))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        self.map_unary(input, |x| x * factor, Op::Scale(input, factor))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Broadcast multiply of a C×H×W map by a C×1×1 channel gate.
    pub fn mul_gate(&mut self, map: NodeId, gate: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(map, "mul_gate")?;
        if self.shape(gate) != [c, 1, 1] {
            return Err(Error::invalid(format!(
                "gate must be {c}×1×1 for a {c}×{h}×{w} map, got {:?}",
                self.shape(gate)
            )));
        }
        let g = self.value(gate).data();
        let plane = h * w;
        let data = self
            .value(map)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * g[i / plane])
            .collect();
        let value = Tensor::from_vec(vec![c, h, w], data)?;
        let rg = self.needs(&[map, gate]);
        Ok(self.push(value, Op::MulGate { map, gate }, rg))
    }

    /// Per-channel `scale[c] · x + shift[c]`, the batch-free stand-in for a
    /// normalization layer.
    pub fn affine(&mut self, input: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(input, "affine")?;
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::invalid(format!("affine parameters must have shape [{c}]")));
        }
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        let plane = h * w;
        let data = self
            .value(input)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| s[i / plane] * x + b[i / plane])
            .collect();
        let value = Tensor::from_vec(vec![c, h, w], data)?;
        let rg = self.needs(&[input, scale, shift]);
        Ok(self.push(value, Op::Affine { input, scale, shift }, rg))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != base[d]) {
                return Err(Error::invalid(format!("concat: shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let len = self.shape(id)[axis] * inner;
                data.extend_from_slice(&self.value(id).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.needs(inputs);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(format!("narrow {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::from_vec(out_shape, data)?, Op::Narrow { input, axis, start }, rg))
    }

    /// Splits along `axis` into pieces of the given sizes.
    pub fn split(&mut self, input: NodeId, axis: usize, sizes: &[usize]) -> Result<Vec<NodeId>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(input, axis, start, len)?);
            start += len;
        }
        if self.shape(input).get(axis) != Some(&start) {
            return Err(Error::invalid("split sizes do not cover the axis"));
        }
        Ok(out)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// Mean softmax cross-entropy over pixels of K×H×W logits. Pixels whose
    /// target equals `ignore` are skipped; if all are, the loss is 0.
    pub fn cross_entropy(&mut self, logits: NodeId, target: &[usize], ignore: Option<usize>) -> Result<NodeId> {
        let (k, h, w) = self.chw(logits, "cross_entropy")?;
        let plane = h * w;
        if target.len() != plane {
            return Err(Error::invalid(format!("target has {} pixels, logits {plane}", target.len())));
        }
        let mut tgt = Vec::with_capacity(plane);
        for &t in target {
            if Some(t) == ignore {
                tgt.push(None);
            } else if t < k {
                tgt.push(Some(t));
            } else {
                return Err(Error::invalid(format!("target class {t} outside 0..{k}")));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; k * plane];
        let mut loss = 0.0;
        let mut count = 0;
        for (i, t) in tgt.iter().enumerate() {
            let Some(t) = *t else { continue };
            let m = (0..k).map(|c| x[c * plane + i]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|c| (x[c * plane + i] - m).exp()).sum();
            for c in 0..k {
                probs[c * plane + i] = (x[c * plane + i] - m).exp() / z;
            }
            loss += m + z.ln() - x[t * plane + i];
            count += 1;
        }
        let value = if count > 0 { loss / count as f64 } else { 0.0 };
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                target: tgt,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        if self.shape(logits) != target.shape() {
            return Err(Error::invalid(format!(
                "bce: logits {:?} vs target {:?}",
                self.shape(logits),
                target.shape()
            )));
        }
        if target.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("bce targets must lie in [0, 1]"));
        }
        let x = self.value(logits).data();
        let n = x.len() as f64;
        let loss: f64 = x
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::BceWithLogits {
                logits,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a one-element `loss`, accumulating into the
    /// gradients of every leaf that requires one. A second call needs
    /// [`Tape::reset_grads`] first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        if self.backward_done {
            return Err(Error::invalid("backward already ran on this tape; call reset_grads first"));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if let Some(acc) = self.nodes[i].grad.as_mut() {
                    add_into(acc.data_mut(), &g);
                }
                continue;
            }
            let nodes = &self.nodes;
            let node = &nodes[i];
            let mut send = |id: NodeId, f: &dyn Fn(&mut [f64])| {
                if !nodes[id.0].requires_grad {
                    return;
                }
                let slot = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.numel()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => unreachable!("leaves handled above"),
                Op::Conv2d { input, weight, bias, geom, cols } => {
                    let p = geom.pixels();
                    if let Some(b) = bias {
                        send(*b, &|d| {
                            for (o, row) in g.chunks_exact(p).enumerate() {
                                d[o] += row.iter().sum::<f64>();
                            }
                        });
                    }
                    let x = nodes[input.0].value.data();
                    let cols_ref: &[f64] = if geom.is_pointwise() { x } else { cols };
                    send(*weight, &|d| {
                        kernels::gemm(geom.c_out, p, geom.patch(), &g, false, cols_ref, true, 1.0, d);
                    });
                    let wv = nodes[weight.0].value.data();
                    send(*input, &|d| {
                        if geom.is_pointwise() {
                            kernels::gemm(geom.patch(), geom.c_out, p, wv, true, &g, false, 1.0, d);
                        } else {
                            let mut dcols = vec![0.0; geom.patch() * p];
                            kernels::gemm(geom.patch(), geom.c_out, p, wv, true, &g, false, 0.0, &mut dcols);
                            kernels::col2im_add(geom, &dcols, d);
                        }
                    });
                }
                Op::AdaptiveAvgPool(input) => {
                    let (c, h, w) = nodes[input.0].value.chw()?;
                    let (_, oh, ow) = node.value.chw()?;
                    send(*input, &|d| kernels::adaptive_avg_pool_backward(&g, c, h, w, oh, ow, d));
                }
                Op::Upsample(input) => {
                    let (c, h, w) = nodes[input.0].value.chw()?;
                    let (_, oh, ow) = node.value.chw()?;
                    send(*input, &|d| kernels::upsample_bilinear_backward(&g, c, h, w, oh, ow, d));
                }
                Op::Sigmoid(input) => {
                    let y = node.value.data();
                    send(*input, &|d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * y[j] * (1.0 - y[j]);
                        }
                    });
                }
                Op::Relu(input) => {
                    let x = nodes[input.0].value.data();
                    send(*input, &|d| {
                        for j in 0..d.len() {
                            if x[j] > 0.0 {
                                d[j] += g[j];
                            }
                        }
                    });
                }
                Op::Scale(input, f) => {
                    send(*input, &|d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += g * f));
                }
                Op::Add(a, b) => {
                    send(*a, &|d| add_into(d, &g));
                    send(*b, &|d| add_into(d, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    send(*a, &|d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * bv[j];
                        }
                    });
                    send(*b, &|d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * av[j];
                        }
                    });
                }
                Op::MulGate { map, gate } => {
                    let (_, h, w) = nodes[map.0].value.chw()?;
                    let plane = h * w;
                    let (mv, gv) = (nodes[map.0].value.data(), nodes[gate.0].value.data());
                    send(*map, &|d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * gv[j / plane];
                        }
                    });
                    send(*gate, &|d| {
                        for (c, dc) in d.iter_mut().enumerate() {
                            let r = c * plane..(c + 1) * plane;
                            *dc += g[r.clone()].iter().zip(&mv[r]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                }
                Op::Affine { input, scale, shift } => {
                    let (_, h, w) = nodes[input.0].value.chw()?;
                    let plane = h * w;
                    let (xv, sv) = (nodes[input.0].value.data(), nodes[scale.0].value.data());
                    send(*input, &|d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * sv[j / plane];
                        }
                    });
                    send(*scale, &|d| {
                        for (c, dc) in d.iter_mut().enumerate() {
                            let r = c * plane..(c + 1) * plane;
                            *dc += g[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                    send(*shift, &|d| {
                        for (c, dc) in d.iter_mut().enumerate() {
                            *dc += g[c * plane..(c + 1) * plane].iter().sum::<f64>();
                        }
                    });
                }
                Op::Concat { inputs, axis } => {
                    let (outer, inner) = outer_inner(node.value.shape(), *axis);
                    let total = node.value.shape()[*axis] * inner;
                    let mut offset = 0;
                    for id in inputs {
                        let len = nodes[id.0].value.shape()[*axis] * inner;
                        send(*id, &|d| {
                            for o in 0..outer {
                                add_into(&mut d[o * len..(o + 1) * len], &g[o * total + offset..o * total + offset + len]);
                            }
                        });
                        offset += len;
                    }
                }
                Op::Narrow { input, axis, start } => {
                    let in_shape = nodes[input.0].value.shape();
                    let (outer, inner) = outer_inner(in_shape, *axis);
                    let len = node.value.shape()[*axis] * inner;
                    let full = in_shape[*axis] * inner;
                    send(*input, &|d| {
                        for o in 0..outer {
                            let base = o * full + start * inner;
                            add_into(&mut d[base..base + len], &g[o * len..(o + 1) * len]);
                        }
                    });
                }
                Op::Sum(input) => {
                    send(*input, &|d| d.iter_mut().for_each(|v| *v += g[0]));
                }
                Op::CrossEntropy { logits, target, probs, count } => {
                    if *count > 0 {
                        let plane = target.len();
                        let scale = g[0] / *count as f64;
                        send(*logits, &|d| {
                            for (i, t) in target.iter().enumerate() {
                                let Some(t) = *t else { continue };
                                for c in 0..d.len() / plane {
                                    let onehot = if c == t { 1.0 } else { 0.0 };
                                    d[c * plane + i] += scale * (probs[c * plane + i] - onehot);
                                }
                            }
                        });
                    }
                }
                Op::BceWithLogits { logits, target } => {
                    let x = nodes[logits.0].value.data();
                    let scale = g[0] / x.len() as f64;
                    send(*logits, &|d| {
                        for j in 0..d.len() {
                            d[j] += scale * (sigmoid(x[j]) - target[j]);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
