//! Reverse-mode tape. Every operation appends a node whose inputs are strictly
//! earlier nodes, so node index order is a topological order and backward is
//! a single reverse sweep.

use crate::kernels::{self, ConvGeometry};
use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Sum {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Nodes visited by one backward sweep, in visiting order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackwardReport {
    pub visited: Vec<Var>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a leaf. Gradients are tracked when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        let value = if tensor.grad().is_some() { tensor.detached() } else { tensor };
        self.push(value, needs_grad, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let value = tensor.detached();
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward sweep with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, needs_grad, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,kh,kw]` (odd kernels).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [batch, cin, h, w] = self.value(input).dims4(OP)?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4(OP)?;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                expected: vec![cout, cin, kh, kw],
                got: self.value(weight).shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid { op: OP, reason: "stride must be positive".into() });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::Invalid { op: OP, reason: format!("kernel {kh}x{kw} must have odd extents") });
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    expected: vec![cout],
                    got: self.value(b).shape().to_vec(),
                });
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::Invalid {
                op: OP,
                reason: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"),
            });
        }
        let geometry = ConvGeometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            batch,
            &geometry,
            self.value(weight).data(),
            cout,
            bias.map(|b| self.value(b).data()),
        );
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::from_parts(vec![batch, cout, geometry.ho, geometry.wo], out);
        Ok(self.push(value, needs, Op::Conv2d { input, weight, bias, geometry }))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let [b, c, h, w] = self.value(input).dims4(OP)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid { op: OP, reason: format!("spatial size {h}x{w} must be even") });
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), b * c, h, w);
        let value = Tensor::from_parts(vec![b, c, h / 2, w / 2], out);
        let needs = self.needs(input);
        Ok(self.push(value, needs, Op::MaxPool2 { input, argmax }))
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("upsample_nearest2")?;
        let out = kernels::upsample2_forward(self.value(input).data(), b * c, h, w);
        let value = Tensor::from_parts(vec![b, c, 2 * h, 2 * w], out);
        let needs = self.needs(input);
        Ok(self.push(value, needs, Op::Upsample2 { input }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let out = src.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), out);
        let needs = self.needs(input);
        self.push(value, needs, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: ta.shape().to_vec(),
                got: tb.shape().to_vec(),
            });
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add { a, b }))
    }

    /// Mean over all elements of the squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                expected: tp.shape().to_vec(),
                got: tt.shape().to_vec(),
            });
        }
        if tp.numel() == 0 {
            return Err(TensorError::Invalid { op: "mse_loss", reason: "empty tensors".into() });
        }
        let sum: f64 = tp.data().iter().zip(tt.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let value = Tensor::scalar(sum / tp.numel() as f64);
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(value, needs, Op::Mse { pred, target }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).data().iter().sum());
        let needs = self.needs(input);
        self.push(value, needs, Op::Sum { input })
    }

    /// Per-channel normalization with statistics of the current batch,
    /// followed by a per-channel affine map.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "batch_norm";
        let [b, c, h, w] = self.value(input).dims4(OP)?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    expected: vec![c],
                    got: self.value(p).shape().to_vec(),
                });
            }
        }
        let plane = h * w;
        let count = (b * plane) as f64;
        let x = self.value(input).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let idx = |n: usize, i: usize| (n * c + ch) * plane + i;
            let mut mean = 0.0;
            for n in 0..b {
                for i in 0..plane {
                    mean += x[idx(n, i)];
                }
            }
            mean /= count;
            let mut var = 0.0;
            for n in 0..b {
                for i in 0..plane {
                    let d = x[idx(n, i)] - mean;
                    var += d * d;
                }
            }
            var /= count;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ch] = is;
            for n in 0..b {
                for i in 0..plane {
                    let k = idx(n, i);
                    normalized[k] = (x[k] - mean) * is;
                    out[k] = g[ch] * normalized[k] + bt[ch];
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, h, w], out);
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, needs, Op::BatchNorm { input, gamma, beta, normalized, inv_std }))
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            None => node.grad = Some(delta),
        }
    }

    /// Backpropagates from a scalar `loss`. Gradients of earlier sweeps are
    /// discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut visited = Vec::new();
        if !self.nodes[loss.0].needs_grad {
            return Ok(BackwardReport { visited });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            visited.push(Var(i));
            self.propagate(i, &grad);
            self.nodes[i].grad = Some(grad);
        }
        Ok(BackwardReport { visited })
    }

    fn propagate(&mut self, i: usize, grad: &[f64]) {
        // Pull the op out so the node list can be mutated while reading it.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geometry } => {
                let batch = self.value(*input).shape()[0];
                let cout = self.value(*weight).shape()[0];
                let grads = kernels::conv2d_backward(
                    self.value(*input).data(),
                    batch,
                    geometry,
                    self.value(*weight).data(),
                    cout,
                    grad,
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                if let Some(d) = grads.input {
                    self.accumulate(*input, d);
                }
                if let Some(d) = grads.weight {
                    self.accumulate(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    self.accumulate(*b, d);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if self.needs(*input) {
                    let mut d = vec![0.0; self.value(*input).numel()];
                    for (g, &src) in grad.iter().zip(argmax) {
                        d[src] += g;
                    }
                    self.accumulate(*input, d);
                }
            }
            Op::Upsample2 { input } => {
                if self.needs(*input) {
                    let [b, c, h, w] = self.value(*input).dims4("upsample_nearest2").expect("rank checked on record");
                    let d = kernels::upsample2_backward(grad, b * c, h, w);
                    self.accumulate(*input, d);
                }
            }
            Op::Relu { input } => {
                if self.needs(*input) {
                    let d = self
                        .value(*input)
                        .data()
                        .iter()
                        .zip(grad)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(*input, d);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(*a, grad.to_vec());
                self.accumulate(*b, grad.to_vec());
            }
            Op::Mse { pred, target } => {
                let scale = 2.0 * grad[0] / self.value(*pred).numel() as f64;
                let diff: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                if self.needs(*target) {
                    self.accumulate(*target, diff.iter().map(|d| -d).collect());
                }
                self.accumulate(*pred, diff);
            }
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                self.accumulate(*input, vec![grad[0]; n]);
            }
            Op::BatchNorm { input, gamma, beta, normalized, inv_std } => {
                let [b, c, h, w] = self.value(*input).dims4("batch_norm").expect("rank checked on record");
                let plane = h * w;
                let count = (b * plane) as f64;
                let g = self.value(*gamma).data().to_vec();
                let mut d_gamma = vec![0.0; c];
                let mut d_beta = vec![0.0; c];
                let mut d_input = vec![0.0; b * c * plane];
                for ch in 0..c {
                    let idx = |n: usize, i: usize| (n * c + ch) * plane + i;
                    let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                    for n in 0..b {
                        for i in 0..plane {
                            let k = idx(n, i);
                            sum_dy += grad[k];
                            sum_dy_xhat += grad[k] * normalized[k];
                        }
                    }
                    d_gamma[ch] = sum_dy_xhat;
                    d_beta[ch] = sum_dy;
                    let scale = g[ch] * inv_std[ch] / count;
                    for n in 0..b {
                        for i in 0..plane {
                            let k = idx(n, i);
                            d_input[k] = scale * (count * grad[k] - sum_dy - normalized[k] * sum_dy_xhat);
                        }
                    }
                }
                self.accumulate(*input, d_input);
                self.accumulate(*gamma, d_gamma);
                self.accumulate(*beta, d_beta);
            }
        }
        self.nodes[i].op = op;
    }
}
