use super::ops::{self, BnForward};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel batch statistics observed by a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Dense {
        x: Var,
        w: Var,
    },
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    Bce {
        pred: Var,
        target: Var,
        eps: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only tape. Nodes are recorded in evaluation order so a reverse
/// sweep over indices is a valid topological order for backprop.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let out = ops::conv2d_forward(self.value(x), self.value(w), stride, padding)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                x,
                w,
                stride,
                padding,
            },
        ))
    }

    /// Train-mode batch norm over the batch and spatial axes of an NCHW input.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let BnForward {
            out,
            xhat,
            inv_std,
            mean,
            var,
        } = ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let s = self.value(x).shape();
        let count = s[0] * s[2] * s[3];
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
        );
        Ok((v, BatchStats { mean, var, count }))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let f = ops::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            f.out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: f.xhat,
                inv_std: f.inv_std,
                train: false,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.rg(x);
        self.push(out, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::sigmoid);
        let rg = self.rg(x);
        self.push(out, rg, Op::Sigmoid(x))
    }

    pub fn avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let out = ops::avg_pool2_forward(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::AvgPool2(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool_forward(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::GlobalAvgPool(x)))
    }

    pub fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = ops::dense_forward(self.value(x), self.value(w))?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, rg, Op::Dense { x, w }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels_forward(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, rg, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(x), start, len)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::SliceChannels { x, start }))
    }

    /// Mean binary cross-entropy; `pred` is clamped to `[eps, 1 − eps]`.
    pub fn bce_loss(&mut self, pred: Var, target: Var, eps: f64) -> Result<Var> {
        let out = ops::bce_forward(self.value(pred), self.value(target), eps)?;
        let rg = self.rg(pred);
        Ok(self.push(out, rg, Op::Bce { pred, target, eps }))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let seed = Tensor::full(self.value(root).shape().to_vec(), T::ONE);
        self.backward_with(root, seed)
    }

    /// Backpropagates an explicit upstream gradient from any node.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.value(root).shape() {
            return Err(TensorError::shape(
                "backward",
                format!(
                    "seed {:?} vs root {:?}",
                    seed.shape(),
                    self.value(root).shape()
                ),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, idx: usize, dy: &Tensor<T>) -> Result<()> {
        let mut pending: Vec<(Var, Tensor<T>)> = Vec::new();
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                stride,
                padding,
            } => {
                let (dx, dw) = ops::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *stride,
                    *padding,
                    self.rg(*x),
                    self.rg(*w),
                )?;
                pending.extend(dx.map(|d| (*x, d)));
                pending.extend(dw.map(|d| (*w, d)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (dx, dg, db) =
                    ops::batch_norm_backward(dy, self.value(*gamma), xhat, inv_std, *train)?;
                pending.push((*x, dx));
                pending.push((*gamma, dg));
                pending.push((*beta, db));
            }
            Op::Relu(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&y, &d)| if y > T::ZERO { d } else { T::ZERO })
                    .collect();
                pending.push((*x, Tensor::new(dy.shape().to_vec(), data)?));
            }
            Op::Sigmoid(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&y, &d)| d * y * (T::ONE - y))
                    .collect();
                pending.push((*x, Tensor::new(dy.shape().to_vec(), data)?));
            }
            Op::AvgPool2(x) => {
                pending.push((*x, ops::avg_pool2_backward(self.value(*x).shape(), dy)));
            }
            Op::GlobalAvgPool(x) => {
                pending.push((
                    *x,
                    ops::global_avg_pool_backward(self.value(*x).shape(), dy),
                ));
            }
            Op::Dense { x, w } => {
                let (dx, dw) = ops::dense_backward(self.value(*x), self.value(*w), dy);
                pending.push((*x, dx));
                pending.push((*w, dw));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    if self.rg(p) {
                        pending.push((p, ops::slice_channels(dy, start, c)?));
                    }
                    start += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                ops::scatter_channels_add(&mut dx, dy, *start);
                pending.push((*x, dx));
            }
            Op::Bce { pred, target, eps } => {
                let g =
                    ops::bce_backward(self.value(*pred), self.value(*target), dy.data()[0], *eps);
                pending.push((*pred, g));
            }
        }
        for (v, g) in pending {
            self.accumulate(v, g);
        }
        Ok(())
    }
}
