use super::kernels;
use super::{LossKind, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Conv3d { input: NodeId, kernel: NodeId, bias: NodeId },
    MaxPool3d { input: NodeId, argmax: Vec<u32> },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Relu(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Loss { kind: LossKind, pred: NodeId, target: T },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A define-by-run computation graph. Nodes are appended in evaluation order,
/// so the node list is already a topological order.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf; `requires_grad` controls whether backward computes its gradient.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient, or zeros when the node did not influence the root.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<T> {
        self.grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.nodes[id.0].grad.take()
    }

    pub fn conv3d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = kernels::conv3d_valid(self.value(input), self.value(kernel), self.value(bias))?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(v, Op::Conv3d { input, kernel, bias }, rg))
    }

    pub fn maxpool3d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let (v, argmax) = kernels::maxpool3d(self.value(input), window)?;
        let rg = self.rg(&[input]);
        Ok(self.push(v, Op::MaxPool3d { input, argmax }, rg))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = kernels::dense(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(v, Op::Dense { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = kernels::relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        self.reshape(x, vec![n]).expect("flatten preserves length")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut v = va.clone();
        v.add_assign(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Scalar loss between a single-element prediction and a target.
    pub fn loss(&mut self, kind: LossKind, pred: NodeId, target: f64) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != 1 {
            return Err(Error::Shape(format!("loss needs a scalar prediction, got {:?}", p.shape())));
        }
        let v = kind.value(p.data()[0].to_f64(), target);
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(T::from_f64(v)),
            Op::Loss {
                kind,
                pred,
                target: T::from_f64(target),
            },
            rg,
        ))
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor<T>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar `root`. Gradients accumulate into
    /// every node that requires them; read them with [`Graph::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Tensor::filled(self.value(root).shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &Tensor<T>) {
        let mut out: Vec<(NodeId, Tensor<T>)> = Vec::new();
        let needs = |id: &NodeId| self.nodes[id.0].requires_grad;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv3d { input, kernel, bias } => {
                let (di, dk, db) = kernels::conv3d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    needs(input),
                );
                if let Some(di) = di {
                    out.push((*input, di));
                }
                out.push((*kernel, dk));
                out.push((*bias, db));
            }
            Op::MaxPool3d { input, argmax } => {
                if needs(input) {
                    out.push((
                        *input,
                        kernels::maxpool3d_backward(g, argmax, self.value(*input).shape()),
                    ));
                }
            }
            Op::Dense { input, weight, bias } => {
                let (dx, dw, db) = kernels::dense_backward(self.value(*input), self.value(*weight), g);
                out.push((*input, dx));
                out.push((*weight, dw));
                out.push((*bias, db));
            }
            Op::Relu(x) => out.push((*x, kernels::relu_backward(self.value(*x), g))),
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                out.push((*x, g.clone().reshape(shape).expect("reshape grad")));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = Tensor::from_fn(va.shape(), |i| g.data()[i] * vb.data()[i]);
                let gb = Tensor::from_fn(vb.shape(), |i| g.data()[i] * va.data()[i]);
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                out.push((*x, Tensor::filled(&shape, g.data()[0])));
            }
            Op::Loss { kind, pred, target } => {
                let p = self.value(*pred).data()[0].to_f64();
                let d = kind.derivative(p, Real::to_f64(*target));
                out.push((*pred, Tensor::scalar(T::from_f64(d) * g.data()[0])));
            }
        }
        for (id, t) in out {
            self.accumulate(id, t);
        }
    }
}
