//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Leaves may
//! borrow their values (model parameters), which keeps a frozen model
//! shareable between concurrently built graphs.

use std::borrow::Cow;

use super::layers::{self, ConvSpec, PoolSpec, SppSpec};
use super::{NnError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, weight: Var, bias: Var, spec: ConvSpec },
    MaxPool { x: Var, argmax: Vec<usize> },
    Spp { x: Var, argmax: Vec<usize> },
    Relu(Var),
    Linear { x: Var, weight: Var, bias: Var },
    Concat(Vec<Var>),
    EuclideanLoss { pred: Var, target: Var },
    Add(Var, Var),
    Scale(Var, f64),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Gradient of a scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient, zeros shaped like `like` when the
    /// node received none.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf owning its value (inputs, targets).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    /// Leaf borrowing its value (parameters).
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var, NnError> {
        let y = layers::conv2d_forward(self.value(x), self.value(weight), self.value(bias), &spec)?;
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x, weight, bias, spec }))
    }

    pub fn maxpool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var, NnError> {
        let (y, argmax) = layers::maxpool2d_forward(self.value(x), &spec)?;
        Ok(self.push(Cow::Owned(y), Op::MaxPool { x, argmax }))
    }

    pub fn spp(&mut self, x: Var, spec: &SppSpec) -> Result<Var, NnError> {
        let (y, argmax) = layers::spp_forward(self.value(x), spec)?;
        Ok(self.push(Cow::Owned(y), Op::Spp { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let y = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(Cow::Owned(y), Op::Relu(x))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let y = layers::linear_forward(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(Cow::Owned(y), Op::Linear { x, weight, bias }))
    }

    /// Joins along axis 1. Parts must agree on the batch extent; when all
    /// parts share their trailing extents the result keeps them, otherwise
    /// the result is flattened to `[N, features]`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("concat of zero tensors".into()))?;
        let n = self.value(*first).batch();
        let trailing = self.value(*first).shape().get(2..).map(<[usize]>::to_vec).unwrap_or_default();
        let mut same_trailing = true;
        let mut axis1 = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rank() < 2 || t.batch() != n {
                return Err(NnError::ShapeMismatch(format!(
                    "concat: part shape {:?} incompatible with batch {n}",
                    t.shape()
                )));
            }
            same_trailing &= t.shape()[2..] == trailing[..];
            axis1 += t.shape()[1];
        }
        let features: usize = parts.iter().map(|p| self.value(*p).len() / n.max(1)).sum();
        let mut data = Vec::with_capacity(n * features);
        for b in 0..n {
            for p in parts {
                let t = self.value(*p);
                let k = t.len() / n;
                data.extend_from_slice(&t.data()[b * k..(b + 1) * k]);
            }
        }
        let shape = if same_trailing {
            let mut s = vec![n, axis1];
            s.extend_from_slice(&trailing);
            s
        } else {
            vec![n, features]
        };
        let y = Tensor::new(shape, data)?;
        Ok(self.push(Cow::Owned(y), Op::Concat(parts.to_vec())))
    }

    /// Non-squared Euclidean norm `||pred - target||_2` over all elements.
    pub fn euclidean_loss(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "euclidean loss: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let v = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::EuclideanLoss { pred, target }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NnError::ShapeMismatch(format!("add: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(Cow::Owned(out), Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * s).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(Cow::Owned(out), Op::Scale(a, s))
    }

    /// Reverse sweep seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, NnError> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contributions: Vec<(Var, Tensor)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, weight, bias, spec } => {
                    let (dx, dw, db) = layers::conv2d_backward(
                        self.value(*x),
                        self.value(*weight),
                        self.value(*bias),
                        spec,
                        &g,
                    )?;
                    contributions.extend([(*x, dx), (*weight, dw), (*bias, db)]);
                }
                Op::MaxPool { x, argmax } | Op::Spp { x, argmax } => {
                    contributions.push((*x, layers::scatter_argmax(self.value(*x).shape(), argmax, &g)));
                }
                Op::Relu(x) => {
                    let xin = self.value(*x);
                    let data = xin.data().iter().zip(g.data()).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                    contributions.push((*x, Tensor::new(xin.shape().to_vec(), data)?));
                }
                Op::Linear { x, weight, bias } => {
                    let (dx, dw, db) =
                        layers::linear_backward(self.value(*x), self.value(*weight), self.value(*bias), &g)?;
                    contributions.extend([(*x, dx), (*weight, dw), (*bias, db)]);
                }
                Op::Concat(parts) => {
                    let n = g.batch();
                    let total = g.len() / n.max(1);
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let k = t.len() / n.max(1);
                        let mut data = Vec::with_capacity(t.len());
                        for b in 0..n {
                            data.extend_from_slice(&g.data()[b * total + offset..b * total + offset + k]);
                        }
                        offset += k;
                        contributions.push((*p, Tensor::new(t.shape().to_vec(), data)?));
                    }
                }
                Op::EuclideanLoss { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let norm = node.value.data()[0];
                    let s = if norm < 1e-12 { 0.0 } else { g.data()[0] / norm };
                    let dp: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| s * (a - b)).collect();
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    contributions.push((*pred, Tensor::new(p.shape().to_vec(), dp)?));
                    contributions.push((*target, Tensor::new(t.shape().to_vec(), dt)?));
                }
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::Scale(a, s) => {
                    let mut d = g.clone();
                    d.scale_inplace(*s);
                    contributions.push((*a, d));
                }
            }
            for (v, d) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
