//! Reverse-mode differentiation over an explicitly recorded tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use super::conv::{conv_backward, conv_forward, ConvPlan};
use super::ops::{self, Elementwise};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `needs[i]` tells whether input `i` wants a gradient; entries for inputs
/// that do not may be `None`.
pub trait Backward {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.get(v)?;
        Tensor::new(&self.shapes[v.0], g.to_vec()).ok()
    }

    /// Adds the gradient of `v`, scaled by `scale`, into `target.grad`.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor, scale: f64) -> Result<()> {
        if self.shapes[v.0] != target.shape() {
            return Err(TensorError::Shape(format!(
                "gradient of shape {:?} cannot be stored in tensor of shape {:?}",
                self.shapes[v.0],
                target.shape()
            )));
        }
        let n = target.numel();
        let dst = target.grad.get_or_insert_with(|| vec![0.0; n]);
        if let Some(g) = self.get(v) {
            for (d, s) in dst.iter_mut().zip(g) {
                *d += scale * s;
            }
        }
        Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        mut value: Tensor,
        inputs: Vec<usize>,
        op: Option<Box<dyn Backward>>,
        leaf_grad: bool,
    ) -> Var {
        value.grad = None;
        let requires_grad = leaf_grad || inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { None };
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Vec::new(), None, false)
    }

    /// Records a trainable leaf whose gradient backward will report.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Vec::new(), None, true)
    }

    /// Records the output of a user-defined operation.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn Backward>) -> Var {
        self.push(
            output,
            inputs.iter().map(|v| v.0).collect(),
            Some(op),
            false,
        )
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        self.conv(x, w, b, stride, false)
    }

    pub fn conv3d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        self.conv(x, w, b, stride, true)
    }

    fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        transpose: bool,
    ) -> Result<Var> {
        let (out, plan) = conv_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            transpose,
        )?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            out,
            inputs,
            Some(Box::new(ConvOp { plan, transpose })),
            false,
        ))
    }

    pub fn elementwise(&mut self, x: Var, kind: Elementwise) -> Result<Var> {
        let out = ops::elementwise(self.value(x), kind)?;
        Ok(self.push(out, vec![x.0], Some(Box::new(ElementwiseOp(kind))), false))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.elementwise(x, Elementwise::Relu)
            .expect("relu cannot fail")
    }

    /// `x + noise` where `noise` is a constant of the same shape; the
    /// gradient passes through to `x` unchanged.
    pub fn add_constant(&mut self, x: Var, noise: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != noise.shape() {
            return Err(TensorError::Shape(format!(
                "cannot add {:?} to {:?}",
                noise.shape(),
                xv.shape()
            )));
        }
        let data = xv
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, b)| a + b)
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, vec![x.0], Some(Box::new(Identity)), false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape(format!(
                "cannot add {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.push(out, vec![a.0, b.0], Some(Box::new(Add)), false))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(av.shape(), data).expect("same shape");
        self.push(out, vec![a.0], Some(Box::new(Scale(factor))), false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), vec![a.0], Some(Box::new(Sum)), false)
    }

    /// Reverse sweep from a scalar `loss`; gradients of every node that
    /// requires them are returned, summed over all uses.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads[idx].as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let input_grads = op.backward(&inputs, &node.value, g, &needs);
            for ((&i, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(ig)) = (*need, ig) else {
                    continue;
                };
                match &mut grads[i] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

struct ConvOp {
    plan: ConvPlan,
    transpose: bool,
}

impl Backward for ConvOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let need_bias = needs.get(2).copied().unwrap_or(false);
        let g = conv_backward(
            &self.plan,
            inputs[0],
            inputs[1],
            grad,
            self.transpose,
            [needs[0], needs[1], need_bias],
        );
        let mut out = vec![g.input, g.weights];
        if inputs.len() > 2 {
            out.push(g.bias);
        }
        out
    }
}

struct ElementwiseOp(Elementwise);

impl Backward for ElementwiseOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        _: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let g = match self.0 {
            Elementwise::Relu => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Elementwise::Clamp { lo, hi } => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if (lo..=hi).contains(&v) { g } else { 0.0 })
                .collect(),
            Elementwise::Round => vec![0.0; x.len()],
            Elementwise::AddNoise { .. } => grad.to_vec(),
        };
        vec![Some(g)]
    }
}

struct Identity;

impl Backward for Identity {
    fn backward(
        &self,
        _: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        _: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

struct Add;

impl Backward for Add {
    fn backward(
        &self,
        _: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        needs.iter().map(|&n| n.then(|| grad.to_vec())).collect()
    }
}

struct Scale(f64);

impl Backward for Scale {
    fn backward(
        &self,
        _: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        _: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().map(|g| g * self.0).collect())]
    }
}

struct Sum;

impl Backward for Sum {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        _: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0]; inputs[0].numel()])]
    }
}
