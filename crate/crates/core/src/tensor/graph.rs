use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{broadcast_shape, broadcastable_to, NodeRef, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Differentiable primitive operations.
///
/// Binary elementwise ops broadcast by inserting explicit
/// [`Primitive::BroadcastTo`] nodes, so every recorded `Add`/`Sub`/`Mul`
/// has equal input shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    Relu,
    Tanh,
    Exp,
    Log,
    Softplus,
    Square,
    Scale(f64),
    /// Sum over one axis (removed from the shape) or over everything.
    Sum(Option<usize>),
    Mean(Option<usize>),
    Max(Option<usize>),
    Concat(usize),
    Slice { axis: usize, start: usize, end: usize },
    BroadcastTo(Vec<usize>),
    SumTo(Vec<usize>),
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softplus => "softplus",
            Primitive::Square => "square",
            Primitive::Scale(_) => "scale",
            Primitive::Sum(_) => "sum",
            Primitive::Mean(_) => "mean",
            Primitive::Max(_) => "max",
            Primitive::Concat(_) => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::BroadcastTo(_) => "broadcast",
            Primitive::SumTo(_) => "sum_to",
            Primitive::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
pub(super) enum Op {
    Leaf,
    Prim(Primitive),
}

pub(super) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Detached output value.
    pub value: Tensor,
}

/// Append-only record of operations on attached tensors.
///
/// Operations only record when at least one input is attached; on purely
/// detached inputs they compute values and return detached tensors, so the
/// same model code serves training and evaluation. A graph is meant to live
/// for one training step and be dropped afterwards.
pub struct Graph {
    id: u64,
    pub(super) nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a copy of `t` as a new leaf.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let value = t.detach();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: value.clone(),
        });
        value.with_node(NodeRef { graph: self.id, id })
    }

    pub(super) fn node_id(&self, t: &Tensor) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(n) if n.graph == self.id => Ok(Some(n.id)),
            Some(_) => Err(Error::Lookup("tensor is attached to a different graph".into())),
        }
    }

    pub(super) fn attached(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.with_node(NodeRef { graph: self.id, id })
    }

    fn record(&self, prim: Primitive, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} (value {bad})", prim.name())));
        }
        let out = Tensor::from_parts(shape, data);
        let mut ids = Vec::with_capacity(inputs.len());
        let mut any = false;
        for t in inputs {
            let id = self.node_id(t)?;
            any |= id.is_some();
            ids.push(id);
        }
        if !any {
            return Ok(out);
        }
        // Detached inputs become constant leaves so every input has a node.
        let ids: Vec<usize> = ids
            .into_iter()
            .zip(inputs)
            .map(|(id, t)| id.unwrap_or_else(|| self.leaf(t).node().unwrap().id))
            .collect();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Prim(prim),
            inputs: ids,
            value: out.clone(),
        });
        Ok(out.with_node(NodeRef { graph: self.id, id }))
    }

    /// Applies `prim` to `inputs`; the generic entry point behind the named ops.
    pub fn apply(&self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let arity = match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            Primitive::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::dim(prim.name(), format!("expected {arity} inputs, got {}", inputs.len())));
        }
        match prim {
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Sub => self.sub(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::MatMul => self.matmul(inputs[0], inputs[1]),
            Primitive::Transpose => self.transpose(inputs[0]),
            Primitive::Relu => self.relu(inputs[0]),
            Primitive::Tanh => self.tanh(inputs[0]),
            Primitive::Exp => self.exp(inputs[0]),
            Primitive::Log => self.log(inputs[0]),
            Primitive::Softplus => self.softplus(inputs[0]),
            Primitive::Square => self.square(inputs[0]),
            Primitive::Scale(c) => self.scale(inputs[0], c),
            Primitive::Sum(axis) => self.sum_impl(inputs[0], axis),
            Primitive::Mean(axis) => self.mean_impl(inputs[0], axis),
            Primitive::Max(axis) => self.max_impl(inputs[0], axis),
            Primitive::Concat(axis) => self.concat(inputs, axis),
            Primitive::Slice { axis, start, end } => self.slice(inputs[0], axis, start, end),
            Primitive::BroadcastTo(shape) => self.broadcast_to(inputs[0], &shape),
            Primitive::SumTo(shape) => self.sum_to(inputs[0], &shape),
            Primitive::Reshape(shape) => self.reshape(inputs[0], &shape),
        }
    }

    fn elementwise(&self, prim: Primitive, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if a.shape() != b.shape() {
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                Error::dim(prim.name(), format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
            })?;
            let a = self.broadcast_to(a, &shape)?;
            let b = self.broadcast_to(b, &shape)?;
            return self.elementwise(prim, &a, &b, f);
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.record(prim, &[a, b], a.shape().to_vec(), data)
    }

    fn unary(&self, prim: Primitive, a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| f(x)).collect();
        self.record(prim, &[a], a.shape().to_vec(), data)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Primitive::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Primitive::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Primitive::Mul, a, b, |x, y| x * y)
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        match (a.shape(), b.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let data = kernels::matmul(m, k, n, a.data(), b.data());
                self.record(Primitive::MatMul, &[a, b], vec![m, n], data)
            }
            (sa, sb) => Err(Error::dim("matmul", format!("incompatible shapes {sa:?} and {sb:?}"))),
        }
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        match *a.shape() {
            [r, c] => {
                let data = kernels::transpose(r, c, a.data());
                self.record(Primitive::Transpose, &[a], vec![c, r], data)
            }
            _ => Err(Error::dim("transpose", format!("expected rank 2, got {:?}", a.shape()))),
        }
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Primitive::Relu, a, |x| x.max(0.0))
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Primitive::Tanh, a, f64::tanh)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Primitive::Exp, a, f64::exp)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.unary(Primitive::Log, a, f64::ln)
    }

    pub fn softplus(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Primitive::Softplus, a, kernels::softplus)
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Primitive::Square, a, |x| x * x)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(Primitive::Scale(c), a, |x| c * x)
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.add(a, &Tensor::scalar(c))
    }

    fn check_axis(&self, op: &'static str, a: &Tensor, axis: usize) -> Result<()> {
        if axis >= a.ndim() {
            return Err(Error::dim(op, format!("axis {axis} out of range for {:?}", a.shape())));
        }
        Ok(())
    }

    fn sum_impl(&self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        match axis {
            None => {
                let s = a.data().iter().sum();
                self.record(Primitive::Sum(None), &[a], Vec::new(), vec![s])
            }
            Some(ax) => {
                self.check_axis("sum", a, ax)?;
                let data = kernels::sum_axis(a.shape(), a.data(), ax);
                let mut shape = a.shape().to_vec();
                shape.remove(ax);
                self.record(Primitive::Sum(axis), &[a], shape, data)
            }
        }
    }

    fn mean_impl(&self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        let count = match axis {
            None => a.numel(),
            Some(ax) => {
                self.check_axis("mean", a, ax)?;
                a.shape()[ax]
            }
        };
        let s = self.sum_impl(a, axis)?;
        self.scale(&s, 1.0 / count as f64)
    }

    fn max_impl(&self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        match axis {
            None => {
                let m = a.data()[kernels::argmax_all(a.data())];
                self.record(Primitive::Max(None), &[a], Vec::new(), vec![m])
            }
            Some(ax) => {
                self.check_axis("max", a, ax)?;
                let idx = kernels::argmax_axis(a.shape(), a.data(), ax);
                let data = idx.iter().map(|&i| a.data()[i]).collect();
                let mut shape = a.shape().to_vec();
                shape.remove(ax);
                self.record(Primitive::Max(axis), &[a], shape, data)
            }
        }
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        self.sum_impl(a, None)
    }

    /// Sum over `axis`, dropping it from the shape.
    pub fn sum_axis(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.sum_impl(a, Some(axis))
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor> {
        self.mean_impl(a, None)
    }

    pub fn mean_axis(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.mean_impl(a, Some(axis))
    }

    pub fn max(&self, a: &Tensor) -> Result<Tensor> {
        self.max_impl(a, None)
    }

    pub fn max_axis(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.max_impl(a, Some(axis))
    }

    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        self.check_axis("concat", first, axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("shape {:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
                ));
            }
            shape[axis] += p.shape()[axis];
        }
        let views: Vec<(&[usize], &[f64])> = parts.iter().map(|p| (p.shape(), p.data())).collect();
        let data = kernels::concat(&views, axis);
        self.record(Primitive::Concat(axis), parts, shape, data)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        self.check_axis("slice", a, axis)?;
        if start >= end || end > a.shape()[axis] {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{end} invalid for axis {axis} of {:?}", a.shape()),
            ));
        }
        let data = kernels::slice(a.shape(), a.data(), axis, start, end);
        let mut shape = a.shape().to_vec();
        shape[axis] = end - start;
        self.record(Primitive::Slice { axis, start, end }, &[a], shape, data)
    }

    pub fn broadcast_to(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if a.shape() == shape {
            return Ok(a.clone());
        }
        if !broadcastable_to(a.shape(), shape) {
            return Err(Error::dim("broadcast", format!("cannot broadcast {:?} to {shape:?}", a.shape())));
        }
        let data = kernels::broadcast_to(a.shape(), a.data(), shape);
        self.record(Primitive::BroadcastTo(shape.to_vec()), &[a], shape.to_vec(), data)
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if a.shape() == shape {
            return Ok(a.clone());
        }
        if !broadcastable_to(shape, a.shape()) {
            return Err(Error::dim("sum_to", format!("cannot reduce {:?} to {shape:?}", a.shape())));
        }
        let data = kernels::sum_to(a.shape(), a.data(), shape);
        self.record(Primitive::SumTo(shape.to_vec()), &[a], shape.to_vec(), data)
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if a.shape() == shape {
            return Ok(a.clone());
        }
        if shape.iter().product::<usize>() != a.numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", format!("cannot reshape {:?} to {shape:?}", a.shape())));
        }
        self.record(Primitive::Reshape(shape.to_vec()), &[a], shape.to_vec(), a.to_vec())
    }
}
