use std::collections::HashSet;

use super::graph::{Graph, Op, Primitive};
use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

impl Graph {
    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// Vector-Jacobian products are themselves built from graph ops. With
    /// `create_graph` they run on attached handles and are recorded, so the
    /// returned gradients can be differentiated again; otherwise they run
    /// on detached values and nothing is appended.
    ///
    /// A `wrt` tensor that is attached but does not influence `loss` gets
    /// an all-zero gradient.
    pub fn backward(&self, loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let loss_id = self
            .node_id(loss)?
            .ok_or_else(|| Error::Contract("loss is not attached to the graph".into()))?;
        let mut wrt_ids = Vec::with_capacity(wrt.len());
        for (i, t) in wrt.iter().enumerate() {
            let id = self
                .node_id(t)?
                .ok_or_else(|| Error::Lookup(format!("wrt tensor {i} is not attached to the graph")))?;
            wrt_ids.push(id);
        }

        let n = loss_id + 1;
        // Nodes that depend on some wrt tensor; only these need gradients.
        let targets: HashSet<usize> = wrt_ids.iter().copied().collect();
        let mut needs = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                needs[id] = targets.contains(&id) || nodes[id].inputs.iter().any(|&i| needs[i]);
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss_id] = Some(Tensor::ones(loss.shape()));

        for id in (0..n).rev() {
            if !needs[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let (prim, inputs) = {
                let nodes = self.nodes.borrow();
                match &nodes[id].op {
                    Op::Leaf => {
                        drop(nodes);
                        grads[id] = Some(g);
                        continue;
                    }
                    Op::Prim(p) => (p.clone(), nodes[id].inputs.clone()),
                }
            };
            let handle = |i: usize| {
                if create_graph {
                    self.attached(i)
                } else {
                    self.nodes.borrow()[i].value.clone()
                }
            };
            let ins: Vec<Tensor> = inputs.iter().map(|&i| handle(i)).collect();
            let out = handle(id);
            let g = if create_graph { g } else { g.detach() };
            let wanted: Vec<bool> = inputs.iter().map(|&i| needs[i]).collect();
            let input_grads = self.vjp(&prim, &ins, &out, &g, &wanted)?;
            for ((&inp, want), ig) in inputs.iter().zip(&wanted).zip(input_grads) {
                if !want {
                    continue;
                }
                let Some(ig) = ig else { continue };
                grads[inp] = Some(match grads[inp].take() {
                    None => ig,
                    Some(prev) => self.add(&prev, &ig)?,
                });
            }
            // Keep the gradient only if this node is itself a target.
            if targets.contains(&id) {
                grads[id] = Some(g);
            }
        }

        wrt_ids
            .iter()
            .zip(wrt)
            .map(|(&id, t)| {
                Ok(match &grads[id] {
                    Some(g) if create_graph => g.clone(),
                    Some(g) => g.detach(),
                    None => Tensor::zeros(t.shape()),
                })
            })
            .collect()
    }

    fn vjp(
        &self,
        prim: &Primitive,
        ins: &[Tensor],
        out: &Tensor,
        g: &Tensor,
        wanted: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
        let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
        match prim {
            Primitive::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
            Primitive::Sub => Ok(vec![
                Some(g.clone()),
                if want(1) { Some(self.neg(g)?) } else { None },
            ]),
            Primitive::Mul => Ok(vec![
                if want(0) { Some(self.mul(g, &ins[1])?) } else { None },
                if want(1) { Some(self.mul(g, &ins[0])?) } else { None },
            ]),
            Primitive::MatMul => {
                let ga = if want(0) {
                    let bt = self.transpose(&ins[1])?;
                    Some(self.matmul(g, &bt)?)
                } else {
                    None
                };
                let gb = if want(1) {
                    let at = self.transpose(&ins[0])?;
                    Some(self.matmul(&at, g)?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }
            Primitive::Transpose => one(self.transpose(g)),
            Primitive::Relu => {
                let mask = ins[0].map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                one(self.mul(g, &mask))
            }
            Primitive::Tanh => {
                // g * (1 - y^2)
                let y2 = self.square(out)?;
                let gy2 = self.mul(g, &y2)?;
                one(self.sub(g, &gy2))
            }
            Primitive::Exp => one(self.mul(g, out)),
            Primitive::Log => {
                // 1/x = exp(-ln x)
                let inv = self.exp(&self.neg(out)?)?;
                one(self.mul(g, &inv))
            }
            Primitive::Softplus => {
                // sigmoid(x) = exp(x - softplus(x))
                let sig = self.exp(&self.sub(&ins[0], out)?)?;
                one(self.mul(g, &sig))
            }
            Primitive::Square => {
                let two_x = self.scale(&ins[0], 2.0)?;
                one(self.mul(g, &two_x))
            }
            Primitive::Scale(c) => one(self.scale(g, *c)),
            Primitive::Sum(None) => one(self.broadcast_to(g, ins[0].shape())),
            Primitive::Sum(Some(axis)) => {
                let kept = keepdim_shape(ins[0].shape(), *axis);
                let g = self.reshape(g, &kept)?;
                one(self.broadcast_to(&g, ins[0].shape()))
            }
            Primitive::Mean(_) => unreachable!("mean is recorded as sum and scale"),
            Primitive::Max(axis) => {
                let x = &ins[0];
                let mut mask = vec![0.0; x.numel()];
                let g = match axis {
                    None => {
                        mask[kernels::argmax_all(x.data())] = 1.0;
                        self.broadcast_to(g, x.shape())?
                    }
                    Some(ax) => {
                        for i in kernels::argmax_axis(x.shape(), x.data(), *ax) {
                            mask[i] = 1.0;
                        }
                        let g = self.reshape(g, &keepdim_shape(x.shape(), *ax))?;
                        self.broadcast_to(&g, x.shape())?
                    }
                };
                let mask = Tensor::from_parts(x.shape().to_vec(), mask);
                one(self.mul(&g, &mask))
            }
            Primitive::Concat(axis) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(ins.len());
                for (i, t) in ins.iter().enumerate() {
                    let len = t.shape()[*axis];
                    res.push(if want(i) {
                        Some(self.slice(g, *axis, offset, offset + len)?)
                    } else {
                        None
                    });
                    offset += len;
                }
                Ok(res)
            }
            Primitive::Slice { axis, start, end } => {
                let full = ins[0].shape();
                let mut pieces = Vec::with_capacity(3);
                if *start > 0 {
                    let mut s = full.to_vec();
                    s[*axis] = *start;
                    pieces.push(Tensor::zeros(&s));
                }
                pieces.push(g.clone());
                if *end < full[*axis] {
                    let mut s = full.to_vec();
                    s[*axis] = full[*axis] - end;
                    pieces.push(Tensor::zeros(&s));
                }
                let refs: Vec<&Tensor> = pieces.iter().collect();
                one(self.concat(&refs, *axis))
            }
            Primitive::BroadcastTo(_) => one(self.sum_to(g, ins[0].shape())),
            Primitive::SumTo(_) => one(self.broadcast_to(g, ins[0].shape())),
            Primitive::Reshape(_) => one(self.reshape(g, ins[0].shape())),
        }
    }
}

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}
