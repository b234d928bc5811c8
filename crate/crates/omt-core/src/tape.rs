//! Wengert tape: forward ops are recorded in topological order, then walked
//! in reverse to accumulate exact gradients for every registered parameter.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A recorded primitive. Public so tests and diagnostics can walk the tape.
#[derive(Clone, Debug)]
pub enum Op<T> {
    /// Leaf with no gradient bookkeeping of its own.
    Constant,
    /// Leaf registered in the parameter table.
    Parameter,
    Matmul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Row-broadcast bias addition: [r x c] + [1 x c].
    AddRow { m: NodeId, row: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, k: T },
    Relu { x: NodeId },
    Ln { x: NodeId },
    Sum { x: NodeId },
    /// Pick one flat element as a 1x1 tensor.
    Index { x: NodeId, at: usize },
    MaskedSoftmax { x: NodeId, mask: Vec<bool> },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: T },
    ConcatCols { a: NodeId, b: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    /// Same data, new shape (row-major, numel preserved).
    Reshape { x: NodeId },
    /// Scalar sum of x*ln(x) with the 0*ln(0)=0 convention. Keeps entropy
    /// terms finite when a probability underflows to zero.
    XLogX { x: NodeId },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Gradients keyed by parameter name. Parameters that do not reach the loss
/// carry explicit zero tensors.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.by_name.iter()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// sqrt of the sum of squares over every gradient entry.
    pub fn global_norm(&self) -> T {
        let mut acc = T::zero();
        for g in self.by_name.values() {
            for &v in g.data() {
                acc = acc + v * v;
            }
        }
        acc.sqrt()
    }

    /// Scales all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: T) {
        let norm = self.global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for g in self.by_name.values_mut() {
                for v in g.data_mut() {
                    *v = *v * k;
                }
            }
        }
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor<T>> {
        self.by_name
    }
}

/// Recording tape. Values are computed eagerly as ops are pushed; the op
/// list stays in topological order by construction.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        debug_assert!(value.is_finite_all());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Register a named parameter leaf. Names must be unique per tape.
    pub fn parameter(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Input(format!("duplicate parameter {name:?}")));
        }
        let id = self.push(Op::Parameter, value);
        self.params.push((String::from(name), id));
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0].op
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    // ── recorded ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul { a, b }, v))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose()?;
        Ok(self.push(Op::Transpose { x }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(m).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow { m, row }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn scale(&mut self, x: NodeId, k: T) -> NodeId {
        let v = self.value(x).scale(k);
        self.push(Op::Scale { x, k }, v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).relu();
        self.push(Op::Relu { x }, v)
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).ln()?;
        Ok(self.push(Op::Ln { x }, v))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sum();
        self.push(Op::Sum { x }, v)
    }

    pub fn index(&mut self, x: NodeId, at: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if at >= xv.numel() {
            return Err(Error::Shape(format!(
                "index {at} out of {} elements",
                xv.numel()
            )));
        }
        let v = Tensor::scalar(xv.data()[at]);
        Ok(self.push(Op::Index { x, at }, v))
    }

    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let v = self.value(x).masked_softmax(mask)?;
        Ok(self.push(Op::MaskedSoftmax { x, mask: mask.to_vec() }, v))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let v = self
            .value(x)
            .layer_norm(self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(Op::ConcatCols { a, b }, v))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x).slice_cols(start, len)?;
        Ok(self.push(Op::SliceCols { x, start, len }, v))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != xv.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}",
                xv.shape()
            )));
        }
        let v = Tensor::from_vec(shape, xv.data().to_vec())?;
        Ok(self.push(Op::Reshape { x }, v))
    }

    /// sum(x * ln(x)) as a 1x1 tensor; negative entries are an error, zero
    /// entries contribute zero.
    pub fn xlogx(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::NonFinite(String::from("xlogx of negative value")));
        }
        let s = xv.data().iter().fold(T::zero(), |acc, &v| {
            if v > T::zero() {
                acc + v * v.ln()
            } else {
                acc
            }
        });
        Ok(self.push(Op::XLogX { x }, Tensor::scalar(s)))
    }

    /// Recompute every node value from the leaves. Ops are pure, so this
    /// reproduces the stored values bit for bit.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut vals: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Constant | Op::Parameter => node.value.clone(),
                Op::Matmul { a, b } => vals[a.0].matmul(&vals[b.0])?,
                Op::Transpose { x } => vals[x.0].transpose()?,
                Op::Add { a, b } => vals[a.0].add(&vals[b.0])?,
                Op::AddRow { m, row } => vals[m.0].add_row(&vals[row.0])?,
                Op::Sub { a, b } => vals[a.0].sub(&vals[b.0])?,
                Op::Mul { a, b } => vals[a.0].mul(&vals[b.0])?,
                Op::Scale { x, k } => vals[x.0].scale(*k),
                Op::Relu { x } => vals[x.0].relu(),
                Op::Ln { x } => vals[x.0].ln()?,
                Op::Sum { x } => vals[x.0].sum(),
                Op::Index { x, at } => Tensor::scalar(vals[x.0].data()[*at]),
                Op::MaskedSoftmax { x, mask } => vals[x.0].masked_softmax(mask)?,
                Op::LayerNorm { x, gain, bias, eps } => {
                    vals[x.0].layer_norm(&vals[gain.0], &vals[bias.0], *eps)?
                }
                Op::ConcatCols { a, b } => vals[a.0].concat_cols(&vals[b.0])?,
                Op::SliceCols { x, start, len } => vals[x.0].slice_cols(*start, *len)?,
                Op::Reshape { x } => Tensor::from_vec(
                    node.value.shape().to_vec(),
                    vals[x.0].data().to_vec(),
                )?,
                Op::XLogX { x } => {
                    let s = vals[x.0].data().iter().fold(T::zero(), |acc, &v| {
                        if v > T::zero() {
                            acc + v * v.ln()
                        } else {
                            acc
                        }
                    });
                    Tensor::scalar(s)
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Reverse-mode gradients of a scalar loss for every registered
    /// parameter. Parameters off the loss path get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Parameter => {
                    grads[idx] = Some(g);
                }
                Op::Matmul { a, b } => {
                    let da = g.matmul(&self.value(*b).transpose()?)?;
                    let db = self.value(*a).transpose()?.matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Transpose { x } => {
                    accumulate(&mut grads, *x, g.transpose()?)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddRow { m, row } => {
                    let (r, c) = g.dims2()?;
                    let mut drow = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            drow[j] = drow[j] + g.data()[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *m, g)?;
                    accumulate(&mut grads, *row, Tensor::row(drow))?;
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-T::one()))?;
                }
                Op::Mul { a, b } => {
                    let da = g.mul(self.value(*b))?;
                    let db = g.mul(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale { x, k } => {
                    accumulate(&mut grads, *x, g.scale(*k))?;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &xval)| if xval > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?)?;
                }
                Op::Ln { x } => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &xval)| gv / xval)
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?)?;
                }
                Op::Sum { x } => {
                    let s = g.item()?;
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, Tensor::filled(xv.shape().to_vec(), s))?;
                }
                Op::Index { x, at } => {
                    let s = g.item()?;
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    dx.data_mut()[*at] = s;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::MaskedSoftmax { x, mask } => {
                    let y = &self.nodes[idx].value;
                    let (r, c) = y.dims2()?;
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        let yrow = &y.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let mut dot = T::zero();
                        for j in 0..c {
                            if mask[j] {
                                dot = dot + grow[j] * yrow[j];
                            }
                        }
                        for j in 0..c {
                            if mask[j] {
                                dx[i * c + j] = yrow[j] * (grow[j] - dot);
                            }
                        }
                    }
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(y.shape().to_vec(), dx)?,
                    )?;
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let (r, c) = xv.dims2()?;
                    let inv_c = T::one() / T::from_usize(c);
                    let mut dx = vec![T::zero(); r * c];
                    let mut dgain = vec![T::zero(); c];
                    let mut dbias = vec![T::zero(); c];
                    for i in 0..r {
                        let row = &xv.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
                        let var = row
                            .iter()
                            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                            * inv_c;
                        let inv_sigma = T::one() / (var + *eps).sqrt();
                        // dyhat = gain * dL/dy; dx via the standard two-mean form
                        let mut mean_dyhat = T::zero();
                        let mut mean_dyhat_xhat = T::zero();
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv_sigma;
                            let dyhat = gv.data()[j] * grow[j];
                            mean_dyhat = mean_dyhat + dyhat;
                            mean_dyhat_xhat = mean_dyhat_xhat + dyhat * xhat;
                            dgain[j] = dgain[j] + grow[j] * xhat;
                            dbias[j] = dbias[j] + grow[j];
                        }
                        mean_dyhat = mean_dyhat * inv_c;
                        mean_dyhat_xhat = mean_dyhat_xhat * inv_c;
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv_sigma;
                            let dyhat = gv.data()[j] * grow[j];
                            dx[i * c + j] =
                                (dyhat - mean_dyhat - xhat * mean_dyhat_xhat) * inv_sigma;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx)?)?;
                    accumulate(&mut grads, *gain, Tensor::row(dgain))?;
                    accumulate(&mut grads, *bias, Tensor::row(dbias))?;
                }
                Op::ConcatCols { a, b } => {
                    let (_, ca) = self.value(*a).dims2()?;
                    let (_, cb) = self.value(*b).dims2()?;
                    accumulate(&mut grads, *a, g.slice_cols(0, ca)?)?;
                    accumulate(&mut grads, *b, g.slice_cols(ca, cb)?)?;
                }
                Op::SliceCols { x, start, len } => {
                    let xv = self.value(*x);
                    let (r, c) = xv.dims2()?;
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..*len {
                            dx[i * c + start + j] = g.data()[i * len + j];
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx)?)?;
                }
                Op::Reshape { x } => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(xv.shape().to_vec(), g.data().to_vec())?,
                    )?;
                }
                Op::XLogX { x } => {
                    let s = g.item()?;
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .map(|&v| {
                            if v > T::zero() {
                                s * (v.ln() + T::one())
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?)?;
                }
            }
        }

        let mut by_name = BTreeMap::new();
        for (name, id) in &self.params {
            let g = match grads[id.0].take() {
                Some(g) => g,
                None => Tensor::zeros(self.value(*id).shape().to_vec()),
            };
            by_name.insert(name.clone(), g);
        }
        Ok(Gradients { by_name })
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    g: Tensor<T>,
) -> Result<()> {
    match grads[id.0].take() {
        Some(prev) => grads[id.0] = Some(prev.add(&g)?),
        None => grads[id.0] = Some(g),
    }
    Ok(())
}
