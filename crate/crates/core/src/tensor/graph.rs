//! Recording graph with hand-written reverse-mode gradients.
//!
//! A forward pass is built by calling op methods on [`Graph`]; each call
//! computes its value eagerly through [`super::ops`] and records what it
//! did. [`Graph::backward`] then walks the recording once in reverse and
//! accumulates exact gradients into the parameter set. Only the op set
//! below is differentiable; there is no gradient for arbitrary control
//! flow, which is all the surrounding modules need.

use std::collections::HashMap;
use std::rc::Rc;

use super::ops;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a named parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Flat store of all parameters of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    items: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { items: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.items.iter().all(|p| p.name != name),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape());
        self.items.push(Parameter { name, value, grad });
        ParamId(self.items.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.items[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.items.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.items.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.items.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }
}

/// Handle to a value produced during a recorded forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Matmul(ValueId, ValueId),
    Add(ValueId, ValueId),
    AddBias { x: ValueId, bias: ValueId },
    Scale(ValueId, T),
    SoftmaxRows(ValueId),
    Gelu(ValueId),
    Gather { x: ValueId, index: Rc<Vec<usize>> },
    Scatter { x: ValueId, index: Rc<Vec<usize>> },
    Concat { parts: Vec<ValueId>, axis: usize },
    Reshape(ValueId),
    SumAll(ValueId),
    CrossEntropy { logits: ValueId, labels: Rc<Vec<u32>>, ignore: u32 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One recorded forward computation. Graphs are cheap to build and are
/// typically discarded after a step; parameters live in the [`ParamSet`].
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, ValueId>,
}

/// Per-node gradients returned by [`Graph::backward`], mostly for tests
/// that want gradients of non-parameter inputs.
#[derive(Debug)]
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn node(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.by_node[id.0].as_ref()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded node.
    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Constant leaf (no gradient tracked beyond the node table).
    pub fn input(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a parameter. Memoized: binding the same parameter
    /// again returns the existing node, so shared weights accumulate their
    /// gradient through one slot.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> ValueId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(params.get(id).value.clone(), Op::Param(id));
        self.param_nodes.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let value = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(value, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: ValueId, k: T) -> ValueId {
        let value = ops::scale(self.value(x), k);
        self.push(value, Op::Scale(x, k))
    }

    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let value = ops::softmax_rows(self.value(x))?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        let value = ops::gelu(self.value(x));
        self.push(value, Op::Gelu(x))
    }

    pub fn gather(&mut self, x: ValueId, index: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<ValueId> {
        let value = ops::gather(self.value(x), &index, out_shape)?;
        Ok(self.push(value, Op::Gather { x, index }))
    }

    /// Scatter into a zeroed tensor of shape `out_shape` (zero padding when
    /// indices do not cover the output).
    pub fn scatter(&mut self, x: ValueId, index: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<ValueId> {
        let value = ops::scatter_add(self.value(x), &index, out_shape)?;
        Ok(self.push(value, Op::Scatter { x, index }))
    }

    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat(&tensors, axis)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let value = ops::sum_all(self.value(x));
        self.push(value, Op::SumAll(x))
    }

    pub fn cross_entropy_mean(&mut self, logits: ValueId, labels: Rc<Vec<u32>>, ignore: u32) -> Result<ValueId> {
        let value = ops::cross_entropy_mean(self.value(logits), &labels, ignore)?;
        Ok(self.push(value, Op::CrossEntropy { logits, labels, ignore }))
    }

    /// Transpose as a recorded gather.
    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.value(x).dims2()?;
        let index = Rc::new(super::layout::transpose_indices(r, c));
        self.gather(x, index, &[c, r])
    }

    /// Affine map on the last axis; leading axes preserved.
    pub fn linear(&mut self, x: ValueId, w: ValueId, bias: ValueId) -> Result<ValueId> {
        let (rows, c_in) = self.value(x).row_view();
        let (wi, c_out) = self.value(w).dims2()?;
        if wi != c_in {
            return Err(Error::dimension(
                "linear",
                format!("input row length {c_in} does not match weight {:?}", self.value(w).shape()),
            ));
        }
        let mut out_shape: Vec<usize> = self.value(x).shape().to_vec();
        if out_shape.is_empty() {
            out_shape.push(c_out);
        } else {
            *out_shape.last_mut().unwrap() = c_out;
        }
        let flat = self.reshape(x, &[rows, c_in])?;
        let prod = self.matmul(flat, w)?;
        let biased = self.add_bias(prod, bias)?;
        self.reshape(biased, &out_shape)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of parameter
    /// leaves are accumulated into `params` (repeated calls keep adding
    /// until [`ParamSet::zero_grads`]); the full per-node table is
    /// returned for callers that need input gradients.
    pub fn backward(&self, loss: ValueId, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let p = params.get_mut(*pid);
                    p.grad = ops::add(&p.grad, &g)?;
                }
                Op::Matmul(a, b) => {
                    let at = ops::transpose(&self.nodes[a.0].value)?;
                    let bt = ops::transpose(&self.nodes[b.0].value)?;
                    let ga = ops::matmul(&g, &bt)?;
                    let gb = ops::matmul(&at, &g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddBias { x, bias } => {
                    let (rows, cols) = g.row_view();
                    let mut gb = vec![T::zero(); cols];
                    for r in 0..rows {
                        for (acc, &v) in gb.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                            *acc += v;
                        }
                    }
                    let gb = Tensor::from_vec(self.nodes[bias.0].value.shape(), gb)?;
                    accumulate(&mut grads, *x, g.clone())?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Op::Scale(x, k) => {
                    accumulate(&mut grads, *x, ops::scale(&g, *k))?;
                }
                Op::SoftmaxRows(x) => {
                    // dx = y * (g - sum(g * y)) per row, y the stored output
                    let y = &node.value;
                    let (rows, cols) = y.row_view();
                    let mut gx = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let mut dot = T::zero();
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            dot += yv * gv;
                        }
                        for (o, (&yv, &gv)) in gx[r * cols..(r + 1) * cols].iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(y.shape(), gx)?)?;
                }
                Op::Gelu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xi, &gi)| gi * ops::gelu_derivative(xi))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(xv.shape(), data)?)?;
                }
                Op::Gather { x, index } => {
                    let gx = ops::scatter_add(&g, index, self.nodes[x.0].value.shape())?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Scatter { x, index } => {
                    let gx = ops::gather(&g, index, self.nodes[x.0].value.shape())?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Concat { parts, axis } => match axis {
                    0 => {
                        let mut offset = 0;
                        for part in parts {
                            let len = self.nodes[part.0].value.len();
                            let shape = self.nodes[part.0].value.shape();
                            let slice = Tensor::from_vec(shape, g.data()[offset..offset + len].to_vec())?;
                            offset += len;
                            accumulate(&mut grads, *part, slice)?;
                        }
                    }
                    _ => {
                        let (rows, total) = g.dims2()?;
                        let mut start = 0;
                        for part in parts {
                            let (_, w) = self.nodes[part.0].value.dims2()?;
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                data.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                            }
                            start += w;
                            accumulate(&mut grads, *part, Tensor::from_vec(&[rows, w], data)?)?;
                        }
                    }
                },
                Op::Reshape(x) => {
                    let gx = g.reshape(self.nodes[x.0].value.shape())?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::SumAll(x) => {
                    let seed = g.item()?;
                    accumulate(&mut grads, *x, Tensor::full(self.nodes[x.0].value.shape(), seed))?;
                }
                Op::CrossEntropy { logits, labels, ignore } => {
                    let seed = g.item()?;
                    let gl = ops::cross_entropy_backward(&self.nodes[logits.0].value, labels, *ignore, seed)?;
                    accumulate(&mut grads, *logits, gl)?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: ValueId, contribution: Tensor<T>) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            *existing = ops::add(existing, &contribution)?;
        }
        slot @ None => {
            *slot = Some(contribution);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;
    use std::rc::Rc;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    /// Central finite difference of a scalar-valued builder with respect to
    /// one parameter element.
    fn numerical_grad<F>(params: &mut ParamSet<f64>, id: ParamId, elem: usize, eps: f64, f: F) -> f64
    where
        F: Fn(&ParamSet<f64>) -> f64,
    {
        let orig = params.get(id).value.data()[elem];
        params.get_mut(id).value.data_mut()[elem] = orig + eps;
        let plus = f(params);
        params.get_mut(id).value.data_mut()[elem] = orig - eps;
        let minus = f(params);
        params.get_mut(id).value.data_mut()[elem] = orig;
        (plus - minus) / (2.0 * eps)
    }

    #[test]
    fn sum_of_product_grad_is_the_other_factor() {
        // loss = sum(x . w) with x fixed => dloss/dw = x
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::from_vec(&[3, 1], vec![0.2, -0.4, 0.6]).unwrap());
        let x = Tensor::from_vec(&[1, 3], vec![1.5, 2.5, -3.0]).unwrap();

        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.param(&params, w);
        let prod = g.matmul(xv, wv).unwrap();
        let loss = g.sum_all(prod);
        g.backward(loss, &mut params).unwrap();

        assert_eq!(params.get(w).grad.data(), &[1.5, 2.5, -3.0]);
    }

    #[test]
    fn cross_entropy_two_way_tie_has_closed_form_grad() {
        // logits (0, 0), label 0: softmax is (1/2, 1/2), grad (-1/2, 1/2).
        let mut params = ParamSet::<f64>::new();
        let logits = params.add("logits", Tensor::zeros(&[1, 2]));
        let mut g = Graph::new();
        let lv = g.param(&params, logits);
        let loss = g.cross_entropy_mean(lv, Rc::new(vec![0]), 255).unwrap();
        g.backward(loss, &mut params).unwrap();
        let grad = params.get(logits).grad.data();
        assert_eq!(grad, &[-0.5, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut params = ParamSet::<f64>::new();
        let w = params.add("w", Tensor::zeros(&[2, 2]));
        let mut g = Graph::new();
        let wv = g.param(&params, w);
        let err = g.backward(wv, &mut params).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }), "{err}");
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::from_vec(&[1, 1], vec![2.0]).unwrap());
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let wv = g.param(&params, w);
        let y = g.matmul(x, wv).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss, &mut params).unwrap();
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(w).grad.data(), &[6.0]);
        params.zero_grads();
        assert_eq!(params.get(w).grad.data(), &[0.0]);
    }

    #[test]
    fn param_nodes_are_memoized() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::from_vec(&[1, 1], vec![1.5]).unwrap());
        let mut g = Graph::new();
        let a = g.param(&params, w);
        let b = g.param(&params, w);
        assert_eq!(a, b);
        // w used twice in the loss: grads add through the shared node.
        let y = g.matmul(a, b).unwrap(); // w * w
        let loss = g.sum_all(y);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(w).grad.data(), &[3.0]); // d(w^2)/dw = 2w
    }

    /// One composite graph that exercises every op, checked against
    /// central finite differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let mut params = ParamSet::new();
        let w1 = params.add("w1", rng.uniform_tensor(&[4, 4], -0.8, 0.8));
        let b1 = params.add("b1", rng.uniform_tensor(&[4], -0.5, 0.5));
        let w2 = params.add("w2", rng.uniform_tensor(&[8, 3], -0.8, 0.8));
        let b2 = params.add("b2", rng.uniform_tensor(&[3], -0.5, 0.5));
        let bias_table = params.add("bias_table", rng.uniform_tensor(&[6, 4], -0.3, 0.3));

        let x = rng.uniform_tensor::<f64>(&[6, 4], -1.0, 1.0);
        let labels = Rc::new(vec![0u32, 2, 255, 1, 2, 0]);
        let gather_idx = Rc::new(vec![0usize, 5, 2, 3, 1, 4, 7, 6, 8, 11, 10, 9, 12, 15, 14, 13, 16, 19, 18, 17, 20, 23, 22, 21]);
        let scatter_idx = Rc::new((0..24).map(|k| (k * 7) % 24).collect::<Vec<_>>());

        let build = |params: &ParamSet<f64>| -> f64 {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let w1v = g.param(params, w1);
            let b1v = g.param(params, b1);
            let w2v = g.param(params, w2);
            let b2v = g.param(params, b2);
            let btv = g.param(params, bias_table);

            let lin = g.linear(xv, w1v, b1v).unwrap();
            let biased = g.add(lin, btv).unwrap();
            let scaled = g.scale(biased, 0.7);
            let soft = g.softmax_rows(scaled).unwrap();
            let act = g.gelu(scaled);
            let gathered = g.gather(act, gather_idx.clone(), &[6, 4]).unwrap();
            let scattered = g.scatter(soft, scatter_idx.clone(), &[6, 4]).unwrap();
            let both = g.concat(&[gathered, scattered], 1).unwrap();
            let tr = g.transpose(both).unwrap();
            let back = g.transpose(tr).unwrap();
            let logits = g.linear(back, w2v, b2v).unwrap();
            let ce = g.cross_entropy_mean(logits, labels.clone(), 255).unwrap();
            let extra = g.sum_all(soft);
            let extra_scaled = g.scale(extra, 0.01);
            let loss = g.add(ce, extra_scaled).unwrap();
            g.value(loss).item().unwrap()
        };

        // analytic
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let w1v = g.param(&params, w1);
        let b1v = g.param(&params, b1);
        let w2v = g.param(&params, w2);
        let b2v = g.param(&params, b2);
        let btv = g.param(&params, bias_table);
        let lin = g.linear(xv, w1v, b1v).unwrap();
        let biased = g.add(lin, btv).unwrap();
        let scaled = g.scale(biased, 0.7);
        let soft = g.softmax_rows(scaled).unwrap();
        let act = g.gelu(scaled);
        let gathered = g.gather(act, gather_idx.clone(), &[6, 4]).unwrap();
        let scattered = g.scatter(soft, scatter_idx.clone(), &[6, 4]).unwrap();
        let both = g.concat(&[gathered, scattered], 1).unwrap();
        let tr = g.transpose(both).unwrap();
        let back = g.transpose(tr).unwrap();
        let logits = g.linear(back, w2v, b2v).unwrap();
        let ce = g.cross_entropy_mean(logits, labels.clone(), 255).unwrap();
        let extra = g.sum_all(soft);
        let extra_scaled = g.scale(extra, 0.01);
        let loss = g.add(ce, extra_scaled).unwrap();
        g.backward(loss, &mut params).unwrap();

        let analytic: Vec<(ParamId, Tensor<f64>)> =
            params.iter().map(|(id, p)| (id, p.grad.clone())).collect();
        for (id, grad) in analytic {
            for elem in 0..grad.len() {
                let num = numerical_grad(&mut params, id, elem, 1e-5, build);
                let ana = grad.data()[elem];
                assert!(
                    rel_err(ana, num) < 1e-6 || (ana - num).abs() < 1e-9,
                    "param {:?} elem {elem}: analytic {ana} vs numerical {num}",
                    params.get(id).name
                );
            }
        }
    }
}
