//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] is built fresh for every loss evaluation. Values are computed
//! eagerly as operations are recorded; [`Graph::backward`] then walks the tape
//! in reverse and pushes gradients of parameter leaves into the
//! [`ParamStore`] they were read from.

use super::params::{ParamId, ParamStore};
use super::tensor::{self, sign0, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Abs(Var),
    Square(Var),
    Concat(Vec<Var>),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked and readable through [`Graph::grad`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; `backward` accumulates into it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.zero_grad();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Parameter value as a constant: same numbers, no gradient path.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.zero_grad();
        self.constant(value)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.is_scalar() {
            Ok(Bcast::Scalar)
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            Ok(Bcast::Row)
        } else {
            Err(Error::dim(op, ta.shape(), tb.shape()))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        mk: fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let bc = self.bcast(name, a, b)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let m = ta.cols();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => tb[i],
                    Bcast::Row => tb[i % m],
                    Bcast::Scalar => tb[0],
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, mk(a, b, bc), rg))
    }

    /// Matrix product of `[n,k]` and `[k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.cols() != tb.shape()[0] {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let data = tensor::matmul(ta.data(), tb.data(), n, k, m);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may be a row vector or a scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("maximum", self.shape(a), self.shape(b)));
        }
        self.binary(a, b, "maximum", f64::max, |a, b, _| Op::Maximum(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("minimum", self.shape(a), self.shape(b)));
        }
        self.binary(a, b, "minimum", f64::min, |a, b, _| Op::Minimum(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = tensor::softmax_rows(ta.data(), ta.cols());
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row-wise log-softmax over the last dimension.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = tensor::log_softmax_rows(ta.data(), ta.cols());
        let value = Tensor::new(ta.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum over the last dimension: `[n,m] -> [n,1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows();
        let data = t.data().chunks(t.cols()).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(&[n, 1], data).expect("shape");
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Concatenation along the last dimension; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let n = self.value(first).rows();
        let mut width = 0;
        for &p in parts {
            if self.value(p).rows() != n {
                return Err(Error::dim("concat", self.shape(first), self.shape(p)));
            }
            width += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(n * width);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(&[n, width], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Runs reverse-mode accumulation from the scalar `loss` and adds the
    /// resulting gradients into every parameter leaf's tensor in `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_inner(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &self.grads[i]) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// Like [`Graph::backward`] but leaves parameters untouched; gradients are
    /// only readable through [`Graph::grad`].
    pub fn backward_local(&mut self, loss: Var) -> Result<()> {
        self.backward_inner(loss)
    }

    fn backward_inner(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss does not belong to this graph"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value;
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &|s| tensor::matmul_a_bt(g, tb.data(), n, k, m, s));
                acc(*b, &|s| tensor::matmul_at_b(ta.data(), g, n, k, m, s));
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &|s| reduce_bcast(*bc, g, s, out.cols(), |_| sign));
            }
            Op::Mul(a, b, bc) => {
                let (va, vb) = (val(*a), val(*b));
                let m = out.cols();
                acc(*a, &|s| {
                    for (j, x) in s.iter_mut().enumerate() {
                        let y = match bc {
                            Bcast::Same => vb[j],
                            Bcast::Row => vb[j % m],
                            Bcast::Scalar => vb[0],
                        };
                        *x += g[j] * y;
                    }
                });
                acc(*b, &|s| reduce_bcast(*bc, g, s, m, |j| va[j]));
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Tanh(a) => {
                let o = out.data();
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * (1.0 - o[j] * o[j]);
                    }
                })
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if x[j] > 0.0 {
                            s[j] += g[j];
                        }
                    }
                })
            }
            Op::Sigmoid(a) => {
                let o = out.data();
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * o[j] * (1.0 - o[j]);
                    }
                })
            }
            Op::Exp(a) => {
                let o = out.data();
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * o[j];
                    }
                })
            }
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / x[j];
                    }
                })
            }
            Op::Softmax(a) => {
                let o = out.data();
                let m = out.cols();
                acc(*a, &|s| {
                    for r in 0..out.rows() {
                        let row = r * m..(r + 1) * m;
                        let dot: f64 = o[row.clone()].iter().zip(&g[row.clone()]).map(|(p, q)| p * q).sum();
                        for j in row {
                            s[j] += o[j] * (g[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let o = out.data();
                let m = out.cols();
                acc(*a, &|s| {
                    for r in 0..out.rows() {
                        let row = r * m..(r + 1) * m;
                        let gs: f64 = g[row.clone()].iter().sum();
                        for j in row {
                            s[j] += g[j] - o[j].exp() * gs;
                        }
                    }
                })
            }
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.numel() as f64;
                acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::SumRows(a) => {
                let m = nodes[a.0].value.cols();
                acc(*a, &|s| {
                    for (j, x) in s.iter_mut().enumerate() {
                        *x += g[j / m];
                    }
                })
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * sign0(x[j]);
                    }
                })
            }
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += 2.0 * x[j] * g[j];
                    }
                })
            }
            Op::Concat(parts) => {
                let width = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pw = nodes[p.0].value.cols();
                    acc(*p, &|s| {
                        for r in 0..out.rows() {
                            for c in 0..pw {
                                s[r * pw + c] += g[r * width + offset + c];
                            }
                        }
                    });
                    offset += pw;
                }
            }
            Op::Maximum(a, b) | Op::Minimum(a, b) => {
                let is_max = matches!(op, Op::Maximum(..));
                let (va, vb) = (val(*a), val(*b));
                // ties route the gradient to `a`
                let pick_a = |j: usize| if is_max { va[j] >= vb[j] } else { va[j] <= vb[j] };
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if pick_a(j) {
                            s[j] += g[j];
                        }
                    }
                });
                acc(*b, &|s| {
                    for j in 0..s.len() {
                        if !pick_a(j) {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if x[j] >= *lo && x[j] <= *hi {
                            s[j] += g[j];
                        }
                    }
                })
            }
        }
    }
}

fn reduce_bcast(bc: Bcast, g: &[f64], s: &mut [f64], m: usize, coef: impl Fn(usize) -> f64) {
    match bc {
        Bcast::Same => {
            for j in 0..s.len() {
                s[j] += g[j] * coef(j);
            }
        }
        Bcast::Row => {
            for (j, gv) in g.iter().enumerate() {
                s[j % m] += gv * coef(j);
            }
        }
        Bcast::Scalar => {
            s[0] += g.iter().enumerate().map(|(j, gv)| gv * coef(j)).sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p/w", t);
        (s, id)
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = vec![0.5, -1.0, 2.0];
        let (mut store, id) = store_with(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let xv = g.constant(Tensor::vector(x.clone()));
        let p = g.mul(w, xv).unwrap();
        let loss = g.sum(p);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &x[..]);
    }

    #[test]
    fn quadratic_loss_gradient_is_twice_w() {
        let w0 = vec![1.5, -2.0, 0.25];
        let (mut store, id) = store_with(Tensor::vector(w0.clone()));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let sq = g.square(w);
        let loss = g.sum(sq);
        g.backward(loss, &mut store).unwrap();
        let expect: Vec<f64> = w0.iter().map(|v| 2.0 * v).collect();
        assert_eq!(store.get(id).grad().unwrap(), &expect[..]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let (mut store, id) = store_with(Tensor::vector(vec![1.0, 2.0]));
        for _ in 0..2 {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let loss = g.sum(w);
            g.backward(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad().unwrap(), &[2.0, 2.0]);
        store.zero_grad(&[id]);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut store, id) = store_with(Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        assert!(matches!(g.backward(w, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn abs_subgradient_is_zero_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0, -3.0, 2.0]));
        let a = g.abs(x);
        let l = g.sum(a);
        g.backward_local(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0]));
        let x = g.input(Tensor::vector(vec![2.0]));
        let p = g.mul(c, x).unwrap();
        let l = g.sum(p);
        g.backward_local(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
