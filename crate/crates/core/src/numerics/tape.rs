//! Reverse-mode tape.
//!
//! Every operation appends a node holding its value; node ids are therefore a
//! topological order and backward is a single reverse sweep. A tape is built for
//! one forward pass and consumed by one call to [`Tape::backward`].

use std::collections::BTreeMap;

use super::params::{Gradients, ParameterStore};
use super::tensor::{
    broadcast_binary, gemm_acc, reduce_to_shape, strides, transpose2, Real, Tensor,
};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Softplus(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Softmax(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    Reshape(Var),
    ExpandLeading { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-use recording of a forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters of one store registered on a tape, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Largest absolute value recorded anywhere on the tape.
    pub fn max_abs_activation(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.value.max_abs())
            .fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
    }

    /// A value that takes no part in differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A named leaf. Only leaves registered with `requires_grad` appear in the
    /// gradients returned by [`Tape::backward`].
    pub fn parameter(&mut self, name: &str, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        if requires_grad {
            self.params.push((name.to_string(), v));
        }
        v
    }

    /// Register every tensor of `store` as a leaf.
    pub fn bind(&mut self, store: &ParameterStore<T>, requires_grad: bool) -> Bound {
        self.bind_as(store, "", requires_grad)
    }

    /// Like [`Tape::bind`], but gradients are reported under `prefix` + name
    /// while the returned [`Bound`] keeps the store's names.
    pub fn bind_as(&mut self, store: &ParameterStore<T>, prefix: &str, requires_grad: bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in store.iter() {
            let v = self.parameter(&format!("{prefix}{name}"), t.clone(), requires_grad);
            vars.insert(name.to_string(), v);
        }
        Bound { vars }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, x: Var, name: &str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op, &[x], name)
    }

    // ---- element-wise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x / y)?;
        self.push(v, Op::Div(a, b), &[a, b], "div")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "neg", |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        self.unary(x, "scale", move |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        self.unary(x, "add_scalar", move |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "exp", |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "log", |v| v.ln(), Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sqrt", |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(T::zero()), Op::Relu(x))
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "softplus", softplus, Op::Softplus(x))
    }

    /// Value copy with no gradient path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    // ---- linear algebra -----------------------------------------------------

    /// `[..., n, k] x [k, m] -> [..., n, m]`; the right operand is shared across
    /// leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.ndim() != 2 || av.ndim() < 1 {
            return shape_err(format!("matmul {:?} x {:?}", av.shape(), bv.shape()));
        }
        let k = *av.shape().last().unwrap();
        let (bk, m) = (bv.shape()[0], bv.shape()[1]);
        if k != bk {
            return shape_err(format!("matmul {:?} x {:?}", av.shape(), bv.shape()));
        }
        let rows = av.len() / k.max(1);
        let mut out = vec![T::zero(); rows * m];
        gemm_acc(av.data(), bv.data(), &mut out, rows, k, m);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `[B, n, k] x [B, k, m] -> [B, n, m]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 3 || bv.ndim() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1] {
            return shape_err(format!("bmm {:?} x {:?}", av.shape(), bv.shape()));
        }
        let (bs, n, k, m) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut out = vec![T::zero(); bs * n * m];
        for i in 0..bs {
            gemm_acc(
                &av.data()[i * n * k..(i + 1) * n * k],
                &bv.data()[i * k * m..(i + 1) * k * m],
                &mut out[i * n * m..(i + 1) * n * m],
                n,
                k,
                m,
            );
        }
        let value = Tensor::new(&[bs, n, m], out)?;
        self.push(value, Op::BatchMatMul(a, b), &[a, b], "bmm")
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let value = transpose_last2(self.value(x))?;
        self.push(value, Op::TransposeLast2(x), &[x], "transpose")
    }

    // ---- normalisation ------------------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::Shape("softmax on scalar".into()))?;
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        self.push(value, Op::Softmax(x), &[x], "softmax")
    }

    /// Zero-mean, unit-variance normalisation over the last axis (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::Shape("layer_norm on scalar".into()))?;
        let nt = T::lit(n as f64);
        let eps = T::lit(eps);
        let mut out = xv.data().to_vec();
        let mut rstd = Vec::with_capacity(out.len() / n.max(1));
        for row in out.chunks_mut(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let value = Tensor::new(xv.shape(), out)?;
        self.push(value, Op::LayerNorm { x, rstd }, &[x], "layer_norm")
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Empty("mean of empty tensor".into()));
        }
        let s = xv.data().iter().copied().sum::<T>() / T::lit(xv.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x], "mean")
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = sum_axis(self.value(x), axis)?;
        self.push(value, Op::SumAxis { x, axis }, &[x], "sum_axis")
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return shape_err(format!("mean_axis {axis} of {shape:?}"));
        }
        let s = self.sum_axis(x, axis)?;
        let scaled = self.scale(s, 1.0 / shape[axis] as f64)?;
        let mut out = shape;
        out.remove(axis);
        self.reshape(scaled, &out)
    }

    // ---- structure ----------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} of {first:?}"));
        }
        let outer: usize = first[..axis].iter().product();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return shape_err(format!("concat {first:?} with {s:?}"));
            }
            total += s[axis];
        }
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = narrow(self.value(x), axis, start, len)?;
        self.push(value, Op::Narrow { x, axis, start }, &[x], "narrow")
    }

    /// Rows `indices` along axis 0.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(x).select_rows(indices)?;
        self.push(
            value,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            &[x],
            "index_select",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x], "reshape")
    }

    /// Repeat `x` along a new leading axis of size `n`.
    pub fn expand_leading(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * n);
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::ExpandLeading { x }, &[x], "expand")
    }

    // ---- backward -----------------------------------------------------------

    /// Gradients of the scalar `loss` for every parameter registered with
    /// `requires_grad`. Parameters the loss does not reach get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (input, gi) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let g = if v.0 <= loss.0 {
                grads[v.0].take()
            } else {
                None
            };
            let g = g.unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, reduce_to_shape(g, val(*a).shape())?),
                (*b, reduce_to_shape(g, val(*b).shape())?),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to_shape(g, val(*a).shape())?),
                (*b, reduce_to_shape(&g.map(|x| -x), val(*b).shape())?),
            ],
            Op::Mul(a, b) => {
                let ga = broadcast_binary(g, val(*b), |x, y| x * y)?;
                let gb = broadcast_binary(g, val(*a), |x, y| x * y)?;
                vec![
                    (*a, reduce_to_shape(&ga, val(*a).shape())?),
                    (*b, reduce_to_shape(&gb, val(*b).shape())?),
                ]
            }
            Op::Div(a, b) => {
                let t = broadcast_binary(g, val(*b), |x, y| x / y)?;
                let gb = t.zip_map(out, |x, y| -x * y)?;
                vec![
                    (*a, reduce_to_shape(&t, val(*a).shape())?),
                    (*b, reduce_to_shape(&gb, val(*b).shape())?),
                ]
            }
            Op::Neg(x) => vec![(*x, g.map(|v| -v))],
            Op::Scale(x, c) => {
                let c = *c;
                vec![(*x, g.map(|v| v * c))]
            }
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::Exp(x) => vec![(*x, g.zip_map(out, |a, y| a * y)?)],
            Op::Log(x) => vec![(*x, g.zip_map(val(*x), |a, v| a / v)?)],
            Op::Sqrt(x) => vec![(*x, g.zip_map(out, |a, y| a / (y + y))?)],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(out, |a, y| a * y * (T::one() - y))?)],
            Op::Gelu(x) => vec![(*x, g.zip_map(val(*x), |a, v| a * gelu_grad(v))?)],
            Op::Relu(x) => vec![(
                *x,
                g.zip_map(val(*x), |a, v| if v > T::zero() { a } else { T::zero() })?,
            )],
            Op::Softplus(x) => vec![(*x, g.zip_map(val(*x), |a, v| a * sigmoid(v))?)],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (k, m) = (bv.shape()[0], bv.shape()[1]);
                let rows = av.len() / k.max(1);
                let mut ga = vec![T::zero(); av.len()];
                let bt = transpose2(bv.data(), k, m);
                gemm_acc(g.data(), &bt, &mut ga, rows, m, k);
                let at = transpose2(av.data(), rows, k);
                let mut gb = vec![T::zero(); bv.len()];
                gemm_acc(&at, g.data(), &mut gb, k, rows, m);
                vec![
                    (*a, Tensor::new(av.shape(), ga)?),
                    (*b, Tensor::new(bv.shape(), gb)?),
                ]
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (bs, n, k, m) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for s in 0..bs {
                    let gs = &g.data()[s * n * m..(s + 1) * n * m];
                    let bt = transpose2(&bv.data()[s * k * m..(s + 1) * k * m], k, m);
                    gemm_acc(gs, &bt, &mut ga[s * n * k..(s + 1) * n * k], n, m, k);
                    let at = transpose2(&av.data()[s * n * k..(s + 1) * n * k], n, k);
                    gemm_acc(&at, gs, &mut gb[s * k * m..(s + 1) * k * m], k, n, m);
                }
                vec![
                    (*a, Tensor::new(av.shape(), ga)?),
                    (*b, Tensor::new(bv.shape(), gb)?),
                ]
            }
            Op::TransposeLast2(x) => vec![(*x, transpose_last2(g)?)],
            Op::Softmax(x) => {
                let n = *out.shape().last().unwrap();
                let mut gx = vec![T::zero(); out.len()];
                for ((gr, yr), dst) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(gx.chunks_mut(n))
                {
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                    for ((d, &a), &y) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = y * (a - dot);
                    }
                }
                vec![(*x, Tensor::new(out.shape(), gx)?)]
            }
            Op::LayerNorm { x, rstd } => {
                let n = *out.shape().last().unwrap();
                let nt = T::lit(n as f64);
                let mut gx = vec![T::zero(); out.len()];
                for (((gr, yr), dst), &r) in g
                    .data()
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(gx.chunks_mut(n))
                    .zip(rstd)
                {
                    let mg = gr.iter().copied().sum::<T>() / nt;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nt;
                    for ((d, &a), &y) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = r * (a - mg - y * mgy);
                    }
                }
                vec![(*x, Tensor::new(out.shape(), gx)?)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let n = T::lit(val(*x).len() as f64);
                vec![(*x, Tensor::full(val(*x).shape(), g.data()[0] / n))]
            }
            Op::SumAxis { x, axis } => {
                let xs = val(*x).shape();
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let mut gx = Vec::with_capacity(val(*x).len());
                for o in 0..outer {
                    let row = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..xs[*axis] {
                        gx.extend_from_slice(row);
                    }
                }
                vec![(*x, Tensor::new(xs, gx)?)]
            }
            Op::Concat { inputs, axis } => {
                let os = out.shape();
                let outer: usize = os[..*axis].iter().product();
                let inner: usize = os[axis + 1..].iter().product();
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let s = val(v).shape();
                    let block = s[*axis] * inner;
                    let mut d = Vec::with_capacity(val(v).len());
                    for o in 0..outer {
                        let base = o * os[*axis] * inner + offset;
                        d.extend_from_slice(&g.data()[base..base + block]);
                    }
                    offset += block;
                    res.push((v, Tensor::new(s, d)?));
                }
                res
            }
            Op::Narrow { x, axis, start } => {
                let xs = val(*x).shape();
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let len = out.shape()[*axis];
                let mut gx = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    let base = o * xs[*axis] * inner + start * inner;
                    gx[base..base + len * inner].copy_from_slice(src);
                }
                vec![(*x, Tensor::new(xs, gx)?)]
            }
            Op::IndexSelect { x, indices } => {
                let xs = val(*x).shape();
                let stride: usize = xs[1..].iter().product();
                let mut gx = vec![T::zero(); val(*x).len()];
                for (k, &row) in indices.iter().enumerate() {
                    for j in 0..stride {
                        gx[row * stride + j] = gx[row * stride + j] + g.data()[k * stride + j];
                    }
                }
                vec![(*x, Tensor::new(xs, gx)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::ExpandLeading { x } => vec![(*x, reduce_to_shape(g, val(*x).shape())?)],
        })
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn gelu<T: Real>(v: T) -> T {
    let x = v.as_f64();
    T::lit(0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
}

fn gelu_grad<T: Real>(v: T) -> T {
    let x = v.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::lit(cdf + x * pdf)
}

fn transpose_last2<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() < 2 {
        return shape_err(format!("transpose of {s:?}"));
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let mut data = Vec::with_capacity(t.len());
    for block in t.data().chunks(r * c) {
        data.extend(transpose2(block, r, c));
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape.swap(n - 2, n - 1);
    Tensor::new(&shape, data)
}

fn sum_axis<T: Real>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if axis >= s.len() {
        return shape_err(format!("sum_axis {axis} of {s:?}"));
    }
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..s[axis] {
            let src = &t.data()[(o * s[axis] + a) * inner..(o * s[axis] + a + 1) * inner];
            for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + v;
            }
        }
    }
    let mut shape = s.to_vec();
    shape[axis] = 1;
    Tensor::new(&shape, out)
}

fn narrow<T: Real>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if axis >= s.len() || start + len > s[axis] {
        return shape_err(format!("narrow axis {axis} [{start}, {}) of {s:?}", start + len));
    }
    let st = strides(s);
    let outer: usize = s[..axis].iter().product();
    let inner = st[axis];
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * s[axis] * inner + start * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = s.to_vec();
    shape[axis] = len;
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.parameter("w", Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap(), true);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[2., 4., 6.]);
    }

    #[test]
    fn constant_loss_has_no_gradients() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::from_f64(&[2], &[1., 2.]).unwrap());
        let loss = tape.sum(c).unwrap();
        assert!(tape.backward(loss).unwrap().is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut tape = Tape::<f32>::new();
        let w = tape.parameter("w", Tensor::ones(&[2]), true);
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.parameter("w", Tensor::from_f64(&[2], &[1., 2.]).unwrap(), true);
        let d = tape.detach(w);
        let p = tape.mul(w, d).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        // d/dw (w * const) = const
        assert_eq!(g.get("w").unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., -5., 0., 5.]).unwrap());
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let single = tape.constant(Tensor::from_f64(&[1, 1], &[42.0]).unwrap());
        let s = tape.softmax(single).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
    }

    #[test]
    fn concat_and_narrow_invert() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64(&[2, 1, 2], &[1., 2., 3., 4.]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2, 2, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        let back_a = tape.narrow(c, 1, 0, 1).unwrap();
        let back_b = tape.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(back_a), tape.value(a));
        assert_eq!(tape.value(back_b), tape.value(b));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[-1.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::NonFinite(_))));
    }
}
