use super::conv::ConvGeom;
use super::Real;
use crate::error::{ensure, Error, Result};

/// Handle to a node of a [`Graph`].
///
/// A handle is only meaningful for the graph that produced it and only until
/// that graph is [`reset`](Graph::reset).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Scale(Tensor, T),
    Shift(Tensor),
    MatMul {
        a: Tensor,
        b: Tensor,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: Tensor,
        w: Tensor,
        bias: Option<Tensor>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Relu(Tensor),
    Sigmoid(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Clamp {
        x: Tensor,
        lo: T,
        hi: T,
    },
    Sum(Tensor),
    MaxReduce {
        x: Tensor,
        argmax: Vec<usize>,
    },
    Reshape(Tensor),
    AvgPool2d {
        x: Tensor,
        kh: usize,
        kw: usize,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Conv2d { x, w, bias, .. } => {
                let mut p = vec![*x, *w];
                p.extend(bias);
                p
            }
            Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::Reshape(x) => vec![*x],
            Op::Clamp { x, .. } | Op::MaxReduce { x, .. } | Op::AvgPool2d { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only tape of tensor nodes for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every node's parents precede it and
/// the reverse pass is a single backwards sweep.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Elementwise operand access with scalar broadcasting.
#[inline]
fn at<T: Copy>(v: &[T], i: usize) -> T {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Reduces an output-shaped gradient onto an operand that may be a broadcast scalar.
fn unbroadcast<T: Real>(g: Vec<T>, operand_len: usize) -> Vec<T> {
    if operand_len == 1 && g.len() != 1 {
        vec![g.iter().fold(T::zero(), |acc, &v| acc + v)]
    } else {
        g
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node, keeping the allocation for the next forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<Tensor> {
        ensure!(
            numel(shape) == values.len(),
            Shape,
            "shape {shape:?} holds {} values, got {}",
            numel(shape),
            values.len()
        );
        Ok(self.push(shape.to_vec(), values, requires_grad, Op::Leaf))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, shape: &[usize], values: Vec<T>) -> Result<Tensor> {
        self.leaf(shape, values, true)
    }

    /// Leaf that is treated as a constant.
    pub fn input(&mut self, shape: &[usize], values: Vec<T>) -> Result<Tensor> {
        self.leaf(shape, values, false)
    }

    pub fn scalar(&mut self, v: T) -> Tensor {
        self.push(vec![], vec![v], false, Op::Leaf)
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. `t`, if it reached `t`.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn any_grad(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    fn unary(&mut self, x: Tensor, f: impl Fn(T) -> T, op: Op<T>) -> Tensor {
        let n = &self.nodes[x.0];
        let value = n.value.iter().map(|&v| f(v)).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(shape, value, rg, op)
    }

    fn binary(&mut self, a: Tensor, b: Tensor, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Tensor> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let shape = if na.shape == nb.shape {
            na.shape.clone()
        } else if nb.value.len() == 1 {
            na.shape.clone()
        } else if na.value.len() == 1 {
            nb.shape.clone()
        } else {
            return Err(Error::Shape(format!(
                "elementwise operands {:?} and {:?} are not broadcastable",
                na.shape, nb.shape
            )));
        };
        let len = numel(&shape);
        let value = (0..len)
            .map(|i| f(at(&na.value, i), at(&nb.value, i)))
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, value, rg, op))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `x · c` for a constant `c`.
    pub fn scale(&mut self, x: Tensor, c: T) -> Tensor {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: Tensor, c: T) -> Tensor {
        self.unary(x, |v| v + c, Op::Shift(x))
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        ensure!(
            sa.len() == 2 && sb.len() == 2,
            Shape,
            "matmul needs 2-D operands, got {sa:?} and {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        ensure!(sb[0] == k, Shape, "matmul inner dimensions differ: {sa:?} · {sb:?}");
        let mut value = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            false,
            &mut value,
            false,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(vec![m, n], value, rg, Op::MatMul { a, b, m, k, n }))
    }

    /// Cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k` kernel,
    /// plus an optional per-channel bias of length `C_out`.
    pub fn conv2d(
        &mut self,
        x: Tensor,
        w: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let geom = ConvGeom::new(&self.nodes[x.0].shape, &self.nodes[w.0].shape, stride, pad)?;
        if let Some(b) = bias {
            let sb = &self.nodes[b.0].shape;
            ensure!(
                numel(sb) == geom.c_out,
                Shape,
                "conv2d bias {sb:?} does not match {} output channels",
                geom.c_out
            );
        }
        let cols = geom.im2col(&self.nodes[x.0].value);
        let pixels = geom.out_pixels();
        let mut value = vec![T::zero(); geom.c_out * pixels];
        if let Some(b) = bias {
            for (row, &bv) in value.chunks_mut(pixels).zip(&self.nodes[b.0].value) {
                row.fill(bv);
            }
        }
        T::gemm(
            geom.c_out,
            geom.patch_len(),
            pixels,
            &self.nodes[w.0].value,
            false,
            &cols,
            false,
            &mut value,
            bias.is_some(),
        );
        let mut parents = vec![x, w];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        // the unfolded input is only needed to form the kernel gradient
        let cols = if self.nodes[w.0].requires_grad {
            cols
        } else {
            Vec::new()
        };
        Ok(self.push(
            vec![geom.c_out, geom.h_out, geom.w_out],
            value,
            rg,
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Tensor) -> Tensor {
        self.unary(
            x,
            |v| {
                // branch keeps exp() from overflowing for large |v|
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn exp(&mut self, x: Tensor) -> Tensor {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Tensor) -> Result<Tensor> {
        if let Some(bad) = self.nodes[x.0].value.iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::Domain(format!("log of non-positive value {bad:?}")));
        }
        Ok(self.unary(x, |v| v.ln(), Op::Log(x)))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Tensor, lo: T, hi: T) -> Tensor {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let n = &self.nodes[x.0];
        let total = n.value.iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = n.requires_grad;
        self.push(vec![], vec![total], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Tensor) -> Tensor {
        let count = self.nodes[x.0].value.len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::cast(count as f64))
    }

    /// Maximum along `axis`; the gradient goes to the first maximal element.
    pub fn max_reduce(&mut self, x: Tensor, axis: usize) -> Result<Tensor> {
        let n = &self.nodes[x.0];
        ensure!(
            axis < n.shape.len(),
            InvalidArgument,
            "axis {axis} out of range for shape {:?}",
            n.shape
        );
        let len = n.shape[axis];
        ensure!(len > 0, InvalidArgument, "max_reduce over an empty axis");
        let outer: usize = n.shape[..axis].iter().product();
        let inner: usize = n.shape[axis + 1..].iter().product();
        let mut value = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for a in 1..len {
                    let idx = base + a * inner;
                    if n.value[idx] > n.value[best] {
                        best = idx;
                    }
                }
                value.push(n.value[best]);
                argmax.push(best);
            }
        }
        let mut shape = n.shape.clone();
        shape.remove(axis);
        let rg = n.requires_grad;
        Ok(self.push(shape, value, rg, Op::MaxReduce { x, argmax }))
    }

    pub fn reshape(&mut self, x: Tensor, shape: &[usize]) -> Result<Tensor> {
        let n = &self.nodes[x.0];
        ensure!(
            numel(shape) == n.value.len(),
            Shape,
            "cannot reshape {:?} into {shape:?}",
            n.shape
        );
        let value = n.value.clone();
        let rg = n.requires_grad;
        Ok(self.push(shape.to_vec(), value, rg, Op::Reshape(x)))
    }

    /// Non-overlapping `kh×kw` average pooling of a `C×H×W` tensor.
    pub fn avgpool2d(&mut self, x: Tensor, kh: usize, kw: usize) -> Result<Tensor> {
        let n = &self.nodes[x.0];
        ensure!(n.shape.len() == 3, Shape, "avgpool2d needs C×H×W, got {:?}", n.shape);
        let (c, h, w) = (n.shape[0], n.shape[1], n.shape[2]);
        ensure!(
            kh >= 1 && kw >= 1 && h % kh == 0 && w % kw == 0,
            Shape,
            "pool window {kh}×{kw} does not tile {h}×{w}"
        );
        let (ho, wo) = (h / kh, w / kw);
        let norm = T::one() / T::cast((kh * kw) as f64);
        let mut value = vec![T::zero(); c * ho * wo];
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let o = (ci * ho + i / kh) * wo + j / kw;
                    value[o] = value[o] + n.value[(ci * h + i) * w + j] * norm;
                }
            }
        }
        let rg = n.requires_grad;
        Ok(self.push(vec![c, ho, wo], value, rg, Op::AvgPool2d { x, kh, kw }))
    }

    /// Populates gradients of the scalar `loss` w.r.t. every node it depends on.
    ///
    /// Gradients left by a previous call are discarded first, so repeated
    /// calls on the same graph give identical results.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        ensure!(
            self.nodes[loss.0].value.len() == 1,
            Shape,
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].shape
        );
        self.zero_grad();
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, pg) in contributions {
                let slot = &mut self.nodes[parent.0].grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &v)| *a = *a + v),
                    None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each parent that wants a gradient.
    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Tensor, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |t: Tensor| self.nodes[t.0].value.as_slice();
        let wants = |t: Tensor| self.nodes[t.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        let mut emit = |t: Tensor, grad: Vec<T>| {
            if wants(t) {
                out.push((t, grad));
            }
        };
        let map = |f: &dyn Fn(usize) -> T| (0..g.len()).map(f).collect::<Vec<T>>();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    emit(*a, unbroadcast(g.to_vec(), val(*a).len()));
                }
                if wants(*b) {
                    emit(*b, unbroadcast(g.to_vec(), val(*b).len()));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    emit(*a, unbroadcast(g.to_vec(), val(*a).len()));
                }
                if wants(*b) {
                    emit(*b, unbroadcast(map(&|k| -g[k]), val(*b).len()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    emit(*a, unbroadcast(map(&|k| g[k] * at(vb, k)), va.len()));
                }
                if wants(*b) {
                    emit(*b, unbroadcast(map(&|k| g[k] * at(va, k)), vb.len()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    emit(*a, unbroadcast(map(&|k| g[k] / at(vb, k)), va.len()));
                }
                if wants(*b) {
                    let d = map(&|k| {
                        let q = at(vb, k);
                        -g[k] * at(va, k) / (q * q)
                    });
                    emit(*b, unbroadcast(d, vb.len()));
                }
            }
            Op::Scale(x, c) => emit(*x, map(&|k| g[k] * *c)),
            Op::Shift(x) | Op::Reshape(x) => emit(*x, g.to_vec()),
            Op::MatMul { a, b, m, k, n } => {
                if wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(*m, *n, *k, g, false, val(*b), true, &mut da, false);
                    emit(*a, da);
                }
                if wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(*k, *m, *n, val(*a), true, g, false, &mut db, false);
                    emit(*b, db);
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            } => {
                let pixels = geom.out_pixels();
                if wants(*x) {
                    let mut dcols = vec![T::zero(); geom.patch_len() * pixels];
                    T::gemm(
                        geom.patch_len(),
                        geom.c_out,
                        pixels,
                        val(*w),
                        true,
                        g,
                        false,
                        &mut dcols,
                        false,
                    );
                    emit(*x, geom.col2im(&dcols));
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); geom.c_out * geom.patch_len()];
                    T::gemm(
                        geom.c_out,
                        pixels,
                        geom.patch_len(),
                        g,
                        false,
                        cols,
                        true,
                        &mut dw,
                        false,
                    );
                    emit(*w, dw);
                }
                if let Some(b) = bias {
                    let db = g
                        .chunks(pixels)
                        .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
                        .collect();
                    emit(*b, db);
                }
            }
            Op::Relu(x) => {
                let vx = val(*x);
                emit(*x, map(&|k| if vx[k] > T::zero() { g[k] } else { T::zero() }));
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                emit(*x, map(&|k| g[k] * y[k] * (T::one() - y[k])));
            }
            Op::Exp(x) => {
                let y = &node.value;
                emit(*x, map(&|k| g[k] * y[k]));
            }
            Op::Log(x) => {
                let vx = val(*x);
                emit(*x, map(&|k| g[k] / vx[k]));
            }
            Op::Clamp { x, lo, hi } => {
                let vx = val(*x);
                emit(
                    *x,
                    map(&|k| {
                        if vx[k] < *lo || vx[k] > *hi {
                            T::zero()
                        } else {
                            g[k]
                        }
                    }),
                );
            }
            Op::Sum(x) => emit(*x, vec![g[0]; val(*x).len()]),
            Op::MaxReduce { x, argmax } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                emit(*x, dx);
            }
            Op::AvgPool2d { x, kh, kw } => {
                let shape = &self.nodes[x.0].shape;
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (ho, wo) = (h / kh, w / kw);
                let norm = T::one() / T::cast((kh * kw) as f64);
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            dx[(ci * h + i) * w + j] = g[(ci * ho + i / kh) * wo + j / kw] * norm;
                        }
                    }
                }
                emit(*x, dx);
            }
        }
        out
    }

    /// Parents of `t`, in operand order.
    pub fn parents(&self, t: Tensor) -> Vec<Tensor> {
        self.nodes[t.0].op.parents()
    }
}
