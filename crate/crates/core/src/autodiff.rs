//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena. Every operation evaluates eagerly and
//! records a node holding its value, its parents and the information needed
//! for the local adjoint. Because parents always precede children in the
//! arena, a single reverse sweep from the root is a valid topological order,
//! and each node's backward rule runs at most once.
//!
//! Graphs are cheap to build and meant to be discarded after one evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Square,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the right operand of a binary op is expanded against the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// Right operand indexes the last axis of the left operand.
    LastAxis(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize, Broadcast),
    Affine { a: usize, mul: f64 },
    AddConst(usize),
    MatMul(usize, usize),
    Reduce {
        a: usize,
        kind: Reduction,
        axes: Vec<usize>,
        count: usize,
    },
    MaskedMean {
        a: usize,
        mask: Vec<f64>,
        denom: f64,
    },
    Reshape(usize),
    ShiftRows { a: usize, offset: isize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Accumulated adjoints from one [`Graph::backward`] sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`, if it was reachable from the root and requires grad.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, or zeros of `shape` when it was unreachable.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let value = match op {
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Exp => x.map(libm::exp),
            UnaryOp::Log => x.map(libm::log),
            UnaryOp::Square => x.map(|v| v * v),
            UnaryOp::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            UnaryOp::Tanh => x.map(libm::tanh),
        };
        let rg = self.rg(a.0);
        self.push(value, Op::Unary(op, a.0), rg)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let bc = broadcast_kind(op, av.shape(), bv.shape())?;
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let bd = bv.data();
        let data: Vec<f64> = match bc {
            Broadcast::Same => av.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.data().iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::LastAxis(c) => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % c]))
                .collect(),
        };
        let value = Tensor::from_vec(av.shape(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Binary(op, a.0, b.0, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    /// `k · a` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.nodes[a.0].value.scale(k);
        let rg = self.rg(a.0);
        self.push(value, Op::Affine { a: a.0, mul: k }, rg)
    }

    /// `a + k` for a constant tensor `k` of the same shape.
    pub fn add_const(&mut self, a: Var, k: &Tensor) -> Result<Var> {
        let value = self.nodes[a.0].value.add(k)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::AddConst(a.0), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (m, k, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", av.shape(), bv.shape())),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out);
        let value = Tensor::from_vec(&[m, n], out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    /// Sum or mean over `axes` (all axes when `None`). Reduced axes are dropped.
    pub fn reduce(&mut self, a: Var, kind: Reduction, axes: Option<&[usize]>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let rank = x.rank();
        let axes: Vec<usize> = match axes {
            Some(ax) => {
                let mut ax = ax.to_vec();
                ax.sort_unstable();
                ax.dedup();
                if let Some(&bad) = ax.iter().find(|&&d| d >= rank) {
                    return Err(Error::InvalidAxis { axis: bad, rank });
                }
                ax
            }
            None => (0..rank).collect(),
        };
        let out_shape: Vec<usize> = (0..rank)
            .filter(|d| !axes.contains(d))
            .map(|d| x.shape()[d])
            .collect();
        let count: usize = axes.iter().map(|&d| x.shape()[d]).product();
        let map = reduce_index_map(x.shape(), &axes);
        let out_len: usize = out_shape.iter().product();
        let mut acc = vec![0.0f64; out_len];
        for (i, &v) in x.data().iter().enumerate() {
            acc[map[i]] += v;
        }
        if kind == Reduction::Mean {
            let inv = 1.0 / count as f64;
            for v in &mut acc {
                *v *= inv;
            }
        }
        let value = Tensor::from_vec(&out_shape, acc)?;
        let rg = self.rg(a.0);
        Ok(self.push(
            value,
            Op::Reduce {
                a: a.0,
                kind,
                axes,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, Reduction::Sum, None)
            .expect("full reduction is always valid")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, Reduction::Mean, None)
            .expect("full reduction is always valid")
    }

    /// `Σ_u m_u·a_u / (Σ_u m_u + delta)`; `mask` is constant and shaped like `a`.
    pub fn masked_mean(&mut self, a: Var, mask: &Tensor, delta: f64) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if x.shape() != mask.shape() {
            return Err(Error::shape("masked_mean", x.shape(), mask.shape()));
        }
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::OutOfRange {
                what: "mask delta",
                value: delta,
            });
        }
        if let Some(&bad) = mask
            .data()
            .iter()
            .find(|m| !(**m >= 0.0 && **m <= 1.0))
        {
            return Err(Error::OutOfRange {
                what: "mask entry",
                value: bad,
            });
        }
        let mass: f64 = mask.data().iter().sum();
        let denom = mass + delta;
        let num: f64 = x
            .data()
            .iter()
            .zip(mask.data())
            .map(|(v, m)| v * m)
            .sum();
        let value = Tensor::scalar(num / denom);
        let rg = self.rg(a.0);
        Ok(self.push(
            value,
            Op::MaskedMean {
                a: a.0,
                mask: mask.data().to_vec(),
                denom,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.reshape(shape)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Reshape(a.0), rg))
    }

    /// Rows of a matrix moved down by `offset` (up when negative), zero filled.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (rows, cols) = match x.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("shift_rows", s, &[0, 0])),
        };
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let src = r as isize - offset;
            if src >= 0 && (src as usize) < rows {
                let s = src as usize;
                out[r * cols..(r + 1) * cols].copy_from_slice(&x.data()[s * cols..(s + 1) * cols]);
            }
        }
        let value = Tensor::from_vec(&[rows, cols], out)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::ShiftRows { a: a.0, offset }, rg))
    }

    /// Propagate adjoints from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if root_val.len() != 1 {
            return Err(Error::invalid(alloc::format!(
                "backward requires a scalar root, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(root_val.shape()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                if !self.rg(*a) {
                    return Ok(());
                }
                let x = self.nodes[*a].value.data();
                let y = node.value.data();
                let gd = g.data();
                let local: Vec<f64> = match op {
                    UnaryOp::Neg => gd.iter().map(|v| -v).collect(),
                    UnaryOp::Exp => gd.iter().zip(y).map(|(g, y)| g * y).collect(),
                    UnaryOp::Log => gd.iter().zip(x).map(|(g, x)| g / x).collect(),
                    UnaryOp::Square => gd.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect(),
                    UnaryOp::Relu => gd
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    UnaryOp::Tanh => gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                };
                accumulate(grads, *a, Tensor::from_vec(g.shape(), local)?)?;
            }
            Op::Binary(op, a, b, bc) => {
                let av = self.nodes[*a].value.data();
                let bv = &self.nodes[*b].value;
                let bd = bv.data();
                let bi = |k: usize| match bc {
                    Broadcast::Same => bd[k],
                    Broadcast::Scalar => bd[0],
                    Broadcast::LastAxis(c) => bd[k % c],
                };
                let gd = g.data();
                if self.rg(*a) {
                    let ga: Vec<f64> = match op {
                        BinaryOp::Add | BinaryOp::Sub => gd.to_vec(),
                        BinaryOp::Mul => gd.iter().enumerate().map(|(k, g)| g * bi(k)).collect(),
                        BinaryOp::Div => gd.iter().enumerate().map(|(k, g)| g / bi(k)).collect(),
                    };
                    accumulate(grads, *a, Tensor::from_vec(g.shape(), ga)?)?;
                }
                if self.rg(*b) {
                    let full: Vec<f64> = match op {
                        BinaryOp::Add => gd.to_vec(),
                        BinaryOp::Sub => gd.iter().map(|g| -g).collect(),
                        BinaryOp::Mul => gd.iter().zip(av).map(|(g, a)| g * a).collect(),
                        BinaryOp::Div => gd
                            .iter()
                            .enumerate()
                            .map(|(k, g)| {
                                let d = bi(k);
                                -g * av[k] / (d * d)
                            })
                            .collect(),
                    };
                    let gb = match bc {
                        Broadcast::Same => full,
                        Broadcast::Scalar => vec![full.iter().sum()],
                        Broadcast::LastAxis(c) => {
                            let mut acc = vec![0.0; *c];
                            for (k, v) in full.iter().enumerate() {
                                acc[k % c] += v;
                            }
                            acc
                        }
                    };
                    accumulate(grads, *b, Tensor::from_vec(bv.shape(), gb)?)?;
                }
            }
            Op::Affine { a, mul } => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.scale(*mul))?;
                }
            }
            Op::AddConst(a) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.rg(*a) {
                    // g [m,n] · bᵀ [n,k]
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga);
                    accumulate(grads, *a, Tensor::from_vec(&[m, k], ga)?)?;
                }
                if self.rg(*b) {
                    // aᵀ [k,m] · g [m,n]
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb);
                    accumulate(grads, *b, Tensor::from_vec(&[k, n], gb)?)?;
                }
            }
            Op::Reduce {
                a,
                kind,
                axes,
                count,
            } => {
                if self.rg(*a) {
                    let in_shape = self.nodes[*a].value.shape();
                    let map = reduce_index_map(in_shape, axes);
                    let scale = match kind {
                        Reduction::Sum => 1.0,
                        Reduction::Mean => 1.0 / *count as f64,
                    };
                    let gd = g.data();
                    let ga: Vec<f64> = map.iter().map(|&o| gd[o] * scale).collect();
                    accumulate(grads, *a, Tensor::from_vec(in_shape, ga)?)?;
                }
            }
            Op::MaskedMean { a, mask, denom } => {
                if self.rg(*a) {
                    let g0 = g.data()[0];
                    let ga: Vec<f64> = mask.iter().map(|m| g0 * m / denom).collect();
                    accumulate(grads, *a, Tensor::from_vec(self.nodes[*a].value.shape(), ga)?)?;
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.reshape(self.nodes[*a].value.shape())?)?;
                }
            }
            Op::ShiftRows { a, offset } => {
                if self.rg(*a) {
                    let (rows, cols) = (g.shape()[0], g.shape()[1]);
                    let mut ga = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let dst = r as isize - offset;
                        if dst >= 0 && (dst as usize) < rows {
                            let d = dst as usize;
                            ga[d * cols..(d + 1) * cols]
                                .copy_from_slice(&g.data()[r * cols..(r + 1) * cols]);
                        }
                    }
                    accumulate(grads, *a, Tensor::from_vec(&[rows, cols], ga)?)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

fn broadcast_kind(op: BinaryOp, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    let b_len: usize = b.iter().product();
    if b_len == 1 && b.len() <= 1 {
        return Ok(Broadcast::Scalar);
    }
    if b.len() == 1 && a.last() == Some(&b[0]) {
        return Ok(Broadcast::LastAxis(b[0]));
    }
    let name = match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    };
    Err(Error::shape(name, a, b))
}

/// For each flat input index, the flat index of the reduced output cell.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let rank = shape.len();
    // output strides over kept axes
    let mut out_stride = vec![0usize; rank];
    let mut s = 1usize;
    for d in (0..rank).rev() {
        if !axes.contains(&d) {
            out_stride[d] = s;
            s *= shape[d];
        }
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&out_stride).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// `out = op(a) · op(b)` for row-major `a` (`[m,k]`, or `[k,m]` when
/// transposed) and `b` (`[k,n]`, or `[n,k]` when transposed).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides address exactly
    // the row-major layouts described in the doc comment.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
