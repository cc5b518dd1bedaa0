//! Tape-based reverse-mode automatic differentiation over dense arrays.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`]
//! recording which earlier nodes it was computed from. Because a node can
//! only reference nodes that already exist, the recorded graph is acyclic
//! and a single reverse sweep over the node list visits every node after
//! all of its consumers.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamSet};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Softplus(usize),
    Sigmoid(usize),
    Relu(usize),
    Square(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    Sum(usize),
    Mean(usize),
    GatherRows {
        x: usize,
        index: Rc<[usize]>,
    },
    ScatterAddRows {
        x: usize,
        index: Rc<[usize]>,
    },
    ConcatCols(Vec<usize>),
    SelectCols {
        x: usize,
        cols: Rc<[usize]>,
    },
    Bmm {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records a computation for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<usize, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Binds a parameter as a trainable leaf. Binding the same parameter
    /// twice returns the same node, so its gradient is accumulated once.
    pub fn param(&self, params: &ParamSet, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.bound.borrow().get(&id.index()) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let var = self.leaf(params.get(id).clone(), params.trainable());
        self.bound.borrow_mut().insert(id.index(), var.id);
        var
    }

    /// Gradient of every parameter of `params` bound on this tape, zeros
    /// for parameters that were never bound or received no gradient.
    pub fn param_grads(&self, params: &ParamSet) -> Vec<Tensor> {
        let bound = self.bound.borrow();
        let nodes = self.nodes.borrow();
        params
            .ids()
            .map(|id| {
                bound
                    .get(&id.index())
                    .and_then(|&n| nodes[n].grad.clone())
                    .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
            })
            .collect()
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[ids[0]].value;
            let rows = first.rows();
            for &i in &ids {
                let v = &nodes[i].value;
                if !v.is_matrix() || v.rows() != rows {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        lhs: first.shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
            }
            let total: usize = ids.iter().map(|&i| nodes[i].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &i in &ids {
                    data.extend_from_slice(nodes[i].value.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let rg = self.needs(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient populated by [`Var::backward`] on some descendant.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = f(&self.value())?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    fn binary_same(&self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(shape_err(name, &a, &b));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    /// `self · w + b` for `self: [n×k]`, `w: [k×m]`, `b: [m]`.
    pub fn affine(&self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let wv = w.value();
            if !x.is_matrix() || !wv.is_matrix() || x.cols() != wv.rows() {
                return Err(shape_err("affine", &x, &wv));
            }
            let (n, k, m) = (x.rows(), x.cols(), wv.cols());
            let mut out = vec![0.0; n * m];
            if let Some(b) = b {
                let bv = b.value();
                if bv.len() != m {
                    return Err(shape_err("affine(bias)", &wv, &bv));
                }
                for row in out.chunks_mut(m) {
                    row.copy_from_slice(bv.data());
                }
            }
            gemm_acc(x.data(), wv.data(), &mut out, n, k, m);
            Tensor::new(vec![n, m], out)?
        };
        let mut ids = vec![self.id, w.id];
        if let Some(b) = b {
            ids.push(b.id);
        }
        let rg = self.tape.needs(&ids);
        Ok(self.tape.push(
            value,
            Op::Affine {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            rg,
        ))
    }

    pub fn matmul(&self, w: Var<'t>) -> Result<Var<'t>> {
        self.affine(w, None)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.add(other.scale(-1.0)?)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |x| Ok(x.map(|v| v * c)))
    }

    /// Adds the constant `c` to every element.
    pub fn shift(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Shift(self.id), |x| Ok(x.map(|v| v + c)))
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Op::Softplus(self.id), |x| Ok(x.map(softplus)))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |x| Ok(x.map(sigmoid)))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |x| Ok(x.map(|v| v.max(0.0))))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Op::Square(self.id), |x| Ok(x.map(|v| v * v)))
    }

    /// Sums a matrix over `axis` (0 = rows, 1 = columns).
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.unary(Op::SumAxis { x: self.id, axis }, |x| {
            if !x.is_matrix() || axis > 1 {
                return Err(Error::Shape {
                    op: "sum_axis",
                    lhs: x.shape().to_vec(),
                    rhs: vec![axis],
                });
            }
            let (r, c) = (x.rows(), x.cols());
            if axis == 0 {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(x.row(i)) {
                        *o += v;
                    }
                }
                Tensor::new(vec![c], out)
            } else {
                Tensor::new(vec![r], (0..r).map(|i| x.row(i).iter().sum()).collect())
            }
        })
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.data().iter().sum())))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |x| {
            if x.is_empty() {
                return Err(Error::Shape {
                    op: "mean",
                    lhs: x.shape().to_vec(),
                    rhs: vec![],
                });
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
        })
    }

    /// Row `r` of the output is row `index[r]` of `self`.
    pub fn gather_rows(&self, index: Rc<[usize]>) -> Result<Var<'t>> {
        let idx = index.clone();
        self.unary(Op::GatherRows { x: self.id, index }, move |x| {
            let rows = x.rows();
            if !x.is_matrix() || idx.iter().any(|&i| i >= rows) {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: x.shape().to_vec(),
                    rhs: vec![idx.iter().copied().max().unwrap_or(0)],
                });
            }
            let c = x.cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                data.extend_from_slice(x.row(i));
            }
            Tensor::new(vec![idx.len(), c], data)
        })
    }

    /// Adds row `r` of `self` into row `index[r]` of an `n_rows`-row output.
    ///
    /// Contributions land in source order; callers that need the result to
    /// be independent of source order must supply a canonical ordering.
    pub fn scatter_add_rows(&self, index: Rc<[usize]>, n_rows: usize) -> Result<Var<'t>> {
        let idx = index.clone();
        self.unary(Op::ScatterAddRows { x: self.id, index }, move |x| {
            if !x.is_matrix() || x.rows() != idx.len() || idx.iter().any(|&i| i >= n_rows) {
                return Err(Error::Shape {
                    op: "scatter_add_rows",
                    lhs: x.shape().to_vec(),
                    rhs: vec![idx.len(), n_rows],
                });
            }
            let c = x.cols();
            let mut out = vec![0.0; n_rows * c];
            for (r, &dst) in idx.iter().enumerate() {
                for (o, v) in out[dst * c..(dst + 1) * c].iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            Tensor::new(vec![n_rows, c], out)
        })
    }

    /// Column `c` of the output is column `cols[c]` of `self`; repeats allowed.
    pub fn select_cols(&self, cols: Rc<[usize]>) -> Result<Var<'t>> {
        let sel = cols.clone();
        self.unary(Op::SelectCols { x: self.id, cols }, move |x| {
            let width = x.cols();
            if !x.is_matrix() || sel.iter().any(|&c| c >= width) {
                return Err(Error::Shape {
                    op: "select_cols",
                    lhs: x.shape().to_vec(),
                    rhs: vec![sel.iter().copied().max().unwrap_or(0)],
                });
            }
            let rows = x.rows();
            let mut data = Vec::with_capacity(rows * sel.len());
            for r in 0..rows {
                let row = x.row(r);
                data.extend(sel.iter().map(|&c| row[c]));
            }
            Tensor::new(vec![rows, sel.len()], data)
        })
    }

    /// Contiguous column range `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        self.select_cols((start..start + len).collect())
    }

    /// Row-wise matrix product: row `p` of `self` holds an `m×k` matrix,
    /// row `p` of `other` a `k×n` matrix; row `p` of the output holds their
    /// `m×n` product.
    pub fn bmm(&self, other: Var<'t>, m: usize, k: usize, n: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if !a.is_matrix() || !b.is_matrix() || a.rows() != b.rows() || a.cols() != m * k || b.cols() != k * n {
                return Err(shape_err("bmm", &a, &b));
            }
            let p = a.rows();
            let mut out = vec![0.0; p * m * n];
            for r in 0..p {
                gemm_acc(a.row(r), b.row(r), &mut out[r * m * n..(r + 1) * m * n], m, k, n);
            }
            Tensor::new(vec![p, m * n], out)?
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            value,
            Op::Bmm {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |x| x.clone().reshaped(shape))
    }

    /// Reverse sweep from this scalar, accumulating `∂self/∂node` into every
    /// ancestor that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        let mut grads: Vec<Option<Tensor>> = {
            let nodes = self.tape.nodes.borrow();
            let root = &nodes[self.id].value;
            if root.len() != 1 {
                return Err(Error::NonScalarRoot(root.shape().to_vec()));
            }
            let mut g = vec![None; nodes.len()];
            g[self.id] = Some(Tensor::filled(root.shape(), 1.0));
            for id in (0..=self.id).rev() {
                let Some(gy) = g[id].take() else { continue };
                if nodes[id].requires_grad {
                    propagate(&nodes, id, &gy, &mut g);
                }
                g[id] = Some(gy);
            }
            g
        };
        let mut nodes = self.tape.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads.iter_mut()) {
            if !node.requires_grad {
                continue;
            }
            if let Some(g) = g.take() {
                match &mut node.grad {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn elementwise(x: &Tensor, gy: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = x.data().iter().zip(gy.data()).map(|(&a, &g)| f(a, g)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn propagate(nodes: &[Node], id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Affine { x, w, b } => {
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
            if nodes[*x].requires_grad {
                let mut gx = vec![0.0; n * k];
                gemm_nt_acc(gy.data(), wv.data(), &mut gx, n, m, k);
                acc(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
            }
            if nodes[*w].requires_grad {
                let mut gw = vec![0.0; k * m];
                gemm_tn_acc(xv.data(), gy.data(), &mut gw, n, k, m);
                acc(nodes, grads, *w, Tensor::new(wv.shape().to_vec(), gw).unwrap());
            }
            if let Some(b) = b {
                if nodes[*b].requires_grad {
                    let mut gb = vec![0.0; m];
                    for row in gy.data().chunks(m) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(nodes, grads, *b, Tensor::new(nodes[*b].value.shape().to_vec(), gb).unwrap());
                }
            }
        }
        Op::Add(a, b) => {
            acc(nodes, grads, *a, gy.clone());
            acc(nodes, grads, *b, gy.clone());
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if nodes[*a].requires_grad {
                acc(nodes, grads, *a, elementwise(bv, gy, |v, g| v * g));
            }
            if nodes[*b].requires_grad {
                acc(nodes, grads, *b, elementwise(av, gy, |v, g| v * g));
            }
        }
        Op::Scale(x, c) => acc(nodes, grads, *x, gy.map(|g| g * c)),
        Op::Shift(x) | Op::Reshape(x) => {
            let shape = nodes[*x].value.shape().to_vec();
            acc(nodes, grads, *x, gy.clone().reshaped(shape).unwrap());
        }
        Op::Softplus(x) => {
            acc(nodes, grads, *x, elementwise(&nodes[*x].value, gy, |v, g| sigmoid(v) * g));
        }
        Op::Sigmoid(x) => acc(nodes, grads, *x, elementwise(y, gy, |s, g| s * (1.0 - s) * g)),
        Op::Relu(x) => {
            acc(
                nodes,
                grads,
                *x,
                elementwise(&nodes[*x].value, gy, |v, g| if v > 0.0 { g } else { 0.0 }),
            );
        }
        Op::Square(x) => acc(nodes, grads, *x, elementwise(&nodes[*x].value, gy, |v, g| 2.0 * v * g)),
        Op::SumAxis { x, axis } => {
            let xv = &nodes[*x].value;
            let (r, c) = (xv.rows(), xv.cols());
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = if *axis == 0 { gy.data()[j] } else { gy.data()[i] };
                }
            }
            acc(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
        }
        Op::Sum(x) => {
            let xv = &nodes[*x].value;
            acc(nodes, grads, *x, Tensor::filled(xv.shape(), gy.item()));
        }
        Op::Mean(x) => {
            let xv = &nodes[*x].value;
            acc(nodes, grads, *x, Tensor::filled(xv.shape(), gy.item() / xv.len() as f64));
        }
        Op::GatherRows { x, index } => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            for (r, &src) in index.iter().enumerate() {
                for (o, g) in gx[src * c..(src + 1) * c].iter_mut().zip(gy.row(r)) {
                    *o += g;
                }
            }
            acc(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
        }
        Op::ScatterAddRows { x, index } => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            let mut gx = Vec::with_capacity(xv.len());
            for &dst in index.iter() {
                gx.extend_from_slice(&gy.data()[dst * c..(dst + 1) * c]);
            }
            acc(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
        }
        Op::ConcatCols(parts) => {
            let rows = y.rows();
            let total = y.cols();
            let mut offset = 0;
            for &p in parts {
                let pv = &nodes[p].value;
                let c = pv.cols();
                if nodes[p].requires_grad {
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&gy.data()[r * total + offset..r * total + offset + c]);
                    }
                    acc(nodes, grads, p, Tensor::new(pv.shape().to_vec(), gp).unwrap());
                }
                offset += c;
            }
        }
        Op::SelectCols { x, cols } => {
            let xv = &nodes[*x].value;
            let width = xv.cols();
            let mut gx = vec![0.0; xv.len()];
            for r in 0..xv.rows() {
                let grow = gy.row(r);
                for (j, &c) in cols.iter().enumerate() {
                    gx[r * width + c] += grow[j];
                }
            }
            acc(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
        }
        Op::Bmm { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let p = av.rows();
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; p * m * k];
                for r in 0..p {
                    gemm_nt_acc(gy.row(r), bv.row(r), &mut ga[r * m * k..(r + 1) * m * k], m, n, k);
                }
                acc(nodes, grads, *a, Tensor::new(av.shape().to_vec(), ga).unwrap());
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; p * k * n];
                for r in 0..p {
                    gemm_tn_acc(av.row(r), gy.row(r), &mut gb[r * k * n..(r + 1) * k * n], m, k, n);
                }
                acc(nodes, grads, *b, Tensor::new(bv.shape().to_vec(), gb).unwrap());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &Tape, x: f64) -> Var<'_> {
        tape.leaf(Tensor::new(vec![1, 1], vec![x]).unwrap(), true)
    }

    #[test]
    fn softplus_and_sigmoid_at_zero() {
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 0.0);
        assert!((x.softplus().unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(x.sigmoid().unwrap().item(), 0.5);
    }

    #[test]
    fn sum_over_rows_of_ones() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[2, 3], 1.0));
        let s = x.sum_axis(0).unwrap();
        assert_eq!(s.value().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(s.shape(), vec![3]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 3.0);
        let y = x.square().unwrap().sum().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 0.0);
        x.sigmoid().unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().item(), 0.25);
    }

    #[test]
    fn reuse_accumulates() {
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 1.0);
        x.add(x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().item(), 2.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(x.backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_primitive() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        assert!(a.affine(a, None).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::filled(&[1, 1], 2.0));
        let x = scalar_leaf(&tape, 3.0);
        x.mul(c).unwrap().sum().unwrap().backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap().item(), 2.0);
    }

    #[test]
    fn bmm_matches_per_row_products() {
        let tape = Tape::new();
        // two rows, each 1x2 times 2x2
        let a = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0]).unwrap());
        let c = a.bmm(b, 1, 2, 2).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 10.0, 11.0]);
    }
}
