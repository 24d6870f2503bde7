//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every node stores a `[rows, cols]` value. Parameters enter the tape once
//! per graph (cached by id) so their gradients accumulate in a single slot.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{HarpError, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    MulRows { x: Var, s: Var },
    SumAll(Var),
    RowSum(Var),
    Gather { x: Var, idx: Vec<usize> },
    SetSum { x: Var, sets: Vec<Vec<usize>>, scale: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds parameter adjoints into `store` grads.
    pub fn accumulate_into(&self, store: &mut ParameterStore<T>) {
        for &(pid, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                let p = store.get_mut(pid);
                for (dst, &src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst = *dst + src;
                }
            }
        }
    }
}

fn dim_err(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> HarpError {
    HarpError::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn cmp_rows<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) => continue,
            Some(o) => return o,
            None => return Ordering::Equal,
        }
    }
    Ordering::Equal
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
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

    /// Value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let t = t.as_matrix();
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).as_matrix(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// `x · Wᵀ + b` with `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, k) = xv.dims2();
        let (o, k2) = wv.dims2();
        if k != k2 {
            return Err(dim_err("linear", xv, wv));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(dim_err("linear bias", wv, self.value(b)));
            }
        }
        let mut out = vec![T::zero(); m * o];
        let (xd, wd) = (xv.data(), wv.data());
        for i in 0..m {
            let xr = &xd[i * k..(i + 1) * k];
            for j in 0..o {
                let wr = &wd[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&a, &c) in xr.iter().zip(wr) {
                    acc = acc + a * c;
                }
                out[i * o + j] = acc;
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for i in 0..m {
                for j in 0..o {
                    out[i * o + j] = out[i * o + j] + bd[j];
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![m, o], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    /// ELU with unit scale: `x` for `x > 0`, `eˣ − 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, elu, Op::Elu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, T::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(dim_err("concat_cols", self.value(parts[0]), v));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(HarpError::Contract("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(dim_err("concat_rows", self.value(first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let t = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start + len > c {
            return Err(HarpError::Dimension {
                op: "slice_cols",
                left: v.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let ng = self.ng(x);
        let t = Tensor::new(vec![r, len], out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, ng))
    }

    /// Scales row `i` of `x: [m, n]` by `s[i]` with `s: [m, 1]`.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (m, n) = xv.dims2();
        if sv.len() != m {
            return Err(dim_err("mul_rows", xv, sv));
        }
        let mut out = xv.data().to_vec();
        for i in 0..m {
            let si = sv.data()[i];
            for o in &mut out[i * n..(i + 1) * n] {
                *o = *o * si;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MulRows { x, s }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(t, Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = T::from_count(self.value(x).len().max(1));
        let s = self.sum_all(x);
        self.scale(s, T::one() / n)
    }

    /// `[m, n] -> [m, 1]` row sums.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.rows();
        let data = (0..m).map(|i| v.row(i).iter().copied().sum()).collect();
        let ng = self.ng(x);
        let t = Tensor::new(vec![m, 1], data).expect("row_sum shape");
        self.push(t, Op::RowSum(x), ng)
    }

    /// Picks `x[i, idx[i]]` into a `[m, 1]` column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (m, n) = v.dims2();
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(HarpError::Dimension {
                op: "gather",
                left: v.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.at(i, j)).collect();
        let ng = self.ng(x);
        let t = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(
            t,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Output row `i` is `scale[i] · Σ_{j ∈ sets[i]} x[j]`.
    ///
    /// Members are summed in a canonical order (sorted by row content), so the
    /// result depends only on the multiset of member rows and is bit-identical
    /// under any relabeling of the members.
    pub fn set_sum(&mut self, x: Var, sets: &[Vec<usize>], scale: &[T]) -> Result<Var> {
        let v = self.value(x);
        let (m, n) = v.dims2();
        if scale.len() != sets.len() || sets.iter().flatten().any(|&j| j >= m) {
            return Err(HarpError::Dimension {
                op: "set_sum",
                left: v.shape().to_vec(),
                right: vec![sets.len(), scale.len()],
            });
        }
        let mut out = vec![T::zero(); sets.len() * n];
        let mut order: Vec<usize> = Vec::new();
        for (i, set) in sets.iter().enumerate() {
            order.clear();
            order.extend_from_slice(set);
            order.sort_by(|&a, &b| cmp_rows(v.row(a), v.row(b)).then(a.cmp(&b)));
            let orow = &mut out[i * n..(i + 1) * n];
            for &j in &order {
                for (o, &xv) in orow.iter_mut().zip(v.row(j)) {
                    *o = *o + xv;
                }
            }
            for o in orow.iter_mut() {
                *o = *o * scale[i];
            }
        }
        let ng = self.ng(x);
        let t = Tensor::new(vec![sets.len(), n], out)?;
        Ok(self.push(
            t,
            Op::SetSum {
                x,
                sets: sets.to_vec(),
                scale: scale.to_vec(),
            },
            ng,
        ))
    }

    /// Selects rows of `x` (a `set_sum` over singletons).
    pub fn rows_of(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let sets: Vec<Vec<usize>> = idx.iter().map(|&i| vec![i]).collect();
        let scale = vec![T::one(); idx.len()];
        self.set_sum(x, &sets, &scale)
    }

    /// Reverse sweep from a `[1, 1]` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(HarpError::Dimension {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![1],
            });
        }
        if !lv.is_finite() {
            return Err(HarpError::Numeric("non-finite loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k) = xv.dims2();
                let o = wv.rows();
                let dyd = dy.data();
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); m * k];
                    for i in 0..m {
                        let dxr = &mut dx[i * k..(i + 1) * k];
                        for j in 0..o {
                            let g = dyd[i * o + j];
                            if g == T::zero() {
                                continue;
                            }
                            for (d, &wv) in dxr.iter_mut().zip(wv.row(j)) {
                                *d = *d + g * wv;
                            }
                        }
                    }
                    self.acc(grads, *x, Tensor::new(vec![m, k], dx).unwrap());
                }
                if self.ng(*w) {
                    let mut dw = vec![T::zero(); o * k];
                    for i in 0..m {
                        let xr = xv.row(i);
                        for j in 0..o {
                            let g = dyd[i * o + j];
                            if g == T::zero() {
                                continue;
                            }
                            for (d, &xv) in dw[j * k..(j + 1) * k].iter_mut().zip(xr) {
                                *d = *d + g * xv;
                            }
                        }
                    }
                    self.acc(grads, *w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![T::zero(); o];
                        for i in 0..m {
                            for (d, &g) in db.iter_mut().zip(&dyd[i * o..(i + 1) * o]) {
                                *d = *d + g;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        self.acc(grads, *b, Tensor::new(shape, db).unwrap());
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let g = dy.matmul(&bv.transpose()).unwrap();
                    self.acc(grads, *a, g);
                }
                if self.ng(*b) {
                    let g = av.transpose().matmul(dy).unwrap();
                    self.acc(grads, *b, g);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, dy.clone());
                self.acc(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, dy.clone());
                self.acc(grads, *b, dy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, dy.zip_map(bv, "mul", |g, v| g * v).unwrap());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, dy.zip_map(av, "mul", |g, v| g * v).unwrap());
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(grads, *a, dy.map(|g| g * c));
            }
            Op::Sigmoid(a) => {
                let g = dy.zip_map(y, "sigmoid", |g, s| g * s * (T::one() - s)).unwrap();
                self.acc(grads, *a, g);
            }
            Op::Tanh(a) => {
                let g = dy.zip_map(y, "tanh", |g, t| g * (T::one() - t * t)).unwrap();
                self.acc(grads, *a, g);
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let d = x.zip_map(y, "elu", |x, y| if x > T::zero() { T::one() } else { y + T::one() });
                let g = dy.zip_map(&d.unwrap(), "elu", |g, d| g * d).unwrap();
                self.acc(grads, *a, g);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let g = dy.zip_map(x, "softplus", |g, x| g * sigmoid(x)).unwrap();
                self.acc(grads, *a, g);
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let g = dy
                    .zip_map(x, "abs", |g, x| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                self.acc(grads, *a, g);
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let two = T::lit(2.0);
                let g = dy.zip_map(x, "square", |g, x| two * g * x).unwrap();
                self.acc(grads, *a, g);
            }
            Op::ConcatCols(parts) => {
                let rows = dy.rows();
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            d.extend_from_slice(&dy.row(i)[start..start + c]);
                        }
                        self.acc(grads, p, Tensor::new(vec![rows, c], d).unwrap());
                    }
                    start += c;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = dy.cols();
                let mut start = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.ng(p) {
                        let d = dy.data()[start * cols..(start + r) * cols].to_vec();
                        self.acc(grads, p, Tensor::new(vec![r, cols], d).unwrap());
                    }
                    start += r;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (r, c) = xv.dims2();
                let len = dy.cols();
                let mut d = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..len {
                        d.set(i, start + j, dy.at(i, j));
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::MulRows { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let (m, n) = xv.dims2();
                if self.ng(*x) {
                    let mut d = dy.clone();
                    for i in 0..m {
                        let si = sv.data()[i];
                        for v in &mut d.data_mut()[i * n..(i + 1) * n] {
                            *v = *v * si;
                        }
                    }
                    self.acc(grads, *x, d);
                }
                if self.ng(*s) {
                    let data = (0..m)
                        .map(|i| {
                            dy.row(i)
                                .iter()
                                .zip(xv.row(i))
                                .map(|(&g, &v)| g * v)
                                .sum()
                        })
                        .collect();
                    let shape = sv.shape().to_vec();
                    self.acc(grads, *s, Tensor::new(shape, data).unwrap());
                }
            }
            Op::SumAll(x) => {
                let g = dy.data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, Tensor::filled(&shape, g));
            }
            Op::RowSum(x) => {
                let (m, n) = self.value(*x).dims2();
                let mut d = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let g = dy.data()[i];
                    for j in 0..n {
                        d.set(i, j, g);
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::Gather { x, idx } => {
                let (m, n) = self.value(*x).dims2();
                let mut d = Tensor::zeros(&[m, n]);
                for (i, &j) in idx.iter().enumerate() {
                    d.set(i, j, dy.data()[i]);
                }
                self.acc(grads, *x, d);
            }
            Op::SetSum { x, sets, scale } => {
                let (m, n) = self.value(*x).dims2();
                let mut d = Tensor::zeros(&[m, n]);
                let dd = d.data_mut();
                for (i, set) in sets.iter().enumerate() {
                    let dyr = dy.row(i);
                    for &j in set {
                        for (o, &g) in dd[j * n..(j + 1) * n].iter_mut().zip(dyr) {
                            *o = *o + scale[i] * g;
                        }
                    }
                }
                self.acc(grads, *x, d);
            }
        }
    }
}
