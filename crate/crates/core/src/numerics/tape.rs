//! Reverse-mode gradient tape over row-major matrices.
//!
//! Every node is a `rows x cols` matrix. Ops are appended in evaluation
//! order, so walking the tape backwards is a valid reverse topological order.

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    RowScale(NodeId, Vec<T>),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LnClamp(NodeId, T),
    GatherRows(NodeId, Vec<usize>),
    VStack(Vec<NodeId>),
    SumGroups(NodeId, usize),
    MeanRows(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    rows: usize,
    cols: usize,
    value: Vec<T>,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every parameter of a store.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.grads.iter().map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Recorded computation. Single-threaded; build one per training step.
#[derive(Debug, Default)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Row `i` of a node.
    pub fn row(&self, id: NodeId, i: usize) -> &[T] {
        let n = &self.nodes[id.0];
        &n.value[i * n.cols..(i + 1) * n.cols]
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op<T>, rows: usize, cols: usize, value: Vec<T>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> NodeId {
        assert_eq!(value.len(), rows * cols, "constant: data length");
        self.push(Op::Constant, rows, cols, value, false)
    }

    /// Copies a node's current value into a fresh constant: no gradient flows back.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let v = self.nodes[a.0].value.clone();
        self.push(Op::Constant, r, c, v, false)
    }

    /// Parameters are treated as `rows x cols` with `cols` the last extent.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let t = store.get(id);
        let (r, c) = (t.rows(), t.cols());
        self.push(Op::Param(id), r, c, t.data().to_vec(), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), m, n, out, g))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != n {
            return Err(Error::dim("add_bias", &[1, n], &[br, bc]));
        }
        let b = self.value(bias);
        let out: Vec<T> = self
            .value(a)
            .chunks_exact(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let g = self.ng(a) || self.ng(bias);
        Ok(self.push(Op::AddBias(a, bias), m, n, out, g))
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, ctx: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::dim(ctx, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(op, sa.0, sa.1, out, g))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let (r, cols) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let g = self.ng(a);
        self.push(Op::Scale(a, c), r, cols, out, g)
    }

    /// Multiplies row `i` by the constant `s[i]`.
    pub fn row_scale(&mut self, a: NodeId, s: Vec<T>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if s.len() != r {
            return Err(Error::dim("row_scale", &[r], &[s.len()]));
        }
        let out = self
            .value(a)
            .chunks_exact(c.max(1))
            .zip(&s)
            .flat_map(|(row, &w)| row.iter().map(move |&x| x * w))
            .collect();
        let g = self.ng(a);
        Ok(self.push(Op::RowScale(a, s), r, c, out, g))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let g = self.ng(a);
        self.push(Op::Relu(a), r, c, out, g)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                s = s + *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        let g = self.ng(a);
        self.push(Op::SoftmaxRows(a), r, c, out, g)
    }

    /// `ln(max(x, eps))`; zero gradient where the clamp is active.
    pub fn ln_clamp(&mut self, a: NodeId, eps: T) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(eps).ln()).collect();
        let g = self.ng(a);
        self.push(Op::LnClamp(a, eps), r, c, out, g)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Usage(format!("gather row {bad} out of range for {r} rows")));
        }
        let v = self.value(a);
        let out: Vec<T> = idx.iter().flat_map(|&i| v[i * c..(i + 1) * c].iter().copied()).collect();
        let g = self.ng(a);
        let n = idx.len();
        Ok(self.push(Op::GatherRows(a, idx), n, c, out, g))
    }

    pub fn vstack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Usage("vstack of nothing".into()));
        };
        let c = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut g = false;
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(Error::dim("vstack", &[r, c], &[r, pc]));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
            g |= self.ng(p);
        }
        Ok(self.push(Op::VStack(parts.to_vec()), rows, c, out, g))
    }

    /// Sums consecutive groups of `group` rows.
    pub fn sum_groups(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if group == 0 || r % group != 0 {
            return Err(Error::Usage(format!("cannot split {r} rows into groups of {group}")));
        }
        let v = self.value(a);
        let mut out = vec![T::zero(); (r / group) * c];
        for (i, row) in v.chunks_exact(c.max(1)).enumerate() {
            let dst = &mut out[(i / group) * c..(i / group + 1) * c];
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = *d + x;
            }
        }
        let g = self.ng(a);
        Ok(self.push(Op::SumGroups(a, group), r / group, c, out, g))
    }

    /// Column means, as a `1 x cols` row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut out = vec![T::zero(); c];
        for row in self.value(a).chunks_exact(c.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::lit(r.max(1) as f64);
        out.iter_mut().for_each(|x| *x = *x * inv);
        let g = self.ng(a);
        self.push(Op::MeanRows(a), 1, c, out, g)
    }

    /// Sum of all entries, as a `1 x 1` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().copied().sum();
        let g = self.ng(a);
        self.push(Op::Sum(a), 1, 1, vec![s], g)
    }

    /// `d loss / d theta` for every parameter in `store`.
    pub fn backward(&self, loss: NodeId, store: &ParamStore<T>) -> Result<Gradients<T>> {
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    let dst = &mut out.grads[p.index()];
                    if dst.len() != g.len() {
                        return Err(Error::Usage("parameter store does not match tape".into()));
                    }
                    for (d, x) in dst.iter_mut().zip(&g) {
                        *d = *d + *x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    if self.ng(*a) {
                        let mut da = vec![T::zero(); m * k];
                        T::gemm(m, n, k, &g, false, self.value(*b), true, &mut da, false);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.ng(*b) {
                        let mut db = vec![T::zero(); k * n];
                        T::gemm(k, m, n, self.value(*a), true, &g, false, &mut db, false);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.ng(*bias) {
                        let mut db = vec![T::zero(); node.cols];
                        for row in g.chunks_exact(node.cols.max(1)) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d = *d + x;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|&x| -x).collect());
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let da = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads, *a, da);
                    }
                    if self.ng(*b) {
                        let db = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.iter().map(|&x| x * *s).collect());
                }
                Op::RowScale(a, s) => {
                    let c = node.cols.max(1);
                    let da = g
                        .chunks_exact(c)
                        .zip(s)
                        .flat_map(|(row, &w)| row.iter().map(move |&x| x * w))
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let c = node.cols.max(1);
                    let mut da = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks_exact(c).zip(node.value.chunks_exact(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                        da.extend(gr.iter().zip(yr).map(|(&x, &y)| y * (x - dot)));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LnClamp(a, eps) => {
                    let da = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(&x, &v)| if v > *eps { x / v } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::GatherRows(a, idx) => {
                    let (ar, c) = self.shape(*a);
                    let mut da = vec![T::zero(); ar * c];
                    for (row, &src) in g.chunks_exact(c.max(1)).zip(idx) {
                        for (d, &x) in da[src * c..(src + 1) * c].iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::VStack(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.ng(*p) {
                            accumulate(&mut grads, *p, g[off..off + len].to_vec());
                        }
                        off += len;
                    }
                }
                Op::SumGroups(a, group) => {
                    let c = node.cols.max(1);
                    let (ar, _) = self.shape(*a);
                    let mut da = Vec::with_capacity(ar * c);
                    for i in 0..ar {
                        let o = i / group;
                        da.extend_from_slice(&g[o * c..(o + 1) * c]);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let (ar, c) = self.shape(*a);
                    let inv = T::one() / T::lit(ar.max(1) as f64);
                    let row: Vec<T> = g.iter().map(|&x| x * inv).collect();
                    let mut da = Vec::with_capacity(ar * c);
                    for _ in 0..ar {
                        da.extend_from_slice(&row);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, g: Vec<T>) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&g) {
                *a = *a + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
