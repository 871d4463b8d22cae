//! Wengert-style tape: every primitive appends one node holding its output
//! value, the indices of its inputs, and whatever it needs for the adjoint.
//!
//! Nodes are only ever appended, so inputs always precede their consumers and
//! a reverse sweep over the node list is a valid topological order.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{softmax_kernel, ParamId, ParamStore, Tensor, EPS_LOG};
use crate::error::{MogError, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    /// Position of the node on its tape. Unique for the tape's lifetime.
    pub fn node_id(self) -> usize {
        self.idx
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec(usize, usize),
    MatMul(usize, usize),
    VecMat(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRows(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize, len: usize },
    Stack(Vec<usize>),
    Embedding { table: usize, row: usize },
    MeanPool(Vec<usize>),
    Softmax { src: usize, mask: Option<Vec<bool>> },
    Nll { src: usize, target: usize },
    Sum(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatVec(a, b)
            | Op::MatMul(a, b)
            | Op::VecMat(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRows(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Sum(a) => vec![*a],
            Op::Slice { src, .. } | Op::Softmax { src, .. } | Op::Nll { src, .. } => vec![*src],
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat(xs) | Op::Stack(xs) | Op::MeanPool(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Computes a node's output from its inputs. Used both when recording and
/// when replaying, so the two paths cannot drift apart.
fn compute(op: &Op, nodes: &[Node]) -> (Vec<usize>, Vec<f64>) {
    let val = |i: usize| nodes[i].value.as_slice();
    let shape = |i: usize| nodes[i].shape.as_slice();
    match op {
        Op::Leaf | Op::Param(_) => unreachable!("leaves are not recomputed"),
        Op::MatVec(a, x) => {
            let (r, c) = (shape(*a)[0], shape(*a)[1]);
            let (w, xv) = (val(*a), val(*x));
            let out = (0..r)
                .map(|i| w[i * c..(i + 1) * c].iter().zip(xv).map(|(p, q)| p * q).sum())
                .collect();
            (vec![r], out)
        }
        Op::MatMul(a, b) => {
            let (p, q) = (shape(*a)[0], shape(*a)[1]);
            let r = shape(*b)[1];
            let (av, bv) = (val(*a), val(*b));
            let mut out = vec![0.0; p * r];
            for i in 0..p {
                for j in 0..q {
                    let aij = av[i * q + j];
                    let row = &bv[j * r..(j + 1) * r];
                    for (o, bjk) in out[i * r..(i + 1) * r].iter_mut().zip(row) {
                        *o += aij * bjk;
                    }
                }
            }
            (vec![p, r], out)
        }
        Op::VecMat(x, m) => {
            let (p, q) = (shape(*m)[0], shape(*m)[1]);
            let (xv, mv) = (val(*x), val(*m));
            let mut out = vec![0.0; q];
            for j in 0..p {
                let xj = xv[j];
                for (o, mjk) in out.iter_mut().zip(&mv[j * q..(j + 1) * q]) {
                    *o += xj * mjk;
                }
            }
            (vec![q], out)
        }
        Op::Add(a, b) => (shape(*a).to_vec(), val(*a).iter().zip(val(*b)).map(|(x, y)| x + y).collect()),
        Op::Sub(a, b) => (shape(*a).to_vec(), val(*a).iter().zip(val(*b)).map(|(x, y)| x - y).collect()),
        Op::Mul(a, b) => (shape(*a).to_vec(), val(*a).iter().zip(val(*b)).map(|(x, y)| x * y).collect()),
        Op::AddRows(m, v) => {
            let q = shape(*m)[1];
            let vv = val(*v);
            let out = val(*m).iter().enumerate().map(|(i, x)| x + vv[i % q]).collect();
            (shape(*m).to_vec(), out)
        }
        Op::Scale(a, c) => (shape(*a).to_vec(), val(*a).iter().map(|x| x * c).collect()),
        Op::Tanh(a) => (shape(*a).to_vec(), val(*a).iter().map(|x| x.tanh()).collect()),
        Op::Sigmoid(a) => (shape(*a).to_vec(), val(*a).iter().map(|x| sigmoid(*x)).collect()),
        Op::Concat(xs) => {
            let out: Vec<f64> = xs.iter().flat_map(|&i| val(i).iter().copied()).collect();
            (vec![out.len()], out)
        }
        Op::Slice { src, start, len } => (vec![*len], val(*src)[*start..start + len].to_vec()),
        Op::Stack(xs) => {
            let width = val(xs[0]).len();
            let out: Vec<f64> = xs.iter().flat_map(|&i| val(i).iter().copied()).collect();
            (vec![xs.len(), width], out)
        }
        Op::Embedding { table, row } => {
            let d = shape(*table)[1];
            (vec![d], val(*table)[row * d..(row + 1) * d].to_vec())
        }
        Op::MeanPool(xs) => {
            let n = xs.len() as f64;
            let mut out = vec![0.0; val(xs[0]).len()];
            for &i in xs {
                for (o, v) in out.iter_mut().zip(val(i)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= n);
            (shape(xs[0]).to_vec(), out)
        }
        Op::Softmax { src, mask } => {
            let mut out = Vec::with_capacity(val(*src).len());
            softmax_kernel(val(*src), mask.as_deref(), &mut out);
            (shape(*src).to_vec(), out)
        }
        Op::Nll { src, target } => (Vec::new(), vec![-(val(*src)[*target] + EPS_LOG).ln()]),
        Op::Sum(a) => (Vec::new(), vec![val(*a).iter().sum()]),
    }
}

fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].needs_grad {
        return None;
    }
    let n = nodes[j].value.len();
    Some(adj[j].get_or_insert_with(|| vec![0.0; n]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Records primitive applications for one forward pass.
///
/// A tape is single-threaded; use one tape per sample or per model instance.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn var(&self, idx: usize) -> Var {
        Var { tape: self.id, idx }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn push(&mut self, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        let (shape, value) = compute(&op, &self.nodes);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Records a leaf holding a copy of `t`. Gradients are tracked when
    /// `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        self.var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Var {
        let t = Tensor::new(shape.to_vec(), data).expect("constant: shape/data mismatch");
        self.leaf(&t)
    }

    /// Binds a stored parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(idx) = self.param_nodes[id.0] {
            return self.var(idx);
        }
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Param(id),
            needs_grad: t.requires_grad(),
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes[id.0] = Some(idx);
        self.var(idx)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.idx(v)].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let node = &self.nodes[self.idx(v)];
        assert_eq!(node.value.len(), 1, "not a scalar");
        node.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[self.idx(v)];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shapes are consistent")
    }

    fn rank(&self, v: Var) -> usize {
        self.shape(v).len()
    }

    fn numel(&self, v: Var) -> usize {
        self.value(v).len()
    }

    /// `W x` for `W: [r, c]`, `x: [c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (ws, xs) = (self.shape(w), self.shape(x));
        assert!(ws.len() == 2 && xs.len() == 1 && ws[1] == xs[0], "matvec shapes {ws:?} x {xs:?}");
        let op = Op::MatVec(self.idx(w), self.idx(x));
        self.push(op)
    }

    /// `A B` for `A: [p, q]`, `B: [q, r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (as_, bs) = (self.shape(a), self.shape(b));
        assert!(as_.len() == 2 && bs.len() == 2 && as_[1] == bs[0], "matmul shapes {as_:?} x {bs:?}");
        let op = Op::MatMul(self.idx(a), self.idx(b));
        self.push(op)
    }

    /// `xᵀ M` for `x: [p]`, `M: [p, q]`.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Var {
        let (xs, ms) = (self.shape(x), self.shape(m));
        assert!(xs.len() == 1 && ms.len() == 2 && xs[0] == ms[0], "vecmat shapes {xs:?} x {ms:?}");
        let op = Op::VecMat(self.idx(x), self.idx(m));
        self.push(op)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let op = Op::Add(self.idx(a), self.idx(b));
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let op = Op::Sub(self.idx(a), self.idx(b));
        self.push(op)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let op = Op::Mul(self.idx(a), self.idx(b));
        self.push(op)
    }

    /// Adds the row vector `v: [q]` to every row of `m: [p, q]`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Var {
        let (ms, vs) = (self.shape(m), self.shape(v));
        assert!(ms.len() == 2 && vs.len() == 1 && ms[1] == vs[0], "add_rows shapes {ms:?} + {vs:?}");
        let op = Op::AddRows(self.idx(m), self.idx(v));
        self.push(op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let op = Op::Scale(self.idx(a), c);
        self.push(op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let op = Op::Tanh(self.idx(a));
        self.push(op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let op = Op::Sigmoid(self.idx(a));
        self.push(op)
    }

    /// Flattens each input and joins them into one rank-1 vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let op = Op::Concat(parts.iter().map(|&v| self.idx(v)).collect());
        self.push(op)
    }

    /// `a[start..start + len]` of a rank-1 vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(self.rank(a) == 1 && len > 0 && start + len <= self.numel(a), "slice out of range");
        let op = Op::Slice {
            src: self.idx(a),
            start,
            len,
        };
        self.push(op)
    }

    /// Stacks equal-length rank-1 vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let width = self.numel(rows[0]);
        assert!(
            rows.iter().all(|&r| self.rank(r) == 1 && self.numel(r) == width),
            "stack rows must be rank-1 of equal length"
        );
        let op = Op::Stack(rows.iter().map(|&v| self.idx(v)).collect());
        self.push(op)
    }

    /// Row `row` of an embedding table `[V, d]`.
    pub fn embedding(&mut self, table: Var, row: usize) -> Var {
        let s = self.shape(table);
        assert!(s.len() == 2 && row < s[0], "embedding row {row} outside table {s:?}");
        let op = Op::Embedding {
            table: self.idx(table),
            row,
        };
        self.push(op)
    }

    /// Elementwise mean of equally shaped inputs (pooling over a step axis).
    pub fn mean_pool(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "mean_pool of nothing");
        let s = self.shape(items[0]).to_vec();
        assert!(items.iter().all(|&v| self.shape(v) == s.as_slice()), "mean_pool shape mismatch");
        let op = Op::MeanPool(items.iter().map(|&v| self.idx(v)).collect());
        self.push(op)
    }

    /// Softmax over a rank-1 vector. Non-finite logits propagate as NaN; the
    /// checked entry point is [`crate::tensor::softmax`].
    pub fn softmax(&mut self, logits: Var) -> Var {
        assert_eq!(self.rank(logits), 1, "softmax expects rank-1 input");
        let op = Op::Softmax {
            src: self.idx(logits),
            mask: None,
        };
        self.push(op)
    }

    /// Softmax restricted to entries where `mask` is true; the rest are exactly 0.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Var {
        assert_eq!(self.rank(logits), 1, "softmax expects rank-1 input");
        assert_eq!(mask.len(), self.numel(logits), "mask length");
        assert!(mask.iter().any(|&m| m), "mask removes every entry");
        let op = Op::Softmax {
            src: self.idx(logits),
            mask: Some(mask.to_vec()),
        };
        self.push(op)
    }

    /// `-ln(p[target] + EPS_LOG)` for a probability vector `p`.
    pub fn nll(&mut self, probs: Var, target: usize) -> Var {
        assert!(self.rank(probs) == 1 && target < self.numel(probs), "nll target {target} out of range");
        let op = Op::Nll {
            src: self.idx(probs),
            target,
        };
        self.push(op)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let op = Op::Sum(self.idx(a));
        self.push(op)
    }

    /// Sum of scalar terms, left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Option<Var> {
        let (&first, rest) = terms.split_first()?;
        Some(rest.iter().fold(first, |acc, &t| self.add(acc, t)))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Vec<Vec<f64>> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf | Op::Param(_) => node.value.clone(),
                _ => compute(&node.op, &fresh).1,
            };
            fresh.push(Node {
                shape: node.shape.clone(),
                value,
                op: node.op.clone(),
                needs_grad: node.needs_grad,
            });
        }
        fresh.into_iter().map(|n| n.value).collect()
    }

    /// True when every node's inputs were recorded before it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.inputs().iter().all(|&p| p < i))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(MogError::state("loss was recorded on a different tape"));
        }
        let root = loss.idx;
        if self.nodes[root].value.len() != 1 {
            return Err(MogError::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adj[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
        }
        let params = self.nodes[..=root]
            .iter()
            .enumerate()
            .filter_map(|(idx, n)| match n.op {
                Op::Param(id) => Some((id, idx)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            adj,
            params,
        })
    }

    /// Runs [`Tape::backward`] and adds the parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(store, 1.0);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |j: usize| nodes[j].value.as_slice();
        let shape = |j: usize| nodes[j].shape.as_slice();
        match &nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatVec(a, x) => {
                let (r, c) = (shape(*a)[0], shape(*a)[1]);
                if let Some(da) = slot(nodes, adj, *a) {
                    let xv = val(*x);
                    for row in 0..r {
                        let gi = g[row];
                        for (d, xj) in da[row * c..(row + 1) * c].iter_mut().zip(xv) {
                            *d += gi * xj;
                        }
                    }
                }
                if let Some(dx) = slot(nodes, adj, *x) {
                    let w = val(*a);
                    for row in 0..r {
                        let gi = g[row];
                        for (d, wij) in dx.iter_mut().zip(&w[row * c..(row + 1) * c]) {
                            *d += wij * gi;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (p, q) = (shape(*a)[0], shape(*a)[1]);
                let r = shape(*b)[1];
                if let Some(da) = slot(nodes, adj, *a) {
                    let bv = val(*b);
                    for ii in 0..p {
                        for jj in 0..q {
                            let mut s = 0.0;
                            for kk in 0..r {
                                s += g[ii * r + kk] * bv[jj * r + kk];
                            }
                            da[ii * q + jj] += s;
                        }
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    let av = val(*a);
                    for ii in 0..p {
                        for jj in 0..q {
                            let aij = av[ii * q + jj];
                            for kk in 0..r {
                                db[jj * r + kk] += aij * g[ii * r + kk];
                            }
                        }
                    }
                }
            }
            Op::VecMat(x, m) => {
                let (p, q) = (shape(*m)[0], shape(*m)[1]);
                if let Some(dx) = slot(nodes, adj, *x) {
                    let mv = val(*m);
                    for j in 0..p {
                        dx[j] += mv[j * q..(j + 1) * q].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if let Some(dm) = slot(nodes, adj, *m) {
                    let xv = val(*x);
                    for j in 0..p {
                        for (d, gk) in dm[j * q..(j + 1) * q].iter_mut().zip(g) {
                            *d += xv[j] * gk;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    for ((d, gi), bv) in da.iter_mut().zip(g).zip(val(*b)) {
                        *d += gi * bv;
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    for ((d, gi), av) in db.iter_mut().zip(g).zip(val(*a)) {
                        *d += gi * av;
                    }
                }
            }
            Op::AddRows(m, v) => {
                let q = shape(*m)[1];
                if let Some(dm) = slot(nodes, adj, *m) {
                    dm.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if let Some(dv) = slot(nodes, adj, *v) {
                    for (k, gi) in g.iter().enumerate() {
                        dv[k % q] += gi;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(&nodes[i].value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(&nodes[i].value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Concat(xs) | Op::Stack(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = val(x).len();
                    if let Some(dx) = slot(nodes, adj, x) {
                        dx.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, gi)| *d += gi);
                    }
                    offset += n;
                }
            }
            Op::Slice { src, start, len } => {
                if let Some(ds) = slot(nodes, adj, *src) {
                    ds[*start..start + len].iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Embedding { table, row } => {
                let d = shape(*table)[1];
                if let Some(dt) = slot(nodes, adj, *table) {
                    dt[row * d..(row + 1) * d].iter_mut().zip(g).for_each(|(dd, gi)| *dd += gi);
                }
            }
            Op::MeanPool(xs) => {
                let inv = 1.0 / xs.len() as f64;
                for &x in xs {
                    if let Some(dx) = slot(nodes, adj, x) {
                        dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * inv);
                    }
                }
            }
            Op::Softmax { src, .. } => {
                if let Some(ds) = slot(nodes, adj, *src) {
                    let p = &nodes[i].value;
                    let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    for ((d, gi), pi) in ds.iter_mut().zip(g).zip(p) {
                        *d += pi * (gi - dot);
                    }
                }
            }
            Op::Nll { src, target } => {
                let p = val(*src)[*target];
                if let Some(ds) = slot(nodes, adj, *src) {
                    ds[*target] -= g[0] / (p + EPS_LOG);
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot(nodes, adj, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

/// Adjoints produced by one reverse sweep. Only leaf adjoints are retained.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adj: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf, if it was reached by the sweep.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.adj.get(v.idx).and_then(|a| a.as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, idx)| self.adj[idx].as_deref().map(|g| (id, g)))
    }

    /// Adds `scale` times every parameter gradient into the store's buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (id, g) in self.params() {
            store.get_mut(id).accumulate_grad(g, scale);
        }
    }
}
