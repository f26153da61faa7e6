//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the record
//! needed to push gradients back to its inputs. Nodes are stored in creation
//! order, which is already a topological order, so the backward pass is a
//! single reverse sweep.

use crate::error::{dim_err, AutodiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sum(Vec<Var>),
    Mul(Var, Var),
    Scale {
        x: Var,
        s: Var,
    },
    ScaleConst {
        x: Var,
        c: T,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterAdd {
        x: Var,
        idx: Vec<usize>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Dot(Var, Var),
    SumElements(Var),
    GroupedSoftmax {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    /// Saved post-activation gates, laid out as `[i; f; o; g]`.
    LstmCell {
        x: Var,
        state: Var,
        w: Var,
        b: Var,
        gates: Vec<T>,
    },
    Bce {
        p: Var,
        labels: Vec<T>,
        pos_weight: T,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    binding: Option<(ParamId, usize)>,
}

/// A recorded computation. One tape per question; dropped after the
/// gradients have been harvested.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            binding: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].data[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].data.len()
    }

    /// Gradient accumulated by [`Tape::backward`], if any reached this node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, materialized as zeros when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        self.grad(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); self.numel(v)])
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// True when any forward value or gradient is NaN or infinite.
    pub fn has_fault(&self) -> bool {
        self.nodes.iter().any(|n| n.data.iter().any(|x| !x.is_finite()))
            || self.grads.iter().flatten().any(|g| g.iter().any(|x| !x.is_finite()))
    }

    // ---------------------------------------------------------------------
    // Leaves

    pub fn leaf(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if shape.contains(&0) {
            return Err(AutodiffError::Contract(format!(
                "shape dimensions must be positive, got {shape:?}"
            )));
        }
        if numel(shape) != data.len() {
            return dim_err(
                "leaf",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            );
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    pub fn vector(&mut self, data: Vec<T>) -> Result<Var> {
        let n = data.len();
        self.leaf(&[n], data)
    }

    pub fn zeros(&mut self, n: usize) -> Result<Var> {
        self.leaf(&[n], vec![T::zero(); n])
    }

    /// Copies a whole parameter onto the tape; its gradient flows back into
    /// the store through [`Tape::param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.shape.clone(), p.data.clone(), Op::Leaf);
        self.nodes[v.0].binding = Some((id, 0));
        v
    }

    /// Copies row `row` of a 2-d parameter (an embedding lookup).
    pub fn param_row(&mut self, store: &ParamStore<T>, id: ParamId, row: usize) -> Result<Var> {
        let p = store.get(id);
        if p.shape.len() != 2 || row >= p.shape[0] {
            return dim_err(
                "param_row",
                format!("row {row} out of range for {} {:?}", p.name, p.shape),
            );
        }
        let width = p.shape[1];
        let offset = row * width;
        let v = self.push(vec![width], p.data[offset..offset + width].to_vec(), Op::Leaf);
        self.nodes[v.0].binding = Some((id, offset));
        Ok(v)
    }

    /// Gradients of every parameter-bound leaf, as `(param, flat offset, grad)`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, usize, &[T])> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| {
            let (id, offset) = n.binding?;
            let g = self.grads.get(i)?.as_deref()?;
            Some((id, offset, g))
        })
    }

    // ---------------------------------------------------------------------
    // Forward operations

    /// `w · x + b` for `w` of shape `[k, m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return dim_err("linear", format!("weight must be 2-d, got {ws:?}"));
        }
        let (rows, cols) = (ws[0], ws[1]);
        if self.numel(x) != cols {
            return dim_err(
                "linear",
                format!("weight {rows}x{cols} applied to input of length {}", self.numel(x)),
            );
        }
        if let Some(b) = b {
            if self.numel(b) != rows {
                return dim_err("linear", format!("bias length {} != {rows}", self.numel(b)));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out: Vec<T> = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![T::zero(); rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o = *o + dot(&wv[r * cols..(r + 1) * cols], xv);
        }
        Ok(self.push(vec![rows], out, Op::Linear { x, w, b, rows, cols }))
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (na, nb) = (self.numel(a), self.numel(b));
        if na != nb {
            return dim_err(op, format!("lengths {na} and {nb}"));
        }
        Ok(na)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b)))
    }

    /// Elementwise sum of equally-sized values.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(AutodiffError::Contract("sum of an empty list".into()));
        };
        let n = self.numel(first);
        let mut out = vec![T::zero(); n];
        for &x in xs {
            if self.numel(x) != n {
                return dim_err("sum", format!("lengths {n} and {}", self.numel(x)));
            }
            for (o, v) in out.iter_mut().zip(self.value(x)) {
                *o = *o + *v;
            }
        }
        let shape = self.shape(first).to_vec();
        Ok(self.push(shape, out, Op::Sum(xs.to_vec())))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul(a, b)))
    }

    /// Multiplies every element of `x` by the scalar value `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.numel(s) != 1 {
            return dim_err("scale", format!("scale must be scalar, got {:?}", self.shape(s)));
        }
        let sv = self.scalar(s);
        let out = self.value(x).iter().map(|v| *v * sv).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Scale { x, s }))
    }

    pub fn scale_const(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::ScaleConst { x, c })
    }

    /// Concatenates flattened inputs into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(AutodiffError::Contract("concat of an empty list".into()));
        }
        let mut out = Vec::with_capacity(xs.iter().map(|&x| self.numel(x)).sum());
        for &x in xs {
            out.extend_from_slice(self.value(x));
        }
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(xs.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if len == 0 || start + len > self.numel(x) {
            return dim_err(
                "slice",
                format!("[{start}, {}) of length {}", start + len, self.numel(x)),
            );
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice { x, start }))
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.numel(x);
        if idx.is_empty() {
            return Err(AutodiffError::Contract("gather with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return dim_err("gather", format!("index {bad} out of range {n}"));
        }
        let xv = self.value(x);
        let out = idx.iter().map(|&i| xv[i]).collect();
        Ok(self.push(vec![idx.len()], out, Op::Gather { x, idx: idx.to_vec() }))
    }

    /// `out[idx[i]] += x[i]` over a zero vector of length `size`.
    pub fn scatter_add(&mut self, x: Var, idx: &[usize], size: usize) -> Result<Var> {
        if idx.len() != self.numel(x) {
            return dim_err(
                "scatter_add",
                format!("{} indices for {} values", idx.len(), self.numel(x)),
            );
        }
        if size == 0 {
            return Err(AutodiffError::Contract("scatter_add into empty output".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= size) {
            return dim_err("scatter_add", format!("index {bad} out of range {size}"));
        }
        let mut out = vec![T::zero(); size];
        for (v, &i) in self.value(x).iter().zip(idx) {
            out[i] = out[i] + *v;
        }
        Ok(self.push(vec![size], out, Op::ScatterAdd { x, idx: idx.to_vec() }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|v| if *v > T::zero() { *v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| sigmoid(*v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Sigmoid(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .fold(T::zero(), |acc, (x, y)| acc + *x * *y);
        Ok(self.push(vec![1], vec![s], Op::Dot(a, b)))
    }

    pub fn sum_elements(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(T::zero(), |acc, v| acc + *v);
        self.push(vec![1], vec![s], Op::SumElements(x))
    }

    /// Softmax applied independently inside each group of indices. Groups must
    /// partition `0..len(x)` and be nonempty; output order follows input order.
    pub fn grouped_softmax(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let n = self.numel(x);
        let mut seen = vec![false; n];
        for g in groups {
            if g.is_empty() {
                return Err(AutodiffError::Contract("grouped_softmax: empty group".into()));
            }
            for &i in g {
                if i >= n {
                    return dim_err("grouped_softmax", format!("index {i} out of range {n}"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(AutodiffError::Contract(format!(
                        "grouped_softmax: index {i} in more than one group"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(AutodiffError::Contract(
                "grouped_softmax: groups do not cover every index".into(),
            ));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); n];
        for g in groups {
            let max = g.iter().map(|&i| xv[i]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for &i in g {
                let e = (xv[i] - max).exp();
                out[i] = e;
                total = total + e;
            }
            for &i in g {
                out[i] = out[i] / total;
            }
        }
        Ok(self.push(
            vec![n],
            out,
            Op::GroupedSoftmax {
                x,
                groups: groups.to_vec(),
            },
        ))
    }

    /// One LSTM step. `state` is `[h; c]` (length `2n`), `w` is `[4n, m + n]`
    /// with gate blocks ordered input, forget, output, candidate. Returns the
    /// next `[h; c]`.
    pub fn lstm_cell(&mut self, x: Var, state: Var, w: Var, b: Var) -> Result<Var> {
        let m = self.numel(x);
        let two_n = self.numel(state);
        if !two_n.is_multiple_of(2) || two_n == 0 {
            return dim_err("lstm_cell", format!("state length {two_n} is not 2n"));
        }
        let n = two_n / 2;
        let ws = self.shape(w);
        if ws != [4 * n, m + n] {
            return dim_err("lstm_cell", format!("weight {ws:?}, expected [{}, {}]", 4 * n, m + n));
        }
        if self.numel(b) != 4 * n {
            return dim_err("lstm_cell", format!("bias length {}", self.numel(b)));
        }
        let xv = self.value(x);
        let sv = self.value(state);
        let wv = self.value(w);
        let bv = self.value(b);
        let (h_prev, c_prev) = sv.split_at(n);
        let cols = m + n;
        let input: Vec<T> = xv.iter().chain(h_prev).copied().collect();
        let mut gates = vec![T::zero(); 4 * n];
        for (r, g) in gates.iter_mut().enumerate() {
            let acc = bv[r] + dot(&wv[r * cols..(r + 1) * cols], &input);
            *g = if r < 3 * n { sigmoid(acc) } else { acc.tanh() };
        }
        let mut out = vec![T::zero(); 2 * n];
        for j in 0..n {
            let (i, f, o, g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            let c = f * c_prev[j] + i * g;
            out[n + j] = c;
            out[j] = o * c.tanh();
        }
        Ok(self.push(vec![2 * n], out, Op::LstmCell { x, state, w, b, gates }))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `labels`.
    /// Probabilities are clamped to `[ε, 1-ε]`; the gradient is evaluated at
    /// the clamped point and passed straight through the clamp.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        self.weighted_bce(p, labels, T::one())
    }

    /// Mean binary cross-entropy with the positive term scaled by
    /// `pos_weight`.
    pub fn weighted_bce(&mut self, p: Var, labels: &[T], pos_weight: T) -> Result<Var> {
        if self.numel(p) != labels.len() {
            return dim_err(
                "bce",
                format!("{} probabilities, {} labels", self.numel(p), labels.len()),
            );
        }
        if labels.is_empty() {
            return Err(AutodiffError::Contract("bce over zero items".into()));
        }
        let eps = T::lit(BCE_EPSILON);
        let one = T::one();
        let mut total = T::zero();
        for (pv, y) in self.value(p).iter().zip(labels) {
            let pc = pv.max(eps).min(one - eps);
            total = total - (pos_weight * *y * pc.ln() + (one - *y) * (one - pc).ln());
        }
        let mean = total / T::from_usize(labels.len()).unwrap();
        Ok(self.push(
            vec![1],
            vec![mean],
            Op::Bce {
                p,
                labels: labels.to_vec(),
                pos_weight,
            },
        ))
    }

    // ---------------------------------------------------------------------
    // Backward

    /// Populates gradients of every node reachable from `loss`. Repeated calls
    /// accumulate until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut g: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            self.backprop_node(i, &dy, &mut g);
            // keep this node's own gradient for inspection
            g[i] = Some(dy);
        }

        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        for (i, gi) in g.into_iter().enumerate() {
            let Some(gi) = gi else { continue };
            match &mut self.grads[i] {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a = *a + v;
                    }
                }
                slot => *slot = Some(gi),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, dy: &[T], g: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let xv = self.value(*x);
                let wv = self.value(*w);
                {
                    let gx = slot(g, *x, cols);
                    for r in 0..rows {
                        let d = dy[r];
                        if d == T::zero() {
                            continue;
                        }
                        for (gxi, wi) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                            *gxi = *gxi + *wi * d;
                        }
                    }
                }
                {
                    let gw = slot(g, *w, rows * cols);
                    for r in 0..rows {
                        let d = dy[r];
                        if d == T::zero() {
                            continue;
                        }
                        for (gwi, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *gwi = *gwi + d * *xi;
                        }
                    }
                }
                if let Some(b) = b {
                    add_into(slot(g, *b, rows), dy);
                }
            }
            Op::Add(a, b) => {
                add_into(slot(g, *a, dy.len()), dy);
                add_into(slot(g, *b, dy.len()), dy);
            }
            Op::Sum(xs) => {
                for x in xs {
                    add_into(slot(g, *x, dy.len()), dy);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = slot(g, *a, dy.len());
                for ((o, d), y) in ga.iter_mut().zip(dy).zip(bv) {
                    *o = *o + *d * *y;
                }
                let gb = slot(g, *b, dy.len());
                for ((o, d), x) in gb.iter_mut().zip(dy).zip(av) {
                    *o = *o + *d * *x;
                }
            }
            Op::Scale { x, s } => {
                let sv = self.scalar(*s);
                let xv = self.value(*x);
                let ds = dy.iter().zip(xv).fold(T::zero(), |acc, (d, v)| acc + *d * *v);
                let gx = slot(g, *x, dy.len());
                for (o, d) in gx.iter_mut().zip(dy) {
                    *o = *o + *d * sv;
                }
                let gs = slot(g, *s, 1);
                gs[0] = gs[0] + ds;
            }
            Op::ScaleConst { x, c } => {
                let gx = slot(g, *x, dy.len());
                for (o, d) in gx.iter_mut().zip(dy) {
                    *o = *o + *d * *c;
                }
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = self.numel(*x);
                    add_into(slot(g, *x, n), &dy[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                let n = self.numel(*x);
                let gx = slot(g, *x, n);
                add_into(&mut gx[*start..*start + dy.len()], dy);
            }
            Op::Gather { x, idx } => {
                let n = self.numel(*x);
                let gx = slot(g, *x, n);
                for (d, &j) in dy.iter().zip(idx) {
                    gx[j] = gx[j] + *d;
                }
            }
            Op::ScatterAdd { x, idx } => {
                let gx = slot(g, *x, idx.len());
                for (o, &j) in gx.iter_mut().zip(idx) {
                    *o = *o + dy[j];
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = slot(g, *x, dy.len());
                for ((o, d), v) in gx.iter_mut().zip(dy).zip(xv) {
                    if *v > T::zero() {
                        *o = *o + *d;
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = slot(g, *x, dy.len());
                for ((o, d), y) in gx.iter_mut().zip(dy).zip(&node.data) {
                    *o = *o + *d * (T::one() - *y * *y);
                }
            }
            Op::Sigmoid(x) => {
                let gx = slot(g, *x, dy.len());
                for ((o, d), y) in gx.iter_mut().zip(dy).zip(&node.data) {
                    *o = *o + *d * *y * (T::one() - *y);
                }
            }
            Op::Dot(a, b) => {
                let d = dy[0];
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = slot(g, *a, av.len());
                for (o, y) in ga.iter_mut().zip(bv) {
                    *o = *o + d * *y;
                }
                let gb = slot(g, *b, bv.len());
                for (o, x) in gb.iter_mut().zip(av) {
                    *o = *o + d * *x;
                }
            }
            Op::SumElements(x) => {
                let n = self.numel(*x);
                let gx = slot(g, *x, n);
                for o in gx.iter_mut() {
                    *o = *o + dy[0];
                }
            }
            Op::GroupedSoftmax { x, groups } => {
                let y = &node.data;
                let gx = slot(g, *x, y.len());
                for grp in groups {
                    let inner = grp.iter().fold(T::zero(), |acc, &j| acc + y[j] * dy[j]);
                    for &j in grp {
                        gx[j] = gx[j] + y[j] * (dy[j] - inner);
                    }
                }
            }
            Op::LstmCell { x, state, w, b, gates } => self.backprop_lstm(node, *x, *state, *w, *b, gates, dy, g),
            Op::Bce { p, labels, pos_weight } => {
                let eps = T::lit(BCE_EPSILON);
                let one = T::one();
                let scale = dy[0] / T::from_usize(labels.len()).unwrap();
                let pv = self.value(*p);
                let gp = slot(g, *p, labels.len());
                for ((o, v), y) in gp.iter_mut().zip(pv).zip(labels) {
                    let pc = v.max(eps).min(one - eps);
                    let d = -(*pos_weight * *y / pc) + (one - *y) / (one - pc);
                    *o = *o + scale * d;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        node: &Node<T>,
        x: Var,
        state: Var,
        w: Var,
        b: Var,
        gates: &[T],
        dy: &[T],
        g: &mut [Option<Vec<T>>],
    ) {
        let n = node.data.len() / 2;
        let m = self.numel(x);
        let cols = m + n;
        let xv = self.value(x);
        let sv = self.value(state);
        let wv = self.value(w);
        let (h_prev, c_prev) = sv.split_at(n);
        let (dh, dc_out) = dy.split_at(n);
        let one = T::one();

        let mut dz = vec![T::zero(); 4 * n];
        let mut dc_prev = vec![T::zero(); n];
        for j in 0..n {
            let (i, f, o, gg) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            let c = node.data[n + j];
            let tc = c.tanh();
            let dc = dc_out[j] + dh[j] * o * (one - tc * tc);
            let d_o = dh[j] * tc;
            let d_i = dc * gg;
            let d_g = dc * i;
            let d_f = dc * c_prev[j];
            dc_prev[j] = dc * f;
            dz[j] = d_i * i * (one - i);
            dz[n + j] = d_f * f * (one - f);
            dz[2 * n + j] = d_o * o * (one - o);
            dz[3 * n + j] = d_g * (one - gg * gg);
        }

        {
            let gw = slot(g, w, 4 * n * cols);
            for (r, d) in dz.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                let row = &mut gw[r * cols..(r + 1) * cols];
                for (o, v) in row[..m].iter_mut().zip(xv) {
                    *o = *o + *d * *v;
                }
                for (o, v) in row[m..].iter_mut().zip(h_prev) {
                    *o = *o + *d * *v;
                }
            }
        }
        add_into(slot(g, b, 4 * n), &dz);

        let mut dx = vec![T::zero(); m];
        let mut dh_prev = vec![T::zero(); n];
        for (r, d) in dz.iter().enumerate() {
            if *d == T::zero() {
                continue;
            }
            let row = &wv[r * cols..(r + 1) * cols];
            for (o, v) in dx.iter_mut().zip(&row[..m]) {
                *o = *o + *v * *d;
            }
            for (o, v) in dh_prev.iter_mut().zip(&row[m..]) {
                *o = *o + *v * *d;
            }
        }
        add_into(slot(g, x, m), &dx);
        let gs = slot(g, state, 2 * n);
        add_into(&mut gs[..n], &dh_prev);
        add_into(&mut gs[n..], &dc_prev);
    }
}

/// Dot product over eight interleaved partial sums.
#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let x: &[T; 8] = x.try_into().unwrap();
        let y: &[T; 8] = y.try_into().unwrap();
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn slot<T: Real>(g: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut Vec<T> {
    g[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a = *a + *x;
    }
}
