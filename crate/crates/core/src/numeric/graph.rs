//! Tape-based reverse-mode differentiation over vectors.
//!
//! Matrices only ever appear as parameters, so every node on the tape holds a
//! flat `Vec<f64>`. Parameters are read in place from the [`ParamStore`]; their
//! gradients land in a [`Gradients`] value returned by [`Graph::backward`] and
//! never touch the store, which keeps a `Graph` usable from several threads
//! over one shared, frozen store.

use super::tensor::{check_finite, log_sum_exp, sigmoid, softmax};
use super::{Gradients, NumericError, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(ParamId, Var),
    MatVecRows(ParamId, Vec<usize>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    LogSumExp(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
}

type OpResult = Result<Var, NumericError>;

fn shape_err(op: &'static str, detail: String) -> NumericError {
    NumericError::Shape { op, detail }
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op_name: &'static str, value: Vec<f64>, op: Op) -> OpResult {
        check_finite(op_name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericError> {
        let (la, lb) = (self.len(a), self.len(b));
        if la != lb {
            return Err(shape_err(op, format!("lengths {la} and {lb}")));
        }
        Ok(())
    }

    /// A constant; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> OpResult {
        self.push("input", value, Op::Input)
    }

    /// A whole parameter read as a flat vector (biases, scoring vectors).
    pub fn param(&mut self, id: ParamId) -> OpResult {
        let value = self.params.value(id).data().to_vec();
        self.push("param", value, Op::Param(id))
    }

    /// Embedding lookup: one row of a 2-D parameter.
    pub fn row(&mut self, id: ParamId, row: usize) -> OpResult {
        let t = self.params.value(id);
        if t.shape().len() != 2 {
            return Err(shape_err("row", format!("parameter shape {:?}", t.shape())));
        }
        if row >= t.rows() {
            return Err(NumericError::Index {
                op: "row",
                index: row,
                len: t.rows(),
            });
        }
        let value = t.row(row).to_vec();
        self.push("row", value, Op::Row(id, row))
    }

    /// `W x` for a 2-D parameter `W`.
    pub fn matvec(&mut self, w: ParamId, x: Var) -> OpResult {
        let t = self.params.value(w);
        if t.shape().len() != 2 || t.cols() != self.len(x) {
            return Err(shape_err(
                "matvec",
                format!("{:?} x vector of {}", t.shape(), self.len(x)),
            ));
        }
        let xv = &self.nodes[x.0].value;
        let value = (0..t.rows()).map(|r| dot(t.row(r), xv)).collect();
        self.push("matvec", value, Op::MatVec(w, x))
    }

    /// `W[rows] x`: the product restricted to the selected rows of `W`.
    pub fn matvec_rows(&mut self, w: ParamId, rows: &[usize], x: Var) -> OpResult {
        let t = self.params.value(w);
        if t.shape().len() != 2 || t.cols() != self.len(x) {
            return Err(shape_err(
                "matvec_rows",
                format!("{:?} x vector of {}", t.shape(), self.len(x)),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(NumericError::Index {
                op: "matvec_rows",
                index: bad,
                len: t.rows(),
            });
        }
        let xv = &self.nodes[x.0].value;
        let value = rows.iter().map(|&r| dot(t.row(r), xv)).collect();
        self.push("matvec_rows", value, Op::MatVecRows(w, rows.to_vec(), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        self.same_len("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        self.same_len("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        self.same_len("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> OpResult {
        let value = self.value(a).iter().map(|x| x * c).collect();
        self.push("scale", value, Op::Scale(a, c))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> OpResult {
        let value = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push("one_minus", value, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> OpResult {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push("tanh", value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> OpResult {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> OpResult {
        let value = self.value(a).iter().map(|x| x.exp()).collect();
        self.push("exp", value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> OpResult {
        let value = self.value(a).iter().map(|x| x.ln()).collect();
        self.push("log", value, Op::Log(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> OpResult {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.len(p)).sum());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push("concat", value, Op::Concat(parts.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> OpResult {
        if self.len(a) == 0 {
            return Err(shape_err("softmax", "empty vector".into()));
        }
        let value = softmax(self.value(a));
        self.push("softmax", value, Op::Softmax(a))
    }

    /// `Σ_j weights[j] · items[j]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> OpResult {
        if self.len(weights) != items.len() || items.is_empty() {
            return Err(shape_err(
                "weighted_sum",
                format!("{} weights for {} items", self.len(weights), items.len()),
            ));
        }
        let dim = self.len(items[0]);
        if items.iter().any(|&v| self.len(v) != dim) {
            return Err(shape_err("weighted_sum", "items differ in length".into()));
        }
        let w = self.value(weights).to_vec();
        let mut value = vec![0.0; dim];
        for (wj, &item) in w.iter().zip(items) {
            for (acc, x) in value.iter_mut().zip(self.value(item)) {
                *acc += wj * x;
            }
        }
        self.push("weighted_sum", value, Op::WeightedSum(weights, items.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> OpResult {
        self.same_len("dot", a, b)?;
        let value = vec![dot(self.value(a), self.value(b))];
        self.push("dot", value, Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> OpResult {
        let value = vec![self.value(a).iter().sum()];
        self.push("sum", value, Op::Sum(a))
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> OpResult {
        let n = self.len(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NumericError::Index {
                op: "gather",
                index: bad,
                len: n,
            });
        }
        let v = self.value(a);
        let value = idx.iter().map(|&i| v[i]).collect();
        self.push("gather", value, Op::Gather(a, idx.to_vec()))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> OpResult {
        if self.len(a) == 0 {
            return Err(shape_err("log_sum_exp", "empty vector".into()));
        }
        let value = vec![log_sum_exp(self.value(a))];
        self.push("log_sum_exp", value, Op::LogSumExp(a))
    }

    /// Reverse sweep from a scalar node. Returns gradients for every
    /// parameter reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if self.len(loss) != 1 {
            return Err(NumericError::Contract(format!(
                "backward needs a scalar loss, got a vector of {}",
                self.len(loss)
            )));
        }
        let mut grads = Gradients::empty(self.params.len());
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let g = grads.slot(*id, dy.len());
                    g.iter_mut().zip(&dy).for_each(|(a, d)| *a += d);
                }
                Op::Row(id, row) => {
                    let t = self.params.value(*id);
                    let cols = t.cols();
                    let g = grads.slot(*id, t.len());
                    g[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&dy)
                        .for_each(|(a, d)| *a += d);
                }
                Op::MatVec(id, x) => {
                    let t = self.params.value(*id);
                    let cols = t.cols();
                    let xv = &self.nodes[x.0].value;
                    let g = grads.slot(*id, t.len());
                    for (r, d) in dy.iter().enumerate() {
                        if *d != 0.0 {
                            for (a, xc) in g[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *a += d * xc;
                            }
                        }
                    }
                    let gx = acc(&mut adj, *x, cols);
                    for (r, d) in dy.iter().enumerate() {
                        if *d != 0.0 {
                            for (a, w) in gx.iter_mut().zip(t.row(r)) {
                                *a += d * w;
                            }
                        }
                    }
                }
                Op::MatVecRows(id, rows, x) => {
                    let t = self.params.value(*id);
                    let cols = t.cols();
                    let xv = &self.nodes[x.0].value;
                    let g = grads.slot(*id, t.len());
                    for (&r, d) in rows.iter().zip(&dy) {
                        for (a, xc) in g[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *a += d * xc;
                        }
                    }
                    let gx = acc(&mut adj, *x, cols);
                    for (&r, d) in rows.iter().zip(&dy) {
                        for (a, w) in gx.iter_mut().zip(t.row(r)) {
                            *a += d * w;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, dy.len()), &dy, 1.0);
                    add_into(acc(&mut adj, *b, dy.len()), &dy, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut adj, *a, dy.len()), &dy, 1.0);
                    add_into(acc(&mut adj, *b, dy.len()), &dy, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = &self.nodes[b.0].value;
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), bb) in ga.iter_mut().zip(&dy).zip(bv) {
                        *g += d * bb;
                    }
                    let gb = acc(&mut adj, *b, dy.len());
                    for ((g, d), aa) in gb.iter_mut().zip(&dy).zip(&av) {
                        *g += d * aa;
                    }
                }
                Op::Scale(a, c) => add_into(acc(&mut adj, *a, dy.len()), &dy, *c),
                Op::OneMinus(a) => add_into(acc(&mut adj, *a, dy.len()), &dy, -1.0),
                Op::Tanh(a) => {
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), yy) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += d * (1.0 - yy * yy);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), yy) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += d * yy * (1.0 - yy);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), yy) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += d * yy;
                    }
                }
                Op::Log(a) => {
                    let xv = self.nodes[a.0].value.clone();
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), x) in ga.iter_mut().zip(&dy).zip(&xv) {
                        *g += d / x;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(acc(&mut adj, *p, n), &dy[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Softmax(a) => {
                    let inner = dot(&dy, y);
                    let ga = acc(&mut adj, *a, dy.len());
                    for ((g, d), yy) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += yy * (d - inner);
                    }
                }
                Op::WeightedSum(w, items) => {
                    let wv = self.nodes[w.0].value.clone();
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| dot(&dy, &self.nodes[it.0].value))
                        .collect();
                    add_into(acc(&mut adj, *w, wv.len()), &gw, 1.0);
                    for (it, wj) in items.iter().zip(&wv) {
                        add_into(acc(&mut adj, *it, dy.len()), &dy, *wj);
                    }
                }
                Op::Dot(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    add_into(acc(&mut adj, *a, bv.len()), &bv, dy[0]);
                    add_into(acc(&mut adj, *b, av.len()), &av, dy[0]);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    acc(&mut adj, *a, n).iter_mut().for_each(|g| *g += dy[0]);
                }
                Op::Gather(a, idx) => {
                    let n = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, n);
                    for (&i, d) in idx.iter().zip(&dy) {
                        ga[i] += d;
                    }
                }
                Op::LogSumExp(a) => {
                    let p = softmax(&self.nodes[a.0].value);
                    add_into(acc(&mut adj, *a, p.len()), &p, dy[0]);
                }
            }
        }
        for g in grads.per_param.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(grads)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(acc: &mut [f64], src: &[f64], c: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += c * s;
    }
}
