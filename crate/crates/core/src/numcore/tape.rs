//! Reverse-mode differentiation over whole matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! referenced by id rather than copied, and `backward` accumulates their
//! gradients straight into a fresh [`Gradients`] buffer. Frozen parameters
//! and plain inputs are pruned from the backward sweep.

use super::matrix::{gemm, sigmoid_scalar, softmax_in_place, Matrix, PROB_FLOOR};
use super::{Gradients, NumError, ParamId, ParamSet};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// Test hook: forward is an ordinary product, backward propagates through
    /// the *untransposed* right operand.
    #[cfg(test)]
    MatMulBadGrad(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    ColSlice(Var, usize),
    ScaleRows(Var, Var),
    SoftmaxRows(Var),
    Nll(Var, Vec<usize>),
    SumAll(Var),
    AddMany(Vec<Var>),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    clamped: usize,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape { params, nodes: Vec::new(), clamped: 0 }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of log evaluations that hit the probability floor.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(*id).value,
            _ => self.nodes[v.0].value.as_ref().expect("non-param node carries a value"),
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, value: Option<Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Some(value), Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let frozen = self.params.get(id).frozen;
        self.push(None, Op::Param(id), !frozen)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} x {:?}", av.shape(), bv.shape());
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        gemm(1.0, av, false, bv, false, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(Some(out), Op::MatMul(a, b), ng)
    }

    #[cfg(test)]
    pub(crate) fn matmul_bad_grad(&mut self, a: Var, b: Var) -> Var {
        let v = self.matmul(a, b);
        self.nodes[v.0].op = Op::MatMulBadGrad(a, b);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape");
        let mut out = av.clone();
        out.add_scaled(bv, 1.0);
        let ng = self.needs(a) || self.needs(b);
        self.push(Some(out), Op::Add(a, b), ng)
    }

    /// Adds a 1xN row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!((1, av.cols()), bv.shape(), "add_row shape");
        let mut out = av.clone();
        let b = bv.data();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(b) {
                *x += y;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        self.push(Some(out), Op::AddRow(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape");
        let ng = self.needs(a) || self.needs(b);
        self.push(Some(out), Op::Mul(a, b), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        let ng = self.needs(a);
        self.push(Some(out), Op::OneMinus(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        let ng = self.needs(a);
        self.push(Some(out), Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(Some(out), Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(Some(out), Op::Relu(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols rows");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Some(out), Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row lookup, as used by embeddings.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let out = self.value(table).select_rows(indices);
        let ng = self.needs(table);
        self.push(Some(out), Op::Gather(table, indices.to_vec()), ng)
    }

    /// Column `c` of `a` as an Nx1 matrix.
    pub fn col_slice(&mut self, a: Var, c: usize) -> Var {
        let av = self.value(a);
        let out = Matrix::from_vec(av.rows(), 1, av.column(c)).expect("shape");
        let ng = self.needs(a);
        self.push(Some(out), Op::ColSlice(a, c), ng)
    }

    /// Multiplies row `i` of `m` by the scalar `col[i, 0]`.
    pub fn scale_rows(&mut self, m: Var, col: Var) -> Var {
        let (mv, cv) = (self.value(m), self.value(col));
        assert_eq!(cv.shape(), (mv.rows(), 1), "scale_rows shape");
        let mut out = mv.clone();
        for r in 0..out.rows() {
            let s = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.needs(m) || self.needs(col);
        self.push(Some(out), Op::ScaleRows(m, col), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.needs(a);
        self.push(Some(out), Op::SoftmaxRows(a), ng)
    }

    /// Mean over rows of `-ln max(p[r, target[r]], floor)`; a 1x1 node.
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Var {
        let pv = self.value(probs);
        assert_eq!(pv.rows(), targets.len(), "nll targets");
        let mut total = 0.0;
        let mut clamped = 0;
        for (r, &t) in targets.iter().enumerate() {
            let p = pv.get(r, t);
            if p < PROB_FLOOR {
                clamped += 1;
            }
            total -= p.max(PROB_FLOOR).ln();
        }
        let n = targets.len().max(1) as f64;
        self.clamped += clamped;
        let ng = self.needs(probs);
        self.push(Some(Matrix::filled(1, 1, total / n)), Op::Nll(probs, targets.to_vec()), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Some(Matrix::filled(1, 1, s)), Op::SumAll(a), ng)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_many(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_scaled(self.value(p), 1.0);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Some(out), Op::AddMany(parts.to_vec()), ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.needs(a);
        self.push(Some(out), Op::Scale(a, factor), ng)
    }

    /// Gradients of the scalar node `loss` with respect to every unfrozen
    /// parameter. Frozen parameters get an all-zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NumError::Usage("backward called without a recorded forward pass".into()));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumError::Usage(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut node_grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        node_grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        let mut sink = Sink { nodes: &self.nodes, node_grads: &mut node_grads[..], grads: &mut grads };
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = sink.node_grads[idx].take() else { continue };
            self.backprop_node(node, dy, &mut sink);
        }
        Ok(grads)
    }

    fn backprop_node(&self, node: &Node, dy: Matrix, sink: &mut Sink<'_>) {
        let y = || node.value.as_ref().expect("op value");
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = sink.slot(*a) {
                    gemm(1.0, &dy, false, bv, true, 1.0, ga);
                }
                if let Some(gb) = sink.slot(*b) {
                    gemm(1.0, av, true, &dy, false, 1.0, gb);
                }
            }
            #[cfg(test)]
            Op::MatMulBadGrad(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = sink.slot(*a) {
                    gemm(1.0, &dy, false, bv, false, 1.0, ga);
                }
                if let Some(gb) = sink.slot(*b) {
                    gemm(1.0, av, true, &dy, false, 1.0, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = sink.slot(v) {
                        g.add_scaled(&dy, 1.0);
                    }
                }
            }
            Op::AddMany(parts) => {
                for &v in parts {
                    if let Some(g) = sink.slot(v) {
                        g.add_scaled(&dy, 1.0);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(g) = sink.slot(*a) {
                    g.add_scaled(&dy, 1.0);
                }
                if let Some(g) = sink.slot(*b) {
                    let gb = g.data_mut();
                    for r in 0..dy.rows() {
                        for (acc, d) in gb.iter_mut().zip(dy.row(r)) {
                            *acc += d;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(g) = sink.slot(*a) {
                    for ((acc, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(bv.data()) {
                        *acc += d * o;
                    }
                }
                if let Some(g) = sink.slot(*b) {
                    for ((acc, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(av.data()) {
                        *acc += d * o;
                    }
                }
            }
            Op::OneMinus(a) => {
                if let Some(g) = sink.slot(*a) {
                    g.add_scaled(&dy, -1.0);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(g) = sink.slot(*a) {
                    for ((acc, d), s) in g.data_mut().iter_mut().zip(dy.data()).zip(y().data()) {
                        *acc += d * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(g) = sink.slot(*a) {
                    for ((acc, d), t) in g.data_mut().iter_mut().zip(dy.data()).zip(y().data()) {
                        *acc += d * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(g) = sink.slot(*a) {
                    for ((acc, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(y().data()) {
                        if *o > 0.0 {
                            *acc += d;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if let Some(g) = sink.slot(p) {
                        for r in 0..dy.rows() {
                            let src = &dy.row(r)[offset..offset + width];
                            for (acc, d) in g.row_mut(r).iter_mut().zip(src) {
                                *acc += d;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::Gather(table, indices) => {
                if let Some(g) = sink.slot(*table) {
                    for (r, &i) in indices.iter().enumerate() {
                        for (acc, d) in g.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *acc += d;
                        }
                    }
                }
            }
            Op::ColSlice(a, c) => {
                if let Some(g) = sink.slot(*a) {
                    for r in 0..dy.rows() {
                        let cur = g.get(r, *c);
                        g.set(r, *c, cur + dy.data()[r]);
                    }
                }
            }
            Op::ScaleRows(m, col) => {
                let (mv, cv) = (self.value(*m), self.value(*col));
                if let Some(g) = sink.slot(*m) {
                    for r in 0..dy.rows() {
                        let s = cv.data()[r];
                        for (acc, d) in g.row_mut(r).iter_mut().zip(dy.row(r)) {
                            *acc += d * s;
                        }
                    }
                }
                if let Some(g) = sink.slot(*col) {
                    for r in 0..dy.rows() {
                        let dot: f64 = dy.row(r).iter().zip(mv.row(r)).map(|(d, x)| d * x).sum();
                        g.data_mut()[r] += dot;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let p = y();
                if let Some(g) = sink.slot(*a) {
                    for r in 0..dy.rows() {
                        let (pr, dr) = (p.row(r), dy.row(r));
                        let dot: f64 = pr.iter().zip(dr).map(|(x, d)| x * d).sum();
                        for ((acc, x), d) in g.row_mut(r).iter_mut().zip(pr).zip(dr) {
                            *acc += x * (d - dot);
                        }
                    }
                }
            }
            Op::Nll(probs, targets) => {
                let pv = self.value(*probs);
                let upstream = dy.data()[0];
                let n = targets.len().max(1) as f64;
                if let Some(g) = sink.slot(*probs) {
                    for (r, &t) in targets.iter().enumerate() {
                        let p = pv.get(r, t);
                        if p >= PROB_FLOOR {
                            let cur = g.get(r, t);
                            g.set(r, t, cur - upstream / (n * p));
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let upstream = dy.data()[0];
                if let Some(g) = sink.slot(*a) {
                    g.data_mut().iter_mut().for_each(|x| *x += upstream);
                }
            }
            Op::Scale(a, f) => {
                if let Some(g) = sink.slot(*a) {
                    g.add_scaled(&dy, *f);
                }
            }
        }
    }
}

/// Split borrow of the gradient destinations during the backward sweep.
struct Sink<'a> {
    nodes: &'a [Node],
    node_grads: &'a mut [Option<Matrix>],
    grads: &'a mut Gradients,
}

impl Sink<'_> {
    fn slot(&mut self, v: Var) -> Option<&mut Matrix> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        match node.op {
            Op::Param(id) => Some(self.grads.get_mut(id)),
            _ => {
                let shape = node.value.as_ref().expect("op value").shape();
                Some(self.node_grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> (ParamSet, ParamId, ParamId) {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.5]]));
        let k = ps.add("k", Matrix::from_rows(&[vec![1.5, 2.5]]));
        (ps, w, k)
    }

    #[test]
    fn sum_of_params_gives_ones() {
        let (ps, w, k) = toy_params();
        let mut t = Tape::new(&ps);
        let wv = t.param(w);
        let loss = t.sum_all(wv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), &Matrix::filled(2, 2, 1.0));
        assert_eq!(g.get(k), &Matrix::zeros(1, 2));
    }

    #[test]
    fn frozen_param_gets_zero_gradient() {
        let (mut ps, w, _) = toy_params();
        ps.set_frozen(w, true);
        let mut t = Tape::new(&ps);
        let wv = t.param(w);
        let sq = t.mul(wv, wv);
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), &Matrix::zeros(2, 2));
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let (ps, _, _) = toy_params();
        let t = Tape::new(&ps);
        assert!(matches!(t.backward(Var(0)), Err(NumError::Usage(_))));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (ps, w, _) = toy_params();
        let mut t = Tape::new(&ps);
        let wv = t.param(w);
        assert!(matches!(t.backward(wv), Err(NumError::Usage(_))));
    }

    #[test]
    fn nll_through_softmax_matches_closed_form() {
        // d/dx [-ln softmax(x)_t] = softmax(x) - onehot(t)
        let mut ps = ParamSet::new();
        let x = ps.add("x", Matrix::from_rows(&[vec![0.2, -1.0, 0.7]]));
        let mut t = Tape::new(&ps);
        let xv = t.param(x);
        let p = t.softmax_rows(xv);
        let loss = t.nll(p, &[2]);
        let g = t.backward(loss).unwrap();
        let probs = t.value(p).clone();
        for j in 0..3 {
            let expect = probs.get(0, j) - if j == 2 { 1.0 } else { 0.0 };
            assert!((g.get(x).get(0, j) - expect).abs() < 1e-12);
        }
    }
}
