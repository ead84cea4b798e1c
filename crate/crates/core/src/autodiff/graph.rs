//! Reverse-mode tape over dense row-major batches.
//!
//! Every node holds an `n × m` array of `f64`. Rows are samples (or stacked
//! copies of samples for input tangents), columns are features. Operations
//! are recorded in creation order, so the node list is already a valid
//! topological order for the backward sweep.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::AutodiffError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LeafKind {
    Constant,
    Param,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf(LeafKind),
    /// `x · wᵀ` with `x: n×k`, `w: m×k`.
    MatMulT(Var, Var),
    /// `x + b` with `b: 1×m` broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `tile(a, k) ⊙ b` with `a: n×m`, `b: kn×m`.
    MulTiled(Var, Var),
    /// `x ⊙ c` with `c: n×1` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Tanh(Var),
    Relu(Var),
    ReluPow(Var, u32),
    Step(Var),
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    Ln(Var),
    /// Elementwise quotient; the divisor may be `1×1`.
    Div(Var, Var),
    /// Sum of the `k` vertical blocks of a `kn×m` array.
    SumTiles(Var, usize),
    /// `k` vertical copies of an `n×m` array.
    Tile(Var, usize),
    SliceRows(Var, usize, usize),
    Col(Var, usize),
    Concat(Vec<Var>),
    /// Per-row matrix-vector product: row `i` of the coefficient node holds an
    /// `r_out × r_in` matrix in row-major order.
    MatVec(Var, Var, usize),
    /// Per-row inner product, `n×r · n×r → n×1`.
    RowDot(Var, Var),
    Sum(Var),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMulT(..) => "matmul_t",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulTiled(..) => "mul_tiled",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::ReluPow(..) => "relu_pow",
            Op::Step(..) => "step",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Sqrt(..) => "sqrt",
            Op::Ln(..) => "ln",
            Op::Div(..) => "div",
            Op::SumTiles(..) => "sum_tiles",
            Op::Tile(..) => "tile",
            Op::SliceRows(..) => "slice_rows",
            Op::Col(..) => "col",
            Op::Concat(..) => "concat",
            Op::MatVec(..) => "matvec",
            Op::RowDot(..) => "row_dot",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Array2<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Recorded computation. Parameters are leaves created with [`Graph::param`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `var`, with zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(var).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn tile(a: &Array2<f64>, k: usize) -> Array2<f64> {
    let (n, m) = a.dim();
    let mut out = Array2::zeros((k * n, m));
    for b in 0..k {
        out.slice_mut(s![b * n..(b + 1) * n, ..]).assign(a);
    }
    out
}

fn sum_tiles(a: &Array2<f64>, k: usize) -> Array2<f64> {
    let kn = a.nrows();
    let n = kn / k;
    let mut out = a.slice(s![0..n, ..]).to_owned();
    for b in 1..k {
        out += &a.slice(s![b * n..(b + 1) * n, ..]);
    }
    out
}

fn step(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn relu_pow(v: f64, k: u32) -> f64 {
    if v > 0.0 {
        v.powi(k as i32)
    } else {
        0.0
    }
}

fn matvec(coef: &Array2<f64>, v: &Array2<f64>, r_out: usize) -> Array2<f64> {
    let n = v.nrows();
    let r_in = v.ncols();
    let mut out = Array2::zeros((n, r_out));
    Zip::from(out.rows_mut())
        .and(coef.rows())
        .and(v.rows())
        .for_each(|mut o, c, x| {
            for i in 0..r_out {
                let mut acc = 0.0;
                for j in 0..r_in {
                    acc += c[i * r_in + j] * x[j];
                }
                o[i] = acc;
            }
        });
    out
}

fn matvec_transpose(coef: &Array2<f64>, g: &Array2<f64>, r_in: usize) -> Array2<f64> {
    let n = g.nrows();
    let r_out = g.ncols();
    let mut out = Array2::zeros((n, r_in));
    Zip::from(out.rows_mut())
        .and(coef.rows())
        .and(g.rows())
        .for_each(|mut o, c, y| {
            for i in 0..r_out {
                let gi = y[i];
                if gi != 0.0 {
                    for j in 0..r_in {
                        o[j] += c[i * r_in + j] * gi;
                    }
                }
            }
        });
    out
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

    /// Bytes held by node values.
    pub fn bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * std::mem::size_of::<f64>()).sum()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(LeafKind::Constant), false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Trainable leaf; its adjoint is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(LeafKind::Param), true)
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf(LeafKind::Param))
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (n, k) = self.shape(x);
        let (m, k2) = self.shape(w);
        assert_eq!(k, k2, "matmul_t: {n}x{k} · ({m}x{k2})ᵀ");
        let value = self.value(x).dot(&self.value(w).t());
        let rg = self.rg(&[x, w]);
        self.push(value, Op::MatMulT(x, w), rg)
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (_, m) = self.shape(x);
        assert_eq!(self.shape(b), (1, m), "add_row: bias must be 1x{m}");
        let value = self.value(x) + &self.value(b).row(0);
        let rg = self.rg(&[x, b]);
        self.push(value, Op::AddRow(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn mul_tiled(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.shape(a);
        let (kn, m2) = self.shape(b);
        assert!(m == m2 && n > 0 && kn % n == 0, "mul_tiled: {n}x{m} vs {kn}x{m2}");
        let k = kn / n;
        let mut value = self.value(b).clone();
        let av = self.value(a);
        for blk in 0..k {
            let mut part = value.slice_mut(s![blk * n..(blk + 1) * n, ..]);
            part *= av;
        }
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MulTiled(a, b), rg)
    }

    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let (n, _) = self.shape(x);
        assert_eq!(self.shape(c), (n, 1), "mul_col: column must be {n}x1");
        let value = self.value(x) * self.value(c);
        let rg = self.rg(&[x, c]);
        self.push(value, Op::MulCol(x, c), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) * c;
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x) + c;
        let rg = self.rg(&[x]);
        self.push(value, Op::Offset(x, c), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// `max(0, x)^k`; `k = 1` is plain ReLU, `k = 0` the Heaviside step.
    pub fn relu_pow(&mut self, x: Var, k: u32) -> Var {
        match k {
            0 => self.step(x),
            1 => self.relu(x),
            _ => {
                let value = self.value(x).mapv(|v| relu_pow(v, k));
                let rg = self.rg(&[x]);
                self.push(value, Op::ReluPow(x, k), rg)
            }
        }
    }

    /// Heaviside step with `step(0) = 0`; carries no derivative.
    pub fn step(&mut self, x: Var) -> Var {
        let value = step(self.value(x));
        self.push(value, Op::Step(x), false)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(value, Op::Square(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::abs);
        let rg = self.rg(&[x]);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::sqrt);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sqrt(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::ln);
        let rg = self.rg(&[x]);
        self.push(value, Op::Ln(x), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let sb = self.shape(b);
        assert!(
            sb == (1, 1) || sb == self.shape(a),
            "div: divisor must be 1x1 or match the dividend"
        );
        let value = if sb == (1, 1) {
            self.value(a) / self.value(b)[[0, 0]]
        } else {
            self.value(a) / self.value(b)
        };
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Div(a, b), rg)
    }

    pub fn sum_tiles(&mut self, x: Var, k: usize) -> Var {
        let (kn, _) = self.shape(x);
        assert!(k > 0 && kn % k == 0, "sum_tiles: {kn} rows not divisible by {k}");
        let value = sum_tiles(self.value(x), k);
        let rg = self.rg(&[x]);
        self.push(value, Op::SumTiles(x, k), rg)
    }

    pub fn tile(&mut self, x: Var, k: usize) -> Var {
        if k == 1 {
            return x;
        }
        let value = tile(self.value(x), k);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tile(x, k), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, _) = self.shape(x);
        assert!(start + len <= n, "slice_rows out of range");
        if start == 0 && len == n {
            return x;
        }
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[x]);
        self.push(value, Op::SliceRows(x, start, len), rg)
    }

    pub fn col(&mut self, x: Var, j: usize) -> Var {
        let (_, m) = self.shape(x);
        assert!(j < m, "col {j} out of range for width {m}");
        if m == 1 {
            return x;
        }
        let value = self.value(x).slice(s![.., j..j + 1]).to_owned();
        let rg = self.rg(&[x]);
        self.push(value, Op::Col(x, j), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row count mismatch");
        let rg = self.rg(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Per-row `M_i · v_i`, with `coef` holding `M_i` flattened row-major.
    pub fn matvec(&mut self, coef: Var, v: Var, r_out: usize) -> Var {
        let (n, r_in) = self.shape(v);
        assert_eq!(self.shape(coef), (n, r_out * r_in), "matvec: coefficient shape");
        let value = matvec(self.value(coef), self.value(v), r_out);
        let rg = self.rg(&[coef, v]);
        self.push(value, Op::MatVec(coef, v, r_out), rg)
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "row_dot: shape mismatch");
        let prod = self.value(a) * self.value(b);
        let value = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::RowDot(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), pairwise_sum(self.value(x)));
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Replaces the value of a leaf; call [`Graph::recompute`] afterwards.
    pub fn set_leaf(&mut self, v: Var, value: Array2<f64>) {
        assert!(matches!(self.nodes[v.0].op, Op::Leaf(_)), "set_leaf on an interior node");
        assert_eq!(self.nodes[v.0].value.dim(), value.dim(), "set_leaf: shape change");
        self.nodes[v.0].value = value;
    }

    /// Re-evaluates every interior node from the current leaf values.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            if let Some(v) = self.eval_op(&op) {
                self.nodes[i].value = v;
            }
        }
    }

    /// A fresh copy of the tape with all interior values recomputed.
    pub fn replay(&self) -> Graph {
        let mut g = self.clone();
        g.recompute();
        g
    }

    fn eval_op(&self, op: &Op) -> Option<Array2<f64>> {
        let v = |x: &Var| self.value(*x);
        Some(match op {
            Op::Leaf(_) => return None,
            Op::MatMulT(x, w) => v(x).dot(&v(w).t()),
            Op::AddRow(x, b) => v(x) + &v(b).row(0),
            Op::Add(a, b) => v(a) + v(b),
            Op::Sub(a, b) => v(a) - v(b),
            Op::Mul(a, b) => v(a) * v(b),
            Op::MulTiled(a, b) => {
                let n = v(a).nrows();
                let k = v(b).nrows() / n;
                tile(v(a), k) * v(b)
            }
            Op::MulCol(x, c) => v(x) * v(c),
            Op::Scale(x, c) => v(x) * *c,
            Op::Offset(x, c) => v(x) + *c,
            Op::Tanh(x) => v(x).mapv(f64::tanh),
            Op::Relu(x) => v(x).mapv(|t| t.max(0.0)),
            Op::ReluPow(x, k) => v(x).mapv(|t| relu_pow(t, *k)),
            Op::Step(x) => step(v(x)),
            Op::Square(x) => v(x).mapv(|t| t * t),
            Op::Abs(x) => v(x).mapv(f64::abs),
            Op::Sqrt(x) => v(x).mapv(f64::sqrt),
            Op::Ln(x) => v(x).mapv(f64::ln),
            Op::Div(a, b) => {
                if v(b).dim() == (1, 1) {
                    v(a) / v(b)[[0, 0]]
                } else {
                    v(a) / v(b)
                }
            }
            Op::SumTiles(x, k) => sum_tiles(v(x), *k),
            Op::Tile(x, k) => tile(v(x), *k),
            Op::SliceRows(x, st, len) => v(x).slice(s![*st..*st + *len, ..]).to_owned(),
            Op::Col(x, j) => v(x).slice(s![.., *j..*j + 1]).to_owned(),
            Op::Concat(parts) => {
                let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| v(p).view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("concat")
            }
            Op::MatVec(c, x, r) => matvec(v(c), v(x), *r),
            Op::RowDot(a, b) => (v(a) * v(b)).sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::Sum(x) => Array2::from_elem((1, 1), pairwise_sum(v(x))),
        })
    }

    /// Reverse sweep from a `1×1` root seeded with `seed`.
    pub fn backward(&self, root: Var, seed: f64) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarRoot {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::from_elem((1, 1), seed));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let want = |x: &Var| self.nodes[x.0].requires_grad;
            match &node.op {
                Op::Leaf(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMulT(x, w) => {
                    if want(x) {
                        acc(&mut grads, *x, g.dot(self.value(*w)));
                    }
                    if want(w) {
                        acc(&mut grads, *w, g.t().dot(self.value(*x)));
                    }
                }
                Op::AddRow(x, b) => {
                    if want(b) {
                        acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if want(x) {
                        acc(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if want(a) && want(b) {
                        acc(&mut grads, *a, g.clone());
                        acc(&mut grads, *b, g);
                    } else if want(a) {
                        acc(&mut grads, *a, g);
                    } else if want(b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if want(b) {
                        acc(&mut grads, *b, -&g);
                    }
                    if want(a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if want(a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if want(b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::MulTiled(a, b) => {
                    let av = self.value(*a);
                    let n = av.nrows();
                    let k = g.nrows() / n;
                    if want(a) {
                        let gb = &g * self.value(*b);
                        acc(&mut grads, *a, sum_tiles(&gb, k));
                    }
                    if want(b) {
                        let mut gb = g;
                        for blk in 0..k {
                            let mut part = gb.slice_mut(s![blk * n..(blk + 1) * n, ..]);
                            part *= av;
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::MulCol(x, c) => {
                    if want(c) {
                        let gc = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(&mut grads, *c, gc);
                    }
                    if want(x) {
                        acc(&mut grads, *x, g * self.value(*c));
                    }
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g * *c),
                Op::Offset(x, _) => acc(&mut grads, *x, g),
                Op::Tanh(x) => {
                    let y = &node.value;
                    let mut gx = g;
                    Zip::from(&mut gx).and(y).for_each(|gv, &yv| *gv *= 1.0 - yv * yv);
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &xv| {
                            if xv <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    acc(&mut grads, *x, gx);
                }
                Op::ReluPow(x, k) => {
                    let kf = *k as f64;
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &xv| *gv *= kf * relu_pow(xv, k - 1));
                    acc(&mut grads, *x, gx);
                }
                Op::Step(_) => {}
                Op::Square(x) => acc(&mut grads, *x, g * self.value(*x) * 2.0),
                Op::Abs(x) => acc(&mut grads, *x, g * self.value(*x).mapv(f64::signum_or_zero)),
                Op::Sqrt(x) => acc(&mut grads, *x, g / (&node.value * 2.0)),
                Op::Ln(x) => acc(&mut grads, *x, g / self.value(*x)),
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let scalar = bv.dim() == (1, 1);
                    if want(b) {
                        // d(a/b)/db = -(a/b)/b
                        let q = &node.value;
                        let gb = if scalar {
                            let t = (&g * q).sum() / bv[[0, 0]];
                            Array2::from_elem((1, 1), -t)
                        } else {
                            -(&g * q) / bv
                        };
                        acc(&mut grads, *b, gb);
                    }
                    if want(a) {
                        let ga = if scalar { g / bv[[0, 0]] } else { g / bv };
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::SumTiles(x, k) => acc(&mut grads, *x, tile(&g, *k)),
                Op::Tile(x, k) => acc(&mut grads, *x, sum_tiles(&g, *k)),
                Op::SliceRows(x, st, len) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![*st..*st + *len, ..]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::Col(x, j) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *j..*j + 1]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if want(p) {
                            acc(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::MatVec(c, x, _) => {
                    if want(c) {
                        let xv = self.value(*x);
                        let r_in = xv.ncols();
                        let r_out = g.ncols();
                        let mut gc = Array2::zeros(self.shape(*c));
                        Zip::from(gc.rows_mut())
                            .and(g.rows())
                            .and(xv.rows())
                            .for_each(|mut o, gr, xr| {
                                for i in 0..r_out {
                                    for j in 0..r_in {
                                        o[i * r_in + j] = gr[i] * xr[j];
                                    }
                                }
                            });
                        acc(&mut grads, *c, gc);
                    }
                    if want(x) {
                        let r_in = self.shape(*x).1;
                        acc(&mut grads, *x, matvec_transpose(self.value(*c), &g, r_in));
                    }
                }
                Op::RowDot(a, b) => {
                    if want(a) {
                        acc(&mut grads, *a, self.value(*b) * &g);
                    }
                    if want(b) {
                        acc(&mut grads, *b, self.value(*a) * &g);
                    }
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.shape(*x), g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Pairwise summation over all entries in row-major order.
pub fn pairwise_sum(a: &Array2<f64>) -> f64 {
    fn rec(xs: &[f64]) -> f64 {
        if xs.len() <= 32 {
            xs.iter().sum()
        } else {
            let mid = xs.len() / 2;
            rec(&xs[..mid]) + rec(&xs[mid..])
        }
    }
    match a.as_slice() {
        Some(xs) => rec(xs),
        None => {
            let v: Vec<f64> = a.iter().copied().collect();
            rec(&v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_form_gradient() {
        // loss = ‖W x‖², ∂loss/∂W = 2 W x xᵀ
        let mut g = Graph::new();
        let w_val = array![[0.3, -1.2], [0.7, 0.4], [2.0, -0.5]];
        let x_val = array![[1.5, -0.25]];
        let w = g.param(w_val.clone());
        let x = g.constant(x_val.clone());
        let y = g.matmul_t(x, w);
        let sq = g.square(y);
        let loss = g.sum(sq);
        let grads = g.backward(loss, 1.0).unwrap();
        let wx = w_val.dot(&x_val.t());
        let expected = wx.dot(&x_val) * 2.0;
        let got = grads.get(w).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let p = g.param(Array2::ones((2, 2)));
        let err = g.backward(p, 1.0).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarRoot { rows: 2, cols: 2 }));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(array![[0.0, 1.0, -1.0]]);
        let y = g.relu(x);
        let s = g.sum(y);
        let grads = g.backward(s, 1.0).unwrap();
        assert_eq!(grads.get(x).unwrap(), &array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut g = Graph::new();
        let x = g.param(array![[0.1, -0.3], [0.5, 0.9]]);
        let w = g.param(array![[0.2, 0.7], [-1.1, 0.4]]);
        let h = g.matmul_t(x, w);
        let t = g.tanh(h);
        let sq = g.square(t);
        let s = g.sum(sq);
        let r = g.sqrt(s);
        let replayed = g.replay();
        assert_eq!(g.scalar(r).to_bits(), replayed.scalar(r).to_bits());
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let mut g = Graph::new();
        // one row holding a 2x3 matrix
        let c = g.constant(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let v = g.param(array![[1.0, -1.0, 2.0]]);
        let y = g.matvec(c, v, 2);
        assert_eq!(g.value(y), &array![[5.0, 11.0]]);
        let s = g.sum(y);
        let grads = g.backward(s, 1.0).unwrap();
        assert_eq!(grads.get(v).unwrap(), &array![[5.0, 7.0, 9.0]]);
    }
}
