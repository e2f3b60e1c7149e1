use std::rc::Rc;

use super::matrix::{gemm, Matrix};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean pattern restricting a row softmax to the allowed entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SoftmaxMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), rows * cols);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            col_idx.extend((0..cols).filter(|&j| allowed[i * cols + j]));
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            allowed,
            row_ptr,
            col_idx,
        }
    }

    /// Allowed column indices of row `i`, ascending.
    #[inline]
    pub fn allowed_columns(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Number of allowed entries.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Whether products over this mask run faster as dense matrix products.
    fn prefers_dense(&self) -> bool {
        self.nnz() * 8 >= self.rows * self.cols
    }

    /// Dense matrix holding `values` (laid out like the allowed entries) and
    /// zeros elsewhere.
    fn scatter(&self, values: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let r = m.row_mut(i);
            for (&j, &v) in self.allowed_columns(i).iter().zip(&values[self.row_ptr[i]..self.row_ptr[i + 1]]) {
                r[j] = v;
            }
        }
        m
    }

    pub fn from_neighbor_lists(n: usize, neighbors: &[Vec<usize>]) -> Self {
        assert_eq!(neighbors.len(), n);
        let mut allowed = vec![false; n * n];
        for (i, ns) in neighbors.iter().enumerate() {
            for &j in ns {
                allowed[i * n + j] = true;
            }
        }
        Self::new(n, n, allowed)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }
}

type Derivative = Rc<dyn Fn(f64, f64) -> f64>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    AddOuter(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    Tanh(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var, f64),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    Pick(Var, usize, usize),
    Map(Var, Derivative),
    GraphAttention(Var, Var, Rc<SoftmaxMask>, f64),
    MaskedMatMul(Var, Var, Rc<SoftmaxMask>),
    Attend(Var, Var, Rc<SoftmaxMask>, f64, Rc<Vec<f64>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::AddOuter(..) => "add_outer",
            Op::MulScalarVar(..) => "mul_scalar_var",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ConcatCols(..) => "concat_cols",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Tanh(..) => "tanh",
            Op::Elu(..) => "elu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Transpose(..) => "transpose",
            Op::GatherRows(..) => "gather_rows",
            Op::Pick(..) => "pick",
            Op::Map(..) => "map",
            Op::GraphAttention(..) => "graph_attention",
            Op::MaskedMatMul(..) => "masked_matmul",
            Op::Attend(..) => "attend",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a leaf (constant or parameter). `None` when the leaf does
    /// not influence the loss through a differentiable path, and always for
    /// intermediate values, which are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` if none was produced.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

/// Reverse-mode tape over dense matrices.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: a, right: b }
}

fn accumulate(slot: &mut Option<Matrix>, shape: (usize, usize)) -> &mut Matrix {
    slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn add_into(slot: &mut Option<Matrix>, delta: &Matrix) {
    match slot {
        Some(g) => {
            for (a, b) in g.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *a += b;
            }
        }
        None => *slot = Some(delta.clone()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteValue { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::AddOuter(a, b)
            | Op::MulScalarVar(a, b) => vec![*a, *b],
            Op::ConcatCols(vs) => vs.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SoftmaxRows(a)
            | Op::Tanh(a)
            | Op::Elu(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Log(a, _)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::Pick(a, _, _)
            | Op::Map(a, _) => vec![*a],
            Op::GraphAttention(h, a, _, _) => vec![*h, *a],
            Op::MaskedMatMul(a, b, _) => vec![*a, *b],
            Op::Attend(h, a, ..) => vec![*h, *a],
        }
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        let v = self.push(value, Op::Leaf)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op.name(), sa, sb));
        }
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Matrix::from_vec(sa.0, sa.1, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a (n x c) + bias (1 x c)` broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(shape_err("add_row_broadcast", sa, sb));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for i in 0..sa.0 {
            for (o, x) in out.row_mut(i).iter_mut().zip(&b) {
                *o += x;
            }
        }
        self.push(out, Op::AddRowBroadcast(a, bias))
    }

    /// `col (n x 1) + row (1 x m)`, giving `out[i][j] = col[i] + row[j]`.
    pub fn add_outer(&mut self, col: Var, row: Var) -> Result<Var> {
        let (sc, sr) = (self.shape(col), self.shape(row));
        if sc.1 != 1 || sr.0 != 1 {
            return Err(shape_err("add_outer", sc, sr));
        }
        let c = self.value(col).as_slice();
        let r = self.value(row).as_slice();
        let out = Matrix::from_fn(sc.0, sr.1, |i, j| c[i] + r[j]);
        self.push(out, Op::AddOuter(col, row))
    }

    /// Multiplies every entry of `a` by the `1 x 1` variable `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(shape_err("mul_scalar_var", self.shape(a), ss));
        }
        let k = self.value(s).get(0, 0);
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::MulScalarVar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.shape(*first).0;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            let c = v.cols();
            for i in 0..rows {
                out.row_mut(i)[offset..offset + c].copy_from_slice(v.row(i));
            }
            offset += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows_value(self.value(a), None)?;
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise softmax over the entries allowed by `mask`; masked entries are 0.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<SoftmaxMask>) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(shape_err("masked_softmax_rows", self.shape(a), mask.shape()));
        }
        let out = softmax_rows_value(self.value(a), Some(&mask))?;
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Fused attention weights over a graph:
    /// `masked_softmax_rows(leaky_relu(H a_src 1ᵀ + 1 (H a_dst)ᵀ, slope))`
    /// where `a` is `[a_src; a_dst]` with shape `2d x 1` for `h` of shape
    /// `n x d`. Only the `n x n` result is stored.
    pub fn graph_attention(&mut self, h: Var, a: Var, mask: Rc<SoftmaxMask>, slope: f64) -> Result<Var> {
        let (n, d) = self.shape(h);
        if self.shape(a) != (2 * d, 1) {
            return Err(shape_err("graph_attention", (n, d), self.shape(a)));
        }
        if mask.shape() != (n, n) {
            return Err(shape_err("graph_attention", (n, n), mask.shape()));
        }
        let (src, dst) = attention_scores(self.value(h), self.value(a));
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let cols = mask.allowed_columns(i);
            if cols.is_empty() {
                return Err(AutodiffError::EmptySoftmaxRow { row: i });
            }
            let row = out.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for &j in cols {
                let x = src[i] + dst[j];
                let e = if x > 0.0 { x } else { slope * x };
                row[j] = e;
                max = max.max(e);
            }
            let mut total = 0.0;
            for &j in cols {
                let e = (row[j] - max).exp();
                row[j] = e;
                total += e;
            }
            for &j in cols {
                row[j] /= total;
            }
        }
        self.push(out, Op::GraphAttention(h, a, mask, slope))
    }

    /// `graph_attention(h, a, mask, slope) · h` without materializing the
    /// `n x n` weights; they are kept only on the mask entries.
    pub fn attend(&mut self, h: Var, a: Var, mask: Rc<SoftmaxMask>, slope: f64) -> Result<Var> {
        let (n, d) = self.shape(h);
        if self.shape(a) != (2 * d, 1) {
            return Err(shape_err("attend", (n, d), self.shape(a)));
        }
        if mask.shape() != (n, n) {
            return Err(shape_err("attend", (n, n), mask.shape()));
        }
        let vh = self.value(h);
        let (src, dst) = attention_scores(vh, self.value(a));
        let mut alpha = vec![0.0; mask.nnz()];
        let mut out = Matrix::zeros(n, d);
        let exps = FactoredExp::new(&dst, slope);
        for i in 0..n {
            let cols = mask.allowed_columns(i);
            if cols.is_empty() {
                return Err(AutodiffError::EmptySoftmaxRow { row: i });
            }
            let w = &mut alpha[mask.row_ptr[i]..mask.row_ptr[i + 1]];
            let max = cols
                .iter()
                .map(|&j| leaky(src[i] + dst[j], slope))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            match &exps {
                Some(f) => {
                    let (pos, neg) = f.row_factors(src[i], max, slope);
                    for (wk, &j) in w.iter_mut().zip(cols) {
                        let (p, q) = (pos * f.pos[j], neg * f.neg[j]);
                        *wk = if src[i] + dst[j] > 0.0 { p } else { q };
                        total += *wk;
                    }
                }
                None => {
                    for (wk, &j) in w.iter_mut().zip(cols) {
                        *wk = (leaky(src[i] + dst[j], slope) - max).exp();
                        total += *wk;
                    }
                }
            }
            w.iter_mut().for_each(|wk| *wk /= total);
        }
        if mask.prefers_dense() {
            gemm(1.0, &mask.scatter(&alpha), false, vh, false, 0.0, &mut out);
        } else {
            for i in 0..n {
                let w = &alpha[mask.row_ptr[i]..mask.row_ptr[i + 1]];
                let o = out.row_mut(i);
                for (wk, &j) in w.iter().zip(mask.allowed_columns(i)) {
                    for (ok, hk) in o.iter_mut().zip(vh.row(j)) {
                        *ok += wk * hk;
                    }
                }
            }
        }
        self.push(out, Op::Attend(h, a, mask, slope, Rc::new(alpha)))
    }

    /// `a · b` where entries of `a` outside `mask` are treated as zero.
    /// Those entries receive no gradient.
    pub fn masked_matmul(&mut self, a: Var, b: Var, mask: Rc<SoftmaxMask>) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 || mask.shape() != sa {
            return Err(shape_err("masked_matmul", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(sa.0, sb.1);
        for i in 0..sa.0 {
            let ar = va.row(i);
            let o = out.row_mut(i);
            for &j in mask.allowed_columns(i) {
                let w = ar[j];
                for (ok, bk) in o.iter_mut().zip(vb.row(j)) {
                    *ok += w * bk;
                }
            }
        }
        self.push(out, Op::MaskedMatMul(a, b, mask))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(elu);
        self.push(out, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::Log(a, floor))
    }

    /// `sqrt(max(x, 0))`; the gradient is zero where the output is zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0).sqrt());
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(AutodiffError::EmptyReduction);
        }
        let m = v.sum() / v.len() as f64;
        self.push(Matrix::scalar(m), Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Rows of `a` at the given indices (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: rows });
        }
        let out = self.value(a).select_rows(&idx);
        self.push(out, Op::GatherRows(a, idx))
    }

    /// The single entry `a[i][j]` as a `1 x 1` value.
    pub fn pick(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if i >= r || j >= c {
            return Err(AutodiffError::IndexOutOfRange {
                index: i * c + j,
                len: r * c,
            });
        }
        let out = Matrix::scalar(self.value(a).get(i, j));
        self.push(out, Op::Pick(a, i, j))
    }

    /// Elementwise map with a caller-supplied derivative `d(x, y)` where
    /// `y = f(x)`.
    pub fn map(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(out, Op::Map(a, Rc::new(derivative)))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let y = &node.value;
        fn unary(tape: &Tape, grads: &mut [Option<Matrix>], a: &Var, g: &Matrix, d: impl Fn(usize) -> f64) {
            if !tape.nodes[a.0].requires_grad {
                return;
            }
            let slot = accumulate(&mut grads[a.0], g.shape());
            for (k, (s, gk)) in slot.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                *s += gk * d(k);
            }
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], va.shape());
                    gemm(1.0, g, false, vb, true, 1.0, slot);
                }
                if rg(b) {
                    let slot = accumulate(&mut grads[b.0], vb.shape());
                    gemm(1.0, va, true, g, false, 1.0, slot);
                }
            }
            Op::Add(a, b) => {
                if rg(a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if rg(a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(b) {
                    add_into(&mut grads[b.0], &g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).as_slice(), self.value(*b).as_slice());
                unary(self, grads, a, g, |k| vb[k]);
                unary(self, grads, b, g, |k| va[k]);
            }
            Op::AddRowBroadcast(a, bias) => {
                if rg(a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(bias) {
                    let sums = g.col_sums();
                    add_into(&mut grads[bias.0], &Matrix::row_vector(&sums));
                }
            }
            Op::GraphAttention(h, a, mask, slope) => {
                let (vh, va) = (self.value(*h), self.value(*a));
                let (n, d) = vh.shape();
                let (src, dst) = attention_scores(vh, va);
                let mut d_src = vec![0.0; n];
                let mut d_dst = vec![0.0; n];
                for i in 0..n {
                    let cols = mask.allowed_columns(i);
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = cols.iter().map(|&j| yr[j] * gr[j]).sum();
                    for &j in cols {
                        let de = yr[j] * (gr[j] - dot);
                        let dx = if src[i] + dst[j] > 0.0 { de } else { slope * de };
                        d_src[i] += dx;
                        d_dst[j] += dx;
                    }
                }
                if rg(h) {
                    let slot = accumulate(&mut grads[h.0], (n, d));
                    for i in 0..n {
                        let r = slot.row_mut(i);
                        for k in 0..d {
                            r[k] += d_src[i] * va.get(k, 0) + d_dst[i] * va.get(d + k, 0);
                        }
                    }
                }
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], (2 * d, 1));
                    for i in 0..n {
                        let r = vh.row(i);
                        for k in 0..d {
                            slot.as_mut_slice()[k] += r[k] * d_src[i];
                            slot.as_mut_slice()[d + k] += r[k] * d_dst[i];
                        }
                    }
                }
            }
            Op::Attend(h, a, mask, slope, alpha) => {
                let (vh, va) = (self.value(*h), self.value(*a));
                let (n, d) = vh.shape();
                let (src, dst) = attention_scores(vh, va);
                let mut d_src = vec![0.0; n];
                let mut d_dst = vec![0.0; n];
                let mut d_h = Matrix::zeros(n, d);
                let dense = mask.prefers_dense();
                let mut d_alpha = Vec::with_capacity(mask.nnz());
                if dense {
                    let mut full = Matrix::zeros(n, n);
                    gemm(1.0, g, false, vh, true, 0.0, &mut full);
                    for i in 0..n {
                        let r = full.row(i);
                        d_alpha.extend(mask.allowed_columns(i).iter().map(|&j| r[j]));
                    }
                    gemm(1.0, &mask.scatter(alpha), true, g, false, 0.0, &mut d_h);
                } else {
                    for i in 0..n {
                        let w = &alpha[mask.row_ptr[i]..mask.row_ptr[i + 1]];
                        let gi = g.row(i);
                        for (&wk, &j) in w.iter().zip(mask.allowed_columns(i)) {
                            d_alpha.push(gi.iter().zip(vh.row(j)).map(|(x, y)| x * y).sum::<f64>());
                            for (s, gk) in d_h.row_mut(j).iter_mut().zip(gi) {
                                *s += wk * gk;
                            }
                        }
                    }
                }
                for i in 0..n {
                    let cols = mask.allowed_columns(i);
                    let range = mask.row_ptr[i]..mask.row_ptr[i + 1];
                    let (w, da) = (&alpha[range.clone()], &d_alpha[range]);
                    let dot: f64 = w.iter().zip(da).map(|(x, y)| x * y).sum();
                    for ((&wk, &j), &dak) in w.iter().zip(cols).zip(da) {
                        let de = wk * (dak - dot);
                        let dx = if src[i] + dst[j] > 0.0 { de } else { slope * de };
                        d_src[i] += dx;
                        d_dst[j] += dx;
                    }
                }
                let (a_src, a_dst) = va.as_slice().split_at(d);
                if rg(h) {
                    for i in 0..n {
                        for ((s, x), y) in d_h.row_mut(i).iter_mut().zip(a_src).zip(a_dst) {
                            *s += d_src[i] * x + d_dst[i] * y;
                        }
                    }
                    add_into(&mut grads[h.0], &d_h);
                }
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], (2 * d, 1));
                    let (gs, gd) = slot.as_mut_slice().split_at_mut(d);
                    for i in 0..n {
                        for ((x, y), hk) in gs.iter_mut().zip(gd.iter_mut()).zip(vh.row(i)) {
                            *x += hk * d_src[i];
                            *y += hk * d_dst[i];
                        }
                    }
                }
            }
            Op::MaskedMatMul(a, b, mask) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], va.shape());
                    for i in 0..va.rows() {
                        let gr = g.row(i);
                        let sr = slot.row_mut(i);
                        for &j in mask.allowed_columns(i) {
                            sr[j] += gr.iter().zip(vb.row(j)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if rg(b) {
                    let slot = accumulate(&mut grads[b.0], vb.shape());
                    for i in 0..va.rows() {
                        let (ar, gr) = (va.row(i), g.row(i));
                        for &j in mask.allowed_columns(i) {
                            let w = ar[j];
                            for (sk, gk) in slot.row_mut(j).iter_mut().zip(gr) {
                                *sk += w * gk;
                            }
                        }
                    }
                }
            }
            Op::AddOuter(col, row) => {
                if rg(col) {
                    add_into(&mut grads[col.0], &Matrix::column(&g.row_sums()));
                }
                if rg(row) {
                    add_into(&mut grads[row.0], &Matrix::row_vector(&g.col_sums()));
                }
            }
            Op::MulScalarVar(a, s) => {
                let k = self.value(*s).get(0, 0);
                unary(self, grads, a, g, |_| k);
                if rg(s) {
                    let va = self.value(*a).as_slice();
                    let dot: f64 = g.as_slice().iter().zip(va).map(|(x, y)| x * y).sum();
                    add_into(&mut grads[s.0], &Matrix::scalar(dot));
                }
            }
            Op::Scale(a, c) => unary(self, grads, a, g, |_| *c),
            Op::AddScalar(a) => unary(self, grads, a, g, |_| 1.0),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if rg(p) {
                        let slot = accumulate(&mut grads[p.0], (r, c));
                        for i in 0..r {
                            for (s, x) in slot.row_mut(i).iter_mut().zip(&g.row(i)[offset..offset + c]) {
                                *s += x;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SoftmaxRows(a) => {
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], y.shape());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((s, &yj), &gj) in slot.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *s += yj * (gj - dot);
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let ys = y.as_slice();
                unary(self, grads, a, g, |k| 1.0 - ys[k] * ys[k]);
            }
            Op::Elu(a) => {
                let (xs, ys) = (self.value(*a).as_slice(), y.as_slice());
                unary(self, grads, a, g, |k| if xs[k] > 0.0 { 1.0 } else { ys[k] + 1.0 });
            }
            Op::LeakyRelu(a, slope) => {
                let xs = self.value(*a).as_slice();
                unary(self, grads, a, g, |k| if xs[k] > 0.0 { 1.0 } else { *slope });
            }
            Op::Exp(a) => {
                let ys = y.as_slice();
                unary(self, grads, a, g, |k| ys[k]);
            }
            Op::Log(a, floor) => {
                let xs = self.value(*a).as_slice();
                unary(self, grads, a, g, |k| if xs[k] > *floor { 1.0 / xs[k] } else { 0.0 });
            }
            Op::Sqrt(a) => {
                let ys = y.as_slice();
                unary(self, grads, a, g, |k| if ys[k] > 0.0 { 0.5 / ys[k] } else { 0.0 });
            }
            Op::Square(a) => {
                let xs = self.value(*a).as_slice();
                unary(self, grads, a, g, |k| 2.0 * xs[k]);
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], self.shape(*a));
                    slot.as_mut_slice().iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let s = g.get(0, 0) / n;
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], self.shape(*a));
                    slot.as_mut_slice().iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Transpose(a) => {
                if rg(a) {
                    add_into(&mut grads[a.0], &g.transpose());
                }
            }
            Op::GatherRows(a, idx) => {
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], self.shape(*a));
                    for (r, &src) in idx.iter().enumerate() {
                        for (s, x) in slot.row_mut(src).iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                }
            }
            Op::Pick(a, i, j) => {
                if rg(a) {
                    let slot = accumulate(&mut grads[a.0], self.shape(*a));
                    let v = slot.get(*i, *j) + g.get(0, 0);
                    slot.set(*i, *j, v);
                }
            }
            Op::Map(a, d) => {
                let (xs, ys) = (self.value(*a).as_slice(), y.as_slice());
                unary(self, grads, a, g, |k| d(xs[k], ys[k]));
            }
        }
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `exp(leaky(s + t_j) - m)` split into a row factor and a column factor per
/// branch of the leaky ReLU, so each row costs two exponentials instead of
/// one per entry. Since `leaky(x) >= x` and `leaky(x) >= slope * x` for
/// `0 <= slope <= 1`, each row factor is at most `exp(spread)` of the
/// column scores; wider spreads fall back to direct evaluation.
struct FactoredExp {
    top: f64,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl FactoredExp {
    const MAX_SPREAD: f64 = 200.0;

    fn new(dst: &[f64], slope: f64) -> Option<Self> {
        let top = dst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = dst.iter().copied().fold(f64::INFINITY, f64::min);
        if !(0.0..=1.0).contains(&slope) || top - bottom > Self::MAX_SPREAD {
            return None;
        }
        Some(Self {
            top,
            pos: dst.iter().map(|t| (t - top).exp()).collect(),
            neg: dst.iter().map(|t| (slope * (t - top)).exp()).collect(),
        })
    }

    fn row_factors(&self, s: f64, max: f64, slope: f64) -> (f64, f64) {
        ((s + self.top - max).exp(), (slope * (s + self.top) - max).exp())
    }
}

/// Per-node source and destination scores `(H a_src, H a_dst)`.
fn attention_scores(h: &Matrix, a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = h.shape();
    let a = a.as_slice();
    let mut src = vec![0.0; n];
    let mut dst = vec![0.0; n];
    for i in 0..n {
        let r = h.row(i);
        for k in 0..d {
            src[i] += r[k] * a[k];
            dst[i] += r[k] * a[d + k];
        }
    }
    (src, dst)
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn softmax_rows_value(x: &Matrix, mask: Option<&SoftmaxMask>) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let allowed = mask.map(|m| m.row(i));
        let ok = |j: usize| allowed.is_none_or(|a| a[j]);
        let max = (0..row.len())
            .filter(|&j| ok(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(AutodiffError::EmptySoftmaxRow { row: i });
        }
        let o = out.row_mut(i);
        let mut total = 0.0;
        for j in 0..row.len() {
            if ok(j) {
                let e = (row[j] - max).exp();
                o[j] = e;
                total += e;
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}
