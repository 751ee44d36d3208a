use std::sync::atomic::{AtomicU64, Ordering};

use super::{ParamId, Parameters, Tensor, TensorError};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Operations the tape knows how to differentiate.
///
/// Shapes are read as `(rows, cols)`; a 1-D tensor of length `n` is a single
/// row. Row-vector operands (`AddRow`, `MulRow`, biases, gains) broadcast over
/// the rows of the matrix operand; nothing else broadcasts.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `(m,k) x (k,n) -> (m,n)`
    MatMul,
    /// `(m,k) x (n,k)^T -> (m,n)`
    MatMulT,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    /// `scale * x + shift`, elementwise.
    Affine { scale: f64, shift: f64 },
    Sigmoid,
    Tanh,
    ConcatCols,
    SliceCols { start: usize, end: usize },
    Sum,
    Mean,
    SquaredNorm,
    /// Pairwise squared euclidean distances between rows: `(n,d),(k,d) -> (n,k)`.
    SquaredDistances,
    /// `x w^T + b` with `x: (m,k)`, `w: (n,k)`, `b: (n)`.
    Linear,
    /// Row-wise normalization followed by a learned gain and bias.
    LayerNorm { eps: f64 },
    /// One GRU step. Inputs, in order: `x, h, w_u, w_r, w_n, u_u, u_r, u_n,
    /// b_u, b_r, b_n`. Input matrices are `(hidden, input)`, recurrent ones
    /// `(hidden, hidden)`.
    ///
    /// ```text
    /// u  = sigmoid(x w_u^T + h u_u^T + b_u)
    /// r  = sigmoid(x w_r^T + h u_r^T + b_r)
    /// n  = tanh(x w_n^T + (r * h) u_n^T + b_n)
    /// h' = (1 - u) * h + u * n
    /// ```
    GruCell,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatMulT => "matmul_t",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRow => "add_row",
            Primitive::MulRow => "mul_row",
            Primitive::Affine { .. } => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::ConcatCols => "concat_cols",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::SquaredDistances => "squared_distances",
            Primitive::Linear => "linear",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::GruCell => "gru_cell",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::ConcatCols => None,
            Primitive::Sigmoid
            | Primitive::Tanh
            | Primitive::Affine { .. }
            | Primitive::SliceCols { .. }
            | Primitive::Sum
            | Primitive::Mean
            | Primitive::SquaredNorm => Some(1),
            Primitive::Linear | Primitive::LayerNorm { .. } => Some(3),
            Primitive::GruCell => Some(11),
            _ => Some(2),
        }
    }
}

#[derive(Debug)]
enum Leaf {
    Constant,
    Variable,
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Result<Primitive, Leaf>,
    inputs: Vec<usize>,
    requires_grad: bool,
    saved: Vec<f64>,
}

/// Records primitive evaluations so that gradients can be replayed backward.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: Vec<(usize, Vec<f64>)>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to a variable or parameter leaf.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|(i, _)| *i == var.index)
            .map(|(_, g)| g.as_slice())
    }

    /// Operation nodes in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn mismatch(op: &Primitive, detail: String) -> TensorError {
    TensorError::ShapeMismatch {
        op: op.name(),
        detail,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a b` with `a: (m,k)`, `b: (k,n)`.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// `c = a b^T` with `a: (m,k)`, `b: (n,k)`.
fn matmul_t_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c += a^T b` with `a: (m,k)`, `b: (m,n)`, `c: (k,n)`.
fn matmul_tn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, bi, &mut c[p * n..(p + 1) * n]);
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, leaf: Leaf) -> Var {
        let requires_grad = !matches!(leaf, Leaf::Constant);
        self.nodes.push(Node {
            value,
            op: Err(leaf),
            inputs: Vec::new(),
            requires_grad,
            saved: Vec::new(),
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Leaf::Constant)
    }

    /// A free leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Leaf::Variable)
    }

    /// Snapshot a parameter onto the tape; backward accumulates into it.
    pub fn param(&mut self, params: &Parameters, id: ParamId) -> Var {
        let mut value = params.get(id).clone();
        value.zero_grad();
        self.push_leaf(value, Leaf::Param(id))
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        &self.nodes[v.index]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    /// Evaluate `op` on `inputs` and record it.
    pub fn forward(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var, TensorError> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity {
                    op: op.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            });
        }
        for v in inputs {
            if v.tape != self.id || v.index >= self.nodes.len() {
                return Err(mismatch(&op, "operand belongs to another tape".into()));
            }
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.index].value).collect();
        let (value, saved) = eval(&op, &vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node {
            value,
            op: Ok(op),
            inputs: inputs.iter().map(|v| v.index).collect(),
            requires_grad,
            saved: if requires_grad { saved } else { Vec::new() },
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::MatMul, &[a, b])
    }
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::MatMulT, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Mul, &[a, b])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::AddRow, &[a, row])
    }
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::MulRow, &[a, row])
    }
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        self.forward(Primitive::Affine { scale, shift }, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Tanh, &[a])
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.forward(Primitive::ConcatCols, parts)
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.forward(Primitive::SliceCols { start, end }, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Mean, &[a])
    }
    pub fn squared_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::SquaredNorm, &[a])
    }
    pub fn squared_distances(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::SquaredDistances, &[a, b])
    }
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        self.forward(Primitive::Linear, &[x, w, b])
    }
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        self.forward(Primitive::LayerNorm { eps }, &[x, gain, bias])
    }

    /// Propagate `d loss / d node` back to every leaf.
    ///
    /// Parameter gradients are added to the matching tensors in `params`, so
    /// two calls without zeroing accumulate.
    pub fn backward(&self, loss: Var, params: &mut Parameters) -> Result<Gradients, TensorError> {
        let root = self.node(loss);
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Err(Leaf::Constant) => {}
                Err(Leaf::Variable) => out.leaves.push((idx, g)),
                Err(Leaf::Param(id)) => {
                    params.get_mut(*id).accumulate_grad(&g);
                    out.leaves.push((idx, g));
                }
                Ok(op) => {
                    out.visited.push(idx);
                    let inputs: Vec<&Node> = node.inputs.iter().map(|&i| &self.nodes[i]).collect();
                    let local = backprop(op, node, &inputs, &g);
                    for (slot, dg) in local.into_iter().enumerate() {
                        let Some(dg) = dg else { continue };
                        let target = node.inputs[slot];
                        match &mut grads[target] {
                            Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
                            empty => *empty = Some(dg),
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn expect_same(op: &Primitive, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(mismatch(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn expect_row(op: &Primitive, what: &str, t: &Tensor, n: usize) -> Result<(), TensorError> {
    if t.numel() != n {
        return Err(mismatch(
            op,
            format!("{what} has {} elements, expected {n}", t.numel()),
        ));
    }
    Ok(())
}

fn expect_matrix(op: &Primitive, what: &str, t: &Tensor, rows: usize, cols: usize) -> Result<(), TensorError> {
    if t.dims2() != (rows, cols) {
        return Err(mismatch(
            op,
            format!("{what} has shape {:?}, expected ({rows}, {cols})", t.shape()),
        ));
    }
    Ok(())
}

fn mat(shape_rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![shape_rows, cols], data).expect("kernel produced consistent shape")
}

fn like(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(t.shape().to_vec(), data).expect("kernel produced consistent shape")
}

fn eval(op: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>), TensorError> {
    let none = Vec::new;
    Ok(match op {
        Primitive::MatMul => {
            let ((m, k), (k2, n)) = (x[0].dims2(), x[1].dims2());
            if k != k2 {
                return Err(mismatch(op, format!("({m},{k}) x ({k2},{n})")));
            }
            let mut c = vec![0.0; m * n];
            matmul_into(x[0].data(), x[1].data(), m, k, n, &mut c);
            (mat(m, n, c), none())
        }
        Primitive::MatMulT => {
            let ((m, k), (n, k2)) = (x[0].dims2(), x[1].dims2());
            if k != k2 {
                return Err(mismatch(op, format!("({m},{k}) x ({n},{k2})^T")));
            }
            let mut c = vec![0.0; m * n];
            matmul_t_into(x[0].data(), x[1].data(), m, k, n, &mut c);
            (mat(m, n, c), none())
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            expect_same(op, x[0], x[1])?;
            let f: fn(f64, f64) -> f64 = match op {
                Primitive::Add => |a, b| a + b,
                Primitive::Sub => |a, b| a - b,
                _ => |a, b| a * b,
            };
            let data = x[0].data().iter().zip(x[1].data()).map(|(&a, &b)| f(a, b)).collect();
            (like(x[0], data), none())
        }
        Primitive::AddRow | Primitive::MulRow => {
            let (_, n) = x[0].dims2();
            expect_row(op, "row operand", x[1], n)?;
            let row = x[1].data();
            let add = matches!(op, Primitive::AddRow);
            let data = x[0]
                .data()
                .chunks(n.max(1))
                .flat_map(|r| r.iter().zip(row).map(move |(&a, &b)| if add { a + b } else { a * b }))
                .collect();
            (like(x[0], data), none())
        }
        Primitive::Affine { scale, shift } => {
            let data = x[0].data().iter().map(|&a| scale * a + shift).collect();
            (like(x[0], data), none())
        }
        Primitive::Sigmoid => (like(x[0], x[0].data().iter().map(|&a| sigmoid(a)).collect()), none()),
        Primitive::Tanh => (like(x[0], x[0].data().iter().map(|a| a.tanh()).collect()), none()),
        Primitive::ConcatCols => {
            let m = x[0].dims2().0;
            let mut widths = Vec::with_capacity(x.len());
            for t in x {
                let (r, c) = t.dims2();
                if r != m {
                    return Err(mismatch(op, format!("row counts {m} and {r}")));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * total);
            for i in 0..m {
                for (t, &w) in x.iter().zip(&widths) {
                    data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
                }
            }
            (mat(m, total, data), none())
        }
        Primitive::SliceCols { start, end } => {
            let (m, n) = x[0].dims2();
            if start >= end || *end > n {
                return Err(mismatch(op, format!("columns {start}..{end} of {n}")));
            }
            let data = x[0].data().chunks(n).flat_map(|r| r[*start..*end].iter().copied()).collect();
            (mat(m, end - start, data), none())
        }
        Primitive::Sum => (Tensor::scalar(x[0].data().iter().sum()), none()),
        Primitive::Mean => {
            if x[0].numel() == 0 {
                return Err(mismatch(op, "empty operand".into()));
            }
            (Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].numel() as f64), none())
        }
        Primitive::SquaredNorm => (Tensor::scalar(dot(x[0].data(), x[0].data())), none()),
        Primitive::SquaredDistances => {
            let ((n, d), (k, d2)) = (x[0].dims2(), x[1].dims2());
            if d != d2 {
                return Err(mismatch(op, format!("row widths {d} and {d2}")));
            }
            let (a, b) = (x[0].data(), x[1].data());
            let mut out = Vec::with_capacity(n * k);
            for i in 0..n {
                let ai = &a[i * d..(i + 1) * d];
                for j in 0..k {
                    let bj = &b[j * d..(j + 1) * d];
                    out.push(ai.iter().zip(bj).map(|(p, q)| (p - q) * (p - q)).sum());
                }
            }
            (mat(n, k, out), none())
        }
        Primitive::Linear => {
            let ((m, k), (n, k2)) = (x[0].dims2(), x[1].dims2());
            if k != k2 {
                return Err(mismatch(op, format!("input ({m},{k}) vs weight ({n},{k2})")));
            }
            expect_row(op, "bias", x[2], n)?;
            let mut c = Vec::with_capacity(m * n);
            for _ in 0..m {
                c.extend_from_slice(x[2].data());
            }
            matmul_t_into(x[0].data(), x[1].data(), m, k, n, &mut c);
            (mat(m, n, c), none())
        }
        Primitive::LayerNorm { eps } => {
            let (m, n) = x[0].dims2();
            expect_row(op, "gain", x[1], n)?;
            expect_row(op, "bias", x[2], n)?;
            let (g, b) = (x[1].data(), x[2].data());
            let mut out = Vec::with_capacity(m * n);
            // saved: normalized values then per-row inverse std
            let mut saved = vec![0.0; m * n + m];
            for (i, row) in x[0].data().chunks(n).enumerate() {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + eps).sqrt();
                saved[m * n + i] = inv;
                for j in 0..n {
                    let xhat = (row[j] - mean) * inv;
                    saved[i * n + j] = xhat;
                    out.push(xhat * g[j] + b[j]);
                }
            }
            (like(x[0], out), saved)
        }
        Primitive::GruCell => gru_forward(op, x)?,
    })
}

fn gru_forward(op: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>), TensorError> {
    let (batch, input) = x[0].dims2();
    let (hb, hidden) = x[1].dims2();
    if hb != batch {
        return Err(mismatch(op, format!("input has {batch} rows, hidden state {hb}")));
    }
    for (i, name) in ["w_u", "w_r", "w_n"].iter().enumerate() {
        expect_matrix(op, name, x[2 + i], hidden, input)?;
    }
    for (i, name) in ["u_u", "u_r", "u_n"].iter().enumerate() {
        expect_matrix(op, name, x[5 + i], hidden, hidden)?;
    }
    for (i, name) in ["b_u", "b_r", "b_n"].iter().enumerate() {
        expect_row(op, name, x[8 + i], hidden)?;
    }
    let (xs, hs) = (x[0].data(), x[1].data());
    let (wu, wr, wn) = (x[2].data(), x[3].data(), x[4].data());
    let (uu, ur, un) = (x[5].data(), x[6].data(), x[7].data());
    let (bu, br, bn) = (x[8].data(), x[9].data(), x[10].data());

    let bh = batch * hidden;
    let mut out = vec![0.0; bh];
    // saved gates: u, r, n
    let mut saved = vec![0.0; 3 * bh];
    let mut rh = vec![0.0; hidden];
    for b in 0..batch {
        let xb = &xs[b * input..(b + 1) * input];
        let hprev = &hs[b * hidden..(b + 1) * hidden];
        for j in 0..hidden {
            let wrow = j * input..(j + 1) * input;
            let urow = j * hidden..(j + 1) * hidden;
            let au = bu[j] + dot(&wu[wrow.clone()], xb) + dot(&uu[urow.clone()], hprev);
            let ar = br[j] + dot(&wr[wrow], xb) + dot(&ur[urow], hprev);
            let r = sigmoid(ar);
            saved[b * hidden + j] = sigmoid(au);
            saved[bh + b * hidden + j] = r;
            rh[j] = r * hprev[j];
        }
        for j in 0..hidden {
            let an = bn[j]
                + dot(&wn[j * input..(j + 1) * input], xb)
                + dot(&un[j * hidden..(j + 1) * hidden], &rh);
            let n = an.tanh();
            let u = saved[b * hidden + j];
            saved[2 * bh + b * hidden + j] = n;
            out[b * hidden + j] = (1.0 - u) * hprev[j] + u * n;
        }
    }
    Ok((mat(batch, hidden, out), saved))
}

fn zeros_if(flag: bool, len: usize) -> Option<Vec<f64>> {
    flag.then(|| vec![0.0; len])
}

/// Local vector-Jacobian products for one node.
fn backprop(op: &Primitive, node: &Node, inputs: &[&Node], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let need = |i: usize| inputs[i].requires_grad;
    let val = |i: usize| inputs[i].value.data();
    match op {
        Primitive::MatMul => {
            let ((m, k), (_, n)) = (inputs[0].value.dims2(), inputs[1].value.dims2());
            let da = need(0).then(|| {
                let mut da = vec![0.0; m * k];
                matmul_t_into(g, val(1), m, n, k, &mut da);
                da
            });
            let db = need(1).then(|| {
                let mut db = vec![0.0; k * n];
                matmul_tn_into(val(0), g, m, k, n, &mut db);
                db
            });
            vec![da, db]
        }
        Primitive::MatMulT => {
            let ((m, k), (n, _)) = (inputs[0].value.dims2(), inputs[1].value.dims2());
            let da = need(0).then(|| {
                let mut da = vec![0.0; m * k];
                matmul_into(g, val(1), m, n, k, &mut da);
                da
            });
            let db = need(1).then(|| {
                let mut db = vec![0.0; n * k];
                matmul_tn_into(g, val(0), m, n, k, &mut db);
                db
            });
            vec![da, db]
        }
        Primitive::Add => vec![need(0).then(|| g.to_vec()), need(1).then(|| g.to_vec())],
        Primitive::Sub => vec![
            need(0).then(|| g.to_vec()),
            need(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        Primitive::Mul => vec![
            need(0).then(|| g.iter().zip(val(1)).map(|(a, b)| a * b).collect()),
            need(1).then(|| g.iter().zip(val(0)).map(|(a, b)| a * b).collect()),
        ],
        Primitive::AddRow => {
            let n = inputs[1].value.numel();
            let drow = need(1).then(|| {
                let mut d = vec![0.0; n];
                g.chunks(n).for_each(|r| axpy(1.0, r, &mut d));
                d
            });
            vec![need(0).then(|| g.to_vec()), drow]
        }
        Primitive::MulRow => {
            let n = inputs[1].value.numel();
            let row = val(1);
            let da = need(0).then(|| g.chunks(n).flat_map(|r| r.iter().zip(row).map(|(a, b)| a * b)).collect());
            let drow = need(1).then(|| {
                let mut d = vec![0.0; n];
                for (gr, ar) in g.chunks(n).zip(val(0).chunks(n)) {
                    for j in 0..n {
                        d[j] += gr[j] * ar[j];
                    }
                }
                d
            });
            vec![da, drow]
        }
        Primitive::Affine { scale, .. } => vec![Some(g.iter().map(|v| scale * v).collect())],
        Primitive::Sigmoid => {
            let y = node.value.data();
            vec![Some(g.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect())]
        }
        Primitive::Tanh => {
            let y = node.value.data();
            vec![Some(g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect())]
        }
        Primitive::ConcatCols => {
            let (m, total) = node.value.dims2();
            let mut offset = 0;
            inputs
                .iter()
                .map(|inp| {
                    let w = inp.value.dims2().1;
                    let part = inp.requires_grad.then(|| {
                        (0..m)
                            .flat_map(|i| g[i * total + offset..i * total + offset + w].iter().copied())
                            .collect()
                    });
                    offset += w;
                    part
                })
                .collect()
        }
        Primitive::SliceCols { start, end } => {
            let (m, n) = inputs[0].value.dims2();
            let w = end - start;
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                d[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(d)]
        }
        Primitive::Sum => vec![Some(vec![g[0]; inputs[0].value.numel()])],
        Primitive::Mean => {
            let n = inputs[0].value.numel();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Primitive::SquaredNorm => vec![Some(val(0).iter().map(|v| 2.0 * g[0] * v).collect())],
        Primitive::SquaredDistances => {
            let ((n, d), (k, _)) = (inputs[0].value.dims2(), inputs[1].value.dims2());
            let (a, b) = (val(0), val(1));
            let mut da = zeros_if(need(0), n * d);
            let mut db = zeros_if(need(1), k * d);
            for i in 0..n {
                for j in 0..k {
                    let gij = 2.0 * g[i * k + j];
                    if gij == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        let diff = gij * (a[i * d + c] - b[j * d + c]);
                        if let Some(da) = da.as_mut() {
                            da[i * d + c] += diff;
                        }
                        if let Some(db) = db.as_mut() {
                            db[j * d + c] -= diff;
                        }
                    }
                }
            }
            vec![da, db]
        }
        Primitive::Linear => {
            let ((m, k), (n, _)) = (inputs[0].value.dims2(), inputs[1].value.dims2());
            let dx = need(0).then(|| {
                let mut dx = vec![0.0; m * k];
                matmul_into(g, val(1), m, n, k, &mut dx);
                dx
            });
            let dw = need(1).then(|| {
                let mut dw = vec![0.0; n * k];
                matmul_tn_into(g, val(0), m, n, k, &mut dw);
                dw
            });
            let db = need(2).then(|| {
                let mut db = vec![0.0; n];
                g.chunks(n).for_each(|r| axpy(1.0, r, &mut db));
                db
            });
            vec![dx, dw, db]
        }
        Primitive::LayerNorm { .. } => {
            let (m, n) = inputs[0].value.dims2();
            let (xhat, inv) = node.saved.split_at(m * n);
            let gain = val(1);
            let mut dx = zeros_if(need(0), m * n);
            let mut dgain = zeros_if(need(1), n);
            let mut dbias = zeros_if(need(2), n);
            let mut dxhat = vec![0.0; n];
            for i in 0..m {
                let gi = &g[i * n..(i + 1) * n];
                let xi = &xhat[i * n..(i + 1) * n];
                if let Some(d) = dgain.as_mut() {
                    for j in 0..n {
                        d[j] += gi[j] * xi[j];
                    }
                }
                if let Some(d) = dbias.as_mut() {
                    axpy(1.0, gi, d);
                }
                if let Some(dx) = dx.as_mut() {
                    for j in 0..n {
                        dxhat[j] = gi[j] * gain[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2 = dot(&dxhat, xi);
                    let scale = inv[i] / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = scale * (n as f64 * dxhat[j] - s1 - xi[j] * s2);
                    }
                }
            }
            vec![dx, dgain, dbias]
        }
        Primitive::GruCell => gru_backward(node, inputs, g),
    }
}

fn gru_backward(node: &Node, inputs: &[&Node], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (batch, input) = inputs[0].value.dims2();
    let hidden = inputs[1].value.dims2().1;
    let bh = batch * hidden;
    let (us, rest) = node.saved.split_at(bh);
    let (rs, ns) = rest.split_at(bh);
    let d = |i: usize| inputs[i].value.data();
    let (xs, hs) = (d(0), d(1));
    let (wu, wr, wn) = (d(2), d(3), d(4));
    let (uu, ur, un) = (d(5), d(6), d(7));

    let sizes = [
        batch * input,
        bh,
        hidden * input,
        hidden * input,
        hidden * input,
        hidden * hidden,
        hidden * hidden,
        hidden * hidden,
        hidden,
        hidden,
        hidden,
    ];
    let mut grads: Vec<Option<Vec<f64>>> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| zeros_if(inputs[i].requires_grad, n))
        .collect();

    let mut dan = vec![0.0; hidden];
    let mut dar = vec![0.0; hidden];
    let mut dau = vec![0.0; hidden];
    let mut rh = vec![0.0; hidden];
    let mut drh = vec![0.0; hidden];
    let mut dh = vec![0.0; hidden];
    let mut dx = vec![0.0; input];

    for b in 0..batch {
        let xb = &xs[b * input..(b + 1) * input];
        let hb = &hs[b * hidden..(b + 1) * hidden];
        let gb = &g[b * hidden..(b + 1) * hidden];
        let (ub, rb, nb) = (
            &us[b * hidden..(b + 1) * hidden],
            &rs[b * hidden..(b + 1) * hidden],
            &ns[b * hidden..(b + 1) * hidden],
        );
        for j in 0..hidden {
            let dn = gb[j] * ub[j];
            let du = gb[j] * (nb[j] - hb[j]);
            dh[j] = gb[j] * (1.0 - ub[j]);
            dan[j] = dn * (1.0 - nb[j] * nb[j]);
            dau[j] = du * ub[j] * (1.0 - ub[j]);
            rh[j] = rb[j] * hb[j];
        }
        drh.fill(0.0);
        for j in 0..hidden {
            axpy(dan[j], &un[j * hidden..(j + 1) * hidden], &mut drh);
        }
        for j in 0..hidden {
            dar[j] = drh[j] * hb[j] * rb[j] * (1.0 - rb[j]);
            dh[j] += drh[j] * rb[j];
        }

        // recurrent contributions through u and r
        for j in 0..hidden {
            axpy(dau[j], &uu[j * hidden..(j + 1) * hidden], &mut dh);
            axpy(dar[j], &ur[j * hidden..(j + 1) * hidden], &mut dh);
        }
        if let Some(dhs) = grads[1].as_mut() {
            dhs[b * hidden..(b + 1) * hidden].copy_from_slice(&dh);
        }
        if grads[0].is_some() {
            dx.fill(0.0);
            for j in 0..hidden {
                let row = j * input..(j + 1) * input;
                axpy(dau[j], &wu[row.clone()], &mut dx);
                axpy(dar[j], &wr[row.clone()], &mut dx);
                axpy(dan[j], &wn[row], &mut dx);
            }
            grads[0].as_mut().unwrap()[b * input..(b + 1) * input].copy_from_slice(&dx);
        }
        for (slot, delta) in [(2, &dau), (3, &dar), (4, &dan)] {
            if let Some(dw) = grads[slot].as_mut() {
                for j in 0..hidden {
                    axpy(delta[j], xb, &mut dw[j * input..(j + 1) * input]);
                }
            }
        }
        for (slot, delta, src) in [(5, &dau, hb), (6, &dar, hb), (7, &dan, rh.as_slice())] {
            if let Some(du) = grads[slot].as_mut() {
                for j in 0..hidden {
                    axpy(delta[j], src, &mut du[j * hidden..(j + 1) * hidden]);
                }
            }
        }
        for (slot, delta) in [(8, &dau), (9, &dar), (10, &dan)] {
            if let Some(db) = grads[slot].as_mut() {
                axpy(1.0, delta, db);
            }
        }
    }
    grads
}

impl Tape {
    /// Record one GRU step; see [`Primitive::GruCell`] for input order.
    pub fn gru_cell(&mut self, inputs: &[Var; 11]) -> Result<Var, TensorError> {
        self.forward(Primitive::GruCell, inputs)
    }
}
