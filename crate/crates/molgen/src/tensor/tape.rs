//! Reverse-mode autodiff on a dynamic tape.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! the computed value plus enough context to run its backward rule. Calling
//! [`Tape::backward`] on a scalar loss walks the nodes in reverse insertion
//! order and accumulates gradients in fixed index order, so identical tapes
//! yield bit-identical gradients.
//!
//! Conventions baked into the backward rules:
//! * `relu` has derivative 0 at exactly 0;
//! * `clamp` passes gradient wherever `lo <= x <= hi` and blocks it outside;
//! * elementwise `min`/`max` route the gradient to the left operand on ties;
//! * masked softmax entries are exactly `0.0` in the output and receive zero
//!   gradient (masked log-softmax entries are stored as `0.0` and must not
//!   be read by consumers).

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

/// Batch-norm evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by the (optionally row-weighted) batch statistics and fold
    /// them into the running moments.
    Train,
    /// Normalize by the stored running moments.
    Eval,
}

enum Op {
    Leaf,
    MatMul(Val, Val),
    Add(Val, Val),
    /// `(m x n) + (1 x n)` with the row vector broadcast over rows.
    AddRow(Val, Val),
    Sub(Val, Val),
    Mul(Val, Val),
    /// `(m x n) * (1 x n)` with the row vector broadcast over rows.
    MulRow(Val, Val),
    Scale(Val, f64),
    AddScalar(Val),
    Relu(Val),
    Sigmoid(Val),
    Softplus(Val),
    Exp(Val),
    PowConst(Val, f64),
    Clamp(Val, f64, f64),
    Min2(Val, Val),
    Max2(Val, Val),
    SumAll(Val),
    MeanAll(Val),
    SumRows(Val),
    MeanRows(Val),
    MaxRows(Val, Vec<usize>),
    ConcatCols(Val, Val),
    GatherRows(Val, Vec<usize>),
    BroadcastRow(Val, usize),
    Reshape(Val),
    SoftmaxRows(Val, Option<Vec<bool>>),
    LogSoftmaxRows(Val, Option<Vec<bool>>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by tape handle.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given value, if it was
    /// reachable and required gradients.
    pub fn get(&self, v: Val) -> Option<&[f64]> {
        self.by_node[v.0].as_deref()
    }

    /// Gradient as a vector, defaulting to zeros of the given length when the
    /// value was unreachable from the loss.
    pub fn get_or_zeros(&self, v: Val, len: usize) -> Vec<f64> {
        match self.by_node[v.0].as_ref() {
            Some(g) => g.clone(),
            None => vec![0.0; len],
        }
    }
}

/// A dynamic autodiff tape, rebuilt per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a constant (non-differentiable) input.
    pub fn constant(&mut self, t: Tensor) -> Val {
        self.push(t, Op::Leaf, false)
    }

    /// Record a differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Val {
        self.push(t, Op::Leaf, true)
    }

    /// The tensor value held at a handle.
    pub fn value(&self, v: Val) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Val) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Val) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn requires(&self, v: Val) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Val {
        debug_assert!(
            value.is_finite(),
            "non-finite value produced on tape: {:?}",
            value.shape()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Val(self.nodes.len() - 1)
    }

    // ---- binary ops ----

    /// Matrix product of rank-2 tensors: `(m x k) . (k x n) -> (m x n)`.
    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        let da = self.data(a);
        let db = self.data(b);
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn elementwise_pair(
        &mut self,
        op_name: &'static str,
        a: Val,
        b: Val,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Val, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.elementwise_pair("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.elementwise_pair("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.elementwise_pair("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Gradient routes to the left operand on exact ties.
    pub fn min2(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.elementwise_pair("min", a, b, f64::min, Op::Min2(a, b))
    }

    /// Gradient routes to the left operand on exact ties.
    pub fn max2(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        self.elementwise_pair("max", a, b, f64::max, Op::Max2(a, b))
    }

    fn check_row_broadcast(
        &self,
        op: &'static str,
        a: Val,
        row: Val,
    ) -> Result<(usize, usize), TensorError> {
        let sa = self.shape(a);
        let sr = self.shape(row);
        if sa.len() != 2 || sr.len() != 2 || sr[0] != 1 || sr[1] != sa[1] {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sr.to_vec(),
            });
        }
        Ok((sa[0], sa[1]))
    }

    /// `(m x n) + (1 x n)`, adding the row vector to every row.
    pub fn add_row(&mut self, a: Val, row: Val) -> Result<Val, TensorError> {
        let (m, n) = self.check_row_broadcast("add_row", a, row)?;
        let da = self.data(a);
        let dr = self.data(row);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(da[i * n + j] + dr[j]);
            }
        }
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, row), rg))
    }

    /// `(m x n) * (1 x n)`, scaling every row elementwise by the row vector.
    pub fn mul_row(&mut self, a: Val, row: Val) -> Result<Val, TensorError> {
        let (m, n) = self.check_row_broadcast("mul_row", a, row)?;
        let da = self.data(a);
        let dr = self.data(row);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(da[i * n + j] * dr[j]);
            }
        }
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulRow(a, row), rg))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Val, b: Val) -> Result<Val, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let (m, p, q) = (sa[0], sa[1], sb[1]);
        let da = self.data(a);
        let db = self.data(b);
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, p + q], out)?, Op::ConcatCols(a, b), rg))
    }

    // ---- unary ops ----

    fn unary(&mut self, a: Val, f: impl Fn(f64) -> f64, op: Op) -> Val {
        let data: Vec<f64> = self.data(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a);
        self.push(
            Tensor::new(shape, data).expect("unary preserves length"),
            op,
            rg,
        )
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Val {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Val, c: f64) -> Val {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Rectified linear unit; derivative at exactly 0 is 0.
    pub fn relu(&mut self, a: Val) -> Val {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Val) -> Val {
        self.unary(a, sigmoid_stable, Op::Sigmoid(a))
    }

    /// `ln(1 + exp(x))`, computed stably for large |x|.
    pub fn softplus(&mut self, a: Val) -> Val {
        self.unary(a, softplus_stable, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Val) -> Val {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Elementwise `x^p` for constant `p`; inputs must keep `x^(p-1)` finite.
    pub fn pow_const(&mut self, a: Val, p: f64) -> Val {
        self.unary(a, |x| x.powf(p), Op::PowConst(a, p))
    }

    /// Clamp into `[lo, hi]`; gradient passes wherever `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Val, lo: f64, hi: f64) -> Val {
        debug_assert!(lo <= hi);
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    // ---- reductions and reshapes ----

    pub fn sum_all(&mut self, a: Val) -> Val {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Val) -> Val {
        let n = self.data(a).len().max(1);
        let s: f64 = self.data(a).iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s / n as f64), Op::MeanAll(a), rg)
    }

    /// Column sums: `(m x n) -> (1 x n)`.
    pub fn sum_rows(&mut self, a: Val) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("sum_rows", a)?;
        let da = self.data(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += da[i * n + j];
            }
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::SumRows(a), rg))
    }

    /// Column means: `(m x n) -> (1 x n)`.
    pub fn mean_rows(&mut self, a: Val) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("mean_rows", a)?;
        let da = self.data(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += da[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MeanRows(a), rg))
    }

    /// Column maxima: `(m x n) -> (1 x n)`; gradient flows to the first
    /// row attaining each maximum.
    pub fn max_rows(&mut self, a: Val) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("max_rows", a)?;
        if m == 0 {
            return Err(TensorError::BadShape {
                op: "max_rows",
                expected: "at least one row",
                got: vec![m, n],
            });
        }
        let da = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0usize; n];
        for i in 0..m {
            for j in 0..n {
                let v = da[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MaxRows(a, arg), rg))
    }

    /// Select rows by index: `(m x n) -> (idx.len() x n)`; duplicate indices
    /// are allowed and accumulate gradient.
    pub fn gather_rows(&mut self, a: Val, idx: &[usize]) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("gather_rows", a)?;
        let da = self.data(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    extent: m,
                });
            }
            out.extend_from_slice(&da[i * n..(i + 1) * n]);
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            Op::GatherRows(a, idx.to_vec()),
            rg,
        ))
    }

    /// Repeat a `1 x n` row `m` times: `-> (m x n)`.
    pub fn broadcast_row(&mut self, a: Val, m: usize) -> Result<Val, TensorError> {
        let sa = self.shape(a);
        if sa.len() != 2 || sa[0] != 1 {
            return Err(TensorError::BadShape {
                op: "broadcast_row",
                expected: "a 1 x n row vector",
                got: sa.to_vec(),
            });
        }
        let n = sa[1];
        let da = self.data(a);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(da);
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::BroadcastRow(a, m), rg))
    }

    /// Reinterpret the buffer with a new shape of equal length.
    pub fn reshape(&mut self, a: Val, shape: Vec<usize>) -> Result<Val, TensorError> {
        let len: usize = shape.iter().product();
        if len != self.data(a).len() {
            return Err(TensorError::LengthMismatch {
                len: self.data(a).len(),
                shape,
            });
        }
        let data = self.data(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(a), rg))
    }

    // ---- softmax family ----

    /// Row-wise softmax with optional support mask (same layout as the
    /// input; `true` marks allowed entries). Masked entries are exactly 0 in
    /// the output and every row sums to 1 over its support. A row with no
    /// allowed entries is an error.
    pub fn softmax_rows(&mut self, a: Val, mask: Option<&[bool]>) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("softmax_rows", a)?;
        let mask_vec = self.check_mask("softmax_rows", m, n, mask)?;
        let da = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(
                &da[i * n..(i + 1) * n],
                mask_vec.as_ref().map(|mv| &mv[i * n..(i + 1) * n]),
                &mut out[i * n..(i + 1) * n],
                false,
            )
            .map_err(|_| TensorError::EmptySupport { row: i })?;
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::SoftmaxRows(a, mask_vec),
            rg,
        ))
    }

    /// Row-wise log-softmax with optional support mask. Masked entries are
    /// stored as `0.0` and must not be read; allowed entries hold
    /// `x_j - max - ln(sum exp(x_k - max))` over the support.
    pub fn log_softmax_rows(&mut self, a: Val, mask: Option<&[bool]>) -> Result<Val, TensorError> {
        let (m, n) = self.expect_matrix("log_softmax_rows", a)?;
        let mask_vec = self.check_mask("log_softmax_rows", m, n, mask)?;
        let da = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(
                &da[i * n..(i + 1) * n],
                mask_vec.as_ref().map(|mv| &mv[i * n..(i + 1) * n]),
                &mut out[i * n..(i + 1) * n],
                true,
            )
            .map_err(|_| TensorError::EmptySupport { row: i })?;
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LogSoftmaxRows(a, mask_vec),
            rg,
        ))
    }

    fn check_mask(
        &self,
        op: &'static str,
        m: usize,
        n: usize,
        mask: Option<&[bool]>,
    ) -> Result<Option<Vec<bool>>, TensorError> {
        match mask {
            None => Ok(None),
            Some(mk) => {
                if mk.len() != m * n {
                    return Err(TensorError::BadShape {
                        op,
                        expected: "mask with one flag per entry",
                        got: vec![mk.len()],
                    });
                }
                Ok(Some(mk.to_vec()))
            }
        }
    }

    fn expect_matrix(&self, op: &'static str, a: Val) -> Result<(usize, usize), TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::BadShape {
                op,
                expected: "a rank-2 tensor",
                got: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- backward ----

    /// Reverse-mode differentiation from a scalar loss. Returns gradients
    /// for every gradient-requiring node reachable from the loss; leaves
    /// that are unreachable simply report `None` (callers may treat that as
    /// a zero gradient).
    pub fn backward(&self, loss: Val) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss {
                got: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.apply_backward(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Val, delta: &[f64]) {
        if !self.requires(v) {
            return;
        }
        let slot = &mut grads[v.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn apply_backward(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires(*a) {
                    // dA = G . B^T
                    let db = self.data(*b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * db[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.requires(*b) {
                    // dB = A^T . G
                    let da = self.data(*a);
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = da[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let da: Vec<f64> = g.iter().zip(self.data(*b)).map(|(gi, y)| gi * y).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = g.iter().zip(self.data(*a)).map(|(gi, x)| gi * x).collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Min2(a, b) | Op::Max2(a, b) => {
                let take_a_on = matches!(node.op, Op::Min2(..));
                let da_data = self.data(*a);
                let db_data = self.data(*b);
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let to_a = if take_a_on {
                        da_data[i] <= db_data[i]
                    } else {
                        da_data[i] >= db_data[i]
                    };
                    if to_a {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                self.accumulate(grads, *a, &ga);
                self.accumulate(grads, *b, &gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g);
                if self.requires(*row) {
                    let n = self.shape(*row)[1];
                    let m = g.len() / n;
                    let mut gr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += g[i * n + j];
                        }
                    }
                    self.accumulate(grads, *row, &gr);
                }
            }
            Op::MulRow(a, row) => {
                let n = self.shape(*row)[1];
                let m = g.len() / n;
                if self.requires(*a) {
                    let dr = self.data(*row);
                    let mut ga = vec![0.0; g.len()];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = g[i * n + j] * dr[j];
                        }
                    }
                    self.accumulate(grads, *a, &ga);
                }
                if self.requires(*row) {
                    let da = self.data(*a);
                    let mut gr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += g[i * n + j] * da[i * n + j];
                        }
                    }
                    self.accumulate(grads, *row, &gr);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::AddScalar(a) => {
                self.accumulate(grads, *a, g);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let out = self.data_of(idx);
                let da: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(gi, s)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Softplus(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(gi, x)| gi * sigmoid_stable(*x))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Exp(a) => {
                let out = self.data_of(idx);
                let da: Vec<f64> = g.iter().zip(out).map(|(gi, e)| gi * e).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::PowConst(a, p) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(gi, x)| gi * p * x.powf(p - 1.0))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Clamp(a, lo, hi) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a))
                    .map(|(gi, x)| if *x >= *lo && *x <= *hi { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.data(*a).len()];
                self.accumulate(grads, *a, &da);
            }
            Op::MeanAll(a) => {
                let n = self.data(*a).len().max(1);
                let da = vec![g[0] / n as f64; self.data(*a).len()];
                self.accumulate(grads, *a, &da);
            }
            Op::SumRows(a) => {
                let n = self.shape(*a)[1];
                let m = self.shape(*a)[0];
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n..(i + 1) * n].copy_from_slice(g);
                }
                self.accumulate(grads, *a, &da);
            }
            Op::MeanRows(a) => {
                let n = self.shape(*a)[1];
                let m = self.shape(*a)[0];
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j] / m as f64;
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::MaxRows(a, arg) => {
                let n = self.shape(*a)[1];
                let m = self.shape(*a)[0];
                let mut da = vec![0.0; m * n];
                for j in 0..n {
                    da[arg[j] * n + j] = g[j];
                }
                self.accumulate(grads, *a, &da);
            }
            Op::ConcatCols(a, b) => {
                let p = self.shape(*a)[1];
                let q = self.shape(*b)[1];
                let m = self.shape(*a)[0];
                if self.requires(*a) {
                    let mut da = vec![0.0; m * p];
                    for i in 0..m {
                        da[i * p..(i + 1) * p].copy_from_slice(&g[i * (p + q)..i * (p + q) + p]);
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; m * q];
                    for i in 0..m {
                        db[i * q..(i + 1) * q]
                            .copy_from_slice(&g[i * (p + q) + p..(i + 1) * (p + q)]);
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::GatherRows(a, idxs) => {
                let n = self.shape(*a)[1];
                let m = self.shape(*a)[0];
                let mut da = vec![0.0; m * n];
                for (row, &src) in idxs.iter().enumerate() {
                    for j in 0..n {
                        da[src * n + j] += g[row * n + j];
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::BroadcastRow(a, m) => {
                let n = self.shape(*a)[1];
                let mut da = vec![0.0; n];
                for i in 0..*m {
                    for j in 0..n {
                        da[j] += g[i * n + j];
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, g);
            }
            Op::SoftmaxRows(a, mask) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.data_of(idx);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let base = i * n;
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += g[base + j] * p[base + j];
                    }
                    for j in 0..n {
                        let allowed = mask.as_ref().map_or(true, |mk| mk[base + j]);
                        if allowed {
                            da[base + j] = p[base + j] * (g[base + j] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::LogSoftmaxRows(a, mask) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let lsm = self.data_of(idx);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let base = i * n;
                    let mut gsum = 0.0;
                    for j in 0..n {
                        let allowed = mask.as_ref().map_or(true, |mk| mk[base + j]);
                        if allowed {
                            gsum += g[base + j];
                        }
                    }
                    for j in 0..n {
                        let allowed = mask.as_ref().map_or(true, |mk| mk[base + j]);
                        if allowed {
                            da[base + j] = g[base + j] - lsm[base + j].exp() * gsum;
                        }
                    }
                }
                self.accumulate(grads, *a, &da);
            }
        }
    }

    fn data_of(&self, idx: usize) -> &[f64] {
        self.nodes[idx].value.data()
    }
}

/// Stable logistic function.
pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + exp(x))`.
pub fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Shared softmax / log-softmax kernel over one row. Writes probabilities
/// (or log-probabilities) into `out`; masked entries become exactly 0.
fn softmax_row(
    row: &[f64],
    mask: Option<&[bool]>,
    out: &mut [f64],
    log: bool,
) -> Result<(), ()> {
    let allowed = |j: usize| mask.map_or(true, |mk| mk[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, v) in row.iter().enumerate() {
        if allowed(j) && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(()); // empty support
    }
    let mut z = 0.0;
    for (j, v) in row.iter().enumerate() {
        if allowed(j) {
            z += (*v - max).exp();
        }
    }
    let lnz = z.ln();
    for (j, v) in row.iter().enumerate() {
        out[j] = if allowed(j) {
            if log {
                *v - max - lnz
            } else {
                (*v - max).exp() / z
            }
        } else {
            0.0
        };
    }
    Ok(())
}

/// Batch normalization over the row (sample) axis of an `m x n` input.
///
/// * `Train` mode normalizes by batch statistics and folds them into the
///   running moments held in `running_mean` / `running_var`
///   (`running = momentum * running + (1 - momentum) * batch`).
/// * `Eval` mode normalizes by the stored running moments and leaves them
///   untouched.
///
/// `row_weights`, when given, assigns each row's weight in the batch
/// statistics (weights should sum to 1); rows with weight 0 — e.g. padding
/// rows — do not influence the statistics. The variance denominator is
/// floored by `eps`, so constant columns normalize to the shift `beta`.
///
/// Built from primitive tape ops, so its gradients come out of the same
/// reverse pass as everything else.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    tape: &mut Tape,
    x: Val,
    gamma: Val,
    beta: Val,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    eps: f64,
    momentum: f64,
    mode: BnMode,
    row_weights: Option<&[f64]>,
) -> Result<Val, TensorError> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 2 {
        return Err(TensorError::BadShape {
            op: "batch_norm",
            expected: "a rank-2 tensor",
            got: shape,
        });
    }
    let (m, n) = (shape[0], shape[1]);
    if running_mean.len() != n || running_var.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm",
            left: vec![1, n],
            right: running_mean.shape().to_vec(),
        });
    }

    let (mu, var): (Val, Val) = match mode {
        BnMode::Train => {
            let weights: Vec<f64> = match row_weights {
                Some(w) => {
                    if w.len() != m {
                        return Err(TensorError::BadShape {
                            op: "batch_norm",
                            expected: "one weight per row",
                            got: vec![w.len()],
                        });
                    }
                    w.to_vec()
                }
                None => vec![1.0 / m as f64; m],
            };
            let w = tape.constant(Tensor::new(vec![1, m], weights)?);
            let mu = tape.matmul(w, x)?; // 1 x n weighted mean
            let mu_b = tape.broadcast_row(mu, m)?;
            let xc = tape.sub(x, mu_b)?;
            let xc2 = tape.mul(xc, xc)?;
            let var = tape.matmul(w, xc2)?; // 1 x n weighted variance

            // Fold batch statistics into the running moments (side effect on
            // the stored tensors, outside the tape).
            let mu_v = tape.value(mu).data().to_vec();
            let var_v = tape.value(var).data().to_vec();
            for j in 0..n {
                let rm = &mut running_mean.data_mut()[j];
                *rm = momentum * *rm + (1.0 - momentum) * mu_v[j];
                let rv = &mut running_var.data_mut()[j];
                *rv = momentum * *rv + (1.0 - momentum) * var_v[j];
            }
            (mu, var)
        }
        BnMode::Eval => {
            let mu = tape.constant(running_mean.clone());
            let var = tape.constant(running_var.clone());
            (mu, var)
        }
    };

    let mu_b = tape.broadcast_row(mu, m)?;
    let xc = tape.sub(x, mu_b)?;
    let var_eps = tape.add_scalar(var, eps);
    let inv_std = tape.pow_const(var_eps, -0.5); // 1 x n
    let xhat = tape.mul_row(xc, inv_std)?;
    let scaled = tape.mul_row(xhat, gamma)?;
    tape.add_row(scaled, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward_and_shape_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);

        let bad = tape.constant(t(&[2, 2], &[0.0; 4]));
        let err = tape.matmul(a, bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_hand_computed_value() {
        // d(sum(a.b))/da at a = ones(2x2), b = [[1,2],[3,4]] is g.b^T with
        // g = ones, i.e. [[3,7],[3,7]].
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 7.0, 3.0, 7.0]);
    }

    #[test]
    fn softmax_two_logits_closed_form() {
        // softmax([0, ln 3]) = [1/4, 3/4].
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[0.0, 3.0f64.ln()]));
        let p = tape.softmax_rows(x, None).unwrap();
        let got = tape.value(p).data();
        assert!((got[0] - 0.25).abs() < 1e-12);
        assert!((got[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries_exactly() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[5.0, -1.0, 2.0]));
        let mask = [true, false, true];
        let p = tape.softmax_rows(x, Some(&mask)).unwrap();
        let got = tape.value(p).data();
        assert_eq!(got[1], 0.0);
        let z = (5.0f64).exp() + (2.0f64).exp();
        assert!((got[0] - (5.0f64).exp() / z).abs() < 1e-12);
        assert!((got[2] - (2.0f64).exp() / z).abs() < 1e-12);
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_support_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let err = tape.softmax_rows(x, Some(&[false, false])).unwrap_err();
        assert!(matches!(err, TensorError::EmptySupport { row: 0 }));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = [0.3, -1.2, 2.7, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.0).collect();
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 4], &logits));
        let b = tape.constant(t(&[1, 4], &shifted));
        let pa = tape.softmax_rows(a, None).unwrap();
        let pb = tape.softmax_rows(b, None).unwrap();
        for (x, y) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_ln_of_softmax() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[0.1, 0.9, -0.4]));
        let p = tape.softmax_rows(x, None).unwrap();
        let lp = tape.log_softmax_rows(x, None).unwrap();
        for (pi, li) in tape.value(p).data().iter().zip(tape.value(lp).data()) {
            assert!((pi.ln() - li).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        let y = tape.relu(x);
        let err = tape.backward(y).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn unreachable_parameter_reports_no_gradient() {
        let mut tape = Tape::new();
        let used = tape.param(t(&[1, 1], &[2.0]));
        let unused = tape.param(t(&[1, 1], &[3.0]));
        let loss = tape.sum_all(used);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(used).unwrap(), &[1.0]);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, 1), vec![0.0]);
    }

    #[test]
    fn identical_tapes_give_bit_identical_gradients() {
        let build = || {
            let mut tape = Tape::new();
            let x = tape.param(t(&[2, 3], &[0.3, -0.7, 1.1, 0.2, 0.9, -1.3]));
            let w = tape.param(t(&[3, 2], &[0.5, -0.25, 0.75, 0.1, -0.6, 0.33]));
            let h = tape.matmul(x, w).unwrap();
            let r = tape.relu(h);
            let p = tape.softmax_rows(r, None).unwrap();
            let loss = tape.mean_all(p);
            let grads = tape.backward(loss).unwrap();
            (
                grads.get(x).unwrap().to_vec(),
                grads.get(w).unwrap().to_vec(),
            )
        };
        let (gx1, gw1) = build();
        let (gx2, gw2) = build();
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn batch_norm_constant_column_trains_to_shift() {
        // A constant column has zero variance; the eps floor keeps the
        // normalization finite and the output collapses to beta.
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[5.0, 1.0, 5.0, 2.0, 5.0, 3.0]));
        let gamma = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let beta = tape.constant(t(&[1, 2], &[0.25, -0.5]));
        let mut rm = Tensor::zeros(vec![1, 2]);
        let mut rv = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = batch_norm(
            &mut tape, x, gamma, beta, &mut rm, &mut rv, 1e-5, 0.9, BnMode::Train, None,
        )
        .unwrap();
        let out = tape.value(y);
        for i in 0..3 {
            assert!((out.at(i, 0) - 0.25).abs() < 1e-9);
        }
        // Running moments moved toward the batch statistics.
        assert!((rm.data()[0] - 0.5).abs() < 1e-12); // 0.9*0 + 0.1*5
        assert!((rv.data()[0] - 0.9).abs() < 1e-12); // 0.9*1 + 0.1*0
    }

    #[test]
    fn batch_norm_eval_uses_running_moments_and_leaves_them_alone() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 1], &[3.0, 5.0]));
        let gamma = tape.constant(t(&[1, 1], &[2.0]));
        let beta = tape.constant(t(&[1, 1], &[1.0]));
        let mut rm = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
        let mut rv = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
        let y = batch_norm(
            &mut tape, x, gamma, beta, &mut rm, &mut rv, 0.0, 0.9, BnMode::Eval, None,
        )
        .unwrap();
        let out = tape.value(y);
        // (3-4)/2 * 2 + 1 = 0 ; (5-4)/2 * 2 + 1 = 2
        assert!((out.at(0, 0) - 0.0).abs() < 1e-12);
        assert!((out.at(1, 0) - 2.0).abs() < 1e-12);
        assert_eq!(rm.data(), &[4.0]);
        assert_eq!(rv.data(), &[4.0]);
    }

    #[test]
    fn batch_norm_row_weights_exclude_padding_rows() {
        // Statistics over the two real rows only; the pad row (weight 0)
        // must not shift them.
        let run = |with_pad: bool| -> Vec<f64> {
            let mut tape = Tape::new();
            let (x, w): (Tensor, Option<Vec<f64>>) = if with_pad {
                (
                    t(&[3, 1], &[1.0, 3.0, 999.0]),
                    Some(vec![0.5, 0.5, 0.0]),
                )
            } else {
                (t(&[2, 1], &[1.0, 3.0]), None)
            };
            let x = tape.constant(x);
            let gamma = tape.constant(t(&[1, 1], &[1.0]));
            let beta = tape.constant(t(&[1, 1], &[0.0]));
            let mut rm = Tensor::zeros(vec![1, 1]);
            let mut rv = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
            let y = batch_norm(
                &mut tape,
                x,
                gamma,
                beta,
                &mut rm,
                &mut rv,
                1e-5,
                0.9,
                BnMode::Train,
                w.as_deref(),
            )
            .unwrap();
            tape.value(y).data()[..2].to_vec()
        };
        let plain = run(false);
        let padded = run(true);
        for (a, b) in plain.iter().zip(&padded) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn clamp_and_min_follow_stated_subgradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 3], &[-2.0, 0.5, 3.0]));
        let c = tape.clamp(x, 0.0, 1.0);
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0, 0.0]);

        let mut tape = Tape::new();
        let a = tape.param(t(&[1, 2], &[1.0, 5.0]));
        let b = tape.param(t(&[1, 2], &[2.0, 2.0]));
        let m = tape.min2(a, b).unwrap();
        let loss = tape.sum_all(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(grads.get(b).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn gather_rows_out_of_bounds_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let err = tape.gather_rows(x, &[0, 2]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::IndexOutOfBounds {
                index: 2,
                extent: 2,
                ..
            }
        ));
    }

    #[test]
    fn aggregations_over_single_input_are_identities() {
        // sum / mean / max over one row reproduce that row.
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[0.5, -1.0, 2.0, 0.0]));
        let s = tape.sum_rows(x).unwrap();
        let m = tape.mean_rows(x).unwrap();
        let mx = tape.max_rows(x).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(x).data());
        assert_eq!(tape.value(m).data(), tape.value(x).data());
        assert_eq!(tape.value(mx).data(), tape.value(x).data());
    }
}
