use std::collections::HashMap;
use std::sync::Arc;

use super::kernels;
use super::tensor::Tensor;
use super::AdError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Reduction axis for `reduce_sum` / `reduce_mean`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Everything to a `1 x 1` scalar.
    All,
    /// Sum over rows: `r x c -> 1 x c`.
    Rows,
    /// Sum over columns: `r x c -> r x 1`.
    Cols,
}

#[derive(Clone, Debug)]
pub enum Op {
    Constant,
    Parameter,
    Input,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Div,
    Affine,
    Concat,
    SliceCols { start: usize, end: usize },
    PadCols { start: usize, total: usize },
    Gather(Arc<[usize]>),
    SegmentSum(Arc<[usize]>, usize),
    Expand { rows: usize, cols: usize },
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Square,
    Clamp { lo: f64, hi: f64 },
    Scale(f64),
    Offset(f64),
    ReduceSum(Axis),
    ReduceMean(Axis),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameter => "parameter",
            Op::Input => "input",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Affine => "affine",
            Op::Concat => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::Gather(_) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::Expand { .. } => "expand",
            Op::Relu => "relu",
            Op::Elu => "elu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Square => "square",
            Op::Clamp { .. } => "clamp",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::ReduceSum(_) => "reduce_sum",
            Op::ReduceMean(_) => "reduce_mean",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Constant | Op::Parameter | Op::Input)
    }
}

struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor,
    /// Depends on a parameter or a flagged input.
    grad: bool,
}

/// Running statistics of one batch-normalization layer. The affine
/// `gamma`/`beta` vectors are trainable and live with the other parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub moving_mean: Vec<f64>,
    pub moving_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub const MOMENTUM: f64 = 0.99;
    pub const EPSILON: f64 = 1e-6;

    pub fn new(features: usize) -> Self {
        Self {
            moving_mean: vec![0.0; features],
            moving_var: vec![1.0; features],
            momentum: Self::MOMENTUM,
            epsilon: Self::EPSILON,
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Define-by-run record of tensor operations with reverse-mode
/// differentiation.
///
/// Forward values are computed eagerly as ops are recorded. Gradients are
/// themselves built out of recorded ops, so [`Tape::grad_wrt_input`] returns a
/// node that can be differentiated again by [`Tape::backward`].
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    record_grad: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            record_grad: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        let grad = match op {
            Op::Parameter | Op::Input => true,
            Op::Constant => false,
            _ => self.record_grad && inputs.iter().any(|v| self.nodes[v.0].grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(op: &'static str, detail: String) -> AdError {
        AdError::Shape { op, detail }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: Vec::new(),
            value: t,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn parameter(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Parameter,
            inputs: Vec::new(),
            value: t,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf flagged for differentiation (the target of [`Tape::grad_wrt_input`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            inputs: Vec::new(),
            value: t,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, AdError> {
        let [ar, ac] = self.shape(a);
        let [br, bc] = self.shape(b);
        let k_a = if ta { ar } else { ac };
        let k_b = if tb { bc } else { br };
        if k_a != k_b {
            return Err(Self::shape_err(
                "matmul",
                format!("[{ar}x{ac}]{} * [{br}x{bc}]{}", if ta { "^T" } else { "" }, if tb { "^T" } else { "" }),
            ));
        }
        let v = kernels::matmul(self.value(a), self.value(b), ta, tb);
        self.push(Op::MatMul { ta, tb }, vec![a, b], v)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = kernels::broadcast_shape(sa, sb)
            .ok_or_else(|| Self::shape_err(op.name(), format!("{sa:?} vs {sb:?}")))?;
        let v = kernels::binary(self.value(a), self.value(b), out, f);
        self.push(op, vec![a, b], v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    /// `x W + b`, with `b` a `1 x n` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx[1] != sw[0] || sb != [1, sw[1]] {
            return Err(Self::shape_err("affine", format!("x{sx:?} W{sw:?} b{sb:?}")));
        }
        let v = kernels::affine(self.value(x), self.value(w), self.value(b));
        self.push(Op::Affine, vec![x, w, b], v)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat", "no inputs".into()));
        }
        let rows = self.shape(parts[0])[0];
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            return Err(Self::shape_err("concat", "row counts differ".into()));
        }
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat_cols(&vals);
        self.push(Op::Concat, parts.to_vec(), v)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AdError> {
        let [_, c] = self.shape(x);
        if start > end || end > c {
            return Err(Self::shape_err("slice_cols", format!("{start}..{end} of {c}")));
        }
        let v = kernels::slice_cols(self.value(x), start, end);
        self.push(Op::SliceCols { start, end }, vec![x], v)
    }

    fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Result<Var, AdError> {
        let [_, c] = self.shape(x);
        if start + c > total {
            return Err(Self::shape_err("pad_cols", format!("{start}+{c} > {total}")));
        }
        let v = kernels::pad_cols(self.value(x), start, total);
        self.push(Op::PadCols { start, total }, vec![x], v)
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, AdError> {
        let r = self.shape(x)[0];
        if idx.iter().any(|&i| i >= r) {
            return Err(Self::shape_err("gather_rows", format!("index out of {r} rows")));
        }
        let v = kernels::gather_rows(self.value(x), &idx);
        self.push(Op::Gather(idx), vec![x], v)
    }

    /// Sums rows into `n_groups` buckets: output row `g` is the sum of input
    /// rows `r` with `groups[r] == g`.
    pub fn segment_sum(&mut self, x: Var, groups: Arc<[usize]>, n_groups: usize) -> Result<Var, AdError> {
        let r = self.shape(x)[0];
        if groups.len() != r || groups.iter().any(|&g| g >= n_groups) {
            return Err(Self::shape_err("segment_sum", format!("{} labels for {r} rows", groups.len())));
        }
        let v = kernels::segment_sum(self.value(x), &groups, n_groups);
        self.push(Op::SegmentSum(groups, n_groups), vec![x], v)
    }

    /// Broadcasts a `1 x c`, `r x 1` or `1 x 1` tensor to `rows x cols`.
    pub fn expand(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, AdError> {
        let s = self.shape(x);
        if kernels::broadcast_shape(s, [rows, cols]) != Some([rows, cols]) {
            return Err(Self::shape_err("expand", format!("{s:?} -> [{rows}, {cols}]")));
        }
        let v = kernels::expand(self.value(x), rows, cols);
        self.push(Op::Expand { rows, cols }, vec![x], v)
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var, AdError> {
        let v = self.value(x).map(f);
        self.push(op, vec![x], v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Elu, x, kernels::elu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Tanh, x, kernels::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Sigmoid, x, kernels::sigmoid)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Sin, x, f64::sin)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Cos, x, f64::cos)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Exp, x, f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Log, x, f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Sqrt, x, f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Op::Square, x, |v| v * v)
    }

    /// Saturates to `[lo, hi]`. The derivative is 1 on the closed interval and
    /// 0 outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AdError> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(AdError::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(Op::Clamp { lo, hi }, x, |v| v.clamp(lo, hi))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AdError> {
        self.unary(Op::Scale(c), x, |v| c * v)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var, AdError> {
        self.unary(Op::Offset(c), x, |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, AdError> {
        self.scale(x, -1.0)
    }

    pub fn reduce_sum(&mut self, x: Var, axis: Axis) -> Result<Var, AdError> {
        let v = match axis {
            Axis::All => kernels::sum_all(self.value(x)),
            Axis::Rows => kernels::sum_rows(self.value(x)),
            Axis::Cols => kernels::sum_cols(self.value(x)),
        };
        self.push(Op::ReduceSum(axis), vec![x], v)
    }

    pub fn reduce_mean(&mut self, x: Var, axis: Axis) -> Result<Var, AdError> {
        let [r, c] = self.shape(x);
        let n = match axis {
            Axis::All => r * c,
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if n == 0 {
            return Err(Self::shape_err("reduce_mean", "empty reduction".into()));
        }
        let mut v = match axis {
            Axis::All => kernels::sum_all(self.value(x)),
            Axis::Rows => kernels::sum_rows(self.value(x)),
            Axis::Cols => kernels::sum_cols(self.value(x)),
        };
        let inv = 1.0 / n as f64;
        v.data_mut().iter_mut().for_each(|e| *e *= inv);
        self.push(Op::ReduceMean(axis), vec![x], v)
    }

    /// Batch normalization over the rows of `x`, followed by the per-feature
    /// affine map `gamma * x_hat + beta`.
    ///
    /// In training mode the batch statistics are used and the running
    /// statistics in `state` are updated; otherwise only the running
    /// statistics are read.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        training: bool,
    ) -> Result<Var, AdError> {
        let [rows, c] = self.shape(x);
        if self.shape(gamma) != [1, c] || self.shape(beta) != [1, c] || state.moving_mean.len() != c {
            return Err(Self::shape_err("batchnorm", format!("{c} features")));
        }
        let x_hat = if training {
            if rows < 2 {
                return Err(Self::shape_err("batchnorm", "training needs at least 2 rows".into()));
            }
            let mean = self.reduce_mean(x, Axis::Rows)?;
            let centered = self.sub(x, mean)?;
            let sq = self.square(centered)?;
            let var = self.reduce_mean(sq, Axis::Rows)?;
            let var_eps = self.offset(var, state.epsilon)?;
            let std = self.sqrt(var_eps)?;
            let m = state.momentum;
            for (j, (mm, mv)) in state.moving_mean.iter_mut().zip(state.moving_var.iter_mut()).enumerate() {
                *mm = m * *mm + (1.0 - m) * self.nodes[mean.0].value.data()[j];
                *mv = m * *mv + (1.0 - m) * self.nodes[var.0].value.data()[j];
            }
            self.div(centered, std)?
        } else {
            let mean = self.constant(Tensor::row(state.moving_mean.clone()));
            let inv_std = self.constant(Tensor::row(
                state.moving_var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect(),
            ));
            let centered = self.sub(x, mean)?;
            self.mul(centered, inv_std)?
        };
        let scaled = self.mul(x_hat, gamma)?;
        self.add(scaled, beta)
    }

    /// Cotangent `g` reduced to `shape` (the adjoint of broadcasting).
    fn reduce_to(&mut self, g: Var, shape: [usize; 2]) -> Result<Var, AdError> {
        let gs = self.shape(g);
        if gs == shape {
            return Ok(g);
        }
        match (gs[0] != shape[0], gs[1] != shape[1]) {
            (true, true) => self.reduce_sum(g, Axis::All),
            (true, false) => self.reduce_sum(g, Axis::Rows),
            (false, true) => self.reduce_sum(g, Axis::Cols),
            (false, false) => Ok(g),
        }
    }

    fn mask(&mut self, x: Var, keep: impl Fn(f64) -> bool) -> Var {
        let m = self.value(x).map(|v| if keep(v) { 1.0 } else { 0.0 });
        self.constant(m)
    }

    /// Vector-Jacobian products of node `node` for cotangent `g`, expressed as
    /// new nodes on the tape.
    fn vjp(&mut self, node: Var, g: Var, needs: &[bool]) -> Result<Vec<Option<Var>>, AdError> {
        let op = self.nodes[node.0].op.clone();
        let ins = self.nodes[node.0].inputs.clone();
        let mut out = vec![None; ins.len()];
        let want = |k: usize| needs[k];
        match op {
            Op::Constant | Op::Parameter | Op::Input => {}
            Op::MatMul { ta, tb } => {
                let (a, b) = (ins[0], ins[1]);
                if want(0) {
                    out[0] = Some(match (ta, tb) {
                        (false, false) => self.matmul_t(g, b, false, true)?,
                        (false, true) => self.matmul_t(g, b, false, false)?,
                        (true, false) => self.matmul_t(b, g, false, true)?,
                        (true, true) => self.matmul_t(b, g, true, true)?,
                    });
                }
                if want(1) {
                    out[1] = Some(match (ta, tb) {
                        (false, false) => self.matmul_t(a, g, true, false)?,
                        (false, true) => self.matmul_t(g, a, true, false)?,
                        (true, false) => self.matmul_t(a, g, false, false)?,
                        (true, true) => self.matmul_t(g, a, true, true)?,
                    });
                }
            }
            Op::Add | Op::Sub => {
                let (sa, sb) = (self.shape(ins[0]), self.shape(ins[1]));
                if want(0) {
                    out[0] = Some(self.reduce_to(g, sa)?);
                }
                if want(1) {
                    let r = self.reduce_to(g, sb)?;
                    out[1] = Some(if matches!(op, Op::Sub) { self.neg(r)? } else { r });
                }
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                if want(0) {
                    let p = self.mul(g, b)?;
                    out[0] = Some(self.reduce_to(p, self.shape(a))?);
                }
                if want(1) {
                    let p = self.mul(g, a)?;
                    out[1] = Some(self.reduce_to(p, self.shape(b))?);
                }
            }
            Op::Div => {
                let (a, b) = (ins[0], ins[1]);
                if want(0) {
                    let q = self.div(g, b)?;
                    out[0] = Some(self.reduce_to(q, self.shape(a))?);
                }
                if want(1) {
                    let gy = self.mul(g, node)?;
                    let q = self.div(gy, b)?;
                    let q = self.neg(q)?;
                    out[1] = Some(self.reduce_to(q, self.shape(b))?);
                }
            }
            Op::Affine => {
                let (x, w) = (ins[0], ins[1]);
                if want(0) {
                    out[0] = Some(self.matmul_t(g, w, false, true)?);
                }
                if want(1) {
                    out[1] = Some(self.matmul_t(x, g, true, false)?);
                }
                if want(2) {
                    out[2] = Some(self.reduce_sum(g, Axis::Rows)?);
                }
            }
            Op::Concat => {
                let mut start = 0;
                for (k, &inp) in ins.iter().enumerate() {
                    let w = self.shape(inp)[1];
                    if want(k) {
                        out[k] = Some(self.slice_cols(g, start, start + w)?);
                    }
                    start += w;
                }
            }
            Op::SliceCols { start, .. } => {
                if want(0) {
                    let total = self.shape(ins[0])[1];
                    out[0] = Some(self.pad_cols(g, start, total)?);
                }
            }
            Op::PadCols { start, .. } => {
                if want(0) {
                    let w = self.shape(ins[0])[1];
                    out[0] = Some(self.slice_cols(g, start, start + w)?);
                }
            }
            Op::Gather(idx) => {
                if want(0) {
                    let n = self.shape(ins[0])[0];
                    out[0] = Some(self.segment_sum(g, idx, n)?);
                }
            }
            Op::SegmentSum(groups, _) => {
                if want(0) {
                    out[0] = Some(self.gather_rows(g, groups)?);
                }
            }
            Op::Expand { .. } => {
                if want(0) {
                    out[0] = Some(self.reduce_to(g, self.shape(ins[0]))?);
                }
            }
            Op::Relu => {
                let m = self.mask(ins[0], |v| v > 0.0);
                out[0] = Some(self.mul(g, m)?);
            }
            Op::Elu => {
                // d/dx elu(x) = exp(min(x, 0))
                let c = self.clamp(ins[0], f64::NEG_INFINITY, 0.0)?;
                let e = self.exp(c)?;
                out[0] = Some(self.mul(g, e)?);
            }
            Op::Tanh => {
                let sq = self.square(node)?;
                let s = self.scale(sq, -1.0)?;
                let d = self.offset(s, 1.0)?;
                out[0] = Some(self.mul(g, d)?);
            }
            Op::Sigmoid => {
                let s = self.scale(node, -1.0)?;
                let one_minus = self.offset(s, 1.0)?;
                let d = self.mul(node, one_minus)?;
                out[0] = Some(self.mul(g, d)?);
            }
            Op::Sin => {
                let c = self.cos(ins[0])?;
                out[0] = Some(self.mul(g, c)?);
            }
            Op::Cos => {
                let s = self.sin(ins[0])?;
                let p = self.mul(g, s)?;
                out[0] = Some(self.neg(p)?);
            }
            Op::Exp => out[0] = Some(self.mul(g, node)?),
            Op::Log => out[0] = Some(self.div(g, ins[0])?),
            Op::Sqrt => {
                let two_y = self.scale(node, 2.0)?;
                out[0] = Some(self.div(g, two_y)?);
            }
            Op::Square => {
                let two_x = self.scale(ins[0], 2.0)?;
                out[0] = Some(self.mul(g, two_x)?);
            }
            Op::Clamp { lo, hi } => {
                let m = self.mask(ins[0], |v| v >= lo && v <= hi);
                out[0] = Some(self.mul(g, m)?);
            }
            Op::Scale(c) => out[0] = Some(self.scale(g, c)?),
            Op::Offset(_) => out[0] = Some(g),
            Op::ReduceSum(_) => {
                let [r, c] = self.shape(ins[0]);
                out[0] = Some(self.expand(g, r, c)?);
            }
            Op::ReduceMean(axis) => {
                let [r, c] = self.shape(ins[0]);
                let n = match axis {
                    Axis::All => r * c,
                    Axis::Rows => r,
                    Axis::Cols => c,
                };
                let e = self.expand(g, r, c)?;
                out[0] = Some(self.scale(e, 1.0 / n as f64)?);
            }
        }
        Ok(out)
    }

    /// Reverse sweep from `output` seeded with cotangent `seed`, returning the
    /// cotangent of each `wrt` node (`None` when it does not influence
    /// `output`).
    fn grad_graph(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>, AdError> {
        let n = output.0 + 1;
        let mut dep = vec![false; n];
        for w in wrt {
            if w.0 < n {
                dep[w.0] = true;
            }
        }
        for i in 0..n {
            if !dep[i] && self.nodes[i].grad {
                dep[i] = self.nodes[i].inputs.iter().any(|v| dep[v.0]);
            }
        }
        let mut cot: Vec<Option<Var>> = vec![None; n];
        if dep[output.0] {
            cot[output.0] = Some(seed);
        }
        for i in (0..n).rev() {
            let Some(g) = cot[i] else { continue };
            if self.nodes[i].op.is_leaf() {
                continue;
            }
            let needs: Vec<bool> = self.nodes[i].inputs.iter().map(|v| dep[v.0]).collect();
            let parts = self.vjp(Var(i), g, &needs)?;
            let ins = self.nodes[i].inputs.clone();
            for (inp, part) in ins.into_iter().zip(parts) {
                let Some(part) = part else { continue };
                cot[inp.0] = Some(match cot[inp.0] {
                    None => part,
                    Some(prev) => self.add(prev, part)?,
                });
            }
        }
        Ok(wrt.iter().map(|w| cot.get(w.0).copied().flatten()).collect())
    }

    /// Gradient of the scalar `loss` with respect to every parameter and every
    /// flagged input. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AdError> {
        if self.consumed {
            return Err(AdError::AlreadyBackpropagated);
        }
        if self.shape(loss) != [1, 1] {
            return Err(AdError::NotScalar(self.shape(loss)));
        }
        let wrt: Vec<Var> = (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Parameter | Op::Input))
            .map(Var)
            .collect();
        self.record_grad = false;
        let seed = self.constant(Tensor::scalar(1.0));
        let res = self.grad_graph(loss, seed, &wrt);
        self.record_grad = true;
        let res = res?;
        self.consumed = true;
        let mut grads = HashMap::with_capacity(wrt.len() + 1);
        for (w, g) in wrt.into_iter().zip(res) {
            let t = match g {
                Some(g) => self.value(g).clone(),
                None => {
                    let [r, c] = self.shape(w);
                    Tensor::zeros(r, c)
                }
            };
            grads.insert(w, t);
        }
        grads.insert(loss, Tensor::scalar(1.0));
        Ok(Gradients { grads })
    }

    /// Row-wise gradient `D output / D input` for an output holding one scalar
    /// per batch row. The result is recorded on the tape and can itself be
    /// differentiated by [`Tape::backward`]. Rows must not interact (no
    /// training-mode batch normalization between `input` and `output`).
    pub fn grad_wrt_input(&mut self, output: Var, input: Var) -> Result<Var, AdError> {
        if !matches!(self.nodes[input.0].op, Op::Input) {
            return Err(AdError::NotFlagged(input.0));
        }
        let [r, c] = self.shape(output);
        if c != 1 {
            return Err(AdError::NotScalarPerRow([r, c]));
        }
        let seed = self.constant(Tensor::full(r, 1, 1.0));
        let g = self.grad_graph(output, seed, &[input])?;
        Ok(match g[0] {
            Some(v) => v,
            None => {
                let [ir, ic] = self.shape(input);
                self.constant(Tensor::zeros(ir, ic))
            }
        })
    }
}
