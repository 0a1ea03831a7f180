//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation. Subgraphs built only
//! from constants are never visited on the way back.

use std::sync::Arc;

use super::{DiffError, ParamId, ParameterStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    GatherCols(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    /// Row index of the selected minimum per output entry (`usize::MAX` when empty).
    SegmentMin(Var, Vec<usize>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that depends on a
/// parameter.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Per-parameter gradients, indexed by [`ParamId`]. Parameters bound more
    /// than once have their contributions summed; unbound ones are `None`.
    pub fn params(&self, store: &ParameterStore) -> ParamGrads {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for &(id, var) in &self.params {
            let g = self.grads[var.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).rows(), store.value(id).cols()));
            match &mut out[id.index()] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        ParamGrads(out)
    }
}

/// Gradient per parameter of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.index()).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, true)
    }

    /// Binds a parameter's current value as a differentiable leaf.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// A copy of `var`'s value that blocks gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let value = ta.matmul(tb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                op_name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err(
                "concat_cols",
                format!("{:?} beside {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let value = Tensor::from_vec(n, ca + cb, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), needs))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err(
                "concat_rows",
                format!("{:?} above {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::from_vec(ta.rows() + tb.rows(), ta.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatRows(a, b), needs))
    }

    /// Stacks several row blocks with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| shape_err("stack_rows", "no inputs".into()))?;
        let mut acc = first;
        for &p in rest {
            acc = self.concat_rows(acc, p)?;
        }
        Ok(acc)
    }

    /// `out[k] = a[index[k]]` row-wise.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of {} rows", ta.rows()),
            ));
        }
        let cols = ta.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(ta.row_slice(i));
        }
        let value = Tensor::from_vec(index.len(), cols, data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, index), needs))
    }

    /// `out[:, k] = a[:, index[k]]`.
    pub fn gather_cols(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&j| j >= ta.cols()) {
            return Err(shape_err(
                "gather_cols",
                format!("column {bad} out of {} columns", ta.cols()),
            ));
        }
        let mut data = Vec::with_capacity(ta.rows() * index.len());
        for i in 0..ta.rows() {
            let row = ta.row_slice(i);
            data.extend(index.iter().map(|&j| row[j]));
        }
        let value = Tensor::from_vec(ta.rows(), index.len(), data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherCols(a, index), needs))
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var, DiffError> {
        self.gather_rows(a, vec![0; n].into())
    }

    fn check_segments(
        &self,
        op: &'static str,
        a: Var,
        segment: &[usize],
        num_segments: usize,
    ) -> Result<(), DiffError> {
        let rows = self.value(a).rows();
        if segment.len() != rows {
            return Err(shape_err(
                op,
                format!("{} segment ids for {rows} rows", segment.len()),
            ));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= num_segments) {
            return Err(shape_err(
                op,
                format!("segment {bad} out of {num_segments}"),
            ));
        }
        Ok(())
    }

    /// Row `s` of the output sums the input rows tagged `s`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        self.check_segments("segment_sum", a, &segment, num_segments)?;
        let ta = self.value(a);
        let cols = ta.cols();
        let mut value = Tensor::zeros(num_segments, cols);
        {
            let out = value.data_mut();
            for (i, &s) in segment.iter().enumerate() {
                for (o, &x) in out[s * cols..(s + 1) * cols]
                    .iter_mut()
                    .zip(ta.row_slice(i))
                {
                    *o += x;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(value, Op::SegmentSum(a, segment), needs))
    }

    /// Column-wise minimum over the rows of each segment. The selected row is
    /// recorded (first one on ties) and receives the whole gradient. Empty
    /// segments yield zero.
    pub fn segment_min(
        &mut self,
        a: Var,
        segment: &[usize],
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        self.check_segments("segment_min", a, segment, num_segments)?;
        let ta = self.value(a);
        let cols = ta.cols();
        let mut best = vec![usize::MAX; num_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            let row = ta.row_slice(i);
            for c in 0..cols {
                let slot = &mut best[s * cols + c];
                if *slot == usize::MAX || row[c] < ta.get(*slot, c) {
                    *slot = i;
                }
            }
        }
        let data = best
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if i == usize::MAX {
                    0.0
                } else {
                    ta.get(i, k % cols)
                }
            })
            .collect();
        let value = Tensor::from_vec(num_segments, cols, data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SegmentMin(a, best), needs))
    }

    /// Column-wise softmax within each segment of rows.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        self.check_segments("segment_softmax", a, &segment, num_segments)?;
        let ta = self.value(a);
        let cols = ta.cols();
        let mut max = vec![f64::NEG_INFINITY; num_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            for (c, &x) in ta.row_slice(i).iter().enumerate() {
                let m = &mut max[s * cols + c];
                *m = m.max(x);
            }
        }
        let mut data: Vec<f64> = Vec::with_capacity(ta.len());
        let mut total = vec![0.0; num_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            for (c, &x) in ta.row_slice(i).iter().enumerate() {
                let e = (x - max[s * cols + c]).exp();
                total[s * cols + c] += e;
                data.push(e);
            }
        }
        for (k, v) in data.iter_mut().enumerate() {
            let (i, c) = (k / cols, k % cols);
            *v /= total[segment[i] * cols + c];
        }
        let value = Tensor::from_vec(ta.rows(), cols, data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SegmentSoftmax(a, segment), needs))
    }

    /// Softmax down each column.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let rows = self.value(a).rows();
        self.segment_softmax(a, vec![0; rows].into(), 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mean = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(mean), Op::Mean(a), needs)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let ta = self.value(a);
        if rows * cols != ta.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} into {rows}x{cols}", ta.shape()),
            ));
        }
        let value = ta.clone().reshaped(rows, cols);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let rt = self.value(root);
        if rt.shape() != (1, 1) {
            return Err(DiffError::NonScalarRoot {
                rows: rt.rows(),
                cols: rt.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                params.push((id, Var(i)));
            }
        }
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                if self.needs(a) {
                    let ga = g.matmul(&self.value(b).transpose());
                    self.accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = self.value(a).transpose().matmul(g);
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    let ga = zip_with(g, self.value(b), |x, y| x * y);
                    self.accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = zip_with(g, self.value(a), |x, y| x * y);
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.map(|x| c * x)),
            &Op::Shift(a) | &Op::Reshape(a) => {
                let shape = self.shape(a);
                self.accumulate(grads, a, g.clone().reshaped(shape.0, shape.1));
            }
            &Op::Sigmoid(a) => self.accumulate(grads, a, zip_with(g, y, |g, y| g * y * (1.0 - y))),
            &Op::Tanh(a) => self.accumulate(grads, a, zip_with(g, y, |g, y| g * (1.0 - y * y))),
            &Op::LeakyRelu(a, slope) => {
                let ga = zip_with(g, self.value(a), |g, x| if x > 0.0 { g } else { slope * g });
                self.accumulate(grads, a, ga);
            }
            &Op::Exp(a) => self.accumulate(grads, a, zip_with(g, y, |g, y| g * y)),
            &Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for r in 0..n {
                    let row = g.row_slice(r);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, a, Tensor::from_vec(n, ca, da).expect("shape"));
                self.accumulate(grads, b, Tensor::from_vec(n, cb, db).expect("shape"));
            }
            &Op::ConcatRows(a, b) => {
                let (ra, cols) = self.shape(a);
                let split = ra * cols;
                let da = Tensor::from_vec(ra, cols, g.data()[..split].to_vec()).expect("shape");
                let db = Tensor::from_vec(g.rows() - ra, cols, g.data()[split..].to_vec())
                    .expect("shape");
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::GatherRows(a, index) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Tensor::zeros(rows, cols);
                let out = da.data_mut();
                for (k, &r) in index.iter().enumerate() {
                    for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(g.row_slice(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::GatherCols(a, index) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Tensor::zeros(rows, cols);
                let out = da.data_mut();
                for r in 0..rows {
                    for (k, &c) in index.iter().enumerate() {
                        out[r * cols + c] += g.get(r, k);
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::SegmentSum(a, segment) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(segment.len() * cols);
                for &s in segment.iter() {
                    data.extend_from_slice(g.row_slice(s));
                }
                self.accumulate(
                    grads,
                    *a,
                    Tensor::from_vec(segment.len(), cols, data).expect("shape"),
                );
            }
            Op::SegmentMin(a, best) => {
                let (rows, cols) = self.shape(*a);
                let mut da = Tensor::zeros(rows, cols);
                let out = da.data_mut();
                for (k, &r) in best.iter().enumerate() {
                    if r != usize::MAX {
                        out[r * cols + k % cols] += g.data()[k];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::SegmentSoftmax(a, segment) => {
                let cols = y.cols();
                let num_segments = segment.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; num_segments * cols];
                for (r, &s) in segment.iter().enumerate() {
                    for c in 0..cols {
                        dot[s * cols + c] += y.get(r, c) * g.get(r, c);
                    }
                }
                let data = (0..y.len())
                    .map(|k| {
                        let (r, c) = (k / cols, k % cols);
                        y.data()[k] * (g.data()[k] - dot[segment[r] * cols + c])
                    })
                    .collect();
                self.accumulate(
                    grads,
                    *a,
                    Tensor::from_vec(y.rows(), cols, data).expect("shape"),
                );
            }
            &Op::Sum(a) => {
                let (rows, cols) = self.shape(a);
                self.accumulate(grads, a, Tensor::filled(rows, cols, g.item()));
            }
            &Op::Mean(a) => {
                let (rows, cols) = self.shape(a);
                let n = (rows * cols).max(1) as f64;
                self.accumulate(grads, a, Tensor::filled(rows, cols, g.item() / n));
            }
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("operands share a shape")
}
