//! A small reverse-mode automatic differentiation tape over `f64` matrices.
//!
//! Every value is a 2-D array (row vectors are `1 x n`, column vectors
//! `n x 1`). Parameters live in a [`ParamStore`] and are borrowed by the
//! graph, so building a graph never copies weights.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_tensors(&self) -> Vec<(String, Array2<f64>)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }

    /// Overwrites every parameter from `tensors`, matching by name and shape.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Array2<f64>)>) -> Result<()> {
        if tensors.len() != self.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} tensors, found {}", self.len(), tensors.len()),
            ));
        }
        for (name, value) in tensors {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("unexpected tensor {name}")))?;
            if self.values[id.0].dim() != value.dim() {
                return Err(Error::format(
                    "checkpoint",
                    format!("shape mismatch for {name}"),
                ));
            }
            self.values[id.0] = value;
        }
        Ok(())
    }
}

/// Per-parameter gradients; `None` means no gradient reached the parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.mapv_inplace(|x| x * scale);
            }
        }
        norm
    }

    fn accumulate(&mut self, id: ParamId, g: Array2<f64>) {
        match &mut self.grads[id.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn accumulate_rows(
        &mut self,
        id: ParamId,
        shape: (usize, usize),
        rows: &[usize],
        g: &Array2<f64>,
    ) {
        let acc = self.grads[id.0].get_or_insert_with(|| Array2::zeros(shape));
        for (r, &row) in rows.iter().enumerate() {
            let mut dst = acc.row_mut(row);
            dst += &g.row(r);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddConst(Var),
    MulConst(Var, Array2<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogSigmoid(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Pick(Var, Vec<usize>),
    LogAddExp(Var, Var),
    SumAll(Var),
    SumCols(Var),
    GruCell {
        gi: Var,
        gh: Var,
        h: Var,
    },
    MaskBlend {
        new: Var,
        old: Var,
        mask: Array2<f64>,
    },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// One forward pass. Drop it (or call [`Graph::backward`]) before mutating
/// the parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn row_log_softmax(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    /// The single scalar held by a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) | Op::Gather(..) => true,
            other => op_inputs(other)
                .iter()
                .any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Rows `ids` of parameter `id` (embedding lookup).
    pub fn gather(&mut self, id: ParamId, ids: &[usize]) -> Var {
        let table = self.params.get(id);
        let mut out = Array2::zeros((ids.len(), table.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(i));
        }
        self.push(out, Op::Gather(id, ids.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + row` with a `1 x n` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a * col` with a `B x 1` column broadcast across the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| if x > 0.0 || x.is_nan() { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(log_sigmoid);
        self.push(v, Op::LogSigmoid(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = row_log_softmax(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = row_log_softmax(self.value(a)).mapv(f64::exp);
        self.push(v, Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat row mismatch");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Column `idx[r]` of each row `r`, as a `B x 1` column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let v = Array2::from_shape_fn((idx.len(), 1), |(r, _)| src[[r, idx[r]]]);
        self.push(v, Op::Pick(a, idx.to_vec()))
    }

    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        Zip::from(&mut v)
            .and(self.value(b))
            .for_each(|x, &y| *x = log_add_exp(*x, y));
        self.push(v, Op::LogAddExp(a, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Row sums as a `B x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Fused GRU update from the precomputed input and hidden projections
    /// `gi = x W_i + b_i`, `gh = h W_h + b_h` (gate blocks ordered r, z, n).
    pub fn gru_cell(&mut self, gi: Var, gh: Var, h: Var) -> Var {
        let hv = self.value(h);
        let hs = hv.ncols();
        let (giv, ghv) = (self.value(gi), self.value(gh));
        let mut out = Array2::zeros(hv.dim());
        for b in 0..hv.nrows() {
            for j in 0..hs {
                let r = sigmoid(giv[[b, j]] + ghv[[b, j]]);
                let z = sigmoid(giv[[b, hs + j]] + ghv[[b, hs + j]]);
                let n = (giv[[b, 2 * hs + j]] + r * ghv[[b, 2 * hs + j]]).tanh();
                out[[b, j]] = (1.0 - z) * n + z * hv[[b, j]];
            }
        }
        self.push(out, Op::GruCell { gi, gh, h })
    }

    /// `mask * new + (1 - mask) * old`, mask a constant `B x 1` column.
    pub fn mask_blend(&mut self, new: Var, old: Var, mask: Array2<f64>) -> Var {
        let inv = mask.mapv(|m| 1.0 - m);
        let v = self.value(new) * &mask + self.value(old) * &inv;
        self.push(v, Op::MaskBlend { new, old, mask })
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar");
        self.backward_with(output, Array2::ones((1, 1)))
    }

    pub fn backward_with(&self, output: Var, seed: Array2<f64>) -> Gradients {
        let mut pgrads = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut pgrads);
        }
        pgrads
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        pgrads: &mut Gradients,
    ) {
        let mut send = |v: Var, d: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(p) => pgrads.accumulate(*p, g.clone()),
            Op::Gather(p, ids) => {
                let shape = self.params.get(*p).dim();
                pgrads.accumulate_rows(*p, shape, ids, g);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    send(*a, g.dot(&bv.t()));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, av.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                send(*a, g * self.value(*b));
                send(*b, g * self.value(*a));
            }
            Op::MulCol(a, col) => {
                send(*a, g * self.value(*col));
                let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                send(*col, gc);
            }
            Op::Scale(a, c) => send(*a, g * *c),
            Op::AddScalar(a) | Op::AddConst(a) => send(*a, g.clone()),
            Op::MulConst(a, c) => send(*a, g * c),
            Op::Sigmoid(a) => {
                let y = node.value.as_ref().unwrap();
                send(*a, g * &y.mapv(|y| y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                let y = node.value.as_ref().unwrap();
                send(*a, g * &y.mapv(|y| 1.0 - y * y));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                send(*a, g * &x.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                send(*a, g * &x.mapv(|x| sigmoid(-x)));
            }
            Op::LogSoftmax(a) => {
                let y = node.value.as_ref().unwrap();
                let rows = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                send(*a, g - &(y.mapv(f64::exp) * &rows));
            }
            Op::Softmax(a) => {
                let y = node.value.as_ref().unwrap();
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                send(*a, y * &(g - &dot));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    send(*p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                send(*a, d);
            }
            Op::Pick(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &c) in idx.iter().enumerate() {
                    d[[r, c]] = g[[r, 0]];
                }
                send(*a, d);
            }
            Op::LogAddExp(a, b) => {
                let y = node.value.as_ref().unwrap();
                let weight = |x: &Array2<f64>| {
                    let mut w = x - y;
                    w.mapv_inplace(|t| if t.is_nan() { 0.0 } else { t.exp() });
                    w
                };
                send(*a, g * &weight(self.value(*a)));
                send(*b, g * &weight(self.value(*b)));
            }
            Op::SumAll(a) => {
                let d = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                send(*a, d);
            }
            Op::SumCols(a) => {
                let shape = self.value(*a).dim();
                send(*a, g.broadcast(shape).unwrap().to_owned());
            }
            Op::GruCell { gi, gh, h } => {
                let (giv, ghv, hv) = (self.value(*gi), self.value(*gh), self.value(*h));
                let hs = hv.ncols();
                let mut dgi = Array2::zeros(giv.dim());
                let mut dgh = Array2::zeros(ghv.dim());
                let mut dh = Array2::zeros(hv.dim());
                for b in 0..hv.nrows() {
                    for j in 0..hs {
                        let r = sigmoid(giv[[b, j]] + ghv[[b, j]]);
                        let z = sigmoid(giv[[b, hs + j]] + ghv[[b, hs + j]]);
                        let ghn = ghv[[b, 2 * hs + j]];
                        let n = (giv[[b, 2 * hs + j]] + r * ghn).tanh();
                        let gy = g[[b, j]];
                        dh[[b, j]] = gy * z;
                        let dz = gy * (hv[[b, j]] - n) * z * (1.0 - z);
                        let dn = gy * (1.0 - z) * (1.0 - n * n);
                        let dr = dn * ghn * r * (1.0 - r);
                        dgi[[b, j]] = dr;
                        dgh[[b, j]] = dr;
                        dgi[[b, hs + j]] = dz;
                        dgh[[b, hs + j]] = dz;
                        dgi[[b, 2 * hs + j]] = dn;
                        dgh[[b, 2 * hs + j]] = dn * r;
                    }
                }
                send(*gi, dgi);
                send(*gh, dgh);
                send(*h, dh);
            }
            Op::MaskBlend { new, old, mask } => {
                send(*new, g * mask);
                send(*old, g * &mask.mapv(|m| 1.0 - m));
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) | Op::Gather(..) => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::AddRow(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::MulCol(a, b)
        | Op::LogAddExp(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::AddConst(a)
        | Op::MulConst(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::LogSigmoid(a)
        | Op::LogSoftmax(a)
        | Op::Softmax(a)
        | Op::SliceCols(a, ..)
        | Op::Pick(a, _)
        | Op::SumAll(a)
        | Op::SumCols(a) => vec![*a],
        Op::Concat(parts) => parts.clone(),
        Op::GruCell { gi, gh, h } => vec![*gi, *gh, *h],
        Op::MaskBlend { new, old, .. } => vec![*new, *old],
    }
}
