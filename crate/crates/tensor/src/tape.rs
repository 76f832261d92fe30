use crate::rng::counter_uniform;
use crate::tensor::{matmul_raw, transpose_raw};
use crate::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax { input: Var, axis: usize },
    LogSoftmax { input: Var, axis: usize },
    Log(Var),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Pick { input: Var, cols: Vec<usize> },
    ClampMin { input: Var, floor: f64 },
    Dropout { input: Var, mask: Vec<f64> },
    LayerNorm { input: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse append order is a valid
/// topological order for the backward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(false)
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    /// `training` controls whether dropout is active.
    pub fn new(training: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, so a prefix of bound
    /// inputs can be reused for several independent evaluations.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        check_finite(op_name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// Adds a bias vector of length `cols` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.rank() != 2 || tb.len() != ta.cols() {
            return Err(mismatch("add_row", ta, tb));
        }
        let m = ta.cols();
        let b = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % m])
            .collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add_row", v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        self.push("scale", v, Op::Scale(a, factor))
    }

    pub fn shift(&mut self, a: Var, offset: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + offset);
        self.push("shift", v, Op::Shift(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_raw(ta.data(), tb.data(), n, k, m);
        let v = Tensor::new(vec![n, m], data)?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(TensorError::Invalid(format!(
                "transpose needs a matrix, got shape {:?}",
                ta.shape()
            )));
        }
        let (n, m) = (ta.shape()[0], ta.shape()[1]);
        let v = Tensor::new(vec![m, n], transpose_raw(ta.data(), n, m))?;
        self.push("transpose", v, Op::Transpose(a))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.value(*first).clone();
        if axis >= base.rank() {
            return Err(TensorError::Invalid(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let t = self.value(v);
            let compatible = t.rank() == base.rank()
                && t.shape()
                    .iter()
                    .zip(base.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, t));
            }
            total += t.shape()[axis];
        }
        let (outer, _, inner) = base.axis_extents(axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base.shape().to_vec();
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        self.push(
            "concat",
            v,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() || start >= end || end > ta.shape()[axis] {
            return Err(TensorError::Invalid(format!(
                "slice [{start}, {end}) on axis {axis} of shape {:?}",
                ta.shape()
            )));
        }
        let (outer, n, inner) = ta.axis_extents(axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&ta.data()[base..base + width * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = width;
        let v = Tensor::new(shape, data)?;
        self.push("slice", v, Op::Slice { input: a, axis, start })
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(TensorError::Invalid("embedding table must be a matrix".into()));
        }
        let (rows, dim) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Invalid(format!(
                    "embedding id {id} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(tt.row(id));
        }
        let v = Tensor::new(vec![ids.len(), dim], data)?;
        self.push(
            "embedding",
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    fn check_axis(&self, a: Var, axis: usize) -> Result<()> {
        let rank = self.value(a).rank();
        if axis >= rank {
            return Err(TensorError::Invalid(format!(
                "axis {axis} out of range for rank {rank}"
            )));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let v = softmax_along(self.value(a), axis, false);
        self.push("softmax", v, Op::Softmax { input: a, axis })
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let v = softmax_along(self.value(a), axis, true);
        self.push("log_softmax", v, Op::LogSoftmax { input: a, axis })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Selects `a[i, cols[i]]` for each row `i`, producing a vector.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || cols.len() != t.shape()[0] {
            return Err(TensorError::Invalid(format!(
                "pick needs one column per row: shape {:?}, {} columns",
                t.shape(),
                cols.len()
            )));
        }
        let m = t.shape()[1];
        let mut data = Vec::with_capacity(cols.len());
        for (i, &c) in cols.iter().enumerate() {
            if c >= m {
                return Err(TensorError::Invalid(format!("pick column {c} out of range {m}")));
            }
            data.push(t.data()[i * m + c]);
        }
        let v = Tensor::vector(data);
        self.push(
            "pick",
            v,
            Op::Pick {
                input: a,
                cols: cols.to_vec(),
            },
        )
    }

    /// Elementwise `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(floor));
        self.push("clamp_min", v, Op::ClampMin { input: a, floor })
    }

    /// Inverted dropout driven by a counter-based generator; identity outside training.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|i| {
                if counter_uniform(seed, i as u64) < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", v, Op::Dropout { input: a, mask })
    }

    /// Normalizes each row of a matrix, then applies `gain * xhat + bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let m = t.cols();
        if t.rank() != 2 || self.value(gain).len() != m || self.value(bias).len() != m {
            return Err(mismatch("layer_norm", t, self.value(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = t.rows();
        let mut xhat = Vec::with_capacity(n * m);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..m {
                let xh = (row[j] - mean) * is;
                xhat.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            v,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip(g, tb, |x, y| x * y));
                acc(*b, zip(g, ta, |x, y| x * y));
            }
            Op::AddRow(a, bias) => {
                let m = g.cols();
                let mut db = vec![0.0; m];
                for (i, x) in gd.iter().enumerate() {
                    db[i % m] += x;
                }
                let bshape = self.value(*bias).shape().to_vec();
                acc(*a, g.clone());
                acc(*bias, Tensor::new(bshape, db).expect("bias shape"));
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::Shift(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let bt = transpose_raw(tb.data(), k, m);
                let da = matmul_raw(gd, &bt, n, m, k);
                let at = transpose_raw(ta.data(), n, k);
                let db = matmul_raw(&at, gd, k, n, m);
                acc(*a, Tensor::new(vec![n, k], da).expect("shape"));
                acc(*b, Tensor::new(vec![k, m], db).expect("shape"));
            }
            Op::Transpose(a) => {
                let (m, n) = (g.shape()[0], g.shape()[1]);
                acc(*a, Tensor::new(vec![n, m], transpose_raw(gd, m, n)).expect("shape"));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = g.axis_extents(*axis);
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let width = t.shape()[*axis];
                    let mut d = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + width * inner]);
                    }
                    offset += width;
                    acc(v, Tensor::new(t.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::Slice { input, axis, start } => {
                let t = self.value(*input);
                let (outer, n, inner) = t.axis_extents(*axis);
                let width = g.shape()[*axis];
                let mut d = vec![0.0; t.len()];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = o * width * inner;
                    d[base..base + width * inner].copy_from_slice(&gd[src..src + width * inner]);
                }
                acc(*input, Tensor::new(t.shape().to_vec(), d).expect("shape"));
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let dim = t.shape()[1];
                let mut d = vec![0.0; t.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        d[id * dim + j] += gd[r * dim + j];
                    }
                }
                acc(*table, Tensor::new(t.shape().to_vec(), d).expect("shape"));
            }
            Op::Softmax { input, axis } => {
                let y = &node.value;
                let (outer, n, inner) = y.axis_extents(*axis);
                let yd = y.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| gd[at(k)] * yd[at(k)]).sum();
                        for k in 0..n {
                            d[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                acc(*input, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::LogSoftmax { input, axis } => {
                let y = &node.value;
                let (outer, n, inner) = y.axis_extents(*axis);
                let yd = y.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let total: f64 = (0..n).map(|k| gd[at(k)]).sum();
                        for k in 0..n {
                            d[at(k)] = gd[at(k)] - yd[at(k)].exp() * total;
                        }
                    }
                }
                acc(*input, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Log(a) => acc(*a, zip(g, self.value(*a), |x, v| x / v)),
            Op::Exp(a) => acc(*a, zip(g, &node.value, |x, y| x * y)),
            Op::Relu(a) => acc(
                *a,
                zip(g, self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 }),
            ),
            Op::Sum(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::full(t.shape(), gd[0]));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::full(t.shape(), gd[0] / t.len() as f64));
            }
            Op::Pick { input, cols } => {
                let t = self.value(*input);
                let m = t.shape()[1];
                let mut d = vec![0.0; t.len()];
                for (i, &c) in cols.iter().enumerate() {
                    d[i * m + c] += gd[i];
                }
                acc(*input, Tensor::new(t.shape().to_vec(), d).expect("shape"));
            }
            Op::ClampMin { input, floor } => acc(
                *input,
                zip(g, self.value(*input), |x, v| if v > *floor { x } else { 0.0 }),
            ),
            Op::Dropout { input, mask } => {
                let d = gd.iter().zip(mask).map(|(x, m)| x * m).collect();
                acc(*input, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let m = g.cols();
                let n = g.rows();
                let mut dx = vec![0.0; n * m];
                let mut dgain = vec![0.0; m];
                let mut dbias = vec![0.0; m];
                for i in 0..n {
                    let row = i * m..(i + 1) * m;
                    let (gr, xr) = (&gd[row.clone()], &xhat[row.clone()]);
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..m {
                        let dxh = gr[j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[j];
                        dgain[j] += gr[j] * xr[j];
                        dbias[j] += gr[j];
                    }
                    let scale = inv_std[i] / m as f64;
                    for j in 0..m {
                        let dxh = gr[j] * gv[j];
                        dx[i * m + j] = scale * (m as f64 * dxh - sum_dxh - xr[j] * sum_dxh_xh);
                    }
                }
                let gshape = self.value(*gain).shape().to_vec();
                let bshape = self.value(*bias).shape().to_vec();
                acc(*input, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                acc(*gain, Tensor::new(gshape, dgain).expect("shape"));
                acc(*bias, Tensor::new(bshape, dbias).expect("shape"));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn softmax_along(t: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, n, inner) = t.axis_extents(axis);
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).map(|k| (src[at(k)] - max).exp()).sum();
            let log_z = z.ln();
            for k in 0..n {
                let shifted = src[at(k)] - max;
                out[at(k)] = if log {
                    shifted - log_z
                } else {
                    shifted.exp() / z
                };
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` is off the loss path.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
