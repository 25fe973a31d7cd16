//! A small tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Parameter
//! leaves borrow the parameter store rather than copying it, so building a
//! graph per example is cheap. [`Graph::backward`] returns dense gradients
//! for every parameter the loss touched.

use crate::tensor::{gemm, sigmoid, softmax_into, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index into the parameter store the graph borrows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 x n` row to every row.
    AddRow(Var, Var),
    /// Adds a `1 x 1` scalar to every element.
    AddScalar(Var, Var),
    Mul(Var, Var),
    /// Multiplies every element by a `1 x 1` scalar node.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    SelectSum(Var, Vec<usize>),
    Div(Var, Var),
    Pick(Var, usize),
    ScatterAdd(Var, Vec<usize>),
    PadCols(Var),
    MeanRows(Var),
    AddN(Vec<Var>),
    /// Fused LSTM cell: `(pre-activations [i f g o], c_prev) -> [h, c]`.
    LstmCell(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients for a parameter store, `None` where the loss did not reach.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    /// Accumulates `other * weight` into `self`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => {
                        for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                            *a += weight * b;
                        }
                    }
                    None => {
                        let mut c = t.clone();
                        c.scale(weight);
                        *mine = Some(c);
                    }
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(pid) => &self.params[pid.0],
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Tensor::zeros(0, 0), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let (k2, n) = bv.shape();
        assert_eq!(k, k2, "matmul {m}x{k} * {k2}x{n}");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), 0.0, out.data_mut(), n);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let (n, k2) = bv.shape();
        assert_eq!(k, k2, "matmul_nt {m}x{k} * ({n}x{k2})^T");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, av.data(), (k, 1), bv.data(), (1, k), 0.0, out.data_mut(), n);
        self.push(out, Op::MatMulNT(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1);
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a, s))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::ScaleBy(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Natural log, with inputs clamped below at `1e-12`.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(LOG_CLAMP).ln());
        self.push(out, Op::Log(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            softmax_into(av.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols());
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows());
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows(a, start))
    }

    /// Row lookup (embedding table).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let c = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < tv.rows(), "gather index {id} out of {} rows", tv.rows());
            data.extend_from_slice(tv.row(id));
        }
        self.push(Tensor::from_vec(ids.len(), c, data), Op::Gather(table, ids.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Sum of the elements at the given flat indices.
    pub fn select_sum(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let s = idx.iter().map(|&i| av.data()[i]).sum();
        self.push(Tensor::scalar(s), Op::SelectSum(a, idx.to_vec()))
    }

    /// Quotient of two scalars.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let q = self.value(a).item() / self.value(b).item();
        self.push(Tensor::scalar(q), Op::Div(a, b))
    }

    pub fn pick(&mut self, a: Var, idx: usize) -> Var {
        let x = self.value(a).data()[idx];
        self.push(Tensor::scalar(x), Op::Pick(a, idx))
    }

    /// Scatters a `1 x n` row into a `1 x size` row: `out[ids[i]] += a[i]`.
    pub fn scatter_add(&mut self, a: Var, ids: &[usize], size: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1);
        assert_eq!(av.cols(), ids.len(), "scatter ids length");
        let mut out = Tensor::zeros(1, size);
        for (&x, &id) in av.data().iter().zip(ids) {
            out.data_mut()[id] += x;
        }
        self.push(out, Op::ScatterAdd(a, ids.to_vec()))
    }

    /// Zero-pads columns on the right up to `size`.
    pub fn pad_cols(&mut self, a: Var, size: usize) -> Var {
        let av = self.value(a);
        assert!(size >= av.cols());
        let mut out = Tensor::zeros(av.rows(), size);
        for r in 0..av.rows() {
            out.row_mut(r)[..av.cols()].copy_from_slice(av.row(r));
        }
        self.push(out, Op::PadCols(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols());
        let n = av.rows() as f64;
        for r in 0..av.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(av.row(r)) {
                *o += x / n;
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::AddN(parts.to_vec()))
    }

    /// One LSTM cell update. `pre` holds the `1 x 4h` pre-activations in
    /// gate order input, forget, candidate, output. Returns `1 x 2h` `[h, c]`.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Var {
        let (pv, cv) = (self.value(pre), self.value(c_prev));
        let h = cv.cols();
        assert_eq!(pv.shape(), (1, 4 * h), "lstm pre-activation width");
        assert_eq!(cv.rows(), 1);
        let p = pv.data();
        let mut out = Tensor::zeros(1, 2 * h);
        let o = out.data_mut();
        for k in 0..h {
            let i = sigmoid(p[k]);
            let f = sigmoid(p[h + k]);
            let g = p[2 * h + k].tanh();
            let og = sigmoid(p[3 * h + k]);
            let c = f * cv.data()[k] + i * g;
            o[k] = og * c.tanh();
            o[h + k] = c;
        }
        self.push(out, Op::LstmCell(pre, c_prev))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.grads[pid.0] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.shape();
                    let n = bv.cols();
                    // dA = dC B^T
                    self.acc_with(&mut grads, *a, |da| {
                        gemm(m, n, k, g.data(), (n, 1), bv.data(), (1, n), 1.0, da.data_mut(), k)
                    });
                    // dB = A^T dC
                    self.acc_with(&mut grads, *b, |db| {
                        gemm(k, m, n, av.data(), (1, k), g.data(), (n, 1), 1.0, db.data_mut(), n)
                    });
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.shape();
                    let n = bv.rows();
                    // dA = dC B
                    self.acc_with(&mut grads, *a, |da| {
                        gemm(m, n, k, g.data(), (n, 1), bv.data(), (k, 1), 1.0, da.data_mut(), k)
                    });
                    // dB = dC^T A
                    self.acc_with(&mut grads, *b, |db| {
                        gemm(n, m, k, g.data(), (1, n), av.data(), (k, 1), 1.0, db.data_mut(), k)
                    });
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc(&mut grads, *b, &g);
                }
                Op::AddN(parts) => {
                    for p in parts {
                        self.acc(&mut grads, *p, &g);
                    }
                }
                Op::AddRow(a, row) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc_with(&mut grads, *row, |dr| {
                        for r in 0..g.rows() {
                            for (d, x) in dr.data_mut().iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    });
                }
                Op::AddScalar(a, s) => {
                    self.acc(&mut grads, *a, &g);
                    let total = g.sum();
                    self.acc_with(&mut grads, *s, |ds| ds.data_mut()[0] += total);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc_with(&mut grads, *a, |da| {
                        for ((d, x), y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d += x * y;
                        }
                    });
                    self.acc_with(&mut grads, *b, |db| {
                        for ((d, x), y) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *d += x * y;
                        }
                    });
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).item();
                    let av = self.value(*a);
                    self.acc_with(&mut grads, *a, |da| {
                        for (d, x) in da.data_mut().iter_mut().zip(g.data()) {
                            *d += k * x;
                        }
                    });
                    let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    self.acc_with(&mut grads, *s, |d| d.data_mut()[0] += ds);
                }
                Op::Scale(a, k) => self.acc_mapped(&mut grads, *a, &g, |x, _| k * x),
                Op::OneMinus(a) => self.acc_mapped(&mut grads, *a, &g, |x, _| -x),
                Op::Tanh(a) => self.acc_mapped2(&mut grads, *a, &g, y, |x, yv| x * (1.0 - yv * yv)),
                Op::Sigmoid(a) => self.acc_mapped2(&mut grads, *a, &g, y, |x, yv| x * yv * (1.0 - yv)),
                Op::Log(a) => self.acc_mapped(&mut grads, *a, &g, |x, input| {
                    if input > LOG_CLAMP {
                        x / input
                    } else {
                        0.0
                    }
                }),
                Op::SoftmaxRows(a) => {
                    self.acc_with(&mut grads, *a, |da| {
                        for r in 0..y.rows() {
                            let (yr, gr) = (y.row(r), g.row(r));
                            let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                            for ((d, p), q) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *d += p * (q - dot);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        self.acc_with(&mut grads, *p, |dp| {
                            for r in 0..g.rows() {
                                for (d, x) in dp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                    *d += x;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.acc_with(&mut grads, *p, |dp| {
                            for (d, x) in dp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                                *d += x;
                            }
                        });
                        offset += n;
                    }
                    debug_assert_eq!(offset, g.rows() * c);
                }
                Op::SliceCols(a, start) => {
                    let w = g.cols();
                    self.acc_with(&mut grads, *a, |da| {
                        for r in 0..g.rows() {
                            for (d, x) in da.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    });
                }
                Op::SliceRows(a, start) => {
                    let c = g.cols();
                    self.acc_with(&mut grads, *a, |da| {
                        for (d, x) in da.data_mut()[start * c..start * c + g.len()].iter_mut().zip(g.data()) {
                            *d += x;
                        }
                    });
                }
                Op::Gather(table, ids) => {
                    self.acc_with(&mut grads, *table, |dt| {
                        for (r, &id) in ids.iter().enumerate() {
                            for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let k = g.item();
                    self.acc_with(&mut grads, *a, |da| da.data_mut().iter_mut().for_each(|d| *d += k));
                }
                Op::SelectSum(a, idx) => {
                    let k = g.item();
                    self.acc_with(&mut grads, *a, |da| {
                        for &i in idx {
                            da.data_mut()[i] += k;
                        }
                    });
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a).item(), self.value(*b).item());
                    let k = g.item();
                    self.acc_with(&mut grads, *a, |d| d.data_mut()[0] += k / bv);
                    self.acc_with(&mut grads, *b, |d| d.data_mut()[0] -= k * av / (bv * bv));
                }
                Op::Pick(a, i) => {
                    let k = g.item();
                    self.acc_with(&mut grads, *a, |da| da.data_mut()[*i] += k);
                }
                Op::ScatterAdd(a, ids) => {
                    self.acc_with(&mut grads, *a, |da| {
                        for (d, &id) in da.data_mut().iter_mut().zip(ids) {
                            *d += g.data()[id];
                        }
                    });
                }
                Op::PadCols(a) => {
                    self.acc_with(&mut grads, *a, |da| {
                        let w = da.cols();
                        for r in 0..g.rows() {
                            for (d, x) in da.row_mut(r).iter_mut().zip(&g.row(r)[..w]) {
                                *d += x;
                            }
                        }
                    });
                }
                Op::MeanRows(a) => {
                    self.acc_with(&mut grads, *a, |da| {
                        let n = da.rows() as f64;
                        for r in 0..da.rows() {
                            for (d, x) in da.row_mut(r).iter_mut().zip(g.data()) {
                                *d += x / n;
                            }
                        }
                    });
                }
                Op::LstmCell(pre, c_prev) => {
                    let p = self.value(*pre).data();
                    let cp = self.value(*c_prev).data();
                    let h = cp.len();
                    let mut dpre = vec![0.0; 4 * h];
                    let mut dcp = vec![0.0; h];
                    for k in 0..h {
                        let i = sigmoid(p[k]);
                        let f = sigmoid(p[h + k]);
                        let cand = p[2 * h + k].tanh();
                        let o = sigmoid(p[3 * h + k]);
                        let c = y.data()[h + k];
                        let tc = c.tanh();
                        let dh = g.data()[k];
                        let dc = g.data()[h + k] + dh * o * (1.0 - tc * tc);
                        dpre[k] = dc * cand * i * (1.0 - i);
                        dpre[h + k] = dc * cp[k] * f * (1.0 - f);
                        dpre[2 * h + k] = dc * i * (1.0 - cand * cand);
                        dpre[3 * h + k] = dh * tc * o * (1.0 - o);
                        dcp[k] = dc * f;
                    }
                    self.acc(&mut grads, *pre, &Tensor::from_vec(1, 4 * h, dpre));
                    self.acc(&mut grads, *c_prev, &Tensor::from_vec(1, h, dcp));
                }
            }
        }
        out
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
        match &mut grads[v.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        f(self.slot(grads, v));
    }

    /// `d[v] += f(g, input_value)` elementwise.
    fn acc_mapped(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64) {
        let input = self.value(v);
        let d = self.slot(grads, v);
        for ((d, &x), &inp) in d.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
            *d += f(x, inp);
        }
    }

    /// `d[v] += f(g, output_value)` elementwise.
    fn acc_mapped2(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) {
        let d = self.slot(grads, v);
        for ((d, &x), &yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
            *d += f(x, yv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks every op's backward rule against central differences on a
    /// scalar loss built from it.
    fn check(params: Vec<Tensor>, build: impl Fn(&mut Graph) -> Var) {
        let g0 = {
            let mut g = Graph::new(&params);
            let loss = build(&mut g);
            g.backward(loss)
        };
        let eps = 1e-6;
        for pid in 0..params.len() {
            for i in 0..params[pid].len() {
                let mut plus = params.clone();
                plus[pid].data_mut()[i] += eps;
                let mut minus = params.clone();
                minus[pid].data_mut()[i] -= eps;
                let eval = |p: &[Tensor]| {
                    let mut g = Graph::new(p);
                    let l = build(&mut g);
                    g.value(l).item()
                };
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = g0.get(ParamId(pid)).map_or(0.0, |t| t.data()[i]);
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "param {pid}[{i}]: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn matmul_family_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![random(&mut rng, 2, 3), random(&mut rng, 3, 4), random(&mut rng, 4, 3), random(&mut rng, 1, 4)];
        check(params, |g| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let c = g.param(ParamId(2));
            let bias = g.param(ParamId(3));
            let ab = g.matmul(a, b);
            let ab = g.add_row(ab, bias);
            let t = g.tanh(ab);
            let ac = g.matmul_nt(a, c);
            let s = g.sigmoid(ac);
            let m = g.mul(t, s);
            g.sum(m)
        });
    }

    #[test]
    fn softmax_log_and_selection_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![random(&mut rng, 2, 5), random(&mut rng, 1, 1)];
        check(params, |g| {
            let a = g.param(ParamId(0));
            let s = g.param(ParamId(1));
            let p = g.softmax_rows(a);
            let shifted = g.add_scalar(p, s);
            let scaled = g.scale_by(shifted, s);
            let m = g.mean_rows(scaled);
            let num = g.select_sum(m, &[0, 2]);
            let den = g.sum(p);
            let q = g.div(num, den);
            let l = g.log(q);
            let picked = g.pick(p, 7);
            let one = g.one_minus(picked);
            let l2 = g.log(one);
            let tot = g.add_n(&[l, l2]);
            g.scale(tot, -0.5)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![random(&mut rng, 4, 3), random(&mut rng, 2, 3), random(&mut rng, 1, 2)];
        check(params, |g| {
            let t = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let r = g.param(ParamId(2));
            let rows = g.gather(t, &[1, 3, 1]);
            let stacked = g.concat_rows(&[rows, b]);
            let mid = g.slice_rows(stacked, 1, 3);
            let cols = g.slice_cols(mid, 1, 2);
            let wide = g.concat_cols(&[cols, cols]);
            let first = g.slice_rows(wide, 0, 1);
            let padded = g.pad_cols(first, 6);
            let sc = g.scatter_add(r, &[2, 2], 6);
            let both = g.add(padded, sc);
            let sq = g.mul(both, both);
            g.sum(sq)
        });
    }

    #[test]
    fn lstm_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![random(&mut rng, 1, 12), random(&mut rng, 1, 3), random(&mut rng, 1, 6)];
        check(params, |g| {
            let pre = g.param(ParamId(0));
            let c = g.param(ParamId(1));
            let w = g.param(ParamId(2));
            let out = g.lstm_cell(pre, c);
            let m = g.mul(out, w);
            g.sum(m)
        });
    }

    #[test]
    fn gradients_accumulate_and_scale() {
        let mut a = Gradients::empty(2);
        let mut b = Gradients::empty(2);
        b.grads[1] = Some(Tensor::row_vector(vec![3.0, 4.0]));
        a.accumulate(&b, 2.0);
        a.accumulate(&b, 1.0);
        assert_eq!(a.get(ParamId(1)).unwrap().data(), &[9.0, 12.0]);
        assert!(a.get(ParamId(0)).is_none());
        assert!((a.global_norm() - 15.0).abs() < 1e-12);
    }
}
