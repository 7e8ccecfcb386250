//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the recipe needed to push gradients back to its inputs. Graphs are built
//! once per forward pass and thrown away after [`Graph::backward`].

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row-mixing matrix: output row `r` is `sum_k weight * input[row]`
/// over `rows[r]`. Used for bilinear / nearest resampling of patch grids.
#[derive(Debug, Clone)]
pub struct RowMixer {
    pub n_in: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RowMixer {
    pub fn n_out(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, input: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(input.nrows(), self.n_in, "row mixer input rows");
        let mut out = Array2::zeros((self.rows.len(), input.ncols()));
        for (r, taps) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(r);
            for &(i, w) in taps {
                dst.scaled_add(w, &input.row(i));
            }
        }
        out
    }

    fn apply_transpose(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_in, grad.ncols()));
        for (r, taps) in self.rows.iter().enumerate() {
            let src = grad.row(r);
            for &(i, w) in taps {
                out.row_mut(i).scaled_add(w, &src);
            }
        }
        out
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` with `row` of shape (1, n) broadcast over rows.
    AddRow(Var, Var),
    /// `a * row` with `row` of shape (1, n) broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    NormalizeRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    MixRows(Var, Arc<RowMixer>),
    /// Column-wise mean of selected entries: out[0, c] = mean_{i in sel[c]} a[i, c].
    PoolSelected(Var, Vec<Vec<usize>>),
    /// Mean binary cross-entropy of a (1, n) probability row against targets.
    BinaryCrossEntropy(Var, Vec<f64>, f64),
    /// Mean softmax cross-entropy over rows; `None` targets are ignored.
    CrossEntropyRows(Var, Arc<Vec<Option<usize>>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn layer_norm_rows(a: ArrayView2<f64>, eps: f64) -> (Array2<f64>, Vec<f64>) {
    let n = a.ncols() as f64;
    let mut out = a.to_owned();
    let mut inv_std = Vec::with_capacity(a.nrows());
    for mut row in out.rows_mut() {
        let mean = row.sum() / n;
        row.mapv_inplace(|x| x - mean);
        let var = row.fold(0.0, |acc, &x| acc + x * x) / n;
        let inv = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|x| x * inv);
        inv_std.push(inv);
    }
    (out, inv_std)
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a (1, 1) node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[(0, 0)]
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

    /// Trainable input.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a (1, n) row");
        let v = self.value(a) + self.value(row);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a (1, n) row");
        let v = self.value(a) * self.value(row);
        let rg = self.rg(&[a, row]);
        self.push(v, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a).view());
        let rg = self.rg(&[a]);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardisation (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (v, _) = layer_norm_rows(self.value(a).view(), eps);
        let rg = self.rg(&[a]);
        self.push(v, Op::LayerNormRows(a, eps), rg)
    }

    /// Divides every row by its L2 norm. Callers must guard zero rows.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::NormalizeRows(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let rg = self.rg(&[a]);
        self.push(v, Op::GatherRows(a, idx.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn mix_rows(&mut self, a: Var, mixer: Arc<RowMixer>) -> Var {
        let v = mixer.apply(self.value(a).view());
        let rg = self.rg(&[a]);
        self.push(v, Op::MixRows(a, mixer), rg)
    }

    /// Averages the selected entries of every column into a (1, n) row.
    pub fn pool_selected(&mut self, a: Var, selection: Vec<Vec<usize>>) -> Var {
        let val = self.value(a);
        assert_eq!(selection.len(), val.ncols(), "one selection per column");
        let mut out = Array2::zeros((1, val.ncols()));
        for (c, sel) in selection.iter().enumerate() {
            assert!(!sel.is_empty(), "empty pooling selection for column {c}");
            out[(0, c)] = sel.iter().map(|&i| val[(i, c)]).sum::<f64>() / sel.len() as f64;
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::PoolSelected(a, selection), rg)
    }

    /// Mean binary cross-entropy with probabilities clamped to `[clamp, 1 - clamp]`.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: Vec<f64>, clamp: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.len(), targets.len(), "bce target length");
        let loss = p
            .iter()
            .zip(&targets)
            .map(|(&y, &t)| {
                let y = y.clamp(clamp, 1.0 - clamp);
                -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
            })
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(&[probs]);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::BinaryCrossEntropy(probs, targets, clamp),
            rg,
        )
    }

    /// Mean softmax cross-entropy of row logits against class targets.
    /// Returns 0 when every target is ignored.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Arc<Vec<Option<usize>>>) -> Var {
        let val = self.value(logits);
        assert_eq!(val.nrows(), targets.len(), "one target per row");
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, t) in val.rows().into_iter().zip(targets.iter()) {
            if let Some(t) = *t {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let lse = row.fold(0.0, |acc, &x| acc + (x - max).exp()).ln() + max;
                total += lse - row[t];
                count += 1;
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let rg = self.rg(&[logits]);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropyRows(logits, targets),
            rg,
        )
    }

    /// Back-propagates from a (1, 1) node, returning gradients for every node
    /// that requires them.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], -g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g * self.value(*b));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*row) {
                    accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g * self.value(*row));
                }
                if self.wants(*row) {
                    let prod = g * self.value(*a);
                    accumulate(
                        &mut grads[row.0],
                        prod.sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
            }
            Op::Scale(a, k) => accumulate(&mut grads[a.0], g * *k),
            Op::AddScalar(a) => accumulate(&mut grads[a.0], g.clone()),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(out)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(out)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(&mut grads[a.0], d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                accumulate(&mut grads[a.0], d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * out;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let s = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d -= y * s);
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::LayerNormRows(a, eps) => {
                let (_, inv_std) = layer_norm_rows(self.value(*a).view(), *eps);
                let n = out.ncols() as f64;
                let mut d = g.clone();
                for ((mut drow, xhat), inv) in d.rows_mut().into_iter().zip(out.rows()).zip(inv_std)
                {
                    let mean_g = drow.sum() / n;
                    let mean_gx = drow.dot(&xhat) / n;
                    Zip::from(&mut drow)
                        .and(&xhat)
                        .for_each(|d, &xh| *d = inv * (*d - mean_g - xh * mean_gx));
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for ((mut drow, yrow), xrow) in
                    d.rows_mut().into_iter().zip(out.rows()).zip(x.rows())
                {
                    let n = xrow.dot(&xrow).sqrt();
                    let gy = drow.dot(&yrow);
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d = (*d - y * gy) / n);
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::SliceCols(a, start) => {
                let shape = self.value(*a).dim();
                let mut d = Array2::zeros(shape);
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(&mut grads[a.0], d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = d.row_mut(i);
                    dst += &g.row(r);
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Sum(a) => {
                let gv = g[(0, 0)];
                accumulate(&mut grads[a.0], Array2::from_elem(self.value(*a).dim(), gv));
            }
            Op::MixRows(a, mixer) => {
                accumulate(&mut grads[a.0], mixer.apply_transpose(g.view()));
            }
            Op::PoolSelected(a, selection) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (c, sel) in selection.iter().enumerate() {
                    let share = g[(0, c)] / sel.len() as f64;
                    for &i in sel {
                        d[(i, c)] += share;
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::BinaryCrossEntropy(p, targets, clamp) => {
                let probs = self.value(*p);
                let n = targets.len() as f64;
                let gv = g[(0, 0)];
                let mut d = Array2::zeros(probs.dim());
                for ((dv, &y), &t) in d.iter_mut().zip(probs.iter()).zip(targets) {
                    if y > *clamp && y < 1.0 - *clamp {
                        *dv = gv * (-(t / y) + (1.0 - t) / (1.0 - y)) / n;
                    }
                }
                accumulate(&mut grads[p.0], d);
            }
            Op::CrossEntropyRows(logits, targets) => {
                let count = targets.iter().filter(|t| t.is_some()).count();
                let x = self.value(*logits);
                let mut d = Array2::zeros(x.dim());
                if count > 0 {
                    let gv = g[(0, 0)] / count as f64;
                    let probs = softmax_rows(x.view());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut drow = d.row_mut(r);
                            drow.assign(&probs.row(r));
                            drow[t] -= 1.0;
                            drow *= gv;
                        }
                    }
                }
                accumulate(&mut grads[logits.0], d);
            }
        }
    }
}
