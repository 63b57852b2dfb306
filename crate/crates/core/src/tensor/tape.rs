//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`] walks
//! the nodes in reverse creation order, so gradient accumulation order is fixed
//! for a given program. All values are treated as matrices: a rank-1 tensor of
//! length `n` behaves as `1 × n`.

use std::collections::{BTreeMap, HashMap};

use super::dense::{dot, gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use super::macs::MacCounter;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulBt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    MulScalar {
        a: Var,
        s: Var,
    },
    Transpose {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        a: Var,
    },
    Exp {
        a: Var,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows {
        a: Var,
    },
    SumAll {
        a: Var,
    },
    NormalizeRows {
        a: Var,
        norms: Vec<f64>,
    },
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    MulRow {
        a: Var,
        row: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    macs: MacCounter,
    bound: HashMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_counter() -> Self {
        Self {
            macs: MacCounter::new(true),
            ..Self::default()
        }
    }

    pub fn macs(&self) -> &MacCounter {
        &self.macs
    }

    pub fn macs_mut(&mut self) -> &mut MacCounter {
        &mut self.macs
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Binds a named parameter as a differentiable leaf; repeated binds return
    /// the same node so a shared weight accumulates a single gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.variable(t)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradient of every bound parameter, by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.value(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_labeled(a, b, "matmul")
    }

    /// `a · b`, recording `m·n·k` MACs under `label`.
    pub fn matmul_labeled(&mut self, a: Var, b: Var, label: &str) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}×{k} by {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.macs.record(label, (m * n * k) as u64);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul { a, b },
            tracked,
            label,
        )
    }

    /// `a · bᵀ` with `b` given as `n × k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var, label: &str) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul_bt {m}×{k} by ({n}×{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.macs.record(label, (m * n * k) as u64);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMulBt { a, b },
            tracked,
            label,
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(Error::shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (m, n) = self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::matrix(m, n, data)?, op, tracked, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add { a, b }, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub { a, b }, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul { a, b }, "mul", |x, y| x * y)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(Error::shape(format!(
                "add_row: {m}×{n} + {:?}",
                self.value(row).shape()
            )));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(r) {
                *x += b;
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::AddRow { a, row },
            tracked,
            "add_row",
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::Scale { a, c },
            tracked,
            "scale",
        )
    }

    /// Multiplies every entry of `a` by the single value held in `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(
                "mul_scalar: scalar operand has more than one value",
            ));
        }
        let (m, n) = self.dims(a);
        let c = self.value(s).item();
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let tracked = self.tracked(a) || self.tracked(s);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::MulScalar { a, s },
            tracked,
            "mul_scalar",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(n, m, data)?,
            Op::Transpose { a },
            tracked,
            "transpose",
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::Softmax { a },
            tracked,
            "softmax",
        )
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (each `1 × n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let (m, n) = self.dims(x);
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape(format!(
                "layer_norm: width {n} with affine of {}",
                self.value(gamma).len()
            )));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for (i, row) in self.value(x).data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            tracked,
            "layer_norm",
        )
    }

    /// GELU, tanh form.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
            .collect();
        let tracked = self.tracked(a);
        self.push(Tensor::matrix(m, n, data)?, Op::Gelu { a }, tracked, "gelu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| x.exp()).collect();
        let tracked = self.tracked(a);
        self.push(Tensor::matrix(m, n, data)?, Op::Exp { a }, tracked, "exp")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(Error::shape(format!("slice_cols {start}+{len} of {n}")));
        }
        let mut data = Vec::with_capacity(m * len);
        for row in self.value(a).data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(m, len, data)?,
            Op::SliceCols { a, start },
            tracked,
            "slice_cols",
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > m {
            return Err(Error::shape(format!("slice_rows {start}+{len} of {m}")));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(len, n, data)?,
            Op::SliceRows { a, start },
            tracked,
            "slice_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.dims(p).0 != m) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::ConcatCols(parts.to_vec()),
            tracked,
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.dims(p).1 != n) {
            return Err(Error::shape("concat_rows: widths differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let m = data.len() / n;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::ConcatRows(parts.to_vec()),
            tracked,
            "concat_rows",
        )
    }

    /// Mean over rows, giving `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let tracked = self.tracked(a);
        self.push(Tensor::row(out), Op::MeanRows { a }, tracked, "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::row(vec![s]), Op::SumAll { a }, tracked, "sum")
    }

    /// Rows of `a` picked by `idx` (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if idx.is_empty() {
            return Err(Error::shape("gather_rows with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape(format!("gather_rows index {bad} of {m} rows")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(idx.len(), n, data)?,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            tracked,
            "gather_rows",
        )
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(Error::shape(format!(
                "mul_row: {m}×{n} by {:?}",
                self.value(row).shape()
            )));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(r) {
                *x *= b;
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::MulRow { a, row },
            tracked,
            "mul_row",
        )
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        let mut norms = Vec::with_capacity(m);
        for row in data.chunks_mut(n) {
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::invalid("normalize_rows: zero vector"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let tracked = self.tracked(a);
        self.push(
            Tensor::matrix(m, n, data)?,
            Op::NormalizeRows { a, norms },
            tracked,
            "normalize_rows",
        )
    }

    /// Mean over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::shape(format!(
                "cross_entropy: {m} rows, {} targets",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::invalid(format!(
                "cross_entropy target {t} out of {n} classes"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(n).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= m as f64;
        let tracked = self.tracked(logits);
        self.push(
            Tensor::row(vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
            "cross_entropy",
        )
    }

    /// Reverse pass from a single-valued `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let (m, n) = (out.rows(), out.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (_, k) = self.dims(*a);
                if self.tracked(*a) {
                    // dA = G · Bᵀ
                    let ga = acc(grads, *a, m * k);
                    gemm_bt_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.tracked(*b) {
                    // dB = Aᵀ · G
                    let gb = acc(grads, *b, k * n);
                    gemm_at_acc(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::MatMulBt { a, b } => {
                let (_, k) = self.dims(*a);
                if self.tracked(*a) {
                    // dA = G · B
                    let ga = acc(grads, *a, m * k);
                    gemm_acc(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.tracked(*b) {
                    // dB = Gᵀ · A
                    let gb = acc(grads, *b, n * k);
                    gemm_at_acc(g, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Add { a, b } => {
                self.add_into(grads, *a, g, 1.0);
                self.add_into(grads, *b, g, 1.0);
            }
            Op::Sub { a, b } => {
                self.add_into(grads, *a, g, 1.0);
                self.add_into(grads, *b, g, -1.0);
            }
            Op::Mul { a, b } => {
                if self.tracked(*a) {
                    let bv = self.value(*b).data();
                    let ga = acc(grads, *a, g.len());
                    for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * y;
                    }
                }
                if self.tracked(*b) {
                    let av = self.value(*a).data();
                    let gb = acc(grads, *b, g.len());
                    for ((x, &gi), &y) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * y;
                    }
                }
            }
            Op::AddRow { a, row } => {
                self.add_into(grads, *a, g, 1.0);
                if self.tracked(*row) {
                    let gr = acc(grads, *row, n);
                    for chunk in g.chunks(n) {
                        for (x, &gi) in gr.iter_mut().zip(chunk) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Scale { a, c } => self.add_into(grads, *a, g, *c),
            Op::MulScalar { a, s } => {
                let c = self.value(*s).item();
                self.add_into(grads, *a, g, c);
                if self.tracked(*s) {
                    let d = dot(g, self.value(*a).data());
                    acc(grads, *s, 1)[0] += d;
                }
            }
            Op::Transpose { a } => {
                if self.tracked(*a) {
                    // output is m×n, input n×m
                    let ga = acc(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[j * m + i] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                if self.tracked(*a) {
                    let ga = acc(grads, *a, m * n);
                    for ((gr, yr), dst) in
                        g.chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n))
                    {
                        let s = dot(gr, yr);
                        for j in 0..n {
                            dst[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                if self.tracked(*x) {
                    let gx = acc(grads, *x, m * n);
                    let mut dxhat = vec![0.0; n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        for j in 0..n {
                            dxhat[j] = gr[j] * gam[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dot(&dxhat, hr);
                        let r = rstd[i] / n as f64;
                        for j in 0..n {
                            gx[i * n + j] += r * (n as f64 * dxhat[j] - s1 - hr[j] * s2);
                        }
                    }
                }
                if self.tracked(*gamma) {
                    let gg = acc(grads, *gamma, n);
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.tracked(*beta) {
                    let gb = acc(grads, *beta, n);
                    for gr in g.chunks(n) {
                        for j in 0..n {
                            gb[j] += gr[j];
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                if self.tracked(*a) {
                    let xs = self.value(*a).data();
                    let ga = acc(grads, *a, m * n);
                    for ((dst, &gi), &x) in ga.iter_mut().zip(g).zip(xs) {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *dst += gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                    }
                }
            }
            Op::Exp { a } => {
                if self.tracked(*a) {
                    let ga = acc(grads, *a, m * n);
                    for ((dst, &gi), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *dst += gi * y;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.tracked(*a) {
                    let src_n = self.dims(*a).1;
                    let ga = acc(grads, *a, m * src_n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * src_n + start + j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if self.tracked(*a) {
                    let len = self.value(*a).len();
                    let ga = acc(grads, *a, len);
                    for (dst, &gi) in ga[start * n..(start + m) * n].iter_mut().zip(g) {
                        *dst += gi;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.tracked(p) {
                        let gp = acc(grads, p, m * w);
                        for i in 0..m {
                            for j in 0..w {
                                gp[i * w + j] += g[i * n + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.tracked(p) {
                        let gp = acc(grads, p, len);
                        for (dst, &gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *dst += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::MeanRows { a } => {
                if self.tracked(*a) {
                    let rows = self.dims(*a).0;
                    let ga = acc(grads, *a, rows * n);
                    let inv = 1.0 / rows as f64;
                    for chunk in ga.chunks_mut(n) {
                        for (dst, &gi) in chunk.iter_mut().zip(g) {
                            *dst += gi * inv;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.tracked(*a) {
                    let len = self.value(*a).len();
                    let ga = acc(grads, *a, len);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::NormalizeRows { a, norms } => {
                if self.tracked(*a) {
                    let ga = acc(grads, *a, m * n);
                    for i in 0..m {
                        let y = &out.data()[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let s = dot(y, gr);
                        for j in 0..n {
                            ga[i * n + j] += (gr[j] - y[j] * s) / norms[i];
                        }
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if self.tracked(*a) {
                    let len = self.value(*a).len();
                    let ga = acc(grads, *a, len);
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            ga[i * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::MulRow { a, row } => {
                let r = self.value(*row).data();
                if self.tracked(*a) {
                    let ga = acc(grads, *a, m * n);
                    for (dst, gr) in ga.chunks_mut(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            dst[j] += gr[j] * r[j];
                        }
                    }
                }
                if self.tracked(*row) {
                    let av = self.value(*a).data();
                    let gr_acc = acc(grads, *row, n);
                    for (ar, gr) in av.chunks(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            gr_acc[j] += gr[j] * ar[j];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.tracked(*logits) {
                    let (rows, cols) = self.dims(*logits);
                    let gl = acc(grads, *logits, rows * cols);
                    let scale = g[0] / rows as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..cols {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[i * cols + j] += scale * (probs[i * cols + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    fn add_into(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], c: f64) {
        if !self.tracked(v) {
            return;
        }
        let dst = acc(grads, v, g.len());
        for (d, &gi) in dst.iter_mut().zip(g) {
            *d += c * gi;
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
