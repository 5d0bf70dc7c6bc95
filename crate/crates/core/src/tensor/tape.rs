use rand::Rng;

use super::{gemm, gemm_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    Relu(Var),
    Abs(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    SegmentMean(Var, usize),
    Transpose(Var),
    SparseMatMul {
        table: Var,
        entries: Vec<(usize, usize, f64)>,
    },
    BlockMatMul(Var, Var, usize),
    BlockMatMulNt(Var, Var, usize),
    BceWithLogitsSum(Var, Vec<f64>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Records operations of one forward pass.
///
/// Parameters are borrowed rather than copied, so a tape never outlives the
/// parameter set it was built from. A tape belongs to a single thread.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zero when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| {
            let [r, c] = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowed from a parameter set.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(ta, false, tb, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "{name} shape mismatch: {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows, ta.cols, data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "add", |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "sub", |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "mul", |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(bias));
        assert_eq!(
            tb.shape(),
            [1, tx.cols],
            "bias shape mismatch: {:?} vs {:?}",
            tx.shape(),
            tb.shape()
        );
        let mut out = tx.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.map(x, |v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Multiplies every entry of `x` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Var {
        let sv = self.value(s).item();
        let out = self.map(x, |v| v * sv);
        self.push(out, Op::ScaleBy(s, x), &[s, x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat row mismatch: {} vs {}", t.rows, rows);
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        assert!(start <= end && end <= t.cols, "slice {start}..{end} of {:?}", t.shape());
        let w = end - start;
        let mut out = Tensor::zeros(t.rows, w);
        for r in 0..t.rows {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < t.rows, "row index {r} out of range for {:?}", t.shape());
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push(out, Op::GatherRows(x, idx.to_vec()), &[x])
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Var {
        self.gather_rows(table, ids)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::abs);
        self.push(out, Op::Abs(x), &[x])
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (t, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let n = t.cols;
        assert_eq!(g.shape(), [1, n], "layer_norm gain shape {:?}", g.shape());
        assert_eq!(b.shape(), [1, n], "layer_norm bias shape {:?}", b.shape());
        let mut out = Tensor::zeros(t.rows, n);
        let mut xhat = vec![0.0; t.rows * n];
        let mut rstd = vec![0.0; t.rows];
        for r in 0..t.rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out.data[r * n + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Inverted dropout: scales survivors by `1 / (1 - p)` when training,
    /// identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, train: bool) -> Var {
        if !train || p <= 0.0 {
            return x;
        }
        assert!(p < 1.0, "dropout probability {p} must be < 1");
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(t.rows, t.cols, data);
        self.push(out, Op::Dropout(x, mask), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over consecutive groups of `seg` rows: `(n*seg) x c -> n x c`.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Var {
        let t = self.value(x);
        assert!(seg > 0 && t.rows % seg == 0, "segment {seg} does not divide {} rows", t.rows);
        let n = t.rows / seg;
        let mut out = Tensor::zeros(n, t.cols);
        let inv = 1.0 / seg as f64;
        for s in 0..n {
            for r in s * seg..(s + 1) * seg {
                for (o, v) in out.row_mut(s).iter_mut().zip(t.row(r)) {
                    *o += v * inv;
                }
            }
        }
        self.push(out, Op::SegmentMean(x, seg), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x), &[x])
    }

    /// Sparse-times-dense product: row `r` of the output is
    /// `sum(w * table[i])` over the entries `(r, i, w)`.
    ///
    /// This is the embedding-bag primitive used by every lookup-style
    /// encoder.
    pub fn sparse_matmul(
        &mut self,
        rows: usize,
        entries: Vec<(usize, usize, f64)>,
        table: Var,
    ) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(rows, t.cols);
        for &(r, i, w) in &entries {
            assert!(r < rows && i < t.rows, "sparse entry ({r},{i}) out of range");
            for (o, v) in out.row_mut(r).iter_mut().zip(t.row(i)) {
                *o += w * v;
            }
        }
        self.push(out, Op::SparseMatMul { table, entries }, &[table])
    }

    /// Block-diagonal product. `a` stacks `n` square `block x block`
    /// matrices, `b` stacks `n` matrices of `block` rows; block `s` of the
    /// output is `a_s * b_s`.
    pub fn block_matmul(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, block, "block_matmul: a has {} cols, block {block}", ta.cols);
        assert_eq!(
            ta.rows,
            tb.rows,
            "block_matmul shape mismatch: {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let m = tb.cols;
        let mut out = Tensor::zeros(tb.rows, m);
        for s in 0..ta.rows / block {
            let ra = s * block * block..(s + 1) * block * block;
            let rb = s * block * m..(s + 1) * block * m;
            gemm_raw(
                block,
                block,
                m,
                &ta.data[ra],
                block,
                false,
                &tb.data[rb.clone()],
                m,
                false,
                &mut out.data[rb],
                0.0,
            );
        }
        self.push(out, Op::BlockMatMul(a, b, block), &[a, b])
    }

    /// Block-diagonal `a_s * b_s^T`, producing stacked `block x block`
    /// matrices.
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, block: usize) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "block_matmul_nt shape mismatch: {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        assert!(ta.rows % block == 0, "block {block} does not divide {} rows", ta.rows);
        let m = ta.cols;
        let mut out = Tensor::zeros(ta.rows, block);
        for s in 0..ta.rows / block {
            let r = s * block * m..(s + 1) * block * m;
            gemm_raw(
                block,
                m,
                block,
                &ta.data[r.clone()],
                m,
                false,
                &tb.data[r],
                m,
                true,
                &mut out.data[s * block * block..(s + 1) * block * block],
                0.0,
            );
        }
        self.push(out, Op::BlockMatMulNt(a, b, block), &[a, b])
    }

    /// Summed binary cross-entropy of an `n x 1` logit column against 0/1
    /// targets, in the numerically stable form.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &[f64]) -> Var {
        let t = self.value(logits);
        assert_eq!(t.len(), targets.len(), "bce: {} logits vs {} targets", t.len(), targets.len());
        let loss: f64 = t
            .data
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogitsSum(logits, targets.to_vec()),
            &[logits],
        )
    }

    /// Reverse pass from a scalar loss. Gradients of every use of a value
    /// are summed; leaves not marked trainable get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss {
                rows: shape[0],
                cols: shape[1],
            });
        }
        let shapes: Vec<[usize; 2]> = self.nodes.iter().map(|n| n.value.get().shape()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || grads[i].is_none() {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let g = upper[0].take().expect("checked above");
            let mut acc = Acc {
                grads: lower,
                nodes: &self.nodes,
            };
            self.backward_node(&node.op, node.value.get(), &g, &mut acc);
        }
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, op: &Op, out: &Tensor, g: &Tensor, acc: &mut Acc<'_, 'a>) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc.with(*a, |ga| gemm(g, false, tb, true, ga, 1.0));
                acc.with(*b, |gb| gemm(ta, true, g, false, gb, 1.0));
            }
            Op::Add(a, b) => {
                acc.with(*a, |ga| ga.add_assign(g));
                acc.with(*b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc.with(*a, |ga| ga.add_assign(g));
                acc.with(*b, |gb| {
                    for (x, y) in gb.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc.with(*x, |gx| gx.add_assign(g));
                acc.with(*b, |gb| {
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc.with(*a, |ga| {
                    for ((o, gv), bv) in ga.data.iter_mut().zip(&g.data).zip(&tb.data) {
                        *o += gv * bv;
                    }
                });
                acc.with(*b, |gb| {
                    for ((o, gv), av) in gb.data.iter_mut().zip(&g.data).zip(&ta.data) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(x, s) => acc.with(*x, |gx| {
                for (o, v) in gx.data.iter_mut().zip(&g.data) {
                    *o += s * v;
                }
            }),
            Op::ScaleBy(s, x) => {
                let sv = self.value(*s).item();
                let tx = self.value(*x);
                acc.with(*s, |gs| {
                    gs.data[0] += g.data.iter().zip(&tx.data).map(|(a, b)| a * b).sum::<f64>();
                });
                acc.with(*x, |gx| {
                    for (o, v) in gx.data.iter_mut().zip(&g.data) {
                        *o += sv * v;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    acc.with(p, |gp| {
                        for r in 0..g.rows {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(x, start) => acc.with(*x, |gx| {
                for r in 0..g.rows {
                    for (o, v) in gx.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }),
            Op::GatherRows(x, idx) => acc.with(*x, |gx| {
                for (i, &r) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
            }),
            Op::SoftmaxRows(x) => acc.with(*x, |gx| {
                for r in 0..g.rows {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gx.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *o += yv * (gv - dot);
                    }
                }
            }),
            Op::Relu(x) => {
                let tx = self.value(*x);
                acc.with(*x, |gx| {
                    for ((o, v), xv) in gx.data.iter_mut().zip(&g.data).zip(&tx.data) {
                        if *xv > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let tx = self.value(*x);
                acc.with(*x, |gx| {
                    for ((o, v), xv) in gx.data.iter_mut().zip(&g.data).zip(&tx.data) {
                        // subgradient 0 at the kink
                        *o += v * if *xv > 0.0 {
                            1.0
                        } else if *xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = g.cols;
                let gv = self.value(*gain);
                acc.with(*gain, |gg| {
                    for r in 0..g.rows {
                        for c in 0..n {
                            gg.data[c] += g.data[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                acc.with(*bias, |gb| {
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
                acc.with(*x, |gx| {
                    let mut dxhat = vec![0.0; n];
                    for r in 0..g.rows {
                        let xh = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            dxhat[c] = g.data[r * n + c] * gv.data[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / n as f64;
                        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            gx.data[r * n + c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => acc.with(*x, |gx| {
                for ((o, v), m) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                    *o += v * m;
                }
            }),
            Op::Sum(x) => {
                let s = g.item();
                acc.with(*x, |gx| gx.data.iter_mut().for_each(|o| *o += s));
            }
            Op::Mean(x) => {
                let s = g.item() / self.value(*x).len() as f64;
                acc.with(*x, |gx| gx.data.iter_mut().for_each(|o| *o += s));
            }
            Op::SegmentMean(x, seg) => {
                let inv = 1.0 / *seg as f64;
                acc.with(*x, |gx| {
                    for r in 0..gx.rows {
                        let s = r / seg;
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o += v * inv;
                        }
                    }
                });
            }
            Op::Transpose(x) => acc.with(*x, |gx| gx.add_assign(&g.transpose())),
            Op::SparseMatMul { table, entries } => acc.with(*table, |gt| {
                for &(r, i, w) in entries {
                    for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += w * v;
                    }
                }
            }),
            Op::BlockMatMul(a, b, block) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, m) = (*block, tb.cols);
                let n = ta.rows / k;
                acc.with(*a, |ga| {
                    for s in 0..n {
                        let rb = s * k * m..(s + 1) * k * m;
                        gemm_raw(
                            k,
                            m,
                            k,
                            &g.data[rb.clone()],
                            m,
                            false,
                            &tb.data[rb],
                            m,
                            true,
                            &mut ga.data[s * k * k..(s + 1) * k * k],
                            1.0,
                        );
                    }
                });
                acc.with(*b, |gb| {
                    for s in 0..n {
                        let rb = s * k * m..(s + 1) * k * m;
                        gemm_raw(
                            k,
                            k,
                            m,
                            &ta.data[s * k * k..(s + 1) * k * k],
                            k,
                            true,
                            &g.data[rb.clone()],
                            m,
                            false,
                            &mut gb.data[rb],
                            1.0,
                        );
                    }
                });
            }
            Op::BlockMatMulNt(a, b, block) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, m) = (*block, ta.cols);
                let n = ta.rows / k;
                acc.with(*a, |ga| {
                    for s in 0..n {
                        let r = s * k * m..(s + 1) * k * m;
                        gemm_raw(
                            k,
                            k,
                            m,
                            &g.data[s * k * k..(s + 1) * k * k],
                            k,
                            false,
                            &tb.data[r.clone()],
                            m,
                            false,
                            &mut ga.data[r],
                            1.0,
                        );
                    }
                });
                acc.with(*b, |gb| {
                    for s in 0..n {
                        let r = s * k * m..(s + 1) * k * m;
                        gemm_raw(
                            k,
                            k,
                            m,
                            &g.data[s * k * k..(s + 1) * k * k],
                            k,
                            true,
                            &ta.data[r.clone()],
                            m,
                            false,
                            &mut gb.data[r],
                            1.0,
                        );
                    }
                });
            }
            Op::BceWithLogitsSum(x, targets) => {
                let s = g.item();
                let tx = self.value(*x);
                acc.with(*x, |gx| {
                    for ((o, &xv), &y) in gx.data.iter_mut().zip(&tx.data).zip(targets) {
                        *o += s * (sigmoid(xv) - y);
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Acc<'g, 'a> {
    grads: &'g mut [Option<Tensor>],
    nodes: &'g [Node<'a>],
}

impl Acc<'_, '_> {
    fn with(&mut self, v: Var, f: impl FnOnce(&mut Tensor)) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        let g = slot.get_or_insert_with(|| {
            let [r, c] = node.value.get().shape();
            Tensor::zeros(r, c)
        });
        f(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_matches_closed_form() {
        // mean 2, variance 1: outputs are -1/sqrt(1+eps), 1/sqrt(1+eps)
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![1.0, 3.0]));
        let g = tape.constant(Tensor::row_vector(vec![1.0, 1.0]));
        let b = tape.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 1e-5);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] + expect).abs() < 1e-15);
        assert!((out[1] - expect).abs() < 1e-15);
        assert!(out[1] < 1.0 && out[1] > 0.99999);
    }

    #[test]
    fn quadratic_gradient() {
        let w = Tensor::row_vector(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let wv = tape.param(&w);
        let sq = tape.mul(wv, wv);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(wv).data(), &[2.0, 4.0]);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let a = Tensor::row_vector(vec![1.0, 2.0]);
        let b = Tensor::row_vector(vec![3.0]);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.param(&b);
        let loss = tape.sum(av);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(bv).is_none());
        assert_eq!(g.wrt(bv).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let a = Tensor::row_vector(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        assert!(matches!(
            tape.backward(av),
            Err(Error::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn dropout_is_identity_at_eval_and_scaled_in_training() {
        let x = Tensor::full(4, 8, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        assert_eq!(tape.dropout(xv, 0.5, &mut rng, false), xv);
        let y = tape.dropout(xv, 0.5, &mut rng, true);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn gradients_accumulate_over_uses() {
        let w = Tensor::scalar(3.0);
        let mut tape = Tape::new();
        let wv = tape.param(&w);
        let a = tape.scale(wv, 2.0);
        let b = tape.add(a, wv);
        let g = tape.backward(b).unwrap();
        assert_eq!(g.wrt(wv).item(), 3.0);
    }
}
