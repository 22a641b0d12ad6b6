//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs were recorded earlier, so the
//! tape is already in topological order and [`Tape::backward`] simply walks
//! it back to front. A tape accepts one backward pass; call
//! [`Tape::zero_grads`] before running another.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale {
        a: Var,
        c: f64,
    },
    Relu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        cols: Range<usize>,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<Option<usize>>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        saved: AttentionSaved,
    },
}

/// Per (segment, head) attention weights kept for backward and tracing.
#[derive(Debug, Clone)]
pub struct AttentionSaved {
    pub segments: Vec<Range<usize>>,
    pub heads: usize,
    /// Post-softmax weights, one `len x len` row-major block per
    /// (segment, head), indexed `seg * heads + head`. Entries above the
    /// diagonal are zero.
    pub probs: Vec<Vec<f64>>,
    /// Post-softmax keep masks with the same indexing; `None` keeps all.
    pub keep: Vec<Option<Vec<bool>>>,
}

impl AttentionSaved {
    /// Weights after the keep mask, for one (segment, head).
    pub fn ablated(&self, seg: usize, head: usize) -> Vec<f64> {
        let i = seg * self.heads + head;
        match &self.keep[i] {
            None => self.probs[i].clone(),
            Some(k) => self.probs[i]
                .iter()
                .zip(k)
                .map(|(&p, &keep)| if keep { p } else { 0.0 })
                .collect(),
        }
    }
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Records an input. Trainable parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Saved attention weights of an attention node.
    pub fn attention(&self, v: Var) -> Option<&AttentionSaved> {
        match &self.ops[v.0] {
            Op::Attention { saved, .. } => Some(saved),
            _ => None,
        }
    }

    /// Clears every gradient so the tape can be differentiated again.
    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if tb.shape().len() != 2 || ta.shape().is_empty() || ta.cols() != tb.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            k,
            1,
            tb.data(),
            n,
            1,
            0.0,
            &mut out,
            n,
            1,
        );
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, req))
    }

    /// Elementwise sum. `b` may also be a vector matching the last dimension
    /// of `a`, in which case it is added to every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if tb.shape().len() == 1 && tb.len() == ta.cols() {
            true
        } else {
            return Err(Error::Shape {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        let c = ta.cols();
        let data = if broadcast {
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % c])
                .collect()
        } else {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x + y)
                .collect()
        };
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(t, Op::Add { a, b, broadcast }, req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = &self.values[a.0];
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        let req = self.requires[a.0];
        self.push(t, Op::Scale { a, c }, req)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = &self.values[a.0];
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { 0.0 })
                .collect(),
        )
        .expect("same shape");
        let req = self.requires[a.0];
        self.push(t, Op::Relu { a }, req)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = &self.values[x.0];
        let d = tx.cols();
        if d < 2 {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: vec![2],
            });
        }
        for p in [gain, bias] {
            let tp = &self.values[p.0];
            if tp.shape() != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.values[gain.0].data(), self.values[bias.0].data());
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let req = self.requires[x.0] || self.requires[gain.0] || self.requires[bias.0];
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            req,
        ))
    }

    /// Softmax over the last dimension. Entries with `masked[i] == true` are
    /// excluded and come out exactly zero.
    pub fn softmax(&mut self, x: Var, masked: Option<&[bool]>) -> Result<Var> {
        let tx = &self.values[x.0];
        if let Some(m) = masked {
            if m.len() != tx.len() {
                return Err(Error::Shape {
                    op: "softmax",
                    lhs: tx.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let c = tx.cols();
        let mut out = vec![0.0; tx.len()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let vis = |j: usize| masked.map_or(true, |m| !m[r * c + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if vis(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMasked { row: r });
            }
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if vis(j) {
                    let e = math::exp(v - max);
                    out[r * c + j] = e;
                    z += e;
                }
            }
            for o in &mut out[r * c..(r + 1) * c] {
                *o /= z;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let req = self.requires[x.0];
        Ok(self.push(t, Op::Softmax { x }, req))
    }

    /// Softmax cross-entropy of a single logit vector against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.values[logits.0].cols();
        if self.values[logits.0].rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: self.values[logits.0].shape().to_vec(),
                rhs: vec![n],
            });
        }
        self.cross_entropy_rows(logits, 0..n, &[Some(target)])
    }

    /// Summed softmax cross-entropy over rows, using only the columns in
    /// `cols` as the class set. Rows whose target is `None` contribute
    /// nothing.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        cols: Range<usize>,
        targets: &[Option<usize>],
    ) -> Result<Var> {
        let tl = &self.values[logits.0];
        let c = tl.cols();
        if cols.end > c || cols.is_empty() || targets.len() != tl.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len(), cols.end],
            });
        }
        let k = cols.len();
        let mut probs = vec![0.0; targets.len() * k];
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= k {
                return Err(Error::Index {
                    what: "class",
                    index: t,
                    bound: k,
                });
            }
            let row = &tl.row(r)[cols.clone()];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = math::exp(v - max);
                probs[r * k + j] = e;
                z += e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= z;
            }
            loss += math::ln(z) - (row[t] - max);
        }
        let req = self.requires[logits.0];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                cols,
                targets: targets.to_vec(),
                probs,
            },
            req,
        ))
    }

    /// Row lookup into `table`. `None` produces a zero row.
    pub fn gather(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let tt = &self.values[table.0];
        if tt.shape().len() != 2 {
            return Err(Error::Shape {
                op: "gather",
                lhs: tt.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = vec![0.0; idx.len() * d];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= v {
                    return Err(Error::Index {
                        what: "embedding row",
                        index: i,
                        bound: v,
                    });
                }
                out[r * d..(r + 1) * d].copy_from_slice(tt.row(i));
            }
        }
        let t = Tensor::new(vec![idx.len(), d], out)?;
        let req = self.requires[table.0];
        Ok(self.push(
            t,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            req,
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = &self.values[x.0];
        let d = tx.cols();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= tx.rows() {
                return Err(Error::Index {
                    what: "row",
                    index: r,
                    bound: tx.rows(),
                });
            }
            out.extend_from_slice(tx.row(r));
        }
        let t = Tensor::new(vec![rows.len(), d], out)?;
        let req = self.requires[x.0];
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            req,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data().iter().sum();
        let req = self.requires[x.0];
        self.push(Tensor::scalar(s), Op::Sum { x }, req)
    }

    /// Future-masked scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[rows, d]`; each range in `segments` is one
    /// independent sequence. Columns are split into `heads` equal blocks.
    /// `keep`, when given, holds one optional `len x len` mask per
    /// (segment, head) that is applied after the softmax without
    /// renormalization.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Range<usize>],
        heads: usize,
        keep: Option<Vec<Option<Vec<bool>>>>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.shape().len() != 2 {
            return Err(Error::Shape {
                op: "attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (n, d) = (tq.rows(), tq.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "{d} columns do not split into {heads} heads"
            )));
        }
        if segments.iter().any(|s| s.end > n || s.is_empty()) {
            return Err(Error::Config("attention segment out of range".to_string()));
        }
        let keep = keep.unwrap_or_else(|| vec![None; segments.len() * heads]);
        if keep.len() != segments.len() * heads {
            return Err(Error::Ablation(
                "keep mask count does not match segments x heads".into(),
            ));
        }
        let hd = d / heads;
        let scale = 1.0 / math::sqrt(hd as f64);
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::with_capacity(keep.len());
        for (s, seg) in segments.iter().enumerate() {
            let t = seg.len();
            let base = seg.start * d;
            for h in 0..heads {
                let off = base + h * hd;
                let mut p = vec![0.0; t * t];
                gemm(
                    t,
                    hd,
                    t,
                    scale,
                    &tq.data()[off..],
                    d,
                    1,
                    &tk.data()[off..],
                    1,
                    d,
                    0.0,
                    &mut p,
                    t,
                    1,
                );
                for i in 0..t {
                    let row = &mut p[i * t..(i + 1) * t];
                    let max = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in &mut row[..=i] {
                        *x = math::exp(*x - max);
                        z += *x;
                    }
                    for x in &mut row[..=i] {
                        *x /= z;
                    }
                    for x in &mut row[i + 1..] {
                        *x = 0.0;
                    }
                }
                let km = &keep[s * heads + h];
                if let Some(km) = km {
                    if km.len() != t * t {
                        return Err(Error::Ablation("keep mask has wrong size".into()));
                    }
                }
                let applied: Vec<f64>;
                let pa: &[f64] = match km {
                    None => &p,
                    Some(km) => {
                        applied = p
                            .iter()
                            .zip(km)
                            .map(|(&x, &kp)| if kp { x } else { 0.0 })
                            .collect();
                        &applied
                    }
                };
                gemm(
                    t,
                    t,
                    hd,
                    1.0,
                    pa,
                    t,
                    1,
                    &tv.data()[off..],
                    d,
                    1,
                    0.0,
                    &mut out[off..],
                    d,
                    1,
                );
                probs.push(p);
            }
        }
        let req = self.requires[q.0] || self.requires[k.0] || self.requires[v.0];
        let saved = AttentionSaved {
            segments: segments.to_vec(),
            heads,
            probs,
            keep,
        };
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::Attention { q, k, v, saved },
            req,
        ))
    }

    /// Populates gradients of every `requires_grad` value reachable from the
    /// scalar `loss`. Gradients accumulate across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "tape already differentiated; call zero_grads first".into(),
            ));
        }
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, g: &[f64]) {
        let (values, requires, grads) = (&self.values, &self.requires, &mut self.grads);
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (values[a.0].rows(), values[a.0].cols());
                let n = values[b.0].cols();
                if requires[a.0] {
                    let bv = values[b.0].data();
                    let ga = slot(grads, requires, values, *a).unwrap();
                    // dA = dC * B^T
                    gemm(m, n, k, 1.0, g, n, 1, bv, 1, n, 1.0, ga, k, 1);
                }
                if requires[b.0] {
                    let av = values[a.0].data();
                    let gb = slot(grads, requires, values, *b).unwrap();
                    // dB = A^T * dC
                    gemm(k, m, n, 1.0, av, 1, k, g, n, 1, 1.0, gb, n, 1);
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(ga) = slot(grads, requires, values, *a) {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(gb) = slot(grads, requires, values, *b) {
                    if *broadcast {
                        let c = gb.len();
                        for (j, y) in g.iter().enumerate() {
                            gb[j % c] += y;
                        }
                    } else {
                        for (x, y) in gb.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = slot(grads, requires, values, *a) {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += c * y;
                    }
                }
            }
            Op::Relu { a } => {
                let av = values[a.0].data();
                if let Some(ga) = slot(grads, requires, values, *a) {
                    for ((x, y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = values[gain.0].len();
                let gv = values[gain.0].data();
                if let Some(gx) = slot(grads, requires, values, *x) {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[c];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            gx[r * d + c] += is * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
                if let Some(gg) = slot(grads, requires, values, *gain) {
                    for (j, (y, h)) in g.iter().zip(xhat).enumerate() {
                        gg[j % d] += y * h;
                    }
                }
                if let Some(gb) = slot(grads, requires, values, *bias) {
                    for (j, y) in g.iter().enumerate() {
                        gb[j % d] += y;
                    }
                }
            }
            Op::Softmax { x } => {
                let out = values[i].data();
                let c = values[i].cols();
                if let Some(gx) = slot(grads, requires, values, *x) {
                    for r in 0..out.len() / c {
                        let p = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += p[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                cols,
                targets,
                probs,
            } => {
                let c = values[logits.0].cols();
                let k = cols.len();
                let scale = g[0];
                if let Some(gl) = slot(grads, requires, values, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..k {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + cols.start + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::Gather { table, idx } => {
                let d = values[table.0].cols();
                if let Some(gt) = slot(grads, requires, values, *table) {
                    for (r, ix) in idx.iter().enumerate() {
                        if let Some(ix) = *ix {
                            for c in 0..d {
                                gt[ix * d + c] += g[r * d + c];
                            }
                        }
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let d = values[x.0].cols();
                if let Some(gx) = slot(grads, requires, values, *x) {
                    for (o, &r) in rows.iter().enumerate() {
                        for c in 0..d {
                            gx[r * d + c] += g[o * d + c];
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = slot(grads, requires, values, *x) {
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Attention { q, k, v, saved } => {
                attention_backward(values, requires, grads, [*q, *k, *v], saved, g)
            }
        }
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    requires: &[bool],
    values: &[Tensor],
    v: Var,
) -> Option<&'a mut [f64]> {
    if !requires[v.0] {
        return None;
    }
    let n = values[v.0].len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn attention_backward(
    values: &[Tensor],
    requires: &[bool],
    grads: &mut [Option<Vec<f64>>],
    [q, k, v]: [Var; 3],
    saved: &AttentionSaved,
    g: &[f64],
) {
    let d = values[q.0].cols();
    let n = values[q.0].rows();
    let heads = saved.heads;
    let hd = d / heads;
    let scale = 1.0 / math::sqrt(hd as f64);
    let (need_q, need_k, need_v) = (requires[q.0], requires[k.0], requires[v.0]);
    let mut dq = vec![0.0; if need_q { n * d } else { 0 }];
    let mut dk = vec![0.0; if need_k { n * d } else { 0 }];
    let mut dv = vec![0.0; if need_v { n * d } else { 0 }];
    let (qd, kd, vd) = (values[q.0].data(), values[k.0].data(), values[v.0].data());
    for (s, seg) in saved.segments.iter().enumerate() {
        let t = seg.len();
        let base = seg.start * d;
        for h in 0..heads {
            let off = base + h * hd;
            let idx = s * heads + h;
            let p = &saved.probs[idx];
            let keep = saved.keep[idx].as_deref();
            let pa: Vec<f64>;
            let pa_ref: &[f64] = match keep {
                None => p,
                Some(km) => {
                    pa = p
                        .iter()
                        .zip(km)
                        .map(|(&x, &kp)| if kp { x } else { 0.0 })
                        .collect();
                    &pa
                }
            };
            if need_v {
                // dV = P'^T dOut
                gemm(
                    t,
                    t,
                    hd,
                    1.0,
                    pa_ref,
                    1,
                    t,
                    &g[off..],
                    d,
                    1,
                    1.0,
                    &mut dv[off..],
                    d,
                    1,
                );
            }
            if !(need_q || need_k) {
                continue;
            }
            // dP' = dOut V^T
            let mut dp = vec![0.0; t * t];
            gemm(
                t,
                hd,
                t,
                1.0,
                &g[off..],
                d,
                1,
                &vd[off..],
                1,
                d,
                0.0,
                &mut dp,
                t,
                1,
            );
            if let Some(km) = keep {
                for (x, &kp) in dp.iter_mut().zip(km) {
                    if !kp {
                        *x = 0.0;
                    }
                }
            }
            // dS = P * (dP - rowdot(P, dP))
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dr = &mut dp[i * t..(i + 1) * t];
                let dot: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                for j in 0..=i {
                    dr[j] = pr[j] * (dr[j] - dot);
                }
                for x in &mut dr[i + 1..] {
                    *x = 0.0;
                }
            }
            if need_q {
                gemm(
                    t,
                    t,
                    hd,
                    scale,
                    &dp,
                    t,
                    1,
                    &kd[off..],
                    d,
                    1,
                    1.0,
                    &mut dq[off..],
                    d,
                    1,
                );
            }
            if need_k {
                gemm(
                    t,
                    t,
                    hd,
                    scale,
                    &dp,
                    1,
                    t,
                    &qd[off..],
                    d,
                    1,
                    1.0,
                    &mut dk[off..],
                    d,
                    1,
                );
            }
        }
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(acc) = slot(grads, requires, values, var) {
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
    }
}
