//! Tape of recorded operations with reverse-mode accumulation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Parameters enter the tape without copying; every other node owns its value.
//! Nodes are appended in execution order, so the tape order is a topological
//! order and `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous block of rows belonging to one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Softmax(Var),
    SumAll(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SelectRows {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
    Unfold {
        x: Var,
        width: usize,
        segments: Vec<Segment>,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
    },
    Nll {
        probs: Var,
        targets: Vec<Option<usize>>,
    },
    Stack(Vec<Var>),
    Attention {
        query: Var,
        keys: Var,
        steps: usize,
        weights: Tensor,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by one backward sweep, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Tensor>> {
        self.grads.iter().map(Option::as_ref)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if b.numel() == 1 && a.numel() != 1 {
        let s = b.data()[0];
        a.data().iter().map(|&x| f(x, s)).collect()
    } else if a.numel() == 1 && b.numel() != 1 {
        let s = a.data()[0];
        b.data().iter().map(|&y| f(s, y)).collect()
    } else {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    };
    let shape = if a.numel() >= b.numel() {
        a.shape()
    } else {
        b.shape()
    };
    Tensor::new(shape.to_vec(), data).expect("shape preserved")
}

/// Reduce a broadcast gradient back to a scalar operand when needed.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if target.numel() == 1 && g.numel() != 1 {
        Tensor::new(target.shape().to_vec(), vec![g.sum()]).expect("scalar")
    } else {
        g
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
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
            Op::Param(id) => self.store.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own values"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.numel() != 1 && y.numel() != 1 {
            same_shape(op, x, y)?;
        }
        Ok(match op {
            "add" => zip_map(x, y, |p, q| p + q),
            "sub" => zip_map(x, y, |p, q| p - q),
            _ => zip_map(x, y, |p, q| p * q),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[r, c] + bias[c]` for every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.numel() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| -v);
        self.push(out, Op::Neg(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if let Some(bad) = xv.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let out = xv.map(f64::ln);
        Ok(self.push(out, Op::Log(x)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.numel());
        for r in 0..xv.rows() {
            out.extend(crate::tensor::softmax(xv.row_slice(r)));
        }
        let out = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push(out, Op::Softmax(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    index: id,
                    size: rows,
                });
            }
            out.extend_from_slice(tv.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() || len == 0 {
            return Err(Error::Shape(format!(
                "column slice {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(vec![xv.rows(), len], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Row `r` of the result is row `r` of `a` where `mask[r]`, else of `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("select_rows", av, bv)?;
        if mask.len() != av.rows() {
            return Err(Error::Shape(format!(
                "mask of {} rows for {:?}",
                mask.len(),
                av.shape()
            )));
        }
        let mut out = bv.clone();
        let c = av.cols();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.data_mut()[r * c..(r + 1) * c].copy_from_slice(av.row_slice(r));
            }
        }
        Ok(self.push(
            out,
            Op::SelectRows {
                mask: mask.to_vec(),
                a,
                b,
            },
        ))
    }

    /// Sliding windows of `width` consecutive rows within each segment,
    /// flattened to rows of `width * cols`. Returns the windows and the
    /// segment layout of the output rows.
    pub fn unfold(
        &mut self,
        x: Var,
        width: usize,
        segments: &[Segment],
    ) -> Result<(Var, Vec<Segment>)> {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Vec::new();
        let mut out_segments = Vec::with_capacity(segments.len());
        let mut row = 0;
        for seg in segments {
            if seg.len < width || seg.start + seg.len > xv.rows() {
                return Err(Error::Shape(format!(
                    "segment of {} rows cannot hold width {width}",
                    seg.len
                )));
            }
            let windows = seg.len - width + 1;
            for i in 0..windows {
                let from = (seg.start + i) * d;
                out.extend_from_slice(&xv.data()[from..from + width * d]);
            }
            out_segments.push(Segment {
                start: row,
                len: windows,
            });
            row += windows;
        }
        let out = Tensor::new(vec![row, width * d], out)?;
        let v = self.push(
            out,
            Op::Unfold {
                x,
                width,
                segments: segments.to_vec(),
            },
        );
        Ok((v, out_segments))
    }

    /// Column-wise maximum over the rows of each segment; ties go to the
    /// lowest row.
    pub fn max_over_time(&mut self, x: Var, segments: &[Segment]) -> Result<Var> {
        let xv = self.value(x);
        let f = xv.cols();
        if segments.is_empty() {
            return Err(Error::Shape("max_over_time needs a segment".into()));
        }
        let mut out = Vec::with_capacity(segments.len() * f);
        let mut argmax = Vec::with_capacity(segments.len() * f);
        for seg in segments {
            if seg.len == 0 || seg.start + seg.len > xv.rows() {
                return Err(Error::Shape(
                    "max_over_time over an empty position axis".into(),
                ));
            }
            for j in 0..f {
                let mut best = seg.start;
                for r in seg.start + 1..seg.start + seg.len {
                    if xv.data()[r * f + j] > xv.data()[best * f + j] {
                        best = r;
                    }
                }
                argmax.push(best);
                out.push(xv.data()[best * f + j]);
            }
        }
        let out = Tensor::new(vec![segments.len(), f], out)?;
        Ok(self.push(out, Op::MaxOverTime { x, argmax }))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; `None` targets are padding and contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.cols();
        if targets.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {:?}",
                targets.len(),
                lv.shape()
            )));
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = lv.row_slice(r);
            if let Some(t) = *t {
                if t >= v {
                    return Err(Error::Index { index: t, size: v });
                }
                loss -= crate::tensor::log_softmax(row)[t];
            }
            probs.extend(crate::tensor::softmax(row));
        }
        let probs = Tensor::new(lv.shape().to_vec(), probs)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `-sum_t log probs[t, target_t]` over already-normalized rows.
    pub fn nll_loss(&mut self, probs: Var, targets: &[Option<usize>]) -> Result<Var> {
        let pv = self.value(probs);
        let v = pv.cols();
        if targets.len() != pv.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {:?}",
                targets.len(),
                pv.shape()
            )));
        }
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= v {
                    return Err(Error::Index { index: t, size: v });
                }
                let p = pv.row_slice(r)[t];
                if p <= 0.0 {
                    return Err(Error::Domain(format!("log of probability {p}")));
                }
                loss -= p.ln();
            }
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Stack `T` tensors of shape `[B, H]` into `[B, T, H]`.
    pub fn stack(&mut self, steps: &[Var]) -> Result<Var> {
        let first = self.value(steps[0]);
        let (b, h) = (first.rows(), first.cols());
        let t = steps.len();
        let mut out = vec![0.0; b * t * h];
        for (ti, &s) in steps.iter().enumerate() {
            let sv = self.value(s);
            if sv.rows() != b || sv.cols() != h {
                return Err(Error::Dimension {
                    op: "stack",
                    left: vec![b, h],
                    right: sv.shape().to_vec(),
                });
            }
            for bi in 0..b {
                out[(bi * t + ti) * h..(bi * t + ti + 1) * h].copy_from_slice(sv.row_slice(bi));
            }
        }
        let out = Tensor::new(vec![b, t, h], out)?;
        Ok(self.push(out, Op::Stack(steps.to_vec())))
    }

    /// Dot-product attention of `query[B, H]` over `keys[B, T, H]`, where only
    /// the first `lengths[b]` positions of row `b` are visible. Returns the
    /// context `[B, H]`.
    pub fn attention(&mut self, query: Var, keys: Var, lengths: &[usize]) -> Result<Var> {
        let (qv, kv) = (self.value(query), self.value(keys));
        let (b, h) = (qv.rows(), qv.cols());
        if kv.shape().len() != 3 || kv.shape()[0] != b || kv.shape()[2] != h {
            return Err(Error::Dimension {
                op: "attention",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        let t = kv.shape()[1];
        if lengths.len() != b {
            return Err(Error::Shape("one length per query row".into()));
        }
        let weights = attention_weights(qv, kv, lengths)?;
        let mut ctx = vec![0.0; b * h];
        for bi in 0..b {
            for ti in 0..lengths[bi] {
                let w = weights.data()[bi * t + ti];
                let key = &kv.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                for (c, k) in ctx[bi * h..(bi + 1) * h].iter_mut().zip(key) {
                    *c += w * k;
                }
            }
        }
        let out = Tensor::new(vec![b, h], ctx)?;
        Ok(self.push(
            out,
            Op::Attention {
                query,
                keys,
                steps: t,
                weights,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.store.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads[id.index()] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let ga = slot(&mut grads, *a, av);
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        bv.data(),
                        true,
                        ga.data_mut(),
                        1.0,
                    );
                    let gb = slot(&mut grads, *b, bv);
                    gemm(
                        k,
                        m,
                        n,
                        av.data(),
                        true,
                        g.data(),
                        false,
                        gb.data_mut(),
                        1.0,
                    );
                }
                Op::Add(a, b) => {
                    let ga = unbroadcast(g.clone(), self.value(*a));
                    accum(&mut grads, *a, ga);
                    let gb = unbroadcast(g, self.value(*b));
                    accum(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = unbroadcast(g.clone(), self.value(*a));
                    accum(&mut grads, *a, ga);
                    let gb = unbroadcast(g.map(|v| -v), self.value(*b));
                    accum(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = unbroadcast(zip_map(&g, bv, |x, y| x * y), av);
                    let gb = unbroadcast(zip_map(&g, av, |x, y| x * y), bv);
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let bv = self.value(*bias);
                    let c = g.cols();
                    let gb = slot(&mut grads, *bias, bv);
                    for (j, v) in g.data().iter().enumerate() {
                        gb.data_mut()[j % c] += v;
                    }
                    accum(&mut grads, *x, g);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accum(&mut grads, *x, g.map(|v| v * s));
                }
                Op::AddScalar(x) => accum(&mut grads, *x, g),
                Op::Neg(x) => accum(&mut grads, *x, g.map(|v| -v)),
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("owned");
                    accum(
                        &mut grads,
                        *x,
                        zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv)),
                    );
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("owned");
                    accum(
                        &mut grads,
                        *x,
                        zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)),
                    );
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    accum(
                        &mut grads,
                        *x,
                        zip_map(&g, xv, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    accum(&mut grads, *x, zip_map(&g, xv, |gv, xv| gv / xv));
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("owned");
                    let c = y.cols();
                    let mut gx = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accum(&mut grads, *x, Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::SumAll(x) => {
                    let s = g.data()[0];
                    let xv = self.value(*x);
                    accum(&mut grads, *x, Tensor::filled(xv.shape(), s));
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let c = tv.cols();
                    let gt = slot(&mut grads, *table, tv);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * c..(id + 1) * c];
                        for (d, v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    let total = g.cols();
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let gp = slot(&mut grads, p, pv);
                        for r in 0..pv.rows() {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            for (d, v) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (c, w) = (xv.cols(), g.cols());
                    let gx = slot(&mut grads, *x, xv);
                    for r in 0..g.rows() {
                        let dst = &mut gx.data_mut()[r * c + start..r * c + start + w];
                        for (d, v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                }
                Op::SelectRows { mask, a, b } => {
                    let c = g.cols();
                    let mut ga = g.clone();
                    let mut gb = g;
                    for (r, &m) in mask.iter().enumerate() {
                        let zero = if m { &mut gb } else { &mut ga };
                        zero.data_mut()[r * c..(r + 1) * c].fill(0.0);
                    }
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::Unfold { x, width, segments } => {
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let gx = slot(&mut grads, *x, xv);
                    let mut row = 0;
                    for seg in segments {
                        for i in 0..seg.len - width + 1 {
                            let src = g.row_slice(row);
                            let from = (seg.start + i) * d;
                            for (dst, v) in
                                gx.data_mut()[from..from + width * d].iter_mut().zip(src)
                            {
                                *dst += v;
                            }
                            row += 1;
                        }
                    }
                }
                Op::MaxOverTime { x, argmax } => {
                    let xv = self.value(*x);
                    let f = xv.cols();
                    let gx = slot(&mut grads, *x, xv);
                    for (k, &r) in argmax.iter().enumerate() {
                        let j = k % f;
                        gx.data_mut()[r * f + j] += g.data()[k];
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.data()[0];
                    let c = probs.cols();
                    let mut gl = vec![0.0; probs.numel()];
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..c {
                                gl[r * c + j] = s * probs.data()[r * c + j];
                            }
                            gl[r * c + t] -= s;
                        }
                    }
                    accum(
                        &mut grads,
                        *logits,
                        Tensor::new(probs.shape().to_vec(), gl)?,
                    );
                }
                Op::Nll { probs, targets } => {
                    let s = g.data()[0];
                    let pv = self.value(*probs);
                    let c = pv.cols();
                    let gp = slot(&mut grads, *probs, pv);
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            gp.data_mut()[r * c + t] -= s / pv.data()[r * c + t];
                        }
                    }
                }
                Op::Stack(steps) => {
                    let (b, t, h) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                    for (ti, &s) in steps.iter().enumerate() {
                        let sv = self.value(s);
                        let gs = slot(&mut grads, s, sv);
                        for bi in 0..b {
                            let src = &g.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                            for (d, v) in gs.data_mut()[bi * h..(bi + 1) * h].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Attention {
                    query,
                    keys,
                    steps,
                    weights,
                } => {
                    let (qv, kv) = (self.value(*query), self.value(*keys));
                    let (b, h, t) = (qv.rows(), qv.cols(), *steps);
                    let mut gq = vec![0.0; b * h];
                    let mut gk = vec![0.0; b * t * h];
                    for bi in 0..b {
                        let gc = g.row_slice(bi);
                        let q = qv.row_slice(bi);
                        let w = &weights.data()[bi * t..(bi + 1) * t];
                        // d weight_t = gc . key_t
                        let dw: Vec<f64> = (0..t)
                            .map(|ti| {
                                let key = &kv.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                                key.iter().zip(gc).map(|(a, b)| a * b).sum()
                            })
                            .collect();
                        let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                        for ti in 0..t {
                            if w[ti] == 0.0 {
                                continue;
                            }
                            let ds = w[ti] * (dw[ti] - dot);
                            let base = (bi * t + ti) * h;
                            for j in 0..h {
                                gq[bi * h + j] += ds * kv.data()[base + j];
                                gk[base + j] += ds * q[j] + w[ti] * gc[j];
                            }
                        }
                    }
                    accum(&mut grads, *query, Tensor::new(vec![b, h], gq)?);
                    accum(&mut grads, *keys, Tensor::new(kv.shape().to_vec(), gk)?);
                }
            }
        }
        Ok(Gradients { grads: param_grads })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Masked softmax weights of `query[B, H]` against `keys[B, T, H]`.
pub fn attention_weights(query: &Tensor, keys: &Tensor, lengths: &[usize]) -> Result<Tensor> {
    let (b, h) = (query.rows(), query.cols());
    let t = keys.shape()[1];
    let mut weights = vec![0.0; b * t];
    for bi in 0..b {
        let len = lengths[bi];
        if len == 0 || len > t {
            return Err(Error::Contract(format!(
                "attention row {bi} has {len} visible positions of {t}"
            )));
        }
        let q = query.row_slice(bi);
        let scores: Vec<f64> = (0..len)
            .map(|ti| {
                let key = &keys.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                key.iter().zip(q).map(|(a, b)| a * b).sum()
            })
            .collect();
        weights[bi * t..bi * t + len].copy_from_slice(&crate::tensor::softmax(&scores));
    }
    Tensor::new(vec![b, t], weights)
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn accum(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
