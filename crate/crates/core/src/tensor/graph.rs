//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every op during the forward pass; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for every reachable
//! parameter leaf. The tape is discarded with the graph after each pass.

use std::collections::BTreeMap;

use super::ops;
use super::params::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Bmm {
        a: NodeId,
        b: NodeId,
        transpose_b: bool,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        a: NodeId,
        bias: NodeId,
    },
    AddMask {
        a: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    MulConst {
        a: NodeId,
        c: Tensor,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    Relu {
        a: NodeId,
    },
    LayerNorm {
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        // (mean, rstd) per row, saved at forward time
        stats: Vec<(f64, f64)>,
    },
    SoftmaxLast {
        a: NodeId,
    },
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
    GatherRows {
        a: NodeId,
        rows: Vec<usize>,
    },
    ConcatLast {
        a: NodeId,
        b: NodeId,
        split: usize,
    },
    Reshape {
        a: NodeId,
        orig: Vec<usize>,
    },
    Permute {
        a: NodeId,
        axes: Vec<usize>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad_left: usize,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad_left: usize,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        // softmax probabilities saved for the backward pass
        probs: Vec<f64>,
    },
    Mse {
        a: NodeId,
        target: Tensor,
    },
    Mean {
        a: NodeId,
    },
    Sum {
        a: NodeId,
    },
    StraightThrough {
        a: NodeId,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass.
pub struct BackwardResult {
    /// Accumulated gradient per parameter leaf reached from the loss.
    pub param_grads: Vec<(ParamId, Tensor)>,
    node_grads: Vec<Option<Tensor>>,
}

impl BackwardResult {
    /// Gradient of the loss w.r.t. a node, if any reached it.
    pub fn node_grad(&self, id: NodeId) -> Option<&Tensor> {
        self.node_grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: BTreeMap<usize, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<NodeId> {
        value.check_finite(op_name)?;
        Ok(self.push(value, op))
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Trainable leaf; repeated calls for the same parameter return the same
    /// node so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_leaves.get(&id.index()) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param(id));
        self.param_leaves.insert(id.index(), n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = ops::matmul_nn(ta.data(), tb.data(), m, k, n);
        let value = Tensor::from_vec_unchecked(vec![m, n], data);
        self.push_checked("matmul", value, Op::Matmul { a, b })
    }

    /// Batched matmul over the leading axis. With `transpose_b`, `b` holds
    /// `[batch, n, k]` and is multiplied transposed.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        let bad = || TensorError::ShapeMismatch {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut data = vec![0.0; bsz * m * n];
        for bi in 0..bsz {
            let asl = &ta.data()[bi * m * k..][..m * k];
            let bstride = if transpose_b { n * k } else { k * n };
            let bsl = &tb.data()[bi * bstride..][..bstride];
            let out = if transpose_b {
                ops::matmul_nt(asl, bsl, m, k, n)
            } else {
                ops::matmul_nn(asl, bsl, m, k, n)
            };
            data[bi * m * n..][..m * n].copy_from_slice(&out);
        }
        let value = Tensor::from_vec_unchecked(vec![bsz, m, n], data);
        self.push_checked("bmm", value, Op::Bmm { a, b, transpose_b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked("add", value, Op::Add { a, b })
    }

    /// Adds a `[d]` bias to every trailing row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, last) = ta.rows_last();
        if tb.shape() != [last] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bd[i % last])
            .collect();
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked("add_bias", value, Op::AddBias { a, bias })
    }

    /// Adds a constant `[m, n]` mask to every leading slice of `a`.
    pub fn add_mask(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId> {
        let ta = self.value(a);
        let mn = mask.numel();
        if mn == 0 || ta.numel() % mn != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "add_mask",
                lhs: ta.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let md = mask.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + md[i % mn])
            .collect();
        // Mask entries may be -inf-like large negatives; softmax restores
        // finiteness. Use a large finite constant, never actual infinity.
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        let _ = mask;
        self.push_checked("add_mask", value, Op::AddMask { a })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked("mul", value, Op::Mul { a, b })
    }

    /// Elementwise product with a constant tensor (dropout masks and the like).
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                lhs: ta.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked("mul_const", value, Op::MulConst { a, c })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * c);
        self.push_checked("scale", value, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_checked("relu", value, Op::Relu { a })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        const EPS: f64 = 1e-5;
        let ta = self.value(a);
        let (_, last) = ta.rows_last();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [last] || tb.shape() != [last] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: ta.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let (gd, bd) = (tg.data(), tb.data());
        let mut stats = Vec::with_capacity(ta.numel() / last);
        let mut data = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(last) {
            let mean = row.iter().sum::<f64>() / last as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / last as f64;
            let rstd = 1.0 / (var + EPS).sqrt();
            stats.push((mean, rstd));
            for (i, &v) in row.iter().enumerate() {
                data.push((v - mean) * rstd * gd[i] + bd[i]);
            }
        }
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked(
            "layer_norm",
            value,
            Op::LayerNorm {
                a,
                gain,
                bias,
                stats,
            },
        )
    }

    /// Softmax over the last axis. Rows sum to 1.
    pub fn softmax_last(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        let (_, last) = ta.rows_last();
        let mut data = ta.data().to_vec();
        ops::softmax_rows(&mut data, last);
        let value = Tensor::from_vec_unchecked(ta.shape().to_vec(), data);
        self.push_checked("softmax", value, Op::SoftmaxLast { a })
    }

    /// Gathers rows of a `[v, d]` table: output `[indices.len(), d]`.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let tt = self.value(table);
        let s = tt.shape();
        if s.len() != 2 {
            return Err(TensorError::BadRank {
                op: "embedding",
                expected: 2,
                shape: s.to_vec(),
            });
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                limit: v,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec_unchecked(vec![indices.len(), d], data);
        self.push_checked(
            "embedding",
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Gathers rows of a 2-D node (differentiable through `a`).
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let ta = self.value(a);
        let s = ta.shape();
        if s.len() != 2 {
            return Err(TensorError::BadRank {
                op: "gather_rows",
                expected: 2,
                shape: s.to_vec(),
            });
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                limit: n,
            });
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(&ta.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec_unchecked(vec![rows.len(), d], data);
        self.push_checked(
            "gather_rows",
            value,
            Op::GatherRows {
                a,
                rows: rows.to_vec(),
            },
        )
    }

    /// Concatenates along the last axis; all leading extents must match.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len()
            || sa.is_empty()
            || sa[..sa.len() - 1] != sb[..sb.len() - 1]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = ta.numel() / da.max(1);
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&tb.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::from_vec_unchecked(shape, data);
        self.push_checked("concat_last", value, Op::ConcatLast { a, b, split: da })
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let ta = self.value(a);
        let orig = ta.shape().to_vec();
        let value = ta.clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { a, orig }))
    }

    /// Reorders axes; `axes` is a permutation of `0..rank`.
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let ta = self.value(a);
        let value = permute_data(ta, axes)?;
        self.push_checked(
            "permute",
            value,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
        )
    }

    /// Strided 1-D convolution over `[batch, t, c_in]`; output length is
    /// `ceil(t / stride)`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad_left: usize,
    ) -> Result<NodeId> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (b, t, c_in) = (sx[0], sx[1], sx[2]);
        let (kernel, c_out) = (sw[0], sw[2]);
        let bias_data = bias.map(|id| self.value(id).data().to_vec());
        let data = ops::conv1d(
            self.value(x).data(),
            self.value(w).data(),
            bias_data.as_deref(),
            b,
            t,
            c_in,
            kernel,
            c_out,
            stride,
            pad_left,
        );
        let t_out = super::conv_out_len(t, stride);
        let value = Tensor::from_vec_unchecked(vec![b, t_out, c_out], data);
        self.push_checked(
            "conv1d",
            value,
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            },
        )
    }

    /// Transposed strided 1-D convolution; output length is `t * stride`.
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad_left: usize,
    ) -> Result<NodeId> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose1d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (b, t, c_in) = (sx[0], sx[1], sx[2]);
        let (kernel, c_out) = (sw[0], sw[2]);
        let bias_data = bias.map(|id| self.value(id).data().to_vec());
        let data = ops::conv_transpose1d(
            self.value(x).data(),
            self.value(w).data(),
            bias_data.as_deref(),
            b,
            t,
            c_in,
            kernel,
            c_out,
            stride,
            pad_left,
        );
        let value = Tensor::from_vec_unchecked(vec![b, t * stride, c_out], data);
        self.push_checked(
            "conv_transpose1d",
            value,
            Op::ConvT1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            },
        )
    }

    /// Mean negative log-softmax probability of the targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let tl = self.value(logits);
        let s = tl.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                limit: k,
            });
        }
        let mut probs = tl.data().to_vec();
        ops::softmax_rows(&mut probs, k);
        let mut loss = 0.0;
        for (row, &target) in probs.chunks(k).zip(targets) {
            loss -= row[target].max(f64::MIN_POSITIVE).ln();
        }
        loss /= n as f64;
        let value = Tensor::scalar(loss);
        self.push_checked(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: NodeId, target: Tensor) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: ta.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = ta.numel().max(1) as f64;
        let loss = ta
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n;
        let value = Tensor::scalar(loss);
        self.push_checked("mse", value, Op::Mse { a, target })
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        let value = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.numel().max(1) as f64);
        self.push_checked("mean", value, Op::Mean { a })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        let value = Tensor::scalar(ta.data().iter().sum::<f64>());
        self.push_checked("sum", value, Op::Sum { a })
    }

    /// Straight-through quantization: forward emits `quantized`, backward
    /// copies the gradient past it unchanged.
    pub fn straight_through(&mut self, a: NodeId, quantized: Tensor) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.shape() != quantized.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                lhs: ta.shape().to_vec(),
                rhs: quantized.shape().to_vec(),
            });
        }
        self.push_checked("straight_through", quantized, Op::StraightThrough { a })
    }

    /// Reverse pass from a scalar loss. Gradients accumulate for every
    /// parameter leaf reachable from the loss; unreachable parameters simply
    /// do not appear in the result.
    pub fn backward(&self, loss: NodeId) -> Result<BackwardResult> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut param_grads = Vec::new();
        for (&pid, &node) in &self.param_leaves {
            if let Some(g) = &grads[node.0] {
                param_grads.push((ParamId::from_index(pid), g.clone()));
            }
        }
        Ok(BackwardResult {
            param_grads,
            node_grads: grads,
        })
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], id: NodeId, add: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, a) in existing.data_mut().iter_mut().zip(add.data()) {
                        *e += a;
                    }
                }
                slot @ None => *slot = Some(add),
            }
        };
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let da = ops::matmul_nt(dy.data(), tb.data(), m, n, k);
                let db = ops::matmul_tn(ta.data(), dy.data(), m, k, n);
                acc(grads, *a, Tensor::from_vec_unchecked(vec![m, k], da));
                acc(grads, *b, Tensor::from_vec_unchecked(vec![k, n], db));
            }
            Op::Bmm { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bsz, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = dy.shape()[2];
                let mut da = vec![0.0; bsz * m * k];
                let mut db = vec![0.0; tb.numel()];
                for bi in 0..bsz {
                    let dsl = &dy.data()[bi * m * n..][..m * n];
                    let asl = &ta.data()[bi * m * k..][..m * k];
                    if *transpose_b {
                        // y = a @ b^T with b: [bsz, n, k]
                        let bsl = &tb.data()[bi * n * k..][..n * k];
                        da[bi * m * k..][..m * k]
                            .copy_from_slice(&ops::matmul_nn(dsl, bsl, m, n, k));
                        db[bi * n * k..][..n * k]
                            .copy_from_slice(&ops::matmul_tn(dsl, asl, m, n, k));
                    } else {
                        let bsl = &tb.data()[bi * k * n..][..k * n];
                        da[bi * m * k..][..m * k]
                            .copy_from_slice(&ops::matmul_nt(dsl, bsl, m, n, k));
                        db[bi * k * n..][..k * n]
                            .copy_from_slice(&ops::matmul_tn(asl, dsl, m, k, n));
                    }
                }
                acc(grads, *a, Tensor::from_vec_unchecked(vec![bsz, m, k], da));
                acc(
                    grads,
                    *b,
                    Tensor::from_vec_unchecked(tb.shape().to_vec(), db),
                );
            }
            Op::Add { a, b } => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.clone());
            }
            Op::AddBias { a, bias } => {
                let last = self.value(*bias).numel();
                let mut db = vec![0.0; last];
                for (i, v) in dy.data().iter().enumerate() {
                    db[i % last] += v;
                }
                acc(grads, *a, dy.clone());
                acc(grads, *bias, Tensor::from_vec_unchecked(vec![last], db));
            }
            Op::AddMask { a, .. } => acc(grads, *a, dy.clone()),
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = dy
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(g, v)| g * v)
                    .collect();
                let db = dy
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(g, v)| g * v)
                    .collect();
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
                acc(grads, *b, Tensor::from_vec_unchecked(tb.shape().to_vec(), db));
            }
            Op::MulConst { a, c } => {
                let da = dy
                    .data()
                    .iter()
                    .zip(c.data())
                    .map(|(g, v)| g * v)
                    .collect();
                acc(grads, *a, Tensor::from_vec_unchecked(c.shape().to_vec(), da));
            }
            Op::Scale { a, c } => acc(grads, *a, dy.map(|v| v * c)),
            Op::Relu { a } => {
                let ta = self.value(*a);
                let da = dy
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                stats,
            } => {
                let (ta, tg) = (self.value(*a), self.value(*gain));
                let last = tg.numel();
                let gd = tg.data();
                let mut da = vec![0.0; ta.numel()];
                let mut dg = vec![0.0; last];
                let mut db = vec![0.0; last];
                for (r, ((xrow, dyrow), &(mean, rstd))) in ta
                    .data()
                    .chunks(last)
                    .zip(dy.data().chunks(last))
                    .zip(stats)
                    .enumerate()
                {
                    let inv_n = 1.0 / last as f64;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..last {
                        let xhat = (xrow[i] - mean) * rstd;
                        let dxhat = dyrow[i] * gd[i];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dg[i] += dyrow[i] * xhat;
                        db[i] += dyrow[i];
                    }
                    let darow = &mut da[r * last..(r + 1) * last];
                    for i in 0..last {
                        let xhat = (xrow[i] - mean) * rstd;
                        let dxhat = dyrow[i] * gd[i];
                        darow[i] =
                            rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    }
                }
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
                acc(grads, *gain, Tensor::from_vec_unchecked(vec![last], dg));
                acc(grads, *bias, Tensor::from_vec_unchecked(vec![last], db));
            }
            Op::SoftmaxLast { a } => {
                let y = &self.nodes[i].value;
                let (_, last) = y.rows_last();
                let mut da = vec![0.0; y.numel()];
                for ((yrow, dyrow), darow) in y
                    .data()
                    .chunks(last)
                    .zip(dy.data().chunks(last))
                    .zip(da.chunks_mut(last))
                {
                    let dot: f64 = yrow.iter().zip(dyrow).map(|(y, g)| y * g).sum();
                    for k in 0..last {
                        darow[k] = yrow[k] * (dyrow[k] - dot);
                    }
                }
                acc(grads, *a, Tensor::from_vec_unchecked(y.shape().to_vec(), da));
            }
            Op::Embedding { table, indices } => {
                let tt = self.value(*table);
                let d = tt.shape()[1];
                let mut dt = vec![0.0; tt.numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    let src = &dy.data()[r * d..(r + 1) * d];
                    let dst = &mut dt[idx * d..(idx + 1) * d];
                    for (s, v) in dst.iter_mut().zip(src) {
                        *s += v;
                    }
                }
                acc(
                    grads,
                    *table,
                    Tensor::from_vec_unchecked(tt.shape().to_vec(), dt),
                );
            }
            Op::GatherRows { a, rows } => {
                let ta = self.value(*a);
                let d = ta.shape()[1];
                let mut da = vec![0.0; ta.numel()];
                for (r, &idx) in rows.iter().enumerate() {
                    let src = &dy.data()[r * d..(r + 1) * d];
                    let dst = &mut da[idx * d..(idx + 1) * d];
                    for (s, v) in dst.iter_mut().zip(src) {
                        *s += v;
                    }
                }
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
            }
            Op::ConcatLast { a, b, split } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da_last = *split;
                let db_last = tb.shape()[tb.shape().len() - 1];
                let total = da_last + db_last;
                let rows = dy.numel() / total;
                let mut da = Vec::with_capacity(ta.numel());
                let mut db = Vec::with_capacity(tb.numel());
                for r in 0..rows {
                    let row = &dy.data()[r * total..(r + 1) * total];
                    da.extend_from_slice(&row[..da_last]);
                    db.extend_from_slice(&row[da_last..]);
                }
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
                acc(grads, *b, Tensor::from_vec_unchecked(tb.shape().to_vec(), db));
            }
            Op::Reshape { a, orig } => {
                let da = Tensor::from_vec_unchecked(orig.clone(), dy.data().to_vec());
                acc(grads, *a, da);
            }
            Op::Permute { a, axes } => {
                let mut inverse = vec![0usize; axes.len()];
                for (pos, &ax) in axes.iter().enumerate() {
                    inverse[ax] = pos;
                }
                let da = permute_data(dy, &inverse).expect("inverse permutation");
                acc(grads, *a, da);
            }
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (b, t, c_in) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (kernel, c_out) = (tw.shape()[0], tw.shape()[2]);
                let dx = ops::conv1d_grad_x(
                    dy.data(),
                    tw.data(),
                    b,
                    t,
                    c_in,
                    kernel,
                    c_out,
                    *stride,
                    *pad_left,
                );
                let dw = ops::conv1d_grad_w(
                    tx.data(),
                    dy.data(),
                    b,
                    t,
                    c_in,
                    kernel,
                    c_out,
                    *stride,
                    *pad_left,
                );
                acc(grads, *x, Tensor::from_vec_unchecked(tx.shape().to_vec(), dx));
                acc(grads, *w, Tensor::from_vec_unchecked(tw.shape().to_vec(), dw));
                if let Some(bias) = bias {
                    let mut db = vec![0.0; c_out];
                    for (i, v) in dy.data().iter().enumerate() {
                        db[i % c_out] += v;
                    }
                    acc(grads, *bias, Tensor::from_vec_unchecked(vec![c_out], db));
                }
            }
            Op::ConvT1d {
                x,
                w,
                bias,
                stride,
                pad_left,
            } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (b, t, c_in) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (kernel, c_out) = (tw.shape()[0], tw.shape()[2]);
                let dx = ops::conv_transpose1d_grad_x(
                    dy.data(),
                    tw.data(),
                    b,
                    t,
                    c_in,
                    kernel,
                    c_out,
                    *stride,
                    *pad_left,
                );
                let dw = ops::conv_transpose1d_grad_w(
                    tx.data(),
                    dy.data(),
                    b,
                    t,
                    c_in,
                    kernel,
                    c_out,
                    *stride,
                    *pad_left,
                );
                acc(grads, *x, Tensor::from_vec_unchecked(tx.shape().to_vec(), dx));
                acc(grads, *w, Tensor::from_vec_unchecked(tw.shape().to_vec(), dw));
                if let Some(bias) = bias {
                    let mut db = vec![0.0; c_out];
                    for (i, v) in dy.data().iter().enumerate() {
                        db[i % c_out] += v;
                    }
                    acc(grads, *bias, Tensor::from_vec_unchecked(vec![c_out], db));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let tl = self.value(*logits);
                let (n, k) = (tl.shape()[0], tl.shape()[1]);
                let scale = dy.scalar_value() / n as f64;
                let mut dl = Vec::with_capacity(n * k);
                for (r, prow) in probs.chunks(k).enumerate() {
                    let target = targets[r];
                    for (c, &p) in prow.iter().enumerate() {
                        let onehot = if c == target { 1.0 } else { 0.0 };
                        dl.push((p - onehot) * scale);
                    }
                }
                acc(grads, *logits, Tensor::from_vec_unchecked(vec![n, k], dl));
            }
            Op::Mse { a, target } => {
                let ta = self.value(*a);
                let scale = 2.0 * dy.scalar_value() / ta.numel().max(1) as f64;
                let da = ta
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(x, y)| (x - y) * scale)
                    .collect();
                acc(grads, *a, Tensor::from_vec_unchecked(ta.shape().to_vec(), da));
            }
            Op::Mean { a } => {
                let ta = self.value(*a);
                let g = dy.scalar_value() / ta.numel().max(1) as f64;
                acc(grads, *a, Tensor::full(ta.shape(), g));
            }
            Op::Sum { a } => {
                let ta = self.value(*a);
                acc(grads, *a, Tensor::full(ta.shape(), dy.scalar_value()));
            }
            Op::StraightThrough { a } => acc(grads, *a, dy.clone()),
        }
    }
}

fn permute_data(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = t.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(TensorError::BadRank {
            op: "permute",
            expected: rank,
            shape: axes.to_vec(),
        });
    }
    let in_shape = t.shape();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let gather_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = Vec::with_capacity(t.numel());
    let mut coords = vec![0usize; rank];
    let src = t.data();
    for _ in 0..t.numel() {
        let off: usize = coords
            .iter()
            .zip(&gather_strides)
            .map(|(c, s)| c * s)
            .sum();
        data.push(src[off]);
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    Ok(Tensor::from_vec_unchecked(out_shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_rule() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_vec(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap());
        let b = g.input(Tensor::from_vec(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 2]"));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![4], vec![1.5; 4]).unwrap());
        let y = g.softmax_last(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(
            Tensor::from_vec(vec![3, 5], (0..15).map(|v| (v as f64).sin() * 8.0).collect())
                .unwrap(),
        );
        let y = g.softmax_last(x).unwrap();
        for row in g.value(y).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_output_length_follows_ceil_rule() {
        for t in 1..=200usize {
            let mut g = Graph::new();
            let x = g.input(Tensor::from_vec(vec![1, t, 1], vec![1.0; t]).unwrap());
            let w = g.input(Tensor::from_vec(vec![4, 1, 1], vec![0.25; 4]).unwrap());
            let y = g.conv1d(x, w, None, 4, 1).unwrap();
            assert_eq!(g.value(y).shape(), &[1, t.div_ceil(4), 1]);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::from_vec(vec![3], vec![0.3, -0.7, 2.0]).unwrap());
        let mut g = Graph::new();
        let leaf = g.param(&store, p);
        let loss = g.sum(leaf).unwrap();
        let back = g.backward(loss).unwrap();
        assert_eq!(back.param_grads.len(), 1);
        assert_eq!(back.param_grads[0].1.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_times_param_gives_zero_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let leaf = g.param(&store, p);
        let zero = g.input(Tensor::zeros(&[2]));
        let prod = g.mul(leaf, zero).unwrap();
        let loss = g.sum(prod).unwrap();
        let back = g.backward(loss).unwrap();
        assert_eq!(back.param_grads[0].1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn unreachable_param_gets_no_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("used", Tensor::from_vec(vec![1], vec![2.0]).unwrap());
        let q = store.register("unused", Tensor::from_vec(vec![1], vec![3.0]).unwrap());
        let mut g = Graph::new();
        let leaf = g.param(&store, p);
        let _orphan = g.param(&store, q);
        let loss = g.sum(leaf).unwrap();
        let back = g.backward(loss).unwrap();
        assert!(back.param_grads.iter().all(|(id, _)| *id == p));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            g.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        // uniform logits over K classes -> ln K
        for k in [2usize, 1024] {
            let mut g = Graph::new();
            let logits = g.input(Tensor::zeros(&[1, k]));
            let loss = g.cross_entropy(logits, &[0]).unwrap();
            assert!((g.value(loss).scalar_value() - (k as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_margin_limit() {
        // one-hot-correct logits with growing margin -> loss -> 0
        let mut g = Graph::new();
        let logits = g.input(Tensor::from_vec(vec![1, 3], vec![30.0, 0.0, 0.0]).unwrap());
        let loss = g.cross_entropy(logits, &[0]).unwrap();
        assert!(g.value(loss).scalar_value() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(&[1, 4]));
        assert!(g.cross_entropy(logits, &[4]).is_err());
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("z", Tensor::from_vec(vec![2], vec![0.3, 0.4]).unwrap());
        let mut g = Graph::new();
        let z = g.param(&store, p);
        let q = g
            .straight_through(z, Tensor::from_vec(vec![2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        assert_eq!(g.value(q).data(), &[1.0, -1.0]);
        let loss = g.sum(q).unwrap();
        let back = g.backward(loss).unwrap();
        assert_eq!(back.param_grads[0].1.data(), &[1.0, 1.0]);
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::from_vec(vec![2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let p = permute_data(&t, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = permute_data(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }
}
