//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A `Tape` records primitive operations in topological order; `backward`
//! walks the record in reverse and accumulates exact analytic gradients.
//! The tape is rebuilt for every forward pass — no graph caching — and is
//! confined to a single execution context. `gradcheck` compares analytic
//! gradients against central finite differences and is the ground truth
//! for every composite layer built on top of this module.

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, matmul_nt_into, matmul_tn_into, Tensor};
use rand::Rng;

/// Additive mask value for blocked attention positions. Finite by design:
/// exp(-1e5) underflows to exactly 0.0 after row-max subtraction, while the
/// logits themselves stay representable.
pub const MASK_VALUE: f64 = -1e5;

/// Probabilities are clamped here before `ln`.
pub const LN_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// `[m,k] @ [k,n]`, or `[b,m,k] @ [k,n]` folded over the leading extent.
    Matmul { a: usize, b: usize },
    /// `[b,m,k] @ [b,k,n]`.
    Bmm { a: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddConst { a: usize },
    Affine { a: usize, mul: f64 },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Ln { a: usize },
    Prelu { a: usize, slope: usize },
    /// Row softmax over the last axis of `a` after adding `mask` (broadcast
    /// over leading extents). `mask` is unoptimizable data, not a node.
    Softmax { a: usize },
    Dropout { a: usize, keep: Tensor, scale: f64 },
    /// Scalar `sum(w ⊙ a)` with constant weights.
    WeightedSum { a: usize, w: Tensor },
    Transpose { a: usize },
    Reshape { a: usize, from: Vec<usize> },
    /// `[b,f,d] -> [b*h, f, d/h]`.
    SplitHeads { a: usize, heads: usize },
    /// Inverse of `SplitHeads`.
    MergeHeads { a: usize, heads: usize },
    /// Gather along the leading axis: `out[i] = a[perm[i]]`.
    PermuteRows { a: usize, perm: Vec<usize> },
    /// `mask ⊙ a + (1 − mask) ⊙ b` with constant 0/1 `mask` (full shape or
    /// a last-axis vector broadcast).
    MaskMix { a: usize, b: usize, mask: Tensor },
    /// Per-feature gated embedding: `z[n,i,:] = tanh(x[n,i] w1[i,:] + b1[i,:]) ⊙ (x[n,i] w2[i,:] + b2[i,:])`.
    FeatureEmbed { x: usize, w1: usize, b1: usize, w2: usize, b2: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` is unreachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// How a binary elementwise op broadcasts its right operand.
enum Bcast {
    Same,
    Scalar,
    /// rhs is a vector matching the last axis of lhs.
    LastAxis,
}

fn bcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        return Ok(Bcast::Same);
    }
    if b == [1] {
        return Ok(Bcast::Scalar);
    }
    if b.len() == 1 && a.last() == Some(&b[0]) {
        return Ok(Bcast::LastAxis);
    }
    Err(Error::shape(
        op,
        format!("incompatible shapes {} and {}", fmt_shape(a), fmt_shape(b)),
    ))
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).bmm(self.value(b))?;
        Ok(self.push(out, Op::Bmm { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match bcast_kind("add", ta.shape(), tb.shape())? {
            Bcast::Same => {
                let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
            Bcast::Scalar => ta.map(|x| x + tb.data()[0]),
            Bcast::LastAxis => {
                let n = tb.numel();
                let data = ta.data().iter().enumerate().map(|(i, x)| x + tb.data()[i % n]).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
        };
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match bcast_kind("mul", ta.shape(), tb.shape())? {
            Bcast::Same => {
                let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
            Bcast::Scalar => ta.map(|x| x * tb.data()[0]),
            Bcast::LastAxis => {
                let n = tb.numel();
                let data = ta.data().iter().enumerate().map(|(i, x)| x * tb.data()[i % n]).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
        };
        Ok(self.push(out, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Adds a constant tensor (same shape, scalar, or last-axis vector).
    pub fn add_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        let out = match bcast_kind("add_const", ta.shape(), c.shape())? {
            Bcast::Same => {
                let data = ta.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
            Bcast::Scalar => ta.map(|x| x + c.data()[0]),
            Bcast::LastAxis => {
                let n = c.numel();
                let data = ta.data().iter().enumerate().map(|(i, x)| x + c.data()[i % n]).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            }
        };
        Ok(self.push(out, Op::AddConst { a: a.0 }))
    }

    /// `mul * x + add`, elementwise with scalar constants.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let out = self.value(a).map(|x| mul * x + add);
        self.push(out, Op::Affine { a: a.0, mul })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid { a: a.0 })
    }

    /// Natural log with the argument clamped at [`LN_CLAMP`]. NaN inputs
    /// stay NaN (`f64::max` would silently absorb them into the clamp).
    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x >= LN_CLAMP {
                x.ln()
            } else if x.is_nan() {
                f64::NAN
            } else {
                LN_CLAMP.ln()
            }
        });
        self.push(out, Op::Ln { a: a.0 })
    }

    /// `x if x >= 0 else slope * x`; `slope` is a learnable 1-element node.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(Error::shape(
                "prelu",
                format!("slope must be a scalar, got {}", fmt_shape(self.value(slope).shape())),
            ));
        }
        let s = self.value(slope).data()[0];
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { s * x });
        Ok(self.push(out, Op::Prelu { a: a.0, slope: slope.0 }))
    }

    /// Softmax over the last axis, computed with row-max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_forward(self.value(a), None)?;
        Ok(self.push(out, Op::Softmax { a: a.0 }))
    }

    /// Softmax over the last axis of `logits + mask`. The mask must be a
    /// square matrix matching the trailing two extents of the logits (it
    /// broadcasts over any leading extent) and may only contain `0` or
    /// [`MASK_VALUE`]; it is data, not a differentiable input.
    pub fn masked_softmax(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let (f1, f2) = mask.dims2().map_err(|_| {
            Error::shape(
                "masked_softmax",
                format!("mask must be rank 2, got {}", fmt_shape(mask.shape())),
            )
        })?;
        if f1 != f2 {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask trailing extents must be square, got {}", fmt_shape(mask.shape())),
            ));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != MASK_VALUE) {
            return Err(Error::Numeric(format!(
                "masked_softmax: mask entries must be 0 or {MASK_VALUE}"
            )));
        }
        let out = softmax_forward(self.value(a), Some(mask))?;
        Ok(self.push(out, Op::Softmax { a: a.0 }))
    }

    /// Inverted dropout: in training, each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`;
    /// in evaluation the op is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Numeric(format!("dropout rate must be in [0,1), got {rate}")));
        }
        if !training || rate == 0.0 {
            let out = self.value(a).clone();
            let keep = Tensor::filled(out.shape().to_vec(), 1.0);
            return Ok(self.push(out, Op::Dropout { a: a.0, keep, scale: 1.0 }));
        }
        let ta = self.value(a);
        let scale = 1.0 / (1.0 - rate);
        let keep_data: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 })
            .collect();
        let keep = Tensor::new(ta.shape().to_vec(), keep_data)?;
        let data = ta.data().iter().zip(keep.data()).map(|(x, k)| x * k * scale).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { a: a.0, keep, scale }))
    }

    /// Scalar `sum(w ⊙ a)` with constant weights of the same shape.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != w.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("weights {} do not match operand {}", fmt_shape(w.shape()), fmt_shape(ta.shape())),
            ));
        }
        let s: f64 = ta.data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { a: a.0, w }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let w = Tensor::filled(self.value(a).shape().to_vec(), 1.0);
        self.weighted_sum(a, w).expect("sum: weights match by construction")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let w = Tensor::filled(self.value(a).shape().to_vec(), 1.0 / n);
        self.weighted_sum(a, w).expect("mean: weights match by construction")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose_last()?;
        Ok(self.push(out, Op::Transpose { a: a.0 }))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let from = self.value(a).shape().to_vec();
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { a: a.0, from }))
    }

    /// `[b,f,d] -> [b*heads, f, d/heads]`, grouping embedding slices per head.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (b, f, d) = self.value(a).dims3()?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                "split_heads",
                format!("heads {} must divide embedding width {}", heads, d),
            ));
        }
        let dh = d / heads;
        let src = self.value(a).data();
        let mut out = vec![0.0; b * f * d];
        for q in 0..b {
            for h in 0..heads {
                for i in 0..f {
                    let dst0 = ((q * heads + h) * f + i) * dh;
                    let src0 = (q * f + i) * d + h * dh;
                    out[dst0..dst0 + dh].copy_from_slice(&src[src0..src0 + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b * heads, f, dh], out)?;
        Ok(self.push(out, Op::SplitHeads { a: a.0, heads }))
    }

    /// `[b*heads, f, d/heads] -> [b, f, d]`.
    pub fn merge_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (bh, f, dh) = self.value(a).dims3()?;
        if heads == 0 || bh % heads != 0 {
            return Err(Error::shape(
                "merge_heads",
                format!("leading extent {} is not a multiple of heads {}", bh, heads),
            ));
        }
        let b = bh / heads;
        let d = dh * heads;
        let src = self.value(a).data();
        let mut out = vec![0.0; b * f * d];
        for q in 0..b {
            for h in 0..heads {
                for i in 0..f {
                    let src0 = ((q * heads + h) * f + i) * dh;
                    let dst0 = (q * f + i) * d + h * dh;
                    out[dst0..dst0 + dh].copy_from_slice(&src[src0..src0 + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b, f, d], out)?;
        Ok(self.push(out, Op::MergeHeads { a: a.0, heads }))
    }

    /// Gathers rows along the leading axis; `perm` must be a permutation.
    pub fn permute_rows(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let lead = ta.shape()[0];
        if perm.len() != lead {
            return Err(Error::shape(
                "permute_rows",
                format!("permutation length {} vs leading extent {}", perm.len(), lead),
            ));
        }
        let row = ta.numel() / lead;
        let mut out = vec![0.0; ta.numel()];
        for (i, &p) in perm.iter().enumerate() {
            out[i * row..(i + 1) * row].copy_from_slice(&ta.data()[p * row..(p + 1) * row]);
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(out, Op::PermuteRows { a: a.0, perm: perm.to_vec() }))
    }

    /// `mask ⊙ a + (1 − mask) ⊙ b` with a constant 0/1 mask, either of the
    /// full shape or a last-axis vector broadcast across the rest.
    pub fn mask_mix(&mut self, a: Var, b: Var, mask: Tensor) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mask_mix",
                format!("operands differ: {} vs {}", fmt_shape(ta.shape()), fmt_shape(tb.shape())),
            ));
        }
        let kind = bcast_kind("mask_mix", ta.shape(), mask.shape())?;
        let n = mask.numel();
        let pick = |i: usize| match kind {
            Bcast::Same => mask.data()[i],
            Bcast::Scalar => mask.data()[0],
            Bcast::LastAxis => mask.data()[i % n],
        };
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .enumerate()
            .map(|(i, (x, y))| {
                let m = pick(i);
                m * x + (1.0 - m) * y
            })
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskMix { a: a.0, b: b.0, mask }))
    }

    /// Embeds each scalar feature independently through its own gated pair:
    /// `x: [b,f]`, weights and biases `[f,d]`, output `[b,f,d]`.
    pub fn feature_embed(&mut self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        let (bsz, f) = self.value(x).dims2().map_err(|_| {
            Error::shape(
                "feature_embed",
                format!("input must be rank 2, got {}", fmt_shape(self.value(x).shape())),
            )
        })?;
        let (fw, d) = self.value(w1).dims2()?;
        for (name, v) in [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)] {
            let s = self.value(v).shape();
            if s != [fw, d] {
                return Err(Error::shape(
                    "feature_embed",
                    format!("{name} must be [{}x{}], got {}", fw, d, fmt_shape(s)),
                ));
            }
        }
        if fw != f {
            return Err(Error::shape(
                "feature_embed",
                format!("input has {} features but params expect {}", f, fw),
            ));
        }
        let (xd, w1d, b1d, w2d, b2d) = (
            self.value(x).data(),
            self.value(w1).data(),
            self.value(b1).data(),
            self.value(w2).data(),
            self.value(b2).data(),
        );
        let mut out = vec![0.0; bsz * f * d];
        for n in 0..bsz {
            for i in 0..f {
                let xv = xd[n * f + i];
                let row = i * d;
                let dst = &mut out[(n * f + i) * d..(n * f + i + 1) * d];
                for j in 0..d {
                    let g = (xv * w1d[row + j] + b1d[row + j]).tanh();
                    dst[j] = g * (xv * w2d[row + j] + b2d[row + j]);
                }
            }
        }
        let out = Tensor::new(vec![bsz, f, d], out)?;
        Ok(self.push(out, Op::FeatureEmbed { x: x.0, w1: w1.0, b1: b1.0, w2: w2.0, b2: b2.0 }))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node
    /// reachable from `loss`; unreachable nodes get `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {}", fmt_shape(self.value(loss).shape())),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            self.accumulate_parents(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, id: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let add_into = |grads: &mut [Option<Tensor>], parent: usize, delta: Tensor| {
            match &mut grads[parent] {
                Some(g) => {
                    for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                        *gi += di;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (k, n) = tb.dims2().expect("matmul rhs is rank 2");
                let rows = ta.numel() / k;
                // dA = dY @ B^T
                let mut da = vec![0.0; rows * k];
                matmul_nt_into(&mut da, dy.data(), tb.data(), rows, n, k);
                add_into(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("dA shape"));
                // dB = A^T @ dY
                let mut db = vec![0.0; k * n];
                matmul_tn_into(&mut db, ta.data(), dy.data(), k, rows, n);
                add_into(grads, *b, Tensor::new(vec![k, n], db).expect("dB shape"));
            }
            Op::Bmm { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (bs, m, k) = ta.dims3().expect("bmm lhs is rank 3");
                let n = tb.shape()[2];
                let mut da = vec![0.0; bs * m * k];
                let mut db = vec![0.0; bs * k * n];
                for q in 0..bs {
                    matmul_nt_into(
                        &mut da[q * m * k..(q + 1) * m * k],
                        &dy.data()[q * m * n..(q + 1) * m * n],
                        &tb.data()[q * k * n..(q + 1) * k * n],
                        m,
                        n,
                        k,
                    );
                    matmul_tn_into(
                        &mut db[q * k * n..(q + 1) * k * n],
                        &ta.data()[q * m * k..(q + 1) * m * k],
                        &dy.data()[q * m * n..(q + 1) * m * n],
                        k,
                        m,
                        n,
                    );
                }
                add_into(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("dA shape"));
                add_into(grads, *b, Tensor::new(tb.shape().to_vec(), db).expect("dB shape"));
            }
            Op::Add { a, b } => {
                add_into(grads, *a, dy.clone());
                let tb = &self.nodes[*b].value;
                add_into(grads, *b, reduce_to_shape(dy, tb.shape()));
            }
            Op::Mul { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let n = tb.numel();
                let da: Vec<f64> = if ta.shape() == tb.shape() {
                    dy.data().iter().zip(tb.data()).map(|(d, y)| d * y).collect()
                } else if n == 1 {
                    dy.data().iter().map(|d| d * tb.data()[0]).collect()
                } else {
                    dy.data().iter().enumerate().map(|(i, d)| d * tb.data()[i % n]).collect()
                };
                add_into(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("dA shape"));
                let prod: Vec<f64> = dy.data().iter().zip(ta.data()).map(|(d, x)| d * x).collect();
                let prod = Tensor::new(ta.shape().to_vec(), prod).expect("prod shape");
                add_into(grads, *b, reduce_to_shape(&prod, tb.shape()));
            }
            Op::AddConst { a } => add_into(grads, *a, dy.clone()),
            Op::Affine { a, mul } => add_into(grads, *a, dy.map(|d| mul * d)),
            Op::Tanh { a } => {
                let y = &node.value;
                let da: Vec<f64> = dy.data().iter().zip(y.data()).map(|(d, y)| d * (1.0 - y * y)).collect();
                add_into(grads, *a, Tensor::new(y.shape().to_vec(), da).expect("dA shape"));
            }
            Op::Sigmoid { a } => {
                let y = &node.value;
                let da: Vec<f64> = dy.data().iter().zip(y.data()).map(|(d, y)| d * y * (1.0 - y)).collect();
                add_into(grads, *a, Tensor::new(y.shape().to_vec(), da).expect("dA shape"));
            }
            Op::Ln { a } => {
                let x = &self.nodes[*a].value;
                let da: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(d, x)| if *x > LN_CLAMP { d / x } else { 0.0 })
                    .collect();
                add_into(grads, *a, Tensor::new(x.shape().to_vec(), da).expect("dA shape"));
            }
            Op::Prelu { a, slope } => {
                let x = &self.nodes[*a].value;
                let s = self.nodes[*slope].value.data()[0];
                let da: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(d, x)| if *x >= 0.0 { *d } else { d * s })
                    .collect();
                add_into(grads, *a, Tensor::new(x.shape().to_vec(), da).expect("dA shape"));
                let ds: f64 = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .filter(|(_, x)| **x < 0.0)
                    .map(|(d, x)| d * x)
                    .sum();
                add_into(grads, *slope, Tensor::scalar(ds));
            }
            Op::Softmax { a } => {
                let y = &node.value;
                let cols = *y.shape().last().expect("softmax output has a last axis");
                let mut da = vec![0.0; y.numel()];
                for (row, chunk) in y.data().chunks(cols).enumerate() {
                    let dyrow = &dy.data()[row * cols..(row + 1) * cols];
                    let dot: f64 = chunk.iter().zip(dyrow).map(|(y, d)| y * d).sum();
                    for j in 0..cols {
                        da[row * cols + j] = chunk[j] * (dyrow[j] - dot);
                    }
                }
                add_into(grads, *a, Tensor::new(y.shape().to_vec(), da).expect("dA shape"));
            }
            Op::Dropout { a, keep, scale } => {
                let da: Vec<f64> = dy.data().iter().zip(keep.data()).map(|(d, k)| d * k * scale).collect();
                add_into(grads, *a, Tensor::new(keep.shape().to_vec(), da).expect("dA shape"));
            }
            Op::WeightedSum { a, w } => {
                let d = dy.data()[0];
                add_into(grads, *a, w.map(|wi| wi * d));
            }
            Op::Transpose { a } => {
                add_into(grads, *a, dy.transpose_last().expect("grad transposes back"));
            }
            Op::Reshape { a, from } => {
                add_into(grads, *a, dy.reshape(from.clone()).expect("grad reshapes back"));
            }
            Op::SplitHeads { a, heads } => {
                let (bh, f, dh) = dy.dims3().expect("split output is rank 3");
                let b = bh / heads;
                let d = dh * heads;
                let mut da = vec![0.0; b * f * d];
                for q in 0..b {
                    for h in 0..*heads {
                        for i in 0..f {
                            let src0 = ((q * heads + h) * f + i) * dh;
                            let dst0 = (q * f + i) * d + h * dh;
                            da[dst0..dst0 + dh].copy_from_slice(&dy.data()[src0..src0 + dh]);
                        }
                    }
                }
                add_into(grads, *a, Tensor::new(vec![b, f, d], da).expect("dA shape"));
            }
            Op::MergeHeads { a, heads } => {
                let (b, f, d) = dy.dims3().expect("merge output is rank 3");
                let dh = d / heads;
                let mut da = vec![0.0; b * f * d];
                for q in 0..b {
                    for h in 0..*heads {
                        for i in 0..f {
                            let dst0 = ((q * heads + h) * f + i) * dh;
                            let src0 = (q * f + i) * d + h * dh;
                            da[dst0..dst0 + dh].copy_from_slice(&dy.data()[src0..src0 + dh]);
                        }
                    }
                }
                add_into(grads, *a, Tensor::new(vec![b * heads, f, dh], da).expect("dA shape"));
            }
            Op::PermuteRows { a, perm } => {
                let lead = dy.shape()[0];
                let row = dy.numel() / lead;
                let mut da = vec![0.0; dy.numel()];
                for (i, &p) in perm.iter().enumerate() {
                    da[p * row..(p + 1) * row].copy_from_slice(&dy.data()[i * row..(i + 1) * row]);
                }
                add_into(grads, *a, Tensor::new(dy.shape().to_vec(), da).expect("dA shape"));
            }
            Op::MaskMix { a, b, mask } => {
                let n = mask.numel();
                let full = n == dy.numel();
                let pick = |i: usize| if full { mask.data()[i] } else { mask.data()[i % n] };
                let da: Vec<f64> = dy.data().iter().enumerate().map(|(i, d)| d * pick(i)).collect();
                let db: Vec<f64> = dy.data().iter().enumerate().map(|(i, d)| d * (1.0 - pick(i))).collect();
                add_into(grads, *a, Tensor::new(dy.shape().to_vec(), da).expect("dA shape"));
                add_into(grads, *b, Tensor::new(dy.shape().to_vec(), db).expect("dB shape"));
            }
            Op::FeatureEmbed { x, w1, b1, w2, b2 } => {
                let xd = self.nodes[*x].value.data();
                let w1d = self.nodes[*w1].value.data();
                let b1d = self.nodes[*b1].value.data();
                let w2d = self.nodes[*w2].value.data();
                let b2d = self.nodes[*b2].value.data();
                let (bsz, f) = self.nodes[*x].value.dims2().expect("embed input is rank 2");
                let d = self.nodes[*w1].value.shape()[1];
                let mut dx = vec![0.0; bsz * f];
                let mut dw1 = vec![0.0; f * d];
                let mut db1 = vec![0.0; f * d];
                let mut dw2 = vec![0.0; f * d];
                let mut db2 = vec![0.0; f * d];
                for n in 0..bsz {
                    for i in 0..f {
                        let xv = xd[n * f + i];
                        let row = i * d;
                        let dyrow = &dy.data()[(n * f + i) * d..(n * f + i + 1) * d];
                        let mut dxv = 0.0;
                        for j in 0..d {
                            let tg = (xv * w1d[row + j] + b1d[row + j]).tanh();
                            let h = xv * w2d[row + j] + b2d[row + j];
                            let dz = dyrow[j];
                            let dg = dz * h * (1.0 - tg * tg);
                            let dh = dz * tg;
                            dxv += dg * w1d[row + j] + dh * w2d[row + j];
                            dw1[row + j] += dg * xv;
                            db1[row + j] += dg;
                            dw2[row + j] += dh * xv;
                            db2[row + j] += dh;
                        }
                        dx[n * f + i] += dxv;
                    }
                }
                add_into(grads, *x, Tensor::new(vec![bsz, f], dx).expect("dX shape"));
                add_into(grads, *w1, Tensor::new(vec![f, d], dw1).expect("dW1 shape"));
                add_into(grads, *b1, Tensor::new(vec![f, d], db1).expect("dB1 shape"));
                add_into(grads, *w2, Tensor::new(vec![f, d], dw2).expect("dW2 shape"));
                add_into(grads, *b2, Tensor::new(vec![f, d], db2).expect("dB2 shape"));
            }
        }
    }
}

fn softmax_forward(logits: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let cols = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "empty shape".to_string()))?;
    if let Some(m) = mask {
        let (rows_per, c2) = m.dims2()?;
        let lead_rows = logits.numel() / cols;
        if c2 != cols || !lead_rows.is_multiple_of(rows_per) {
            return Err(Error::shape(
                "masked_softmax",
                format!(
                    "mask {} does not tile logits {}",
                    fmt_shape(m.shape()),
                    fmt_shape(logits.shape())
                ),
            ));
        }
    }
    let mut out = vec![0.0; logits.numel()];
    let mask_rows = mask.map(|m| m.dims2().expect("validated above").0).unwrap_or(1);
    for (row, chunk) in logits.data().chunks(cols).enumerate() {
        let mrow: Option<&[f64]> = mask.map(|m| {
            let r = row % mask_rows;
            &m.data()[r * cols..(r + 1) * cols]
        });
        let masked: Vec<f64> = match mrow {
            Some(mr) => chunk.iter().zip(mr).map(|(l, mv)| l + mv).collect(),
            None => chunk.to_vec(),
        };
        let max = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = masked.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            out[row * cols + j] = e / denom;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Sums `t` down to `shape` (used for broadcast gradients).
fn reduce_to_shape(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    if shape == [1] {
        return Tensor::scalar(t.data().iter().sum());
    }
    // last-axis vector broadcast
    let n = shape[0];
    let mut out = vec![0.0; n];
    for (i, v) in t.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape is valid")
}

/// Max over coordinates of `|analytic - central_difference| / max(1, |analytic|)`
/// for a scalar-valued tape program built by `f` from a single leaf.
///
/// `f` must be deterministic; stochastic ops (dropout) must run in
/// evaluation mode inside it.
pub fn gradcheck<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    gradcheck_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), h)
}

/// [`gradcheck`] over several independent leaves at once.
pub fn gradcheck_multi<F>(f: F, points: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).numel() != 1 {
            return Err(Error::shape(
                "gradcheck",
                format!("function must be scalar-valued, got {}", fmt_shape(tape.value(loss).shape())),
            ));
        }
        Ok(tape.value(loss).data()[0])
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0_f64;
    let mut moved: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        let analytic = grads
            .wrt(vars[pi])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));
        for i in 0..point.numel() {
            let orig = point.data()[i];
            moved[pi].data_mut()[i] = orig + h;
            let up = eval(&moved)?;
            moved[pi].data_mut()[i] = orig - h;
            let down = eval(&moved)?;
            moved[pi].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn masked_softmax_annihilates_masked_entry() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::new([2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap());
        let mask = Tensor::new([2, 2], vec![0.0, MASK_VALUE, 0.0, 0.0]).unwrap();
        let probs = tape.masked_softmax(logits, &mask).unwrap();
        let p = tape.value(probs).data();
        // row 0: second position masked
        assert!((p[0] - 1.0).abs() < 1e-30);
        assert!(p[1].abs() < 1e-30);
        // row 1: open
        assert!((p[2] - 0.5).abs() < 1e-15 && (p[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::new([1, 3], vec![4.2, 4.2, 4.2]).unwrap());
        let probs = tape.softmax(logits).unwrap();
        for p in tape.value(probs).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_extended_precision_oracle() {
        // Oracle computed at 50-digit precision for logits [0.3, -1.2, 2.4].
        let want = [
            0.10650421141676496,
            0.023764301749904994,
            0.86973148683333,
        ];
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::new([1, 3], vec![0.3, -1.2, 2.4]).unwrap());
        let probs = tape.softmax(logits).unwrap();
        let sum: f64 = tape.value(probs).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (p, w) in tape.value(probs).data().iter().zip(&want) {
            assert!((p - w).abs() < 1e-14, "{p} vs {w}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_property() {
        let mut rng = stream(42, "autodiff-test");
        for _ in 0..20 {
            let mut tape = Tape::new();
            let logits = tape.leaf(Tensor::randn([4, 5, 5], 3.0, &mut rng));
            let probs = tape.softmax(logits).unwrap();
            for row in tape.value(probs).data().chunks(5) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).data()[0], 0.0);

        let v = tape.leaf(Tensor::scalar(-2.0));
        let slope = tape.leaf(Tensor::scalar(0.25));
        let p = tape.prelu(v, slope).unwrap();
        assert_eq!(tape.value(p).data()[0], -0.5);
    }

    #[test]
    fn sigmoid_symmetry_identity() {
        let mut rng = stream(1, "autodiff-test");
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-8.0..8.0);
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::scalar(x));
            let b = tape.leaf(Tensor::scalar(-x));
            let sa = tape.sigmoid(a);
            let sb = tape.sigmoid(b);
            let s = tape.add(sa, sb).unwrap();
            assert!((tape.value(s).data()[0] - 1.0).abs() < 1e-12);
        }
    }
    use rand::Rng;

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = stream(2, "autodiff-test");
        let t = Tensor::randn([3, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let a = tape.dropout(x, 0.0, &mut rng, true).unwrap();
        let b = tape.dropout(x, 0.9, &mut rng, false).unwrap();
        assert_eq!(tape.value(a), &t);
        assert_eq!(tape.value(b), &t);
    }

    #[test]
    fn dropout_kept_fraction_concentrates() {
        let mut rng = stream(3, "autodiff-test");
        let n = 1_000_000;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled([n], 1.0));
        let y = tape.dropout(x, 0.3, &mut rng, true).unwrap();
        let kept = tape.value(y).data().iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.7).abs() < 0.005, "kept fraction {kept}");
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = stream(4, "autodiff-test");
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn backward_of_x_tanh_x() {
        // d/dx [x tanh x] at 0.5, frozen from a high-precision evaluation.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.5));
        let t = tape.tanh(x);
        let y = tape.mul(x, t).unwrap();
        let grads = tape.backward(y).unwrap();
        let g = grads.wrt(x).unwrap().data()[0];
        assert!((g - 0.8553410237429735).abs() < 1e-12);

        // and against central differences directly
        let err = gradcheck(
            |tape, x| {
                let t = tape.tanh(x);
                tape.mul(x, t)
            },
            &Tensor::scalar(0.5),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "gradcheck err {err}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn grad_through_masked_logit_is_zero() {
        let mut rng = stream(17, "autodiff-test");
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::randn([3, 3], 1.0, &mut rng));
        let mut mdata = vec![0.0; 9];
        mdata[1] = MASK_VALUE; // position (0,1) blocked
        let mask = Tensor::new([3, 3], mdata).unwrap();
        let probs = tape.masked_softmax(logits, &mask).unwrap();
        let w = Tensor::randn([3, 3], 1.0, &mut rng);
        let s = tape.weighted_sum(probs, w).unwrap();
        let grads = tape.backward(s).unwrap();
        let g = grads.wrt(logits).unwrap().data();
        assert!(g[1].abs() < 1e-12, "masked logit grad {}", g[1]);
        assert!(g[0].abs() > 0.0, "open logits should receive gradient");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradcheck_quadratic_is_exact_to_roundoff() {
        let mut rng = stream(7, "autodiff-test");
        let x = Tensor::randn([6], 1.0, &mut rng);
        let err = gradcheck(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                let s = tape.sum(sq);
                Ok(tape.affine(s, 0.5, 0.0))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "quadratic gradcheck err {err}");
    }

    #[test]
    fn gradcheck_composite_ops() {
        let mut rng = stream(8, "autodiff-test");
        // matmul -> softmax -> weighted sum, checking both operands.
        let a = Tensor::randn([3, 4], 0.7, &mut rng);
        let b = Tensor::randn([4, 3], 0.7, &mut rng);
        let w = Tensor::randn([3, 3], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, vars| {
                let prod = tape.matmul(vars[0], vars[1])?;
                let probs = tape.softmax(prod)?;
                tape.weighted_sum(probs, w.clone())
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "matmul/softmax gradcheck err {err}");
    }

    #[test]
    fn gradcheck_permutation_and_mix_ops() {
        let mut rng = stream(9, "autodiff-test");
        let z = Tensor::randn([4, 2, 6], 0.5, &mut rng);
        let w = Tensor::randn([4, 2, 6], 1.0, &mut rng);
        let dim_mask = Tensor::new([6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let err = gradcheck(
            |tape, z| {
                let perm = vec![2, 0, 3, 1];
                let zp = tape.permute_rows(z, &perm)?;
                let mixed = tape.mask_mix(z, zp, dim_mask.clone())?;
                let split = tape.split_heads(mixed, 3)?;
                let merged = tape.merge_heads(split, 3)?;
                let t = tape.tanh(merged);
                tape.weighted_sum(t, w.clone())
            },
            &z,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "permute/mix gradcheck err {err}");
    }

    #[test]
    fn gradcheck_feature_embed() {
        let mut rng = stream(10, "autodiff-test");
        let x = Tensor::randn([3, 2], 1.0, &mut rng);
        let w1 = Tensor::randn([2, 4], 0.8, &mut rng);
        let b1 = Tensor::randn([2, 4], 0.3, &mut rng);
        let w2 = Tensor::randn([2, 4], 0.8, &mut rng);
        let b2 = Tensor::randn([2, 4], 0.3, &mut rng);
        let w = Tensor::randn([3, 2, 4], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, v| {
                let z = tape.feature_embed(v[0], v[1], v[2], v[3], v[4])?;
                tape.weighted_sum(z, w.clone())
            },
            &[x, w1, b1, w2, b2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "feature_embed gradcheck err {err}");
    }

    #[test]
    fn determinism_same_seed_same_values_and_grads() {
        let run = || {
            let mut rng = stream(99, "determinism");
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::randn([4, 8], 1.0, &mut rng));
            let w = tape.leaf(Tensor::randn([8, 8], 0.3, &mut rng));
            let h = tape.matmul(x, w).unwrap();
            let h = tape.dropout(h, 0.4, &mut rng, true).unwrap();
            let t = tape.tanh(h);
            let loss = tape.mean(t);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).data()[0].to_bits(),
                grads.wrt(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
