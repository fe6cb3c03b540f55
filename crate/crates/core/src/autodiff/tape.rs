use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability floor and ceiling margin applied before every log in the losses.
pub const PROB_CLIP: f64 = 1e-7;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Sigmoid(Var),
    GradReverse(Var, S),
    Dropout {
        input: Var,
        mask: Tensor<S>,
        keep_prob: S,
    },
    SliceRows(Var, usize),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<S>,
        clipped: Vec<bool>,
    },
    BinaryCrossEntropy {
        pred: Var,
        target: Tensor<S>,
    },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Records a forward computation for a single reverse sweep.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A tape belongs to one optimizer step; build a fresh one for the next step.
#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when the loss does not reach it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<S> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise sum; `b` may also be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let out = va.zip_map(vb, |x, y| x + y);
            return Ok(self.push(out, Op::Add(a, b)));
        }
        if va.is_matrix() && vb.is_row_vector() && vb.numel() == va.cols() {
            let cols = va.cols();
            let bias = vb.data();
            let mut out = va.clone();
            for (i, x) in out.data_mut().iter_mut().enumerate() {
                *x += bias[i % cols];
            }
            return Ok(self.push(out, Op::AddRow(a, b)));
        }
        Err(Error::dim("add", va.shape(), vb.shape()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.same_shape("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.same_shape("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(op, va.shape(), vb.shape()));
        }
        Ok(va.zip_map(vb, f))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Identity forward; the backward pass multiplies the upstream gradient by `-lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: S) -> Result<Var> {
        if !(lambda >= S::zero()) {
            return Err(Error::Parameter(format!(
                "gradient reversal lambda must be >= 0, got {lambda}"
            )));
        }
        let out = self.value(a).clone();
        Ok(self.push(out, Op::GradReverse(a, lambda)))
    }

    /// Inverted dropout: `x * mask / keep_prob`.
    ///
    /// `mask` either matches `x` exactly or is a row vector shared by every row of `x`.
    pub fn dropout(&mut self, a: Var, mask: &Tensor<S>, keep_prob: S) -> Result<Var> {
        if !(keep_prob > S::zero() && keep_prob <= S::one()) {
            return Err(Error::Parameter(format!(
                "keep probability must lie in (0, 1], got {keep_prob}"
            )));
        }
        if mask.data().iter().any(|&m| m != S::zero() && m != S::one()) {
            return Err(Error::Parameter("dropout mask entries must be 0 or 1".into()));
        }
        let va = self.value(a);
        let broadcast = mask.shape() != va.shape();
        if broadcast && !(va.is_matrix() && mask.is_row_vector() && mask.numel() == va.cols()) {
            return Err(Error::dim("dropout", va.shape(), mask.shape()));
        }
        let full = if broadcast {
            broadcast_rows(mask, va.rows())
        } else {
            mask.clone()
        };
        let out = va.zip_map(&full, |x, m| x * m / keep_prob);
        Ok(self.push(
            out,
            Op::Dropout {
                input: a,
                mask: full,
                keep_prob,
            },
        ))
    }

    /// Rows `start..end` of a matrix node.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean over the batch of `-ln softmax(logits)[label]`, each term capped at `-ln 1e-7`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if !v.is_matrix() || v.rows() != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", v.shape(), &[labels.len()]));
        }
        let classes = v.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label(format!(
                "class label {bad} outside [0, {classes})"
            )));
        }
        let cap = -S::lit(PROB_CLIP).ln();
        let mut probs = Vec::with_capacity(v.numel());
        let mut clipped = Vec::with_capacity(labels.len());
        let mut total = S::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = v.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let z: S = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + z.ln();
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
            let nll = lse - row[label];
            clipped.push(nll > cap);
            total += nll.min(cap);
        }
        let n = S::from_usize(labels.len()).expect("batch size fits scalar");
        let probs = Tensor::new(v.shape().to_vec(), probs)?;
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                clipped,
            },
        ))
    }

    /// Mean of `-[t ln p + (1 - t) ln(1 - p)]` with `p` clipped to `[1e-7, 1 - 1e-7]`.
    pub fn binary_cross_entropy(&mut self, pred: Var, target: &Tensor<S>) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.numel() {
            return Err(Error::dim("binary_cross_entropy", p.shape(), target.shape()));
        }
        if target.data().iter().any(|&t| t != S::zero() && t != S::one()) {
            return Err(Error::Label("binary targets must be 0 or 1".into()));
        }
        let eps = S::lit(PROB_CLIP);
        let total: S = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let pc = p.max(eps).min(S::one() - eps);
                -(t * pc.ln() + (S::one() - t) * (S::one() - pc).ln())
            })
            .sum();
        let n = S::from_usize(p.numel()).expect("batch size fits scalar");
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BinaryCrossEntropy {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`, visiting each recorded node once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = g.matmul(&vb.transpose())?;
                    let gb = va.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let vb = self.value(*b);
                    let cols = vb.numel();
                    let mut gb = vec![S::zero(); cols];
                    for (i, &x) in g.data().iter().enumerate() {
                        gb[i % cols] += x;
                    }
                    accumulate(&mut grads, *b, Tensor::new(vb.shape().to_vec(), gb)?);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |u, y| u * y);
                    let gb = g.zip_map(self.value(*a), |u, x| u * x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *a, g.map(|u| u * f));
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |u, x| if x > S::zero() { u } else { S::zero() });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |u, s| u * s * (S::one() - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::GradReverse(a, lambda) => {
                    let l = *lambda;
                    accumulate(&mut grads, *a, g.map(|u| -(l * u)));
                }
                Op::Dropout {
                    input,
                    mask,
                    keep_prob,
                } => {
                    let k = *keep_prob;
                    accumulate(&mut grads, *input, g.zip_map(mask, |u, m| u * m / k));
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let cols = va.cols();
                    let mut ga = Tensor::zeros(va.shape());
                    let offset = start * cols;
                    ga.data_mut()[offset..offset + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let u = g.item();
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, u));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                    clipped,
                } => {
                    let n = S::from_usize(labels.len()).expect("batch size fits scalar");
                    let scale = g.item() / n;
                    let cols = probs.cols();
                    let mut gl = probs.clone();
                    for (r, (&label, &cut)) in labels.iter().zip(clipped).enumerate() {
                        let row = &mut gl.data_mut()[r * cols..(r + 1) * cols];
                        if cut {
                            row.iter_mut().for_each(|x| *x = S::zero());
                            continue;
                        }
                        row[label] -= S::one();
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::BinaryCrossEntropy { pred, target } => {
                    let vp = self.value(*pred);
                    let n = S::from_usize(vp.numel()).expect("batch size fits scalar");
                    let scale = g.item() / n;
                    let eps = S::lit(PROB_CLIP);
                    let gp = vp.zip_map(target, |p, t| {
                        if p <= eps || p >= S::one() - eps {
                            S::zero()
                        } else {
                            scale * (p - t) / (p * (S::one() - p))
                        }
                    });
                    accumulate(&mut grads, *pred, gp);
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], var: Var, g: Tensor<S>) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn broadcast_rows<S: Scalar>(row: &Tensor<S>, rows: usize) -> Tensor<S> {
    let cols = row.numel();
    let data = row.data().repeat(rows);
    Tensor::new(vec![rows, cols], data).expect("broadcast shape")
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
