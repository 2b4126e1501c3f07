//! Reverse-mode automatic differentiation on a per-example tape.
//!
//! A `Tape` is a define-by-run Wengert list: every primitive application
//! appends a node holding the op, its input ids and the forward value.
//! Construction order is topological by construction, so `backward` is a
//! single reverse sweep. Gradients accumulate additively across fan-out.
//!
//! Op set: matmul, add, elementwise mul, tanh, sigmoid, concat, dropout
//! mask mul, softmax, log-softmax, pick, logsumexp, scalar sum, plus the
//! structural ops the recurrent layers need (embedding-column gather,
//! row slicing). Softmax, log-softmax and logsumexp subtract the running
//! max before exponentiation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    /// Input or parameter; `trainable` only marks intent for callers.
    Leaf {
        trainable: bool,
    },
    MatMul,
    Add,
    /// Elementwise product of two same-shape tensors.
    ElemMul,
    Tanh,
    Sigmoid,
    /// Vertical stack of column vectors.
    Concat,
    /// Elementwise product with a pre-sampled 0 / (1/keep) mask node;
    /// gradient flows into the first input only.
    DropoutMaskMul,
    Softmax,
    LogSoftmax,
    /// Single entry of a column vector as a scalar.
    Pick {
        index: usize,
    },
    LogSumExp,
    /// Sum of any number of scalars.
    ScalarSum,
    /// Rows [start, start+len) of a column vector.
    SliceRows {
        start: usize,
        len: usize,
    },
    /// Column `col` of a matrix as a column vector (embedding lookup).
    EmbedCol {
        col: usize,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

pub struct Tape {
    nodes: Vec<Node>,
    swept: bool,
}

fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn logsumexp_slice(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            swept: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
        });
        id
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, vec![], value)
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, vec![], value)
    }

    pub fn constant(&mut self, x: f64) -> NodeId {
        self.input(Tensor::scalar(x))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward target w.r.t. this node (zeros if
    /// the loss did not depend on it).
    pub fn grad(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        let (r, c) = n.value.shape();
        match &n.grad {
            Some(g) => Tensor::from_vec(r, c, g.clone()).expect("grad shape"),
            None => Tensor::zeros(r, c),
        }
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn expect_arity(&self, op: &'static str, inputs: &[NodeId], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::InvalidShape {
                op,
                shape: (inputs.len(), 0),
                expected: "wrong number of inputs",
            });
        }
        Ok(())
    }

    /// Generic entry point: validates shapes, computes the forward value
    /// and appends the node. The convenience methods below all route
    /// through this.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let value = match &op {
            Op::Leaf { .. } => {
                return Err(Error::InvalidShape {
                    op: "apply",
                    shape: (0, 0),
                    expected: "leaves are created via param/input",
                })
            }
            Op::MatMul => {
                self.expect_arity("matmul", inputs, 2)?;
                let (ar, ac) = self.shape(inputs[0]);
                let (br, bc) = self.shape(inputs[1]);
                if ac != br {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        lhs: (ar, ac),
                        rhs: (br, bc),
                    });
                }
                self.nodes[inputs[0].0]
                    .value
                    .matmul(&self.nodes[inputs[1].0].value)?
            }
            Op::Add | Op::ElemMul | Op::DropoutMaskMul => {
                let name = match op {
                    Op::Add => "add",
                    Op::ElemMul => "elementwise mul",
                    _ => "dropout mask mul",
                };
                self.expect_arity(name, inputs, 2)?;
                let a = self.shape(inputs[0]);
                let b = self.shape(inputs[1]);
                if a != b {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: a,
                        rhs: b,
                    });
                }
                let av = self.nodes[inputs[0].0].value.data();
                let bv = self.nodes[inputs[1].0].value.data();
                let data = if matches!(op, Op::Add) {
                    av.iter().zip(bv).map(|(x, y)| x + y).collect()
                } else {
                    av.iter().zip(bv).map(|(x, y)| x * y).collect()
                };
                Tensor::from_vec(a.0, a.1, data)?
            }
            Op::Tanh | Op::Sigmoid => {
                self.expect_arity("tanh/sigmoid", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                let data = v
                    .data()
                    .iter()
                    .map(|&x| match op {
                        Op::Tanh => x.tanh(),
                        _ => 1.0 / (1.0 + (-x).exp()),
                    })
                    .collect();
                Tensor::from_vec(v.rows(), v.cols(), data)?
            }
            Op::Concat => {
                if inputs.is_empty() {
                    return Err(Error::InvalidShape {
                        op: "concat",
                        shape: (0, 0),
                        expected: "at least one input",
                    });
                }
                let mut data = Vec::new();
                for &i in inputs {
                    let v = &self.nodes[i.0].value;
                    if !v.is_vector() {
                        return Err(Error::InvalidShape {
                            op: "concat",
                            shape: v.shape(),
                            expected: "column vector",
                        });
                    }
                    data.extend_from_slice(v.data());
                }
                Tensor::vector(data)
            }
            Op::Softmax | Op::LogSoftmax => {
                self.expect_arity("softmax", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                if !v.is_vector() {
                    return Err(Error::InvalidShape {
                        op: "softmax",
                        shape: v.shape(),
                        expected: "column vector",
                    });
                }
                if matches!(op, Op::Softmax) {
                    Tensor::vector(softmax_vec(v.data()))
                } else {
                    let lse = logsumexp_slice(v.data());
                    Tensor::vector(v.data().iter().map(|x| x - lse).collect())
                }
            }
            Op::Pick { index } => {
                self.expect_arity("pick", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                if !v.is_vector() || *index >= v.rows() {
                    return Err(Error::InvalidShape {
                        op: "pick",
                        shape: v.shape(),
                        expected: "column vector with index in range",
                    });
                }
                Tensor::scalar(v.data()[*index])
            }
            Op::LogSumExp => {
                self.expect_arity("logsumexp", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                if !v.is_vector() {
                    return Err(Error::InvalidShape {
                        op: "logsumexp",
                        shape: v.shape(),
                        expected: "column vector",
                    });
                }
                Tensor::scalar(logsumexp_slice(v.data()))
            }
            Op::ScalarSum => {
                let mut acc = 0.0;
                for &i in inputs {
                    let v = &self.nodes[i.0].value;
                    if !v.is_scalar() {
                        return Err(Error::InvalidShape {
                            op: "scalar sum",
                            shape: v.shape(),
                            expected: "scalar inputs",
                        });
                    }
                    acc += v.item();
                }
                Tensor::scalar(acc)
            }
            Op::SliceRows { start, len } => {
                self.expect_arity("slice rows", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                if !v.is_vector() || start + len > v.rows() || *len == 0 {
                    return Err(Error::InvalidShape {
                        op: "slice rows",
                        shape: v.shape(),
                        expected: "column vector covering the slice",
                    });
                }
                Tensor::vector(v.data()[*start..start + len].to_vec())
            }
            Op::EmbedCol { col } => {
                self.expect_arity("embed col", inputs, 1)?;
                let v = &self.nodes[inputs[0].0].value;
                if *col >= v.cols() {
                    return Err(Error::TokenOutOfRange {
                        id: *col,
                        vocab: v.cols(),
                    });
                }
                let data = (0..v.rows()).map(|r| v.get(r, *col)).collect();
                Tensor::vector(data)
            }
        };
        Ok(self.push(op, inputs.to_vec(), value))
    }

    // ── convenience wrappers ──

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::ElemMul, &[a, b])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Concat, xs)
    }

    pub fn dropout_mask_mul(&mut self, x: NodeId, mask: NodeId) -> Result<NodeId> {
        self.apply(Op::DropoutMaskMul, &[x, mask])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::LogSoftmax, &[x])
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        self.apply(Op::Pick { index }, &[x])
    }

    pub fn logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::LogSumExp, &[x])
    }

    pub fn scalar_sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::ScalarSum, xs)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::SliceRows { start, len }, &[x])
    }

    pub fn embed_col(&mut self, matrix: NodeId, col: usize) -> Result<NodeId> {
        self.apply(Op::EmbedCol { col }, &[matrix])
    }

    /// Negation via elementwise mul with a -1 scalar constant.
    pub fn neg_scalar(&mut self, x: NodeId) -> Result<NodeId> {
        let m = self.constant(-1.0);
        self.mul(x, m)
    }

    fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Errors if the loss is not a
    /// scalar or the tape was already swept (a second backward without a
    /// fresh forward pass would double gradients).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.swept {
            return Err(Error::BackwardAlreadyRun);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape(),
            });
        }
        self.swept = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let grad_out = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::MatMul => {
                    let a = self.nodes[inputs[0].0].value.clone();
                    let b = self.nodes[inputs[1].0].value.clone();
                    let (m, k) = a.shape();
                    let n = b.cols();
                    // dA = dOut * B^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad_out[r * n + j] * b.get(p, j);
                            }
                            da[r * k + p] = acc;
                        }
                    }
                    // dB = A^T * dOut
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for r in 0..m {
                                acc += a.get(r, p) * grad_out[r * n + j];
                            }
                            db[p * n + j] = acc;
                        }
                    }
                    self.accumulate(inputs[0], &da);
                    self.accumulate(inputs[1], &db);
                }
                Op::Add => {
                    self.accumulate(inputs[0], &grad_out);
                    self.accumulate(inputs[1], &grad_out);
                }
                Op::ElemMul => {
                    let a: Vec<f64> = self.nodes[inputs[0].0].value.data().to_vec();
                    let b: Vec<f64> = self.nodes[inputs[1].0].value.data().to_vec();
                    let da: Vec<f64> = grad_out.iter().zip(&b).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = grad_out.iter().zip(&a).map(|(g, x)| g * x).collect();
                    self.accumulate(inputs[0], &da);
                    self.accumulate(inputs[1], &db);
                }
                Op::DropoutMaskMul => {
                    // mask is a constant: no gradient into inputs[1].
                    let mask: Vec<f64> = self.nodes[inputs[1].0].value.data().to_vec();
                    let dx: Vec<f64> = grad_out.iter().zip(&mask).map(|(g, m)| g * m).collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::Tanh => {
                    let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                    let dx: Vec<f64> = grad_out
                        .iter()
                        .zip(&y)
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::Sigmoid => {
                    let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                    let dx: Vec<f64> = grad_out
                        .iter()
                        .zip(&y)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::Concat => {
                    let mut offset = 0;
                    for &inp in &inputs {
                        let len = self.nodes[inp.0].value.len();
                        self.accumulate(inp, &grad_out[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Softmax => {
                    let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                    let dot: f64 = grad_out.iter().zip(&y).map(|(g, p)| g * p).sum();
                    let dx: Vec<f64> = grad_out
                        .iter()
                        .zip(&y)
                        .map(|(g, p)| p * (g - dot))
                        .collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::LogSoftmax => {
                    // dx_i = g_i - softmax(x)_i * sum(g)
                    let p = softmax_vec(self.nodes[inputs[0].0].value.data());
                    let gsum: f64 = grad_out.iter().sum();
                    let dx: Vec<f64> = grad_out
                        .iter()
                        .zip(&p)
                        .map(|(g, pi)| g - pi * gsum)
                        .collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::Pick { index } => {
                    let len = self.nodes[inputs[0].0].value.len();
                    let mut dx = vec![0.0; len];
                    dx[index] = grad_out[0];
                    self.accumulate(inputs[0], &dx);
                }
                Op::LogSumExp => {
                    let p = softmax_vec(self.nodes[inputs[0].0].value.data());
                    let dx: Vec<f64> = p.iter().map(|pi| grad_out[0] * pi).collect();
                    self.accumulate(inputs[0], &dx);
                }
                Op::ScalarSum => {
                    for &inp in &inputs {
                        self.accumulate(inp, &grad_out);
                    }
                }
                Op::SliceRows { start, len } => {
                    let total = self.nodes[inputs[0].0].value.len();
                    let mut dx = vec![0.0; total];
                    dx[start..start + len].copy_from_slice(&grad_out);
                    self.accumulate(inputs[0], &dx);
                }
                Op::EmbedCol { col } => {
                    let (rows, cols) = self.nodes[inputs[0].0].value.shape();
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + col] = grad_out[r];
                    }
                    self.accumulate(inputs[0], &dx);
                }
            }
        }
        Ok(())
    }
}

// ── finite-difference gradient checking ──

/// Result of a finite-difference sweep over a set of named tensors.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_entry: usize,
    /// (tensor name, max relative error inside that tensor)
    pub per_tensor: Vec<(String, f64)>,
}

// Central differences on a loss of size L carry absolute roundoff near
// eps * L / step (about 1e-9 for document losses at step 1e-5), so for
// entries whose true derivative is near zero the raw ratio measures that
// noise rather than correctness. Flooring the denominator here keeps the
// check meaningful: absolute deviations above FD_DENOM_FLOOR times the
// caller's tolerance are still flagged, two orders above the noise.
const FD_DENOM_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_DENOM_FLOOR)
}

/// Checks the tape's analytic gradients against central finite
/// differences. `build` receives a fresh tape plus one trainable leaf per
/// entry of `tensors` (same order) and returns the scalar loss node; it
/// must be deterministic, which is verified by evaluating the loss twice
/// and demanding bit-equal results.
pub fn finite_difference_check<F>(
    tensors: &[Tensor],
    names: &[&str],
    step: f64,
    build: F,
) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    assert_eq!(tensors.len(), names.len(), "one name per tensor");

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if !tape.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: tape.value(loss).shape(),
            });
        }
        Ok(tape.value(loss).item())
    };

    let first = eval(tensors)?;
    let second = eval(tensors)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NondeterministicLoss { first, second });
    }

    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = tensors.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| tape.grad(id)).collect();

    let mut work: Vec<Tensor> = tensors.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_entry: 0,
        per_tensor: Vec::new(),
    };
    for (ti, name) in names.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for e in 0..work[ti].len() {
            let orig = work[ti].data()[e];
            work[ti].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = rel_err(analytic[ti].data()[e], numeric);
            if err > tensor_max {
                tensor_max = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name.to_string();
                report.worst_entry = e;
            }
        }
        report.per_tensor.push((name.to_string(), tensor_max));
    }
    if report.worst_tensor.is_empty() {
        report.worst_tensor = names.first().map(|s| s.to_string()).unwrap_or_default();
    }
    Ok(report)
}
