//! Dense 64-bit tensors, a recording tape with reverse-mode differentiation,
//! and a central-difference gradient checker.
//!
//! Everything the model computes goes through [`Tape`]: parameters are bound
//! as leaves, primitives record their inputs, and [`Tape::backward`] walks the
//! record in reverse to produce adjoints.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GRADCHECK_ABS_FLOOR};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::{MogError, Result};

/// Guard added inside every logarithm of a probability.
pub const EPS_LOG: f64 = 1e-12;

/// A dense row-major array of `f64` with an optional gradient buffer.
///
/// Scalars have the empty shape `[]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(MogError::invalid(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(MogError::invalid(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel]).expect("zeros: valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(Vec::new(), vec![value]).expect("scalar shape")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("vector must be non-empty")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        } else if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `scale * delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += scale * d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A probability vector over the vocabulary emitted by one decoder at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution(Vec<f64>);

impl StepDistribution {
    /// Wraps `probs` after checking it is non-negative and sums to one within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(MogError::invalid("empty distribution"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(MogError::invalid("distribution has negative or non-finite entries"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MogError::invalid(format!("distribution sums to {total}")));
        }
        Ok(StepDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax over the unmasked entries of `logits`.
///
/// Masked entries come out as exactly `0.0`. Entries equal to `-inf` behave
/// like masked ones. Shared by the tape primitive and the checked wrapper.
pub(crate) fn softmax_kernel(logits: &[f64], mask: Option<&[bool]>, out: &mut Vec<f64>) {
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in logits.iter().enumerate() {
        if active(i) && x > max {
            max = x;
        }
    }
    out.clear();
    out.extend(logits.iter().enumerate().map(|(i, &x)| {
        if active(i) && x != f64::NEG_INFINITY {
            (x - max).exp()
        } else {
            0.0
        }
    }));
    let total: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// Checked softmax of a rank-1 tensor of logits.
pub fn softmax(logits: &Tensor) -> Result<StepDistribution> {
    if logits.shape().len() != 1 {
        return Err(MogError::invalid("softmax expects a rank-1 tensor"));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(MogError::invalid("softmax input has a non-finite entry"));
    }
    let mut out = Vec::with_capacity(logits.numel());
    softmax_kernel(logits.data(), None, &mut out);
    Ok(StepDistribution(out))
}

/// `-ln(p[target] + EPS_LOG)`.
pub fn cross_entropy(pred: &StepDistribution, target: usize) -> Result<f64> {
    let p = pred
        .probs()
        .get(target)
        .ok_or_else(|| MogError::invalid(format!("target {target} outside vocabulary of {}", pred.len())))?;
    Ok(-(p + EPS_LOG).ln())
}
