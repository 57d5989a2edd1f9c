//! Dense kernels shared by every classifier: softmax, KL-to-uniform, linear
//! heads, composable losses with hand-derived gradients, an SGD trainer, and
//! a central-difference gradient checker.

mod gradcheck;
mod head;
mod loss;
mod train;

pub use gradcheck::{finite_diff_grad, grad_check, relative_error};
pub use head::{ClassSlot, HeadGrad, LinearHead, Matrix};
pub use loss::{kl_uniform_logits, partial_cross_entropy, EpochLoss, ExampleLoss, LossSpec, Term, TermKind};
pub use train::{train_head, BatchSize, SgdConfig, StopReason, TrainReport};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// `log Σ exp(z_i)` over the indexed entries, max-shifted.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let m = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.into_iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-shifted softmax; the caller guarantees finite input.
pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `D_KL(U || p) = -log K - (1/K) Σ log p_i`, with `p_i` clamped to `PROB_CLAMP`.
pub fn kl_uniform(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(sum));
    }
    let k = p.len() as f64;
    let mean_log = p.iter().map(|&v| v.max(PROB_CLAMP).ln()).sum::<f64>() / k;
    Ok((-k.ln() - mean_log).max(0.0))
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
