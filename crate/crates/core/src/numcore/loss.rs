use rand_chacha::ChaCha8Rng;

use super::head::{HeadGrad, LinearHead, Matrix};
use super::log_sum_exp;

/// `-log( Σ_{t∈targets} e^{z_t} / Σ_{j∈support} e^{z_j} )`.
///
/// `targets` must be a subset of `support`. When `grad` is given,
/// `coef * dL/dz` is added to it: `-softmax over targets + softmax over support`.
pub fn partial_cross_entropy(
    logits: &[f64],
    targets: &[u32],
    support: &[u32],
    coef: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let lse_t = log_sum_exp(targets.iter().map(|&t| logits[t as usize]));
    let lse_s = log_sum_exp(support.iter().map(|&j| logits[j as usize]));
    if let Some(g) = grad {
        for &j in support {
            g[j as usize] += coef * (logits[j as usize] - lse_s).exp();
        }
        for &t in targets {
            g[t as usize] -= coef * (logits[t as usize] - lse_t).exp();
        }
    }
    lse_s - lse_t
}

/// KL from the uniform distribution to `softmax(z)`, in logit space:
/// `-log K - mean(z) + LSE(z)`. Gradient `softmax(z) - 1/K`.
pub fn kl_uniform_logits(logits: &[f64], coef: f64, grad: Option<&mut [f64]>) -> f64 {
    let k = logits.len() as f64;
    let lse = log_sum_exp(logits.iter().copied());
    let mean = logits.iter().sum::<f64>() / k;
    if let Some(g) = grad {
        for (gi, &z) in g.iter_mut().zip(logits) {
            *gi += coef * ((z - lse).exp() - 1.0 / k);
        }
    }
    -k.ln() - mean + lse
}

#[derive(Clone, Debug, PartialEq)]
pub enum TermKind {
    /// Cross entropy over the logits listed in `support[support_id]`, with
    /// the probability mass of `targets` as the numerator.
    PartialCe { targets: Vec<u32>, support: u32 },
    /// KL(U || softmax) over all logits of the head.
    KlUniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub kind: TermKind,
    pub coef: f64,
}

/// Loss of one training example: a weighted sum of terms on one input row.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleLoss {
    pub row: usize,
    pub weight: f64,
    pub terms: Vec<Term>,
}

/// A composite objective `Σ_i weight_i Σ_t coef_t term_t(z_i)`, where
/// `z_i = W x_{row_i} + b`. Supports are shared index lists so that the
/// leave-one-out terms of many examples reuse the same tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossSpec {
    pub supports: Vec<Vec<u32>>,
    pub examples: Vec<ExampleLoss>,
}

impl LossSpec {
    pub fn example_loss(&self, ex: &ExampleLoss, logits: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        for term in &ex.terms {
            total += match &term.kind {
                TermKind::PartialCe { targets, support } => {
                    partial_cross_entropy(
                        logits,
                        targets,
                        &self.supports[*support as usize],
                        term.coef,
                        grad.as_deref_mut(),
                    ) * term.coef
                }
                TermKind::KlUniform => kl_uniform_logits(logits, term.coef, grad.as_deref_mut()) * term.coef,
            };
        }
        total
    }

    /// Weighted loss over `examples[idx]`, scaled by `scale`, accumulating the
    /// parameter gradient into `grad` when given.
    pub fn batch(
        &self,
        head: &LinearHead,
        inputs: &Matrix,
        idx: impl IntoIterator<Item = usize>,
        scale: f64,
        mut grad: Option<&mut HeadGrad>,
    ) -> f64 {
        let k = head.num_classes();
        let mut logits = vec![0.0; k];
        let mut g = vec![0.0; k];
        let mut total = 0.0;
        for i in idx {
            let ex = &self.examples[i];
            if ex.weight == 0.0 {
                continue;
            }
            let x = inputs.row(ex.row);
            head.logits_into(x, &mut logits);
            match grad.as_deref_mut() {
                Some(acc) => {
                    g.fill(0.0);
                    total += ex.weight * self.example_loss(ex, &logits, Some(&mut g));
                    acc.accumulate(&g, x, scale * ex.weight);
                }
                None => total += ex.weight * self.example_loss(ex, &logits, None),
            }
        }
        total * scale
    }

    /// Full objective without regularization.
    pub fn value(&self, head: &LinearHead, inputs: &Matrix) -> f64 {
        self.batch(head, inputs, 0..self.examples.len(), 1.0, None)
    }

    pub fn total_weight(&self) -> f64 {
        self.examples.iter().map(|e| e.weight).sum()
    }

    /// Rescales example weights so they sum to one.
    pub fn normalize_weights(&mut self) {
        let w = self.total_weight();
        if w > 0.0 {
            for e in &mut self.examples {
                e.weight /= w;
            }
        }
    }
}

/// A loss that may change between epochs (for example when labels are
/// resampled). A fixed [`LossSpec`] never changes.
pub trait EpochLoss {
    fn start_epoch(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) {}
    fn spec(&self) -> &LossSpec;
}

impl EpochLoss for LossSpec {
    fn spec(&self) -> &LossSpec {
        self
    }
}
