use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{HeadGrad, LinearHead, Matrix};
use super::loss::EpochLoss;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSize {
    Full,
    Mini(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// L2 penalty `wd/2 ||W||^2` on weights (bias is not decayed).
    pub weight_decay: f64,
    pub batch_size: BatchSize,
    pub max_epochs: usize,
    /// Decay the learning rate when the relative epoch-over-epoch loss
    /// improvement falls below this value.
    pub lr_decay_trigger: f64,
    pub lr_decay_factor: f64,
    pub max_lr_decays: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-2,
            weight_decay: 1e-2,
            batch_size: BatchSize::Mini(64),
            max_epochs: 50,
            lr_decay_trigger: 0.02,
            lr_decay_factor: 0.1,
            max_lr_decays: 2,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted so a trainer can be run as a no-op.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning_rate = {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!("weight_decay = {}", self.weight_decay)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.batch_size == BatchSize::Mini(0) {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SgdConfig { seed, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    ZeroLearningRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularized objective before training, then after every epoch.
    pub loss_trace: Vec<f64>,
    pub lr_decays: usize,
    pub final_learning_rate: f64,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap()
    }
}

fn l2(head: &LinearHead) -> f64 {
    head.weights.as_slice().iter().map(|w| w * w).sum::<f64>()
}

/// Minimizes `loss + wd/2 ||W||^2` with plain SGD.
///
/// Example order is reshuffled every epoch from `cfg.seed`, so a run is a
/// pure function of its inputs. The learning rate is multiplied by
/// `lr_decay_factor` whenever the loss improves by less than
/// `lr_decay_trigger` relative to the previous epoch, at most
/// `max_lr_decays` times.
pub fn train_head<L: EpochLoss + ?Sized>(
    mut head: LinearHead,
    inputs: &Matrix,
    loss: &mut L,
    cfg: &SgdConfig,
) -> Result<(LinearHead, TrainReport)> {
    cfg.validate()?;
    if inputs.cols() != head.feature_dim() {
        return Err(Error::DimensionMismatch { expected: head.feature_dim(), actual: inputs.cols() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    loss.start_epoch(0, &mut rng);
    if loss.spec().examples.is_empty() {
        return Err(Error::EmptyData);
    }
    let objective = |head: &LinearHead, loss: &L| loss.spec().value(head, inputs) + 0.5 * cfg.weight_decay * l2(head);
    let mut trace = vec![objective(&head, loss)];
    if !trace[0].is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    if cfg.learning_rate == 0.0 {
        return Ok((
            head,
            TrainReport {
                loss_trace: trace,
                lr_decays: 0,
                final_learning_rate: 0.0,
                stop: StopReason::ZeroLearningRate,
            },
        ));
    }

    let mut lr = cfg.learning_rate;
    let mut decays = 0;
    let mut grad = HeadGrad::zeros_like(&head);
    let mut order: Vec<usize> = (0..loss.spec().examples.len()).collect();
    for epoch in 0..cfg.max_epochs {
        if epoch > 0 {
            loss.start_epoch(epoch, &mut rng);
            order = (0..loss.spec().examples.len()).collect();
        }
        let n = order.len();
        let batch = match cfg.batch_size {
            BatchSize::Full => n,
            BatchSize::Mini(b) => {
                order.shuffle(&mut rng);
                b.min(n)
            }
        };
        for chunk in order.chunks(batch) {
            grad.clear();
            // Unbiased estimate of the full weighted-sum gradient.
            let scale = n as f64 / chunk.len() as f64;
            loss.spec().batch(&head, inputs, chunk.iter().copied(), scale, Some(&mut grad));
            let wd = cfg.weight_decay;
            for (w, g) in head.weights.as_mut_slice().iter_mut().zip(grad.weights.as_slice()) {
                *w -= lr * (g + wd * *w);
            }
            for (b, g) in head.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * g;
            }
        }
        let cur = objective(&head, loss);
        if !cur.is_finite() || !head.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
        }
        let prev = *trace.last().unwrap();
        trace.push(cur);
        let improvement = (prev - cur) / prev.abs().max(f64::MIN_POSITIVE);
        if improvement < cfg.lr_decay_trigger && decays < cfg.max_lr_decays {
            lr *= cfg.lr_decay_factor;
            decays += 1;
        }
    }
    Ok((
        head,
        TrainReport { loss_trace: trace, lr_decays: decays, final_learning_rate: lr, stop: StopReason::MaxEpochs },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{ClassSlot, ExampleLoss, LossSpec, Term, TermKind};
    use crate::taxonomy::NodeId;

    fn ce_spec(labels: &[u32], k: u32) -> LossSpec {
        let n = labels.len() as f64;
        LossSpec {
            supports: vec![(0..k).collect()],
            examples: labels
                .iter()
                .enumerate()
                .map(|(i, &y)| ExampleLoss {
                    row: i,
                    weight: 1.0 / n,
                    terms: vec![Term { kind: TermKind::PartialCe { targets: vec![y], support: 0 }, coef: 1.0 }],
                })
                .collect(),
        }
    }

    fn slots(k: u32) -> Vec<ClassSlot> {
        (0..k).map(|i| ClassSlot::Node(NodeId(i))).collect()
    }

    /// Two clusters separated by the line x0 + x1 = 0 with margin 1.
    fn separable() -> (Matrix, Vec<u32>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 10.0 - 1.0;
            rows.push(vec![1.0 + t, 1.0 - t]);
            labels.push(0);
            rows.push(vec![-1.0 + t, -1.0 - t]);
            labels.push(1);
        }
        (Matrix::from_rows(2, &rows).unwrap(), labels)
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (x, y) = separable();
        let mut spec = ce_spec(&y, 2);
        let cfg = SgdConfig {
            learning_rate: 0.5,
            weight_decay: 0.0,
            batch_size: BatchSize::Mini(8),
            max_epochs: 200,
            ..SgdConfig::default()
        };
        let (head, report) = train_head(LinearHead::zeros(slots(2), 2), &x, &mut spec, &cfg).unwrap();
        assert!(report.final_loss() < report.initial_loss());
        let correct =
            (0..x.rows()).filter(|&i| crate::numcore::argmax(&head.logits(x.row(i)).unwrap()) as u32 == y[i]).count();
        assert_eq!(correct, x.rows());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (x, y) = separable();
        let mut head = LinearHead::zeros(slots(2), 2);
        head.weights.as_mut_slice().copy_from_slice(&[0.1, -0.2, 0.3, 0.4]);
        let cfg = SgdConfig { learning_rate: 0.0, ..SgdConfig::default() };
        let (out, report) = train_head(head.clone(), &x, &mut ce_spec(&y, 2), &cfg).unwrap();
        assert_eq!(out, head);
        assert_eq!(report.stop, StopReason::ZeroLearningRate);
    }

    #[test]
    fn weight_decay_alone_shrinks_geometrically() {
        let (x, y) = separable();
        let mut spec = ce_spec(&y, 2);
        for e in &mut spec.examples {
            e.weight = 0.0;
        }
        let mut head = LinearHead::zeros(slots(2), 2);
        head.weights.as_mut_slice().copy_from_slice(&[1.0, -2.0, 0.5, 4.0]);
        let (lr, wd) = (0.1, 1e-2);
        let cfg = SgdConfig {
            learning_rate: lr,
            weight_decay: wd,
            batch_size: BatchSize::Full,
            max_epochs: 5,
            max_lr_decays: 0,
            ..SgdConfig::default()
        };
        let (out, _) = train_head(head.clone(), &x, &mut spec, &cfg).unwrap();
        let factor = (1.0 - lr * wd).powi(5);
        for (a, b) in out.weights.as_slice().iter().zip(head.weights.as_slice()) {
            assert!((a - b * factor).abs() < 1e-15);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y) = separable();
        let cfg = SgdConfig { max_epochs: 10, seed: 9, ..SgdConfig::default() };
        let a = train_head(LinearHead::zeros(slots(2), 2), &x, &mut ce_spec(&y, 2), &cfg).unwrap();
        let b = train_head(LinearHead::zeros(slots(2), 2), &x, &mut ce_spec(&y, 2), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = separable();
        let cfg = SgdConfig::default();
        let err = train_head(LinearHead::zeros(slots(2), 3), &x, &mut ce_spec(&y, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let err = train_head(LinearHead::zeros(slots(2), 2), &x, &mut LossSpec::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptyData));
        let bad = SgdConfig { max_epochs: 0, ..cfg };
        assert!(matches!(
            train_head(LinearHead::zeros(slots(2), 2), &x, &mut ce_spec(&y, 2), &bad),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = separable();
        let mut rows: Vec<Vec<f64>> = x.iter_rows().map(|r| r.iter().map(|v| v * 1e150).collect()).collect();
        rows[0][0] = 1e300;
        let x = Matrix::from_rows(2, &rows).unwrap();
        let cfg = SgdConfig { learning_rate: 1e10, ..SgdConfig::default() };
        let err = train_head(LinearHead::zeros(slots(2), 2), &x, &mut ce_spec(&y, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }
}
