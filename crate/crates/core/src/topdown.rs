//! Top-down classification: one confidence-calibrated softmax head per super
//! class, trained with cross entropy on the data under the node plus a
//! KL-to-uniform penalty on data from outside it. At test time the cascade
//! descends from the root along the argmax child and stops with `N(s)` as soon
//! as the head at `s` is not confident (`KL(U || P) < λ_s`).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::numcore::{
    argmax, kl_uniform, softmax_in_place, train_head, ClassSlot, ExampleLoss, LinearHead, LossSpec, SgdConfig, Term,
    TermKind,
};
use crate::taxonomy::{NodeId, Taxonomy};

/// Transform applied to the concatenated per-super outputs used as features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeaturePostprocess {
    /// Softmax probabilities.
    #[default]
    None,
    /// `log p`.
    LogSoftmax,
    /// Rectified logits.
    Relu,
    /// `max(0, log p + log |C(s)|)`: log-ratio to the uniform output, rectified.
    LogSoftmaxThenRelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopDownConfig {
    pub sgd: SgdConfig,
    /// Weight of the KL term relative to the cross-entropy term.
    pub kl_ratio: f64,
    pub postprocess: FeaturePostprocess,
    /// Number of log-spaced threshold candidates per node.
    pub threshold_grid: usize,
}

impl Default for TopDownConfig {
    fn default() -> Self {
        TopDownConfig {
            sgd: SgdConfig::default(),
            kl_ratio: 1.0,
            postprocess: FeaturePostprocess::None,
            threshold_grid: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopDownModel {
    pub heads: BTreeMap<NodeId, LinearHead>,
    pub thresholds: BTreeMap<NodeId, f64>,
    pub postprocess: FeaturePostprocess,
}

/// Resolves training labels to known leaves.
pub(crate) fn leaf_labels(t: &Taxonomy, data: &FeatureSet) -> Result<Vec<NodeId>> {
    data.labels()
        .iter()
        .map(|&k| {
            let n = t.resolve_key(k).ok_or(Error::DanglingReference(k))?;
            if t.is_leaf(n) {
                Ok(n)
            } else {
                Err(Error::NotALeaf(n))
            }
        })
        .collect()
}

/// Per-node seed derived from the run seed.
pub(crate) fn node_seed(seed: u64, node: NodeId) -> u64 {
    seed ^ (node.0 as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Cross entropy over `C(s)` for samples under `s` plus `kl_ratio` times
/// KL(U || P) for samples in `O(s)`, each part averaged over its samples.
pub fn topdown_loss(t: &Taxonomy, s: NodeId, leaves: &[NodeId], kl_ratio: f64) -> Result<LossSpec> {
    let children = t.children(s);
    let mut counts = vec![0usize; children.len()];
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for (row, &leaf) in leaves.iter().enumerate() {
        if t.covers_leaf(s, leaf) {
            // In a DAG a leaf may sit under several children of `s`.
            let targets: Vec<u32> =
                (0..children.len()).filter(|&i| t.covers_leaf(children[i], leaf)).map(|i| i as u32).collect();
            for &i in &targets {
                counts[i as usize] += 1;
            }
            inside.push((row, targets));
        } else {
            outside.push(row);
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyChildData { super_class: s, child: children[i] });
    }
    let w_in = 1.0 / inside.len() as f64;
    let mut examples: Vec<ExampleLoss> = inside
        .into_iter()
        .map(|(row, targets)| ExampleLoss {
            row,
            weight: w_in,
            terms: vec![Term { kind: TermKind::PartialCe { targets, support: 0 }, coef: 1.0 }],
        })
        .collect();
    if !outside.is_empty() && kl_ratio > 0.0 {
        let w_out = kl_ratio / outside.len() as f64;
        examples.extend(outside.into_iter().map(|row| ExampleLoss {
            row,
            weight: w_out,
            terms: vec![Term { kind: TermKind::KlUniform, coef: 1.0 }],
        }));
    }
    Ok(LossSpec { supports: vec![(0..children.len() as u32).collect()], examples })
}

pub fn train_topdown(t: &Taxonomy, data: &FeatureSet, cfg: &TopDownConfig) -> Result<TopDownModel> {
    cfg.sgd.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let leaves = leaf_labels(t, data)?;
    let heads = t
        .super_order()
        .par_iter()
        .map(|&s| {
            let mut spec = topdown_loss(t, s, &leaves, cfg.kl_ratio)?;
            let slots = t.children(s).iter().map(|&c| ClassSlot::Node(c)).collect();
            let head = LinearHead::zeros(slots, data.dim());
            let sgd = cfg.sgd.with_seed(node_seed(cfg.sgd.seed, s));
            let (head, _) = train_head(head, data.features(), &mut spec, &sgd)?;
            Ok((s, head))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let thresholds = t.super_order().iter().map(|&s| (s, 0.0)).collect();
    Ok(TopDownModel { heads, thresholds, postprocess: cfg.postprocess })
}

impl TopDownModel {
    /// True if the heads line up with the supers and children of `t`.
    pub fn matches(&self, t: &Taxonomy) -> bool {
        self.heads.len() == t.super_order().len()
            && t.super_order().iter().all(|s| {
                self.heads.get(s).is_some_and(|h| {
                    h.class_ids.len() == t.children(*s).len()
                        && h.class_ids.iter().zip(t.children(*s)).all(|(a, c)| *a == ClassSlot::Node(*c))
                })
            })
    }

    pub fn feature_dim(&self) -> usize {
        self.heads.values().next().map_or(0, LinearHead::feature_dim)
    }

    fn head(&self, s: NodeId) -> Result<&LinearHead> {
        self.heads.get(&s).ok_or(Error::NotASuperClass(s))
    }

    /// Softmax output of the head at `s`.
    pub fn probabilities(&self, s: NodeId, x: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.head(s)?.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// KL(U || P) at `s`: large when the head is confident.
    pub fn confidence(&self, s: NodeId, x: &[f64]) -> Result<f64> {
        kl_uniform(&self.probabilities(s, x)?)
    }

    pub fn predict(&self, t: &Taxonomy, x: &[f64]) -> Result<Prediction> {
        predict_topdown(self, t, x)
    }
}

pub fn predict_topdown(m: &TopDownModel, t: &Taxonomy, x: &[f64]) -> Result<Prediction> {
    let mut s = t.root();
    loop {
        let p = m.probabilities(s, x)?;
        let lambda = m.thresholds.get(&s).copied().unwrap_or(0.0);
        if kl_uniform(&p)? < lambda {
            return Ok(Prediction::Novel(s));
        }
        let child = t.children(s)[argmax(&p)];
        if t.is_leaf(child) {
            return Ok(Prediction::Leaf(child));
        }
        s = child;
    }
}

/// Dimension of the concatenated top-down features: `Σ_s |C(s)|`.
pub fn td_feature_dim(t: &Taxonomy) -> usize {
    t.super_order().iter().map(|&s| t.children(s).len()).sum()
}

/// Per-super outputs concatenated in canonical super order, then post-processed.
pub fn extract_td_features(m: &TopDownModel, t: &Taxonomy, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(td_feature_dim(t));
    for &s in t.super_order() {
        let logits = m.head(s)?.logits(x)?;
        let k = logits.len() as f64;
        let mut p = logits.clone();
        softmax_in_place(&mut p);
        match m.postprocess {
            FeaturePostprocess::None => out.extend(p),
            FeaturePostprocess::LogSoftmax => out.extend(p.iter().map(|v| v.max(crate::numcore::PROB_CLAMP).ln())),
            FeaturePostprocess::Relu => out.extend(logits.iter().map(|v| v.max(0.0))),
            FeaturePostprocess::LogSoftmaxThenRelu => {
                out.extend(p.iter().map(|v| (v.max(crate::numcore::PROB_CLAMP).ln() + k.ln()).max(0.0)))
            }
        }
    }
    Ok(out)
}

/// Maps a whole feature set through [`extract_td_features`].
pub fn transform_features(m: &TopDownModel, t: &Taxonomy, data: &FeatureSet) -> Result<FeatureSet> {
    data.map_features(td_feature_dim(t), |x| extract_td_features(m, t, x))
}

/// Picks the threshold maximizing the harmonic mean of known accuracy
/// (confident and correct in-domain samples) and novelty accuracy (outside
/// samples with KL below the threshold). Ties go to the smallest candidate.
pub fn select_threshold(in_domain: &[(f64, bool)], outside: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], f64::NEG_INFINITY);
    for &lambda in &sorted {
        let known =
            in_domain.iter().filter(|&&(kl, ok)| ok && kl >= lambda).count() as f64 / in_domain.len().max(1) as f64;
        let novel = outside.iter().filter(|&&kl| kl < lambda).count() as f64 / outside.len().max(1) as f64;
        let hm = if known + novel > 0.0 { 2.0 * known * novel / (known + novel) } else { 0.0 };
        if hm > best.1 {
            best = (lambda, hm);
        }
    }
    Ok(best.0)
}

/// `n` log-spaced values spanning `[lo, hi]` (a single value if the range is empty).
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let lo = lo.max(crate::numcore::PROB_CLAMP);
    if hi <= lo || n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Chooses `λ_s` for every super using validation data. Leaves outside `s`
/// play the role of novel classes. The root has no outside leaves and keeps
/// `λ = 0`.
pub fn calibrate_thresholds(
    m: &TopDownModel,
    t: &Taxonomy,
    val: &FeatureSet,
    grid_size: usize,
) -> Result<BTreeMap<NodeId, f64>> {
    let leaves = leaf_labels(t, val)?;
    t.super_order()
        .par_iter()
        .map(|&s| {
            let mut inside = Vec::new();
            let mut outside = Vec::new();
            for (i, &leaf) in leaves.iter().enumerate() {
                let p = m.probabilities(s, val.row(i))?;
                let kl = kl_uniform(&p)?;
                if t.covers_leaf(s, leaf) {
                    inside.push((kl, t.covers_leaf(t.children(s)[argmax(&p)], leaf)));
                } else {
                    outside.push(kl);
                }
            }
            if inside.is_empty() {
                return Err(Error::NoValidationData(s));
            }
            if t.outside_set(s)?.is_empty() {
                return Ok((s, 0.0));
            }
            if outside.is_empty() {
                return Err(Error::NoValidationData(s));
            }
            let all = inside.iter().map(|p| p.0).chain(outside.iter().copied());
            let (lo, hi) = all.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            Ok((s, select_threshold(&inside, &outside, &log_grid(lo, hi, grid_size))?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{figure3, toy_embedding_taxonomy};
    use crate::numcore::BatchSize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Isotropic clusters: leaf i sits at 6 * e_i in 6-d, cat leaves near
    /// each other along a shared offset.
    fn clustered(t: &Taxonomy, per_class: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut set = FeatureSet::new(6);
        let mut id = 0;
        for (i, &leaf) in t.leaf_order().iter().enumerate() {
            let mut center = [0.0; 6];
            center[i] = 4.0;
            // shared component per parent
            center[4 + (i / 2)] = 4.0;
            for _ in 0..per_class {
                let x: Vec<f64> = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
                set.push(id, t.key(leaf), &x).unwrap();
                id += 1;
            }
        }
        set
    }

    fn cfg() -> TopDownConfig {
        TopDownConfig {
            sgd: SgdConfig {
                learning_rate: 0.1,
                batch_size: BatchSize::Mini(16),
                max_epochs: 40,
                weight_decay: 1e-3,
                ..SgdConfig::default()
            },
            ..TopDownConfig::default()
        }
    }

    #[test]
    fn cat_head_separates_and_is_calibrated() {
        let t = figure3();
        let train = clustered(&t, 40, 1);
        let test = clustered(&t, 40, 2);
        let m = train_topdown(&t, &train, &cfg()).unwrap();
        assert!(m.matches(&t));
        let cat = t.find_by_name("cat").unwrap();
        let leaves = leaf_labels(&t, &test).unwrap();
        let (mut correct, mut n) = (0, 0);
        let (mut kl_in, mut kl_out) = (Vec::new(), Vec::new());
        for (i, &leaf) in leaves.iter().enumerate() {
            let p = m.probabilities(cat, test.row(i)).unwrap();
            let kl = kl_uniform(&p).unwrap();
            if t.covers_leaf(cat, leaf) {
                n += 1;
                correct += (t.children(cat)[argmax(&p)] == leaf) as usize;
                kl_in.push(kl);
            } else {
                kl_out.push(kl);
            }
        }
        assert!(correct as f64 / n as f64 > 0.95);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&kl_out) < mean(&kl_in), "outside {} vs inside {}", mean(&kl_out), mean(&kl_in));
    }

    #[test]
    fn single_super_reduces_to_cross_entropy() {
        let t = Taxonomy::from_edges(&[(1, 0), (2, 0), (3, 0)], &Default::default()).unwrap();
        let leaves: Vec<NodeId> = t.leaf_order().iter().copied().cycle().take(9).collect();
        let spec = topdown_loss(&t, t.root(), &leaves, 1.0).unwrap();
        assert!(spec.examples.iter().all(|e| matches!(e.terms[0].kind, TermKind::PartialCe { .. })));
        assert!((spec.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_child_data_is_an_error() {
        let t = figure3();
        let leaves = vec![t.leaf_order()[0], t.leaf_order()[2], t.leaf_order()[3]];
        let err = topdown_loss(&t, t.find_by_name("cat").unwrap(), &leaves, 1.0).unwrap_err();
        assert!(matches!(err, Error::EmptyChildData { child, .. } if child == t.leaf_order()[1]));
    }

    #[test]
    fn threshold_selection_examples() {
        let inside = [(2.0, true), (3.0, true)];
        let outside = [0.1, 0.2];
        assert_eq!(select_threshold(&inside, &outside, &[0.5, 1.0, 2.5]).unwrap(), 0.5);
        assert_eq!(select_threshold(&inside, &outside, &[2.5, 1.0, 0.5]).unwrap(), 0.5);
        assert!(matches!(select_threshold(&inside, &outside, &[]), Err(Error::EmptyGrid)));
        let same = [(1.0, true), (1.0, true)];
        assert_eq!(select_threshold(&same, &[1.0, 1.0], &[2.0, 0.5, 1.0]).unwrap(), 0.5);
    }

    fn manual_model(t: &Taxonomy, root_logits: [f64; 2], lambda: f64) -> TopDownModel {
        let mut heads = BTreeMap::new();
        for &s in t.super_order() {
            let slots = t.children(s).iter().map(|&c| ClassSlot::Node(c)).collect();
            heads.insert(s, LinearHead::zeros(slots, 1));
        }
        heads.get_mut(&t.root()).unwrap().bias = root_logits.to_vec();
        let thresholds = t.super_order().iter().map(|&s| (s, if s == t.root() { lambda } else { 0.0 })).collect();
        TopDownModel { heads, thresholds, postprocess: FeaturePostprocess::None }
    }

    #[test]
    fn cascade_examples() {
        // root -> {leaf a, super b}; b -> {c, d}
        let t = Taxonomy::from_edges(&[(1, 0), (2, 0), (3, 2), (4, 2)], &Default::default()).unwrap();
        // P = (0.99, 0.01): log-odds ln 99
        let m = manual_model(&t, [99f64.ln(), 0.0], 0.1);
        let kl = m.confidence(t.root(), &[0.0]).unwrap();
        assert!((kl - 1.6145).abs() < 1e-4);
        assert_eq!(predict_topdown(&m, &t, &[0.0]).unwrap(), Prediction::Leaf(t.resolve_key(1).unwrap()));
        let m = manual_model(&t, [0.0, 0.0], 0.1);
        assert_eq!(predict_topdown(&m, &t, &[0.0]).unwrap(), Prediction::Novel(t.root()));
        assert!(matches!(predict_topdown(&m, &t, &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn td_features_layout() {
        let t = toy_embedding_taxonomy();
        assert_eq!(td_feature_dim(&t), 7);
        let mut m = manual_model(&figure3(), [0.0, 0.0], 0.0);
        let mut heads = BTreeMap::new();
        for &s in t.super_order() {
            let slots: Vec<ClassSlot> = t.children(s).iter().map(|&c| ClassSlot::Node(c)).collect();
            let mut h = LinearHead::zeros(slots, 2);
            for (i, w) in h.weights.as_mut_slice().iter_mut().enumerate() {
                *w = (i as f64 * 0.7 + s.0 as f64).sin();
            }
            heads.insert(s, h);
        }
        m.heads = heads;
        let x = [0.3, -1.1];
        let f = extract_td_features(&m, &t, &x).unwrap();
        assert_eq!(f.len(), 7);
        for block in [&f[0..2], &f[2..4], &f[4..7]] {
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for pp in [FeaturePostprocess::Relu, FeaturePostprocess::LogSoftmaxThenRelu] {
            m.postprocess = pp;
            assert!(extract_td_features(&m, &t, &x).unwrap().iter().all(|&v| v >= 0.0));
        }
        m.postprocess = FeaturePostprocess::LogSoftmax;
        assert!(extract_td_features(&m, &t, &x).unwrap().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn raising_thresholds_never_reduces_novel_flags() {
        let t = figure3();
        let train = clustered(&t, 30, 3);
        let test = clustered(&t, 20, 4);
        let mut m = train_topdown(&t, &train, &cfg()).unwrap();
        let mut last = 0;
        for lambda in [0.0, 0.01, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0, 5.0] {
            for v in m.thresholds.values_mut() {
                *v = lambda;
            }
            let flagged = (0..test.len()).filter(|&i| m.predict(&t, test.row(i)).unwrap().is_novel()).count();
            assert!(flagged >= last);
            last = flagged;
        }
        assert_eq!(last, test.len());
    }

    #[test]
    fn calibration_picks_finite_thresholds() {
        let t = figure3();
        let train = clustered(&t, 30, 5);
        let val = clustered(&t, 20, 6);
        let m = train_topdown(&t, &train, &cfg()).unwrap();
        let th = calibrate_thresholds(&m, &t, &val, 64).unwrap();
        assert_eq!(th[&t.root()], 0.0);
        assert!(th.values().all(|v| v.is_finite() && *v >= 0.0));
        let cat_only = val.filter(|i| i < 40);
        assert!(matches!(calibrate_thresholds(&m, &t, &cat_only, 64), Err(Error::NoValidationData(_))));
    }
}
