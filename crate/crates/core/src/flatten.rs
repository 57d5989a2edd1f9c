//! Flattened classifiers: one softmax over every known leaf plus a virtual
//! novel slot `N(s)` per super class.
//!
//! * Relabel trains plain cross entropy after randomly moving each label up
//!   the hierarchy; a label that lands on super class `s` trains `N(s)`.
//! * Leave-one-out (LOO) trains, for every ancestor `a` of the label (the
//!   label included), the slots of `P(a)`'s novel class against the leaves
//!   that remain once `a`'s subtree is removed, plus ordinary cross entropy
//!   over the leaves.
//! * TD+LOO is LOO on the concatenated outputs of a top-down model.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Prediction, ScoredSample};
use crate::numcore::{
    argmax, softmax_in_place, train_head, ClassSlot, EpochLoss, ExampleLoss, HeadGrad, LinearHead, LossSpec, SgdConfig,
    Term, TermKind, TrainReport,
};
use crate::taxonomy::{NodeId, Taxonomy};
use crate::topdown::{extract_td_features, leaf_labels, transform_features, TopDownModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlattenMethod {
    Relabel,
    Loo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassWeighting {
    #[default]
    Uniform,
    /// Each loss term is divided by the number of known leaves whose samples
    /// feed it: 1 for a leaf target, `|L(a)|` for the term that holds out
    /// `a`, `|L(s)|` for a Relabel target `N(s)`.
    DescendantCount,
}

/// How the held-out terms of one LOO example are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LooNormalization {
    #[default]
    Sum,
    /// Divide the held-out terms by their count.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelabelConfig {
    pub rate: f64,
    /// Draw fresh labels every epoch instead of once before training.
    pub resample_each_epoch: bool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig { rate: 0.3, resample_each_epoch: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlattenConfig {
    pub sgd: SgdConfig,
    pub class_weighting: ClassWeighting,
    pub loo_normalization: LooNormalization,
    /// Weight of the held-out terms relative to the leaf cross entropy.
    pub held_out_ratio: f64,
    pub relabel: RelabelConfig,
}

impl Default for FlattenConfig {
    fn default() -> Self {
        FlattenConfig {
            sgd: SgdConfig::default(),
            class_weighting: ClassWeighting::Uniform,
            loo_normalization: LooNormalization::Sum,
            held_out_ratio: 1.0,
            relabel: RelabelConfig::default(),
        }
    }
}

/// Head slots: `leaf_order` followed by `N(s)` for every `s` in `super_order`.
pub fn flat_slots(t: &Taxonomy) -> Vec<ClassSlot> {
    t.leaf_order()
        .iter()
        .map(|&l| ClassSlot::Node(l))
        .chain(t.super_order().iter().map(|&s| ClassSlot::Novel(s)))
        .collect()
}

pub fn leaf_slot(t: &Taxonomy, leaf: NodeId) -> u32 {
    t.leaf_position(leaf).expect("leaf") as u32
}

pub fn novel_slot(t: &Taxonomy, s: NodeId) -> u32 {
    (t.leaf_order().len() + t.super_position(s).expect("super class")) as u32
}

/// Slot trained by a (possibly relabeled) node: its leaf slot or `N(node)`.
pub fn label_slot(t: &Taxonomy, node: NodeId) -> u32 {
    if t.is_leaf(node) {
        leaf_slot(t, node)
    } else {
        novel_slot(t, node)
    }
}

/// Maps a slot index back to a prediction.
pub fn slot_prediction(t: &Taxonomy, slot: usize) -> Prediction {
    let nl = t.leaf_order().len();
    if slot < nl {
        Prediction::Leaf(t.leaf_order()[slot])
    } else {
        Prediction::Novel(t.super_order()[slot - nl])
    }
}

/// Support tables for the LOO objective. Table 0 is the leaf set; each
/// non-root node `a` gets a table holding `L(T \ a)` and the novel slots of
/// `P(a)`.
#[derive(Clone, Debug)]
pub struct LooTables {
    supports: Vec<Vec<u32>>,
    held_out: BTreeMap<NodeId, (u32, Vec<u32>)>,
}

impl LooTables {
    pub fn new(t: &Taxonomy) -> Self {
        let mut supports = vec![t.leaf_order().iter().map(|&l| leaf_slot(t, l)).collect::<Vec<u32>>()];
        let mut held_out = BTreeMap::new();
        for r in t.nodes() {
            let a = r.id;
            if a == t.root() {
                continue;
            }
            let removed = t.leaves_under(a);
            let mut targets: Vec<u32> = t.parents(a).iter().map(|&p| novel_slot(t, p)).collect();
            targets.sort_unstable();
            let mut support: Vec<u32> =
                t.leaf_order().iter().filter(|l| removed.binary_search(l).is_err()).map(|&l| leaf_slot(t, l)).collect();
            support.extend(&targets);
            held_out.insert(a, (supports.len() as u32, targets));
            supports.push(support);
        }
        LooTables { supports, held_out }
    }

    /// Loss terms of one sample with leaf label `y`.
    pub fn terms(&self, t: &Taxonomy, y: NodeId, opts: LooOptions) -> Result<Vec<Term>> {
        let LooOptions { weighting, normalization: norm, held_out_ratio } = opts;
        if !t.is_leaf(y) {
            return Err(Error::NotALeaf(y));
        }
        let mut terms =
            vec![Term { kind: TermKind::PartialCe { targets: vec![leaf_slot(t, y)], support: 0 }, coef: 1.0 }];
        let ancestors: Vec<NodeId> = t.ancestors(y)?.into_iter().filter(|&a| a != t.root()).collect();
        let scale = match norm {
            LooNormalization::Sum => held_out_ratio,
            LooNormalization::Mean => held_out_ratio / ancestors.len().max(1) as f64,
        };
        for a in ancestors {
            let (support, targets) = &self.held_out[&a];
            let coef = match weighting {
                ClassWeighting::Uniform => scale,
                ClassWeighting::DescendantCount => scale / t.leaves_under(a).len() as f64,
            };
            terms.push(Term { kind: TermKind::PartialCe { targets: targets.clone(), support: *support }, coef });
        }
        Ok(terms)
    }

    pub fn supports(&self) -> &[Vec<u32>] {
        &self.supports
    }
}

/// Term weighting of the LOO objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LooOptions {
    pub weighting: ClassWeighting,
    pub normalization: LooNormalization,
    pub held_out_ratio: f64,
}

impl Default for LooOptions {
    fn default() -> Self {
        LooOptions { weighting: ClassWeighting::Uniform, normalization: LooNormalization::Sum, held_out_ratio: 1.0 }
    }
}

impl From<&FlattenConfig> for LooOptions {
    fn from(c: &FlattenConfig) -> Self {
        LooOptions {
            weighting: c.class_weighting,
            normalization: c.loo_normalization,
            held_out_ratio: c.held_out_ratio,
        }
    }
}

/// Mean LOO objective over `leaves` (one example per row).
pub fn loo_loss_spec(t: &Taxonomy, leaves: &[NodeId], opts: LooOptions) -> Result<LossSpec> {
    if leaves.is_empty() {
        return Err(Error::EmptyData);
    }
    let tables = LooTables::new(t);
    let w = 1.0 / leaves.len() as f64;
    let examples = leaves
        .iter()
        .enumerate()
        .map(|(row, &y)| Ok(ExampleLoss { row, weight: w, terms: tables.terms(t, y, opts)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossSpec { supports: tables.supports, examples })
}

/// LOO loss of one sample, accumulating the parameter gradient into `grad`.
pub fn loo_loss(t: &Taxonomy, head: &LinearHead, x: &[f64], y: NodeId, grad: Option<&mut HeadGrad>) -> Result<f64> {
    head.check_input(x)?;
    let tables = LooTables::new(t);
    let terms = tables.terms(t, y, LooOptions::default())?;
    let spec = LossSpec { supports: tables.supports, examples: vec![ExampleLoss { row: 0, weight: 1.0, terms }] };
    let inputs = crate::numcore::Matrix::from_vec(1, x.len(), x.to_vec());
    let loss = spec.batch(head, &inputs, [0], 1.0, grad);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { epoch: 0 })
    }
}

/// The partial softmax distributions inside the LOO loss of a sample with
/// label `y`: one per term, each over its support.
pub fn loo_partial_distributions(t: &Taxonomy, logits: &[f64], y: NodeId) -> Result<Vec<Vec<f64>>> {
    let tables = LooTables::new(t);
    tables
        .terms(t, y, LooOptions::default())?
        .iter()
        .map(|term| match &term.kind {
            TermKind::PartialCe { support, .. } => {
                let mut p: Vec<f64> = tables.supports[*support as usize].iter().map(|&j| logits[j as usize]).collect();
                softmax_in_place(&mut p);
                Ok(p)
            }
            TermKind::KlUniform => unreachable!("LOO has no KL terms"),
        })
        .collect()
}

/// Cross entropy over all slots with labels drawn by relabeling.
pub struct RelabelLoss<'a> {
    t: &'a Taxonomy,
    leaves: Vec<NodeId>,
    cfg: RelabelConfig,
    weighting: ClassWeighting,
    spec: LossSpec,
}

impl<'a> RelabelLoss<'a> {
    pub fn new(t: &'a Taxonomy, leaves: Vec<NodeId>, cfg: RelabelConfig, weighting: ClassWeighting) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.rate) {
            return Err(Error::InvalidRate(cfg.rate));
        }
        if let Some(&y) = leaves.iter().find(|&&y| !t.is_leaf(y)) {
            return Err(Error::NotALeaf(y));
        }
        let spec = LossSpec { supports: vec![(0..flat_slots(t).len() as u32).collect()], examples: Vec::new() };
        Ok(RelabelLoss { t, leaves, cfg, weighting, spec })
    }

    /// Relabels every sample and rebuilds the objective.
    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        let t = self.t;
        let w = 1.0 / self.leaves.len().max(1) as f64;
        self.spec.examples = self
            .leaves
            .iter()
            .enumerate()
            .map(|(row, &y)| {
                let node = t.relabel_sample(y, self.cfg.rate, rng).expect("rate validated");
                let coef = match self.weighting {
                    ClassWeighting::Uniform => 1.0,
                    ClassWeighting::DescendantCount => 1.0 / t.leaves_under(node).len() as f64,
                };
                ExampleLoss {
                    row,
                    weight: w,
                    terms: vec![Term {
                        kind: TermKind::PartialCe { targets: vec![label_slot(t, node)], support: 0 },
                        coef,
                    }],
                }
            })
            .collect();
    }
}

impl EpochLoss for RelabelLoss<'_> {
    fn start_epoch(&mut self, epoch: usize, rng: &mut ChaCha8Rng) {
        if epoch == 0 || self.cfg.resample_each_epoch {
            self.resample(rng);
        }
    }

    fn spec(&self) -> &LossSpec {
        &self.spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlattenModel {
    pub head: LinearHead,
    pub method: FlattenMethod,
    /// Present for TD+LOO: inputs are mapped through this model first.
    pub td: Option<TopDownModel>,
    pub class_weighting: ClassWeighting,
}

impl FlattenModel {
    pub fn matches(&self, t: &Taxonomy) -> bool {
        self.head.class_ids == flat_slots(t) && self.td.as_ref().is_none_or(|td| td.matches(t))
    }

    fn check(&self, t: &Taxonomy) -> Result<()> {
        if self.matches(t) {
            Ok(())
        } else {
            Err(Error::TaxonomyMismatch)
        }
    }

    /// Dimension of the raw features this model consumes.
    pub fn input_dim(&self) -> usize {
        match &self.td {
            Some(td) => td.feature_dim(),
            None => self.head.feature_dim(),
        }
    }

    pub fn logits(&self, t: &Taxonomy, x: &[f64]) -> Result<Vec<f64>> {
        match &self.td {
            Some(td) => self.head.logits(&extract_td_features(td, t, x)?),
            None => self.head.logits(x),
        }
    }

    /// Argmax over the slots after adding `novel_bias` to every novel slot.
    pub fn predict(&self, t: &Taxonomy, x: &[f64], novel_bias: f64) -> Result<Prediction> {
        let mut z = self.logits(t, x)?;
        for v in &mut z[t.leaf_order().len()..] {
            *v += novel_bias;
        }
        Ok(slot_prediction(t, argmax(&z)))
    }

    /// Best leaf and best novel logit per sample, for bias sweeps.
    pub fn score(&self, t: &Taxonomy, data: &FeatureSet) -> Result<Vec<ScoredSample>> {
        self.check(t)?;
        let nl = t.leaf_order().len();
        (0..data.len())
            .map(|i| {
                let z = self.logits(t, data.row(i))?;
                let k = argmax(&z[..nl]);
                let n = nl + argmax(&z[nl..]);
                Ok(ScoredSample {
                    id: data.ids()[i],
                    known: (slot_prediction(t, k), z[k]),
                    novel: Some((slot_prediction(t, n), z[n])),
                })
            })
            .collect()
    }

    /// Validation scores on known-class data. Besides each sample as is,
    /// every non-root ancestor `a` of its label yields a held-out copy scored
    /// on `T \ a` only (the slots of `a` and its descendants discarded),
    /// whose correct answer is `N(P(a))`. Sample ids are renumbered: the
    /// returned scores and ground truth refer to positions in the output.
    pub fn held_out_validation(&self, t: &Taxonomy, val: &FeatureSet) -> Result<(Vec<ScoredSample>, GroundTruth)> {
        self.check(t)?;
        let leaves = leaf_labels(t, val)?;
        let nl = t.leaf_order().len();
        let mut stages: BTreeMap<NodeId, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        let mut scored = Vec::new();
        let mut gt = GroundTruth::new();
        let best = |z: &[f64], slots: &[usize]| slots.iter().copied().reduce(|b, j| if z[j] > z[b] { j } else { b });
        for (i, &y) in leaves.iter().enumerate() {
            let z = self.logits(t, val.row(i))?;
            let k = argmax(&z[..nl]);
            let n = nl + argmax(&z[nl..]);
            let id = scored.len() as u64;
            scored.push(ScoredSample {
                id,
                known: (slot_prediction(t, k), z[k]),
                novel: Some((slot_prediction(t, n), z[n])),
            });
            gt.insert_known(id, y);
            for a in t.ancestors(y)? {
                if a == t.root() {
                    continue;
                }
                let (known_slots, novel_slots) = match stages.get(&a) {
                    Some(v) => v,
                    None => {
                        let entry = held_out_slots(t, a)?;
                        stages.entry(a).or_insert(entry)
                    }
                };
                let (Some(k), Some(n)) = (best(&z, known_slots), best(&z, novel_slots)) else { continue };
                let id = scored.len() as u64;
                scored.push(ScoredSample {
                    id,
                    known: (slot_prediction(t, k), z[k]),
                    novel: Some((slot_prediction(t, n), z[n])),
                });
                gt.insert_novel(id, t.parents(a).iter().copied());
            }
        }
        Ok((scored, gt))
    }
}

/// Leaf and novel slots that survive in `T \ a`.
fn held_out_slots(t: &Taxonomy, a: NodeId) -> Result<(Vec<usize>, Vec<usize>)> {
    let removed = t.leaves_under(a);
    let leaves = t
        .leaf_order()
        .iter()
        .filter(|l| removed.binary_search(l).is_err())
        .map(|&l| leaf_slot(t, l) as usize)
        .collect();
    let mut supers = Vec::new();
    for &s in t.super_order() {
        if !t.is_ancestor(a, s)? {
            supers.push(novel_slot(t, s) as usize);
        }
    }
    Ok((leaves, supers))
}

pub fn predict_flatten(m: &FlattenModel, t: &Taxonomy, x: &[f64], novel_bias: f64) -> Result<Prediction> {
    m.predict(t, x, novel_bias)
}

pub fn train_relabel(t: &Taxonomy, data: &FeatureSet, cfg: &FlattenConfig) -> Result<(FlattenModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let leaves = leaf_labels(t, data)?;
    let mut loss = RelabelLoss::new(t, leaves, cfg.relabel.clone(), cfg.class_weighting)?;
    let head = LinearHead::zeros(flat_slots(t), data.dim());
    let (head, report) = train_head(head, data.features(), &mut loss, &cfg.sgd)?;
    Ok((FlattenModel { head, method: FlattenMethod::Relabel, td: None, class_weighting: cfg.class_weighting }, report))
}

pub fn train_loo(t: &Taxonomy, data: &FeatureSet, cfg: &FlattenConfig) -> Result<(FlattenModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let leaves = leaf_labels(t, data)?;
    let mut spec = loo_loss_spec(t, &leaves, cfg.into())?;
    let head = LinearHead::zeros(flat_slots(t), data.dim());
    let (head, report) = train_head(head, data.features(), &mut spec, &cfg.sgd)?;
    Ok((FlattenModel { head, method: FlattenMethod::Loo, td: None, class_weighting: cfg.class_weighting }, report))
}

pub fn train_tdloo(
    t: &Taxonomy,
    data: &FeatureSet,
    td: &TopDownModel,
    cfg: &FlattenConfig,
) -> Result<(FlattenModel, TrainReport)> {
    if !td.matches(t) {
        return Err(Error::TaxonomyMismatch);
    }
    let mapped = transform_features(td, t, data)?;
    let (mut m, report) = train_loo(t, &mapped, cfg)?;
    m.td = Some(td.clone());
    Ok((m, report))
}
