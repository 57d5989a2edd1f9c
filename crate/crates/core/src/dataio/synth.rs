//! Synthetic hierarchical benchmark: a balanced taxonomy whose class means are
//! drawn by a Gaussian random walk down the tree, isotropic Gaussian samples
//! around each leaf mean, and a set of held-out leaves attached under known
//! super classes. Because the generating model is known, the Bayes posterior
//! over all leaves is available as a reference detector.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Prediction, ScoredSample};
use crate::flatten::{ClassWeighting, FlattenConfig};
use crate::numcore::log_sum_exp;
use crate::taxonomy::{EdgeRow, NodeId, Taxonomy};
use crate::topdown::{FeaturePostprocess, TopDownConfig};

/// Where held-out leaves attach.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NovelPlacement {
    /// Under the bottom-level super classes, as siblings of known leaves.
    #[default]
    LeafParents,
    /// Under every super class including the root.
    AllSupers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Children per node at each level; the last level holds the leaves.
    pub branching: Vec<usize>,
    /// Held-out leaves, attached round-robin under the parents chosen by
    /// `placement`.
    pub novel_leaves: usize,
    pub placement: NovelPlacement,
    /// Per-dimension standard deviation of a child's mean around its parent's.
    pub sigma_level: f64,
    /// Per-dimension standard deviation of samples around their class mean.
    pub sigma_within: f64,
    pub dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            branching: vec![3, 3],
            novel_leaves: 6,
            placement: NovelPlacement::LeafParents,
            sigma_level: 4.0,
            sigma_within: 1.0,
            dim: 16,
            train_per_class: 60,
            val_per_class: 20,
            test_per_class: 40,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateSpec(m.into()));
        if self.branching.is_empty() || self.branching.iter().any(|&b| b < 2) {
            return bad("every level needs a branching factor of at least 2");
        }
        if self.dim == 0 {
            return bad("feature dimension must be positive");
        }
        if !(self.sigma_within > 0.0 && self.sigma_within.is_finite()) {
            return bad("sigma_within must be positive and finite");
        }
        if !(self.sigma_level >= 0.0 && self.sigma_level.is_finite()) {
            return bad("sigma_level must be non-negative and finite");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("train and test splits need samples for every class");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub spec: SynthSpec,
    /// Known classes plus held-out leaves.
    pub full: Taxonomy,
    /// Known classes only.
    pub known: Taxonomy,
    /// `(novel leaf key, parent key)`.
    pub novel: Vec<(u64, u64)>,
    /// Leaf key to class mean, for known and held-out leaves.
    pub means: BTreeMap<u64, Vec<f64>>,
    pub train: FeatureSet,
    pub val: FeatureSet,
    /// Known and held-out classes.
    pub test: FeatureSet,
    /// Ground truth for `test` against `known`.
    pub test_truth: GroundTruth,
}

impl SyntheticBenchmark {
    /// Edge list of `full`, with held-out leaves flagged unseen.
    pub fn edge_rows(&self) -> Vec<EdgeRow> {
        let novel: BTreeMap<u64, u64> = self.novel.iter().copied().collect();
        let mut rows: Vec<EdgeRow> = self
            .full
            .edge_keys()
            .into_iter()
            .map(|(child, parent)| EdgeRow { child, parent, unseen: novel.contains_key(&child) })
            .collect();
        rows.sort_by_key(|r| (r.child, r.parent));
        rows
    }

    pub fn edges_tsv(&self) -> String {
        self.edge_rows()
            .iter()
            .map(|r| format!("{}\t{}{}\n", r.child, r.parent, if r.unseen { "\tU" } else { "" }))
            .collect()
    }

    pub fn names_tsv(&self) -> String {
        self.full.nodes().iter().map(|r| format!("{}\t{}\n", r.key, r.name)).collect()
    }
}

/// Seen/unseen split for zero-shot evaluation: held-out leaves are the
/// unseen classes, and the test samples are halved into validation and test.
#[derive(Clone, Debug, PartialEq)]
pub struct GzslSplit {
    pub seen: Vec<u64>,
    pub unseen: BTreeSet<u64>,
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
}

impl SyntheticBenchmark {
    pub fn gzsl_split(&self) -> GzslSplit {
        let unseen: BTreeSet<u64> = self.novel.iter().map(|n| n.0).collect();
        let seen = self.known.leaf_order().iter().map(|&l| self.known.key(l)).collect();
        let ids = self.test.ids();
        GzslSplit {
            seen,
            unseen,
            train: self.train.clone(),
            val: self.test.filter(|i| ids[i].is_multiple_of(2)),
            test: self.test.filter(|i| !ids[i].is_multiple_of(2)),
        }
    }
}

/// Training settings for the synthetic benchmark, selected on generator
/// seeds 1 to 3 (seed 7, the default, was not used for selection).
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfigs {
    pub topdown: TopDownConfig,
    pub loo: FlattenConfig,
    /// As `loo` with a larger step: the top-down features are small, and at
    /// the `loo` rate the objective barely moves in 50 epochs.
    pub tdloo: FlattenConfig,
}

pub fn benchmark_configs() -> BenchmarkConfigs {
    let topdown = TopDownConfig { postprocess: FeaturePostprocess::LogSoftmaxThenRelu, ..TopDownConfig::default() };
    let loo = FlattenConfig {
        class_weighting: ClassWeighting::DescendantCount,
        held_out_ratio: 0.01,
        ..FlattenConfig::default()
    };
    let mut tdloo = loo.clone();
    tdloo.sgd.learning_rate = 0.1;
    BenchmarkConfigs { topdown, loo, tdloo }
}

fn gaussian(rng: &mut ChaCha8Rng, center: &[f64], scale: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + scale * z
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names = BTreeMap::from([(0u64, "root".to_string())]);
    let mut node_means = BTreeMap::from([(0u64, vec![0.0; spec.dim])]);
    let mut edges = Vec::new();
    let mut supers = Vec::new();
    let mut frontier = vec![0u64];
    let mut next = 1u64;
    for &b in &spec.branching {
        match spec.placement {
            NovelPlacement::AllSupers => supers.extend(frontier.iter().copied()),
            NovelPlacement::LeafParents => supers = frontier.clone(),
        }
        let mut new_frontier = Vec::new();
        for &parent in &frontier {
            for i in 0..b {
                let key = next;
                next += 1;
                names.insert(key, format!("{}.{}", names[&parent], i));
                let mean = gaussian(&mut rng, &node_means[&parent], spec.sigma_level);
                node_means.insert(key, mean);
                edges.push((key, parent));
                new_frontier.push(key);
            }
        }
        frontier = new_frontier;
    }
    let known_leaves = frontier;

    let mut novel = Vec::new();
    for j in 0..spec.novel_leaves {
        let parent = supers[j % supers.len()];
        let key = next;
        next += 1;
        names.insert(key, format!("novel{j}@{}", names[&parent]));
        let mean = gaussian(&mut rng, &node_means[&parent], spec.sigma_level);
        node_means.insert(key, mean);
        edges.push((key, parent));
        novel.push((key, parent));
    }

    let full = Taxonomy::from_edges(&edges, &names)?;
    let keep: Vec<NodeId> =
        full.nodes().iter().filter(|r| !novel.iter().any(|&(k, _)| k == r.key)).map(|r| r.id).collect();
    let known = full.induced(&keep)?;

    let means: BTreeMap<u64, Vec<f64>> =
        known_leaves.iter().chain(novel.iter().map(|(k, _)| k)).map(|k| (*k, node_means[k].clone())).collect();

    let mut id = 0u64;
    let mut split = |classes: &[u64], per_class: usize, rng: &mut ChaCha8Rng| -> Result<FeatureSet> {
        let mut set = FeatureSet::new(spec.dim);
        for &c in classes {
            for _ in 0..per_class {
                set.push(id, c, &gaussian(rng, &means[&c], spec.sigma_within))?;
                id += 1;
            }
        }
        Ok(set)
    };
    let train = split(&known_leaves, spec.train_per_class, &mut rng)?;
    let val = split(&known_leaves, spec.val_per_class, &mut rng)?;
    let all: Vec<u64> = means.keys().copied().collect();
    let test = split(&all, spec.test_per_class, &mut rng)?;

    let parent_of: BTreeMap<u64, u64> = novel.iter().copied().collect();
    let mut test_truth = GroundTruth::new();
    for (&sid, &label) in test.ids().iter().zip(test.labels()) {
        match parent_of.get(&label) {
            Some(p) => test_truth.insert_novel(sid, [known.resolve_key(*p).expect("parent is known")]),
            None => test_truth.insert_known(sid, known.resolve_key(label).expect("leaf is known")),
        }
    }

    Ok(SyntheticBenchmark { spec: spec.clone(), full, known, novel, means, train, val, test, test_truth })
}

/// Posterior over every leaf (known and held-out) under a uniform class
/// prior, in the key order of `bench.means`.
pub fn bayes_posterior(bench: &SyntheticBenchmark, x: &[f64]) -> Vec<(u64, f64)> {
    let s2 = 2.0 * bench.spec.sigma_within * bench.spec.sigma_within;
    let log_lik: Vec<(u64, f64)> = bench
        .means
        .iter()
        .map(|(&k, m)| (k, -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2))
        .collect();
    let z = log_sum_exp(log_lik.iter().map(|p| p.1));
    log_lik.into_iter().map(|(k, l)| (k, (l - z).exp())).collect()
}

/// Bayes detector scores for every test sample: the best known leaf by log
/// posterior against the super class with the largest total log posterior
/// of held-out leaves.
pub fn bayes_oracle_scores(bench: &SyntheticBenchmark) -> Vec<ScoredSample> {
    let t = &bench.known;
    let parent_of: BTreeMap<u64, u64> = bench.novel.iter().copied().collect();
    (0..bench.test.len())
        .map(|i| {
            let post = bayes_posterior(bench, bench.test.row(i));
            let mut known = (Prediction::Leaf(NodeId(0)), f64::NEG_INFINITY);
            let mut novel_mass: BTreeMap<u64, f64> = BTreeMap::new();
            for (k, p) in post {
                let lp = p.max(f64::MIN_POSITIVE).ln();
                match parent_of.get(&k) {
                    Some(parent) => *novel_mass.entry(*parent).or_default() += p,
                    None if lp > known.1 => known = (Prediction::Leaf(t.resolve_key(k).expect("known leaf")), lp),
                    None => {}
                }
            }
            let novel = novel_mass
                .into_iter()
                .map(|(parent, m)| {
                    (Prediction::Novel(t.resolve_key(parent).expect("known super")), m.max(f64::MIN_POSITIVE).ln())
                })
                .fold(None, |best: Option<(Prediction, f64)>, c| match best {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                });
            ScoredSample { id: bench.test.ids()[i], known, novel }
        })
        .collect()
}
