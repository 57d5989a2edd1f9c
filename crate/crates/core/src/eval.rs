//! Known/novel accuracy, bias-swept accuracy curves and their AUC, and the
//! per-sample hierarchical distance and ancestor-flag reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

/// A hierarchical prediction: a known leaf, or the novel class under a super.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prediction {
    Leaf(NodeId),
    Novel(NodeId),
}

impl Prediction {
    pub fn node(self) -> NodeId {
        match self {
            Prediction::Leaf(n) | Prediction::Novel(n) => n,
        }
    }

    pub fn is_novel(self) -> bool {
        matches!(self, Prediction::Novel(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    Known(NodeId),
    /// Closest known super classes; more than one when the novel class has
    /// several paths into the taxonomy.
    Novel(BTreeSet<NodeId>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    entries: BTreeMap<u64, Truth>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_known(&mut self, sample: u64, leaf: NodeId) {
        self.entries.insert(sample, Truth::Known(leaf));
    }

    pub fn insert_novel(&mut self, sample: u64, supers: impl IntoIterator<Item = NodeId>) {
        let set: BTreeSet<NodeId> = supers.into_iter().collect();
        assert!(!set.is_empty(), "novel ground truth needs at least one super class");
        self.entries.insert(sample, Truth::Novel(set));
    }

    pub fn get(&self, sample: u64) -> Option<&Truth> {
        self.entries.get(&sample)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Truth)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Parses `sample_id<TAB>K|N<TAB>node_key[,node_key...]`.
    pub fn parse_tsv(text: &str, t: &Taxonomy) -> Result<GroundTruth> {
        let mut gt = GroundTruth::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim_end_matches('\r');
            if l.trim().is_empty() || l.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse { line, msg };
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected sample_id<TAB>K|N<TAB>node_ids".into()));
            }
            let id: u64 = f[0].trim().parse().map_err(|_| bad(format!("bad sample id {:?}", f[0])))?;
            let nodes = f[2]
                .split(',')
                .map(|k| {
                    let key: u64 = k.trim().parse().map_err(|_| bad(format!("bad node id {k:?}")))?;
                    t.resolve_key(key).ok_or(Error::DanglingReference(key))
                })
                .collect::<Result<Vec<_>>>()?;
            match f[1].trim() {
                "K" if nodes.len() == 1 => gt.insert_known(id, nodes[0]),
                "N" => gt.insert_novel(id, nodes),
                other => return Err(bad(format!("bad kind {other:?}"))),
            }
        }
        Ok(gt)
    }

    pub fn to_tsv(&self, t: &Taxonomy) -> String {
        let mut out = String::new();
        for (id, truth) in &self.entries {
            match truth {
                Truth::Known(l) => writeln!(out, "{id}\tK\t{}", t.key(*l)),
                Truth::Novel(s) => {
                    let keys: Vec<String> = s.iter().map(|n| t.key(*n).to_string()).collect();
                    writeln!(out, "{id}\tN\t{}", keys.join(","))
                }
            }
            .unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: u64,
    pub known: bool,
    pub correct: bool,
    /// Undirected distance from the predicted node to the (nearest) GT node.
    pub epsilon: usize,
    /// Whether the predicted node is an ancestor of (or equal to) that GT node.
    pub ancestor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub known_acc: f64,
    pub novel_acc: f64,
    pub known_count: usize,
    pub novel_count: usize,
    pub samples: Vec<SampleScore>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Exact-match scoring: a known sample is correct iff its leaf is predicted,
/// a novel sample iff `N(s)` is predicted for one of its GT supers.
pub fn score_predictions(preds: &[(u64, Prediction)], gt: &GroundTruth, t: &Taxonomy) -> Result<ScoreReport> {
    let mut samples = Vec::with_capacity(preds.len());
    let (mut kc, mut kn, mut nc, mut nn) = (0, 0, 0, 0);
    let mut dist_cache: BTreeMap<NodeId, Vec<Option<usize>>> = BTreeMap::new();
    for &(id, pred) in preds {
        let truth = gt.get(id).ok_or(Error::MissingGroundTruth(id))?;
        t.check(pred.node())?;
        let dist = dist_cache.entry(pred.node()).or_insert_with(|| t.distances_from(pred.node()));
        let (known, correct, target) = match truth {
            Truth::Known(l) => (true, pred == Prediction::Leaf(*l), *l),
            Truth::Novel(supers) => {
                let correct = matches!(pred, Prediction::Novel(s) if supers.contains(&s));
                let nearest = *supers.iter().min_by_key(|s| (dist[s.index()], **s)).unwrap();
                (false, correct, nearest)
            }
        };
        if known {
            kn += 1;
            kc += correct as usize;
        } else {
            nn += 1;
            nc += correct as usize;
        }
        samples.push(SampleScore {
            id,
            known,
            correct,
            epsilon: dist[target.index()].expect("taxonomy is connected"),
            ancestor: t.is_ancestor(pred.node(), target)?,
        });
    }
    Ok(ScoreReport { known_acc: ratio(kc, kn), novel_acc: ratio(nc, nn), known_count: kn, novel_count: nn, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub known_acc: f64,
    pub novel_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

impl AccuracyCurve {
    pub fn from_points(mut points: Vec<CurvePoint>) -> Self {
        points.sort_by(|a, b| a.bias.total_cmp(&b.bias));
        let auc = curve_auc(points.iter().map(|p| (p.known_acc, p.novel_acc)));
        AccuracyCurve { points, auc }
    }

    /// `bias,known_acc,novel_acc` rows and a closing `AUC,<value>` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,known_acc,novel_acc\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.bias, p.known_acc, p.novel_acc).unwrap();
        }
        writeln!(out, "AUC,{}", self.auc).unwrap();
        out
    }

    /// True when known accuracy never increases and novel accuracy never
    /// decreases as the bias grows.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].known_acc <= w[0].known_acc && w[1].novel_acc >= w[0].novel_acc)
    }
}

/// Area under the novel-vs-known accuracy curve over the unit box.
///
/// The points are augmented with `(0, max novel)` and `(max known, 0)`,
/// sorted by known accuracy (ties by decreasing novel accuracy), and
/// integrated with the trapezoid rule.
pub fn curve_auc(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
    if pts.is_empty() {
        return 0.0;
    }
    let max_known = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_novel = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    pts.push((0.0, max_novel));
    pts.push((max_known, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5).sum()
}

/// Novel accuracy at a given known accuracy, linearly interpolated.
/// Where several points share a known accuracy the best novel accuracy counts.
pub fn novel_at_known(curve: &AccuracyCurve, target: f64) -> Result<f64> {
    let mut best: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for p in &curve.points {
        let e = best.entry(p.known_acc.to_bits()).or_insert((p.known_acc, p.novel_acc));
        e.1 = e.1.max(p.novel_acc);
    }
    let mut pts: Vec<(f64, f64)> = best.into_values().collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::TargetOutOfRange(target)),
    };
    if !(lo..=hi).contains(&target) {
        return Err(Error::TargetOutOfRange(target));
    }
    if let Some(p) = pts.iter().find(|p| p.0 == target) {
        return Ok(p.1);
    }
    let i = pts.partition_point(|p| p.0 < target);
    let (a, b) = (pts[i - 1], pts[i]);
    Ok(a.1 + (b.1 - a.1) * (target - a.0) / (b.0 - a.0))
}

/// Best known and best novel candidate of one sample under a novel-score
/// bias rule: the sample is predicted novel iff `novel.1 + bias > known.1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: u64,
    pub known: (Prediction, f64),
    pub novel: Option<(Prediction, f64)>,
}

impl ScoredSample {
    pub fn predict(&self, bias: f64) -> Prediction {
        match self.novel {
            Some((p, s)) if s + bias > self.known.1 => p,
            _ => self.known.0,
        }
    }

    /// Bias above which the sample flips to its novel candidate.
    pub fn gap(&self) -> Option<f64> {
        self.novel.map(|(_, s)| self.known.1 - s)
    }
}

/// Evaluates one curve point per bias.
pub fn sweep(scored: &[ScoredSample], gt: &GroundTruth, t: &Taxonomy, grid: &[f64]) -> Result<AccuracyCurve> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let points = grid
        .iter()
        .map(|&bias| {
            let preds: Vec<(u64, Prediction)> = scored.iter().map(|s| (s.id, s.predict(bias))).collect();
            let r = score_predictions(&preds, gt, t)?;
            Ok(CurvePoint { bias, known_acc: r.known_acc, novel_acc: r.novel_acc })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyCurve::from_points(points))
}

/// `n` evenly spaced biases over `[-d, d]`, where `d` is the 99th percentile
/// of `|known score - novel score|`.
pub fn default_bias_grid(scored: &[ScoredSample], n: usize) -> Vec<f64> {
    let mut gaps: Vec<f64> = scored.iter().filter_map(|s| s.gap()).map(f64::abs).collect();
    if gaps.is_empty() || n < 2 {
        return vec![0.0; n.max(1)];
    }
    gaps.sort_by(f64::total_cmp);
    let idx = ((gaps.len() - 1) as f64 * 0.99).round() as usize;
    let d = gaps[idx].max(1e-6);
    (0..n).map(|i| -d + 2.0 * d * i as f64 / (n - 1) as f64).collect()
}

/// Biases that realize every distinct prediction pattern: one below all
/// gaps, midpoints between consecutive distinct gaps, and one above.
pub fn breakpoint_grid(scored: &[ScoredSample]) -> Vec<f64> {
    gap_breakpoints(scored.iter().filter_map(|s| s.gap()).collect())
}

/// Breakpoint grid for raw decision gaps (a sample flips once the bias
/// exceeds its gap).
pub fn gap_breakpoints(mut gaps: Vec<f64>) -> Vec<f64> {
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    match (gaps.first(), gaps.last()) {
        (Some(&lo), Some(&hi)) => {
            let mut grid = vec![lo - 1.0];
            grid.extend(gaps.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            grid.push(hi + 1.0);
            grid
        }
        _ => vec![0.0],
    }
}
