//! Hierarchical class embeddings for generalized zero-shot learning.
//!
//! The TD embedding of a class is the concatenation, over super classes, of
//! the output a perfect top-down classifier would produce for it. The Path
//! embedding is the vector of undirected shortest-path distances to every
//! node. A small two-layer network maps embeddings into visual feature space,
//! samples are scored by negative squared distance to each mapped class, and
//! several embeddings are combined by a weighted sum of scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::{gap_breakpoints, AccuracyCurve, CurvePoint};
use crate::numcore::{argmax, Matrix};
use crate::taxonomy::{NodeId, Taxonomy};

/// Per-class embedding vectors keyed by class key, in ascending key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub classes: Vec<u64>,
    pub vectors: Matrix,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn get(&self, class: u64) -> Option<&[f64]> {
        self.classes.binary_search(&class).ok().map(|i| self.vectors.row(i))
    }

    /// Rows for `classes`, in that order.
    pub fn select(&self, classes: &[u64]) -> Result<EmbeddingTable> {
        let mut out = Matrix::zeros(0, self.dim());
        for &c in classes {
            out.push_row(self.get(c).ok_or_else(|| Error::Misalignment(format!("class {c} has no embedding")))?)?;
        }
        Ok(EmbeddingTable { classes: classes.to_vec(), vectors: out })
    }

    /// `class_id,v0,...,vD` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id");
        for i in 0..self.dim() {
            write!(out, ",v{i}").unwrap();
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(self.vectors.iter_rows()) {
            write!(out, "{c}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv<R: Read>(r: R) -> Result<EmbeddingTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::Parse { line: 1, msg: "header needs class_id and at least one value column".into() });
        }
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |msg: String| Error::Parse { line, msg };
            if rec.len() != width {
                return Err(bad(format!("expected {width} fields, found {}", rec.len())));
            }
            let class: u64 = rec[0].parse().map_err(|_| bad(format!("bad class id {:?}", &rec[0])))?;
            let v = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad value {f:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if rows.insert(class, v).is_some() {
                return Err(bad(format!("duplicate class {class}")));
            }
        }
        let classes: Vec<u64> = rows.keys().copied().collect();
        let vectors = Matrix::from_rows(width - 1, &rows.into_values().collect::<Vec<_>>())?;
        Ok(EmbeddingTable { classes, vectors })
    }
}

/// Exact TD embedding vectors for every node of a taxonomy.
#[derive(Clone, Debug, PartialEq)]
pub struct TdEmbedding {
    /// Node keys in ascending order.
    pub classes: Vec<u64>,
    pub vectors: Vec<Vec<Rational64>>,
    /// Sizes of the per-super blocks, in super order.
    pub blocks: Vec<usize>,
}

impl TdEmbedding {
    pub fn vector(&self, class: u64) -> Option<&[Rational64]> {
        self.classes.binary_search(&class).ok().map(|i| self.vectors[i].as_slice())
    }

    pub fn to_table(&self) -> EmbeddingTable {
        let dim = self.blocks.iter().sum();
        let data = self.vectors.iter().flatten().map(|r| *r.numer() as f64 / *r.denom() as f64).collect();
        EmbeddingTable { classes: self.classes.clone(), vectors: Matrix::from_vec(self.classes.len(), dim, data) }
    }
}

/// Builds TD embeddings on `full`, a taxonomy in which the unseen classes
/// (`unseen` keys) are attached as extra leaves. Blocks range over the known
/// children of each known super class. A block is one-hot on the child the
/// class lies under, and uniform when the class is the super class itself,
/// an unseen class, or not under the super class at all.
pub fn build_td_embedding(full: &Taxonomy, unseen: &BTreeSet<u64>) -> Result<TdEmbedding> {
    let mut is_unseen = vec![false; full.len()];
    for &k in unseen {
        let n = full.resolve_key(k).ok_or(Error::UnattachedClass(k))?;
        if !full.is_leaf(n) || full.parents(n).is_empty() {
            return Err(Error::UnattachedClass(k));
        }
        is_unseen[n.index()] = true;
    }
    let blocks: Vec<(NodeId, Vec<NodeId>)> = full
        .super_order()
        .iter()
        .map(|&s| (s, full.children(s).iter().copied().filter(|c| !is_unseen[c.index()]).collect::<Vec<_>>()))
        .filter(|(_, kids)| !kids.is_empty())
        .collect();
    let mut order: Vec<NodeId> = full.nodes().iter().map(|r| r.id).collect();
    order.sort_by_key(|&n| full.key(n));
    let mut vectors = Vec::with_capacity(order.len());
    for &y in &order {
        let anc = full.ancestors(y)?;
        let mut v = Vec::new();
        for (_, kids) in &blocks {
            let k = kids.len() as i64;
            match kids.iter().position(|c| anc.contains(c)) {
                Some(i) => v.extend((0..kids.len()).map(|j| Rational64::from_integer((i == j) as i64))),
                None => v.extend(std::iter::repeat_n(Rational64::new(1, k), kids.len())),
            }
        }
        vectors.push(v);
    }
    Ok(TdEmbedding {
        classes: order.iter().map(|&n| full.key(n)).collect(),
        vectors,
        blocks: blocks.iter().map(|(_, k)| k.len()).collect(),
    })
}

/// Shortest undirected path lengths from every node to every node, rows and
/// columns in ascending key order.
pub fn build_path_embedding(t: &Taxonomy) -> Result<EmbeddingTable> {
    let mut order: Vec<NodeId> = t.nodes().iter().map(|r| r.id).collect();
    order.sort_by_key(|&n| t.key(n));
    let mut data = Vec::with_capacity(order.len() * order.len());
    for &u in &order {
        let dist = t.distances_from(u);
        for &v in &order {
            data.push(dist[v.index()].ok_or(Error::DisconnectedNode(t.key(v)))? as f64);
        }
    }
    Ok(EmbeddingTable {
        classes: order.iter().map(|&n| t.key(n)).collect(),
        vectors: Matrix::from_vec(order.len(), order.len(), data),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticMapConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SemanticMapConfig {
    fn default() -> Self {
        SemanticMapConfig { hidden: 64, learning_rate: 1e-3, epochs: 5000, weight_decay: 1e-4, seed: 0 }
    }
}

/// `W2 relu(W1 e + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl SemanticMap {
    /// Uniform Glorot initialization.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect())
        };
        let w1 = fill(hidden, input);
        let w2 = fill(output, hidden);
        SemanticMap { w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; output] }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    fn hidden(&self, e: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.w1.rows()];
        self.w1.matvec(e, &mut h);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).max(0.0);
        }
        h
    }

    pub fn forward(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.w1.cols() {
            return Err(Error::DimensionMismatch { expected: self.w1.cols(), actual: e.len() });
        }
        let h = self.hidden(e);
        let mut out = vec![0.0; self.w2.rows()];
        self.w2.matvec(&h, &mut out);
        for (v, b) in out.iter_mut().zip(&self.b2) {
            *v += b;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.as_slice().to_vec();
        p.extend(&self.b1);
        p.extend(self.w2.as_slice());
        p.extend(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let (a, rest) = p.split_at(self.w1.as_slice().len());
        self.w1.as_mut_slice().copy_from_slice(a);
        let (b, rest) = rest.split_at(self.b1.len());
        self.b1.copy_from_slice(b);
        let (c, d) = rest.split_at(self.w2.as_slice().len());
        self.w2.as_mut_slice().copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    /// Mean squared distance `(1/n) Σ ||map(e_i) - v_i||²` and its gradient
    /// in [`Self::params`] order.
    pub fn loss_and_grad(&self, emb: &Matrix, targets: &Matrix) -> Result<(f64, Vec<f64>)> {
        if emb.rows() != targets.rows() || emb.rows() == 0 {
            return Err(Error::Misalignment(format!("{} embeddings vs {} targets", emb.rows(), targets.rows())));
        }
        if targets.cols() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), actual: targets.cols() });
        }
        let (hd, od) = (self.w1.rows(), self.w2.rows());
        let n = emb.rows() as f64;
        let mut gw1 = vec![0.0; self.w1.as_slice().len()];
        let mut gb1 = vec![0.0; hd];
        let mut gw2 = vec![0.0; self.w2.as_slice().len()];
        let mut gb2 = vec![0.0; od];
        let mut loss = 0.0;
        for (e, v) in emb.iter_rows().zip(targets.iter_rows()) {
            let h = self.hidden(e);
            let out = self.forward(e)?;
            let r: Vec<f64> = out.iter().zip(v).map(|(o, t)| o - t).collect();
            loss += r.iter().map(|x| x * x).sum::<f64>() / n;
            let d_out: Vec<f64> = r.iter().map(|x| 2.0 * x / n).collect();
            let mut d_h = vec![0.0; hd];
            for o in 0..od {
                gb2[o] += d_out[o];
                for j in 0..hd {
                    gw2[o * hd + j] += d_out[o] * h[j];
                    d_h[j] += d_out[o] * self.w2.row(o)[j];
                }
            }
            for j in 0..hd {
                if h[j] <= 0.0 {
                    continue;
                }
                gb1[j] += d_h[j];
                for (k, &ek) in e.iter().enumerate() {
                    gw1[j * e.len() + k] += d_h[j] * ek;
                }
            }
        }
        let mut g = gw1;
        g.extend(gb1);
        g.extend(gw2);
        g.extend(gb2);
        Ok((loss, g))
    }
}

/// Fits a map from class embeddings to class-mean visual features with
/// full-batch gradient descent.
pub fn train_semantic_map(emb: &Matrix, targets: &Matrix, cfg: &SemanticMapConfig) -> Result<SemanticMap> {
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0 && cfg.hidden > 0) {
        return Err(Error::InvalidConfig(format!("semantic map: lr {} hidden {}", cfg.learning_rate, cfg.hidden)));
    }
    let mut map = SemanticMap::init(emb.cols(), cfg.hidden, targets.cols(), cfg.seed);
    let mut p = map.params();
    for epoch in 0..cfg.epochs {
        let (loss, g) = map.loss_and_grad(emb, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        for (w, gi) in p.iter_mut().zip(&g) {
            *w -= cfg.learning_rate * (gi + cfg.weight_decay * *w);
        }
        map.set_params(&p);
    }
    Ok(map)
}

/// Mean feature vector of each class in `classes`.
pub fn class_means(data: &FeatureSet, classes: &[u64]) -> Result<Matrix> {
    let index: BTreeMap<u64, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut sums = Matrix::zeros(classes.len(), data.dim());
    let mut counts = vec![0usize; classes.len()];
    for (i, label) in data.labels().iter().enumerate() {
        if let Some(&c) = index.get(label) {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(classes[c]));
        }
        for s in sums.row_mut(c) {
            *s /= n as f64;
        }
    }
    Ok(sums)
}

/// Scores of every sample (rows) against every class (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub classes: Vec<u64>,
    pub scores: Matrix,
}

/// `-||map(e_c) - x||²` for every sample `x` and class `c` of `emb`.
pub fn score_samples(map: &SemanticMap, emb: &EmbeddingTable, data: &FeatureSet) -> Result<ScoreTable> {
    let protos = emb.vectors.iter_rows().map(|e| map.forward(e)).collect::<Result<Vec<_>>>()?;
    if data.dim() != map.output_dim() {
        return Err(Error::DimensionMismatch { expected: map.output_dim(), actual: data.dim() });
    }
    let mut scores = Matrix::zeros(data.len(), protos.len());
    for i in 0..data.len() {
        let x = data.row(i);
        for (c, p) in protos.iter().enumerate() {
            scores.row_mut(i)[c] = -p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(ScoreTable { classes: emb.classes.clone(), scores })
}

/// Trains a semantic map from the `seen` rows of `emb` to the seen class
/// means of `train`, then scores `data` against every class in `classes`.
pub fn fit_and_score(
    emb: &EmbeddingTable,
    train: &FeatureSet,
    seen: &[u64],
    classes: &[u64],
    data: &FeatureSet,
    cfg: &SemanticMapConfig,
) -> Result<ScoreTable> {
    let targets = class_means(train, seen)?;
    let map = train_semantic_map(&emb.select(seen)?.vectors, &targets, cfg)?;
    score_samples(&map, &emb.select(classes)?, data)
}

fn check_aligned(tables: &[ScoreTable], weights: &[f64]) -> Result<()> {
    let first = tables.first().ok_or_else(|| Error::Misalignment("no score tables".into()))?;
    if tables.len() != weights.len() {
        return Err(Error::Misalignment(format!("{} tables, {} weights", tables.len(), weights.len())));
    }
    for t in tables {
        if t.classes != first.classes || t.scores.rows() != first.scores.rows() {
            return Err(Error::Misalignment("score tables cover different classes or samples".into()));
        }
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("weights must be non-negative and sum to 1, got {weights:?}")));
    }
    Ok(())
}

/// `Σ_i w_i score_i` per sample and class.
pub fn weighted_scores(tables: &[ScoreTable], weights: &[f64]) -> Result<Matrix> {
    check_aligned(tables, weights)?;
    let mut out = Matrix::zeros(tables[0].scores.rows(), tables[0].classes.len());
    for (t, &w) in tables.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, s) in out.as_mut_slice().iter_mut().zip(t.scores.as_slice()) {
            *o += w * s;
        }
    }
    Ok(out)
}

/// Predicted class per sample: argmax of the weighted score sum with
/// `unseen_bias` added to the unseen classes.
pub fn combine_scores(
    tables: &[ScoreTable],
    weights: &[f64],
    unseen: &BTreeSet<u64>,
    unseen_bias: f64,
) -> Result<Vec<u64>> {
    let combined = weighted_scores(tables, weights)?;
    let classes = &tables[0].classes;
    let mut row = vec![0.0; classes.len()];
    Ok(combined
        .iter_rows()
        .map(|r| {
            for ((o, s), c) in row.iter_mut().zip(r).zip(classes) {
                *o = if unseen.contains(c) { s + unseen_bias } else { *s };
            }
            classes[argmax(&row)]
        })
        .collect())
}

/// Mean over classes of per-class accuracy, for the classes in `group`.
pub fn class_wise_accuracy(preds: &[u64], labels: &[u64], group: &BTreeSet<u64>) -> Result<f64> {
    let mut per: BTreeMap<u64, (usize, usize)> = group.iter().map(|&c| (c, (0, 0))).collect();
    for (p, l) in preds.iter().zip(labels) {
        if let Some(e) = per.get_mut(l) {
            e.1 += 1;
            e.0 += (p == l) as usize;
        }
    }
    if let Some((&c, _)) = per.iter().find(|(_, e)| e.1 == 0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(per.values().map(|&(ok, n)| ok as f64 / n as f64).sum::<f64>() / per.len().max(1) as f64)
}

/// Fraction of samples whose label is in `group` that are predicted correctly.
pub fn sample_wise_accuracy(preds: &[u64], labels: &[u64], group: &BTreeSet<u64>) -> f64 {
    let (ok, n) = preds
        .iter()
        .zip(labels)
        .filter(|(_, l)| group.contains(l))
        .fold((0, 0), |(ok, n), (p, l)| (ok + (p == l) as usize, n + 1));
    ok as f64 / n.max(1) as f64
}

/// Seen-unseen accuracy curve over the unseen bias, using class-wise
/// accuracies. Every class of the tables needs at least one sample.
pub fn seen_unseen_curve(
    tables: &[ScoreTable],
    weights: &[f64],
    labels: &[u64],
    unseen: &BTreeSet<u64>,
) -> Result<AccuracyCurve> {
    let combined = weighted_scores(tables, weights)?;
    if labels.len() != combined.rows() {
        return Err(Error::Misalignment(format!("{} labels for {} samples", labels.len(), combined.rows())));
    }
    let classes = &tables[0].classes;
    let seen: BTreeSet<u64> = classes.iter().copied().filter(|c| !unseen.contains(c)).collect();
    let unseen_here: BTreeSet<u64> = classes.iter().copied().filter(|c| unseen.contains(c)).collect();
    let best = |r: &[f64], group: &BTreeSet<u64>| {
        classes.iter().zip(r).filter(|(c, _)| group.contains(c)).fold(None, |b: Option<(u64, f64)>, (&c, &s)| match b {
            Some(b) if b.1 >= s => Some(b),
            _ => Some((c, s)),
        })
    };
    let pairs: Vec<_> = combined.iter_rows().map(|r| (best(r, &seen), best(r, &unseen_here))).collect();
    let gaps = pairs.iter().filter_map(|(s, u)| Some(s.as_ref()?.1 - u.as_ref()?.1)).collect();
    let points = gap_breakpoints(gaps)
        .into_iter()
        .map(|bias| {
            let preds: Vec<u64> = pairs
                .iter()
                .map(|(s, u)| match (s, u) {
                    (Some(s), Some(u)) if u.1 + bias > s.1 => u.0,
                    (Some(s), _) => s.0,
                    (None, Some(u)) => u.0,
                    (None, None) => unreachable!("tables have at least one class"),
                })
                .collect();
            Ok(CurvePoint {
                bias,
                known_acc: class_wise_accuracy(&preds, labels, &seen)?,
                novel_acc: class_wise_accuracy(&preds, labels, &unseen_here)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyCurve::from_points(points))
}

/// Every weight vector over `m` models whose entries are multiples of
/// `1/steps` and sum to one, corners included.
pub fn simplex_grid(m: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == m {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(m, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

/// Best weights on a simplex grid with step 0.1 by seen-unseen AUC; the
/// first grid point wins ties.
pub fn search_weights(tables: &[ScoreTable], labels: &[u64], unseen: &BTreeSet<u64>) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for w in simplex_grid(tables.len(), 10) {
        let auc = seen_unseen_curve(tables, &w, labels, unseen)?.auc;
        if best.as_ref().is_none_or(|b| auc > b.1) {
            best = Some((w, auc));
        }
    }
    best.ok_or_else(|| Error::Misalignment("no score tables".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::toy_embedding_taxonomy;
    use crate::numcore::finite_diff_grad;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn td_embedding_worked_vectors() {
        let t = toy_embedding_taxonomy();
        let e = build_td_embedding(&t, &BTreeSet::new()).unwrap();
        assert_eq!(e.blocks, vec![2, 2, 3]);
        let h = r(1, 2);
        let th = r(1, 3);
        let one = r(1, 1);
        let zero = r(0, 1);
        let key = |name: &str| t.key(t.find_by_name(name).unwrap());
        assert_eq!(e.vector(key("r")).unwrap(), &[h, h, h, h, th, th, th]);
        assert_eq!(e.vector(key("c11")).unwrap(), &[one, zero, one, zero, th, th, th]);
        assert_eq!(e.vector(key("c21")).unwrap(), &[zero, one, h, h, one, zero, zero]);
    }

    #[test]
    fn unseen_classes_share_their_parents_vector() {
        // c1 gets an unseen leaf u1, c2 gets u2 and u3
        let mut edges = toy_embedding_taxonomy().edge_keys();
        edges.extend([(8, 1), (9, 2), (10, 2)]);
        let t = Taxonomy::from_edges(&edges, &Default::default()).unwrap();
        let unseen = BTreeSet::from([8, 9, 10]);
        let e = build_td_embedding(&t, &unseen).unwrap();
        assert_eq!(e.blocks, vec![2, 2, 3]);
        assert_eq!(e.vector(9), e.vector(10));
        assert_eq!(e.vector(9), e.vector(2));
        assert_eq!(e.vector(8), e.vector(1));
        for v in &e.vectors {
            let mut off = 0;
            for &b in &e.blocks {
                let block = &v[off..off + b];
                assert_eq!(block.iter().sum::<Rational64>(), r(1, 1));
                let uniform = block.iter().all(|x| *x == r(1, b as i64));
                let onehot = block.iter().filter(|x| **x == r(1, 1)).count() == 1
                    && block.iter().filter(|x| **x == r(0, 1)).count() == b - 1;
                assert!(uniform || onehot);
                off += b;
            }
        }
        assert!(matches!(build_td_embedding(&t, &BTreeSet::from([42])), Err(Error::UnattachedClass(42))));
        assert!(matches!(build_td_embedding(&t, &BTreeSet::from([1])), Err(Error::UnattachedClass(1))));
    }

    #[test]
    fn path_embedding_is_a_metric() {
        let t = toy_embedding_taxonomy();
        let e = build_path_embedding(&t).unwrap();
        let n = e.classes.len();
        let key = |name: &str| t.key(t.find_by_name(name).unwrap());
        let col = e.classes.binary_search(&key("c21")).unwrap();
        assert_eq!(e.get(key("c11")).unwrap()[col], 4.0);
        for i in 0..n {
            assert_eq!(e.vectors.row(i)[i], 0.0);
            for j in 0..n {
                assert_eq!(e.vectors.row(i)[j], e.vectors.row(j)[i]);
                for k in 0..n {
                    assert!(e.vectors.row(i)[k] <= e.vectors.row(i)[j] + e.vectors.row(j)[k]);
                }
            }
        }
    }

    #[test]
    fn embedding_csv_round_trip() {
        let t = toy_embedding_taxonomy();
        let e = build_td_embedding(&t, &BTreeSet::new()).unwrap().to_table();
        let back = EmbeddingTable::read_csv(e.to_csv().as_bytes()).unwrap();
        assert_eq!(back, e);
        assert!(e.to_csv().starts_with("class_id,v0,v1,"));
        assert!(EmbeddingTable::read_csv("class_id,v0\n1,2\n1,3\n".as_bytes()).is_err());
    }

    #[test]
    fn semantic_map_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_matrix =
            |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let emb = rand_matrix(5, 4);
        let targets = rand_matrix(5, 3);
        let map = SemanticMap::init(4, 6, 3, 1);
        let (_, g) = map.loss_and_grad(&emb, &targets).unwrap();
        let f = |p: &[f64]| {
            let mut m = map.clone();
            m.set_params(p);
            m.loss_and_grad(&emb, &targets).unwrap().0
        };
        let num = finite_diff_grad(f, &map.params(), 1e-6);
        for (a, n) in g.iter().zip(&num) {
            assert!(crate::numcore::relative_error(*a, *n) < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn semantic_map_training() {
        let emb = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let targets = Matrix::from_rows(2, &[[2.0, -1.0], [0.5, 3.0], [2.5, 2.0]]).unwrap();
        let cfg = SemanticMapConfig { hidden: 8, epochs: 0, ..Default::default() };
        let init = train_semantic_map(&emb, &targets, &cfg).unwrap();
        assert_eq!(init, SemanticMap::init(2, 8, 2, cfg.seed));
        let trained = train_semantic_map(&emb, &targets, &SemanticMapConfig { epochs: 3000, ..cfg }).unwrap();
        let before = init.loss_and_grad(&emb, &targets).unwrap().0;
        let after = trained.loss_and_grad(&emb, &targets).unwrap().0;
        assert!(after < 0.01 * before, "{before} -> {after}");
    }

    fn table(classes: &[u64], rows: &[&[f64]]) -> ScoreTable {
        ScoreTable { classes: classes.to_vec(), scores: Matrix::from_rows(classes.len(), rows).unwrap() }
    }

    #[test]
    fn combination_rules() {
        let a = table(&[1, 2], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = table(&[1, 2], &[&[0.0, 2.0], &[3.0, 0.0]]);
        let none = BTreeSet::new();
        assert_eq!(combine_scores(&[a.clone(), b.clone()], &[1.0, 0.0], &none, 0.0).unwrap(), vec![1, 2]);
        assert_eq!(combine_scores(&[a.clone(), b.clone()], &[0.0, 1.0], &none, 0.0).unwrap(), vec![2, 1]);
        let tie = table(&[1, 2], &[&[1.0, 1.0]]);
        assert_eq!(combine_scores(std::slice::from_ref(&tie), &[1.0], &BTreeSet::from([2]), 1e-9).unwrap(), vec![2]);
        assert!(matches!(combine_scores(&[a.clone(), tie], &[0.5, 0.5], &none, 0.0), Err(Error::Misalignment(_))));
        assert!(combine_scores(&[a.clone(), b], &[0.7, 0.7], &none, 0.0).is_err());
    }

    #[test]
    fn class_wise_vs_sample_wise() {
        // 90 samples of class 1, 10 of class 2, everything predicted as 1
        let labels: Vec<u64> = std::iter::repeat_n(1, 90).chain(std::iter::repeat_n(2, 10)).collect();
        let preds = vec![1u64; 100];
        let both = BTreeSet::from([1, 2]);
        assert_eq!(sample_wise_accuracy(&preds, &labels, &both), 0.9);
        assert_eq!(class_wise_accuracy(&preds, &labels, &both).unwrap(), 0.5);
        assert!(matches!(class_wise_accuracy(&preds, &labels, &BTreeSet::from([3])), Err(Error::EmptyClass(3))));
    }

    #[test]
    fn perfect_scores_give_unit_auc() {
        let t = table(&[1, 2], &[&[0.0, -5.0], &[-5.0, 0.0]]);
        let c = seen_unseen_curve(&[t], &[1.0], &[1, 2], &BTreeSet::from([2])).unwrap();
        assert!((c.auc - 1.0).abs() < 1e-12);
        assert!(c.is_monotone());
    }

    #[test]
    fn simplex_grid_contents() {
        let g = simplex_grid(2, 10);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], vec![1.0, 0.0]);
        assert_eq!(g[10], vec![0.0, 1.0]);
        let g3 = simplex_grid(3, 10);
        assert_eq!(g3.len(), 66);
        assert!(g3.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        for corner in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            assert!(g3.iter().any(|w| w == &corner));
        }
    }
}
