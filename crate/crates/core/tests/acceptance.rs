//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p taxnov-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taxnov_core::dataio::save_binary;
use taxnov_core::dataio::synth::{bayes_oracle_scores, benchmark_configs, generate_synthetic, SynthSpec};
use taxnov_core::eval::{breakpoint_grid, curve_auc, novel_at_known, sweep};
use taxnov_core::fixtures::toy_embedding_taxonomy;
use taxnov_core::flatten::{
    flat_slots, leaf_slot, loo_loss, loo_loss_spec, loo_partial_distributions, novel_slot, train_loo, train_tdloo,
    ClassWeighting, LooNormalization, LooOptions, RelabelConfig, RelabelLoss,
};
use taxnov_core::gzsl::{
    build_path_embedding, build_td_embedding, class_wise_accuracy, fit_and_score, sample_wise_accuracy, search_weights,
    seen_unseen_curve, SemanticMapConfig,
};
use taxnov_core::numcore::{grad_check, softmax, ClassSlot, EpochLoss, LinearHead, Matrix};
use taxnov_core::topdown::{calibrate_thresholds, predict_topdown, select_threshold, topdown_loss, train_topdown};
use taxnov_core::{AccuracyCurve, NodeId, Taxonomy};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- helpers

fn taxonomy(edges: &[(u64, u64)]) -> Taxonomy {
    Taxonomy::from_edges(edges, &BTreeMap::new()).expect("generated edges are valid")
}

/// Random DAG on `n` nodes: node 0 is the root, node `i` picks one or two
/// parents among `0..i`.
fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(u64, u64)> {
    let mut edges = Vec::new();
    for i in 1..n {
        let mut ps = BTreeSet::from([rng.random_range(0..i)]);
        if i > 1 && rng.random_bool(0.3) {
            ps.insert(rng.random_range(0..i));
        }
        edges.extend(ps.into_iter().map(|p| (i as u64, p as u64)));
    }
    edges
}

fn random_head(rng: &mut ChaCha8Rng, slots: Vec<ClassSlot>, dim: usize, scale: f64) -> LinearHead {
    let mut h = LinearHead::zeros(slots, dim);
    for i in 0..h.param_count() {
        *h.param_mut(i) = rng.random_range(-scale..scale);
    }
    h
}

fn random_inputs(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    Matrix::from_rows(dim, &rows).expect("rows share a width")
}

/// Every parent array `p` on `n` nodes with `p[i] < i`: each rooted tree
/// with nodes labeled in a parent-before-child order.
fn parent_arrays(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![usize::MAX]];
    for i in 1..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..i).map(move |q| {
                    let mut p = p.clone();
                    p.push(q);
                    p
                })
            })
            .collect();
    }
    out
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// LOO loss computed by materializing each `T \ a` from the parent array.
fn brute_loo(parent: &[usize], z_leaf: &BTreeMap<usize, f64>, z_novel: &BTreeMap<usize, f64>, y: usize) -> f64 {
    let n = parent.len();
    let is_leaf = |v: usize| !(1..n).any(|c| parent[c] == v);
    let under = |v: usize, a: usize| {
        let mut u = v;
        loop {
            if u == a {
                return true;
            }
            if u == 0 {
                return false;
            }
            u = parent[u];
        }
    };
    let leaves: Vec<usize> = (0..n).filter(|&v| is_leaf(v)).collect();
    let all: Vec<f64> = leaves.iter().map(|l| z_leaf[l]).collect();
    let mut loss = lse(&all) - z_leaf[&y];
    let mut a = y;
    while a != 0 {
        let kept: Vec<usize> = (0..n).filter(|&v| !under(v, a)).collect();
        let p = parent[a];
        let mut support: Vec<f64> = kept.iter().filter(|v| leaves.contains(v)).map(|l| z_leaf[l]).collect();
        support.push(z_novel[&p]);
        loss += lse(&support) - z_novel[&p];
        a = p;
    }
    loss
}

/// Descendant-leaf keys of every node, from the raw edge list.
fn leaf_sets(edges: &[(u64, u64)], n: usize) -> Vec<BTreeSet<u64>> {
    let mut children = vec![Vec::new(); n];
    for &(c, p) in edges {
        children[p as usize].push(c as usize);
    }
    let mut sets = vec![BTreeSet::new(); n];
    for v in (0..n).rev() {
        if children[v].is_empty() {
            sets[v].insert(v as u64);
        } else {
            let mut s = BTreeSet::new();
            for &c in &children[v] {
                s.extend(sets[c].iter().copied());
            }
            sets[v] = s;
        }
    }
    sets
}

fn fixture() -> BTreeMap<String, f64> {
    include_str!("fixtures/oracle_seed7.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once(' ').expect("key value");
            (k.to_string(), v.trim().parse().expect("numeric fixture value"))
        })
        .collect()
}

// ---------------------------------------------------------------- criteria

fn td_embedding_exact() -> Outcome {
    let h = Rational64::new(1, 2);
    let t3 = Rational64::new(1, 3);
    let (i, o) = (Rational64::from_integer(1), Rational64::from_integer(0));
    let expected: [[Rational64; 7]; 8] = [
        [h, h, h, h, t3, t3, t3],
        [i, o, h, h, t3, t3, t3],
        [o, i, h, h, t3, t3, t3],
        [i, o, i, o, t3, t3, t3],
        [i, o, o, i, t3, t3, t3],
        [o, i, h, h, i, o, o],
        [o, i, h, h, o, i, o],
        [o, i, h, h, o, o, i],
    ];
    let e = build_td_embedding(&toy_embedding_taxonomy(), &BTreeSet::new()).map_err(|e| e.to_string())?;
    let bad: Vec<usize> = (0..8).filter(|&k| e.vector(k as u64) != Some(expected[k].as_slice())).collect();
    ensure(bad.is_empty(), format!("8 vectors, mismatching classes {bad:?}"))
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = BTreeMap::from([("ce", 0f64), ("kl", 0f64), ("relabel", 0f64), ("loo", 0f64)]);
    let mut done = BTreeMap::from([("ce", 0), ("kl", 0), ("relabel", 0), ("loo", 0)]);
    while done.values().any(|&c| c < 100) {
        let n = rng.random_range(4..12);
        let t = taxonomy(&random_dag(&mut rng, n));
        let dim = rng.random_range(1..5);
        let rows = rng.random_range(2..10);
        let mut leaves: Vec<NodeId> = t.leaf_order().to_vec();
        while leaves.len() < rows {
            leaves.push(t.leaf_order()[rng.random_range(0..t.leaf_order().len())]);
        }
        let inputs = random_inputs(&mut rng, leaves.len(), dim);

        let s = t.super_order()[rng.random_range(0..t.super_order().len())];
        let spec = topdown_loss(&t, s, &leaves, 1.0).map_err(|e| e.to_string())?;
        let slots: Vec<ClassSlot> = t.children(s).iter().map(|&c| ClassSlot::Node(c)).collect();
        let head = random_head(&mut rng, slots, dim, 1.0);
        for (kind, kl) in [("ce", false), ("kl", true)] {
            let mut part = spec.clone();
            part.examples.retain(|ex| {
                ex.terms.iter().all(|tm| matches!(tm.kind, taxnov_core::numcore::TermKind::KlUniform) == kl)
            });
            if part.examples.is_empty() || done[kind] >= 100 {
                continue;
            }
            *worst.get_mut(kind).unwrap() = worst[kind].max(grad_check(&part, &head, &inputs, 1e-5));
            *done.get_mut(kind).unwrap() += 1;
        }

        let flat = random_head(&mut rng, flat_slots(&t), dim, 1.0);
        if done["relabel"] < 100 {
            let weighting =
                if rng.random_bool(0.5) { ClassWeighting::Uniform } else { ClassWeighting::DescendantCount };
            let mut relabel =
                RelabelLoss::new(&t, leaves.clone(), RelabelConfig { rate: 0.5, resample_each_epoch: true }, weighting)
                    .map_err(|e| e.to_string())?;
            relabel.resample(&mut rng);
            let err = grad_check(relabel.spec(), &flat, &inputs, 1e-5);
            *worst.get_mut("relabel").unwrap() = worst["relabel"].max(err);
            *done.get_mut("relabel").unwrap() += 1;
        }
        if done["loo"] < 100 {
            let opts = LooOptions {
                weighting: if rng.random_bool(0.5) { ClassWeighting::Uniform } else { ClassWeighting::DescendantCount },
                normalization: if rng.random_bool(0.5) { LooNormalization::Sum } else { LooNormalization::Mean },
                held_out_ratio: rng.random_range(0.01..2.0),
            };
            let spec = loo_loss_spec(&t, &leaves, opts).map_err(|e| e.to_string())?;
            *worst.get_mut("loo").unwrap() = worst["loo"].max(grad_check(&spec, &flat, &inputs, 1e-5));
            *done.get_mut("loo").unwrap() += 1;
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(max < 1e-4, format!("100 instances each, max rel err: {detail}"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut partials = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..14);
        let t = taxonomy(&random_dag(&mut rng, n));
        let slots = flat_slots(&t);
        if slots.len() != t.leaf_order().len() + t.super_order().len() {
            return Err(format!("{} slots for {} nodes", slots.len(), t.len()));
        }
        let dim = rng.random_range(1..6);
        let head = random_head(&mut rng, slots, dim, 10.0);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = head.logits(&x).map_err(|e| e.to_string())?;
        let p = softmax(&z).map_err(|e| e.to_string())?;
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        let y = t.leaf_order()[rng.random_range(0..t.leaf_order().len())];
        for d in loo_partial_distributions(&t, &z, y).map_err(|e| e.to_string())? {
            worst = worst.max((d.iter().sum::<f64>() - 1.0).abs());
            partials += 1;
        }
    }
    ensure(worst <= 1e-9, format!("1000 relabel softmaxes, {partials} LOO partials, max |sum-1| {worst:.1e}"))
}

fn loo_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut trees = 0;
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 2..=6 {
        for parent in parent_arrays(n) {
            trees += 1;
            let edges: Vec<(u64, u64)> = (1..n).map(|i| (i as u64, parent[i] as u64)).collect();
            let t = taxonomy(&edges);
            let dim = 3;
            let head = random_head(&mut rng, flat_slots(&t), dim, 2.0);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = head.logits(&x).map_err(|e| e.to_string())?;
            let id = |v: usize| t.resolve_key(v as u64).expect("every key is a node");
            let mut z_leaf = BTreeMap::new();
            let mut z_novel = BTreeMap::new();
            for v in 0..n {
                if t.is_leaf(id(v)) {
                    z_leaf.insert(v, z[leaf_slot(&t, id(v)) as usize]);
                } else {
                    z_novel.insert(v, z[novel_slot(&t, id(v)) as usize]);
                }
            }
            for &y in z_leaf.keys() {
                let got = loo_loss(&t, &head, &x, id(y), None).map_err(|e| e.to_string())?;
                worst = worst.max((got - brute_loo(&parent, &z_leaf, &z_novel, y)).abs());
                cases += 1;
            }
        }
    }
    ensure(worst <= 1e-10, format!("{trees} trees, {cases} (tree, leaf) cases, max |diff| {worst:.1e}"))
}

fn merge_fixpoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut merged_nodes = 0;
    for trial in 0..1000 {
        let n = rng.random_range(2..16);
        let edges = random_dag(&mut rng, n);
        let sets = leaf_sets(&edges, n);
        let t = taxonomy(&edges);
        let m = t.merge_indistinguishable();
        merged_nodes += t.len() - m.len();
        let fail = |what: &str| Err(format!("DAG {trial}: {what}"));
        if m.super_order().iter().any(|&s| m.children(s).len() == 1) {
            return fail("single-child super remains");
        }
        // image of a merged leaf: the one original leaf folded into it
        let mut orig = BTreeMap::new();
        for &l in m.leaf_order() {
            let hits: Vec<u64> = m
                .node(l)
                .unwrap()
                .merged_from
                .iter()
                .copied()
                .filter(|&k| sets[k as usize] == BTreeSet::from([k]))
                .collect();
            if hits.len() != 1 {
                return fail("merged leaf does not hold exactly one original leaf");
            }
            orig.insert(l, hits[0]);
        }
        let merged_sets: Vec<BTreeSet<u64>> =
            m.nodes().iter().map(|r| m.leaves_under(r.id).iter().map(|l| orig[l]).collect()).collect();
        if merged_sets.iter().collect::<BTreeSet<_>>().len() != m.len() {
            return fail("duplicate leaf sets");
        }
        for (v, set) in sets.iter().enumerate().take(n) {
            let img = m.resolve_key(v as u64).expect("keys survive merging");
            if &merged_sets[img.index()] != set {
                return fail("leaf set not preserved");
            }
        }
        if m.merge_indistinguishable() != m {
            return fail("not idempotent");
        }
    }
    Ok(format!("1000 DAGs, {merged_nodes} nodes folded"))
}

fn auc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c: f64 = rng.random_range(0.0..1.0);
        let mut known: Vec<f64> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0.0..1.0)).collect();
        known.push(1.0);
        worst = worst.max((curve_auc(known.iter().map(|&k| (k, c))) - c).abs());
    }
    let tri = curve_auc([(0.0, 1.0), (1.0, 0.0)]);
    ensure(worst <= 1e-12 && (tri - 0.5).abs() <= 1e-12, format!("constant max err {worst:.1e}, triangle {tri}"))
}

struct EndToEnd {
    loo: AccuracyCurve,
    tdloo: AccuracyCurve,
}

fn end_to_end() -> (Outcome, Option<EndToEnd>) {
    let run = || -> Result<(Outcome, EndToEnd), String> {
        let fx = fixture();
        let bench = generate_synthetic(&SynthSpec { seed: fx["seed"] as u64, ..SynthSpec::default() })
            .map_err(|e| e.to_string())?;
        let t = &bench.known;
        let curve = |s: &[taxnov_core::ScoredSample]| {
            sweep(s, &bench.test_truth, t, &breakpoint_grid(s)).map_err(|e| e.to_string())
        };
        let oracle = curve(&bayes_oracle_scores(&bench))?;
        if (oracle.auc - fx["oracle_auc"]).abs() > 1e-9 || t.super_order().len() as f64 != fx["supers"] {
            return Err(format!("oracle run drifted from fixture: auc {}", oracle.auc));
        }
        let cfg = benchmark_configs();
        let (loo, _) = train_loo(t, &bench.train, &cfg.loo).map_err(|e| e.to_string())?;
        let td = train_topdown(t, &bench.train, &cfg.topdown).map_err(|e| e.to_string())?;
        let (tdloo, _) = train_tdloo(t, &bench.train, &td, &cfg.tdloo).map_err(|e| e.to_string())?;
        let loo = curve(&loo.score(t, &bench.test).map_err(|e| e.to_string())?)?;
        let tdloo = curve(&tdloo.score(t, &bench.test).map_err(|e| e.to_string())?)?;

        let auc_floor = 0.5 * fx["oracle_auc"];
        let chance = 1.0 / fx["supers"];
        let n50 = novel_at_known(&loo, 0.5).map_err(|e| e.to_string())?;
        let ok_a = loo.auc >= auc_floor && tdloo.auc >= auc_floor;
        let ok_b = n50 >= 3.0 * chance;
        let ok_c = loo.is_monotone() && tdloo.is_monotone() && oracle.is_monotone();
        let detail = format!(
            "oracle AUC {:.3}; LOO AUC {:.3}, TD+LOO AUC {:.3} (floor {auc_floor:.3}); LOO novel@50% {n50:.3} (floor {:.3}); monotone {ok_c}",
            oracle.auc,
            loo.auc,
            tdloo.auc,
            3.0 * chance
        );
        Ok((ensure(ok_a && ok_b && ok_c, detail), EndToEnd { loo, tdloo }))
    };
    match run() {
        Ok((o, e)) => (o, Some(e)),
        Err(e) => (Err(e), None),
    }
}

fn topdown_cascade() -> Outcome {
    let picked =
        select_threshold(&[(2.0, true), (3.0, true)], &[0.1, 0.2], &[0.5, 1.0, 2.5]).map_err(|e| e.to_string())?;
    if picked != 0.5 {
        return Err(format!("4-value example picked {picked}, want 0.5"));
    }
    let bench = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let t = &bench.known;
    let td_cfg = benchmark_configs().topdown;
    let mut m = train_topdown(t, &bench.train, &td_cfg).map_err(|e| e.to_string())?;
    let base = calibrate_thresholds(&m, t, &bench.val, td_cfg.threshold_grid).map_err(|e| e.to_string())?;
    let mut prev: Option<Vec<bool>> = None;
    let mut counts = Vec::new();
    for scale in [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 16.0] {
        // a floor lets the root and zero thresholds move too
        m.thresholds = base.iter().map(|(&s, &l)| (s, l * scale + 0.05 * scale)).collect();
        let flags = (0..bench.test.len())
            .map(|i| predict_topdown(&m, t, bench.test.row(i)).map(|p| p.is_novel()))
            .collect::<Result<Vec<bool>, _>>()
            .map_err(|e| e.to_string())?;
        if let Some(p) = &prev {
            if p.iter().zip(&flags).any(|(&a, &b)| a && !b) {
                return Err(format!("a novelty flag was cleared at scale {scale}"));
            }
        }
        counts.push(flags.iter().filter(|&&f| f).count());
        prev = Some(flags);
    }
    Ok(format!("λ example -> 0.5; novel flags over rising λ: {counts:?}"))
}

fn gzsl_combination() -> Outcome {
    // 90 samples of class 1 and 10 of class 2, everything predicted as 1
    let labels: Vec<u64> = [vec![1; 90], vec![2; 10]].concat();
    let preds = vec![1u64; 100];
    let group = BTreeSet::from([1, 2]);
    let sample = sample_wise_accuracy(&preds, &labels, &group);
    let class = class_wise_accuracy(&preds, &labels, &group).map_err(|e| e.to_string())?;
    if sample != 0.9 || class != 0.5 {
        return Err(format!("90/10 toy: sample-wise {sample}, class-wise {class}"));
    }

    let bench = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let split = bench.gzsl_split();
    let mut classes: Vec<u64> = split.seen.iter().copied().chain(split.unseen.iter().copied()).collect();
    classes.sort_unstable();
    let td = build_td_embedding(&bench.full, &split.unseen).map_err(|e| e.to_string())?.to_table();
    let path = build_path_embedding(&bench.full).map_err(|e| e.to_string())?;
    let cfg = SemanticMapConfig::default();
    let tables = [td, path]
        .iter()
        .map(|emb| fit_and_score(emb, &split.train, &split.seen, &classes, &split.val, &cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let labels = split.val.labels();
    let (w, best) = search_weights(&tables, labels, &split.unseen).map_err(|e| e.to_string())?;
    let corners = [vec![1.0, 0.0], vec![0.0, 1.0]]
        .iter()
        .map(|w| seen_unseen_curve(&tables, w, labels, &split.unseen).map(|c| c.auc))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let corner = corners.iter().copied().fold(0.0, f64::max);
    ensure(
        best >= corner,
        format!(
            "90/10 toy 0.9 vs 0.5; val AUC TD {:.3}, Path {:.3}, searched {best:.3} at {w:?}",
            corners[0], corners[1]
        ),
    )
}

fn determinism(e2e: Option<&EndToEnd>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let bench = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
        let t = &bench.known;
        let cfg = benchmark_configs();
        let td = train_topdown(t, &bench.train, &cfg.topdown).map_err(|e| e.to_string())?;
        let (loo, _) = train_loo(t, &bench.train, &cfg.loo).map_err(|e| e.to_string())?;
        let scores = loo.score(t, &bench.test).map_err(|e| e.to_string())?;
        let preds: Vec<_> = scores.iter().map(|s| s.predict(0.0)).collect();
        let curve = sweep(&scores, &bench.test_truth, t, &breakpoint_grid(&scores)).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for (name, write) in [
            ("train.hnf", bench.train.write(dir.path().join(format!("{run}-train.hnf")))),
            ("td.bin", save_binary(dir.path().join(format!("{run}-td.bin")), &td)),
            ("loo.bin", save_binary(dir.path().join(format!("{run}-loo.bin")), &loo)),
            ("preds.bin", save_binary(dir.path().join(format!("{run}-preds.bin")), &preds)),
        ] {
            write.map_err(|e| e.to_string())?;
            files.push(std::fs::read(dir.path().join(format!("{run}-{name}"))).map_err(|e| e.to_string())?);
        }
        files.push(curve.to_csv().into_bytes());
        if let Some(e) = e2e {
            if run == 0 && curve.to_csv() != e.loo.to_csv() {
                return Err("curve differs from the end-to-end run".into());
            }
        }
        digests.push(files);
    }
    let bytes: usize = digests[0].iter().map(Vec::len).sum();
    ensure(
        digests[0] == digests[1],
        format!("features, TD model, LOO model, predictions, curve: {bytes} bytes each run"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, start: Instant, o: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match o {
            Ok(d) => println!("PASS  {id:>2} {name:<22} [{secs:6.2}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {id:>2} {name:<22} [{secs:6.2}s] {d}")
            }
        }
    };
    let s = Instant::now();
    report(1, "td_embedding_exact", s, td_embedding_exact());
    let s = Instant::now();
    report(2, "gradient_fidelity", s, gradient_fidelity());
    let s = Instant::now();
    report(3, "normalization", s, normalization());
    let s = Instant::now();
    report(4, "loo_brute_force", s, loo_brute_force());
    let s = Instant::now();
    report(5, "merge_fixpoint", s, merge_fixpoint());
    let s = Instant::now();
    report(6, "auc_correctness", s, auc_correctness());
    let s = Instant::now();
    let (o, e2e) = end_to_end();
    report(7, "end_to_end_synthetic", s, o);
    let s = Instant::now();
    report(8, "topdown_cascade", s, topdown_cascade());
    let s = Instant::now();
    report(9, "gzsl_combination", s, gzsl_combination());
    let s = Instant::now();
    report(10, "determinism", s, determinism(e2e.as_ref()));
    if let Some(e) = &e2e {
        println!("      LOO curve {} points, TD+LOO curve {} points", e.loo.points.len(), e.tdloo.points.len());
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
