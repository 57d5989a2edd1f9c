use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use taxnov_core::dataio::synth::{bayes_oracle_scores, generate_synthetic};
use taxnov_core::dataio::{load_binary, read_features_csv, save_binary};
use taxnov_core::eval::{
    breakpoint_grid, curve_auc, default_bias_grid, novel_at_known, score_predictions, sweep, AccuracyCurve, CurvePoint,
    ScoreReport,
};
use taxnov_core::flatten::{train_loo, train_relabel, train_tdloo};
use taxnov_core::gzsl::{
    build_path_embedding, build_td_embedding, fit_and_score, search_weights, seen_unseen_curve, EmbeddingTable,
    ScoreTable,
};
use taxnov_core::numcore::TrainReport;
use taxnov_core::selftest::run_selftest;
use taxnov_core::taxonomy::{parse_edges_tsv, parse_names_tsv, EdgeRow};
use taxnov_core::topdown::{calibrate_thresholds, predict_topdown, train_topdown};
use taxnov_core::{FeatureSet, GroundTruth, Prediction, Taxonomy, TopDownModel, TrainedModel};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{
    Command, EmbeddingKind, EvalArgs, GzslCommand, GzslEmbedArgs, GzslEvalArgs, Method, PredictArgs, SynthArgs,
    TaxBuildArgs, TaxCommand, TaxonomyArgs, TrainArgs,
};

pub fn run(cmd: Command, cfg: &RunConfig, argv: &[String]) -> Result<ExitCode> {
    match cmd {
        Command::Tax(TaxCommand::Build(a)) => tax_build(a, cfg, argv),
        Command::Train(a) => train(a, cfg, argv),
        Command::Predict(a) => predict(a, cfg, argv),
        Command::Eval(a) => eval(a, cfg, argv),
        Command::Synth(a) => synth(a, cfg, argv),
        Command::Gzsl(GzslCommand::Embed(a)) => gzsl_embed(a, cfg, argv),
        Command::Gzsl(GzslCommand::Eval(a)) => gzsl_eval(a, cfg, argv),
        Command::Selftest => return Ok(selftest()),
    }?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- inputs

fn is_bin(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_edges(run: &mut Run, path: &Path) -> Result<Vec<EdgeRow>> {
    let text = run.read_text(path)?;
    parse_edges_tsv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_taxonomy(edges: &[(u64, u64)], names: &BTreeMap<u64, String>) -> Result<Taxonomy> {
    let keys: BTreeSet<u64> = edges.iter().flat_map(|&(c, p)| [c, p]).collect();
    let names = names.iter().filter(|(k, _)| keys.contains(k)).map(|(&k, n)| (k, n.clone())).collect();
    Ok(Taxonomy::from_edges(edges, &names)?)
}

fn read_names(run: &mut Run, path: Option<&Path>) -> Result<BTreeMap<u64, String>> {
    match path {
        Some(p) => parse_names_tsv(&run.read_text(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(BTreeMap::new()),
    }
}

/// Known taxonomy: rows flagged unseen are dropped.
fn load_taxonomy(run: &mut Run, a: &TaxonomyArgs) -> Result<Taxonomy> {
    if is_bin(&a.taxonomy) {
        run.read(&a.taxonomy)?;
        return load_binary(&a.taxonomy).with_context(|| format!("loading {}", a.taxonomy.display()));
    }
    let rows = read_edges(run, &a.taxonomy)?;
    let names = read_names(run, a.names.as_deref())?;
    let known: Vec<(u64, u64)> = rows.iter().filter(|r| !r.unseen).map(|r| (r.child, r.parent)).collect();
    build_taxonomy(&known, &names)
}

/// Full taxonomy with the unseen class keys and the seen leaf keys.
fn load_full(run: &mut Run, path: &Path) -> Result<(Taxonomy, BTreeSet<u64>, Vec<u64>)> {
    let rows = read_edges(run, path)?;
    let all: Vec<(u64, u64)> = rows.iter().map(|r| (r.child, r.parent)).collect();
    let full = build_taxonomy(&all, &BTreeMap::new())?;
    let unseen: BTreeSet<u64> = rows.iter().filter(|r| r.unseen).map(|r| r.child).collect();
    let seen = full.leaf_order().iter().map(|&l| full.key(l)).filter(|k| !unseen.contains(k)).collect();
    Ok((full, unseen, seen))
}

fn read_features(run: &mut Run, path: &Path) -> Result<FeatureSet> {
    let bytes = run.read(path)?;
    let set = if path.extension().is_some_and(|e| e == "csv") {
        read_features_csv(bytes.as_slice())
    } else {
        FeatureSet::read_from(bytes.as_slice())
    };
    set.with_context(|| format!("reading features {}", path.display()))
}

fn load_model(run: &mut Run, path: &Path) -> Result<TrainedModel> {
    run.read(path)?;
    load_binary(path).with_context(|| format!("loading model {}", path.display()))
}

// ---------------------------------------------------------------- outputs

fn prediction_label(t: &Taxonomy, p: Prediction) -> String {
    let (kind, n) = match p {
        Prediction::Leaf(n) => ("L", n),
        Prediction::Novel(n) => ("N", n),
    };
    format!("{kind}\t{}\t{}", t.key(n), t.name(n))
}

fn loss_csv(r: &TrainReport) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in r.loss_trace.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    out
}

fn save_model(run: &mut Run, m: &TrainedModel) -> Result<()> {
    save_binary(run.path("model.bin"), m)?;
    run.record("model.bin")
}

// ---------------------------------------------------------------- commands

fn tax_build(a: TaxBuildArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let args = TaxonomyArgs { taxonomy: a.edges.clone(), names: a.names.clone() };
    let raw = load_taxonomy(&mut run, &args)?;
    let t = if a.merge { raw.merge_indistinguishable() } else { raw.clone() };
    save_binary(run.path("taxonomy.bin"), &t)?;
    run.record("taxonomy.bin")?;
    let mut s = String::new();
    writeln!(s, "nodes {}", t.len())?;
    writeln!(s, "leaves {}", t.leaf_order().len())?;
    writeln!(s, "supers {}", t.super_order().len())?;
    writeln!(s, "max_depth {}", t.max_depth())?;
    writeln!(s, "merged_away {}", raw.len() - t.len())?;
    for r in t.nodes().iter().filter(|r| r.merged_from.len() > 1) {
        writeln!(s, "merged {} <- {:?}", r.key, r.merged_from)?;
    }
    print!("{s}");
    run.write("summary.txt", s.as_bytes())?;
    run.finish(cfg, argv)?;
    Ok(())
}

fn train(a: TrainArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let t = load_taxonomy(&mut run, &a.taxonomy)?;
    let data = read_features(&mut run, &a.train)?;
    let val = a.val.as_deref().map(|p| read_features(&mut run, p)).transpose()?;
    let topdown = |t: &Taxonomy| -> Result<TopDownModel> {
        let mut m = train_topdown(t, &data, &cfg.topdown)?;
        if let Some(v) = &val {
            m.thresholds = calibrate_thresholds(&m, t, v, cfg.topdown.threshold_grid)?;
        }
        Ok(m)
    };
    let (model, report) = match a.method {
        Method::Topdown => {
            if val.is_none() {
                eprintln!("warning: no --val given; top-down thresholds stay at 0");
            }
            (TrainedModel::TopDown(topdown(&t)?), None)
        }
        Method::Relabel => {
            let (m, r) = train_relabel(&t, &data, &cfg.flatten)?;
            (TrainedModel::Flatten(m), Some(r))
        }
        Method::Loo => {
            let (m, r) = train_loo(&t, &data, &cfg.flatten)?;
            (TrainedModel::Flatten(m), Some(r))
        }
        Method::Tdloo => {
            let td = match a.td.as_deref() {
                Some(p) => match load_model(&mut run, p)? {
                    TrainedModel::TopDown(m) => m,
                    TrainedModel::Flatten(_) => bail!("{} is not a top-down model", p.display()),
                },
                None => topdown(&t)?,
            };
            let (m, r) = train_tdloo(&t, &data, &td, cfg.tdloo_config())?;
            (TrainedModel::Flatten(m), Some(r))
        }
    };
    save_model(&mut run, &model)?;
    if let Some(r) = &report {
        run.write("loss.csv", loss_csv(r).as_bytes())?;
        println!("loss {:.6} -> {:.6} over {} epochs", r.initial_loss(), r.final_loss(), r.loss_trace.len() - 1);
    }
    run.finish(cfg, argv)?;
    Ok(())
}

fn predict(a: PredictArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let t = load_taxonomy(&mut run, &a.taxonomy)?;
    let model = load_model(&mut run, &a.model)?;
    let data = read_features(&mut run, &a.features)?;
    let mut preds = String::from("id\tkind\tkey\tname\n");
    match &model {
        TrainedModel::TopDown(m) => {
            for i in 0..data.len() {
                let p = predict_topdown(m, &t, data.row(i))?;
                writeln!(preds, "{}\t{}", data.ids()[i], prediction_label(&t, p))?;
            }
        }
        TrainedModel::Flatten(m) => {
            let mut scores = String::from("id\tleaf\tleaf_score\tnovel\tnovel_score\n");
            for s in m.score(&t, &data)? {
                writeln!(preds, "{}\t{}", s.id, prediction_label(&t, s.predict(a.bias)))?;
                let (novel, ns) =
                    s.novel.map_or((String::new(), f64::NEG_INFINITY), |(p, v)| (t.key(p.node()).to_string(), v));
                writeln!(scores, "{}\t{}\t{}\t{novel}\t{ns}", s.id, t.key(s.known.0.node()), s.known.1)?;
            }
            run.write("scores.tsv", scores.as_bytes())?;
        }
    }
    run.write("predictions.tsv", preds.as_bytes())?;
    run.finish(cfg, argv)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    model: &'static str,
    samples: usize,
    auc: f64,
    novel_at_half_known: Option<f64>,
    /// At zero bias (flatten) or the stored thresholds (top-down).
    known_acc: f64,
    novel_acc: f64,
    novel_mean_epsilon: f64,
    novel_ancestor_rate: f64,
}

fn novel_stats(r: &ScoreReport) -> (f64, f64) {
    let novel: Vec<_> = r.samples.iter().filter(|s| !s.known).collect();
    let n = novel.len().max(1) as f64;
    (novel.iter().map(|s| s.epsilon as f64).sum::<f64>() / n, novel.iter().filter(|s| s.ancestor).count() as f64 / n)
}

fn eval(a: EvalArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let t = load_taxonomy(&mut run, &a.taxonomy)?;
    let model = load_model(&mut run, &a.model)?;
    let data = read_features(&mut run, &a.features)?;
    let gt = GroundTruth::parse_tsv(&run.read_text(&a.truth)?, &t).context("parsing ground truth")?;
    let (name, curve, at_zero) = match &model {
        TrainedModel::TopDown(m) => {
            let preds = (0..data.len())
                .map(|i| Ok((data.ids()[i], predict_topdown(m, &t, data.row(i))?)))
                .collect::<Result<Vec<_>>>()?;
            let r = score_predictions(&preds, &gt, &t)?;
            let p = CurvePoint { bias: 0.0, known_acc: r.known_acc, novel_acc: r.novel_acc };
            ("topdown", AccuracyCurve { points: vec![p], auc: curve_auc([(p.known_acc, p.novel_acc)]) }, r)
        }
        TrainedModel::Flatten(m) => {
            let scored = m.score(&t, &data)?;
            let grid = match cfg.bias_points {
                Some(n) => default_bias_grid(&scored, n),
                None => breakpoint_grid(&scored),
            };
            let preds: Vec<_> = scored.iter().map(|s| (s.id, s.predict(0.0))).collect();
            let r = score_predictions(&preds, &gt, &t)?;
            ("flatten", sweep(&scored, &gt, &t, &grid)?, r)
        }
    };
    let (eps, anc) = novel_stats(&at_zero);
    let summary = EvalSummary {
        model: name,
        samples: data.len(),
        auc: curve.auc,
        novel_at_half_known: novel_at_known(&curve, 0.5).ok(),
        known_acc: at_zero.known_acc,
        novel_acc: at_zero.novel_acc,
        novel_mean_epsilon: eps,
        novel_ancestor_rate: anc,
    };
    let text = toml::to_string(&summary)?;
    print!("{text}");
    run.write("curve.csv", curve.to_csv().as_bytes())?;
    run.write("summary.toml", text.as_bytes())?;
    run.finish(cfg, argv)?;
    Ok(())
}

fn synth(a: SynthArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let b = generate_synthetic(&cfg.synth)?;
    run.write("edges.tsv", b.edges_tsv().as_bytes())?;
    run.write("names.tsv", b.names_tsv().as_bytes())?;
    // the zero-shot split needs unseen classes in validation too, so it
    // halves the test set instead
    let z = b.gzsl_split();
    for (name, set) in [
        ("train.hnf", &b.train),
        ("val.hnf", &b.val),
        ("test.hnf", &b.test),
        ("gzsl_val.hnf", &z.val),
        ("gzsl_test.hnf", &z.test),
    ] {
        let mut buf = Vec::new();
        set.write_to(&mut buf)?;
        run.write(name, &buf)?;
    }
    run.write("test_truth.tsv", b.test_truth.to_tsv(&b.known).as_bytes())?;
    let oracle = bayes_oracle_scores(&b);
    let curve = sweep(&oracle, &b.test_truth, &b.known, &breakpoint_grid(&oracle))?;
    run.write("oracle_curve.csv", curve.to_csv().as_bytes())?;
    println!(
        "{} known leaves, {} held-out leaves, {} supers; {} train / {} val / {} test samples; oracle AUC {:.4}",
        b.known.leaf_order().len(),
        b.novel.len(),
        b.known.super_order().len(),
        b.train.len(),
        b.val.len(),
        b.test.len(),
        curve.auc
    );
    run.finish(cfg, argv)?;
    Ok(())
}

fn gzsl_embed(a: GzslEmbedArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let (full, unseen, _) = load_full(&mut run, &a.edges)?;
    let table = match a.kind {
        EmbeddingKind::Td => build_td_embedding(&full, &unseen)?.to_table(),
        EmbeddingKind::Path => build_path_embedding(&full)?,
    };
    run.write("embedding.csv", table.to_csv().as_bytes())?;
    run.finish(cfg, argv)?;
    Ok(())
}

#[derive(Serialize)]
struct GzslSummary {
    weights: Vec<f64>,
    val_auc: Option<f64>,
    auc: f64,
}

fn gzsl_eval(a: GzslEvalArgs, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let (full, unseen, seen) = load_full(&mut run, &a.edges)?;
    let mut classes: Vec<u64> = full.leaf_order().iter().map(|&l| full.key(l)).collect();
    classes.sort_unstable();
    let train = read_features(&mut run, &a.train)?;
    let test = read_features(&mut run, &a.test)?;
    let val = a.val.as_deref().map(|p| read_features(&mut run, p)).transpose()?;
    let embeddings = a
        .embeddings
        .iter()
        .map(|p| EmbeddingTable::read_csv(run.read(p)?.as_slice()).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let tables = |data: &FeatureSet| -> Result<Vec<ScoreTable>> {
        embeddings.iter().map(|e| Ok(fit_and_score(e, &train, &seen, &classes, data, &cfg.semantic_map)?)).collect()
    };
    let (weights, val_auc) = match (a.weights, &val) {
        (Some(w), _) => {
            if w.len() != embeddings.len() {
                bail!("{} weights for {} embeddings", w.len(), embeddings.len());
            }
            (w, None)
        }
        (None, _) if embeddings.len() == 1 => (vec![1.0], None),
        (None, Some(v)) => {
            let (w, auc) = search_weights(&tables(v)?, v.labels(), &unseen)?;
            (w, Some(auc))
        }
        (None, None) => bail!("several embeddings need --weights or --val for the weight search"),
    };
    let curve = seen_unseen_curve(&tables(&test)?, &weights, test.labels(), &unseen)?;
    let summary = GzslSummary { weights, val_auc, auc: curve.auc };
    let text = toml::to_string(&summary)?;
    print!("{text}");
    run.write("curve.csv", curve.to_csv().as_bytes())?;
    run.write("summary.toml", text.as_bytes())?;
    run.finish(cfg, argv)?;
    Ok(())
}

fn selftest() -> ExitCode {
    let results = run_selftest();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!("{}  {:<width$}  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
