//! Fast built-in checks against hand-computed values, run by `taxnov selftest`.

use std::collections::BTreeSet;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::FeatureSet;
use crate::eval::curve_auc;
use crate::fixtures::{figure3, three_leaf, toy_embedding_taxonomy};
use crate::flatten::{flat_slots, loo_loss, loo_loss_spec, LooOptions};
use crate::gzsl::{build_td_embedding, TdEmbedding};
use crate::numcore::{grad_check, kl_uniform, softmax, LinearHead, Matrix};
use crate::taxonomy::Taxonomy;
use crate::topdown::select_threshold;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult { name, passed, detail: detail.into() }
}

/// Expected TD embedding of the toy taxonomy r -> {c1, c2},
/// c1 -> {c11, c12}, c2 -> {c21, c22, c23}, as `(numerator, denominator)`
/// pairs in key order r, c1, c2, c11, c12, c21, c22, c23.
pub const TOY_TD_EMBEDDING: [[(i64, i64); 7]; 8] = {
    const H: (i64, i64) = (1, 2);
    const T: (i64, i64) = (1, 3);
    const I: (i64, i64) = (1, 1);
    const O: (i64, i64) = (0, 1);
    [
        [H, H, H, H, T, T, T],
        [I, O, H, H, T, T, T],
        [O, I, H, H, T, T, T],
        [I, O, I, O, T, T, T],
        [I, O, O, I, T, T, T],
        [O, I, H, H, I, O, O],
        [O, I, H, H, O, I, O],
        [O, I, H, H, O, O, I],
    ]
};

/// Compares an embedding of the toy taxonomy with [`TOY_TD_EMBEDDING`];
/// returns the first mismatching class key.
pub fn verify_toy_td_embedding(e: &TdEmbedding) -> Result<(), u64> {
    for (key, expected) in TOY_TD_EMBEDDING.iter().enumerate() {
        let key = key as u64;
        let want: Vec<Rational64> = expected.iter().map(|&(n, d)| Rational64::new(n, d)).collect();
        if e.vector(key) != Some(want.as_slice()) {
            return Err(key);
        }
    }
    Ok(())
}

fn td_embedding() -> CheckResult {
    let name = "td_embedding_toy";
    match build_td_embedding(&toy_embedding_taxonomy(), &BTreeSet::new()) {
        Ok(e) => match verify_toy_td_embedding(&e) {
            Ok(()) => check(name, true, "8 classes, 7 dims, exact"),
            Err(k) => check(name, false, format!("class {k} differs")),
        },
        Err(e) => check(name, false, e.to_string()),
    }
}

fn loo_example() -> CheckResult {
    let t = three_leaf();
    let h = LinearHead::zeros(flat_slots(&t), 1);
    let l1 = t.find_by_name("l1").expect("fixture");
    let want = 3f64.ln() * 2.0 + 2f64.ln();
    match loo_loss(&t, &h, &[0.0], l1, None) {
        Ok(v) => check("loo_worked_example", (v - want).abs() < 1e-12, format!("{v:.6} (want {want:.6})")),
        Err(e) => check("loo_worked_example", false, e.to_string()),
    }
}

fn softmax_and_kl() -> CheckResult {
    let name = "softmax_kl_values";
    let p = match softmax(&[1.0, 2.0, 3.0]) {
        Ok(p) => p,
        Err(e) => return check(name, false, e.to_string()),
    };
    let sum_ok = (p.iter().sum::<f64>() - 1.0).abs() < 1e-12;
    let kl = kl_uniform(&[0.99, 0.01]).unwrap_or(f64::NAN);
    let want = -(2f64.ln()) - 0.5 * (0.99f64.ln() + 0.01f64.ln());
    let ok = sum_ok && (kl - want).abs() < 1e-12 && kl_uniform(&[0.5, 0.5]).ok() == Some(0.0);
    check(name, ok, format!("KL(U||(0.99,0.01)) = {kl:.4}"))
}

fn auc_examples() -> CheckResult {
    let tri = curve_auc([(0.0, 1.0), (1.0, 0.0)]);
    let flat = curve_auc([(0.0, 0.6), (0.5, 0.6), (1.0, 0.6)]);
    let ok = (tri - 0.5).abs() < 1e-12 && (flat - 0.6).abs() < 1e-12;
    check("auc_triangle_constant", ok, format!("triangle {tri}, constant {flat}"))
}

fn threshold_example() -> CheckResult {
    let got = select_threshold(&[(2.0, true), (3.0, true)], &[0.1, 0.2], &[0.5, 1.0, 2.5]);
    check("threshold_selection", got.as_ref().ok() == Some(&0.5), format!("{got:?}"))
}

fn loo_gradient() -> CheckResult {
    let t = figure3();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let inputs = Matrix::from_rows(3, &rows).expect("rows share a width");
    let leaves: Vec<_> = (0..8).map(|i| t.leaf_order()[i % t.leaf_order().len()]).collect();
    let mut head = LinearHead::zeros(flat_slots(&t), 3);
    for i in 0..head.param_count() {
        *head.param_mut(i) = rng.random_range(-1.0..1.0);
    }
    match loo_loss_spec(&t, &leaves, LooOptions::default()) {
        Ok(spec) => {
            let err = grad_check(&spec, &head, &inputs, 1e-5);
            check("loo_gradient", err < 1e-4, format!("max relative error {err:.2e}"))
        }
        Err(e) => check("loo_gradient", false, e.to_string()),
    }
}

fn merge_fixpoint() -> CheckResult {
    // a single-child chain collapses, and merging again changes nothing
    let t = Taxonomy::from_edges(&[(1, 0), (2, 1), (3, 2), (4, 2)], &Default::default()).expect("valid edges");
    let once = t.merge_indistinguishable();
    let twice = once.merge_indistinguishable();
    let ok = once.len() == 3 && once == twice && figure3().merge_indistinguishable() == figure3();
    check("merge_fixpoint", ok, format!("{} -> {} nodes", t.len(), once.len()))
}

fn feature_round_trip() -> CheckResult {
    let mut s = FeatureSet::new(2);
    let pushed = s.push(1, 5, &[0.25, -3.5]).and_then(|_| s.push(2, 6, &[1e3, 0.0]));
    let mut buf = Vec::new();
    let back = pushed.and_then(|_| s.write_to(&mut buf)).and_then(|_| FeatureSet::read_from(buf.as_slice()));
    match back {
        Ok(b) => check(
            "feature_round_trip",
            b.features() == s.features() && b.ids() == s.ids(),
            format!("{} bytes", buf.len()),
        ),
        Err(e) => check("feature_round_trip", false, e.to_string()),
    }
}

/// Runs every check.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        td_embedding(),
        loo_example(),
        softmax_and_kl(),
        auc_examples(),
        threshold_example(),
        loo_gradient(),
        merge_fixpoint(),
        feature_round_trip(),
    ]
}
