//! Small named taxonomies used by tests, the self-test, and examples.

use std::collections::BTreeMap;

use crate::taxonomy::Taxonomy;

fn named(edges: &[(u64, u64)], names: &[(u64, &str)]) -> Taxonomy {
    let names: BTreeMap<u64, String> = names.iter().map(|&(k, n)| (k, n.to_string())).collect();
    Taxonomy::from_edges(edges, &names).expect("fixture taxonomy is valid")
}

/// animal -> {cat, dog}; cat -> {Persian cat, Siamese cat};
/// dog -> {Pomeranian, Welsh corgi}.
pub fn figure3() -> Taxonomy {
    named(
        &[(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 2)],
        &[
            (0, "animal"),
            (1, "cat"),
            (2, "dog"),
            (3, "Persian cat"),
            (4, "Siamese cat"),
            (5, "Pomeranian"),
            (6, "Welsh corgi"),
        ],
    )
}

/// r -> {c1, c2}; c1 -> {c11, c12}; c2 -> {c21, c22, c23}.
pub fn toy_embedding_taxonomy() -> Taxonomy {
    named(
        &[(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 2), (7, 2)],
        &[(0, "r"), (1, "c1"), (2, "c2"), (3, "c11"), (4, "c12"), (5, "c21"), (6, "c22"), (7, "c23")],
    )
}

/// root -> {c1, c2}; c2 -> {l1, l2}, with c1 a leaf.
pub fn three_leaf() -> Taxonomy {
    named(&[(1, 0), (2, 0), (3, 2), (4, 2)], &[(0, "root"), (1, "c1"), (2, "c2"), (3, "l1"), (4, "l2")])
}
