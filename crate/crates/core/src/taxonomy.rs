//! Class hierarchy: a rooted DAG of known leaf classes and super classes.
//!
//! Nodes carry a dense [`NodeId`] (assigned at construction, sorted by the
//! external key) and the external `key` used in files. Every query that the
//! classifiers need is answered from precomputed tables: canonical leaf and
//! super orderings, children sorted by id, longest-path depth, and the set of
//! descendant leaves under each node.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Super,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    /// External id as it appears in edge, feature, and ground-truth files.
    /// A merged node keeps the smallest key of its members.
    pub key: u64,
    pub name: String,
    pub kind: NodeKind,
    /// External keys of every original node folded into this one, sorted.
    pub merged_from: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    nodes: Vec<NodeRecord>,
    root: NodeId,
    parents: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
    leaf_order: Vec<NodeId>,
    super_order: Vec<NodeId>,
    leaf_pos: Vec<Option<u32>>,
    super_pos: Vec<Option<u32>>,
    depth: Vec<u32>,
    descendant_leaves: Vec<Vec<NodeId>>,
    key_index: BTreeMap<u64, NodeId>,
}

/// Node description used while assembling a taxonomy.
#[derive(Clone, Debug)]
struct Proto {
    key: u64,
    name: String,
    merged_from: Vec<u64>,
}

impl Taxonomy {
    /// Builds a taxonomy from `(child key, parent key)` rows.
    ///
    /// Dense ids follow ascending key order. Nodes without an entry in `names`
    /// are named after their key; a name for a key that never appears in an
    /// edge is a [`Error::DanglingReference`].
    pub fn from_edges(edges: &[(u64, u64)], names: &BTreeMap<u64, String>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyTaxonomy);
        }
        let keys: BTreeSet<u64> = edges.iter().flat_map(|&(c, p)| [c, p]).collect();
        if let Some(&k) = names.keys().find(|k| !keys.contains(k)) {
            return Err(Error::DanglingReference(k));
        }
        let index: BTreeMap<u64, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let protos = keys
            .iter()
            .map(|&k| Proto {
                key: k,
                name: names.get(&k).cloned().unwrap_or_else(|| k.to_string()),
                merged_from: vec![k],
            })
            .collect();
        let dense = edges.iter().map(|(c, p)| (index[c], index[p])).collect::<Vec<_>>();
        Self::assemble(protos, &dense)
    }

    fn assemble(protos: Vec<Proto>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = protos.len();
        let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(c, p) in edges {
            if c == p {
                return Err(Error::CycleDetected(vec![protos[c].key]));
            }
            parents[c].insert(p);
            children[p].insert(c);
        }

        // Kahn's algorithm from the roots downwards.
        let mut indegree: Vec<usize> = parents.iter().map(BTreeSet::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let roots: Vec<usize> = queue.iter().copied().collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            topo.push(u);
            for &c in &children[u] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n).filter(|&i| indegree[i] > 0).map(|i| protos[i].key).collect();
            return Err(Error::CycleDetected(stuck));
        }
        if roots.len() != 1 {
            return Err(Error::MultipleRoots(roots.iter().map(|&r| protos[r].key).collect()));
        }
        let root = roots[0];

        let mut depth = vec![0u32; n];
        for &u in &topo {
            for &c in &children[u] {
                depth[c] = depth[c].max(depth[u] + 1);
            }
        }

        let mut descendant_leaves: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for &u in topo.iter().rev() {
            if children[u].is_empty() {
                descendant_leaves[u] = vec![NodeId(u as u32)];
            } else {
                let set: BTreeSet<NodeId> =
                    children[u].iter().flat_map(|&c| descendant_leaves[c].iter().copied()).collect();
                descendant_leaves[u] = set.into_iter().collect();
            }
        }

        let mut key_index = BTreeMap::new();
        let mut nodes = Vec::with_capacity(n);
        let mut leaf_order = Vec::new();
        let mut super_order = Vec::new();
        let mut leaf_pos = vec![None; n];
        let mut super_pos = vec![None; n];
        for (i, proto) in protos.into_iter().enumerate() {
            let id = NodeId(i as u32);
            let kind = if children[i].is_empty() {
                leaf_pos[i] = Some(leaf_order.len() as u32);
                leaf_order.push(id);
                NodeKind::Leaf
            } else {
                super_pos[i] = Some(super_order.len() as u32);
                super_order.push(id);
                NodeKind::Super
            };
            for &k in &proto.merged_from {
                key_index.insert(k, id);
            }
            nodes.push(NodeRecord { id, key: proto.key, name: proto.name, kind, merged_from: proto.merged_from });
        }

        let to_ids = |s: &BTreeSet<usize>| s.iter().map(|&i| NodeId(i as u32)).collect::<Vec<_>>();
        Ok(Taxonomy {
            nodes,
            root: NodeId(root as u32),
            parents: parents.iter().map(to_ids).collect(),
            children: children.iter().map(to_ids).collect(),
            leaf_order,
            super_order,
            leaf_pos,
            super_pos,
            depth,
            descendant_leaves,
            key_index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeRecord> {
        self.nodes.get(id.index()).ok_or(Error::UnknownNode(id))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn key(&self, id: NodeId) -> u64 {
        self.nodes[id.index()].key
    }

    /// Maps an external key (including keys folded away by merging) to its node.
    pub fn resolve_key(&self, key: u64) -> Option<NodeId> {
        self.key_index.get(&key).copied()
    }

    pub fn find_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn check(&self, id: NodeId) -> Result<()> {
        if id.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(id))
        }
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.index()].kind == NodeKind::Leaf
    }

    pub fn is_super(&self, id: NodeId) -> bool {
        self.nodes[id.index()].kind == NodeKind::Super
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id.index()]
    }

    /// Children of `id`, sorted by id. This is the canonical order of the
    /// per-super classifier outputs.
    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.index()]
    }

    pub fn leaf_order(&self) -> &[NodeId] {
        &self.leaf_order
    }

    pub fn super_order(&self) -> &[NodeId] {
        &self.super_order
    }

    pub fn leaf_position(&self, id: NodeId) -> Option<usize> {
        self.leaf_pos.get(id.index()).copied().flatten().map(|p| p as usize)
    }

    pub fn super_position(&self, id: NodeId) -> Option<usize> {
        self.super_pos.get(id.index()).copied().flatten().map(|p| p as usize)
    }

    /// Longest path length from the root.
    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id.index()] as usize
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0) as usize
    }

    /// Known leaves under `id` (the node itself if it is a leaf), sorted by id.
    pub fn leaves_under(&self, id: NodeId) -> &[NodeId] {
        &self.descendant_leaves[id.index()]
    }

    /// True if `leaf` is `id` or one of its descendants.
    pub fn covers_leaf(&self, id: NodeId, leaf: NodeId) -> bool {
        self.descendant_leaves[id.index()].binary_search(&leaf).is_ok()
    }

    /// `A(y)`: the node itself and every ancestor, deepest first, root last.
    pub fn ancestors(&self, y: NodeId) -> Result<Vec<NodeId>> {
        self.check(y)?;
        let mut seen = BTreeSet::from([y]);
        let mut stack = vec![y];
        while let Some(u) = stack.pop() {
            for &p in self.parents(u) {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        let mut out: Vec<NodeId> = seen.into_iter().collect();
        out.sort_by(|a, b| self.depth(*b).cmp(&self.depth(*a)).then(a.cmp(b)));
        Ok(out)
    }

    pub fn is_ancestor(&self, u: NodeId, v: NodeId) -> Result<bool> {
        self.check(u)?;
        Ok(self.ancestors(v)?.contains(&u))
    }

    /// `O(s)`: every known leaf that is not under `s`.
    pub fn outside_set(&self, s: NodeId) -> Result<Vec<NodeId>> {
        self.check(s)?;
        if !self.is_super(s) {
            return Err(Error::NotASuperClass(s));
        }
        Ok(self.leaf_order.iter().copied().filter(|&l| !self.covers_leaf(s, l)).collect())
    }

    /// `T \ a`: the taxonomy with `a` and its descendants removed.
    pub fn remove_subtree(&self, a: NodeId) -> Result<SubtaxonomyView<'_>> {
        self.check(a)?;
        if a == self.root {
            return Err(Error::CannotRemoveRoot);
        }
        let removed = self.leaves_under(a);
        let leaves = self.leaf_order.iter().copied().filter(|l| removed.binary_search(l).is_err()).collect();
        Ok(SubtaxonomyView { base: self, removed: a, leaves, novel_parents: self.parents(a).to_vec() })
    }

    /// Climbs from leaf `y` towards the root, taking each step with
    /// probability `rate`. Among several parents one is chosen uniformly.
    pub fn relabel_sample<R: Rng + ?Sized>(&self, y: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        self.check(y)?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        let mut cur = y;
        loop {
            let ps = self.parents(cur);
            if ps.is_empty() || !rng.random_bool(rate) {
                return Ok(cur);
            }
            cur = if ps.len() == 1 { ps[0] } else { ps[rng.random_range(0..ps.len())] };
        }
    }

    /// Shortest path length between `u` and `v`, ignoring edge direction.
    pub fn hierarchical_distance(&self, u: NodeId, v: NodeId) -> Result<usize> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.distances_from(u)[v.index()].expect("taxonomy is connected"))
    }

    /// Undirected BFS distances from `u` to every node.
    pub fn distances_from(&self, u: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[u.index()] = Some(0);
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x.index()].unwrap();
            for &y in self.parents(x).iter().chain(self.children(x)) {
                if dist[y.index()].is_none() {
                    dist[y.index()] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Folds together every group of nodes sharing the same descendant-leaf
    /// set. A super class with a single child falls under the same rule, since
    /// it has exactly its child's leaves. Idempotent.
    pub fn merge_indistinguishable(&self) -> Taxonomy {
        let mut groups: BTreeMap<&[NodeId], Vec<usize>> = BTreeMap::new();
        for (i, leaves) in self.descendant_leaves.iter().enumerate() {
            groups.entry(leaves.as_slice()).or_default().push(i);
        }
        if groups.len() == self.len() {
            return self.clone();
        }
        let mut members: Vec<Vec<usize>> = groups.into_values().collect();
        members.sort_by_key(|m| m[0]);
        let mut group_of = vec![0usize; self.len()];
        for (g, m) in members.iter().enumerate() {
            for &i in m {
                group_of[i] = g;
            }
        }
        let protos = members
            .iter()
            .map(|m| {
                let mut by_key: Vec<&NodeRecord> = m.iter().map(|&i| &self.nodes[i]).collect();
                by_key.sort_by_key(|r| r.key);
                let mut merged_from: Vec<u64> = by_key.iter().flat_map(|r| r.merged_from.iter().copied()).collect();
                merged_from.sort_unstable();
                Proto {
                    key: by_key[0].key,
                    name: by_key.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join(","),
                    merged_from,
                }
            })
            .collect();
        let mut edges = BTreeSet::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for p in ps {
                let (gc, gp) = (group_of[c], group_of[p.index()]);
                if gc != gp {
                    edges.insert((gc, gp));
                }
            }
        }
        let edges: Vec<_> = edges.into_iter().collect();
        let merged = Self::assemble(protos, &edges).expect("merging preserves acyclicity and the root");
        // Groups are keyed by distinct leaf sets, so one pass reaches the fixpoint.
        debug_assert_eq!(merged.merge_indistinguishable_groups(), merged.len());
        merged
    }

    fn merge_indistinguishable_groups(&self) -> usize {
        self.descendant_leaves.iter().collect::<BTreeSet<_>>().len()
    }

    /// Builds a taxonomy containing only `keep`, with the induced edges.
    /// Used to materialize `T \ a` literally and by embedding code.
    pub fn induced(&self, keep: &[NodeId]) -> Result<Taxonomy> {
        let keep_set: BTreeSet<NodeId> = keep.iter().copied().collect();
        let index: BTreeMap<NodeId, usize> = keep_set.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let protos = keep_set
            .iter()
            .map(|&n| {
                let r = &self.nodes[n.index()];
                Proto { key: r.key, name: r.name.clone(), merged_from: r.merged_from.clone() }
            })
            .collect();
        let mut edges = Vec::new();
        for &c in &keep_set {
            for p in self.parents(c) {
                if let Some(&pi) = index.get(p) {
                    edges.push((index[&c], pi));
                }
            }
        }
        if edges.is_empty() && keep_set.len() > 1 {
            return Err(Error::EmptyTaxonomy);
        }
        Self::assemble(protos, &edges)
    }

    /// Edge rows `(child key, parent key)` in id order.
    pub fn edge_keys(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for p in ps {
                out.push((self.nodes[c].key, self.nodes[p.index()].key));
            }
        }
        out
    }
}

/// Read-only view of `T \ a`.
#[derive(Clone, Debug)]
pub struct SubtaxonomyView<'a> {
    pub base: &'a Taxonomy,
    pub removed: NodeId,
    leaves: Vec<NodeId>,
    novel_parents: Vec<NodeId>,
}

impl SubtaxonomyView<'_> {
    /// `L(T \ a)`.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// `P(a)`: the supers whose novel slot receives the removed leaves.
    pub fn novel_parents(&self) -> &[NodeId] {
        &self.novel_parents
    }

    pub fn contains_leaf(&self, l: NodeId) -> bool {
        self.leaves.binary_search(&l).is_ok()
    }
}

/// Parsed row of an edge TSV. `unseen` marks a class attached for zero-shot
/// evaluation (third column `U`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeRow {
    pub child: u64,
    pub parent: u64,
    pub unseen: bool,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn parse_u64(line: usize, field: Option<&str>) -> Result<u64> {
    let f = field.ok_or_else(|| Error::Parse { line, msg: "missing field".into() })?;
    f.trim().parse().map_err(|_| Error::Parse { line, msg: format!("bad id {f:?}") })
}

/// Parses `child<TAB>parent[<TAB>U]` lines; `#` starts a comment line.
pub fn parse_edges_tsv(text: &str) -> Result<Vec<EdgeRow>> {
    data_lines(text)
        .map(|(line, l)| {
            let mut f = l.split('\t');
            let child = parse_u64(line, f.next())?;
            let parent = parse_u64(line, f.next())?;
            let unseen = match f.next().map(str::trim) {
                None | Some("") => false,
                Some("U") => true,
                Some(other) => return Err(Error::Parse { line, msg: format!("unknown edge flag {other:?}") }),
            };
            Ok(EdgeRow { child, parent, unseen })
        })
        .collect()
}

/// Parses `id<TAB>name` lines.
pub fn parse_names_tsv(text: &str) -> Result<BTreeMap<u64, String>> {
    data_lines(text)
        .map(|(line, l)| {
            let (id, name) =
                l.split_once('\t').ok_or_else(|| Error::Parse { line, msg: "expected id<TAB>name".into() })?;
            Ok((parse_u64(line, Some(id))?, name.to_string()))
        })
        .collect()
}
