//! Tensor networks, structure graphs, contraction trees, and execution.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::{contract_pair, contracted_indices, entry_count, Index, Tensor, TensorError};

/// Multiply-add throughput assumed by [`time_cost`], in operations per second.
pub const DEFAULT_THROUGHPUT: f64 = 1e9;

/// Bytes per stored entry.
pub const BYTES_PER_ENTRY: u128 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("a tensor network needs at least one tensor")]
    Empty,
    #[error("index {0} appears in more than two tensors")]
    IndexOveruse(Index),
    #[error("index {0} used with two different domain sizes")]
    InconsistentDomain(Index),
    #[error("contraction tree has {tree} leaves but the network has {network} tensors")]
    PlanMismatch { tree: usize, network: usize },
    #[error("malformed contraction tree: {0}")]
    MalformedTree(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A nonempty list of tensors in which no index occurs more than twice.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorNetwork {
    tensors: Vec<Tensor>,
}

impl TensorNetwork {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self, NetworkError> {
        if tensors.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut seen: BTreeMap<Index, (usize, usize)> = BTreeMap::new();
        for t in &tensors {
            for i in t.indices() {
                let entry = seen.entry(*i).or_insert((0, i.dim()));
                entry.0 += 1;
                if entry.0 > 2 {
                    return Err(NetworkError::IndexOveruse(*i));
                }
                if entry.1 != i.dim() {
                    return Err(NetworkError::InconsistentDomain(*i));
                }
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    /// Free indices (one occurrence) and bond indices (two occurrences).
    pub fn free_and_bond_indices(&self) -> (BTreeSet<Index>, BTreeSet<Index>) {
        let mut count: BTreeMap<Index, usize> = BTreeMap::new();
        for t in &self.tensors {
            for i in t.indices() {
                *count.entry(*i).or_default() += 1;
            }
        }
        let mut free = BTreeSet::new();
        let mut bond = BTreeSet::new();
        for (i, c) in count {
            if c == 1 {
                free.insert(i);
            } else {
                bond.insert(i);
            }
        }
        (free, bond)
    }

    pub fn free_indices(&self) -> BTreeSet<Index> {
        self.free_and_bond_indices().0
    }

    pub fn bond_indices(&self) -> BTreeSet<Index> {
        self.free_and_bond_indices().1
    }
}

/// The structure graph: one vertex per tensor (in network order) plus the
/// free vertex, and one edge per index.
#[derive(Debug, Clone)]
pub struct StructureGraph {
    pub graph: Graph,
    /// Index carried by each edge, in edge order.
    pub edge_index: Vec<Index>,
    pub free_vertex: usize,
}

impl StructureGraph {
    pub fn edge_of(&self, index: Index) -> Option<usize> {
        self.edge_index.iter().position(|i| *i == index)
    }
}

pub fn structure_graph(network: &TensorNetwork) -> StructureGraph {
    structure_graph_of(network.tensors.iter().map(Tensor::indices))
}

/// Structure graph of tensors given only by their index lists, which must
/// use every index at most twice.
pub fn structure_graph_of<'a>(index_lists: impl Iterator<Item = &'a [Index]>) -> StructureGraph {
    let mut holders: BTreeMap<Index, Vec<usize>> = BTreeMap::new();
    let mut z = 0;
    for (k, indices) in index_lists.enumerate() {
        for i in indices {
            holders.entry(*i).or_default().push(k);
        }
        z = k + 1;
    }
    let mut edges = Vec::with_capacity(holders.len());
    let mut edge_index = Vec::with_capacity(holders.len());
    for (i, h) in holders {
        let ends = match h[..] {
            [a] => (a, z),
            [a, b] => (a, b),
            _ => unreachable!("network invariant"),
        };
        edges.push(ends);
        edge_index.push(i);
    }
    StructureGraph {
        graph: Graph::new(z + 1, edges),
        edge_index,
        free_vertex: z,
    }
}

/// A rooted binary tree whose leaves are the tensors `0..num_leaves` of a
/// network. Internal node `num_leaves + k` is created by the `k`-th merge;
/// the last node is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContractionTree {
    num_leaves: usize,
    merges: Vec<(usize, usize)>,
}

impl ContractionTree {
    pub fn new(num_leaves: usize, merges: Vec<(usize, usize)>) -> Result<Self, NetworkError> {
        let bad = |m: String| Err(NetworkError::MalformedTree(m));
        if num_leaves == 0 {
            return bad("no leaves".into());
        }
        if merges.len() != num_leaves - 1 {
            return bad(format!("{} merges for {} leaves", merges.len(), num_leaves));
        }
        let mut used = vec![false; 2 * num_leaves - 1];
        for (k, &(a, b)) in merges.iter().enumerate() {
            let node = num_leaves + k;
            for c in [a, b] {
                if c >= node {
                    return bad(format!("node {node} refers to later node {c}"));
                }
                if used[c] {
                    return bad(format!("node {c} has two parents"));
                }
                used[c] = true;
            }
            if a == b {
                return bad(format!("node {node} merges {a} with itself"));
            }
        }
        Ok(Self { num_leaves, merges })
    }

    pub fn singleton() -> Self {
        Self {
            num_leaves: 1,
            merges: Vec::new(),
        }
    }

    /// Left-deep tree contracting leaves in order.
    pub fn caterpillar(order: &[usize]) -> Self {
        let n = order.len();
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        let mut acc = order[0];
        for (k, &leaf) in order.iter().enumerate().skip(1) {
            merges.push((acc, leaf));
            acc = n + k - 1;
        }
        Self::new(n, merges).expect("caterpillar is well formed")
    }

    /// Uniformly merges random pairs until one node remains.
    pub fn random<R: Rng>(num_leaves: usize, rng: &mut R) -> Self {
        let mut pool: Vec<usize> = (0..num_leaves).collect();
        let mut merges = Vec::new();
        while pool.len() > 1 {
            let a = pool.swap_remove(rng.gen_range(0..pool.len()));
            let b = pool.swap_remove(rng.gen_range(0..pool.len()));
            merges.push((a, b));
            pool.push(num_leaves + merges.len() - 1);
        }
        Self::new(num_leaves, merges).expect("random tree is well formed")
    }

    /// Greedy plan: repeatedly merges the pair sharing the most indices,
    /// breaking ties by smaller result rank.
    pub fn greedy(network: &TensorNetwork) -> Self {
        let n = network.len();
        let mut live: Vec<(usize, Vec<Index>)> = network
            .tensors()
            .iter()
            .enumerate()
            .map(|(k, t)| (k, t.indices().to_vec()))
            .collect();
        let mut merges = Vec::new();
        while live.len() > 1 {
            let mut best = (0, 1, (usize::MAX, usize::MAX));
            for x in 0..live.len() {
                for y in x + 1..live.len() {
                    let shared = live[x].1.iter().filter(|i| live[y].1.contains(i)).count();
                    let rank = live[x].1.len() + live[y].1.len() - 2 * shared;
                    let key = (usize::MAX - shared, rank);
                    if key < best.2 {
                        best = (x, y, key);
                    }
                }
            }
            let (x, y, _) = best;
            let (b_node, b_idx) = live.swap_remove(y);
            let (a_node, a_idx) = live.swap_remove(x);
            merges.push((a_node, b_node));
            live.push((n + merges.len() - 1, contracted_indices(&a_idx, &b_idx)));
        }
        Self::new(n, merges).expect("greedy tree is well formed")
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn merges(&self) -> &[(usize, usize)] {
        &self.merges
    }

    pub fn root(&self) -> usize {
        self.num_leaves + self.merges.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.num_leaves + self.merges.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.num_leaves
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        node.checked_sub(self.num_leaves).map(|k| self.merges[k])
    }

    /// Nodes in strict postorder: left subtree, right subtree, node.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_nodes());
        let mut stack = vec![(self.root(), false)];
        while let Some((node, expanded)) = stack.pop() {
            match self.children(node) {
                Some((l, r)) if !expanded => {
                    stack.push((node, true));
                    stack.push((r, false));
                    stack.push((l, false));
                }
                _ => out.push(node),
            }
        }
        out
    }

    /// Leaves below each node.
    pub fn leaf_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = (0..self.num_leaves).map(|l| vec![l]).collect();
        for &(a, b) in &self.merges {
            let mut s = sets[a].clone();
            s.extend_from_slice(&sets[b]);
            sets.push(s);
        }
        sets
    }

    /// Errors unless the tree has exactly one leaf per tensor of `network`.
    pub fn check(&self, network: &TensorNetwork) -> Result<(), NetworkError> {
        if self.num_leaves != network.len() {
            return Err(NetworkError::PlanMismatch {
                tree: self.num_leaves,
                network: network.len(),
            });
        }
        Ok(())
    }

    /// Line-based plan text, one `contract a b -> c` per merge in creation
    /// order.
    pub fn to_plan_string(&self) -> String {
        let mut out = String::new();
        for (k, (a, b)) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "contract {a} {b} -> {}", self.num_leaves + k);
        }
        out
    }

    pub fn parse_plan(text: &str, num_leaves: usize) -> Result<Self, NetworkError> {
        let mut merges = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f[..] {
                ["contract", a, b, "->", c] => a
                    .parse::<usize>()
                    .and_then(|a| Ok((a, b.parse::<usize>()?, c.parse::<usize>()?)))
                    .ok(),
                _ => None,
            };
            let Some((a, b, c)) = parsed else {
                return Err(NetworkError::MalformedTree(format!("bad plan line `{line}`")));
            };
            if c != num_leaves + merges.len() {
                return Err(NetworkError::MalformedTree(format!(
                    "expected node {} but line creates {c}",
                    num_leaves + merges.len()
                )));
            }
            merges.push((a, b));
        }
        Self::new(num_leaves, merges)
    }
}

/// Running byte count of live tensors during an execution.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MemoryTracker {
    pub live: u128,
    pub peak: u128,
}

impl MemoryTracker {
    fn alloc(&mut self, entries: u128) {
        self.live += entries * BYTES_PER_ENTRY;
        self.peak = self.peak.max(self.live);
    }

    fn free(&mut self, entries: u128) {
        self.live -= entries * BYTES_PER_ENTRY;
    }
}

/// Contracts a network along a contraction tree.
pub fn execute(network: &TensorNetwork, tree: &ContractionTree) -> Result<Tensor, NetworkError> {
    tree.check(network)?;
    execute_with(tree, |leaf| Ok(Cow::Borrowed(&network.tensors[leaf])), None)
}

/// Postorder execution with leaves produced on first use. When a tracker is
/// supplied, every leaf and intermediate buffer is accounted from creation
/// until its parent contraction completes.
pub(crate) fn execute_with<'a>(
    tree: &ContractionTree,
    mut leaf: impl FnMut(usize) -> Result<Cow<'a, Tensor>, NetworkError>,
    mut tracker: Option<&mut MemoryTracker>,
) -> Result<Tensor, NetworkError> {
    let mut stack: Vec<Cow<'a, Tensor>> = Vec::new();
    for node in tree.postorder() {
        if tree.is_leaf(node) {
            let t = leaf(node)?;
            if let Some(m) = tracker.as_deref_mut() {
                m.alloc(t.len() as u128);
            }
            stack.push(t);
        } else {
            let right = stack.pop().expect("postorder");
            let left = stack.pop().expect("postorder");
            let out = contract_pair(&left, &right)?;
            if let Some(m) = tracker.as_deref_mut() {
                m.alloc(out.len() as u128);
                m.free(left.len() as u128 + right.len() as u128);
            }
            stack.push(Cow::Owned(out));
        }
    }
    Ok(stack.pop().expect("root result").into_owned())
}

/// One pairwise contraction seen by a symbolic walk: the operand index sets
/// and the result index set.
pub(crate) struct SymbolicStep<'s> {
    pub left: &'s [Index],
    pub right: &'s [Index],
    pub out: &'s [Index],
}

/// Walks the tree in postorder on index sets only. `leaf_indices` maps a
/// leaf to its (possibly sliced) index list; `on_leaf` and `on_step` observe
/// the walk.
pub(crate) fn symbolic_walk(
    tree: &ContractionTree,
    leaf_indices: impl Fn(usize) -> Vec<Index>,
    mut on_leaf: impl FnMut(&[Index]),
    mut on_step: impl FnMut(SymbolicStep<'_>),
) {
    let mut stack: Vec<Vec<Index>> = Vec::new();
    for node in tree.postorder() {
        if tree.is_leaf(node) {
            let idx = leaf_indices(node);
            on_leaf(&idx);
            stack.push(idx);
        } else {
            let right = stack.pop().expect("postorder");
            let left = stack.pop().expect("postorder");
            let out = contracted_indices(&left, &right);
            on_step(SymbolicStep {
                left: &left,
                right: &right,
                out: &out,
            });
            stack.push(out);
        }
    }
}

/// Largest rank among leaves and intermediate results.
pub fn max_rank(network: &TensorNetwork, tree: &ContractionTree) -> Result<usize, NetworkError> {
    tree.check(network)?;
    let best = std::cell::Cell::new(0);
    symbolic_walk(
        tree,
        |l| network.tensors[l].indices().to_vec(),
        |idx| best.set(best.get().max(idx.len())),
        |s| best.set(best.get().max(s.out.len())),
    );
    Ok(best.get())
}

/// Multiply-add count: for each pairwise contraction, the product of the
/// domain sizes of every index involved.
pub fn op_count(network: &TensorNetwork, tree: &ContractionTree) -> Result<f64, NetworkError> {
    op_count_sliced(network, tree, &BTreeSet::new())
}

pub(crate) fn op_count_sliced(
    network: &TensorNetwork,
    tree: &ContractionTree,
    sliced: &BTreeSet<Index>,
) -> Result<f64, NetworkError> {
    tree.check(network)?;
    let mut ops = 0.0;
    symbolic_walk(
        tree,
        |l| {
            network.tensors[l]
                .indices()
                .iter()
                .filter(|i| !sliced.contains(i))
                .copied()
                .collect()
        },
        |_| {},
        |s| {
            let union = s.left.iter().chain(s.right.iter().filter(|i| !s.left.contains(i)));
            ops += entry_count(union) as f64;
        },
    );
    Ok(ops)
}

/// Estimated execution seconds: multiply-add count over `throughput`.
pub fn time_cost_with(
    network: &TensorNetwork,
    tree: &ContractionTree,
    throughput: f64,
) -> Result<f64, NetworkError> {
    Ok(op_count(network, tree)? / throughput)
}

pub fn time_cost(network: &TensorNetwork, tree: &ContractionTree) -> Result<f64, NetworkError> {
    time_cost_with(network, tree, DEFAULT_THROUGHPUT)
}

/// Checks that `coarse` is a partial contraction of `fine` under `map`
/// (fine tensor -> coarse tensor): contracting each preimage reproduces the
/// coarse tensor within 1e-10 relative tolerance.
pub fn verify_partial_contraction(fine: &TensorNetwork, coarse: &TensorNetwork, map: &[usize]) -> bool {
    if map.len() != fine.len() || map.iter().any(|&k| k >= coarse.len()) {
        return false;
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); coarse.len()];
    for (k, &target) in map.iter().enumerate() {
        groups[target].push(k);
    }
    groups.iter().zip(coarse.tensors()).all(|(group, expected)| {
        if group.is_empty() {
            return false;
        }
        let parts: Vec<Tensor> = group.iter().map(|&k| fine.tensors[k].clone()).collect();
        let Ok(sub) = TensorNetwork::new(parts) else {
            return false;
        };
        let plan = ContractionTree::greedy(&sub);
        match execute(&sub, &plan) {
            Ok(got) => {
                let same_indices = got.rank() == expected.rank()
                    && got.indices().iter().all(|i| expected.has_index(*i));
                same_indices && got.approx_eq(expected, 1e-10)
            }
            Err(_) => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx(id: u32) -> Index {
        Index::new(id, 2)
    }

    fn matrix(a: Index, b: Index, v: [f64; 4]) -> Tensor {
        Tensor::new(vec![a, b], v.to_vec()).unwrap()
    }

    #[test]
    fn free_and_bond() {
        let n = TensorNetwork::new(vec![matrix(idx(0), idx(1), [1.; 4])]).unwrap();
        let (f, b) = n.free_and_bond_indices();
        assert_eq!(f.len(), 2);
        assert!(b.is_empty());

        let n = TensorNetwork::new(vec![
            matrix(idx(0), idx(1), [1.; 4]),
            matrix(idx(1), idx(2), [1.; 4]),
        ])
        .unwrap();
        let (f, b) = n.free_and_bond_indices();
        assert_eq!(f.into_iter().collect::<Vec<_>>(), vec![idx(0), idx(2)]);
        assert_eq!(b.into_iter().collect::<Vec<_>>(), vec![idx(1)]);
    }

    #[test]
    fn overuse_rejected() {
        let t = Tensor::new(vec![idx(0)], vec![1., 1.]).unwrap();
        assert_eq!(
            TensorNetwork::new(vec![t.clone(), t.clone(), t]),
            Err(NetworkError::IndexOveruse(idx(0)))
        );
        assert_eq!(TensorNetwork::new(vec![]), Err(NetworkError::Empty));
    }

    #[test]
    fn structure_graph_shapes() {
        let n = TensorNetwork::new(vec![Tensor::scalar(3.0)]).unwrap();
        let g = structure_graph(&n);
        assert_eq!(g.graph.num_vertices(), 2);
        assert_eq!(g.graph.num_edges(), 0);

        let n = TensorNetwork::new(vec![
            matrix(idx(0), idx(1), [1.; 4]),
            matrix(idx(1), idx(2), [1.; 4]),
        ])
        .unwrap();
        let g = structure_graph(&n);
        assert_eq!(g.free_vertex, 2);
        assert_eq!(g.graph.edges(), &[(0, 2), (0, 1), (1, 2)]);
        for v in 0..2 {
            assert_eq!(g.graph.degree(v), n.tensors()[v].rank());
        }
    }

    #[test]
    fn execute_singleton_and_pair() {
        let t = matrix(idx(0), idx(1), [1., 2., 3., 4.]);
        let n = TensorNetwork::new(vec![t.clone()]).unwrap();
        assert_eq!(execute(&n, &ContractionTree::singleton()).unwrap(), t);

        let n = TensorNetwork::new(vec![
            matrix(idx(0), idx(1), [1., 2., 3., 4.]),
            matrix(idx(1), idx(2), [5., 6., 7., 8.]),
        ])
        .unwrap();
        let plan = ContractionTree::caterpillar(&[0, 1]);
        assert_eq!(execute(&n, &plan).unwrap().values(), &[19., 22., 43., 50.]);
        assert_eq!(max_rank(&n, &plan).unwrap(), 2);
        assert_eq!(op_count(&n, &plan).unwrap(), 8.0);
        assert!((time_cost(&n, &plan).unwrap() - 8e-9).abs() < 1e-24);
        assert_eq!(time_cost(&n, &ContractionTree::singleton()), Err(NetworkError::PlanMismatch { tree: 1, network: 2 }));
    }

    #[test]
    fn plan_mismatch_checked_first() {
        let n = TensorNetwork::new(vec![Tensor::scalar(1.0)]).unwrap();
        let plan = ContractionTree::caterpillar(&[0, 1]);
        assert!(matches!(execute(&n, &plan), Err(NetworkError::PlanMismatch { .. })));
        assert!(matches!(max_rank(&n, &plan), Err(NetworkError::PlanMismatch { .. })));
    }

    #[test]
    fn tree_validation() {
        assert!(ContractionTree::new(3, vec![(0, 1), (3, 2)]).is_ok());
        assert!(ContractionTree::new(3, vec![(0, 1), (0, 2)]).is_err());
        assert!(ContractionTree::new(3, vec![(0, 4), (3, 2)]).is_err());
        assert!(ContractionTree::new(3, vec![(0, 1)]).is_err());
    }

    #[test]
    fn plan_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..8 {
            let t = ContractionTree::random(n, &mut rng);
            let text = t.to_plan_string();
            assert_eq!(ContractionTree::parse_plan(&text, n).unwrap(), t);
        }
        assert_eq!(
            ContractionTree::caterpillar(&[0, 1, 2]).to_plan_string(),
            "contract 0 1 -> 3\ncontract 3 2 -> 4\n"
        );
        assert!(ContractionTree::parse_plan("contract 0 1 -> 5\n", 2).is_err());
        assert!(ContractionTree::parse_plan("merge 0 1\n", 2).is_err());
    }

    #[test]
    fn postorder_is_left_first() {
        let t = ContractionTree::new(4, vec![(2, 3), (0, 1), (5, 4)]).unwrap();
        assert_eq!(t.postorder(), vec![0, 1, 5, 2, 3, 4, 6]);
    }

    #[test]
    fn partial_contraction_checks() {
        let a = matrix(idx(0), idx(1), [1., 2., 3., 4.]);
        let b = matrix(idx(1), idx(2), [5., 6., 7., 8.]);
        let fine = TensorNetwork::new(vec![a.clone(), b.clone()]).unwrap();
        assert!(verify_partial_contraction(&fine, &fine, &[0, 1]));

        let merged = contract_pair(&a, &b).unwrap();
        let coarse = TensorNetwork::new(vec![merged.clone()]).unwrap();
        assert!(verify_partial_contraction(&fine, &coarse, &[0, 0]));

        let mut v = merged.values().to_vec();
        v[2] += 1e-3;
        let bad = TensorNetwork::new(vec![Tensor::new(merged.indices().to_vec(), v).unwrap()]).unwrap();
        assert!(!verify_partial_contraction(&fine, &bad, &[0, 0]));
        assert!(!verify_partial_contraction(&fine, &coarse, &[0]));
    }

    #[test]
    fn tracked_execution_counts_live_buffers() {
        let n = TensorNetwork::new(vec![
            matrix(idx(0), idx(1), [1.; 4]),
            matrix(idx(1), idx(2), [1.; 4]),
        ])
        .unwrap();
        let mut m = MemoryTracker::default();
        let plan = ContractionTree::caterpillar(&[0, 1]);
        execute_with(&plan, |l| Ok(Cow::Borrowed(&n.tensors()[l])), Some(&mut m)).unwrap();
        assert_eq!(m.peak, 96);
        assert_eq!(m.live, 32);
    }
}
