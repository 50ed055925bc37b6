//! Elimination-ordering tree decompositions and conversions to branch
//! decompositions.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decomposition::{BranchDecomposition, DecompositionError, TreeDecomposition};
use super::tree::UnrootedTree;
use super::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EliminationRule {
    MinFill,
    MinDegree,
}

impl EliminationRule {
    pub fn name(self) -> &'static str {
        match self {
            EliminationRule::MinFill => "minfill",
            EliminationRule::MinDegree => "mindegree",
        }
    }
}

/// Greedy elimination ordering; ties go to the vertex with the smallest
/// seed-derived random key.
pub fn elimination_order(g: &Graph, rule: EliminationRule, seed: u64) -> Vec<usize> {
    let n = g.num_vertices();
    let mut adj: Vec<BTreeSet<usize>> = g
        .simple_adjacency()
        .into_iter()
        .map(|l| l.into_iter().collect())
        .collect();
    let mut keys: Vec<usize> = (0..n).collect();
    if seed != 0 {
        keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| {
                let score = match rule {
                    EliminationRule::MinDegree => adj[v].len(),
                    EliminationRule::MinFill => fill_in(&adj, v),
                };
                (score, keys[v])
            })
            .expect("vertex left");
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for (k, &a) in nbrs.iter().enumerate() {
            adj[a].remove(&v);
            for &b in &nbrs[k + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
        alive[v] = false;
        order.push(v);
    }
    order
}

fn fill_in(adj: &[BTreeSet<usize>], v: usize) -> usize {
    let nbrs: Vec<usize> = adj[v].iter().copied().collect();
    let mut missing = 0;
    for (k, &a) in nbrs.iter().enumerate() {
        for &b in &nbrs[k + 1..] {
            if !adj[a].contains(&b) {
                missing += 1;
            }
        }
    }
    missing
}

/// Tree decomposition induced by an elimination order: each vertex's bag is
/// itself plus its neighbours at elimination time, hung below the bag of the
/// first of those neighbours to be eliminated.
pub fn elimination_tree_decomposition(g: &Graph, order: &[usize]) -> TreeDecomposition {
    let n = g.num_vertices();
    assert_eq!(order.len(), n);
    if n == 0 {
        return TreeDecomposition {
            tree: UnrootedTree::single(),
            bags: vec![Vec::new()],
        };
    }
    let mut position = vec![0usize; n];
    for (k, &v) in order.iter().enumerate() {
        position[v] = k;
    }
    let mut adj: Vec<BTreeSet<usize>> = g
        .simple_adjacency()
        .into_iter()
        .map(|l| l.into_iter().collect())
        .collect();
    let mut bags = Vec::with_capacity(n);
    let mut arcs = Vec::with_capacity(n);
    let mut roots = Vec::new();
    for (k, &v) in order.iter().enumerate() {
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        let mut bag = nbrs.clone();
        bag.push(v);
        bag.sort_unstable();
        bags.push(bag);
        match nbrs.iter().min_by_key(|&&u| position[u]) {
            Some(&u) => arcs.push((k, position[u])),
            None => roots.push(k),
        }
        for (i, &a) in nbrs.iter().enumerate() {
            adj[a].remove(&v);
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    // join the per-component trees; their bags are disjoint
    for w in roots.windows(2) {
        arcs.push((w[0], w[1]));
    }
    let tree = UnrootedTree::from_arcs(n, &arcs).expect("elimination forest joined into a tree");
    TreeDecomposition::from_tree(tree, bags)
}

pub fn min_fill_tree_decomposition(g: &Graph, seed: u64) -> TreeDecomposition {
    elimination_tree_decomposition(g, &elimination_order(g, EliminationRule::MinFill, seed))
}

pub fn min_degree_tree_decomposition(g: &Graph, seed: u64) -> TreeDecomposition {
    elimination_tree_decomposition(g, &elimination_order(g, EliminationRule::MinDegree, seed))
}

/// Hangs every edge as a leaf under the first node whose bag holds both of
/// its endpoints, then prunes and reshapes the host tree. Each arc's
/// boundary stays inside one bag, so the width is at most the tree
/// decomposition's width plus one.
pub fn tree_to_branch(td: &TreeDecomposition, g: &Graph) -> Result<BranchDecomposition, DecompositionError> {
    if g.num_edges() == 0 {
        return Err(DecompositionError::EmptyEdgeSet);
    }
    let hosts = td.tree.num_nodes();
    let mut adj: Vec<Vec<usize>> = (0..hosts).map(|n| td.tree.neighbors(n).to_vec()).collect();
    let mut labels: Vec<Option<usize>> = vec![None; hosts];
    for (e, &(u, v)) in g.edges().iter().enumerate() {
        let host = td
            .bags
            .iter()
            .position(|b| b.contains(&u) && b.contains(&v))
            .ok_or(DecompositionError::NoHostBag(e))?;
        let leaf = adj.len();
        adj.push(vec![host]);
        adj[host].push(leaf);
        labels.push(Some(e));
    }
    Ok(BranchDecomposition::from_labelled(adj, labels))
}

/// A caterpillar whose leaves follow `edge_order`.
pub fn caterpillar_branch_decomposition(g: &Graph, edge_order: &[usize]) -> BranchDecomposition {
    assert!(g.num_edges() > 0, "branch decompositions need an edge");
    assert_eq!(edge_order.len(), g.num_edges());
    let m = edge_order.len();
    // spine nodes 0..m, leaf of edge k is node m + k
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * m];
    let mut labels = vec![None; 2 * m];
    for k in 0..m {
        if k + 1 < m {
            adj[k].push(k + 1);
            adj[k + 1].push(k);
        }
        adj[k].push(m + k);
        adj[m + k].push(k);
        labels[m + k] = Some(edge_order[k]);
    }
    BranchDecomposition::from_labelled(adj, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        Graph::new(n, (1..n).map(|k| (k - 1, k)).collect())
    }

    fn cycle(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|k| (k, (k + 1) % n)).collect())
    }

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                e.push((a, b));
            }
        }
        Graph::new(n, e)
    }

    /// Incidence graph of (x1 | ... | xn) & (-x1 | ... | -xn).
    fn psi_incidence(n: usize) -> Graph {
        Graph::new(n + 2, (0..n).flat_map(|k| [(k, n), (k, n + 1)]).collect())
    }

    #[test]
    fn path_has_width_one() {
        let g = path(5);
        for seed in 0..4 {
            assert_eq!(min_fill_tree_decomposition(&g, seed).checked_width(&g), Ok(1));
            assert_eq!(min_degree_tree_decomposition(&g, seed).checked_width(&g), Ok(1));
        }
    }

    #[test]
    fn psi_graphs() {
        for n in 4..=12 {
            let inc = psi_incidence(n);
            assert_eq!(min_fill_tree_decomposition(&inc, 0).checked_width(&inc), Ok(2));
            assert_eq!(min_degree_tree_decomposition(&inc, 0).checked_width(&inc), Ok(2));
            let primal = complete(n);
            assert_eq!(min_fill_tree_decomposition(&primal, 0).checked_width(&primal), Ok(n - 1));
        }
    }

    #[test]
    fn disconnected_graph_joins_components() {
        let g = Graph::new(5, vec![(0, 1), (3, 4)]);
        let td = min_fill_tree_decomposition(&g, 7);
        assert_eq!(td.checked_width(&g), Ok(1));
    }

    #[test]
    fn tree_to_branch_bounds() {
        let tri = cycle(3);
        let td = TreeDecomposition {
            tree: UnrootedTree::single(),
            bags: vec![vec![0, 1, 2]],
        };
        let bd = tree_to_branch(&td, &tri).unwrap();
        assert_eq!(bd.checked_width(&tri), Ok(2));

        let p3 = path(3);
        let td = min_fill_tree_decomposition(&p3, 0);
        assert_eq!(tree_to_branch(&td, &p3).unwrap().checked_width(&p3), Ok(1));

        for n in 4..=8 {
            let g = psi_incidence(n);
            let td = min_fill_tree_decomposition(&g, 0);
            let w = tree_to_branch(&td, &g).unwrap().checked_width(&g).unwrap();
            assert!(w <= 3, "n={n} width {w}");
        }
        assert_eq!(
            tree_to_branch(&td, &Graph::new(3, vec![])),
            Err(DecompositionError::EmptyEdgeSet)
        );
    }

    #[test]
    fn caterpillars() {
        let single = Graph::new(2, vec![(0, 1)]);
        let bd = caterpillar_branch_decomposition(&single, &[0]);
        assert!(bd.checked_width(&single).unwrap() <= 2);

        let c4 = cycle(4);
        assert_eq!(caterpillar_branch_decomposition(&c4, &[0, 1, 2, 3]).checked_width(&c4), Ok(2));

        let k4 = complete(4);
        assert!(caterpillar_branch_decomposition(&k4, &[5, 0, 3, 1, 4, 2]).checked_width(&k4).unwrap() <= 4);
    }
}
