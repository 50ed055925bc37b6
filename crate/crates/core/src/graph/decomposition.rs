use std::collections::BTreeMap;

use thiserror::Error;

use super::tree::{normalize_leaf_labelled, UnrootedTree};
use super::Graph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecompositionError {
    #[error("decomposition tree is not a tree")]
    NotATree,
    #[error("tree node {0} has a degree the decomposition shape forbids")]
    BadDegree(usize),
    #[error("graph vertex {0} is in no bag")]
    MissingVertex(usize),
    #[error("bag of node {node} names vertex {vertex} outside the graph")]
    UnknownVertex { node: usize, vertex: usize },
    #[error("no bag holds both endpoints of edge {0}")]
    UncoveredEdge(usize),
    #[error("bags holding vertex {0} are not connected in the tree")]
    DisconnectedBagTrace(usize),
    #[error("graph element {0} is not a leaf of the decomposition")]
    MissingLeaf(usize),
    #[error("graph element {0} labels more than one leaf")]
    DuplicateLeaf(usize),
    #[error("leaf {0} carries no graph element")]
    UnlabelledLeaf(usize),
    #[error("inner node {0} carries a label")]
    LabelledInnerNode(usize),
    #[error("branch decompositions need at least one edge")]
    EmptyEdgeSet,
    #[error("no bag contains both endpoints of edge {0}")]
    NoHostBag(usize),
}

/// A tree decomposition: a tree of maximum degree three with a bag of graph
/// vertices at every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeDecomposition {
    pub tree: UnrootedTree,
    pub bags: Vec<Vec<usize>>,
}

impl TreeDecomposition {
    /// Builds a decomposition from any tree shape, splitting nodes of degree
    /// above three into chains of copies of their bag.
    pub fn from_tree(tree: UnrootedTree, bags: Vec<Vec<usize>>) -> Self {
        assert_eq!(tree.num_nodes(), bags.len());
        let mut adj: Vec<Vec<usize>> = (0..tree.num_nodes()).map(|n| tree.neighbors(n).to_vec()).collect();
        let mut bags = bags;
        let mut n = 0;
        while n < adj.len() {
            while adj[n].len() > 3 {
                let extra = adj.len();
                let tail = adj[n].split_off(2);
                for &m in &tail {
                    for x in adj[m].iter_mut() {
                        if *x == n {
                            *x = extra;
                        }
                    }
                }
                adj.push(tail);
                adj[extra].push(n);
                adj[n].push(extra);
                bags.push(bags[n].clone());
            }
            n += 1;
        }
        for bag in &mut bags {
            bag.sort_unstable();
            bag.dedup();
        }
        Self {
            tree: UnrootedTree::from_adjacency_unchecked(adj),
            bags,
        }
    }

    pub fn width(&self) -> usize {
        self.bags.iter().map(Vec::len).max().unwrap_or(0).saturating_sub(1)
    }

    /// Width after checking every decomposition condition against `g`.
    pub fn checked_width(&self, g: &Graph) -> Result<usize, DecompositionError> {
        self.validate(g)?;
        Ok(self.width())
    }

    pub fn validate(&self, g: &Graph) -> Result<(), DecompositionError> {
        check_tree(&self.tree)?;
        if self.bags.len() != self.tree.num_nodes() {
            return Err(DecompositionError::NotATree);
        }
        if let Some(n) = (0..self.tree.num_nodes()).find(|&n| self.tree.degree(n) > 3) {
            return Err(DecompositionError::BadDegree(n));
        }
        let mut holders: Vec<Vec<usize>> = vec![Vec::new(); g.num_vertices()];
        for (node, bag) in self.bags.iter().enumerate() {
            for &v in bag {
                if v >= g.num_vertices() {
                    return Err(DecompositionError::UnknownVertex { node, vertex: v });
                }
                holders[v].push(node);
            }
        }
        // (1) every vertex appears somewhere
        if let Some(v) = holders.iter().position(Vec::is_empty) {
            return Err(DecompositionError::MissingVertex(v));
        }
        // (2) every edge sits inside one bag
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            if !self.bags.iter().any(|b| b.contains(&u) && b.contains(&v)) {
                return Err(DecompositionError::UncoveredEdge(e));
            }
        }
        // (3) the nodes holding each vertex induce a connected subtree
        for (v, nodes) in holders.iter().enumerate() {
            if !induces_connected(&self.tree, nodes) {
                return Err(DecompositionError::DisconnectedBagTrace(v));
            }
        }
        Ok(())
    }
}

fn check_tree(tree: &UnrootedTree) -> Result<(), DecompositionError> {
    let arcs = tree.arcs();
    if UnrootedTree::from_arcs(tree.num_nodes(), &arcs).is_none() {
        return Err(DecompositionError::NotATree);
    }
    Ok(())
}

fn induces_connected(tree: &UnrootedTree, nodes: &[usize]) -> bool {
    if nodes.is_empty() {
        return true;
    }
    let mut inside = vec![false; tree.num_nodes()];
    for &n in nodes {
        inside[n] = true;
    }
    let mut seen = vec![false; tree.num_nodes()];
    let mut stack = vec![nodes[0]];
    seen[nodes[0]] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in tree.neighbors(u) {
            if inside[v] && !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == nodes.len()
}

/// Checks a leaf labelling: a binary tree whose leaves carry distinct
/// elements covering `0..count` and whose inner nodes carry none.
fn check_leaf_labels(
    tree: &UnrootedTree,
    labels: &[Option<usize>],
    count: usize,
) -> Result<(), DecompositionError> {
    check_tree(tree)?;
    if labels.len() != tree.num_nodes() {
        return Err(DecompositionError::NotATree);
    }
    if !tree.is_binary() {
        let n = (0..tree.num_nodes())
            .find(|&n| !matches!(tree.degree(n), 1 | 3))
            .unwrap_or(0);
        return Err(DecompositionError::BadDegree(n));
    }
    let mut seen = vec![false; count];
    for (node, label) in labels.iter().enumerate() {
        let leaf = tree.degree(node) <= 1;
        match (leaf, label) {
            (true, None) => return Err(DecompositionError::UnlabelledLeaf(node)),
            (false, Some(_)) => return Err(DecompositionError::LabelledInnerNode(node)),
            (true, Some(x)) => {
                if *x >= count {
                    return Err(DecompositionError::MissingLeaf(*x));
                }
                if seen[*x] {
                    return Err(DecompositionError::DuplicateLeaf(*x));
                }
                seen[*x] = true;
            }
            (false, None) => {}
        }
    }
    match seen.iter().position(|s| !s) {
        Some(x) => Err(DecompositionError::MissingLeaf(x)),
        None => Ok(()),
    }
}

/// Children lists and a postorder for the tree rooted at node 0.
fn rooted_postorder(tree: &UnrootedTree) -> (Vec<Option<usize>>, Vec<usize>) {
    let (parent, mut order) = tree.rooted(0);
    order.reverse();
    (parent, order)
}

/// A branch decomposition: an unrooted binary tree whose leaves are the
/// edges of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchDecomposition {
    pub tree: UnrootedTree,
    /// Edge carried by each tree node (leaves only).
    pub leaf_edge: Vec<Option<usize>>,
}

impl BranchDecomposition {
    /// Normalizes a leaf-labelled tree-shaped adjacency into a branch
    /// decomposition.
    pub fn from_labelled(adj: Vec<Vec<usize>>, labels: Vec<Option<usize>>) -> Self {
        let (tree, leaf_edge) = normalize_leaf_labelled(adj, labels);
        Self { tree, leaf_edge }
    }

    /// Tree node of each edge's leaf.
    pub fn edge_leaves(&self, num_edges: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; num_edges];
        for (n, l) in self.leaf_edge.iter().enumerate() {
            if let Some(e) = l {
                out[*e] = n;
            }
        }
        out
    }

    pub fn validate(&self, g: &Graph) -> Result<(), DecompositionError> {
        if g.num_edges() == 0 {
            return Err(DecompositionError::EmptyEdgeSet);
        }
        check_leaf_labels(&self.tree, &self.leaf_edge, g.num_edges())
    }

    pub fn checked_width(&self, g: &Graph) -> Result<usize, DecompositionError> {
        self.validate(g)?;
        Ok(self.width(g))
    }

    /// Largest arc boundary, computed in one leaves-to-root sweep. Each node
    /// keeps, per graph vertex, how many incident edge ends lie below it; a
    /// vertex is on the boundary of the arc above the node when some but not
    /// all of its edge ends are below.
    pub fn width(&self, g: &Graph) -> usize {
        if self.tree.num_nodes() <= 1 {
            return 0;
        }
        let (parent, order) = rooted_postorder(&self.tree);
        let mut below: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); self.tree.num_nodes()];
        let mut best = 0;
        for n in order {
            let mut counts = std::mem::take(&mut below[n]);
            if let Some(e) = self.leaf_edge[n] {
                let (u, v) = g.endpoints(e);
                *counts.entry(u).or_default() += 1;
                *counts.entry(v).or_default() += 1;
            }
            if let Some(p) = parent[n] {
                let boundary = counts.iter().filter(|(&v, &c)| c < g.degree(v)).count();
                best = best.max(boundary);
                counts.retain(|&v, c| *c < g.degree(v));
                let up = &mut below[p];
                if up.len() < counts.len() {
                    std::mem::swap(up, &mut counts);
                }
                for (v, c) in counts {
                    *up.entry(v).or_default() += c;
                }
            }
        }
        best
    }
}

/// A carving decomposition: an unrooted binary tree whose leaves are the
/// vertices of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarvingDecomposition {
    pub tree: UnrootedTree,
    /// Graph vertex carried by each tree node (leaves only).
    pub leaf_vertex: Vec<Option<usize>>,
}

impl CarvingDecomposition {
    pub fn from_labelled(adj: Vec<Vec<usize>>, labels: Vec<Option<usize>>) -> Self {
        let (tree, leaf_vertex) = normalize_leaf_labelled(adj, labels);
        Self { tree, leaf_vertex }
    }

    pub fn vertex_leaves(&self, num_vertices: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; num_vertices];
        for (n, l) in self.leaf_vertex.iter().enumerate() {
            if let Some(v) = l {
                out[*v] = n;
            }
        }
        out
    }

    pub fn validate(&self, g: &Graph) -> Result<(), DecompositionError> {
        check_leaf_labels(&self.tree, &self.leaf_vertex, g.num_vertices())
    }

    pub fn checked_width(&self, g: &Graph) -> Result<usize, DecompositionError> {
        self.validate(g)?;
        Ok(self.width(g))
    }

    /// Largest number of edges crossing an arc. Every edge adds one to each
    /// arc on the tree path between its endpoints' leaves.
    pub fn width(&self, g: &Graph) -> usize {
        self.arc_loads(g).into_iter().max().unwrap_or(0)
    }

    /// Crossing count of the arc above every non-root node (root: 0), with
    /// the tree rooted at node 0.
    pub fn arc_loads(&self, g: &Graph) -> Vec<usize> {
        let n = self.tree.num_nodes();
        let (parent, pre) = self.tree.rooted(0);
        let mut depth = vec![0usize; n];
        for &u in &pre {
            if let Some(p) = parent[u] {
                depth[u] = depth[p] + 1;
            }
        }
        let leaf_of = self.vertex_leaves(g.num_vertices());
        let mut load = vec![0usize; n];
        for &(u, v) in g.edges() {
            let (mut a, mut b) = (leaf_of[u], leaf_of[v]);
            while a != b {
                if depth[a] >= depth[b] {
                    load[a] += 1;
                    a = parent[a].expect("non-root");
                } else {
                    load[b] += 1;
                    b = parent[b].expect("non-root");
                }
            }
        }
        load
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_tree(n: usize) -> UnrootedTree {
        let arcs: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
        UnrootedTree::from_arcs(n, &arcs).unwrap()
    }

    fn star3() -> UnrootedTree {
        UnrootedTree::from_arcs(4, &[(0, 1), (0, 2), (0, 3)]).unwrap()
    }

    #[test]
    fn single_bag_k4() {
        let g = Graph::new(4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let td = TreeDecomposition {
            tree: UnrootedTree::single(),
            bags: vec![vec![0, 1, 2, 3]],
        };
        assert_eq!(td.checked_width(&g), Ok(3));
    }

    #[test]
    fn tree_decomposition_violations() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]);
        let good = TreeDecomposition {
            tree: path_tree(2),
            bags: vec![vec![0, 1], vec![1, 2]],
        };
        assert_eq!(good.checked_width(&g), Ok(1));

        let missing = TreeDecomposition {
            tree: path_tree(2),
            bags: vec![vec![0, 1], vec![1]],
        };
        assert_eq!(missing.validate(&g), Err(DecompositionError::MissingVertex(2)));

        let uncovered = TreeDecomposition {
            tree: path_tree(2),
            bags: vec![vec![0, 1], vec![2]],
        };
        assert_eq!(uncovered.validate(&g), Err(DecompositionError::UncoveredEdge(1)));

        let broken = TreeDecomposition {
            tree: path_tree(3),
            bags: vec![vec![0, 1], vec![0, 2], vec![1, 2]],
        };
        assert_eq!(broken.validate(&g), Err(DecompositionError::DisconnectedBagTrace(1)));
    }

    #[test]
    fn from_tree_splits_wide_nodes() {
        let tree = UnrootedTree::from_arcs(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let td = TreeDecomposition::from_tree(tree, vec![vec![0], vec![0], vec![0], vec![0], vec![0]]);
        assert!((0..td.tree.num_nodes()).all(|n| td.tree.degree(n) <= 3));
        assert_eq!(td.checked_width(&Graph::new(1, vec![])), Ok(0));
    }

    #[test]
    fn triangle_branch_width() {
        let g = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)]);
        let bd = BranchDecomposition {
            tree: star3(),
            leaf_edge: vec![None, Some(0), Some(1), Some(2)],
        };
        assert_eq!(bd.checked_width(&g), Ok(2));
    }

    #[test]
    fn branch_violations() {
        let g = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)]);
        let missing = BranchDecomposition {
            tree: star3(),
            leaf_edge: vec![None, Some(0), Some(1), Some(1)],
        };
        assert_eq!(missing.validate(&g), Err(DecompositionError::DuplicateLeaf(1)));
        let unlabelled = BranchDecomposition {
            tree: star3(),
            leaf_edge: vec![None, Some(0), Some(1), None],
        };
        assert_eq!(unlabelled.validate(&g), Err(DecompositionError::UnlabelledLeaf(3)));
        let inner = BranchDecomposition {
            tree: star3(),
            leaf_edge: vec![Some(2), Some(0), Some(1), None],
        };
        assert_eq!(inner.validate(&g), Err(DecompositionError::LabelledInnerNode(0)));
        let shape = BranchDecomposition {
            tree: path_tree(3),
            leaf_edge: vec![Some(0), None, Some(1)],
        };
        assert!(matches!(shape.validate(&Graph::new(3, vec![(0, 1), (1, 2)])), Err(DecompositionError::BadDegree(1))));
        assert_eq!(
            shape.validate(&Graph::new(2, vec![])),
            Err(DecompositionError::EmptyEdgeSet)
        );
    }

    #[test]
    fn star_carving_width() {
        // K_{1,3}: centre 0, leaves 1..3; the carving tree is a star too
        let g = Graph::new(4, vec![(0, 1), (0, 2), (0, 3)]);
        let cd = CarvingDecomposition {
            tree: UnrootedTree::from_arcs(6, &[(4, 0), (4, 1), (4, 5), (5, 2), (5, 3)]).unwrap(),
            leaf_vertex: vec![Some(0), Some(1), Some(2), Some(3), None, None],
        };
        assert_eq!(cd.checked_width(&g), Ok(3));
    }

    #[test]
    fn labelled_normalization_produces_binary_leaves() {
        // a star with five labelled arms and a dead-end arm
        let adj = vec![vec![1, 2, 3, 4, 5, 6], vec![0], vec![0], vec![0], vec![0], vec![0], vec![0]];
        let labels = vec![None, Some(0), Some(1), Some(2), Some(3), Some(4), None];
        let bd = BranchDecomposition::from_labelled(adj, labels);
        assert!(bd.tree.is_binary());
        let g = Graph::new(2, vec![(0, 1); 5]);
        assert!(bd.validate(&g).is_ok());
    }
}
