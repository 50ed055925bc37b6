//! Multigraphs, the three tree-shaped decompositions, heuristics that build
//! them, PACE file interchange, and the parallel planner portfolio.

mod decomposition;
mod heuristics;
pub mod pace;
pub mod portfolio;
mod tree;

pub use decomposition::{
    BranchDecomposition, CarvingDecomposition, DecompositionError, TreeDecomposition,
};
pub use heuristics::{
    caterpillar_branch_decomposition, elimination_tree_decomposition, min_degree_tree_decomposition,
    elimination_order, min_fill_tree_decomposition, tree_to_branch, EliminationRule,
};
pub use tree::UnrootedTree;

/// An undirected multigraph on vertices `0..num_vertices`. Edges are
/// identified by their position in the edge list; parallel edges are
/// allowed, self-loops are not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(num_vertices: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut incident = vec![Vec::new(); num_vertices];
        for (e, &(u, v)) in edges.iter().enumerate() {
            assert!(u < num_vertices && v < num_vertices, "edge endpoint out of range");
            assert_ne!(u, v, "self-loops are not supported");
            incident[u].push(e);
            incident[v].push(e);
        }
        Self {
            num_vertices,
            edges,
            incident,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Endpoints of edge `e`.
    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Edges incident to vertex `v`.
    pub fn incident(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.incident[v].len()
    }

    /// Sorted, deduplicated neighbour lists (parallel edges collapsed).
    pub fn simple_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incidence_and_simple_view() {
        let g = Graph::new(3, vec![(0, 1), (1, 0), (1, 2)]);
        assert_eq!(g.incident(1), &[0, 1, 2]);
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.simple_adjacency()[1], vec![0, 2]);
    }
}
