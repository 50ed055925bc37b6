use std::collections::VecDeque;

/// An unrooted tree on nodes `0..num_nodes()` stored as adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnrootedTree {
    adj: Vec<Vec<usize>>,
}

impl UnrootedTree {
    /// Builds a tree from an arc list; `None` unless the arcs form a single
    /// tree spanning every node.
    pub fn from_arcs(num_nodes: usize, arcs: &[(usize, usize)]) -> Option<Self> {
        if num_nodes == 0 || arcs.len() + 1 != num_nodes {
            return None;
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for &(u, v) in arcs {
            if u >= num_nodes || v >= num_nodes || u == v {
                return None;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let tree = Self { adj };
        tree.is_connected().then_some(tree)
    }

    pub fn single() -> Self {
        Self { adj: vec![Vec::new()] }
    }

    pub(crate) fn from_adjacency_unchecked(adj: Vec<Vec<usize>>) -> Self {
        Self { adj }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.adj[n]
    }

    pub fn degree(&self, n: usize) -> usize {
        self.adj[n].len()
    }

    /// Arcs as `(u, v)` with `u < v`, in node order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.adj.len().saturating_sub(1));
        for (u, list) in self.adj.iter().enumerate() {
            for &v in list {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.adj.len()).filter(|&n| self.adj[n].len() <= 1).collect()
    }

    /// Every node has degree 1 or 3 (a lone node has degree 0).
    pub fn is_binary(&self) -> bool {
        self.adj.len() == 1 || self.adj.iter().all(|l| l.len() == 1 || l.len() == 3)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.adj.len()
    }

    /// Nodes on `from`'s side after deleting the arc `from`-`to`.
    pub fn side(&self, from: usize, to: usize) -> Vec<usize> {
        let mut out = vec![from];
        let mut stack = vec![(from, to)];
        while let Some((u, parent)) = stack.pop() {
            for &v in &self.adj[u] {
                if v != parent {
                    out.push(v);
                    stack.push((v, u));
                }
            }
        }
        out
    }

    /// Parent pointers and a preorder from `root`.
    pub fn rooted(&self, root: usize) -> (Vec<Option<usize>>, Vec<usize>) {
        let mut parent = vec![None; self.adj.len()];
        let mut order = Vec::with_capacity(self.adj.len());
        let mut stack = vec![root];
        let mut seen = vec![false; self.adj.len()];
        seen[root] = true;
        while let Some(u) = stack.pop() {
            order.push(u);
            for &v in self.adj[u].iter().rev() {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    stack.push(v);
                }
            }
        }
        (parent, order)
    }

    /// Node sequence of the unique path from `a` to `b`.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let (parent, _) = self.rooted(a);
        let mut out = vec![b];
        let mut cur = b;
        while let Some(p) = parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }
}

/// Turns a labelled tree-shaped adjacency into an unrooted binary tree whose
/// leaves are exactly the labelled nodes: labelled inner nodes are pushed out
/// to pendant leaves, unlabelled dead ends are pruned, unlabelled nodes of
/// degree above three are split into chains, and unlabelled degree-2 nodes
/// are smoothed away. Every retained arc separates the labels the same way
/// some input arc did, or splits one node's neighbour set, so partition-based
/// widths never grow beyond what the input node structure allows.
pub(crate) fn normalize_leaf_labelled<L: Clone>(
    mut adj: Vec<Vec<usize>>,
    mut labels: Vec<Option<L>>,
) -> (UnrootedTree, Vec<Option<L>>) {
    assert_eq!(adj.len(), labels.len());
    assert!(labels.iter().any(Option::is_some), "at least one label required");

    // labelled nodes become pendant leaves
    for n in 0..adj.len() {
        if labels[n].is_some() && adj[n].len() >= 2 {
            let hub = adj.len();
            let moved = std::mem::take(&mut adj[n]);
            for &m in &moved {
                for x in adj[m].iter_mut() {
                    if *x == n {
                        *x = hub;
                    }
                }
            }
            adj.push(moved);
            labels.push(None);
            adj[hub].push(n);
            adj[n].push(hub);
        }
    }

    let mut alive = vec![true; adj.len()];
    let remove_arc = |adj: &mut Vec<Vec<usize>>, u: usize, v: usize| {
        if let Some(p) = adj[u].iter().position(|&x| x == v) {
            adj[u].remove(p);
        }
        if let Some(p) = adj[v].iter().position(|&x| x == u) {
            adj[v].remove(p);
        }
    };

    // prune unlabelled dead ends
    let mut queue: VecDeque<usize> = (0..adj.len())
        .filter(|&n| labels[n].is_none() && adj[n].len() <= 1)
        .collect();
    while let Some(n) = queue.pop_front() {
        if !alive[n] || labels[n].is_some() || adj[n].len() > 1 {
            continue;
        }
        alive[n] = false;
        if let Some(&m) = adj[n].first() {
            remove_arc(&mut adj, n, m);
            if labels[m].is_none() && adj[m].len() <= 1 {
                queue.push_back(m);
            }
        }
    }

    // split high-degree nodes; appended nodes are revisited by the loop
    let mut n = 0;
    while n < adj.len() {
        while alive[n] && adj[n].len() > 3 {
            let extra = adj.len();
            let tail: Vec<usize> = adj[n].split_off(2);
            for &m in &tail {
                for x in adj[m].iter_mut() {
                    if *x == n {
                        *x = extra;
                    }
                }
            }
            adj.push(tail);
            labels.push(None);
            alive.push(true);
            adj[extra].push(n);
            adj[n].push(extra);
        }
        n += 1;
    }

    // smooth unlabelled degree-2 nodes
    for n in 0..adj.len() {
        if alive[n] && labels[n].is_none() && adj[n].len() == 2 {
            let (a, b) = (adj[n][0], adj[n][1]);
            for x in adj[a].iter_mut() {
                if *x == n {
                    *x = b;
                }
            }
            for x in adj[b].iter_mut() {
                if *x == n {
                    *x = a;
                }
            }
            adj[n].clear();
            alive[n] = false;
        }
    }

    let mut remap = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for n in 0..adj.len() {
        if alive[n] {
            remap[n] = next;
            next += 1;
        }
    }
    let mut new_adj = vec![Vec::new(); next];
    let mut new_labels = Vec::with_capacity(next);
    for n in 0..adj.len() {
        if alive[n] {
            new_adj[remap[n]] = adj[n].iter().map(|&m| remap[m]).collect();
            new_labels.push(labels[n].clone());
        }
    }
    debug_assert!(new_adj
        .iter()
        .zip(&new_labels)
        .all(|(a, l)| l.is_some() == (a.len() <= 1) || new_adj.len() == 1));
    (UnrootedTree { adj: new_adj }, new_labels)
}
