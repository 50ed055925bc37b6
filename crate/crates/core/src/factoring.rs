//! Factoring copy and clause tensors along a branch decomposition of the
//! structure graph, and turning the result into a low-rank contraction tree.
//!
//! For a network `N` with structure graph `G` and branch decomposition `T`,
//! every vertex `v` gets the minimal subtree `T_v` of `T` spanning its edge
//! leaves. The graph `H` has a vertex `(v, n)` for every node `n` of every
//! `T_v`; `H`'s vertices are hung along the arcs of `T` to form a carving
//! decomposition `S` of `H`. Each tensor is then factored along `T_v` with
//! degree-2 nodes suppressed, which is the same as contracting every `H`
//! vertex of degree at most two into a neighbouring degree-3 one. Such
//! contractions never raise a carving width, so the plan read off `S`
//! inherits its width.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::graph::{BranchDecomposition, CarvingDecomposition, DecompositionError, Graph, UnrootedTree};
use crate::network::{max_rank, structure_graph, structure_graph_of, ContractionTree, NetworkError, StructureGraph, TensorNetwork};
use crate::tensor::{Index, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("network has {0} free indices, at most 3 are supported")]
    TooManyFreeIndices(usize),
    #[error("structure graph has no edges, so there is no branch decomposition to factor along")]
    WidthZero,
    #[error("tensor of rank {0} is neither a copy tensor nor a clause tensor")]
    NotFactorable(usize),
    #[error("dimension tree leaves do not match the tensor's indices")]
    LeafMismatch,
    #[error("carving decomposition does not cover the network: {0}")]
    Carving(DecompositionError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// The tensor shapes the factoring knows how to split.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// Zero off the main diagonal; `diag[k]` is the entry with every index at `k`.
    Copy { diag: Vec<f64> },
    /// Domain 2, all ones except a single zero at `falsifying`.
    Clause { falsifying: Vec<usize> },
    General,
}

pub fn classify(a: &Tensor) -> FactorKind {
    let idx = a.indices();
    if idx.is_empty() {
        return FactorKind::General;
    }
    let d = idx[0].dim();
    if idx.iter().all(|i| i.dim() == d) {
        // offset of (k, k, ..., k) is k * sum of strides
        let step: usize = (0..idx.len()).map(|p| d.pow((idx.len() - 1 - p) as u32)).sum();
        let on_diag = |off: usize| off.is_multiple_of(step) && off / step < d;
        if a.values().iter().enumerate().all(|(off, &x)| x == 0.0 || on_diag(off)) {
            return FactorKind::Copy {
                diag: (0..d).map(|k| a.values()[k * step]).collect(),
            };
        }
    }
    if idx.iter().all(|i| i.dim() == 2) {
        let mut zero = None;
        for (off, &x) in a.values().iter().enumerate() {
            if x == 0.0 {
                if zero.is_some() {
                    return FactorKind::General;
                }
                zero = Some(off);
            } else if x != 1.0 {
                return FactorKind::General;
            }
        }
        if let Some(off) = zero {
            let r = idx.len();
            let falsifying = (0..r).map(|p| off >> (r - 1 - p) & 1).collect();
            return FactorKind::Clause { falsifying };
        }
    }
    FactorKind::General
}

/// A tensor known by its index list and shape. Copy and clause tensors of
/// high rank are only ever built piecewise, so their entries never exist in
/// full.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredTensor {
    Dense(Tensor),
    Shaped { indices: Vec<Index>, kind: FactorKind },
}

impl StructuredTensor {
    pub fn indices(&self) -> &[Index] {
        match self {
            StructuredTensor::Dense(a) => a.indices(),
            StructuredTensor::Shaped { indices, .. } => indices,
        }
    }

    pub fn kind(&self) -> FactorKind {
        match self {
            StructuredTensor::Dense(a) => classify(a),
            StructuredTensor::Shaped { kind, .. } => kind.clone(),
        }
    }

    /// The dense tensor. `General` shapes carry no entries and are
    /// materialized as zeros.
    pub fn materialize(&self) -> Result<Tensor, TensorError> {
        match self {
            StructuredTensor::Dense(a) => Ok(a.clone()),
            StructuredTensor::Shaped { indices, kind } => Tensor::from_fn(indices.clone(), |c| match kind {
                FactorKind::Copy { diag } if c.iter().all(|&x| x == c[0]) => diag.get(c[0]).copied().unwrap_or(1.0),
                FactorKind::Clause { falsifying } if c != &falsifying[..] => 1.0,
                _ => 0.0,
            }),
        }
    }
}

/// A tree whose leaves are the indices of one tensor. Nodes
/// `0..leaves().len()` are the leaves, in the order of `leaves()`; the rest
/// are internal. `origin` records where each node came from when the tree
/// was cut out of a larger one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionTree {
    adj: Vec<Vec<usize>>,
    leaves: Vec<Index>,
    origin: Vec<usize>,
}

impl DimensionTree {
    /// `None` unless `adj` is a tree whose degree-1 nodes are exactly the
    /// first `leaves.len()` nodes and whose internal nodes have degree >= 2.
    pub fn new(adj: Vec<Vec<usize>>, leaves: Vec<Index>) -> Option<Self> {
        let k = leaves.len();
        if k == 0 || adj.len() < k {
            return None;
        }
        let arcs: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect();
        let tree = UnrootedTree::from_arcs(adj.len(), &arcs)?;
        let shape_ok = (0..adj.len()).all(|n| {
            let d = tree.degree(n);
            if n < k {
                d == usize::from(adj.len() > 1)
            } else {
                d >= 2
            }
        });
        shape_ok.then(|| Self {
            origin: (0..adj.len()).collect(),
            adj,
            leaves,
        })
    }

    /// Leaves hang off a path of internal nodes in the given order.
    pub fn caterpillar(indices: &[Index]) -> Self {
        let k = indices.len();
        assert!(k > 0);
        if k <= 2 {
            let adj = if k == 1 { vec![vec![]] } else { vec![vec![1], vec![0]] };
            return Self::new(adj, indices.to_vec()).expect("small tree");
        }
        // internal nodes k..2k-2; leaf 0 and leaf 1 share the first spine node,
        // the last two leaves share the last
        let spine = k - 2;
        let mut adj = vec![Vec::new(); k + spine];
        let link = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
            adj[a].push(b);
            adj[b].push(a);
        };
        for s in 0..spine {
            if s + 1 < spine {
                link(&mut adj, k + s, k + s + 1);
            }
        }
        link(&mut adj, 0, k);
        for leaf in 1..k - 1 {
            link(&mut adj, leaf, k + leaf - 1);
        }
        link(&mut adj, k - 1, k + spine - 1);
        Self::new(adj, indices.to_vec()).expect("caterpillar dimension tree")
    }

    pub fn leaves(&self) -> &[Index] {
        &self.leaves
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.adj[n]
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        n < self.leaves.len()
    }

    pub fn origin(&self, n: usize) -> usize {
        self.origin[n]
    }

    pub fn internal_nodes(&self) -> std::ops::Range<usize> {
        self.leaves.len()..self.adj.len()
    }
}

/// Pieces of one factored tensor. `piece_of[n]` is the piece at internal
/// dimension-tree node `n`; trees without internal nodes keep the tensor
/// whole as the only piece.
#[derive(Debug, Clone)]
pub struct Factored {
    pub pieces: Vec<Tensor>,
    pub piece_of: Vec<Option<usize>>,
    /// Bond index of each internal arc, keyed by its `(smaller, larger)` nodes.
    pub bonds: BTreeMap<(usize, usize), Index>,
}

impl Factored {
    pub fn network(&self) -> TensorNetwork {
        TensorNetwork::new(self.pieces.clone()).expect("pieces form a network")
    }
}

/// Splits `a` into one piece per internal node of `t`. New bond indices get
/// ids from `next_id` upward.
pub fn factor_tensor(
    a: &Tensor,
    kind: &FactorKind,
    t: &DimensionTree,
    next_id: &mut u32,
) -> Result<Factored, FactorError> {
    factor_parts(a.indices(), kind, &|| Ok(a.clone()), t, next_id)
}

/// As [`factor_tensor`] for a tensor that may only be known by its shape.
pub fn factor_structured(a: &StructuredTensor, t: &DimensionTree, next_id: &mut u32) -> Result<Factored, FactorError> {
    factor_parts(a.indices(), &a.kind(), &|| a.materialize(), t, next_id)
}

fn factor_parts(
    indices: &[Index],
    kind: &FactorKind,
    whole: &dyn Fn() -> Result<Tensor, TensorError>,
    t: &DimensionTree,
    next_id: &mut u32,
) -> Result<Factored, FactorError> {
    let mut want: Vec<Index> = indices.to_vec();
    let mut have = t.leaves().to_vec();
    want.sort();
    have.sort();
    if want != have || want.windows(2).any(|w| w[0] == w[1]) {
        return Err(FactorError::LeafMismatch);
    }
    if t.internal_nodes().is_empty() {
        return Ok(Factored {
            pieces: vec![whole().map_err(NetworkError::from)?],
            piece_of: vec![None; t.num_nodes()],
            bonds: BTreeMap::new(),
        });
    }
    let bond_dim = match kind {
        FactorKind::Copy { diag } => diag.len(),
        FactorKind::Clause { .. } => 2,
        FactorKind::General if t.internal_nodes().len() == 1 => {
            let n = t.internal_nodes().start;
            let mut piece_of = vec![None; t.num_nodes()];
            piece_of[n] = Some(0);
            return Ok(Factored {
                pieces: vec![whole().map_err(NetworkError::from)?],
                piece_of,
                bonds: BTreeMap::new(),
            });
        }
        FactorKind::General => return Err(FactorError::NotFactorable(indices.len())),
    };

    let mut bonds = BTreeMap::new();
    for n in t.internal_nodes() {
        for &m in t.neighbors(n) {
            if m > n {
                bonds.insert((n, m), Index::new(*next_id, bond_dim));
                *next_id += 1;
            }
        }
    }
    let port = |n: usize, m: usize| -> Index {
        if t.is_leaf(m) {
            t.leaves()[m]
        } else {
            bonds[&(n.min(m), n.max(m))]
        }
    };
    // the piece next to the least original index is special
    let least_leaf = (0..t.leaves().len()).min_by_key(|&l| t.leaves()[l]).expect("leaf");
    let anchor = t.neighbors(least_leaf)[0];

    let mut piece_of = vec![None; t.num_nodes()];
    let mut pieces = Vec::new();
    match kind {
        FactorKind::Copy { diag } => {
            for n in t.internal_nodes() {
                let idx: Vec<Index> = t.neighbors(n).iter().map(|&m| port(n, m)).collect();
                let weighted = n == anchor;
                let piece = Tensor::from_fn(idx, |c| {
                    if c.iter().all(|&x| x == c[0]) {
                        if weighted {
                            diag[c[0]]
                        } else {
                            1.0
                        }
                    } else {
                        0.0
                    }
                })
                .expect("copy piece shape");
                piece_of[n] = Some(pieces.len());
                pieces.push(piece);
            }
        }
        FactorKind::Clause { falsifying } => {
            let position: BTreeMap<Index, usize> = indices.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            // each non-root piece passes "some literal below is satisfied" to its parent
            let mut parent = vec![usize::MAX; t.num_nodes()];
            let mut queue = VecDeque::from([anchor]);
            parent[anchor] = anchor;
            while let Some(n) = queue.pop_front() {
                for &m in t.neighbors(n) {
                    if parent[m] == usize::MAX {
                        parent[m] = n;
                        if !t.is_leaf(m) {
                            queue.push_back(m);
                        }
                    }
                }
            }
            for n in t.internal_nodes() {
                let nbrs = t.neighbors(n);
                let idx: Vec<Index> = nbrs.iter().map(|&m| port(n, m)).collect();
                let is_root = n == anchor;
                let piece = Tensor::from_fn(idx, |c| {
                    let mut any = false;
                    let mut up = None;
                    for (k, &m) in nbrs.iter().enumerate() {
                        if !is_root && m == parent[n] {
                            up = Some(c[k]);
                        } else if t.is_leaf(m) {
                            any |= c[k] != falsifying[position[&t.leaves()[m]]];
                        } else {
                            any |= c[k] == 1;
                        }
                    }
                    match up {
                        None => f64::from(u8::from(any)),
                        Some(bit) => f64::from(u8::from((bit == 1) == any)),
                    }
                })
                .expect("clause piece shape");
                piece_of[n] = Some(pieces.len());
                pieces.push(piece);
            }
        }
        FactorKind::General => unreachable!(),
    }
    Ok(Factored {
        pieces,
        piece_of,
        bonds,
    })
}

/// Minimal subtree of a tree spanning some of its leaves, as adjacency
/// restricted to the subtree (`None` for nodes outside it).
struct Steiner {
    nbrs: Vec<Option<Vec<usize>>>,
}

struct Rooting {
    parent: Vec<Option<usize>>,
    postorder: Vec<usize>,
}

impl Rooting {
    fn new(t: &UnrootedTree) -> Self {
        let (parent, mut order) = t.rooted(0);
        order.reverse();
        Self {
            parent,
            postorder: order,
        }
    }
}

fn steiner(t: &UnrootedTree, rooting: &Rooting, required: &[usize]) -> Steiner {
    let n = t.num_nodes();
    let mut is_req = vec![false; n];
    for &r in required {
        is_req[r] = true;
    }
    let total = required.len();
    let mut cnt = vec![0usize; n];
    for &u in &rooting.postorder {
        cnt[u] += usize::from(is_req[u]);
        if let Some(p) = rooting.parent[u] {
            cnt[p] += cnt[u];
        }
    }
    let nbrs = (0..n)
        .map(|u| {
            let dirs: Vec<usize> = t
                .neighbors(u)
                .iter()
                .copied()
                .filter(|&m| {
                    if rooting.parent[u] == Some(m) {
                        total > cnt[u]
                    } else {
                        cnt[m] > 0
                    }
                })
                .collect();
            (is_req[u] || dirs.len() >= 2).then_some(dirs)
        })
        .collect();
    Steiner { nbrs }
}

/// Suppressed minimal subtree of `t` spanning the edge leaves of `v`. Leaves
/// follow edge order; `origin` maps back to nodes of `t`.
fn suppressed_tree(sg: &StructureGraph, v: usize, t: &BranchDecomposition, st: &Steiner) -> DimensionTree {
    let leaf_of_edge = t.edge_leaves(sg.graph.num_edges());
    let mut edges: Vec<usize> = sg.graph.incident(v).to_vec();
    edges.sort_unstable();
    let leaves: Vec<Index> = edges.iter().map(|&e| sg.edge_index[e]).collect();
    let k = edges.len();
    let mut id_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut origin = Vec::new();
    for &e in &edges {
        id_of.insert(leaf_of_edge[e], origin.len());
        origin.push(leaf_of_edge[e]);
    }
    for (u, l) in st.nbrs.iter().enumerate() {
        if l.as_ref().is_some_and(|l| l.len() >= 3) {
            id_of.insert(u, origin.len());
            origin.push(u);
        }
    }
    let mut adj = vec![Vec::new(); origin.len()];
    if k >= 2 {
        for (&u, &id) in &id_of {
            for &first in st.nbrs[u].as_ref().expect("in subtree") {
                let (mut prev, mut cur) = (u, first);
                while !id_of.contains_key(&cur) {
                    let next = st.nbrs[cur]
                        .as_ref()
                        .expect("in subtree")
                        .iter()
                        .copied()
                        .find(|&x| x != prev)
                        .expect("degree-2 pass-through");
                    prev = cur;
                    cur = next;
                }
                adj[id].push(id_of[&cur]);
            }
        }
    }
    DimensionTree { adj, leaves, origin }
}

/// Smallest subtree of `t` whose leaves are the edges at graph vertex `v`,
/// with pass-through nodes suppressed.
pub fn dimension_tree_for(sg: &StructureGraph, v: usize, t: &BranchDecomposition) -> DimensionTree {
    let leaf_of_edge = t.edge_leaves(sg.graph.num_edges());
    let required: Vec<usize> = sg.graph.incident(v).iter().map(|&e| leaf_of_edge[e]).collect();
    let st = steiner(&t.tree, &Rooting::new(&t.tree), &required);
    suppressed_tree(sg, v, t, &st)
}

/// Everything one run of the construction produces.
#[derive(Debug, Clone)]
pub struct FactorPlan {
    /// The factored network `M`.
    pub network: TensorNetwork,
    /// Contraction tree for `M`.
    pub tree: ContractionTree,
    /// Original tensor each tensor of `M` came from.
    pub origin: Vec<usize>,
    pub branch_width: usize,
    /// The graph `H` (isolated tensors and the free vertex appended last).
    pub h_graph: Graph,
    /// Carving decomposition of `H` before any contraction.
    pub h_carving: CarvingDecomposition,
    pub h_carving_width: usize,
    pub h_max_degree: usize,
    /// Largest number of vertices whose subtree has degree 3 at one node.
    pub rho_max: usize,
    /// Carving decomposition of the structure graph of `M`.
    pub carving: CarvingDecomposition,
    pub carving_width: usize,
    pub max_rank: usize,
}

impl FactorPlan {
    /// `ceil(4w/3)` for the branch width `w` the plan was built from.
    pub fn rank_bound(&self) -> usize {
        rank_bound(self.branch_width)
    }
}

pub fn rank_bound(w: usize) -> usize {
    (4 * w).div_ceil(3)
}

struct HVertex {
    g: usize,
    t: Option<usize>,
    degree: usize,
}

pub fn factor_branch(n: &TensorNetwork, t: &BranchDecomposition) -> Result<FactorPlan, FactorError> {
    let tensors: Vec<StructuredTensor> = n.tensors().iter().cloned().map(StructuredTensor::Dense).collect();
    factor_branch_structured(&tensors, t)
}

/// [`factor_branch`] over tensors given by shape; vertex `k` of the
/// structure graph is `tensors[k]`.
pub fn factor_branch_structured(tensors: &[StructuredTensor], t: &BranchDecomposition) -> Result<FactorPlan, FactorError> {
    let sg = structure_graph_of(tensors.iter().map(StructuredTensor::indices));
    let g = &sg.graph;
    let z = sg.free_vertex;
    let free = g.degree(z);
    if free > 3 {
        return Err(FactorError::TooManyFreeIndices(free));
    }
    if g.num_edges() == 0 {
        return Err(FactorError::WidthZero);
    }
    t.validate(g)?;
    let w = t.width(g);
    let tree = &t.tree;
    let rooting = Rooting::new(tree);
    let leaf_of_edge = t.edge_leaves(g.num_edges());

    // Part 1/2: subtrees and the graph H
    let mut hv: Vec<HVertex> = Vec::new();
    let mut h_of: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); g.num_vertices()];
    let mut subtrees: Vec<Option<Steiner>> = Vec::with_capacity(g.num_vertices());
    let mut h_edges = Vec::new();
    let mut rho = vec![0usize; tree.num_nodes()];
    for v in 0..g.num_vertices() {
        if g.degree(v) == 0 {
            subtrees.push(None);
            continue;
        }
        let required: Vec<usize> = g.incident(v).iter().map(|&e| leaf_of_edge[e]).collect();
        let st = steiner(tree, &rooting, &required);
        for (u, l) in st.nbrs.iter().enumerate() {
            if let Some(l) = l {
                if l.len() == 3 {
                    rho[u] += 1;
                }
                h_of[v].insert(u, hv.len());
                hv.push(HVertex {
                    g: v,
                    t: Some(u),
                    degree: l.len(),
                });
            }
        }
        for (&u, &hu) in &h_of[v] {
            for &m in st.nbrs[u].as_ref().expect("in subtree") {
                if u < m {
                    h_edges.push((hu, h_of[v][&m]));
                }
            }
        }
        subtrees.push(Some(st));
    }
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        let l = leaf_of_edge[e];
        let (ha, hb) = (h_of[a][&l], h_of[b][&l]);
        h_edges.push((ha, hb));
        hv[ha].degree += 1;
        hv[hb].degree += 1;
    }
    let isolated: Vec<usize> = (0..g.num_vertices()).filter(|&v| g.degree(v) == 0).collect();
    for &v in &isolated {
        h_of[v].insert(usize::MAX, hv.len());
        hv.push(HVertex { g: v, t: None, degree: 0 });
    }
    let h_graph = Graph::new(hv.len(), h_edges);

    // Part 3: hang H's vertices along the arcs of T
    let mut along: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut at_node: Vec<Vec<usize>> = vec![Vec::new(); tree.num_nodes()];
    for (h, x) in hv.iter().enumerate() {
        if let Some(u) = x.t {
            at_node[u].push(h);
        }
    }
    for u in 0..tree.num_nodes() {
        let mut arcs: Vec<usize> = tree.neighbors(u).to_vec();
        arcs.sort_unstable();
        if arcs.is_empty() {
            continue;
        }
        let mut turn = 0usize;
        for &h in &at_node[u] {
            let x = &hv[h];
            let sub = subtrees[x.g].as_ref().expect("vertex with edges").nbrs[u]
                .as_ref()
                .expect("in subtree");
            let arc = if arcs.len() == 1 {
                arcs[0]
            } else if sub.len() == 3 {
                turn += 1;
                arcs[(turn - 1) % arcs.len()]
            } else {
                // degree 2 moves along one of its own arcs, which costs nothing
                *sub.iter().min().expect("two directions")
            };
            along.entry((u, arc)).or_default().push(h);
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); tree.num_nodes()];
    let mut labels: Vec<Option<usize>> = vec![None; tree.num_nodes()];
    let link = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };
    let pendant = |adj: &mut Vec<Vec<usize>>, labels: &mut Vec<Option<usize>>, at: usize, h: usize| {
        let leaf = adj.len();
        adj.push(Vec::new());
        labels.push(Some(h));
        link(adj, at, leaf);
    };
    if tree.num_nodes() == 1 {
        for h in 0..hv.len() {
            pendant(&mut adj, &mut labels, 0, h);
        }
    } else {
        for (o, p) in tree.arcs() {
            let mut chain: Vec<usize> = along.get(&(o, p)).cloned().unwrap_or_default();
            chain.extend(along.get(&(p, o)).into_iter().flatten().rev());
            let mut prev = o;
            for h in chain {
                let c = adj.len();
                adj.push(Vec::new());
                labels.push(None);
                link(&mut adj, prev, c);
                pendant(&mut adj, &mut labels, c, h);
                prev = c;
            }
            link(&mut adj, prev, p);
        }
        for &v in &isolated {
            pendant(&mut adj, &mut labels, 0, h_of[v][&usize::MAX]);
        }
    }
    let h_carving = CarvingDecomposition::from_labelled(adj, labels);
    debug_assert_eq!(h_carving.validate(&h_graph), Ok(()));
    let h_carving_width = h_carving.width(&h_graph);

    // factor every tensor along its suppressed subtree
    let mut next_id = tensors
        .iter()
        .flat_map(|x| x.indices())
        .map(|i| i.id() + 1)
        .max()
        .unwrap_or(0);
    let mut pieces = Vec::new();
    let mut origin = Vec::new();
    // M vertex of each H vertex, and whether that H vertex keeps its leaf
    let mut target = vec![usize::MAX; hv.len()];
    let mut keeper = vec![false; hv.len()];
    let z_mark = usize::MAX - 1;
    for v in 0..g.num_vertices() {
        let Some(st) = subtrees[v].as_ref() else {
            let h = h_of[v][&usize::MAX];
            keeper[h] = true;
            if v == z {
                target[h] = z_mark;
            } else {
                target[h] = pieces.len();
                pieces.push(tensors[v].materialize().map_err(NetworkError::from)?);
                origin.push(v);
            }
            continue;
        };
        let dt = suppressed_tree(&sg, v, t, st);
        let centres: Vec<usize> = dt.internal_nodes().map(|d| dt.origin(d)).collect();
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        if v == z {
            for &h in h_of[v].values() {
                target[h] = z_mark;
            }
            let keep = centres.first().map_or(*h_of[v].values().next().expect("vertex"), |c| h_of[v][c]);
            keeper[keep] = true;
            continue;
        }
        let factored = factor_structured(&tensors[v], &dt, &mut next_id)?;
        let base = pieces.len();
        if centres.is_empty() {
            let first = *h_of[v].values().next().expect("vertex");
            keeper[first] = true;
            for &h in h_of[v].values() {
                target[h] = base;
            }
        } else {
            for d in dt.internal_nodes() {
                let c = dt.origin(d);
                owner.insert(c, base + factored.piece_of[d].expect("internal piece"));
                keeper[h_of[v][&c]] = true;
            }
            // every other node of the subtree joins the nearest centre
            let mut queue: VecDeque<usize> = owner.keys().copied().collect();
            while let Some(u) = queue.pop_front() {
                let o = owner[&u];
                for &m in st.nbrs[u].as_ref().expect("in subtree") {
                    if let std::collections::btree_map::Entry::Vacant(e) = owner.entry(m) {
                        e.insert(o);
                        queue.push_back(m);
                    }
                }
            }
            for (&u, &h) in &h_of[v] {
                target[h] = owner[&u];
            }
        }
        for p in factored.pieces {
            pieces.push(p);
            origin.push(v);
        }
    }
    let network = TensorNetwork::new(pieces)?;
    let mz = network.len();
    let m_labels: Vec<Option<usize>> = h_carving
        .leaf_vertex
        .iter()
        .map(|l| l.filter(|&h| keeper[h]).map(|h| if target[h] == z_mark { mz } else { target[h] }))
        .collect();
    let m_adj: Vec<Vec<usize>> = (0..h_carving.tree.num_nodes())
        .map(|u| h_carving.tree.neighbors(u).to_vec())
        .collect();
    let carving = CarvingDecomposition::from_labelled(m_adj, m_labels);
    let m_graph = structure_graph(&network).graph;
    let carving_width = carving.checked_width(&m_graph).map_err(FactorError::Carving)?;
    let plan = carving_to_contraction_tree(&network, &carving)?;
    let rank = max_rank(&network, &plan)?;
    Ok(FactorPlan {
        network,
        tree: plan,
        origin,
        branch_width: w,
        h_max_degree: hv.iter().map(|x| x.degree).max().unwrap_or(0),
        h_graph,
        h_carving,
        h_carving_width,
        rho_max: rho.into_iter().max().unwrap_or(0),
        carving,
        carving_width,
        max_rank: rank,
    })
}

/// Drops the free vertex's leaf and roots what is left at its neighbour.
/// The max-rank of the result equals the carving width.
pub fn carving_to_contraction_tree(
    m: &TensorNetwork,
    cd: &CarvingDecomposition,
) -> Result<ContractionTree, FactorError> {
    let z = m.len();
    cd.validate(&structure_graph(m).graph).map_err(FactorError::Carving)?;
    if z == 1 {
        return Ok(ContractionTree::singleton());
    }
    let leaf_of = cd.vertex_leaves(z + 1);
    let zl = leaf_of[z];
    let root = cd.tree.neighbors(zl)[0];
    let mut merges = Vec::with_capacity(z - 1);
    let mut id = vec![usize::MAX; cd.tree.num_nodes()];
    // iterative postorder, children in adjacency order
    let mut stack = vec![(root, zl, false)];
    while let Some((u, from, done)) = stack.pop() {
        let kids: Vec<usize> = cd.tree.neighbors(u).iter().copied().filter(|&x| x != from).collect();
        if let Some(t) = cd.leaf_vertex[u] {
            id[u] = t;
        } else if done {
            merges.push((id[kids[0]], id[kids[1]]));
            id[u] = z + merges.len() - 1;
        } else {
            stack.push((u, from, true));
            for &c in kids.iter().rev() {
                stack.push((c, u, false));
            }
        }
    }
    Ok(ContractionTree::new(z, merges)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{CnfFormula, WeightFunction};
    use crate::graph::{min_fill_tree_decomposition, tree_to_branch};
    use crate::network::{execute, verify_partial_contraction};
    use crate::reduction::{clause_tensor_entry, reduce};

    fn idx(id: u32) -> Index {
        Index::new(id, 2)
    }

    fn copy_tensor(ids: &[u32], w0: f64, w1: f64) -> Tensor {
        let indices: Vec<Index> = ids.iter().map(|&i| idx(i)).collect();
        Tensor::from_fn(indices, |c| {
            if c.iter().all(|&x| x == 0) {
                w0
            } else if c.iter().all(|&x| x == 1) {
                w1
            } else {
                0.0
            }
        })
        .unwrap()
    }

    fn recontract(f: &Factored) -> Tensor {
        let net = f.network();
        execute(&net, &ContractionTree::greedy(&net)).unwrap()
    }

    #[test]
    fn classify_kinds() {
        assert_eq!(
            classify(&copy_tensor(&[0, 1, 2], 0.3, 0.7)),
            FactorKind::Copy { diag: vec![0.3, 0.7] }
        );
        let clause = vec![1, 2, -3];
        let c = Tensor::from_fn(vec![idx(0), idx(1), idx(2)], |v| clause_tensor_entry(&clause, v)).unwrap();
        assert_eq!(
            classify(&c),
            FactorKind::Clause {
                falsifying: vec![0, 0, 1]
            }
        );
        let general = Tensor::new(vec![idx(0), idx(1)], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(classify(&general), FactorKind::General);
        assert_eq!(classify(&Tensor::scalar(2.0)), FactorKind::General);
    }

    #[test]
    fn two_leaf_tree_keeps_tensor() {
        let a = copy_tensor(&[0, 1], 0.2, 0.8);
        let t = DimensionTree::caterpillar(a.indices());
        let f = factor_tensor(&a, &classify(&a), &t, &mut 10).unwrap();
        assert_eq!(f.pieces, vec![a]);
    }

    #[test]
    fn rank4_copy_splits_in_two() {
        let a = copy_tensor(&[0, 1, 2, 3], 0.25, 0.75);
        let t = DimensionTree::caterpillar(a.indices());
        let mut next = 100;
        let f = factor_tensor(&a, &classify(&a), &t, &mut next).unwrap();
        assert_eq!(f.pieces.len(), 2);
        assert!(f.pieces.iter().all(|p| p.rank() == 3));
        assert_eq!(f.bonds.len(), 1);
        assert_eq!(next, 101);
        let back = recontract(&f);
        assert!(back.permuted(a.indices()).unwrap().approx_eq(&a, 0.0));
    }

    #[test]
    fn rank4_clause_recontracts_exactly() {
        let clause = vec![1, 2, -3, 4];
        let ids: Vec<Index> = (0..4).map(idx).collect();
        let a = Tensor::from_fn(ids.clone(), |v| clause_tensor_entry(&clause, v)).unwrap();
        let t = DimensionTree::caterpillar(&ids);
        let f = factor_tensor(&a, &classify(&a), &t, &mut 50).unwrap();
        assert_eq!(f.pieces.len(), 2);
        assert!(f.bonds.values().all(|b| b.dim() == 2));
        let back = recontract(&f).permuted(&ids).unwrap();
        for bits in 0..16usize {
            let vals: Vec<usize> = (0..4).map(|k| bits >> (3 - k) & 1).collect();
            assert_eq!(back.at(&vals), clause_tensor_entry(&clause, &vals));
        }
    }

    #[test]
    fn long_clause_on_balanced_tree() {
        let clause = vec![-1, 2, -3, 4, 5, -6];
        let ids: Vec<Index> = (0..6).map(idx).collect();
        let a = Tensor::from_fn(ids.clone(), |v| clause_tensor_entry(&clause, v)).unwrap();
        // leaves 0..6 paired under internal nodes 6, 8, 9, all joined at 7
        let adj = vec![
            vec![6],
            vec![6],
            vec![8],
            vec![8],
            vec![9],
            vec![9],
            vec![0, 1, 7],
            vec![6, 8, 9],
            vec![2, 3, 7],
            vec![4, 5, 7],
        ];
        let t = DimensionTree::new(adj, ids.clone()).unwrap();
        let f = factor_tensor(&a, &classify(&a), &t, &mut 20).unwrap();
        assert_eq!(f.pieces.len(), 4);
        assert!(recontract(&f).permuted(&ids).unwrap().approx_eq(&a, 0.0));
    }

    #[test]
    fn general_tensors() {
        let ids: Vec<Index> = (0..4).map(idx).collect();
        let a = Tensor::from_fn(ids.clone(), |v| v.iter().sum::<usize>() as f64).unwrap();
        let t = DimensionTree::caterpillar(&ids);
        assert_eq!(
            factor_tensor(&a, &classify(&a), &t, &mut 9).unwrap_err(),
            FactorError::NotFactorable(4)
        );
        let b = Tensor::from_fn(ids[..3].to_vec(), |v| v.iter().sum::<usize>() as f64).unwrap();
        let f = factor_tensor(&b, &classify(&b), &DimensionTree::caterpillar(&ids[..3]), &mut 9).unwrap();
        assert_eq!(f.pieces, vec![b]);
        let wrong = DimensionTree::caterpillar(&ids[1..]);
        assert_eq!(
            factor_tensor(&a, &FactorKind::General, &wrong, &mut 9).unwrap_err(),
            FactorError::LeafMismatch
        );
    }

    fn fig1() -> CnfFormula {
        CnfFormula::new(4, vec![vec![1, 2, -3], vec![1, 3, 4], vec![-2, -3], vec![-3, -4]]).unwrap()
    }

    fn branch_for(n: &TensorNetwork, seed: u64) -> BranchDecomposition {
        let sg = structure_graph(n);
        let td = min_fill_tree_decomposition(&sg.graph, seed);
        tree_to_branch(&td, &sg.graph).unwrap()
    }

    fn check_plan(n: &TensorNetwork, bd: &BranchDecomposition) -> FactorPlan {
        let plan = factor_branch(n, bd).unwrap();
        assert!(verify_partial_contraction(&plan.network, n, &plan.origin));
        assert!(plan.h_max_degree <= 3);
        assert!(plan.rho_max <= plan.branch_width);
        assert!(plan.carving_width <= plan.h_carving_width);
        assert_eq!(plan.max_rank, plan.carving_width);
        if plan.branch_width >= 2 {
            assert!(plan.h_carving_width <= plan.rank_bound(), "{plan:?}");
        }
        plan
    }

    #[test]
    fn fig1_plan() {
        let n = reduce(&fig1(), &WeightFunction::unit(4));
        for seed in 0..5 {
            let plan = check_plan(&n, &branch_for(&n, seed));
            let r = execute(&plan.network, &plan.tree).unwrap();
            assert_eq!(r.scalar_value(), Some(7.0));
        }
    }

    #[test]
    fn psi_family_stays_low_rank() {
        for k in 4..=10i32 {
            let f = CnfFormula::new(k as usize, vec![(1..=k).collect(), (1..=k).map(|x| -x).collect()]).unwrap();
            let n = reduce(&f, &WeightFunction::unit(k as usize));
            let plan = check_plan(&n, &branch_for(&n, 0));
            assert!(plan.max_rank <= 4, "k={k} rank {}", plan.max_rank);
            let r = execute(&plan.network, &plan.tree).unwrap();
            assert_eq!(r.scalar_value(), Some(2f64.powi(k) - 2.0));
        }
    }

    #[test]
    fn two_vectors_single_leaf() {
        let a = Tensor::new(vec![idx(0)], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![idx(0)], vec![3.0, 4.0]).unwrap();
        let n = TensorNetwork::new(vec![a, b]).unwrap();
        let bd = BranchDecomposition::from_labelled(vec![vec![]], vec![Some(0)]);
        let plan = factor_branch(&n, &bd).unwrap();
        assert_eq!(plan.network.tensors(), n.tensors());
        assert_eq!(plan.tree.merges().len(), 1);
        assert_eq!(plan.max_rank, 1);
        assert_eq!(execute(&plan.network, &plan.tree).unwrap().scalar_value(), Some(11.0));
    }

    #[test]
    fn free_indices() {
        // rank-4 copy tensor with two free indices and two bonds to vectors
        let a = copy_tensor(&[0, 1, 2, 3], 0.5, 2.0);
        let u = Tensor::new(vec![idx(2)], vec![1.0, 3.0]).unwrap();
        let v = Tensor::new(vec![idx(3)], vec![5.0, 7.0]).unwrap();
        let n = TensorNetwork::new(vec![a, u, v]).unwrap();
        let plan = check_plan(&n, &branch_for(&n, 0));
        let got = execute(&plan.network, &plan.tree).unwrap();
        let want = execute(&n, &ContractionTree::greedy(&n)).unwrap();
        assert!(got.permuted(want.indices()).unwrap().approx_eq(&want, 1e-12));

        let many = TensorNetwork::new(vec![copy_tensor(&[0, 1, 2, 3], 1.0, 1.0)]).unwrap();
        let bd = branch_for(&many, 0);
        assert_eq!(factor_branch(&many, &bd).unwrap_err(), FactorError::TooManyFreeIndices(4));

        let scalars = TensorNetwork::new(vec![Tensor::scalar(2.0)]).unwrap();
        let bd = BranchDecomposition::from_labelled(vec![vec![]], vec![Some(0)]);
        assert_eq!(factor_branch(&scalars, &bd).unwrap_err(), FactorError::WidthZero);
    }

    #[test]
    fn isolated_tensors_are_kept() {
        let f = CnfFormula::new(3, vec![vec![1, 2], vec![-1, 2]]).unwrap();
        let mut w = WeightFunction::unit(3);
        w.set(3, 0.25, 0.5);
        let n = reduce(&f, &w);
        let plan = check_plan(&n, &branch_for(&n, 0));
        let r = execute(&plan.network, &plan.tree).unwrap().scalar_value().unwrap();
        assert!((r - 2.0 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn dimension_trees() {
        let n = reduce(&fig1(), &WeightFunction::unit(4));
        let sg = structure_graph(&n);
        let bd = branch_for(&n, 1);
        for v in 0..n.len() {
            let dt = dimension_tree_for(&sg, v, &bd);
            assert_eq!(dt.leaves().len(), sg.graph.degree(v));
            for u in dt.internal_nodes() {
                assert_eq!(dt.neighbors(u).len(), 3);
            }
            if dt.leaves().len() == 2 {
                assert_eq!(dt.num_nodes(), 2);
            }
        }
    }

    #[test]
    fn carving_conversion_of_two_tensors() {
        let a = Tensor::new(vec![idx(0)], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![idx(0)], vec![3.0, 4.0]).unwrap();
        let n = TensorNetwork::new(vec![a, b]).unwrap();
        let cd = CarvingDecomposition::from_labelled(
            vec![vec![1, 2, 3], vec![0], vec![0], vec![0]],
            vec![None, Some(0), Some(1), Some(2)],
        );
        let t = carving_to_contraction_tree(&n, &cd).unwrap();
        assert_eq!(t.merges(), &[(0, 1)]);
    }
}
