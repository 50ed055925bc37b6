//! Reduction from weighted model counting to tensor-network contraction.
//!
//! Every (variable, clause) occurrence becomes a domain-2 index. Variable `x`
//! owns a copy tensor over its occurrence indices carrying `W(x,0)` on the
//! all-zero entry and `W(x,1)` on the all-one entry; clause `C` owns a tensor
//! that is 1 exactly on the occurrence assignments satisfying `C`. The
//! network has no free indices and contracts to the weighted model count.
//!
//! Tensor order is variables `1..=n` followed by clauses in formula order.
//! Index ids are assigned variable-major: all occurrences of variable 1 by
//! clause ordinal, then variable 2, and so on.

use std::collections::BTreeMap;

use crate::factoring::{FactorKind, StructuredTensor};
use crate::formula::{CnfFormula, WeightFunction};
use crate::graph::Graph;
use crate::network::TensorNetwork;
use crate::tensor::{Index, Tensor};

/// Entry of a clause tensor: `values[k]` is the value of the occurrence
/// index of `clause[k]`.
pub fn clause_tensor_entry(clause: &[i32], values: &[usize]) -> f64 {
    debug_assert_eq!(clause.len(), values.len());
    let sat = clause
        .iter()
        .zip(values)
        .any(|(&lit, &v)| (v == 1) == (lit > 0));
    if sat {
        1.0
    } else {
        0.0
    }
}

/// Occurrence index of every (variable, clause ordinal) pair.
pub fn occurrence_indices(formula: &CnfFormula) -> BTreeMap<(usize, usize), Index> {
    let mut pairs: Vec<(usize, usize)> = formula
        .clauses()
        .iter()
        .enumerate()
        .flat_map(|(c, clause)| clause.iter().map(move |lit| (lit.unsigned_abs() as usize, c)))
        .collect();
    pairs.sort_unstable();
    pairs
        .into_iter()
        .enumerate()
        .map(|(id, pair)| (pair, Index::new(id as u32, 2)))
        .collect()
}

pub fn reduce(formula: &CnfFormula, weights: &WeightFunction) -> TensorNetwork {
    let tensors = reduce_structured(formula, weights)
        .iter()
        .map(|t| t.materialize().expect("reduction tensor shape"))
        .collect();
    TensorNetwork::new(tensors).expect("each occurrence index is used exactly twice")
}

/// The tensors of [`reduce`], in the same order and over the same indices,
/// described by shape so that high-rank ones need not be materialized.
pub fn reduce_structured(formula: &CnfFormula, weights: &WeightFunction) -> Vec<StructuredTensor> {
    let n = formula.num_vars();
    if n == 0 && formula.clauses().is_empty() {
        return vec![StructuredTensor::Dense(Tensor::scalar(1.0))];
    }
    let occ = occurrence_indices(formula);
    let mut per_var: Vec<Vec<Index>> = vec![Vec::new(); n + 1];
    for (&(var, _), &i) in &occ {
        per_var[var].push(i);
    }

    let mut tensors = Vec::with_capacity(n + formula.clauses().len());
    for (var, indices) in per_var.into_iter().enumerate().skip(1) {
        let (w0, w1) = weights.get(var);
        tensors.push(if indices.is_empty() {
            StructuredTensor::Dense(Tensor::scalar(w0 + w1))
        } else {
            StructuredTensor::Shaped {
                indices,
                kind: FactorKind::Copy { diag: vec![w0, w1] },
            }
        });
    }
    for (c, clause) in formula.clauses().iter().enumerate() {
        if clause.is_empty() {
            tensors.push(StructuredTensor::Dense(Tensor::scalar(0.0)));
            continue;
        }
        let indices: Vec<Index> = clause
            .iter()
            .map(|lit| occ[&(lit.unsigned_abs() as usize, c)])
            .collect();
        let falsifying = clause.iter().map(|&lit| usize::from(lit < 0)).collect();
        tensors.push(StructuredTensor::Shaped {
            indices,
            kind: FactorKind::Clause { falsifying },
        });
    }
    tensors
}

/// Bipartite variable/clause graph: vertex `v-1` is variable `v`, vertex
/// `n + c` is clause `c`.
pub fn incidence_graph(formula: &CnfFormula) -> Graph {
    let n = formula.num_vars();
    let edges = formula
        .clauses()
        .iter()
        .enumerate()
        .flat_map(|(c, clause)| clause.iter().map(move |lit| (lit.unsigned_abs() as usize - 1, n + c)))
        .collect();
    Graph::new(n + formula.clauses().len(), edges)
}

/// Variables adjacent when they share a clause; vertex `v-1` is variable `v`.
pub fn primal_graph(formula: &CnfFormula) -> Graph {
    let mut edges = std::collections::BTreeSet::new();
    for clause in formula.clauses() {
        for (k, a) in clause.iter().enumerate() {
            for b in &clause[k + 1..] {
                let (u, v) = (a.unsigned_abs() as usize - 1, b.unsigned_abs() as usize - 1);
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    Graph::new(formula.num_vars(), edges.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{execute, structure_graph, ContractionTree};

    fn fig1() -> CnfFormula {
        // w=1, x=2, y=3, z=4
        CnfFormula::new(4, vec![vec![1, 2, -3], vec![1, 3, 4], vec![-2, -3], vec![-3, -4]]).unwrap()
    }

    #[test]
    fn clause_entries() {
        assert_eq!(clause_tensor_entry(&[-1, -2], &[1, 1]), 0.0);
        assert_eq!(clause_tensor_entry(&[-1, -2], &[0, 0]), 1.0);
        assert_eq!(clause_tensor_entry(&[-1, -2], &[0, 1]), 1.0);
    }

    #[test]
    fn clause_entries_exhaustive() {
        let clauses: Vec<Vec<i32>> = vec![
            vec![1],
            vec![-1],
            vec![1, 2],
            vec![1, -2],
            vec![-1, -2, 3],
            vec![1, 2, 3],
            vec![-1, -2, -3],
        ];
        for clause in clauses {
            for bits in 0..(1usize << clause.len()) {
                let vals: Vec<usize> = (0..clause.len()).map(|k| bits >> k & 1).collect();
                let direct = clause
                    .iter()
                    .zip(&vals)
                    .any(|(&l, &v)| if l > 0 { v == 1 } else { v == 0 });
                assert_eq!(clause_tensor_entry(&clause, &vals), direct as u8 as f64);
            }
        }
    }

    #[test]
    fn fig1_shape() {
        let f = fig1();
        let n = reduce(&f, &WeightFunction::unit(4));
        assert_eq!(n.len(), 8);
        let (free, bond) = n.free_and_bond_indices();
        assert!(free.is_empty());
        assert_eq!(bond.len(), 10);
        let r = execute(&n, &ContractionTree::caterpillar(&(0..8).collect::<Vec<_>>())).unwrap();
        assert_eq!(r.scalar_value(), Some(7.0));
    }

    #[test]
    fn single_unit_clause() {
        let f = CnfFormula::new(1, vec![vec![1]]).unwrap();
        let mut w = WeightFunction::unit(1);
        w.set(1, 0.25, 0.75);
        let n = reduce(&f, &w);
        assert_eq!(n.tensors()[0].values(), &[0.25, 0.75]);
        assert_eq!(n.tensors()[1].values(), &[0.0, 1.0]);
        let r = execute(&n, &ContractionTree::caterpillar(&[0, 1])).unwrap();
        assert_eq!(r.scalar_value(), Some(0.75));
    }

    #[test]
    fn ranks_follow_occurrences_and_widths() {
        let f = fig1();
        let n = reduce(&f, &WeightFunction::unit(4));
        let occ = f.occurrences();
        for v in 1..=4 {
            assert_eq!(n.tensors()[v - 1].rank(), occ[v]);
        }
        for (c, clause) in f.clauses().iter().enumerate() {
            assert_eq!(n.tensors()[4 + c].rank(), clause.len());
        }
    }

    #[test]
    fn unused_variable_and_empty_clause() {
        let f = CnfFormula::new(2, vec![vec![1]]).unwrap();
        let mut w = WeightFunction::unit(2);
        w.set(2, 0.5, 2.0);
        let n = reduce(&f, &w);
        assert_eq!(n.tensors()[1].scalar_value(), Some(2.5));

        let f = CnfFormula::new(1, vec![vec![1], vec![]]).unwrap();
        let n = reduce(&f, &WeightFunction::unit(1));
        assert_eq!(n.tensors()[2].scalar_value(), Some(0.0));

        let empty = CnfFormula::new(0, vec![]).unwrap();
        let n = reduce(&empty, &WeightFunction::unit(0));
        assert_eq!(n.tensors()[0].scalar_value(), Some(1.0));
    }

    #[test]
    fn structure_graph_is_incidence_graph() {
        let f = fig1();
        let n = reduce(&f, &WeightFunction::unit(4));
        let s = structure_graph(&n);
        let inc = incidence_graph(&f);
        // identical vertex numbering; z is isolated
        assert_eq!(s.graph.degree(s.free_vertex), 0);
        let mut a: Vec<(usize, usize)> = s.graph.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        let mut b: Vec<(usize, usize)> = inc.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn primal_graph_of_two_long_clauses_is_complete() {
        let f = CnfFormula::new(5, vec![vec![1, 2, 3, 4, 5], vec![-1, -2, -3, -4, -5]]).unwrap();
        assert_eq!(primal_graph(&f).num_edges(), 10);
        assert_eq!(incidence_graph(&f).num_edges(), 10);
    }

    #[test]
    fn structured_matches_dense() {
        let f = CnfFormula::new(4, vec![vec![1, 2, -3], vec![1, 3, 4], vec![-2, -3], vec![-3, -4], vec![2]]).unwrap();
        let mut w = WeightFunction::unit(4);
        w.set(2, 0.25, 0.5);
        let dense = reduce(&f, &w);
        let shaped = reduce_structured(&f, &w);
        assert_eq!(dense.len(), shaped.len());
        for (a, s) in dense.tensors().iter().zip(&shaped) {
            assert_eq!(a.indices(), s.indices());
            if a.rank() > 1 {
                assert_eq!(crate::factoring::classify(a), s.kind());
            }
        }
    }

}
