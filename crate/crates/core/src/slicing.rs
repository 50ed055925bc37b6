//! Index slicing: fix a set of bond indices to every combination of values,
//! contract each slice with the same tree, and sum. Peak memory drops at the
//! price of repeated work.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::network::{
    execute_with, op_count_sliced, symbolic_walk, ContractionTree, MemoryTracker, NetworkError,
    TensorNetwork, BYTES_PER_ENTRY,
};
use crate::tensor::{add, entry_count, slice_tensor, Assignment, Index, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("{0:?} is not a bond index of the network")]
    NotABondIndex(Index),
    #[error("every bond index is already sliced")]
    NoCandidates,
    #[error("needs {needed} bytes per slice with every bond index sliced, budget is {budget}")]
    BudgetInfeasible { needed: u128, budget: u128 },
    #[error("deadline passed during sliced execution")]
    Interrupted,
    #[error("{0} slices are too many to enumerate")]
    TooManySlices(u128),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The network `N[eta]`.
pub fn network_slice(n: &TensorNetwork, eta: &Assignment) -> Result<TensorNetwork, SliceError> {
    let bonds = n.bond_indices();
    if let Some(i) = eta.keys().find(|i| !bonds.contains(i)) {
        return Err(SliceError::NotABondIndex(*i));
    }
    let tensors = n
        .tensors()
        .iter()
        .map(|t| slice_tensor(t, eta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TensorNetwork::new(tensors)?)
}

fn check_bonds(n: &TensorNetwork, sliced: &BTreeSet<Index>) -> Result<(), SliceError> {
    let bonds = n.bond_indices();
    match sliced.iter().find(|i| !bonds.contains(i)) {
        Some(i) => Err(SliceError::NotABondIndex(*i)),
        None => Ok(()),
    }
}

/// Peak bytes of live tensors while executing one slice: leaves count from
/// their first use, intermediates until their parent is formed.
pub fn mem_cost(n: &TensorNetwork, t: &ContractionTree, sliced: &BTreeSet<Index>) -> Result<u128, SliceError> {
    t.check(n)?;
    check_bonds(n, sliced)?;
    let live = std::cell::Cell::new(0u128);
    let peak = std::cell::Cell::new(0u128);
    let bump = |entries: u128| {
        live.set(live.get() + entries * BYTES_PER_ENTRY);
        peak.set(peak.get().max(live.get()));
    };
    symbolic_walk(
        t,
        |l| {
            n.tensors()[l]
                .indices()
                .iter()
                .filter(|i| !sliced.contains(i))
                .copied()
                .collect()
        },
        |idx| bump(entry_count(idx)),
        |s| {
            bump(entry_count(s.out));
            live.set(live.get() - (entry_count(s.left) + entry_count(s.right)) * BYTES_PER_ENTRY);
        },
    );
    Ok(peak.get())
}

/// The unsliced bond index whose slicing gives the smallest memory cost;
/// ties go to the smallest id.
pub fn choose_slice_index(
    n: &TensorNetwork,
    t: &ContractionTree,
    sliced: &BTreeSet<Index>,
) -> Result<Index, SliceError> {
    let mut best: Option<(u128, Index)> = None;
    for j in n.bond_indices() {
        if sliced.contains(&j) {
            continue;
        }
        let mut with = sliced.clone();
        with.insert(j);
        let cost = mem_cost(n, t, &with)?;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, j));
        }
    }
    best.map(|(_, j)| j).ok_or(SliceError::NoCandidates)
}

/// Grows the slice set greedily until one slice fits in `budget` bytes.
pub fn choose_slice_set(n: &TensorNetwork, t: &ContractionTree, budget: u128) -> Result<BTreeSet<Index>, SliceError> {
    let mut sliced = BTreeSet::new();
    loop {
        let cost = mem_cost(n, t, &sliced)?;
        if cost <= budget {
            return Ok(sliced);
        }
        match choose_slice_index(n, t, &sliced) {
            Ok(j) => {
                sliced.insert(j);
            }
            Err(SliceError::NoCandidates) => return Err(SliceError::BudgetInfeasible { needed: cost, budget }),
            Err(e) => return Err(e),
        }
    }
}

/// Every assignment to `indices`, first index slowest.
pub fn assignments(indices: &[Index]) -> Vec<Assignment> {
    let total = entry_count(indices) as u64;
    (0..total).map(|k| assignment_at(indices, k)).collect()
}

/// The `k`-th assignment in the order of [`assignments`].
pub fn assignment_at(indices: &[Index], mut k: u64) -> Assignment {
    let mut out = Assignment::new();
    for i in indices.iter().rev() {
        let d = i.dim() as u64;
        out.insert(*i, (k % d) as usize);
        k /= d;
    }
    out
}

/// Contracts `N[eta]` along the same tree, slicing each leaf when first
/// needed. Returns the result and the instrumented peak in bytes.
pub fn execute_slice(n: &TensorNetwork, t: &ContractionTree, eta: &Assignment) -> Result<(Tensor, u128), SliceError> {
    t.check(n)?;
    let mut tracker = MemoryTracker::default();
    let out = execute_with(
        t,
        |l| {
            slice_tensor(&n.tensors()[l], eta)
                .map(Cow::Owned)
                .map_err(NetworkError::from)
        },
        Some(&mut tracker),
    )?;
    Ok((out, tracker.peak))
}

#[derive(Debug, Clone)]
pub struct SlicedOutcome {
    pub value: Tensor,
    pub sliced: Vec<Index>,
    pub mem_estimate: u128,
    /// Largest instrumented peak over all slices.
    pub peak: u128,
    pub slices: u64,
    /// Multiply-adds summed over every slice.
    pub ops: f64,
}

/// Picks slices for `budget` bytes, contracts
/// every slice, and sums. With `jobs > 1` slices are contracted on a thread
/// pool; the sum is always taken in slice order.
pub fn sliced_execute_with(
    n: &TensorNetwork,
    t: &ContractionTree,
    budget: u128,
    jobs: usize,
) -> Result<SlicedOutcome, SliceError> {
    sliced_execute_until(n, t, budget, jobs, None)
}

/// As [`sliced_execute_with`], giving up with `Interrupted` once `deadline`
/// passes between slices.
pub fn sliced_execute_until(
    n: &TensorNetwork,
    t: &ContractionTree,
    budget: u128,
    jobs: usize,
    deadline: Option<Instant>,
) -> Result<SlicedOutcome, SliceError> {
    let sliced = choose_slice_set(n, t, budget)?;
    let mem_estimate = mem_cost(n, t, &sliced)?;
    let indices: Vec<Index> = sliced.iter().copied().collect();
    run_slices(n, t, &indices, jobs, mem_estimate, deadline)
}

pub fn sliced_execute(n: &TensorNetwork, t: &ContractionTree, budget: u128) -> Result<Tensor, SliceError> {
    Ok(sliced_execute_with(n, t, budget, 1)?.value)
}

/// Sums the contractions of every slice over a fixed index set.
pub fn execute_with_slices(
    n: &TensorNetwork,
    t: &ContractionTree,
    indices: &[Index],
    jobs: usize,
) -> Result<SlicedOutcome, SliceError> {
    let set: BTreeSet<Index> = indices.iter().copied().collect();
    let mem_estimate = mem_cost(n, t, &set)?;
    let ordered: Vec<Index> = set.into_iter().collect();
    run_slices(n, t, &ordered, jobs, mem_estimate, None)
}

fn run_slices(
    n: &TensorNetwork,
    t: &ContractionTree,
    indices: &[Index],
    jobs: usize,
    mem_estimate: u128,
    deadline: Option<Instant>,
) -> Result<SlicedOutcome, SliceError> {
    const CHUNK: u64 = 1024;
    let count = entry_count(indices);
    let total = u64::try_from(count).map_err(|_| SliceError::TooManySlices(count))?;
    let one = |k: u64| {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(SliceError::Interrupted);
        }
        execute_slice(n, t, &assignment_at(indices, k))
    };
    let pool = if jobs > 1 && total > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool"),
        )
    } else {
        None
    };
    let mut value: Option<Tensor> = None;
    let mut peak = 0;
    let mut start = 0;
    while start < total {
        let range = start..total.min(start + CHUNK);
        start = range.end;
        let results: Vec<Result<(Tensor, u128), SliceError>> = match &pool {
            Some(p) => p.install(|| range.into_par_iter().map(one).collect()),
            None => range.map(one).collect(),
        };
        // summed in slice order whatever the thread count
        for r in results {
            let (part, p) = r?;
            peak = peak.max(p);
            value = Some(match value {
                None => part,
                Some(acc) => add(&acc, &part)?,
            });
        }
    }
    let sliced: BTreeSet<Index> = indices.iter().copied().collect();
    let ops = op_count_sliced(n, t, &sliced)? * total as f64;
    Ok(SlicedOutcome {
        value: value.expect("at least one slice"),
        sliced: indices.to_vec(),
        mem_estimate,
        peak,
        slices: total,
        ops,
    })
}
