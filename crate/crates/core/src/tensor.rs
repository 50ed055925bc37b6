//! Dense tensors over named indices.
//!
//! Values are stored row-major: the first listed index varies slowest.
//! Pairwise contraction runs as a matrix multiply over strided views of the
//! operands (kept-a x shared) * (shared x kept-b), so no transposed copy of
//! either operand is materialized.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("value count {found} does not match shape product {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("index {0} listed twice")]
    DuplicateIndex(Index),
    #[error("index sets differ")]
    IndexMismatch,
    #[error("value {value} out of domain for index {index}")]
    BindingOutOfDomain { index: Index, value: usize },
    #[error("tensor of {0} entries exceeds addressable memory")]
    OutOfMemory(u128),
}

/// A named index with a finite domain `0..dim`.
///
/// Identity is the id alone; the domain size travels with it for
/// convenience.
#[derive(Clone, Copy)]
pub struct Index {
    id: u32,
    dim: u32,
}

impl Index {
    pub fn new(id: u32, dim: usize) -> Self {
        assert!(dim >= 1, "index domain must be nonempty");
        Self { id, dim: dim as u32 }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }
}

impl PartialEq for Index {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Index {}

impl Hash for Index {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl PartialOrd for Index {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Index {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id.cmp(&other.id)
    }
}

impl fmt::Debug for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}[{}]", self.id, self.dim)
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.id)
    }
}

/// A partial assignment of index values.
pub type Assignment = BTreeMap<Index, usize>;

/// Number of entries of a dense tensor over `indices`.
pub fn entry_count<'a>(indices: impl IntoIterator<Item = &'a Index>) -> u128 {
    indices.into_iter().map(|i| i.dim() as u128).product()
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    indices: Vec<Index>,
    values: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("indices", &self.indices)
            .field("values", &self.values)
            .finish()
    }
}

impl Tensor {
    pub fn new(indices: Vec<Index>, values: Vec<f64>) -> Result<Self, TensorError> {
        for (k, i) in indices.iter().enumerate() {
            if indices[..k].contains(i) {
                return Err(TensorError::DuplicateIndex(*i));
            }
        }
        let expected = entry_count(&indices);
        if expected != values.len() as u128 {
            return Err(TensorError::ShapeMismatch {
                expected: expected as usize,
                found: values.len(),
            });
        }
        Ok(Self { indices, values })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            indices: Vec::new(),
            values: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every assignment, enumerated in
    /// row-major order.
    pub fn from_fn(indices: Vec<Index>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self, TensorError> {
        let total = checked_len(entry_count(&indices))?;
        let dims: Vec<usize> = indices.iter().map(Index::dim).collect();
        let mut digits = vec![0usize; dims.len()];
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(f(&digits));
            increment(&mut digits, &dims);
        }
        Self::new(indices, values)
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_index(&self, index: Index) -> bool {
        self.indices.contains(&index)
    }

    /// The single entry of a rank-0 tensor.
    pub fn scalar_value(&self) -> Option<f64> {
        if self.indices.is_empty() {
            Some(self.values[0])
        } else {
            None
        }
    }

    fn strides(&self) -> Vec<usize> {
        strides_of(&self.indices)
    }

    /// Entry at an assignment that binds every index of the tensor; extra
    /// bindings are ignored.
    pub fn get(&self, assignment: &Assignment) -> Option<f64> {
        let strides = self.strides();
        let mut offset = 0;
        for (i, s) in self.indices.iter().zip(strides) {
            let v = *assignment.get(i)?;
            if v >= i.dim() {
                return None;
            }
            offset += v * s;
        }
        Some(self.values[offset])
    }

    /// Entry at row-major coordinates given in index order.
    pub fn at(&self, coords: &[usize]) -> f64 {
        let offset: usize = coords.iter().zip(self.strides()).map(|(c, s)| c * s).sum();
        self.values[offset]
    }

    /// Reorders the storage so that the indices appear in `order`.
    pub fn permuted(&self, order: &[Index]) -> Result<Tensor, TensorError> {
        if order.len() != self.indices.len() || order.iter().any(|i| !self.has_index(*i)) {
            return Err(TensorError::IndexMismatch);
        }
        let offsets = offset_table(&self.indices, &self.strides(), order);
        let values = offsets.iter().map(|&o| self.values[o]).collect();
        Tensor::new(order.to_vec(), values)
    }

    /// Entrywise comparison after aligning index order; `rel_tol` is relative
    /// to the larger magnitude of each pair (absolute below 1).
    pub fn approx_eq(&self, other: &Tensor, rel_tol: f64) -> bool {
        let Ok(aligned) = other.permuted(&self.indices) else {
            return false;
        };
        self.values
            .iter()
            .zip(&aligned.values)
            .all(|(a, b)| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0))
    }
}

pub(crate) fn strides_of(indices: &[Index]) -> Vec<usize> {
    let mut strides = vec![1; indices.len()];
    for k in (0..indices.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * indices[k + 1].dim();
    }
    strides
}

fn increment(digits: &mut [usize], dims: &[usize]) {
    for k in (0..digits.len()).rev() {
        digits[k] += 1;
        if digits[k] < dims[k] {
            return;
        }
        digits[k] = 0;
    }
}

fn checked_len(count: u128) -> Result<usize, TensorError> {
    // 8-byte entries must fit the address space
    if count > (isize::MAX as u128) / 8 {
        return Err(TensorError::OutOfMemory(count));
    }
    Ok(count as usize)
}

/// Storage offsets of `source` visited in row-major order over `subset`.
fn offset_table(source: &[Index], strides: &[usize], subset: &[Index]) -> Vec<usize> {
    let sub_strides: Vec<usize> = subset
        .iter()
        .map(|i| {
            let pos = source.iter().position(|s| s == i).expect("subset index present");
            strides[pos]
        })
        .collect();
    let dims: Vec<usize> = subset.iter().map(Index::dim).collect();
    let total: usize = dims.iter().product();
    let mut digits = vec![0usize; dims.len()];
    let mut out = Vec::with_capacity(total);
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(offset);
        // odometer step, keeping the running offset in sync
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            offset += sub_strides[k];
            if digits[k] < dims[k] {
                break;
            }
            offset -= sub_strides[k] * dims[k];
            digits[k] = 0;
        }
    }
    out
}

/// Index list of the contraction of tensors over `a` and `b`: indices of `a`
/// not in `b`, followed by indices of `b` not in `a`.
pub fn contracted_indices(a: &[Index], b: &[Index]) -> Vec<Index> {
    a.iter()
        .filter(|i| !b.contains(i))
        .chain(b.iter().filter(|i| !a.contains(i)))
        .copied()
        .collect()
}

/// Contracts two tensors by summing over their shared indices.
pub fn contract_pair(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let kept_a: Vec<Index> = a.indices.iter().filter(|i| !b.has_index(**i)).copied().collect();
    let shared: Vec<Index> = a.indices.iter().filter(|i| b.has_index(**i)).copied().collect();
    let kept_b: Vec<Index> = b.indices.iter().filter(|i| !a.has_index(**i)).copied().collect();

    let rows = checked_len(entry_count(&kept_a))?;
    let cols = checked_len(entry_count(&kept_b))?;
    let out_len = checked_len(rows as u128 * cols as u128)?;

    let a_strides = a.strides();
    let b_strides = b.strides();
    let a_rows = offset_table(&a.indices, &a_strides, &kept_a);
    let a_inner = offset_table(&a.indices, &a_strides, &shared);
    let b_inner = offset_table(&b.indices, &b_strides, &shared);
    let b_cols = offset_table(&b.indices, &b_strides, &kept_b);

    let mut out = vec![0.0; out_len];
    for (r, &ar) in a_rows.iter().enumerate() {
        let row = &mut out[r * cols..(r + 1) * cols];
        for (&ai, &bi) in a_inner.iter().zip(&b_inner) {
            let x = a.values[ar + ai];
            if x == 0.0 {
                continue;
            }
            for (slot, &bc) in row.iter_mut().zip(&b_cols) {
                *slot += x * b.values[bi + bc];
            }
        }
    }
    let mut indices = kept_a;
    indices.extend(kept_b);
    Tensor::new(indices, out)
}

/// Entrywise sum; `b` is aligned to `a`'s index order first.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let aligned = b.permuted(&a.indices)?;
    let values = a.values.iter().zip(&aligned.values).map(|(x, y)| x + y).collect();
    Tensor::new(a.indices.clone(), values)
}

/// The eta-slice: fixes every index of `a` bound by `eta`. Bindings of
/// indices absent from `a` are ignored.
pub fn slice_tensor(a: &Tensor, eta: &Assignment) -> Result<Tensor, TensorError> {
    let strides = a.strides();
    let mut base = 0usize;
    let mut kept = Vec::new();
    for (i, s) in a.indices.iter().zip(&strides) {
        match eta.get(i) {
            Some(&v) => {
                if v >= i.dim() {
                    return Err(TensorError::BindingOutOfDomain { index: *i, value: v });
                }
                base += v * s;
            }
            None => kept.push(*i),
        }
    }
    if kept.len() == a.indices.len() {
        return Ok(a.clone());
    }
    let values = offset_table(&a.indices, &strides, &kept)
        .into_iter()
        .map(|o| a.values[base + o])
        .collect();
    Tensor::new(kept, values)
}
