//! Weighted model counting by tensor-network contraction.

pub mod driver;
pub mod factoring;
pub mod formula;
pub mod graph;
pub mod network;
pub mod reduction;
pub mod slicing;
pub mod tensor;
