//! Quantum process expressions, their probabilistic operational semantics
//! and strong/weak probabilistic bisimulation checking.

pub mod ast;
pub mod bisim;
pub mod context;
pub mod demo;
pub mod export;
pub mod frontend;
pub mod laws;
pub mod linalg;
pub mod lp;
pub mod lts;
