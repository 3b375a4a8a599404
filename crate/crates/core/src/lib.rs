//! Model-based relational testing for speculative leaks on a simulated
//! out-of-order core.

pub mod campaign;
pub mod contract;
pub mod defense;
pub mod error;
pub mod gadgets;
pub mod generator;
pub mod isa;
pub mod par;
pub mod relational;
pub mod trace;
pub mod uarch;

pub use error::{Error, Result};
