//! Synthetic plausibility benchmark: bouncing-blob dynamics, corrupted
//! twins, and the experiment harnesses built on them.

mod dynamics;
mod experiments;

pub use dynamics::*;
pub use experiments::*;
