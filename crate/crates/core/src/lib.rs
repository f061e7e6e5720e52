//! Sequential rerandomization experiments on panel data.

pub mod design;
pub mod estimate;
pub mod harness;
pub mod infer;
pub mod numerics;
pub mod population;
pub mod stream;
