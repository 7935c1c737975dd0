//! Applications on top of the incremental min-cost flow loop, and the
//! reference algorithms they are checked against.

pub mod apps;
pub mod baseline;
