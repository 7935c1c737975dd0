//! Incremental min-cost flow via min-ratio cycles, at desk scale.

pub mod cover;
pub mod dyntree;
pub mod graph;
pub mod hrg;
pub mod ipm;
pub mod oracle;
pub mod portal;
pub mod spanner;
pub mod stream;

pub use dyntree::{DynForestT, DynTreeError, TreeEdge};
pub use graph::{Circulation, Dsu, DynGraph, Edge, EdgeId, FlatForest, VertexId};

/// Double-precision dynamic forest.
pub type DynForest = DynForestT<f64>;
