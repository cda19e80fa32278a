//! Graph rationalization with environment-diversity augmentation.
//!
//! The crate learns per-edge masks that split a graph into a rationale
//! subgraph (which decides the label) and an environment subgraph (which
//! does not), refines the split with contrastive constraints, and augments
//! training data by mixing environment subgraphs of different graphs.

pub mod cli;
pub mod config;
pub mod eda;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod num;
pub mod prse;
pub mod spmotif;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{EdgeMask, Graph, SplitTag, Subgraph, SubgraphSplit};
