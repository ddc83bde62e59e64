//! Core of the topology-refinement toolkit for text-attributed graphs:
//! graph model and sparse adjacency, a small reverse-mode kernel, label
//! propagation, a two-layer GCN with joint edge-weight learning, and
//! embedding-variation diagnostics.

pub mod diagnostics;
pub mod features;
pub mod gcn;
pub mod graph;
pub mod kernel;
pub mod labelprop;
pub mod normalize;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod train;

pub use graph::{DatasetSplit, NodeRecord, SplitPolicy, TextAttributedGraph};
pub use kernel::{KernelError, Tape, Var};
pub use sparse::{SparseMatrix, WeightedAdjacency};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainInput, TrainOutcome};
