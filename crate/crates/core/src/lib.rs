//! Fitting stochastic block models (standard and degree-corrected) to sparse
//! undirected networks with belief propagation, and selecting the number of
//! clusters by Bethe free energy and leave-one-out cross-validation errors
//! computed from the cavity messages.

pub mod assess;
pub mod bp;
pub mod em;
pub mod graph;
pub mod model;
pub mod spectral;
pub mod synth;

pub use bp::{run_bp, BpOptions, BpState, InitMode, Schedule};
pub use em::{fit, FitConfig, FitResult, InitStrategy};
pub use graph::{load_graph, Graph, GraphFormat};
pub use model::{planted_partition, Hyperparams, ModelKind};
