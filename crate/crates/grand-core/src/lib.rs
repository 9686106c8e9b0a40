//! Graph diffusion engine: learned attention diffusivities on sparse graphs,
//! a family of explicit/implicit/multistep/adaptive integrators with
//! machine-checked stability properties, graph rewiring, and a desk-scale
//! node-classification trainer built on exact backpropagation through the
//! solver steps.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod graph;
pub mod model;
pub mod rewire;
pub mod solver;
pub mod sparse;
pub mod stability;
pub mod train;

pub use error::{GrandError, Result};
pub use field::NodeField;
pub use graph::{adjointness_check, divergence, gradient, EdgeField, Graph};

/// Caps the global worker pool. Must run before any parallel kernel; returns
/// false if the pool was already initialized.
pub fn set_thread_cap(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
}
