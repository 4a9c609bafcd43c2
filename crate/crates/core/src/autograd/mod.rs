//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod checkpoint;
mod graph;
mod matrix;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use graph::{sigmoid, softmax_columns, softmax_slice, Graph, Op, Value, Var};
pub use matrix::Matrix;
pub use params::{init_matrix, rng_init, Bound, InitScheme, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutogradError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index:?} out of range for shape {shape:?}")]
    Index {
        op: &'static str,
        index: (usize, usize),
        shape: (usize, usize),
    },
    #[error("{0}: no operands")]
    Empty(&'static str),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
}
