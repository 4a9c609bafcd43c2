use rand::RngCore;

use crate::autograd::{init_matrix, InitScheme, Matrix, ParamId, ParamStore};

use super::ModelError;

/// Either allocates freshly initialized parameters or resolves them by name
/// in a loaded store, so initialization and loading share one layout.
pub(crate) enum ParamBuilder<'a> {
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut dyn RngCore,
    },
    Load {
        store: &'a ParamStore,
    },
}

impl ParamBuilder<'_> {
    fn resolve(&mut self, name: &str, rows: usize, cols: usize, make: impl FnOnce(&mut dyn RngCore) -> Matrix) -> Result<ParamId, ModelError> {
        match self {
            ParamBuilder::Init { store, rng } => Ok(store.insert(name, make(&mut **rng))),
            ParamBuilder::Load { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
                let got = store.get(id).shape();
                if got != (rows, cols) {
                    return Err(ModelError::Checkpoint(format!(
                        "parameter {name} has shape {got:?}, expected {:?}",
                        (rows, cols)
                    )));
                }
                Ok(id)
            }
        }
    }

    /// `U(-1/sqrt(cols), 1/sqrt(cols))`.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        self.resolve(name, rows, cols, |rng| init_matrix(rng, rows, cols, InitScheme::UniformScaled))
    }

    /// Column vector with every entry `value`.
    pub fn filled(&mut self, name: &str, rows: usize, value: f64) -> Result<ParamId, ModelError> {
        self.resolve(name, rows, 1, |_| Matrix::filled(rows, 1, value))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        self.resolve(name, rows, cols, |_| Matrix::zeros(rows, cols))
    }
}
