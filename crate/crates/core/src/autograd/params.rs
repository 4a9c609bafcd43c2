use std::collections::HashMap;

use rand::Rng;

use super::graph::{Graph, Var};
use super::matrix::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter matrices in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; parameter layouts are fixed by model code.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        self.lookup.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Register every parameter as a differentiable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| graph.leaf(v.clone())).collect(),
        }
    }

    /// Zero-filled gradient buffers with this store's shapes.
    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect()
    }
}

/// Graph handles of a [`ParamStore`] bound into one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of every parameter after `graph.backward`; unreached
    /// parameters get zeros.
    pub fn gradients(&self, graph: &Graph, store: &ParamStore) -> Vec<Matrix> {
        self.vars
            .iter()
            .zip(store.values.iter())
            .map(|(&v, p)| {
                graph
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
            })
            .collect()
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in = cols`.
    UniformScaled,
    Zeros,
}

pub fn init_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scheme: InitScheme) -> Matrix {
    match scheme {
        InitScheme::Zeros => Matrix::zeros(rows, cols),
        InitScheme::UniformScaled => {
            let bound = 1.0 / (cols.max(1) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        }
    }
}

/// Seeded initialization of a single matrix.
pub fn rng_init(rows: usize, cols: usize, scheme: InitScheme, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed);
    init_matrix(&mut rng, rows, cols, scheme)
}
