use rand::Rng;

use crate::autograd::{Graph, Matrix, Var};

use super::ModelError;

/// Per-frame multipliers of the two weight blocks of the dropout layer:
/// 0 when the block is dropped, `1/(1-p)` when it survives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropMask {
    pub fusion: f64,
    pub context: f64,
}

impl DropMask {
    pub const KEEP: DropMask = DropMask {
        fusion: 1.0,
        context: 1.0,
    };

    pub fn draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut block = || if rng.random::<f64>() < p { 0.0 } else { keep };
        let fusion = block();
        let context = block();
        Self { fusion, context }
    }
}

fn masked(g: &mut Graph, x: Var, factors: impl Iterator<Item = f64> + Clone) -> Result<Var, ModelError> {
    if factors.clone().all(|f| f == 1.0) {
        return Ok(x);
    }
    let (rows, cols) = g.shape(x);
    let f: Vec<f64> = factors.collect();
    let m = g.constant(Matrix::from_fn(rows, cols, |_, c| f[c]));
    Ok(g.mul(x, m)?)
}

/// `W_fusion·u ⊙ mask_f + W_c·c ⊙ mask_c + b`, one mask per column.
/// Scaling a block's product is the same as scaling the block itself.
pub fn structured_dropout(
    g: &mut Graph,
    u: Var,
    c: Var,
    w_fusion: Var,
    w_c: Var,
    b: Var,
    masks: &[DropMask],
) -> Result<Var, ModelError> {
    let cols = g.shape(u).1;
    if masks.len() != cols || g.shape(c).1 != cols {
        return Err(ModelError::Shape(format!(
            "dropout over {cols} columns with {} masks and context {:?}",
            masks.len(),
            g.shape(c)
        )));
    }
    let fu = g.matmul(w_fusion, u)?;
    let fu = masked(g, fu, masks.iter().map(|m| m.fusion))?;
    let fc = g.matmul(w_c, c)?;
    let fc = masked(g, fc, masks.iter().map(|m| m.context))?;
    let sum = g.add(fu, fc)?;
    Ok(g.add_column(sum, b)?)
}
