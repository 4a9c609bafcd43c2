use crate::autograd::{Bound, Graph, Matrix, Var};

use super::builder::ParamBuilder;
use super::ModelError;
use crate::autograd::ParamId;

/// Gate weights `(d_h, d_in + d_h)` acting on `[x; h]`, biases `(d_h, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_g: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_g: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmCellParams {
    pub(crate) fn build(b: &mut ParamBuilder<'_>, prefix: &str, d_in: usize, d_h: usize) -> Result<Self, ModelError> {
        let cols = d_in + d_h;
        let mut w = |g: &str| b.weight(&format!("{prefix}.w_{g}"), d_h, cols);
        let (w_i, w_f, w_o, w_g) = (w("i")?, w("f")?, w("o")?, w("g")?);
        Ok(Self {
            w_i,
            w_f,
            w_o,
            w_g,
            b_i: b.filled(&format!("{prefix}.b_i"), d_h, 0.0)?,
            // Forget gate starts open.
            b_f: b.filled(&format!("{prefix}.b_f"), d_h, 1.0)?,
            b_o: b.filled(&format!("{prefix}.b_o"), d_h, 0.0)?,
            b_g: b.filled(&format!("{prefix}.b_g"), d_h, 0.0)?,
            d_in,
            d_h,
        })
    }
}

/// One gated update on `[x; h_prev]`:
/// `c = σ(f)⊙c_prev + σ(i)⊙tanh(g)`, `h = σ(o)⊙tanh(c)`.
pub fn lstm_step(
    g: &mut Graph,
    p: &Bound,
    cell: &LstmCellParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), ModelError> {
    let xh = g.concat(&[x, h_prev])?;
    let mut gate = |w: ParamId, b: ParamId| -> Result<Var, ModelError> {
        let z = g.matmul(p.var(w), xh)?;
        Ok(g.add(z, p.var(b))?)
    };
    let (zi, zf, zo, zg) = (gate(cell.w_i, cell.b_i)?, gate(cell.w_f, cell.b_f)?, gate(cell.w_o, cell.b_o)?, gate(cell.w_g, cell.b_g)?);
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let cand = g.tanh(zg);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs the cell over the columns of `x` (`d_in × n`) from zero state and
/// returns the hidden states as `d_h × n`.
///
/// Same arithmetic as repeated [`lstm_step`], but input projections are
/// computed for all steps at once and the four gates share one matmul.
pub fn lstm_sequence(g: &mut Graph, p: &Bound, cell: &LstmCellParams, x: Var) -> Result<Var, ModelError> {
    let (d_in, n) = g.shape(x);
    if d_in != cell.d_in || n == 0 {
        return Err(ModelError::Shape(format!(
            "lstm input {:?}, expected {} rows",
            g.shape(x),
            cell.d_in
        )));
    }
    let d_h = cell.d_h;
    // Gate order in the stacked blocks: i, f, o, g.
    let ws = [cell.w_i, cell.w_f, cell.w_o, cell.w_g].map(|w| p.var(w));
    let bs = [cell.b_i, cell.b_f, cell.b_o, cell.b_g].map(|b| p.var(b));
    let w_all = g.concat(&ws)?;
    let b_all = g.concat(&bs)?;
    let w_x = g.slice_columns(w_all, 0, d_in)?;
    let w_h = g.slice_columns(w_all, d_in, d_h)?;
    let zx = g.matmul(w_x, x)?;
    let zx = g.add_column(zx, b_all)?;

    let mut h = g.constant(Matrix::zeros(d_h, 1));
    let mut c = g.constant(Matrix::zeros(d_h, 1));
    let mut hs = Vec::with_capacity(n);
    for t in 0..n {
        let zt = g.slice_columns(zx, t, 1)?;
        let zh = g.matmul(w_h, h)?;
        let z = g.add(zt, zh)?;
        let sig_in = g.slice_rows(z, 0, 3 * d_h)?;
        let sig = g.sigmoid(sig_in);
        let cand_in = g.slice_rows(z, 3 * d_h, d_h)?;
        let cand = g.tanh(cand_in);
        let i = g.slice_rows(sig, 0, d_h)?;
        let f = g.slice_rows(sig, d_h, d_h)?;
        let o = g.slice_rows(sig, 2 * d_h, d_h)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        hs.push(h);
    }
    Ok(g.concat_columns(&hs)?)
}
