use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix, ParamId, Var, Bound};
use crate::features::{Category, FeatureLayout};

use super::builder::ParamBuilder;
use super::ModelError;

/// What the context vector aggregates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Category-scaled model inputs.
    #[default]
    RawFeatures,
    /// Category-scaled embeddings.
    ScaledEmbeddings,
}

/// Additive attention score `vᵀ tanh(W [q; k])`.
pub fn attention_score(g: &mut Graph, w: Var, v: Var, q: Var, k: Var) -> Result<Var, ModelError> {
    let qk = g.concat(&[q, k])?;
    let z = g.matmul(w, qk)?;
    let t = g.tanh(z);
    let vt = g.transpose(v);
    Ok(g.matmul(vt, t)?)
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AttentionParams {
    /// Per category, in [`Category::ALL`] order: embedding `(W, b)`.
    pub embed: Vec<(ParamId, ParamId)>,
    /// Per category: scorer `(W, v)` with `W` acting on `[u_t; E]`.
    pub score: Vec<(ParamId, ParamId)>,
    pub time: (ParamId, ParamId),
    pub drop_fusion: ParamId,
    pub drop_c: ParamId,
    pub drop_b: ParamId,
    pub dims: [usize; 5],
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub query_dim: usize,
    pub context_dim: usize,
}

pub(crate) fn category_key(c: Category) -> &'static str {
    match c {
        Category::Target => "target",
        Category::Same => "same",
        Category::Left => "left",
        Category::Right => "right",
        Category::Street => "street",
    }
}

impl AttentionParams {
    pub fn build(
        b: &mut ParamBuilder<'_>,
        layout: FeatureLayout,
        query_dim: usize,
        embed_dim: usize,
        attention_dim: usize,
        mode: ContextMode,
    ) -> Result<Self, ModelError> {
        let dims = layout.category_dims();
        let mut embed = Vec::new();
        let mut score = Vec::new();
        for (c, &d) in Category::ALL.iter().zip(&dims) {
            let k = category_key(*c);
            embed.push((
                b.weight(&format!("att.{k}.embed.w"), embed_dim, d)?,
                b.zeros(&format!("att.{k}.embed.b"), embed_dim, 1)?,
            ));
            score.push((
                b.weight(&format!("att.{k}.score.w"), attention_dim, query_dim + embed_dim)?,
                b.weight(&format!("att.{k}.score.v"), attention_dim, 1)?,
            ));
        }
        let time = (
            b.weight("att.time.w", attention_dim, query_dim + 5 * embed_dim)?,
            b.weight("att.time.v", attention_dim, 1)?,
        );
        let context_dim = match mode {
            ContextMode::RawFeatures => layout.dim(),
            ContextMode::ScaledEmbeddings => 5 * embed_dim,
        };
        Ok(Self {
            embed,
            score,
            time,
            drop_fusion: b.weight("drop.w_fusion", query_dim, query_dim)?,
            drop_c: b.weight("drop.w_c", query_dim, context_dim)?,
            drop_b: b.zeros("drop.b", query_dim, 1)?,
            dims,
            embed_dim,
            attention_dim,
            query_dim,
            context_dim,
        })
    }
}

/// Graph handles of the attention weights for one sequence. Entry `t`
/// covers the window `windows[t] = (start, len)` ending at step `t`.
#[derive(Clone, Debug)]
pub struct AttentionNodes {
    pub windows: Vec<(usize, usize)>,
    /// `5 × len`: column `j` holds the category weights of step `start + j`.
    pub beta: Vec<Var>,
    /// `len × 1` weights over the window.
    pub gamma: Vec<Var>,
}

/// `rows × 5` indicator mapping each category weight onto its rows.
fn expansion(dims: &[usize]) -> Matrix {
    let rows: usize = dims.iter().sum();
    let mut m = Matrix::zeros(rows, dims.len());
    let mut r = 0;
    for (c, &d) in dims.iter().enumerate() {
        for _ in 0..d {
            m.set(r, c, 1.0);
            r += 1;
        }
    }
    m
}

/// One `1 × len` block per row: row `c` holds `v_cᵀ` at columns
/// `c·len..(c+1)·len`, so a single product scores every category.
fn block_diagonal(g: &mut Graph, vs: &[Var]) -> Result<Var, ModelError> {
    let len = g.shape(vs[0]).0;
    let n = vs.len();
    let mut rows = Vec::with_capacity(n);
    for (c, &v) in vs.iter().enumerate() {
        let vt = g.transpose(v);
        let mut parts = Vec::new();
        if c > 0 {
            parts.push(g.constant(Matrix::zeros(1, c * len)));
        }
        parts.push(vt);
        if c + 1 < n {
            parts.push(g.constant(Matrix::zeros(1, (n - c - 1) * len)));
        }
        rows.push(g.concat_columns(&parts)?);
    }
    Ok(g.concat(&rows)?)
}

/// Context vectors `c_t` (`context_dim × n`) for queries `u` (`d × n`) over
/// inputs `x` (`D × n`), with windows of `window + 1` steps truncated at the
/// sequence start. With `detach`, the attention weights enter the rest of
/// the graph as fresh leaves holding the same values, so their gradients are
/// partial derivatives of the downstream computation alone.
pub(crate) fn attend(
    g: &mut Graph,
    p: &Bound,
    ap: &AttentionParams,
    layout: FeatureLayout,
    x: Var,
    u: Var,
    window: usize,
    mode: ContextMode,
    detach: bool,
) -> Result<(Var, AttentionNodes), ModelError> {
    let n = g.shape(u).1;
    let (de, da, dq) = (ap.embed_dim, ap.attention_dim, ap.query_dim);

    // Embeddings, one block per category, stacked: 5·de × n.
    let mut embeds = Vec::with_capacity(5);
    for (c, &(w, b)) in Category::ALL.iter().zip(&ap.embed) {
        let r = layout.category(*c);
        let xc = g.slice_rows(x, r.start, r.len())?;
        let e = g.matmul(p.var(w), xc)?;
        embeds.push(g.add_column(e, p.var(b))?);
    }
    let e_all = g.concat(&embeds)?;

    // Split every scorer into its query and key blocks.
    let mut wq = Vec::with_capacity(5);
    let mut keys = Vec::with_capacity(5);
    for (&(w, _), &e) in ap.score.iter().zip(&embeds) {
        let w = p.var(w);
        wq.push(g.slice_columns(w, 0, dq)?);
        let wk = g.slice_columns(w, dq, de)?;
        keys.push(g.matmul(wk, e)?);
    }
    let wq_all = g.concat(&wq)?;
    let q_all = g.matmul(wq_all, u)?; // 5·da × n
    let k_all = g.concat(&keys)?; // 5·da × n
    let vs: Vec<Var> = ap.score.iter().map(|&(_, v)| p.var(v)).collect();
    let v_blk = block_diagonal(g, &vs)?; // 5 × 5·da

    let w_time = p.var(ap.time.0);
    let wq_t = g.slice_columns(w_time, 0, dq)?;
    let wk_t = g.slice_columns(w_time, dq, 5 * de)?;
    let q_time = g.matmul(wq_t, u)?; // da × n
    let k_time = g.matmul(wk_t, e_all)?; // da × n
    let v_time_t = g.transpose(p.var(ap.time.1));

    let (values, dims): (Var, Vec<usize>) = match mode {
        ContextMode::RawFeatures => (x, ap.dims.to_vec()),
        ContextMode::ScaledEmbeddings => (e_all, vec![de; 5]),
    };
    let expand = g.constant(expansion(&dims));

    let mut nodes = AttentionNodes {
        windows: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
    };
    let mut contexts = Vec::with_capacity(n);
    for t in 0..n {
        let start = t.saturating_sub(window);
        let len = t - start + 1;
        let kw = g.slice_columns(k_all, start, len)?;
        let qt = g.slice_columns(q_all, t, 1)?;
        let z = g.add_column(kw, qt)?;
        let z = g.tanh(z);
        let scores = g.matmul(v_blk, z)?; // 5 × len
        let mut beta = g.softmax(scores)?;

        let kt = g.slice_columns(k_time, start, len)?;
        let qtt = g.slice_columns(q_time, t, 1)?;
        let zt = g.add_column(kt, qtt)?;
        let zt = g.tanh(zt);
        let st = g.matmul(v_time_t, zt)?; // 1 × len
        let st = g.transpose(st);
        let mut gamma = g.softmax(st)?;

        if detach {
            beta = g.leaf(g.value(beta).clone());
            gamma = g.leaf(g.value(gamma).clone());
        }
        let scale = g.matmul(expand, beta)?;
        let vw = g.slice_columns(values, start, len)?;
        let weighted = g.mul(scale, vw)?;
        contexts.push(g.matmul(weighted, gamma)?);
        nodes.windows.push((start, len));
        nodes.beta.push(beta);
        nodes.gamma.push(gamma);
    }
    debug_assert_eq!(da * 5, g.shape(k_all).0);
    Ok((g.concat_columns(&contexts)?, nodes))
}
