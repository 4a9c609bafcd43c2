//! Recurrent lane-change predictors (fusion network, attention network,
//! single-cell baseline) and the frame-wise Gaussian baseline.

mod attention;
mod builder;
mod dropout;
mod lstm;
mod nb;

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autograd::{
    read_checkpoint, softmax_columns, write_checkpoint, AutogradError, Bound, CheckpointError, Graph, Matrix,
    ParamId, ParamStore, Var,
};
use crate::features::{FeatureLayout, NormStats};

pub use attention::{attention_score, AttentionNodes, ContextMode};
pub use dropout::{structured_dropout, DropMask};
pub use lstm::{lstm_sequence, lstm_step, LstmCellParams};
pub use nb::{nb_features, nb_fit, nb_predict, NbParams};

use attention::AttentionParams;
use builder::ParamBuilder;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] CheckpointError),
    #[error("operation needs an attention model, got {0:?}")]
    NotAttention(ModelKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Three group-wise cells fused into one output path.
    LstmE,
    /// The fusion network plus category/time attention.
    LstmA,
    /// One cell over the whole feature vector.
    Vanilla,
    /// Frame-wise diagonal Gaussian classifier.
    NaiveBayes,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LstmE => "LSTM-E",
            ModelKind::LstmA => "LSTM-A",
            ModelKind::Vanilla => "Vanilla LSTM",
            ModelKind::NaiveBayes => "NB",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    /// Steps looked back by attention; the window holds `window + 1` steps.
    pub window: usize,
    pub context: ContextMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LstmA,
            hidden: 128,
            embed_dim: 16,
            attention_dim: 16,
            window: 20,
            context: ContextMode::RawFeatures,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    rows: Range<usize>,
    cell: LstmCellParams,
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct NetIds {
    branches: Vec<Branch>,
    fusion_w: ParamId,
    fusion_b: ParamId,
    w_u: ParamId,
    b_u: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    attention: Option<AttentionParams>,
}

impl NetIds {
    fn build(b: &mut ParamBuilder<'_>, config: &ModelConfig, layout: FeatureLayout) -> Result<Self, ModelError> {
        let d_h = config.hidden;
        let groups: Vec<(&str, Range<usize>)> = match config.kind {
            ModelKind::LstmE | ModelKind::LstmA => vec![
                ("z", layout.target_group()),
                ("e", layout.env_group()),
                ("m", layout.static_group()),
            ],
            ModelKind::Vanilla => vec![("all", 0..layout.dim())],
            ModelKind::NaiveBayes => {
                return Err(ModelError::Shape("the Gaussian baseline has no network".into()));
            }
        };
        if d_h == 0 || config.embed_dim == 0 || config.attention_dim == 0 {
            return Err(ModelError::Shape("model dimensions must be positive".into()));
        }
        let mut branches = Vec::new();
        for (key, rows) in groups {
            let cell = LstmCellParams::build(b, &format!("{key}.lstm"), rows.len(), d_h)?;
            branches.push(Branch {
                proj_w: b.weight(&format!("{key}.proj.w"), d_h, d_h)?,
                proj_b: b.zeros(&format!("{key}.proj.b"), d_h, 1)?,
                rows,
                cell,
            });
        }
        let nb = branches.len();
        let ids = NetIds {
            fusion_w: b.weight("fusion.w", d_h, nb * d_h)?,
            fusion_b: b.zeros("fusion.b", d_h, 1)?,
            w_u: b.weight("out.w_u", d_h, d_h)?,
            b_u: b.zeros("out.b_u", d_h, 1)?,
            w_o: b.weight("out.w_o", 3, d_h)?,
            b_o: b.zeros("out.b_o", 3, 1)?,
            attention: if config.kind == ModelKind::LstmA {
                Some(AttentionParams::build(
                    b,
                    layout,
                    d_h,
                    config.embed_dim,
                    config.attention_dim,
                    config.context,
                )?)
            } else {
                None
            },
            branches,
        };
        Ok(ids)
    }
}

/// Options of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Per-frame dropout masks (training); `None` keeps both blocks.
    pub masks: Option<Vec<DropMask>>,
    /// Feed the attention weights downstream as separate leaves.
    pub detach_attention: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `3 × n` pre-softmax scores.
    pub logits: Var,
    /// Fusion layer, `hidden × n`.
    pub fusion: Var,
    pub attention: Option<AttentionNodes>,
}

/// Attention weights of one sequence, as plain values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub windows: Vec<(usize, usize)>,
    /// Per step: `beta[t][j][c]`, category `c` at window position `j`.
    pub beta: Vec<Vec<[f64; 5]>>,
    pub gamma: Vec<Vec<f64>>,
}

/// A recurrent network with its input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: FeatureLayout,
    norm: NormStats,
    params: ParamStore,
    ids: NetIds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    layout: FeatureLayout,
    norm: NormStats,
}

impl Model {
    pub fn new(config: ModelConfig, layout: FeatureLayout, norm: NormStats, seed: u64) -> Result<Self, ModelError> {
        if norm.dim() != layout.dim() {
            return Err(ModelError::Shape(format!(
                "normalization has {} dimensions, layout {}",
                norm.dim(),
                layout.dim()
            )));
        }
        let mut rng = crate::seed::derived_rng(seed, "model.init");
        let mut params = ParamStore::new();
        let ids = NetIds::build(
            &mut ParamBuilder::Init {
                store: &mut params,
                rng: &mut rng,
            },
            &config,
            layout,
        )?;
        Ok(Self {
            config,
            layout,
            norm,
            params,
            ids,
        })
    }

    /// Rebuilds a model around an existing parameter store.
    pub fn from_parts(config: ModelConfig, layout: FeatureLayout, norm: NormStats, params: ParamStore) -> Result<Self, ModelError> {
        let ids = NetIds::build(&mut ParamBuilder::Load { store: &params }, &config, layout)?;
        if params.len() != count_params(&ids) {
            return Err(ModelError::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Self {
            config,
            layout,
            norm,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Builds the forward pass for raw features `x` (`D × n`, one column per
    /// frame) on `g`. Parameters must be bound to `g` via `p`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: &Matrix, opts: &ForwardOptions) -> Result<ForwardOutput, ModelError> {
        let (d, n) = x.shape();
        if d != self.layout.dim() || n == 0 {
            return Err(ModelError::Shape(format!(
                "input {:?}, expected {} rows and at least one column",
                x.shape(),
                self.layout.dim()
            )));
        }
        let mut xn = Matrix::zeros(d, n);
        for r in 0..d {
            let (m, s) = (self.norm.mean[r], self.norm.std[r]);
            for c in 0..n {
                xn.set(r, c, (x.get(r, c) - m) / s);
            }
        }
        let xv = g.constant(xn);

        let mut projected = Vec::with_capacity(self.ids.branches.len());
        for br in &self.ids.branches {
            let xb = g.slice_rows(xv, br.rows.start, br.rows.len())?;
            let h = lstm_sequence(g, p, &br.cell, xb)?;
            let z = g.matmul(p.var(br.proj_w), h)?;
            projected.push(g.add_column(z, p.var(br.proj_b))?);
        }
        let cat = g.concat(&projected)?;
        let u = g.matmul(p.var(self.ids.fusion_w), cat)?;
        let u = g.add_column(u, p.var(self.ids.fusion_b))?;

        let (pre_out, attention) = match &self.ids.attention {
            None => (u, None),
            Some(ap) => {
                let (c, nodes) = attention::attend(
                    g,
                    p,
                    ap,
                    self.layout,
                    xv,
                    u,
                    self.config.window,
                    self.config.context,
                    opts.detach_attention,
                )?;
                let keep;
                let masks = match &opts.masks {
                    Some(m) => m.as_slice(),
                    None => {
                        keep = vec![DropMask::KEEP; n];
                        keep.as_slice()
                    }
                };
                let dropped = structured_dropout(
                    g,
                    u,
                    c,
                    p.var(ap.drop_fusion),
                    p.var(ap.drop_c),
                    p.var(ap.drop_b),
                    masks,
                )?;
                (dropped, Some(nodes))
            }
        };
        let o = g.matmul(p.var(self.ids.w_u), pre_out)?;
        let o = g.add_column(o, p.var(self.ids.b_u))?;
        let o = g.tanh(o);
        let y = g.matmul(p.var(self.ids.w_o), o)?;
        let logits = g.add_column(y, p.var(self.ids.b_o))?;
        Ok(ForwardOutput {
            logits,
            fusion: u,
            attention,
        })
    }

    /// Class probabilities, `3 × n`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.predict_with_attention(x)?.0)
    }

    pub fn predict_with_attention(&self, x: &Matrix) -> Result<(Matrix, Option<AttentionRecord>), ModelError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward(&mut g, &p, x, &ForwardOptions::default())?;
        let probs = softmax_columns(g.value(out.logits));
        let record = out.attention.map(|a| AttentionRecord {
            windows: a.windows.clone(),
            beta: a
                .beta
                .iter()
                .map(|&b| {
                    let m = g.value(b);
                    (0..m.cols()).map(|j| std::array::from_fn(|c| m.get(c, j))).collect()
                })
                .collect(),
            gamma: a.gamma.iter().map(|&v| g.value(v).as_slice().to_vec()).collect(),
        });
        Ok((probs, record))
    }
}

fn count_params(ids: &NetIds) -> usize {
    let per_branch = 8 + 2;
    let attention = ids.attention.as_ref().map_or(0, |_| 5 * 4 + 2 + 3);
    ids.branches.len() * per_branch + 6 + attention
}

/// A trained predictor of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    Net(Model),
    NaiveBayes { layout: FeatureLayout, params: NbParams },
}

impl Predictor {
    pub fn kind(&self) -> ModelKind {
        match self {
            Predictor::Net(m) => m.kind(),
            Predictor::NaiveBayes { .. } => ModelKind::NaiveBayes,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        match self {
            Predictor::Net(m) => m.layout(),
            Predictor::NaiveBayes { layout, .. } => *layout,
        }
    }

    /// `3 × n` probabilities for raw features `x` and the per-frame speed
    /// difference to the preceding vehicle.
    pub fn predict(&self, x: &Matrix, rel_v_pv: &[f64]) -> Result<Matrix, ModelError> {
        match self {
            Predictor::Net(m) => m.predict_proba(x),
            Predictor::NaiveBayes { params, .. } => {
                if rel_v_pv.len() != x.cols() {
                    return Err(ModelError::Shape("rel_v_pv length differs from frame count".into()));
                }
                let mut out = Matrix::zeros(3, x.cols());
                for (c, &rv) in rel_v_pv.iter().enumerate() {
                    let post = nb_predict(params, &[x.get(0, c), x.get(1, c), rv]);
                    for (r, v) in post.iter().enumerate() {
                        out.set(r, c, *v);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let (header, store) = match self {
            Predictor::Net(m) => (
                Header {
                    model: m.config.clone(),
                    layout: m.layout,
                    norm: m.norm.clone(),
                },
                m.params.clone(),
            ),
            Predictor::NaiveBayes { layout, params } => (
                Header {
                    model: ModelConfig {
                        kind: ModelKind::NaiveBayes,
                        ..ModelConfig::default()
                    },
                    layout: *layout,
                    norm: NormStats::identity(layout.dim()),
                },
                params.to_store(),
            ),
        };
        let header = serde_json::to_value(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        write_checkpoint(w, &header, &store)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, ModelError> {
        let (header, store) = read_checkpoint(r)?;
        let header: Header = serde_json::from_value(header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if header.model.kind == ModelKind::NaiveBayes {
            return Ok(Predictor::NaiveBayes {
                layout: header.layout,
                params: NbParams::from_store(&store)?,
            });
        }
        Ok(Predictor::Net(Model::from_parts(header.model, header.layout, header.norm, store)?))
    }
}

#[cfg(test)]
mod tests;
