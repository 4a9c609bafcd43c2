//! Attention contribution analysis and scene/timeline rendering.

mod svg;


use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix};
use crate::dataset::Sequence;
use crate::features::Category;
use crate::labeler::ManeuverLabel;
use crate::models::{ForwardOptions, Model, ModelError, ModelKind};
use crate::par::{self, Execution};
use crate::trajdata::FrameIndex;

pub use svg::{render_scene, render_timeline, SceneView};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("frame {frame} is outside the sequence [{first}, {end})")]
    FrameOutOfRange {
        frame: FrameIndex,
        first: FrameIndex,
        end: FrameIndex,
    },
    #[error("contributions need an attention model, got {0:?}")]
    NotAttention(ModelKind),
    #[error("timeline stream {name:?} has {len} frames, ground truth has {expected}")]
    Alignment { name: String, len: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autograd(#[from] crate::autograd::AutogradError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryContribution {
    pub category: Category,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub vehicle_id: u32,
    pub frame_index: FrameIndex,
    pub predicted: ManeuverLabel,
    /// Five entries in [`Category::ALL`] order, signed.
    pub contributions: Vec<CategoryContribution>,
    /// First frame of the attention window.
    pub window_start: FrameIndex,
    /// Derivative of the predicted logit by each temporal weight, oldest first.
    pub gamma_profile: Vec<f64>,
}

impl ContributionReport {
    pub fn value(&self, c: Category) -> f64 {
        self.contributions
            .iter()
            .find(|e| e.category == c)
            .map_or(0.0, |e| e.value)
    }
}

/// Derivatives of the predicted class's pre-softmax score at `frame` by the
/// category and temporal attention weights of that step, category
/// derivatives summed over the window.
pub fn attention_contributions(model: &Model, seq: &Sequence, frame: FrameIndex) -> Result<ContributionReport, ExplainError> {
    if model.kind() != ModelKind::LstmA {
        return Err(ExplainError::NotAttention(model.kind()));
    }
    let end = seq.first_frame + seq.len() as FrameIndex;
    if frame < seq.first_frame || frame >= end {
        return Err(ExplainError::FrameOutOfRange {
            frame,
            first: seq.first_frame,
            end,
        });
    }
    let t = (frame - seq.first_frame) as usize;
    // the network is causal: frames after `t` cannot affect step `t`
    let x = seq.features.cols_range(0, t + 1);
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let out = model.forward(
        &mut g,
        &p,
        &x,
        &ForwardOptions {
            masks: None,
            detach_attention: true,
        },
    )?;
    let logits = g.value(out.logits).column_values(t);
    let predicted = crate::training::argmax(&logits);
    let root = g.pick(out.logits, predicted, t)?;
    g.backward(root)?;
    let att = out.attention.expect("attention model");
    let (start, len) = att.windows[t];
    let grad_or_zero = |v, shape: (usize, usize)| g.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
    let db = grad_or_zero(att.beta[t], (5, len));
    let dg = grad_or_zero(att.gamma[t], (len, 1));
    let contributions = Category::ALL
        .iter()
        .enumerate()
        .map(|(c, &category)| CategoryContribution {
            category,
            value: (0..len).map(|j| db.get(c, j)).sum(),
        })
        .collect();
    Ok(ContributionReport {
        vehicle_id: seq.vehicle_id,
        frame_index: frame,
        predicted: ManeuverLabel::from_index(predicted).unwrap(),
        contributions,
        window_start: seq.first_frame + start as FrameIndex,
        gamma_profile: dg.as_slice().to_vec(),
    })
}

/// Reports for several frames of one sequence.
pub fn contributions_for(
    model: &Model,
    seq: &Sequence,
    frames: &[FrameIndex],
    exec: Execution,
) -> Result<Vec<ContributionReport>, ExplainError> {
    par::try_map(exec, frames, |&f| attention_contributions(model, seq, f))
}

/// One NDJSON record per report.
pub fn write_reports<W: Write>(mut w: W, reports: &[ContributionReport]) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
