use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::labeler::{ManeuverEvent, ManeuverLabel};
use crate::trajdata::FrameIndex;

use super::TrainError;

/// Per-frame loss weights of one labeled sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// One normalizer per lane-change event, in event order.
    pub alpha: Vec<(ManeuverEvent, f64)>,
    /// Indexed by [`ManeuverLabel::index`].
    pub w_class: [f64; 3],
    /// Seconds until the crossing, for lane-change frames.
    pub horizon: BTreeMap<FrameIndex, f64>,
    /// Final weight of every frame of the label stream.
    pub frame: Vec<f64>,
}

/// Inverse frame-frequency class weights, normalized to mean 1.
pub fn class_weights<'a>(streams: impl IntoIterator<Item = &'a [ManeuverLabel]>) -> Result<[f64; 3], TrainError> {
    let mut counts = [0usize; 3];
    for s in streams {
        for l in s {
            counts[l.index()] += 1;
        }
    }
    if counts.iter().sum::<usize>() == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    if let Some(c) = (0..3).find(|&c| counts[c] == 0) {
        return Err(TrainError::MissingClass(ManeuverLabel::from_index(c).unwrap()));
    }
    let inv = counts.map(|c| 1.0 / c as f64);
    let mean = inv.iter().sum::<f64>() / 3.0;
    Ok(inv.map(|w| w / mean))
}

/// Loss weights for `labels` (whose first frame is `events[0].start_frame`).
///
/// `w_class` defaults to the inverse frequencies of `labels` itself. With
/// `exponential == false` every frame gets its class weight only.
pub fn compute_loss_weights(
    events: &[ManeuverEvent],
    labels: &[ManeuverLabel],
    rate_hz: f64,
    w_class: Option<[f64; 3]>,
    exponential: bool,
) -> Result<LossWeights, TrainError> {
    if labels.is_empty() || events.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if !(rate_hz > 0.0) {
        return Err(TrainError::Config("sample rate must be positive".into()));
    }
    let w_class = match w_class {
        Some(w) => w,
        None => class_weights([labels])?,
    };
    let first = events[0].start_frame;
    let mut frame: Vec<f64> = labels.iter().map(|l| w_class[l.index()]).collect();
    let mut alpha = Vec::new();
    let mut horizon = BTreeMap::new();
    for e in events.iter().filter(|e| e.label.is_lane_change()) {
        let k = e.crossing_frame.unwrap_or(e.end_frame);
        let decay: Vec<f64> = (e.start_frame..e.end_frame)
            .map(|j| {
                let t = (k - j) as f64 / rate_hz;
                horizon.insert(j, t);
                (-t).exp()
            })
            .collect();
        let n = decay.len() as f64;
        let total: f64 = decay.iter().sum();
        alpha.push((*e, n / total));
        if exponential {
            for (j, d) in (e.start_frame..e.end_frame).zip(&decay) {
                // n·e^{-T}/Σ rather than alpha·e^{-T}: exact for n = 1
                frame[(j - first) as usize] *= n * d / total;
            }
        }
    }
    Ok(LossWeights {
        alpha,
        w_class,
        horizon,
        frame,
    })
}
