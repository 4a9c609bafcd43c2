//! Frame-wise and maneuver-based evaluation.

mod rank;
mod report;


use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::dataset::{Dataset, Sequence};
use crate::labeler::{segment_events, ManeuverEvent, ManeuverLabel};
use crate::models::{ModelError, Predictor};
use crate::par::{self, Execution};
use crate::trajdata::{FrameIndex, VehicleId};

pub use rank::{rank_methods, rank_rows, Polarity, RankEntry, RANK_COLUMNS};
pub use report::{render_table, write_records, MetricRecord};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("vehicle {vehicle}: {predicted} predictions for {truth} ground-truth frames")]
    Length {
        vehicle: VehicleId,
        predicted: usize,
        truth: usize,
    },
    #[error("sample rate must be positive")]
    Rate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("predictions: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub vehicle_id: VehicleId,
    pub frame_index: FrameIndex,
    /// Probabilities of (L, F, R).
    pub probs: [f64; 3],
    pub predicted: ManeuverLabel,
}

impl PredictionRecord {
    /// Argmax with ties resolved towards L, then F.
    pub fn new(vehicle_id: VehicleId, frame_index: FrameIndex, probs: [f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Self {
            vehicle_id,
            frame_index,
            probs,
            predicted: ManeuverLabel::from_index(best).unwrap(),
        }
    }
}

pub fn records_from(seq: &Sequence, probs: &Matrix) -> Vec<PredictionRecord> {
    (0..probs.cols())
        .map(|c| {
            PredictionRecord::new(
                seq.vehicle_id,
                seq.first_frame + c as FrameIndex,
                [probs.get(0, c), probs.get(1, c), probs.get(2, c)],
            )
        })
        .collect()
}

/// Predictions for every sequence of `ds`, in dataset order.
pub fn predict_dataset(predictor: &Predictor, ds: &Dataset, exec: Execution) -> Result<Vec<Vec<PredictionRecord>>, MetricsError> {
    par::try_map(exec, &ds.sequences, |s| -> Result<_, MetricsError> {
        Ok(records_from(s, &predictor.predict(&s.features, &s.rel_v_pv)?))
    })
}

pub fn write_predictions<W: Write>(w: W, records: &[PredictionRecord]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["vehicle_id", "frame_index", "p_l", "p_f", "p_r", "predicted"])?;
    for r in records {
        out.write_record([
            r.vehicle_id.to_string(),
            r.frame_index.to_string(),
            format!("{:?}", r.probs[0]),
            format!("{:?}", r.probs[1]),
            format!("{:?}", r.probs[2]),
            r.predicted.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| MetricsError::Parse(format!("row has {} fields", row.len())));
        let num = |i: usize| -> Result<f64, MetricsError> {
            field(i)?.parse().map_err(|e| MetricsError::Parse(format!("{e}")))
        };
        let vid = field(0)?.parse().map_err(|e| MetricsError::Parse(format!("vehicle id: {e}")))?;
        let frame = field(1)?.parse().map_err(|e| MetricsError::Parse(format!("frame: {e}")))?;
        let mut rec = PredictionRecord::new(vid, frame, [num(2)?, num(3)?, num(4)?]);
        rec.predicted = field(5)?.parse().map_err(|e| MetricsError::Parse(format!("{e}")))?;
        out.push(rec);
    }
    Ok(out)
}

/// Per-class accuracy: share of ground-truth frames of each class predicted
/// as that class. `None` for a class absent from the ground truth.
pub fn frame_accuracy(pred: &[ManeuverLabel], truth: &[ManeuverLabel]) -> Result<[Option<f64>; 3], MetricsError> {
    let mut t = Tally::new(1.0);
    t.frames(0, pred, truth)?;
    Ok(t.accuracy())
}

/// Which frame the time-to-maneuver is measured to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtmReference {
    /// The lane-crossing frame.
    #[default]
    Crossing,
    /// The first frame of the ground-truth label window.
    LabelOnset,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ttm: TtmReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct B4c {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean over detected maneuvers; `None` when nothing was detected.
    pub ttm_mean_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassEventMetrics {
    pub events: usize,
    pub missed: usize,
    pub miss_rate: Option<f64>,
    /// Over detected events only.
    pub delay_mean_s: Option<f64>,
    pub overlap_mean: Option<f64>,
    /// Matching prediction events per ground-truth event.
    pub frequency_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub left: ClassEventMetrics,
    pub right: ClassEventMetrics,
    pub follow_events: usize,
    /// Lane-change prediction events per ground-truth follow event.
    pub follow_frequency: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub targets: usize,
    pub frames: usize,
    /// Indexed by [`ManeuverLabel::index`].
    pub accuracy: [Option<f64>; 3],
    pub b4c: B4c,
    pub events: EventMetrics,
}

/// Order-independent sum of values in `[0, 1]` (fixed point, 2^-60 steps),
/// so means are exactly invariant to reordering and duplication.
#[derive(Clone, Copy, Debug, Default)]
struct FixedSum(i128);

impl FixedSum {
    const ONE: f64 = (1u64 << 60) as f64;

    fn add(&mut self, x: f64) {
        self.0 += (x * Self::ONE).round() as i128;
    }

    fn mean(self, n: usize) -> Option<f64> {
        (n > 0).then(|| self.0 as f64 / Self::ONE / n as f64)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct ClassTally {
    events: usize,
    missed: usize,
    /// In frames.
    delay: i64,
    overlap: FixedSum,
    frequency: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    targets: usize,
    correct: [usize; 3],
    total: [usize; 3],
    predicted: usize,
    true_predicted: usize,
    rate: f64,
    /// In frames.
    ttm: i64,
    // per class of lane change: [L, R]
    class: [ClassTally; 2],
    follow_events: usize,
    follow_frequency: usize,
}

fn ratio(a: f64, b: usize) -> Option<f64> {
    (b > 0).then(|| a / b as f64)
}

impl Tally {
    fn new(rate: f64) -> Self {
        Self {
            rate,
            ..Default::default()
        }
    }

    fn frames(&mut self, vehicle: VehicleId, pred: &[ManeuverLabel], truth: &[ManeuverLabel]) -> Result<(), MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::Length {
                vehicle,
                predicted: pred.len(),
                truth: truth.len(),
            });
        }
        for (p, t) in pred.iter().zip(truth) {
            self.total[t.index()] += 1;
            if p == t {
                self.correct[t.index()] += 1;
            }
        }
        Ok(())
    }

    fn events(&mut self, pred: &[ManeuverEvent], gt: &[ManeuverEvent], cfg: &EvalConfig) {
        for p in pred.iter().filter(|p| p.label.is_lane_change()) {
            self.predicted += 1;
            if gt.iter().any(|g| g.label == p.label && g.intersection(p) > 0) {
                self.true_predicted += 1;
            }
        }
        for g in gt {
            if g.label.is_lane_change() {
                let slot = &mut self.class[if g.label == ManeuverLabel::L { 0 } else { 1 }];
                slot.events += 1;
                let matches: Vec<&ManeuverEvent> =
                    pred.iter().filter(|p| p.label == g.label && p.intersection(g) > 0).collect();
                slot.frequency += matches.len();
                let Some(first) = matches.iter().min_by_key(|p| p.start_frame) else {
                    slot.missed += 1;
                    continue;
                };
                slot.delay += (first.start_frame - g.start_frame).max(0);
                slot.overlap.add(first.intersection(g) as f64 / g.len() as f64);
                let detected = first.start_frame.max(g.start_frame);
                let reference = match cfg.ttm {
                    TtmReference::Crossing => g.crossing_frame.unwrap_or(g.end_frame),
                    TtmReference::LabelOnset => g.start_frame,
                };
                self.ttm += reference - detected;
            } else {
                self.follow_events += 1;
                self.follow_frequency += pred.iter().filter(|p| p.label.is_lane_change() && p.intersection(g) > 0).count();
            }
        }
    }

    fn accuracy(&self) -> [Option<f64>; 3] {
        [0, 1, 2].map(|c| ratio(self.correct[c] as f64, self.total[c]))
    }

    fn b4c(&self) -> B4c {
        let actual = self.class[0].events + self.class[1].events;
        let detected = actual - self.class[0].missed - self.class[1].missed;
        let precision = ratio(self.true_predicted as f64, self.predicted).unwrap_or(0.0);
        let recall = ratio(detected as f64, actual).unwrap_or(0.0);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        B4c {
            precision,
            recall,
            f1,
            ttm_mean_s: ratio(self.ttm as f64 / self.rate, detected),
        }
    }

    fn event_metrics(&self) -> EventMetrics {
        let class = |t: &ClassTally| {
            let detected = t.events - t.missed;
            ClassEventMetrics {
                events: t.events,
                missed: t.missed,
                miss_rate: ratio(t.missed as f64, t.events),
                delay_mean_s: ratio(t.delay as f64 / self.rate, detected),
                overlap_mean: t.overlap.mean(detected),
                frequency_mean: ratio(t.frequency as f64, t.events),
            }
        };
        EventMetrics {
            left: class(&self.class[0]),
            right: class(&self.class[1]),
            follow_events: self.follow_events,
            follow_frequency: ratio(self.follow_frequency as f64, self.follow_events),
        }
    }

    fn report(&self) -> MetricsReport {
        MetricsReport {
            targets: self.targets,
            frames: self.total.iter().sum(),
            accuracy: self.accuracy(),
            b4c: self.b4c(),
            events: self.event_metrics(),
        }
    }
}

/// Maneuver-level precision, recall, F1 and time-to-maneuver.
pub fn b4c_metrics(pred: &[ManeuverEvent], gt: &[ManeuverEvent], rate: f64, cfg: &EvalConfig) -> B4c {
    let mut t = Tally::new(rate);
    t.events(pred, gt, cfg);
    t.b4c()
}

/// Miss, delay, overlap and frequency per ground-truth event class.
pub fn event_metrics(pred: &[ManeuverEvent], gt: &[ManeuverEvent], rate: f64) -> EventMetrics {
    let mut t = Tally::new(rate);
    t.events(pred, gt, &EvalConfig::default());
    t.event_metrics()
}

/// Predicted and ground-truth label streams of one target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetStreams {
    pub vehicle_id: VehicleId,
    pub first_frame: FrameIndex,
    pub predicted: Vec<ManeuverLabel>,
    pub truth: Vec<ManeuverLabel>,
}

pub fn streams_from(ds: &Dataset, predictions: &[Vec<PredictionRecord>]) -> Vec<TargetStreams> {
    ds.sequences
        .iter()
        .zip(predictions)
        .map(|(s, p)| TargetStreams {
            vehicle_id: s.vehicle_id,
            first_frame: s.first_frame,
            predicted: p.iter().map(|r| r.predicted).collect(),
            truth: s.labels.clone(),
        })
        .collect()
}

/// Aggregates all metrics over `targets`: frame means per frame, event
/// means per event.
pub fn evaluate(targets: &[TargetStreams], rate: f64, cfg: &EvalConfig) -> Result<MetricsReport, MetricsError> {
    if !(rate > 0.0) {
        return Err(MetricsError::Rate);
    }
    let mut t = Tally::new(rate);
    for s in targets {
        t.targets += 1;
        t.frames(s.vehicle_id, &s.predicted, &s.truth)?;
        let pe = segment_events(&s.predicted, s.first_frame);
        let ge = segment_events(&s.truth, s.first_frame);
        t.events(&pe, &ge, cfg);
    }
    Ok(t.report())
}
