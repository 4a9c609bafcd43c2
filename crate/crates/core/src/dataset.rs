//! Labeled feature sequences: the unit consumed by training and evaluation.

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::features::{extract_sequence, FeatureConfig, FeatureError, FeatureLayout, FeatureSample};
use crate::labeler::{auto_label, segment_events, LabelConfig, LabelError, ManeuverEvent, ManeuverLabel};
use crate::par::{self, Execution};
use crate::trajdata::{FrameIndex, Scene, VehicleId};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("vehicle {vehicle}: {features} feature rows but {labels} labels")]
    Misaligned {
        vehicle: VehicleId,
        features: usize,
        labels: usize,
    },
    #[error("dataset is empty")]
    Empty,
}

/// One target's frames: raw features (one column per frame) and labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub vehicle_id: VehicleId,
    pub first_frame: FrameIndex,
    /// `D × n` raw (unnormalized) features.
    pub features: Matrix,
    pub labels: Vec<ManeuverLabel>,
    /// Speed difference to the preceding vehicle per frame.
    pub rel_v_pv: Vec<f64>,
}

impl Sequence {
    pub fn from_samples(samples: &[FeatureSample], labels: Vec<ManeuverLabel>) -> Result<Self, DatasetError> {
        let first = samples.first().ok_or(DatasetError::Empty)?;
        if samples.len() != labels.len() {
            return Err(DatasetError::Misaligned {
                vehicle: first.vehicle_id,
                features: samples.len(),
                labels: labels.len(),
            });
        }
        let d = first.layout().dim();
        let mut features = Matrix::zeros(d, samples.len());
        for (c, s) in samples.iter().enumerate() {
            for (r, v) in s.to_vec().into_iter().enumerate() {
                features.set(r, c, v);
            }
        }
        Ok(Self {
            vehicle_id: first.vehicle_id,
            first_frame: first.frame_index,
            features,
            labels,
            rel_v_pv: samples.iter().map(|s| s.rel_v_pv).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn events(&self) -> Vec<ManeuverEvent> {
        segment_events(&self.labels, self.first_frame)
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Sequence {
        Sequence {
            vehicle_id: self.vehicle_id,
            first_frame: self.first_frame + start as FrameIndex,
            features: self.features.cols_range(start, len),
            labels: self.labels[start..start + len].to_vec(),
            rel_v_pv: self.rel_v_pv[start..start + len].to_vec(),
        }
    }

    pub fn has_lane_change(&self, label: ManeuverLabel) -> bool {
        self.labels.contains(&label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sample_rate_hz: f64,
    pub layout: FeatureLayout,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn frames(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn lane_changes(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.events().iter().filter(|e| e.label.is_lane_change()).count())
            .sum()
    }

    /// Sequences whose vehicle id is in `ids`, in `ids` order.
    pub fn subset(&self, ids: &[VehicleId]) -> Dataset {
        Dataset {
            sample_rate_hz: self.sample_rate_hz,
            layout: self.layout,
            sequences: ids
                .iter()
                .filter_map(|id| self.sequences.iter().find(|s| s.vehicle_id == *id).cloned())
                .collect(),
        }
    }
}

/// Joins per-frame feature rows with label streams (as read from files).
/// Every labeled frame needs a feature row and vice versa.
pub fn assemble(
    sample_rate_hz: f64,
    layout: FeatureLayout,
    samples: &[FeatureSample],
    labels: &[(VehicleId, FrameIndex, Vec<ManeuverLabel>)],
) -> Result<Dataset, DatasetError> {
    let mut by_vehicle: std::collections::BTreeMap<VehicleId, Vec<&FeatureSample>> = Default::default();
    for s in samples {
        by_vehicle.entry(s.vehicle_id).or_default().push(s);
    }
    let mut sequences = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (vid, first, ls) in labels {
        let rows = by_vehicle.get(vid).map(Vec::as_slice).unwrap_or(&[]);
        let start = rows.iter().position(|s| s.frame_index == *first);
        let misaligned = || DatasetError::Misaligned {
            vehicle: *vid,
            features: rows.len(),
            labels: ls.len(),
        };
        let start = start.ok_or_else(misaligned)?;
        let run: Vec<FeatureSample> = rows[start..].iter().take(ls.len()).map(|s| (*s).clone()).collect();
        let contiguous = run.iter().enumerate().all(|(i, s)| s.frame_index == first + i as FrameIndex);
        if run.len() != ls.len() || !contiguous || !seen.insert(*vid) {
            return Err(misaligned());
        }
        if rows.len() != ls.len() {
            return Err(misaligned());
        }
        sequences.push(Sequence::from_samples(&run, ls.clone())?);
    }
    if let Some(v) = by_vehicle.keys().find(|v| !seen.contains(v)) {
        return Err(DatasetError::Misaligned {
            vehicle: *v,
            features: by_vehicle[v].len(),
            labels: 0,
        });
    }
    if sequences.is_empty() {
        return Err(DatasetError::Empty);
    }
    sequences.sort_by_key(|s| s.vehicle_id);
    Ok(Dataset {
        sample_rate_hz,
        layout,
        sequences,
    })
}

/// Labels and features for every vehicle of the scene with at least two frames.
pub fn build_dataset(
    scene: &Scene,
    features: &FeatureConfig,
    labels: &LabelConfig,
    exec: Execution,
) -> Result<Dataset, DatasetError> {
    let ids: Vec<VehicleId> = scene
        .trajectories()
        .iter()
        .filter(|(_, t)| t.len() >= 2)
        .map(|(&id, _)| id)
        .collect();
    if ids.is_empty() {
        return Err(DatasetError::Empty);
    }
    let sequences = par::try_map(exec, &ids, |&id| -> Result<Sequence, DatasetError> {
        let (samples, _) = extract_sequence(scene, id, features)?;
        let l = auto_label(scene, id, labels)?;
        Sequence::from_samples(&samples, l)
    })?;
    Ok(Dataset {
        sample_rate_hz: scene.sample_rate_hz(),
        layout: FeatureLayout::new(features.lane_count(scene)),
        sequences,
    })
}
