//! Highway trajectory data: lane geometry, per-vehicle frames, Frenet
//! conversion, ingestion, cleaning, synthesis and scene edits.

mod clean;
pub(crate) mod frenet;
mod io;
mod perturb;
mod synth;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use clean::{clean_trajectories, CleanConfig};
pub use frenet::{to_frenet, FrenetState, Projection};
pub use io::{
    load_csv, load_lanes, parse_lanes, read_scene, write_scene, CsvSchema, LaneFile, LoadReport,
};
pub use perturb::{perturb_scene, SceneEdit};
pub use synth::{generate_synthetic, straight_lanes, RampSpec, SynthConfig};

pub type VehicleId = u32;
pub type LaneId = u32;
pub type FrameIndex = i64;

#[derive(Debug, thiserror::Error)]
pub enum TrajError {
    #[error("invalid lane {lane}: {reason}")]
    Lane { lane: LaneId, reason: String },
    #[error("lane {0} referenced by a frame is not in the lane map")]
    UnknownLane(LaneId),
    #[error("duplicate frame {frame} for vehicle {vehicle}")]
    DuplicateFrame { vehicle: VehicleId, frame: FrameIndex },
    #[error("vehicle {vehicle} has no frame {frame}")]
    MissingFrame { vehicle: VehicleId, frame: FrameIndex },
    #[error("point ({x:.3}, {y:.3}) projects outside the centerline of lane {lane}")]
    OutOfRange { lane: LaneId, x: f64, y: f64 },
    #[error("lateral offset {d:.3} m exceeds the sanity bound for lane {lane}")]
    LateralBound { lane: LaneId, d: f64 },
    #[error("schema: {0}")]
    Schema(String),
    #[error("input contains no usable rows")]
    EmptyScene,
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("scene edit: {0}")]
    Edit(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    OnRamp,
    OffRamp,
}

/// Longitudinal extent of a ramp, in meters along its own lane's centerline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub kind: RampKind,
    pub s_start: f64,
    pub s_end: f64,
}

/// A lane: piecewise-linear centerline, width and neighbor links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lane_id: LaneId,
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<Ramp>,
}

impl LaneGeometry {
    pub fn validate(&self) -> Result<(), TrajError> {
        let err = |reason: &str| TrajError::Lane {
            lane: self.lane_id,
            reason: reason.to_string(),
        };
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(err("width must be positive"));
        }
        if self.centerline.len() < 2 {
            return Err(err("centerline needs at least two points"));
        }
        for w in self.centerline.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if !(len > 0.0 && len.is_finite()) {
                return Err(err("centerline arc length must be strictly increasing"));
            }
        }
        if let Some(r) = &self.ramp {
            if !(r.s_start < r.s_end) {
                return Err(err("ramp extent must satisfy s_start < s_end"));
            }
        }
        Ok(())
    }

    /// Total arc length of the centerline.
    pub fn length(&self) -> f64 {
        self.centerline
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }
}

/// One vehicle at one sampling instant, in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub vehicle_id: VehicleId,
    pub frame_index: FrameIndex,
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub lane_id: LaneId,
    pub speed: f64,
    pub accel: f64,
}

/// All lanes plus every vehicle's frame-sorted trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    sample_rate_hz: f64,
    lanes: Vec<LaneGeometry>,
    lane_index: HashMap<LaneId, usize>,
    trajectories: BTreeMap<VehicleId, Vec<TrajectoryFrame>>,
}

impl Scene {
    /// Validates lanes and trajectories; sorts each trajectory by frame.
    pub fn new(
        sample_rate_hz: f64,
        lanes: Vec<LaneGeometry>,
        trajectories: BTreeMap<VehicleId, Vec<TrajectoryFrame>>,
    ) -> Result<Self, TrajError> {
        if !(sample_rate_hz > 0.0) {
            return Err(TrajError::Config("sample rate must be positive".into()));
        }
        let mut lane_index = HashMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            lane.validate()?;
            if lane_index.insert(lane.lane_id, i).is_some() {
                return Err(TrajError::Lane {
                    lane: lane.lane_id,
                    reason: "duplicate lane id".into(),
                });
            }
        }
        for lane in &lanes {
            let check = |other: Option<LaneId>, back: fn(&LaneGeometry) -> Option<LaneId>| -> Result<(), TrajError> {
                if let Some(o) = other {
                    let Some(&j) = lane_index.get(&o) else {
                        return Err(TrajError::Lane {
                            lane: lane.lane_id,
                            reason: format!("neighbor {o} does not exist"),
                        });
                    };
                    if back(&lanes[j]) != Some(lane.lane_id) {
                        return Err(TrajError::Lane {
                            lane: lane.lane_id,
                            reason: format!("neighbor link to {o} is not symmetric"),
                        });
                    }
                }
                Ok(())
            };
            check(lane.left, |l| l.right)?;
            check(lane.right, |l| l.left)?;
        }
        let mut trajectories = trajectories;
        for (&vid, traj) in trajectories.iter_mut() {
            traj.sort_by_key(|f| f.frame_index);
            for w in traj.windows(2) {
                if w[0].frame_index == w[1].frame_index {
                    return Err(TrajError::DuplicateFrame {
                        vehicle: vid,
                        frame: w[0].frame_index,
                    });
                }
            }
            if let Some(f) = traj.iter().find(|f| !lane_index.contains_key(&f.lane_id)) {
                return Err(TrajError::UnknownLane(f.lane_id));
            }
        }
        trajectories.retain(|_, t| !t.is_empty());
        Ok(Self {
            sample_rate_hz,
            lanes,
            lane_index,
            trajectories,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn lanes(&self) -> &[LaneGeometry] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> Option<&LaneGeometry> {
        self.lane_index.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn trajectories(&self) -> &BTreeMap<VehicleId, Vec<TrajectoryFrame>> {
        &self.trajectories
    }

    pub fn trajectory(&self, id: VehicleId) -> Option<&[TrajectoryFrame]> {
        self.trajectories.get(&id).map(Vec::as_slice)
    }

    pub fn vehicle_ids(&self) -> Vec<VehicleId> {
        self.trajectories.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Position of `frame` inside the vehicle's trajectory.
    pub fn frame_position(&self, vehicle: VehicleId, frame: FrameIndex) -> Option<usize> {
        let traj = self.trajectories.get(&vehicle)?;
        traj.binary_search_by_key(&frame, |f| f.frame_index).ok()
    }

    pub fn frame(&self, vehicle: VehicleId, frame: FrameIndex) -> Option<&TrajectoryFrame> {
        let pos = self.frame_position(vehicle, frame)?;
        Some(&self.trajectories[&vehicle][pos])
    }

    /// Every vehicle present at `frame`, in vehicle id order.
    pub fn vehicles_at(&self, frame: FrameIndex) -> Vec<&TrajectoryFrame> {
        self.trajectories
            .values()
            .filter_map(|t| {
                t.binary_search_by_key(&frame, |f| f.frame_index)
                    .ok()
                    .map(|i| &t[i])
            })
            .collect()
    }

    /// Same lanes, different trajectories (used by edits and cleaning).
    pub(crate) fn with_trajectories(&self, trajectories: BTreeMap<VehicleId, Vec<TrajectoryFrame>>) -> Self {
        let mut trajectories = trajectories;
        trajectories.retain(|_, t| !t.is_empty());
        Self {
            sample_rate_hz: self.sample_rate_hz,
            lanes: self.lanes.clone(),
            lane_index: self.lane_index.clone(),
            trajectories,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.values().map(Vec::len).sum()
    }
}
