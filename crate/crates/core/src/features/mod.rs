//! Per-frame feature vectors for one target vehicle: own kinematics, temporal
//! gaps to the six surrounding vehicles, and static road context.

mod norm;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::trajdata::{
    FrameIndex, LaneGeometry, RampKind, Scene, TrajError, TrajectoryFrame, VehicleId,
};

pub use norm::NormStats;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error("lane {lane} does not fit a one-hot of {n_lanes} lanes")]
    LaneOutOfRange { lane: u32, n_lanes: usize },
    #[error("vehicle {0} has fewer than two frames")]
    TooShort(VehicleId),
    #[error("feature dimension {got} does not match {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("feature table: {0}")]
    Table(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Sentinel and upper clamp of every temporal gap, seconds.
    pub dt_max: f64,
    /// Clamp of ramp distances, meters.
    pub d_max: f64,
    /// Speed floor in the temporal-gap denominator, m/s.
    pub v_eps: f64,
    /// Length of the lane one-hot; `None` uses the largest lane id in the scene.
    pub n_lanes: Option<usize>,
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dt_max: 10.0,
            d_max: 500.0,
            v_eps: 0.1,
            n_lanes: None,
            normalize: true,
        }
    }
}

impl FeatureConfig {
    pub fn lane_count(&self, scene: &Scene) -> usize {
        self.n_lanes
            .unwrap_or_else(|| scene.lanes().iter().map(|l| l.lane_id as usize).max().unwrap_or(0))
    }
}

/// Attention categories, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Target,
    Same,
    Left,
    Right,
    Street,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Target,
        Category::Same,
        Category::Left,
        Category::Right,
        Category::Street,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Target => "Target",
            Category::Same => "Same",
            Category::Left => "Left",
            Category::Right => "Right",
            Category::Street => "Street",
        }
    }
}

/// Column layout of the flattened feature vector.
///
/// `m, v_lat, v_long, a_lat, h | dt_pv, dt_rv | dt_plv_l, dt_pfv_l |
/// dt_plv_r, dt_pfv_r | d_on, d_off, lane_1..lane_n`. Each category is a
/// contiguous block; the three groups are the target block, the four-slot
/// environment block and the static block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_lanes: usize,
}

impl FeatureLayout {
    pub const TARGET_DIM: usize = 5;
    pub const ENV_DIM: usize = 6;

    pub fn new(n_lanes: usize) -> Self {
        Self { n_lanes }
    }

    pub fn dim(&self) -> usize {
        Self::TARGET_DIM + Self::ENV_DIM + 2 + self.n_lanes
    }

    pub fn category(&self, c: Category) -> std::ops::Range<usize> {
        match c {
            Category::Target => 0..5,
            Category::Same => 5..7,
            Category::Left => 7..9,
            Category::Right => 9..11,
            Category::Street => 11..self.dim(),
        }
    }

    pub fn category_dims(&self) -> [usize; 5] {
        Category::ALL.map(|c| self.category(c).len())
    }

    pub fn target_group(&self) -> std::ops::Range<usize> {
        0..5
    }

    pub fn env_group(&self) -> std::ops::Range<usize> {
        5..11
    }

    pub fn static_group(&self) -> std::ops::Range<usize> {
        11..self.dim()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "m", "v_lat", "v_long", "a_lat", "h", "dt_pv", "dt_rv", "dt_plv_l", "dt_pfv_l", "dt_plv_r",
            "dt_pfv_r", "d_on", "d_off",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend((1..=self.n_lanes).map(|k| format!("lane_{k}")));
        names
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFeatures {
    pub m: f64,
    pub v_lat: f64,
    pub v_long: f64,
    pub a_lat: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFeatures {
    pub dt_pv: f64,
    pub dt_rv: f64,
    pub dt_plv_l: f64,
    pub dt_pfv_l: f64,
    pub dt_plv_r: f64,
    pub dt_pfv_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub d_on: f64,
    pub d_off: f64,
    pub lane_onehot: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub vehicle_id: VehicleId,
    pub frame_index: FrameIndex,
    pub target: TargetFeatures,
    pub env: EnvFeatures,
    pub static_f: StaticFeatures,
    /// Speed of the preceding vehicle minus the target's (0 without one).
    /// Used by the frame-wise baseline only.
    pub rel_v_pv: f64,
}

impl FeatureSample {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.static_f.lane_onehot.len())
    }

    /// Flattened vector in [`FeatureLayout`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let t = &self.target;
        let e = &self.env;
        let mut v = vec![
            t.m, t.v_lat, t.v_long, t.a_lat, t.h, e.dt_pv, e.dt_rv, e.dt_plv_l, e.dt_pfv_l, e.dt_plv_r, e.dt_pfv_r,
            self.static_f.d_on, self.static_f.d_off,
        ];
        v.extend_from_slice(&self.static_f.lane_onehot);
        v
    }

    pub fn from_vec(vehicle_id: VehicleId, frame_index: FrameIndex, v: &[f64], rel_v_pv: f64) -> Result<Self, FeatureError> {
        if v.len() < 13 {
            return Err(FeatureError::Dimension { expected: 13, got: v.len() });
        }
        Ok(Self {
            vehicle_id,
            frame_index,
            target: TargetFeatures {
                m: v[0],
                v_lat: v[1],
                v_long: v[2],
                a_lat: v[3],
                h: v[4],
            },
            env: EnvFeatures {
                dt_pv: v[5],
                dt_rv: v[6],
                dt_plv_l: v[7],
                dt_pfv_l: v[8],
                dt_plv_r: v[9],
                dt_pfv_r: v[10],
            },
            static_f: StaticFeatures {
                d_on: v[11],
                d_off: v[12],
                lane_onehot: v[13..].to_vec(),
            },
            rel_v_pv,
        })
    }
}

/// The six surrounding-vehicle slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbors {
    pub pv: Option<VehicleId>,
    pub rv: Option<VehicleId>,
    pub plv_l: Option<VehicleId>,
    pub pfv_l: Option<VehicleId>,
    pub plv_r: Option<VehicleId>,
    pub pfv_r: Option<VehicleId>,
}

/// `|s_other − s_target| / max(v_trailing, v_eps)`, clamped to `dt_max`.
pub fn temporal_distance(s_target: f64, s_other: f64, v_trailing: f64, dt_max: f64, v_eps: f64) -> f64 {
    ((s_other - s_target).abs() / v_trailing.max(v_eps)).min(dt_max)
}

#[derive(Clone, Copy)]
struct Candidate<'a> {
    frame: &'a TrajectoryFrame,
    s: f64,
}

#[derive(Default)]
struct Slots<'a> {
    pv: Option<Candidate<'a>>,
    rv: Option<Candidate<'a>>,
    plv_l: Option<Candidate<'a>>,
    pfv_l: Option<Candidate<'a>>,
    plv_r: Option<Candidate<'a>>,
    pfv_r: Option<Candidate<'a>>,
}

fn keep_nearest<'a>(slot: &mut Option<Candidate<'a>>, c: Candidate<'a>, s_target: f64) {
    if slot.is_none_or(|cur| (c.s - s_target).abs() < (cur.s - s_target).abs()) {
        *slot = Some(c);
    }
}

/// Single pass over the vehicles at the target's frame. Longitudinal
/// positions of all candidates are measured along the target's lane.
fn scan<'a>(scene: &'a Scene, target: &TrajectoryFrame, lane: &LaneGeometry, s_target: f64) -> Slots<'a> {
    let mut slots = Slots::default();
    for other in scene.vehicles_at(target.frame_index) {
        if other.vehicle_id == target.vehicle_id {
            continue;
        }
        let which = if other.lane_id == lane.lane_id {
            0
        } else if Some(other.lane_id) == lane.left {
            1
        } else if Some(other.lane_id) == lane.right {
            2
        } else {
            continue;
        };
        let s = lane.project_extended(other.x, other.y).0.s;
        let c = Candidate { frame: other, s };
        let ahead = s >= s_target;
        let slot = match (which, ahead) {
            (0, true) => &mut slots.pv,
            (0, false) => &mut slots.rv,
            (1, true) => &mut slots.plv_l,
            (1, false) => &mut slots.pfv_l,
            (2, true) => &mut slots.plv_r,
            _ => &mut slots.pfv_r,
        };
        keep_nearest(slot, c, s_target);
    }
    slots
}

fn target_frame(scene: &Scene, vehicle: VehicleId, frame: FrameIndex) -> Result<(&[TrajectoryFrame], usize), FeatureError> {
    let traj = scene
        .trajectory(vehicle)
        .ok_or(TrajError::MissingFrame { vehicle, frame })?;
    let k = scene
        .frame_position(vehicle, frame)
        .ok_or(TrajError::MissingFrame { vehicle, frame })?;
    Ok((traj, k))
}

/// Nearest vehicle ahead/behind in the own lane and in each adjacent lane.
pub fn assign_neighbors(scene: &Scene, vehicle: VehicleId, frame: FrameIndex) -> Result<Neighbors, FeatureError> {
    let (traj, k) = target_frame(scene, vehicle, frame)?;
    let here = &traj[k];
    let lane = scene.lane(here.lane_id).ok_or(TrajError::UnknownLane(here.lane_id))?;
    let s = lane.project(here.x, here.y)?.s;
    let slots = scan(scene, here, lane, s);
    let id = |c: Option<Candidate>| c.map(|c| c.frame.vehicle_id);
    Ok(Neighbors {
        pv: id(slots.pv),
        rv: id(slots.rv),
        plv_l: id(slots.plv_l),
        pfv_l: id(slots.pfv_l),
        plv_r: id(slots.plv_r),
        pfv_r: id(slots.pfv_r),
    })
}

/// Forward distance to the nearest ramp of `kind`: 0 inside its extent,
/// `d_max` when none lies ahead.
fn ramp_distance(scene: &Scene, lane: &LaneGeometry, s_target: f64, kind: RampKind, d_max: f64) -> f64 {
    let mut best = d_max;
    for other in scene.lanes() {
        let Some(ramp) = other.ramp.filter(|r| r.kind == kind) else {
            continue;
        };
        let (ax, ay) = other.to_cartesian(ramp.s_start, 0.0);
        let (bx, by) = other.to_cartesian(ramp.s_end, 0.0);
        let s_a = lane.project_extended(ax, ay).0.s;
        let s_b = lane.project_extended(bx, by).0.s;
        let d = if s_target < s_a {
            s_a - s_target
        } else if s_target <= s_b {
            0.0
        } else {
            d_max
        };
        best = best.min(d);
    }
    best.min(d_max)
}

fn sample_at(
    scene: &Scene,
    traj: &[TrajectoryFrame],
    k: usize,
    config: &FeatureConfig,
    n_lanes: usize,
) -> Result<FeatureSample, FeatureError> {
    let here = &traj[k];
    let lane = scene.lane(here.lane_id).ok_or(TrajError::UnknownLane(here.lane_id))?;
    let fr = crate::trajdata::frenet::frenet_at(scene, traj, k)?;
    let slots = scan(scene, here, lane, fr.s);
    let gap = |c: Option<Candidate>| match c {
        None => config.dt_max,
        Some(c) => {
            let trailing = if c.s < fr.s { c.frame.speed } else { here.speed };
            temporal_distance(fr.s, c.s, trailing, config.dt_max, config.v_eps)
        }
    };
    let idx = here.lane_id as usize;
    if idx == 0 || idx > n_lanes {
        return Err(FeatureError::LaneOutOfRange {
            lane: here.lane_id,
            n_lanes,
        });
    }
    let mut lane_onehot = vec![0.0; n_lanes];
    lane_onehot[idx - 1] = 1.0;
    Ok(FeatureSample {
        vehicle_id: here.vehicle_id,
        frame_index: here.frame_index,
        target: TargetFeatures {
            m: fr.d,
            v_lat: fr.v_lat,
            v_long: fr.v_long,
            a_lat: fr.a_lat,
            h: fr.heading,
        },
        env: EnvFeatures {
            dt_pv: gap(slots.pv),
            dt_rv: gap(slots.rv),
            dt_plv_l: gap(slots.plv_l),
            dt_pfv_l: gap(slots.pfv_l),
            dt_plv_r: gap(slots.plv_r),
            dt_pfv_r: gap(slots.pfv_r),
        },
        static_f: StaticFeatures {
            d_on: ramp_distance(scene, lane, fr.s, RampKind::OnRamp, config.d_max),
            d_off: ramp_distance(scene, lane, fr.s, RampKind::OffRamp, config.d_max),
            lane_onehot,
        },
        rel_v_pv: slots.pv.map_or(0.0, |c| c.frame.speed - here.speed),
    })
}

pub fn extract_features(
    scene: &Scene,
    vehicle: VehicleId,
    frame: FrameIndex,
    config: &FeatureConfig,
) -> Result<FeatureSample, FeatureError> {
    let (traj, k) = target_frame(scene, vehicle, frame)?;
    sample_at(scene, traj, k, config, config.lane_count(scene))
}

/// One sample per frame plus the statistics of this sequence alone.
pub fn extract_sequence(
    scene: &Scene,
    vehicle: VehicleId,
    config: &FeatureConfig,
) -> Result<(Vec<FeatureSample>, NormStats), FeatureError> {
    let traj = scene
        .trajectory(vehicle)
        .ok_or(TrajError::MissingFrame { vehicle, frame: 0 })?;
    if traj.len() < 2 {
        return Err(FeatureError::TooShort(vehicle));
    }
    let n_lanes = config.lane_count(scene);
    let samples = (0..traj.len())
        .map(|k| sample_at(scene, traj, k, config, n_lanes))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = samples.iter().map(FeatureSample::to_vec).collect();
    let stats = NormStats::fit(rows.iter().map(Vec::as_slice));
    Ok((samples, stats))
}

/// Sequences for many targets, in the given order.
pub fn extract_many(
    scene: &Scene,
    vehicles: &[VehicleId],
    config: &FeatureConfig,
    exec: Execution,
) -> Result<Vec<Vec<FeatureSample>>, FeatureError> {
    par::try_map(exec, vehicles, |&v| extract_sequence(scene, v, config).map(|(s, _)| s))
}

/// Columnar dump: `vehicle_id,frame_index,<layout columns>,rel_v_pv`.
pub fn write_features<W: Write>(w: W, layout: FeatureLayout, samples: &[FeatureSample]) -> Result<(), FeatureError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["vehicle_id".to_string(), "frame_index".to_string()];
    header.extend(layout.column_names());
    header.push("rel_v_pv".into());
    out.write_record(&header)?;
    for s in samples {
        let v = s.to_vec();
        if v.len() != layout.dim() {
            return Err(FeatureError::Dimension {
                expected: layout.dim(),
                got: v.len(),
            });
        }
        let mut rec = vec![s.vehicle_id.to_string(), s.frame_index.to_string()];
        rec.extend(v.iter().map(|x| format!("{x:?}")));
        rec.push(format!("{:?}", s.rel_v_pv));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<(FeatureLayout, Vec<FeatureSample>), FeatureError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let n_cols = header.len();
    if n_cols < 16 || &header[0] != "vehicle_id" || &header[n_cols - 1] != "rel_v_pv" {
        return Err(FeatureError::Table("unexpected header".into()));
    }
    let layout = FeatureLayout::new(n_cols - 16);
    if header.iter().skip(2).take(layout.dim()).ne(layout.column_names().iter().map(String::as_str)) {
        return Err(FeatureError::Table("column order does not match the layout".into()));
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, FeatureError> {
            rec[i]
                .parse()
                .map_err(|_| FeatureError::Table(format!("bad number {:?}", &rec[i])))
        };
        let vid = rec[0].parse().map_err(|_| FeatureError::Table("bad vehicle id".into()))?;
        let frame = rec[1].parse().map_err(|_| FeatureError::Table("bad frame".into()))?;
        let v = (2..2 + layout.dim()).map(num).collect::<Result<Vec<_>, _>>()?;
        samples.push(FeatureSample::from_vec(vid, frame, &v, num(n_cols - 1)?)?);
    }
    Ok((layout, samples))
}
