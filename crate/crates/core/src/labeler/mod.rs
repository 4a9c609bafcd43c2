//! Ground-truth maneuver labels from lane-assignment changes, and
//! run-length segmentation of label streams into events.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::trajdata::{FrameIndex, LaneId, Scene, VehicleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ManeuverLabel {
    L,
    F,
    R,
}

impl ManeuverLabel {
    pub const ALL: [ManeuverLabel; 3] = [ManeuverLabel::L, ManeuverLabel::F, ManeuverLabel::R];

    /// Class index used by the models: L = 0, F = 1, R = 2.
    pub fn index(self) -> usize {
        match self {
            ManeuverLabel::L => 0,
            ManeuverLabel::F => 1,
            ManeuverLabel::R => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_lane_change(self) -> bool {
        self != ManeuverLabel::F
    }

    pub fn as_char(self) -> char {
        match self {
            ManeuverLabel::L => 'L',
            ManeuverLabel::F => 'F',
            ManeuverLabel::R => 'R',
        }
    }
}

impl fmt::Display for ManeuverLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for ManeuverLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L" => Ok(ManeuverLabel::L),
            "F" => Ok(ManeuverLabel::F),
            "R" => Ok(ManeuverLabel::R),
            other => Err(LabelError::Parse(format!("unknown label {other:?}"))),
        }
    }
}

/// A maximal run of one label over frames `[start_frame, end_frame)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverEvent {
    pub label: ManeuverLabel,
    pub start_frame: FrameIndex,
    pub end_frame: FrameIndex,
    /// For L/R events: the frame at which the lane assignment changes,
    /// which is where the labeled window ends.
    pub crossing_frame: Option<FrameIndex>,
}

impl ManeuverEvent {
    pub fn len(&self) -> usize {
        (self.end_frame - self.start_frame) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }

    /// Number of shared frames with `other`.
    pub fn intersection(&self, other: &ManeuverEvent) -> usize {
        let lo = self.start_frame.max(other.start_frame);
        let hi = self.end_frame.min(other.end_frame);
        (hi - lo).max(0) as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("vehicle {0} is not in the scene")]
    UnknownVehicle(VehicleId),
    #[error("label stream is empty")]
    Empty,
    #[error("parse: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub horizon_s: f64,
    /// Lane-id excursions shorter than this that return to the original lane
    /// are treated as noise.
    pub flicker_s: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            horizon_s: 3.0,
            flicker_s: 0.5,
        }
    }
}

/// A lane-assignment change at trajectory position `pos`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crossing {
    pub pos: usize,
    pub from: LaneId,
    pub to: LaneId,
    pub label: ManeuverLabel,
}

/// Replaces short A→B→A excursions with A.
pub fn suppress_flicker(lanes: &[LaneId], max_run: usize) -> Vec<LaneId> {
    let mut out = lanes.to_vec();
    if max_run == 0 {
        return out;
    }
    let mut i = 0;
    while i < out.len() {
        let mut j = i;
        while j < out.len() && out[j] == out[i] {
            j += 1;
        }
        if i > 0 && j < out.len() && j - i < max_run && out[i - 1] == out[j] {
            let fill = out[j];
            out[i..j].iter_mut().for_each(|l| *l = fill);
            // Re-scan from the start of the merged run.
            i = i.saturating_sub(1);
            while i > 0 && out[i - 1] == fill {
                i -= 1;
            }
            continue;
        }
        i = j;
    }
    out
}

/// Direction of a change from `from` to `to`, using neighbor links when
/// present and the lane-id sign otherwise (lower ids are further left).
fn direction(scene: &Scene, from: LaneId, to: LaneId) -> ManeuverLabel {
    if let Some(lane) = scene.lane(from) {
        if lane.left == Some(to) {
            return ManeuverLabel::L;
        }
        if lane.right == Some(to) {
            return ManeuverLabel::R;
        }
    }
    log::warn!("lane change {from} -> {to} is not between adjacent lanes; using id order");
    if to < from {
        ManeuverLabel::L
    } else {
        ManeuverLabel::R
    }
}

pub fn find_crossings(scene: &Scene, lanes: &[LaneId]) -> Vec<Crossing> {
    lanes
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, w)| Crossing {
            pos: i + 1,
            from: w[0],
            to: w[1],
            label: direction(scene, w[0], w[1]),
        })
        .collect()
}

/// Labels positions `[k − h, k)` before each crossing position `k`; an earlier
/// crossing keeps its window up to its own crossing.
pub fn label_crossings(n: usize, crossings: &[Crossing], horizon_frames: usize) -> Vec<ManeuverLabel> {
    let mut labels = vec![ManeuverLabel::F; n];
    let mut floor = 0;
    for c in crossings {
        let start = c.pos.saturating_sub(horizon_frames).max(floor);
        labels[start..c.pos].iter_mut().for_each(|l| *l = c.label);
        floor = c.pos;
    }
    labels
}

/// Per-frame labels of one trajectory, in frame order.
pub fn auto_label(scene: &Scene, vehicle: VehicleId, config: &LabelConfig) -> Result<Vec<ManeuverLabel>, LabelError> {
    let traj = scene.trajectory(vehicle).ok_or(LabelError::UnknownVehicle(vehicle))?;
    if traj.is_empty() {
        return Err(LabelError::Empty);
    }
    let rate = scene.sample_rate_hz();
    let raw: Vec<LaneId> = traj.iter().map(|f| f.lane_id).collect();
    let lanes = suppress_flicker(&raw, (config.flicker_s * rate).round() as usize);
    let crossings = find_crossings(scene, &lanes);
    Ok(label_crossings(traj.len(), &crossings, (config.horizon_s * rate).round() as usize))
}

/// Maximal runs of identical labels; the stream starts at `first_frame`.
pub fn segment_events(labels: &[ManeuverLabel], first_frame: FrameIndex) -> Vec<ManeuverEvent> {
    let mut events: Vec<ManeuverEvent> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let frame = first_frame + i as FrameIndex;
        match events.last_mut() {
            Some(e) if e.label == label => e.end_frame = frame + 1,
            _ => events.push(ManeuverEvent {
                label,
                start_frame: frame,
                end_frame: frame + 1,
                crossing_frame: None,
            }),
        }
    }
    for e in &mut events {
        if e.label.is_lane_change() {
            e.crossing_frame = Some(e.end_frame);
        }
    }
    events
}

/// Inverse of [`segment_events`].
pub fn flatten(events: &[ManeuverEvent]) -> Vec<ManeuverLabel> {
    events
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.label, e.len()))
        .collect()
}

/// `vehicle_id,frame_index,label` lines.
pub fn write_labels<W: Write>(
    mut w: W,
    vehicle: VehicleId,
    first_frame: FrameIndex,
    labels: &[ManeuverLabel],
) -> std::io::Result<()> {
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{},{},{}", vehicle, first_frame + i as FrameIndex, l)?;
    }
    Ok(())
}

/// Reads label lines, grouped per vehicle in file order of first appearance.
pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<(VehicleId, FrameIndex, Vec<ManeuverLabel>)>, LabelError> {
    let mut out: Vec<(VehicleId, FrameIndex, Vec<ManeuverLabel>)> = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || LabelError::Parse(format!("line {}: {line:?}", n + 1));
        let mut parts = line.split(',');
        let vid: VehicleId = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let frame: FrameIndex = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let label: ManeuverLabel = parts.next().ok_or_else(bad)?.parse()?;
        match out.last_mut() {
            Some((v, first, ls)) if *v == vid && *first + ls.len() as FrameIndex == frame => ls.push(label),
            _ => out.push((vid, frame, vec![label])),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{straight_lanes, TrajectoryFrame};
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use ManeuverLabel::*;

    fn scene_with_lanes(lanes: &[LaneId]) -> Scene {
        let frames = lanes
            .iter()
            .enumerate()
            .map(|(k, &lane)| TrajectoryFrame {
                vehicle_id: 1,
                frame_index: k as FrameIndex,
                timestamp: k as f64 / 10.0,
                x: k as f64,
                y: 0.0,
                lane_id: lane,
                speed: 10.0,
                accel: 0.0,
            })
            .collect();
        Scene::new(10.0, straight_lanes(3, 3.7, 5000.0), BTreeMap::from([(1, frames)])).unwrap()
    }

    fn labels_for(lanes: &[LaneId]) -> Vec<ManeuverLabel> {
        auto_label(&scene_with_lanes(lanes), 1, &LabelConfig::default()).unwrap()
    }

    #[test]
    fn three_second_window_before_crossing() {
        let mut lanes = vec![2; 300];
        lanes.extend(vec![1; 100]);
        let labels = labels_for(&lanes);
        for (k, l) in labels.iter().enumerate() {
            let expected = if (270..300).contains(&k) { L } else { F };
            assert_eq!(*l, expected, "frame {k}");
        }
    }

    #[test]
    fn no_change_is_all_follow() {
        assert!(labels_for(&[2; 120]).iter().all(|&l| l == F));
    }

    #[test]
    fn two_crossings_two_events() {
        let mut lanes = vec![2; 100];
        lanes.extend(vec![3; 300]);
        lanes.extend(vec![2; 100]);
        let events = segment_events(&labels_for(&lanes), 0);
        let lc: Vec<_> = events.iter().filter(|e| e.label.is_lane_change()).collect();
        assert_eq!(lc.len(), 2);
        assert_eq!((lc[0].label, lc[0].start_frame, lc[0].end_frame), (R, 70, 100));
        assert_eq!((lc[1].label, lc[1].start_frame, lc[1].end_frame), (L, 370, 400));
        assert!(lc.iter().all(|e| e.len() == 30 && e.crossing_frame == Some(e.end_frame)));
    }

    #[test]
    fn rapid_double_change_keeps_earlier_window() {
        let mut lanes = vec![2; 50];
        lanes.extend(vec![3; 10]);
        lanes.extend(vec![2; 40]);
        let labels = labels_for(&lanes);
        assert!(labels[20..50].iter().all(|&l| l == R));
        assert!(labels[50..60].iter().all(|&l| l == L));
        assert!(labels[60..].iter().all(|&l| l == F));
    }

    #[test]
    fn truncated_at_trajectory_start() {
        let mut lanes = vec![1; 12];
        lanes.extend(vec![2; 40]);
        let events = segment_events(&labels_for(&lanes), 0);
        assert_eq!(events[0].label, R);
        assert_eq!(events[0].len(), 12);
    }

    #[test]
    fn flicker_is_suppressed() {
        let mut lanes = vec![2; 60];
        lanes.extend(vec![1; 3]);
        lanes.extend(vec![2; 60]);
        assert!(labels_for(&lanes).iter().all(|&l| l == F));
        assert_eq!(suppress_flicker(&[1, 2, 1, 3, 3, 3], 2), vec![1, 1, 1, 3, 3, 3]);
    }

    #[test]
    fn non_adjacent_change_uses_id_order() {
        let mut lanes = vec![3; 50];
        lanes.extend(vec![1; 50]);
        let labels = labels_for(&lanes);
        assert_eq!(labels[49], L);
    }

    #[test]
    fn run_length_definition() {
        let events = segment_events(&[F, F, L, L, F], 0);
        let spans: Vec<_> = events.iter().map(|e| (e.label, e.start_frame, e.end_frame)).collect();
        assert_eq!(spans, vec![(F, 0, 2), (L, 2, 4), (F, 4, 5)]);
        assert_eq!(segment_events(&[F; 9], 5).len(), 1);
    }

    #[test]
    fn label_dump_round_trip() {
        let labels = vec![F, F, L, L, R, F];
        let mut buf = Vec::new();
        write_labels(&mut buf, 4, 10, &labels).unwrap();
        write_labels(&mut buf, 9, 0, &labels[..2]).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("4,10,F\n"));
        let back = read_labels(buf.as_slice()).unwrap();
        assert_eq!(back, vec![(4, 10, labels.clone()), (9, 0, labels[..2].to_vec())]);
    }

    fn label_strategy() -> impl Strategy<Value = ManeuverLabel> {
        prop_oneof![Just(L), Just(F), Just(R)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn segmentation_round_trips(stream in prop::collection::vec(label_strategy(), 1..80), first in -50i64..50) {
            let events = segment_events(&stream, first);
            prop_assert_eq!(flatten(&events), stream.clone());
            prop_assert_eq!(events[0].start_frame, first);
            for w in events.windows(2) {
                prop_assert_ne!(w[0].label, w[1].label);
                prop_assert_eq!(w[0].end_frame, w[1].start_frame);
            }
            prop_assert_eq!(segment_events(&flatten(&events), first), events);
        }

        #[test]
        fn labels_depend_on_lane_stream_only(seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let mut lanes = Vec::new();
            let mut lane = 2;
            while lanes.len() < 200 {
                let run = rng.random_range(5..60);
                lanes.extend(std::iter::repeat_n(lane, run));
                lane = if lane == 2 { [1, 3][rng.random_range(0..2)] } else { 2 };
            }
            let a = auto_label(&scene_with_lanes(&lanes), 1, &LabelConfig::default()).unwrap();
            let mut moved = scene_with_lanes(&lanes);
            let mut t = moved.trajectories().clone();
            for f in t.get_mut(&1).unwrap() {
                f.x *= 3.0;
                f.y += 1.0;
            }
            moved = Scene::new(10.0, moved.lanes().to_vec(), t).unwrap();
            prop_assert_eq!(a.clone(), auto_label(&moved, 1, &LabelConfig::default()).unwrap());
            // Every lane-change event ends at a crossing.
            let crossings: Vec<i64> = lanes.windows(2).enumerate().filter(|(_, w)| w[0] != w[1]).map(|(i, _)| i as i64 + 1).collect();
            for e in segment_events(&a, 0) {
                if e.label.is_lane_change() {
                    prop_assert!(crossings.contains(&e.end_frame));
                }
            }
        }
    }
}
