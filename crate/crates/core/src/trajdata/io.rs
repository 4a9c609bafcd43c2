use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameIndex, LaneGeometry, Scene, TrajError, TrajectoryFrame, VehicleId};

const FEET_TO_METERS: f64 = 0.3048;

/// Column mapping from a delimited text file onto [`TrajectoryFrame`] fields.
///
/// World `x` must point along the direction of travel and `y` to its left;
/// `x_sign` / `y_sign` flip an input axis when the source uses another
/// convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub vehicle_id: String,
    pub frame: String,
    pub x: String,
    pub y: String,
    pub lane_id: String,
    pub speed: String,
    pub accel: String,
    pub x_sign: f64,
    pub y_sign: f64,
    pub feet_to_meters: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

impl CsvSchema {
    /// Column names as written by this crate, already in meters.
    pub fn canonical() -> Self {
        Self {
            vehicle_id: "vehicle_id".into(),
            frame: "frame_index".into(),
            x: "x".into(),
            y: "y".into(),
            lane_id: "lane_id".into(),
            speed: "speed".into(),
            accel: "accel".into(),
            x_sign: 1.0,
            y_sign: 1.0,
            feet_to_meters: false,
        }
    }

    /// NGSIM trajectory files: `Local_Y` runs along the road, `Local_X` grows
    /// to the right of travel, all in feet.
    pub fn ngsim() -> Self {
        Self {
            vehicle_id: "Vehicle_ID".into(),
            frame: "Frame_ID".into(),
            x: "Local_Y".into(),
            y: "Local_X".into(),
            lane_id: "Lane_ID".into(),
            speed: "v_Vel".into(),
            accel: "v_Acc".into(),
            x_sign: 1.0,
            y_sign: -1.0,
            feet_to_meters: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ngsim" => Some(Self::ngsim()),
            "canonical" => Some(Self::canonical()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub scene: Scene,
    /// Rows with a non-finite or unparsable value.
    pub dropped_rows: usize,
    /// Rows whose lane id has no geometry.
    pub unknown_lane_rows: usize,
    /// Repeated `(vehicle, frame)` rows; the first occurrence is kept.
    pub duplicate_rows: usize,
}

/// Read a comma- or tab-separated trajectory file with a header row.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    sample_rate_hz: f64,
    lanes: Vec<LaneGeometry>,
) -> Result<LoadReport, TrajError> {
    let text = std::fs::read_to_string(path)?;
    load_csv_str(&text, schema, sample_rate_hz, lanes)
}

pub(crate) fn load_csv_str(
    text: &str,
    schema: &CsvSchema,
    sample_rate_hz: f64,
    lanes: Vec<LaneGeometry>,
) -> Result<LoadReport, TrajError> {
    let header = text.lines().next().ok_or(TrajError::EmptyScene)?;
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrajError::Schema(format!("missing required column {name:?}")))
    };
    let idx = [
        col(&schema.vehicle_id)?,
        col(&schema.frame)?,
        col(&schema.x)?,
        col(&schema.y)?,
        col(&schema.lane_id)?,
        col(&schema.speed)?,
        col(&schema.accel)?,
    ];
    let unit = if schema.feet_to_meters { FEET_TO_METERS } else { 1.0 };
    let lane_ids: std::collections::HashSet<_> = lanes.iter().map(|l| l.lane_id).collect();

    let mut trajectories: BTreeMap<VehicleId, BTreeMap<FrameIndex, TrajectoryFrame>> = BTreeMap::new();
    let (mut rows, mut dropped, mut unknown_lane, mut duplicates) = (0usize, 0usize, 0usize, 0usize);
    for record in reader.records() {
        let record = record?;
        rows += 1;
        let mut vals = [0.0f64; 7];
        let mut ok = true;
        for (v, &i) in vals.iter_mut().zip(&idx) {
            match record.get(i).and_then(|s| s.parse::<f64>().ok()) {
                Some(x) if x.is_finite() => *v = x,
                _ => ok = false,
            }
        }
        if !ok || vals[0] < 0.0 || vals[4] < 0.0 {
            dropped += 1;
            continue;
        }
        let [vid, frame, x, y, lane, speed, accel] = vals;
        let lane_id = lane as u32;
        if !lane_ids.contains(&lane_id) {
            unknown_lane += 1;
            continue;
        }
        let frame_index = frame as FrameIndex;
        let f = TrajectoryFrame {
            vehicle_id: vid as VehicleId,
            frame_index,
            timestamp: frame_index as f64 / sample_rate_hz,
            x: schema.x_sign * x * unit,
            y: schema.y_sign * y * unit,
            lane_id,
            speed: speed * unit,
            accel: accel * unit,
        };
        let traj = trajectories.entry(f.vehicle_id).or_default();
        if traj.contains_key(&frame_index) {
            duplicates += 1;
        } else {
            traj.insert(frame_index, f);
        }
    }
    if rows == dropped + unknown_lane + duplicates {
        return Err(TrajError::EmptyScene);
    }
    let trajectories = trajectories
        .into_iter()
        .map(|(k, v)| (k, v.into_values().collect()))
        .collect();
    Ok(LoadReport {
        scene: Scene::new(sample_rate_hz, lanes, trajectories)?,
        dropped_rows: dropped,
        unknown_lane_rows: unknown_lane,
        duplicate_rows: duplicates,
    })
}

/// Lane geometry file: a TOML document with one `[[lanes]]` table per lane.
///
/// ```toml
/// [[lanes]]
/// lane_id = 1
/// width = 3.7
/// centerline = [[0.0, 5.55], [800.0, 5.55]]
/// right = 2
///
/// [[lanes]]
/// lane_id = 2
/// width = 3.7
/// centerline = [[0.0, 1.85], [800.0, 1.85]]
/// left = 1
/// ramp = { kind = "off_ramp", s_start = 600.0, s_end = 780.0 }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneFile {
    pub lanes: Vec<LaneGeometry>,
}

pub fn parse_lanes(text: &str) -> Result<Vec<LaneGeometry>, TrajError> {
    let file: LaneFile = toml::from_str(text).map_err(|e| TrajError::Parse(e.to_string()))?;
    for lane in &file.lanes {
        lane.validate()?;
    }
    Ok(file.lanes)
}

pub fn load_lanes(path: &Path) -> Result<Vec<LaneGeometry>, TrajError> {
    parse_lanes(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SceneRecord {
    Scene {
        sample_rate_hz: f64,
        lanes: Vec<LaneGeometry>,
    },
    Frame(TrajectoryFrame),
}

/// Canonical newline-delimited serialization: one `scene` header record,
/// then one `frame` record per vehicle-frame in (vehicle, frame) order.
pub fn write_scene<W: Write>(mut out: W, scene: &Scene) -> Result<(), TrajError> {
    let header = SceneRecord::Scene {
        sample_rate_hz: scene.sample_rate_hz(),
        lanes: scene.lanes().to_vec(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| TrajError::Parse(e.to_string()))?;
    out.write_all(b"\n")?;
    for traj in scene.trajectories().values() {
        for f in traj {
            serde_json::to_writer(&mut out, &SceneRecord::Frame(*f)).map_err(|e| TrajError::Parse(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_scene<R: BufRead>(input: R) -> Result<Scene, TrajError> {
    let mut header = None;
    let mut trajectories: BTreeMap<VehicleId, Vec<TrajectoryFrame>> = BTreeMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord =
            serde_json::from_str(&line).map_err(|e| TrajError::Parse(format!("line {}: {e}", n + 1)))?;
        match rec {
            SceneRecord::Scene { sample_rate_hz, lanes } => header = Some((sample_rate_hz, lanes)),
            SceneRecord::Frame(f) => trajectories.entry(f.vehicle_id).or_default().push(f),
        }
    }
    let (rate, lanes) = header.ok_or_else(|| TrajError::Parse("missing scene header record".into()))?;
    Scene::new(rate, lanes, trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::straight_lanes;

    fn lanes() -> Vec<LaneGeometry> {
        straight_lanes(3, 3.7, 1000.0)
    }

    #[test]
    fn three_rows_make_one_trajectory() {
        let text = "vehicle_id,frame_index,x,y,lane_id,speed,accel\n\
                    4,0,10.0,5.55,1,20.0,0.0\n\
                    4,1,12.0,5.55,1,20.0,0.0\n\
                    4,2,14.0,5.55,1,20.0,0.0\n";
        let r = load_csv_str(text, &CsvSchema::canonical(), 10.0, lanes()).unwrap();
        assert_eq!(r.scene.len(), 1);
        assert_eq!(r.scene.trajectory(4).unwrap().len(), 3);
        assert_eq!(r.dropped_rows, 0);
        assert!((r.scene.frame(4, 2).unwrap().timestamp - 0.2).abs() < 1e-9);
    }

    #[test]
    fn nan_rows_are_dropped_and_counted() {
        let text = "vehicle_id,frame_index,x,y,lane_id,speed,accel\n\
                    4,0,10.0,5.55,1,20.0,0.0\n\
                    4,1,12.0,5.55,1,20.0,0.0\n\
                    4,2,NaN,5.55,1,20.0,0.0\n";
        let r = load_csv_str(text, &CsvSchema::canonical(), 10.0, lanes()).unwrap();
        assert_eq!(r.scene.trajectory(4).unwrap().len(), 2);
        assert_eq!(r.dropped_rows, 1);
    }

    #[test]
    fn tab_separated_ngsim_columns_convert_feet() {
        let text = "Vehicle_ID\tFrame_ID\tLocal_X\tLocal_Y\tLane_ID\tv_Vel\tv_Acc\n\
                    7\t100\t-6.0696\t100.0\t2\t50.0\t1.0\n";
        let r = load_csv_str(text, &CsvSchema::ngsim(), 10.0, lanes()).unwrap();
        let f = r.scene.frame(7, 100).unwrap();
        assert!((f.x - 30.48).abs() < 1e-9);
        assert!((f.y - 1.85).abs() < 1e-4);
        assert!((f.speed - 15.24).abs() < 1e-9);
    }

    #[test]
    fn missing_column_and_empty_file() {
        let text = "vehicle_id,frame_index,x,y,lane_id,speed\n1,0,0,0,1,0\n";
        assert!(matches!(
            load_csv_str(text, &CsvSchema::canonical(), 10.0, lanes()),
            Err(TrajError::Schema(_))
        ));
        assert!(matches!(
            load_csv_str("", &CsvSchema::canonical(), 10.0, lanes()),
            Err(TrajError::EmptyScene)
        ));
        let header_only = "vehicle_id,frame_index,x,y,lane_id,speed,accel\n";
        assert!(matches!(
            load_csv_str(header_only, &CsvSchema::canonical(), 10.0, lanes()),
            Err(TrajError::EmptyScene)
        ));
    }

    #[test]
    fn lane_file_parses_and_round_trips() {
        let text = r#"
[[lanes]]
lane_id = 1
width = 3.7
centerline = [[0.0, 5.55], [800.0, 5.55]]
right = 2

[[lanes]]
lane_id = 2
width = 3.7
centerline = [[0.0, 1.85], [800.0, 1.85]]
left = 1
ramp = { kind = "off_ramp", s_start = 600.0, s_end = 780.0 }
"#;
        let lanes = parse_lanes(text).unwrap();
        assert_eq!(lanes.len(), 2);
        assert_eq!(lanes[1].ramp.unwrap().kind, crate::trajdata::RampKind::OffRamp);
        let back = toml::to_string(&LaneFile { lanes: lanes.clone() }).unwrap();
        assert_eq!(parse_lanes(&back).unwrap(), lanes);
    }

    #[test]
    fn scene_ndjson_round_trip() {
        let cfg = crate::trajdata::SynthConfig {
            n_vehicles: 4,
            duration_s: 12.0,
            ..Default::default()
        };
        let scene = crate::trajdata::generate_synthetic(&cfg, 3).unwrap();
        let mut bytes = Vec::new();
        write_scene(&mut bytes, &scene).unwrap();
        let back = read_scene(bytes.as_slice()).unwrap();
        assert_eq!(back, scene);
        let mut again = Vec::new();
        write_scene(&mut again, &back).unwrap();
        assert_eq!(again, bytes);
    }
}
