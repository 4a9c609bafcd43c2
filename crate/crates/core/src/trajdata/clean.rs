use serde::{Deserialize, Serialize};

use super::{Scene, TrajectoryFrame};

/// Noise-removal thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    /// Minimum trajectory length in frames (>= 2).
    pub min_len_frames: usize,
    /// Largest allowed position change between consecutive frames, meters.
    pub max_jump_m: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            min_len_frames: 50,
            max_jump_m: 5.0,
        }
    }
}

fn is_clean(traj: &[TrajectoryFrame], cfg: &CleanConfig) -> bool {
    traj.len() >= cfg.min_len_frames.max(2)
        && traj.windows(2).all(|w| {
            let jump = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            w[1].frame_index == w[0].frame_index + 1 && jump <= cfg.max_jump_m
        })
}

/// Drop trajectories that are too short, have frame gaps, or jump further
/// than `max_jump_m` between consecutive frames.
pub fn clean_trajectories(scene: &Scene, cfg: &CleanConfig) -> Scene {
    let kept = scene
        .trajectories()
        .iter()
        .filter(|(_, t)| is_clean(t, cfg))
        .map(|(&id, t)| (id, t.clone()))
        .collect();
    scene.with_trajectories(kept)
}
