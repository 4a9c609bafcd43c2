use serde::{Deserialize, Serialize};

use super::{Scene, TrajError, VehicleId};

/// One corner-case edit applied to a whole trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneEdit {
    Remove { vehicle_id: VehicleId },
    /// Rigid shift by `ds` meters along the lane direction at the vehicle's
    /// first frame (positive is forward).
    Translate { vehicle_id: VehicleId, ds: f64 },
}

/// Apply edits in order. Untouched trajectories are copied bit for bit.
pub fn perturb_scene(scene: &Scene, edits: &[SceneEdit]) -> Result<Scene, TrajError> {
    let mut trajectories = scene.trajectories().clone();
    for edit in edits {
        match *edit {
            SceneEdit::Remove { vehicle_id } => {
                trajectories
                    .remove(&vehicle_id)
                    .ok_or_else(|| TrajError::Edit(format!("vehicle {vehicle_id} does not exist")))?;
            }
            SceneEdit::Translate { vehicle_id, ds } => {
                let traj = trajectories
                    .get_mut(&vehicle_id)
                    .ok_or_else(|| TrajError::Edit(format!("vehicle {vehicle_id} does not exist")))?;
                let first = traj[0];
                let lane = scene
                    .lane(first.lane_id)
                    .ok_or(TrajError::UnknownLane(first.lane_id))?;
                let tangent = lane.project(first.x, first.y)?.tangent;
                let (dx, dy) = (ds * tangent.cos(), ds * tangent.sin());
                for f in traj.iter_mut() {
                    f.x += dx;
                    f.y += dy;
                    let lane = scene.lane(f.lane_id).ok_or(TrajError::UnknownLane(f.lane_id))?;
                    if lane.project(f.x, f.y).is_err() {
                        return Err(TrajError::Edit(format!(
                            "translating vehicle {vehicle_id} by {ds} m leaves the road at frame {}",
                            f.frame_index
                        )));
                    }
                }
            }
        }
    }
    Ok(scene.with_trajectories(trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{generate_synthetic, SynthConfig};

    fn base() -> Scene {
        generate_synthetic(
            &SynthConfig {
                n_vehicles: 8,
                ..Default::default()
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn empty_edit_list_is_identity() {
        let s = base();
        assert_eq!(perturb_scene(&s, &[]).unwrap(), s);
    }

    #[test]
    fn removal_leaves_others_untouched() {
        let s = base();
        let out = perturb_scene(&s, &[SceneEdit::Remove { vehicle_id: 5 }]).unwrap();
        assert!(out.trajectory(5).is_none());
        for id in s.vehicle_ids().into_iter().filter(|&i| i != 5) {
            assert_eq!(out.trajectory(id), s.trajectory(id));
        }
        assert!(perturb_scene(&s, &[SceneEdit::Remove { vehicle_id: 99 }]).is_err());
    }

    #[test]
    fn translation_is_rigid_and_bounded_by_the_road() {
        let s = base();
        let out = perturb_scene(&s, &[SceneEdit::Translate { vehicle_id: 2, ds: 10.0 }]).unwrap();
        for (a, b) in s.trajectory(2).unwrap().iter().zip(out.trajectory(2).unwrap()) {
            assert!((b.x - a.x - 10.0).abs() < 1e-9);
            assert_eq!(b.y, a.y);
        }
        assert_eq!(out.trajectory(3), s.trajectory(3));
        let far = perturb_scene(&s, &[SceneEdit::Translate { vehicle_id: 2, ds: 1e6 }]);
        assert!(matches!(far, Err(TrajError::Edit(_))));
    }
}
