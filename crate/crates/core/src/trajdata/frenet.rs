use serde::{Deserialize, Serialize};

use super::{FrameIndex, LaneGeometry, Scene, TrajError, TrajectoryFrame, VehicleId};

/// Lane-relative kinematic state of one vehicle at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrenetState {
    /// Arc length along the own lane's centerline.
    pub s: f64,
    /// Signed lateral offset, left of travel positive.
    pub d: f64,
    pub v_lat: f64,
    pub v_long: f64,
    pub a_lat: f64,
    /// Travel direction relative to the centerline tangent, in (-pi, pi].
    pub heading: f64,
}

/// Result of projecting a world point onto a centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub d: f64,
    pub segment: usize,
    /// Direction of the centerline tangent at the projection, radians.
    pub tangent: f64,
}

impl LaneGeometry {
    /// Projection onto the centerline; errors when the foot point would lie
    /// before the first or after the last centerline point.
    pub fn project(&self, x: f64, y: f64) -> Result<Projection, TrajError> {
        let (p, t_raw) = self.project_extended(x, y);
        let last = self.centerline.len() - 2;
        if (p.segment == 0 && t_raw < 0.0) || (p.segment == last && t_raw > 1.0) {
            return Err(TrajError::OutOfRange {
                lane: self.lane_id,
                x,
                y,
            });
        }
        Ok(p)
    }

    /// Projection that extends the first and last segments linearly.
    /// Returns the projection and the raw segment parameter.
    pub fn project_extended(&self, x: f64, y: f64) -> (Projection, f64) {
        let pts = &self.centerline;
        let last = pts.len() - 2;
        let mut best: Option<(f64, Projection, f64)> = None;
        let mut s_base = 0.0;
        for i in 0..=last {
            let [ax, ay] = pts[i];
            let [bx, by] = pts[i + 1];
            let (tx, ty) = (bx - ax, by - ay);
            let len2 = tx * tx + ty * ty;
            let len = len2.sqrt();
            let t_raw = ((x - ax) * tx + (y - ay) * ty) / len2;
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if i == last { f64::INFINITY } else { 1.0 };
            let t = t_raw.clamp(lo, hi);
            let (fx, fy) = (ax + t * tx, ay + t * ty);
            let dist2 = (x - fx).powi(2) + (y - fy).powi(2);
            let cross = tx * (y - ay) - ty * (x - ax);
            let proj = Projection {
                s: s_base + t * len,
                d: cross / len,
                segment: i,
                tangent: ty.atan2(tx),
            };
            if best.as_ref().is_none_or(|(bd, _, _)| dist2 < *bd) {
                best = Some((dist2, proj, t_raw));
            }
            s_base += len;
        }
        let (_, p, t_raw) = best.expect("validated centerline has a segment");
        (p, t_raw)
    }

    /// Inverse of [`LaneGeometry::project`] for points on the centerline
    /// extent (segments are extended linearly beyond the ends).
    pub fn to_cartesian(&self, s: f64, d: f64) -> (f64, f64) {
        let pts = &self.centerline;
        let last = pts.len() - 2;
        let mut s_base = 0.0;
        for i in 0..=last {
            let [ax, ay] = pts[i];
            let [bx, by] = pts[i + 1];
            let (tx, ty) = (bx - ax, by - ay);
            let len = (tx * tx + ty * ty).sqrt();
            if s <= s_base + len || i == last {
                let t = (s - s_base) / len;
                let (ux, uy) = (tx / len, ty / len);
                return (ax + t * tx - d * uy, ay + t * ty + d * ux);
            }
            s_base += len;
        }
        unreachable!("validated centerline has a segment")
    }
}

/// Derivative of `values` at position `k` given their frame indices:
/// central difference when both neighbors exist, one-sided otherwise.
fn derivative(values: &[Option<f64>], frames: &[Option<FrameIndex>], k: usize, rate: f64) -> f64 {
    let prev = k.checked_sub(1).and_then(|j| Some((values[j]?, frames[j]?)));
    let next = values.get(k + 1).copied().flatten().zip(frames.get(k + 1).copied().flatten());
    let cur = values[k].zip(frames[k]);
    match (prev, cur, next) {
        (Some((vp, fp)), _, Some((vn, fn_))) => (vn - vp) * rate / (fn_ - fp) as f64,
        (None, Some((vc, fc)), Some((vn, fn_))) => (vn - vc) * rate / (fn_ - fc) as f64,
        (Some((vp, fp)), Some((vc, fc)), None) => (vc - vp) * rate / (fc - fp) as f64,
        _ => 0.0,
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Frenet state of `vehicle` at `frame`, relative to the lane it occupies at
/// that frame. Neighboring frames are projected onto the same lane so
/// derivatives do not jump when the lane assignment changes.
pub fn to_frenet(scene: &Scene, vehicle: VehicleId, frame: FrameIndex) -> Result<FrenetState, TrajError> {
    let traj = scene
        .trajectory(vehicle)
        .ok_or(TrajError::MissingFrame { vehicle, frame })?;
    let k = scene
        .frame_position(vehicle, frame)
        .ok_or(TrajError::MissingFrame { vehicle, frame })?;
    frenet_at(scene, traj, k)
}

pub(crate) fn frenet_at(scene: &Scene, traj: &[TrajectoryFrame], k: usize) -> Result<FrenetState, TrajError> {
    let here = &traj[k];
    let lane = scene
        .lane(here.lane_id)
        .ok_or(TrajError::UnknownLane(here.lane_id))?;
    let rate = scene.sample_rate_hz();
    let center = lane.project(here.x, here.y)?;

    // Window of frames k-2..=k+2 projected onto this lane.
    let mut s = [None; 5];
    let mut d = [None; 5];
    let mut frames = [None; 5];
    let mut pos = [None; 5];
    for (slot, offset) in (-2i64..=2).enumerate() {
        let j = k as i64 + offset;
        if j < 0 || j as usize >= traj.len() {
            continue;
        }
        let f = &traj[j as usize];
        let p = if offset == 0 { center } else { lane.project_extended(f.x, f.y).0 };
        s[slot] = Some(p.s);
        d[slot] = Some(p.d);
        frames[slot] = Some(f.frame_index);
        pos[slot] = Some((f.x, f.y));
    }
    let v_lat_at = |slot: usize| -> Option<f64> {
        d[slot]?;
        Some(derivative(&d, &frames, slot, rate))
    };
    let v_lat = derivative(&d, &frames, 2, rate);
    let v_long = derivative(&s, &frames, 2, rate);
    let v_lat_window = [None, v_lat_at(1), Some(v_lat), v_lat_at(3), None];
    let a_lat = derivative(&v_lat_window, &frames, 2, rate);

    let xs = pos.map(|p| p.map(|(x, _)| x));
    let ys = pos.map(|p| p.map(|(_, y)| y));
    let dx = derivative(&xs, &frames, 2, rate);
    let dy = derivative(&ys, &frames, 2, rate);
    let heading = if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        wrap_angle(dy.atan2(dx) - center.tangent)
    };

    if center.d.abs() > 3.0 * lane.width {
        return Err(TrajError::LateralBound {
            lane: lane.lane_id,
            d: center.d,
        });
    }
    Ok(FrenetState {
        s: center.s,
        d: center.d,
        v_lat,
        v_long,
        a_lat,
        heading,
    })
}
