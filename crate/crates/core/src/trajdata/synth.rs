use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LaneGeometry, LaneId, Ramp, RampKind, Scene, TrajError, TrajectoryFrame, VehicleId};

/// Auxiliary on-ramp lane to the right of the rightmost main lane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub s_start: f64,
    pub s_end: f64,
    /// Vehicles that enter on the ramp and merge left before `s_end`.
    pub vehicles: usize,
}

/// Straight multi-lane highway generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_lanes: usize,
    pub n_vehicles: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub lane_width_m: f64,
    /// Probability that a vehicle performs one lane change.
    pub lc_prob: f64,
    /// Duration of the lateral transition of a lane change.
    pub lc_duration_s: f64,
    /// Earliest lane-crossing time; keeps a full label window in view.
    pub min_crossing_s: f64,
    pub speed_mean: f64,
    pub speed_sd: f64,
    /// Mean longitudinal gap between vehicles placed in the same lane.
    pub headway_m: f64,
    /// Amplitude of slow lane-keeping wander.
    pub wander_amp_m: f64,
    /// Standard deviation of white noise added to measured lateral position.
    pub position_noise_m: f64,
    pub ramp: Option<RampSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lanes: 3,
            n_vehicles: 10,
            duration_s: 20.0,
            sample_rate_hz: 10.0,
            lane_width_m: 3.7,
            lc_prob: 0.5,
            lc_duration_s: 4.0,
            min_crossing_s: 3.5,
            speed_mean: 25.0,
            speed_sd: 2.0,
            headway_m: 35.0,
            wander_amp_m: 0.1,
            position_noise_m: 0.0,
            ramp: None,
        }
    }
}

/// Parallel straight lanes along +x, lane 1 leftmost (largest y).
pub fn straight_lanes(n_lanes: usize, width: f64, length: f64) -> Vec<LaneGeometry> {
    (1..=n_lanes as LaneId)
        .map(|k| {
            let y = (n_lanes as f64 - k as f64) * width + width / 2.0;
            LaneGeometry {
                lane_id: k,
                centerline: vec![[0.0, y], [length, y]],
                width,
                left: (k > 1).then(|| k - 1),
                right: (k < n_lanes as LaneId).then(|| k + 1),
                ramp: None,
            }
        })
        .collect()
}

/// Quintic smoothstep on [0, 1] and its derivative.
fn smoothstep(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        let u2 = u * u;
        let u3 = u2 * u;
        (
            u3 * (10.0 - 15.0 * u + 6.0 * u2),
            30.0 * u2 * (1.0 - 2.0 * u + u2),
        )
    }
}

struct VehiclePlan {
    lane: LaneId,
    x0: f64,
    v0: f64,
    speed_amp: f64,
    speed_omega: f64,
    speed_phase: f64,
    wander_amp: f64,
    wander_omega: f64,
    wander_phase: f64,
    /// (crossing time, +1 left / -1 right)
    change: Option<(f64, f64)>,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), TrajError> {
        let bad = |m: &str| Err(TrajError::Config(m.to_string()));
        if self.n_lanes == 0 {
            return bad("at least one lane is required");
        }
        if !(self.duration_s > 0.0 && self.sample_rate_hz > 0.0 && self.lane_width_m > 0.0) {
            return bad("duration, sample rate and lane width must be positive");
        }
        if !(0.0..=1.0).contains(&self.lc_prob) {
            return bad("lc_prob must be in [0, 1]");
        }
        if self.lc_prob > 0.0 && self.n_lanes < 2 && self.ramp.is_none() {
            return bad("lane changes need at least two lanes");
        }
        if !(self.lc_duration_s > 0.0) {
            return bad("lc_duration_s must be positive");
        }
        if self.wander_amp_m.abs() >= 0.4 * self.lane_width_m {
            return bad("wander amplitude would cross lane boundaries");
        }
        if (self.lc_prob > 0.0 || self.ramp.is_some()) && self.crossing_window().is_none() {
            return bad("duration too short for a full lane change");
        }
        if let Some(r) = &self.ramp {
            if !(r.s_start < r.s_end) {
                return bad("ramp needs s_start < s_end");
            }
        }
        Ok(())
    }

    fn crossing_window(&self) -> Option<(f64, f64)> {
        let lo = self.min_crossing_s.max(self.lc_duration_s / 2.0 + 0.2);
        let hi = self.duration_s - self.lc_duration_s / 2.0 - 0.5;
        (hi >= lo).then_some((lo, hi))
    }

    fn lane_center(&self, lane: LaneId) -> f64 {
        (self.n_lanes as f64 - lane as f64) * self.lane_width_m + self.lane_width_m / 2.0
    }

    fn lane_of(&self, y: f64) -> LaneId {
        let band = (y / self.lane_width_m).floor() as i64;
        let n = self.n_lanes as i64;
        if band < 0 && self.ramp.is_some() {
            return n as LaneId + 1;
        }
        (n - band.clamp(0, n - 1)) as LaneId
    }
}

/// Seeded straight-highway scene; identical seeds give identical scenes.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Scene, TrajError> {
    config.validate()?;
    let mut rng = crate::seed::rng(seed);
    let w = config.lane_width_m;
    let n = config.n_lanes as LaneId;
    let top_speed = config.speed_mean + 4.0 * config.speed_sd.abs() + 2.0;

    let mut plans = Vec::with_capacity(config.n_vehicles);
    let mut next_x = vec![50.0; config.n_lanes + 1];
    let lane_bias = |lane: LaneId| (n as f64 + 1.0 - 2.0 * lane as f64) * 0.5;
    for _ in 0..config.n_vehicles {
        let lane = rng.random_range(1..=n);
        let gap = config.headway_m * rng.random_range(0.6..1.4);
        let x0 = next_x[(lane - 1) as usize];
        next_x[(lane - 1) as usize] += gap;
        let v0 = (config.speed_mean + lane_bias(lane) + config.speed_sd * rng.random_range(-1.0..1.0)).max(1.0);
        let change = if rng.random::<f64>() < config.lc_prob {
            let (lo, hi) = config.crossing_window().expect("validated");
            let t_c = rng.random_range(lo..=hi);
            let dir = match (lane > 1, lane < n) {
                (true, true) => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                (true, false) => 1.0,
                (false, true) => -1.0,
                (false, false) => 0.0,
            };
            (dir != 0.0).then_some((t_c, dir))
        } else {
            None
        };
        plans.push(planned(&mut rng, config, lane, x0, v0, change));
    }
    if let Some(ramp) = &config.ramp {
        let (lo, hi) = config.crossing_window().expect("validated");
        for _ in 0..ramp.vehicles {
            let x0 = ramp.s_start + rng.random_range(0.0..30.0);
            let v0 = (config.speed_mean - 3.0).max(1.0);
            // Cross well before the ramp ends.
            let latest = ((ramp.s_end - x0) / v0 - config.lc_duration_s / 2.0).min(hi);
            if latest < lo {
                return Err(TrajError::Config("ramp too short for a merge".into()));
            }
            let t_c = rng.random_range(lo..=latest);
            plans.push(planned(&mut rng, config, n + 1, x0, v0, Some((t_c, 1.0))));
        }
    }

    let max_x0 = plans.iter().map(|p| p.x0).fold(0.0, f64::max);
    let length = max_x0 + config.duration_s * top_speed + 100.0;
    let mut lanes = straight_lanes(config.n_lanes, w, length);
    if let Some(ramp) = &config.ramp {
        lanes.last_mut().expect("n_lanes >= 1").right = Some(n + 1);
        lanes.push(LaneGeometry {
            lane_id: n + 1,
            centerline: vec![[0.0, -w / 2.0], [length, -w / 2.0]],
            width: w,
            left: Some(n),
            right: None,
            ramp: Some(Ramp {
                kind: RampKind::OnRamp,
                s_start: ramp.s_start,
                s_end: ramp.s_end,
            }),
        });
    }

    let noise = Normal::new(0.0, config.position_noise_m.abs()).map_err(|e| TrajError::Config(e.to_string()))?;
    let n_frames = (config.duration_s * config.sample_rate_hz).round() as i64;
    let mut trajectories = BTreeMap::new();
    for (i, plan) in plans.iter().enumerate() {
        let id = (i + 1) as VehicleId;
        let mut frames = Vec::with_capacity(n_frames as usize);
        for k in 0..n_frames {
            let t = k as f64 / config.sample_rate_hz;
            let phase = plan.speed_omega * t + plan.speed_phase;
            let vx = plan.v0 + plan.speed_amp * phase.sin();
            let ax = plan.speed_amp * plan.speed_omega * phase.cos();
            let x = plan.x0 + plan.v0 * t
                - plan.speed_amp / plan.speed_omega * (phase.cos() - plan.speed_phase.cos());
            let wphase = plan.wander_omega * t + plan.wander_phase;
            let mut y = config.lane_center(plan.lane) + plan.wander_amp * wphase.sin();
            let mut vy = plan.wander_amp * plan.wander_omega * wphase.cos();
            if let Some((t_c, dir)) = plan.change {
                let u = (t - t_c) / config.lc_duration_s + 0.5;
                let (p, dp) = smoothstep(u);
                y += dir * w * p;
                vy += dir * w * dp / config.lc_duration_s;
            }
            let lane_id = config.lane_of(y);
            let measured_y = if config.position_noise_m > 0.0 {
                y + noise.sample(&mut rng)
            } else {
                y
            };
            frames.push(TrajectoryFrame {
                vehicle_id: id,
                frame_index: k,
                timestamp: t,
                x,
                y: measured_y,
                lane_id,
                speed: (vx * vx + vy * vy).sqrt(),
                accel: ax,
            });
        }
        trajectories.insert(id, frames);
    }
    Scene::new(config.sample_rate_hz, lanes, trajectories)
}

fn planned(
    rng: &mut impl Rng,
    config: &SynthConfig,
    lane: LaneId,
    x0: f64,
    v0: f64,
    change: Option<(f64, f64)>,
) -> VehiclePlan {
    let tau = std::f64::consts::TAU;
    VehiclePlan {
        lane,
        x0,
        v0,
        speed_amp: rng.random_range(0.0..0.6),
        speed_omega: tau / rng.random_range(10.0..20.0),
        speed_phase: rng.random_range(0.0..tau),
        wander_amp: config.wander_amp_m * rng.random_range(0.5..1.0),
        wander_omega: tau / rng.random_range(8.0..16.0),
        wander_phase: rng.random_range(0.0..tau),
        change,
    }
}
