use serde::{Deserialize, Serialize};

use super::track::Track;

pub const WHEELBASE_M: f64 = 2.5;
pub const VEHICLE_WIDTH_M: f64 = 1.8;
pub const VEHICLE_LENGTH_M: f64 = 4.0;
pub const DEFAULT_SPEED_MPS: f64 = 10.0;
pub const DEFAULT_DT_S: f64 = 0.05;
pub const DEFAULT_LOOKAHEAD_M: f64 = 10.0;
pub const MAX_STEER_DEG: f64 = 30.0;
/// Overtake lateral offset used by the expert when a slower car blocks the lane.
pub const OVERTAKE_OFFSET_M: f64 = 2.2;
/// Expert starts the sidestep this far behind a blocking car.
pub const OVERTAKE_ENGAGE_M: f64 = 25.0;
/// Expert returns to the centerline this far past the car.
pub const OVERTAKE_CLEAR_M: f64 = 8.0;

/// A constant-speed obstacle car in the track frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCar {
    pub lane_offset: f64,
    pub s: f64,
    pub speed: f64,
}

/// Instantaneous vehicle/world state in the track frame.
/// `d` is the signed lateral offset, positive left; `psi` the heading error.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub s: f64,
    pub d: f64,
    pub psi: f64,
    pub v: f64,
    pub cars: Vec<ObstacleCar>,
}

impl SimState {
    pub fn centered(s: f64) -> Self {
        SimState {
            s,
            d: 0.0,
            psi: 0.0,
            v: DEFAULT_SPEED_MPS,
            cars: Vec::new(),
        }
    }
}

/// Kinematic bicycle step in the track frame, explicit Euler.
pub fn step_vehicle(track: &Track, state: &SimState, steering_deg: f64, dt: f64) -> SimState {
    debug_assert!(dt > 0.0 && dt <= 0.1);
    let delta = steering_deg.clamp(-MAX_STEER_DEG, MAX_STEER_DEG).to_radians();
    let kappa = track.curvature_at(state.s);
    let s_dot = state.v * state.psi.cos() / (1.0 - kappa * state.d);
    let psi_dot = state.v * delta.tan() / WHEELBASE_M - kappa * s_dot;
    let d_dot = state.v * state.psi.sin();
    SimState {
        s: state.s + s_dot * dt,
        d: state.d + d_dot * dt,
        psi: state.psi + psi_dot * dt,
        v: state.v,
        cars: state
            .cars
            .iter()
            .map(|c| ObstacleCar {
                s: c.s + c.speed * dt,
                ..*c
            })
            .collect(),
    }
}

/// Vehicle pose on the open plane; used by the circle-closure oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Kinematic bicycle step in world coordinates, explicit Euler.
pub fn plane_step(state: PlaneState, steering_deg: f64, v: f64, dt: f64) -> PlaneState {
    let delta = steering_deg.to_radians();
    PlaneState {
        x: state.x + v * state.heading.cos() * dt,
        y: state.y + v * state.heading.sin() * dt,
        heading: state.heading + v * delta.tan() / WHEELBASE_M * dt,
    }
}

/// World pose of the ego vehicle implied by its track-frame state.
pub fn ego_pose(track: &Track, state: &SimState) -> (f64, f64, f64) {
    let c = track.pose_at(state.s);
    let (x, y) = track.offset_point(state.s, state.d);
    (x, y, c.heading + state.psi)
}

/// Pure-pursuit steering toward the centerline point `lookahead` metres ahead
/// by arc length, in degrees, clamped to the steering limit.
pub fn expert_steering(track: &Track, state: &SimState, lookahead: f64) -> f64 {
    pursue_offset(track, state, lookahead, 0.0)
}

/// The dataset-generation teacher: pure pursuit plus a lateral sidestep while
/// a slower car blocks the lane ahead.
pub fn expert_policy_steering(track: &Track, state: &SimState, lookahead: f64) -> f64 {
    pursue_offset(track, state, lookahead, expert_target_offset(state))
}

/// Lateral target offset the expert is currently pursuing (0 on an open road).
pub fn expert_target_offset(state: &SimState) -> f64 {
    let blocking = state.cars.iter().any(|c| {
        let gap = c.s - state.s;
        c.speed < state.v
            && gap > -OVERTAKE_CLEAR_M
            && gap < OVERTAKE_ENGAGE_M
            && c.lane_offset.abs() < VEHICLE_WIDTH_M
    });
    if blocking {
        OVERTAKE_OFFSET_M
    } else {
        0.0
    }
}

/// World point the expert steers toward.
pub fn expert_target_point(track: &Track, state: &SimState, lookahead: f64) -> (f64, f64) {
    track.offset_point(state.s + lookahead, expert_target_offset(state))
}

fn pursue_offset(track: &Track, state: &SimState, lookahead: f64, offset: f64) -> f64 {
    debug_assert!(lookahead > 0.0);
    let (tx, ty) = track.offset_point(state.s + lookahead, offset);
    let (ex, ey, heading) = ego_pose(track, state);
    let dx = tx - ex;
    let dy = ty - ey;
    let alpha = dy.atan2(dx) - heading;
    let steering = (2.0 * WHEELBASE_M * alpha.sin() / lookahead).atan();
    steering.to_degrees().clamp(-MAX_STEER_DEG, MAX_STEER_DEG)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::track::{mirror_track, Segment, Track, TrackSpec};

    fn straight(length: f64) -> Track {
        Track::new(TrackSpec {
            seed: 0,
            segments: vec![Segment::Straight { length }],
            lane_width: 4.0,
        })
    }

    fn arc(radius: f64, angle: f64) -> Track {
        Track::new(TrackSpec {
            seed: 0,
            segments: vec![Segment::Arc { radius, angle }],
            lane_width: 4.0,
        })
    }

    #[test]
    fn expert_zero_on_centered_straight() {
        let t = straight(200.0);
        let s = SimState::centered(50.0);
        assert_eq!(expert_steering(&t, &s, 10.0), 0.0);
    }

    #[test]
    fn expert_steady_state_on_arc() {
        let t = arc(25.0, 2.0);
        let s = SimState::centered(10.0);
        let deg = expert_steering(&t, &s, 10.0);
        let expected = (WHEELBASE_M / 25.0).atan().to_degrees();
        assert!((deg - expected).abs() < 0.3, "got {deg}, expected ~{expected}");
    }

    #[test]
    fn mirrored_arc_negates_steering() {
        let left = arc(30.0, 1.5);
        let right = Track::new(mirror_track(&left.spec));
        let s = SimState::centered(12.0);
        let a = expert_steering(&left, &s, 10.0);
        let b = expert_steering(&right, &s, 10.0);
        assert!((a + b).abs() < 1e-9);
    }

    #[test]
    fn straight_step_advances_s_only() {
        let t = straight(100.0);
        let s0 = SimState::centered(10.0);
        let s1 = step_vehicle(&t, &s0, 0.0, 0.05);
        assert_eq!(s1.d, 0.0);
        assert_eq!(s1.psi, 0.0);
        assert!((s1.s - (10.0 + 10.0 * 0.05)).abs() < 1e-12);
    }

    #[test]
    fn negated_steering_mirrors_trajectory_on_straight() {
        let t = straight(300.0);
        let mut a = SimState::centered(5.0);
        let mut b = SimState::centered(5.0);
        for _ in 0..100 {
            a = step_vehicle(&t, &a, 7.5, 0.05);
            b = step_vehicle(&t, &b, -7.5, 0.05);
            assert!((a.d + b.d).abs() < 1e-12);
            assert!((a.psi + b.psi).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_closure_on_open_plane() {
        let radius = 25.0;
        let steering = (WHEELBASE_M / radius).atan().to_degrees();
        let (v, dt) = (10.0, 0.005);
        let mut p = PlaneState {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let steps = (2.0 * std::f64::consts::PI * radius / (v * dt)).round() as usize;
        for _ in 0..steps {
            p = plane_step(p, steering, v, dt);
        }
        let err = (p.x * p.x + p.y * p.y).sqrt();
        assert!(err < 0.01 * radius, "closure error {err}");
    }

    #[test]
    fn obstacle_cars_advance_with_own_speed() {
        let t = straight(500.0);
        let mut s = SimState::centered(0.0);
        s.cars.push(ObstacleCar {
            lane_offset: 0.0,
            s: 100.0,
            speed: 5.0,
        });
        let s1 = step_vehicle(&t, &s, 0.0, 0.05);
        assert!((s1.cars[0].s - 100.25).abs() < 1e-12);
    }

    #[test]
    fn expert_sidesteps_blocking_car() {
        let t = straight(500.0);
        let mut s = SimState::centered(100.0);
        s.cars.push(ObstacleCar {
            lane_offset: 0.0,
            s: 115.0,
            speed: 5.0,
        });
        assert!(expert_target_offset(&s) > 0.0);
        // steering pulls left toward the offset lane
        assert!(expert_policy_steering(&t, &s, 10.0) > 0.5);
        // once well past the car, back to the centerline target
        s.cars[0].s = 80.0;
        assert_eq!(expert_target_offset(&s), 0.0);
    }
}
