//! Procedural 2D driving world: track generation, kinematic bicycle vehicle,
//! pure-pursuit expert, perspective frame renderer, synthetic gaze oracle,
//! infraction detection and closed-loop episode metrics.

mod episode;
mod render;
mod track;
mod vehicle;

pub use episode::{
    closed_loop_metrics, detect_infraction, gaze_oracle, run_episode, write_trace_jsonl,
    ClosedLoopMetrics, EpisodeError, EpisodeResult, ExpertPolicy, GazeSource, Infraction, Policy,
    PolicyContext, Scenario, TraceStep, CAR_ATTENTION_M, GAZE_NOISE_SIGMA_PX, GAZE_SIGMA_PX,
    OVERTAKE_ATTEMPT_M,
};
pub use render::{project_point, render_driver_view, Frame, FRAME_H, FRAME_W, HORIZON_ROW};
pub use track::{
    generate_track, mirror_track, Pose, Segment, Track, TrackGenParams, TrackSpec,
    DEFAULT_LANE_WIDTH_M, MAX_ARC_RADIUS_M, MIN_ARC_RADIUS_M,
};
pub use vehicle::{
    ego_pose, expert_policy_steering, expert_steering, expert_target_offset, expert_target_point,
    plane_step, step_vehicle, ObstacleCar, PlaneState, SimState, DEFAULT_DT_S,
    DEFAULT_LOOKAHEAD_M, DEFAULT_SPEED_MPS, MAX_STEER_DEG, OVERTAKE_CLEAR_M, OVERTAKE_ENGAGE_M,
    OVERTAKE_OFFSET_M, VEHICLE_LENGTH_M, VEHICLE_WIDTH_M, WHEELBASE_M,
};
