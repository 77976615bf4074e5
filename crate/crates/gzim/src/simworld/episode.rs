use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gazemap::{central_blob, render_gaze_map, Fixation, GazeMap};

use super::render::{render_driver_view, project_point, Frame, FRAME_H, FRAME_W};
use super::track::{Track, TrackSpec};
use super::vehicle::{
    expert_target_point, step_vehicle, ObstacleCar, SimState, DEFAULT_DT_S,
    DEFAULT_LOOKAHEAD_M, DEFAULT_SPEED_MPS, VEHICLE_LENGTH_M, VEHICLE_WIDTH_M,
};

/// Default gaussian splat width for rendered gaze maps: frame_width / 16.
pub const GAZE_SIGMA_PX: f64 = FRAME_W as f64 / 16.0;
/// Default pixel noise on oracle fixations.
pub const GAZE_NOISE_SIGMA_PX: f64 = 3.0;
/// A car closer than this (ahead, in lane) attracts a fixation.
pub const CAR_ATTENTION_M: f64 = 30.0;
/// Overtake attempt registers when ego closes within this range of a slower car.
pub const OVERTAKE_ATTEMPT_M: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Infraction {
    None,
    LaneDeparture,
    Collision,
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("empty result list")]
    EmptyResults,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Synthetic gaze: the expert's lookahead point, plus the nearest blocking
/// car's image centroid when one is close ahead, with isotropic pixel noise.
pub fn gaze_oracle(
    track: &Track,
    state: &SimState,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<Fixation> {
    let mut fixations = Vec::with_capacity(2);
    let target = expert_target_point(track, state, DEFAULT_LOOKAHEAD_M);
    if let Some((u, v)) = project_point(track, state, target, 0.0) {
        fixations.push(Fixation::new(u, v));
    }
    let car = state
        .cars
        .iter()
        .filter(|c| {
            let gap = c.s - state.s;
            gap > 0.0 && gap < CAR_ATTENTION_M && c.lane_offset.abs() < track.lane_width() / 2.0
        })
        .min_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    if let Some(car) = car {
        let center = track.offset_point(car.s, car.lane_offset);
        let bottom = project_point(track, state, center, 0.0);
        let top = project_point(track, state, center, 1.5);
        if let (Some(b), Some(t)) = (bottom, top) {
            fixations.push(Fixation::new((b.0 + t.0) / 2.0, (b.1 + t.1) / 2.0));
        }
    }
    if noise_sigma > 0.0 {
        for f in fixations.iter_mut() {
            f.x += noise_sigma * standard_normal(rng);
            f.y += noise_sigma * standard_normal(rng);
        }
    }
    fixations
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller on open-interval uniforms
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Lane departure: vehicle edge beyond the lane boundary. Collision: ego
/// rectangle overlaps a car rectangle (takes precedence). Pure in the state;
/// edge-triggered reporting is the episode loop's job.
pub fn detect_infraction(track: &Track, state: &SimState) -> Infraction {
    for car in &state.cars {
        if (state.s - car.s).abs() < VEHICLE_LENGTH_M
            && (state.d - car.lane_offset).abs() < VEHICLE_WIDTH_M
        {
            return Infraction::Collision;
        }
    }
    if state.d.abs() > track.lane_width() / 2.0 + VEHICLE_WIDTH_M / 2.0 {
        return Infraction::LaneDeparture;
    }
    Infraction::None
}

/// How the policy's gaze map is produced each step.
pub enum GazeSource<'a> {
    /// Render the oracle fixations of the current step.
    Oracle,
    /// Run an image-to-heatmap predictor on the rendered frame.
    Predictor(&'a dyn Fn(&Frame) -> GazeMap),
    /// Static central Gaussian.
    CentralBlob,
    /// The policy does not consume gaze.
    NoneRequired,
}

/// Everything a steering policy may look at on one step.
pub struct PolicyContext<'a> {
    pub frame: &'a Frame,
    pub gaze: Option<&'a GazeMap>,
    pub track: &'a Track,
    pub state: &'a SimState,
}

pub trait Policy {
    fn steer(&self, ctx: &PolicyContext) -> f64;
}

/// The pure-pursuit teacher (with overtaking sidestep) as a closed-loop policy.
pub struct ExpertPolicy {
    pub lookahead: f64,
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        ExpertPolicy {
            lookahead: DEFAULT_LOOKAHEAD_M,
        }
    }
}

impl Policy for ExpertPolicy {
    fn steer(&self, ctx: &PolicyContext) -> f64 {
        super::vehicle::expert_policy_steering(ctx.track, ctx.state, self.lookahead)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub track: TrackSpec,
    pub cars: bool,
    pub duration_s: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn new(track: TrackSpec, cars: bool, duration_s: f64) -> Self {
        Scenario {
            track,
            cars,
            duration_s,
            dt: DEFAULT_DT_S,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub s: f64,
    pub d: f64,
    pub psi: f64,
    pub steering_deg: f64,
    pub infraction: Infraction,
    pub fixations: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeResult {
    pub distance_traveled_m: f64,
    pub lane_departures: usize,
    pub collisions: usize,
    pub overtake_attempts: usize,
    pub overtake_successes: usize,
    pub aborted: bool,
    pub trace: Vec<TraceStep>,
}

impl EpisodeResult {
    pub fn infractions(&self) -> usize {
        self.lane_departures + self.collisions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OvertakePhase {
    Idle,
    Engaged,
    Done,
}

/// Closed-loop rollout: render, gaze, steer, step, detect. Infractions trigger
/// the intervention reset (back to the centerline; past the car on collision)
/// and are counted once per violation episode.
pub fn run_episode(
    policy: &dyn Policy,
    scenario: &Scenario,
    gaze_source: GazeSource,
    seed: u64,
) -> EpisodeResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = Track::new(scenario.track.clone());
    let total = track.total_length();

    let mut state = SimState::centered(rng.gen_range(0.0..(0.3 * total).max(1.0)));
    state.v = DEFAULT_SPEED_MPS;
    if scenario.cars {
        // Traffic layout belongs to the course, not the trial: repeated runs
        // on one track meet the same cars, only the ego start varies.
        let mut cars_rng = ChaCha8Rng::seed_from_u64(scenario.track.seed ^ 0xca25_0b5e);
        let mut s = 60.0;
        while s < total - 60.0 {
            state.cars.push(ObstacleCar {
                lane_offset: 0.0,
                s: s + cars_rng.gen_range(0.0..20.0),
                speed: 5.0,
            });
            s += 90.0;
        }
        // Nudge the spawn point backwards until no car overlaps it.
        while state
            .cars
            .iter()
            .any(|c| (c.s - state.s).abs() < 15.0)
        {
            state.s = (state.s - 17.0).rem_euclid(total);
        }
    }
    let blob = central_blob(FRAME_W, FRAME_H, GAZE_SIGMA_PX);

    let mut result = EpisodeResult::default();
    let mut phases = vec![OvertakePhase::Idle; state.cars.len()];
    let mut in_violation = false;
    let steps = (scenario.duration_s / scenario.dt).round() as usize;

    for step in 0..steps {
        if state.s > total - 25.0 {
            break;
        }
        let frame = render_driver_view(&track, &state);
        let fixations = gaze_oracle(&track, &state, GAZE_NOISE_SIGMA_PX, &mut rng);
        let gaze = match &gaze_source {
            GazeSource::Oracle => Some(render_gaze_map(
                &fixations,
                FRAME_W,
                FRAME_H,
                GAZE_SIGMA_PX,
            )),
            GazeSource::Predictor(f) => Some(f(&frame)),
            GazeSource::CentralBlob => Some(blob.clone()),
            GazeSource::NoneRequired => None,
        };
        let steering = policy.steer(&PolicyContext {
            frame: &frame,
            gaze: gaze.as_ref(),
            track: &track,
            state: &state,
        });

        // overtake bookkeeping on the pre-step state
        for (car, phase) in state.cars.iter().zip(phases.iter_mut()) {
            if *phase == OvertakePhase::Idle {
                let gap = car.s - state.s;
                if car.speed < state.v && gap > 0.0 && gap < OVERTAKE_ATTEMPT_M {
                    *phase = OvertakePhase::Engaged;
                    result.overtake_attempts += 1;
                }
            }
        }

        state = step_vehicle(&track, &state, steering, scenario.dt);
        result.distance_traveled_m += state.v * scenario.dt;

        let infraction = detect_infraction(&track, &state);
        if infraction != Infraction::None && !in_violation {
            match infraction {
                Infraction::Collision => result.collisions += 1,
                Infraction::LaneDeparture => result.lane_departures += 1,
                Infraction::None => unreachable!(),
            }
            // any maneuver in progress has failed
            for phase in phases.iter_mut() {
                if *phase == OvertakePhase::Engaged {
                    *phase = OvertakePhase::Done;
                }
            }
            // intervention: back on the road, and past the car we hit
            state.d = 0.0;
            state.psi = 0.0;
            if infraction == Infraction::Collision {
                if let Some(car) = state
                    .cars
                    .iter()
                    .filter(|c| (c.s - state.s).abs() < VEHICLE_LENGTH_M * 2.0)
                    .min_by(|a, b| a.s.partial_cmp(&b.s).unwrap())
                {
                    state.s = car.s + VEHICLE_LENGTH_M * 2.0;
                }
            }
        }
        in_violation = detect_infraction(&track, &state) != Infraction::None;

        // successful pass: clear of the car with no infraction during the maneuver
        for (car, phase) in state.cars.iter().zip(phases.iter_mut()) {
            if *phase == OvertakePhase::Engaged && state.s > car.s + VEHICLE_LENGTH_M {
                *phase = OvertakePhase::Done;
                result.overtake_successes += 1;
            }
        }

        result.trace.push(TraceStep {
            step,
            s: state.s,
            d: state.d,
            psi: state.psi,
            steering_deg: steering,
            infraction,
            fixations: fixations.iter().map(|f| [f.x, f.y, f.weight]).collect(),
        });

        if state.d.abs() > 2.0 * track.lane_width() {
            result.aborted = true;
            break;
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMetrics {
    /// None when no overtake was ever attempted (reported as "N/A").
    pub overtake_success_rate: Option<f64>,
    pub mean_distance_between_infractions_km: f64,
}

/// Aggregate Table-3-style metrics over a batch of episodes.
pub fn closed_loop_metrics(results: &[EpisodeResult]) -> Result<ClosedLoopMetrics, EpisodeError> {
    if results.is_empty() {
        return Err(EpisodeError::EmptyResults);
    }
    let attempts: usize = results.iter().map(|r| r.overtake_attempts).sum();
    let successes: usize = results.iter().map(|r| r.overtake_successes).sum();
    let distance_m: f64 = results.iter().map(|r| r.distance_traveled_m).sum();
    let infractions: usize = results.iter().map(|r| r.infractions()).sum();
    Ok(ClosedLoopMetrics {
        overtake_success_rate: if attempts == 0 {
            None
        } else {
            Some(successes as f64 / attempts as f64)
        },
        mean_distance_between_infractions_km: distance_m / infractions.max(1) as f64 / 1000.0,
    })
}

/// JSON-lines trace export, one record per step.
pub fn write_trace_jsonl(w: &mut impl Write, result: &EpisodeResult) -> Result<(), EpisodeError> {
    for step in &result.trace {
        serde_json::to_writer(&mut *w, step).map_err(std::io::Error::other)?;
        writeln!(w)?;
    }
    Ok(())
}
