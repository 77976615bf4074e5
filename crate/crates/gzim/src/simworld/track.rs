use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LANE_WIDTH_M: f64 = 4.0;
pub const MIN_ARC_RADIUS_M: f64 = 15.0;
pub const MAX_ARC_RADIUS_M: f64 = 80.0;

/// One centerline piece. Arc angles are signed, positive = left turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Straight { length: f64 },
    Arc { radius: f64, angle: f64 },
}

impl Segment {
    pub fn arc_length(&self) -> f64 {
        match self {
            Segment::Straight { length } => *length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, angle } => angle.signum() / radius,
        }
    }
}

/// Procedural track: an ordered segment list with G1-continuous centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub lane_width: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// TrackSpec plus precomputed cumulative geometry for fast arc-length queries.
#[derive(Debug, Clone)]
pub struct Track {
    pub spec: TrackSpec,
    /// world pose at the start of each segment
    starts: Vec<Pose>,
    /// cumulative arc length at the start of each segment
    cum_length: Vec<f64>,
    total: f64,
}

impl Track {
    pub fn new(spec: TrackSpec) -> Self {
        assert!(!spec.segments.is_empty(), "track needs at least one segment");
        let mut starts = Vec::with_capacity(spec.segments.len());
        let mut cum_length = Vec::with_capacity(spec.segments.len());
        let mut pose = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let mut acc = 0.0;
        for seg in &spec.segments {
            starts.push(pose);
            cum_length.push(acc);
            pose = advance(pose, seg, seg.arc_length());
            acc += seg.arc_length();
        }
        Track {
            spec,
            starts,
            cum_length,
            total: acc,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    pub fn lane_width(&self) -> f64 {
        self.spec.lane_width
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total);
        // segment counts are small; linear scan is fine
        let mut idx = self.cum_length.len() - 1;
        for i in 0..self.cum_length.len() {
            let end = self.cum_length[i] + self.spec.segments[i].arc_length();
            if s <= end {
                idx = i;
                break;
            }
        }
        (idx, s - self.cum_length[idx])
    }

    /// Centerline pose at arc length s (clamped to the track extent).
    pub fn pose_at(&self, s: f64) -> Pose {
        let (idx, u) = self.locate(s);
        advance(self.starts[idx], &self.spec.segments[idx], u)
    }

    /// Signed centerline curvature at arc length s.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (idx, _) = self.locate(s);
        self.spec.segments[idx].curvature()
    }

    /// World position of the point at arc length s, lateral offset d (+ left).
    pub fn offset_point(&self, s: f64, d: f64) -> (f64, f64) {
        let p = self.pose_at(s);
        (p.x - d * p.heading.sin(), p.y + d * p.heading.cos())
    }
}

fn advance(start: Pose, seg: &Segment, u: f64) -> Pose {
    match seg {
        Segment::Straight { .. } => Pose {
            x: start.x + u * start.heading.cos(),
            y: start.y + u * start.heading.sin(),
            heading: start.heading,
        },
        Segment::Arc { .. } => {
            let k = seg.curvature();
            let h = start.heading + k * u;
            Pose {
                x: start.x + (h.sin() - start.heading.sin()) / k,
                y: start.y - (h.cos() - start.heading.cos()) / k,
                heading: h,
            }
        }
    }
}

/// Generation knobs for [`generate_track`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackGenParams {
    pub n_segments: usize,
    pub radius_range: (f64, f64),
    pub angle_range: (f64, f64),
    pub straight_range: (f64, f64),
    pub lane_width: f64,
}

impl Default for TrackGenParams {
    fn default() -> Self {
        TrackGenParams {
            n_segments: 12,
            radius_range: (MIN_ARC_RADIUS_M, MAX_ARC_RADIUS_M),
            angle_range: (0.4, 1.2),
            straight_range: (30.0, 70.0),
            lane_width: DEFAULT_LANE_WIDTH_M,
        }
    }
}

/// Deterministic in `seed`: alternating straights and arcs with random
/// radii, angles and turn directions.
pub fn generate_track(seed: u64, params: &TrackGenParams) -> TrackSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(params.n_segments);
    for i in 0..params.n_segments.max(1) {
        if i % 2 == 0 {
            segments.push(Segment::Straight {
                length: rng.gen_range(params.straight_range.0..=params.straight_range.1),
            });
        } else {
            let radius = rng.gen_range(params.radius_range.0..=params.radius_range.1);
            let magnitude = rng.gen_range(params.angle_range.0..=params.angle_range.1);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            segments.push(Segment::Arc {
                radius,
                angle: sign * magnitude,
            });
        }
    }
    TrackSpec {
        seed,
        segments,
        lane_width: params.lane_width,
    }
}

/// Negate every arc angle; the mirror image of a track.
pub fn mirror_track(spec: &TrackSpec) -> TrackSpec {
    TrackSpec {
        seed: spec.seed,
        segments: spec
            .segments
            .iter()
            .map(|seg| match seg {
                Segment::Straight { length } => Segment::Straight { length: *length },
                Segment::Arc { radius, angle } => Segment::Arc {
                    radius: *radius,
                    angle: -angle,
                },
            })
            .collect(),
        lane_width: spec.lane_width,
    }
}
