use super::track::Track;
use super::vehicle::{ego_pose, SimState, VEHICLE_WIDTH_M};

pub const FRAME_W: usize = 200;
pub const FRAME_H: usize = 66;
pub const HORIZON_ROW: usize = 20;

const CAM_HEIGHT_M: f64 = 1.2;
const FOCAL_PX: f64 = 120.0;
const CX: f64 = (FRAME_W as f64 - 1.0) / 2.0;
const SKY: f64 = 0.7;
const GROUND: f64 = 0.5;
const LINE: f64 = 1.0;
const CAR: f64 = 0.15;
const CAR_HEIGHT_M: f64 = 1.5;
const NEAR_CLIP_M: f64 = 0.5;

/// One grayscale driver-view frame, row-major, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * FRAME_W + col]
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(bytes: &[u8]) -> Self {
        Frame {
            pixels: bytes.iter().map(|b| *b as f64 / 255.0).collect(),
        }
    }
}

/// Project a world point at height `z` into pixel coordinates (u, v).
/// Returns None when the point is behind the near clip plane.
pub fn project_point(
    track: &Track,
    state: &SimState,
    world: (f64, f64),
    z: f64,
) -> Option<(f64, f64)> {
    let (ex, ey, heading) = ego_pose(track, state);
    let dx = world.0 - ex;
    let dy = world.1 - ey;
    let forward = heading.cos() * dx + heading.sin() * dy;
    let left = -heading.sin() * dx + heading.cos() * dy;
    if forward < NEAR_CLIP_M {
        return None;
    }
    let u = CX - FOCAL_PX * left / forward;
    let v = HORIZON_ROW as f64 + FOCAL_PX * (CAM_HEIGHT_M - z) / forward;
    Some((u, v))
}

/// Deterministic perspective view: gray ground, bright anti-aliased lane
/// boundary lines, obstacle cars as dark rectangles, horizon at a fixed row.
pub fn render_driver_view(track: &Track, state: &SimState) -> Frame {
    let mut pixels = vec![GROUND; FRAME_W * FRAME_H];
    for row in 0..=HORIZON_ROW.min(FRAME_H - 1) {
        pixels[row * FRAME_W..(row + 1) * FRAME_W]
            .iter_mut()
            .for_each(|p| *p = SKY);
    }

    // lane boundary polylines, accumulated into a coverage buffer so segment
    // joints do not double-brighten
    let mut coverage = vec![0.0; FRAME_W * FRAME_H];
    let half = track.lane_width() / 2.0;
    for side in [-half, half] {
        let mut prev: Option<(f64, f64)> = None;
        let mut s = state.s - 5.0;
        while s <= state.s + 80.0 {
            let p = project_point(track, state, track.offset_point(s, side), 0.0);
            if let (Some(a), Some(b)) = (prev, p) {
                stroke_segment(&mut coverage, a, b);
            }
            prev = p;
            s += 1.0;
        }
    }
    for (px, cov) in pixels.iter_mut().zip(coverage.iter()) {
        *px += (LINE - *px) * cov;
    }

    // cars far-to-near so near cars occlude
    let mut order: Vec<usize> = (0..state.cars.len()).collect();
    order.sort_by(|a, b| {
        let da = state.cars[*b].s.partial_cmp(&state.cars[*a].s).unwrap();
        da.then(a.cmp(b))
    });
    for i in order {
        let car = &state.cars[i];
        let center = track.offset_point(car.s, car.lane_offset);
        let bottom = match project_point(track, state, center, 0.0) {
            Some(p) => p,
            None => continue,
        };
        let top = match project_point(track, state, center, CAR_HEIGHT_M) {
            Some(p) => p,
            None => continue,
        };
        // forward distance recovered from the ground-row projection
        let forward = FOCAL_PX * CAM_HEIGHT_M / (bottom.1 - HORIZON_ROW as f64);
        let half_w = FOCAL_PX * (VEHICLE_WIDTH_M / 2.0) / forward;
        fill_rect(&mut pixels, bottom.0 - half_w, top.1, bottom.0 + half_w, bottom.1);
    }

    Frame { pixels }
}

/// Anti-aliased 2-px-wide segment into a coverage buffer (max-composited).
fn stroke_segment(coverage: &mut [f64], a: (f64, f64), b: (f64, f64)) {
    const HALF_WIDTH: f64 = 1.0;
    let min_u = (a.0.min(b.0) - HALF_WIDTH - 1.0).floor().max(0.0) as usize;
    let max_u = (a.0.max(b.0) + HALF_WIDTH + 1.0).ceil().min(FRAME_W as f64 - 1.0) as usize;
    let min_v = (a.1.min(b.1) - HALF_WIDTH - 1.0).floor().max(0.0) as usize;
    let max_v = (a.1.max(b.1) + HALF_WIDTH + 1.0).ceil().min(FRAME_H as f64 - 1.0) as usize;
    if min_u > max_u || min_v > max_v {
        return;
    }
    let seg = (b.0 - a.0, b.1 - a.1);
    let len2 = seg.0 * seg.0 + seg.1 * seg.1;
    for v in min_v..=max_v {
        for u in min_u..=max_u {
            let p = (u as f64 - a.0, v as f64 - a.1);
            let t = if len2 > 0.0 {
                ((p.0 * seg.0 + p.1 * seg.1) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let du = p.0 - t * seg.0;
            let dv = p.1 - t * seg.1;
            let dist = (du * du + dv * dv).sqrt();
            let cov = (HALF_WIDTH + 0.5 - dist).clamp(0.0, 1.0);
            let cell = &mut coverage[v * FRAME_W + u];
            if cov > *cell {
                *cell = cov;
            }
        }
    }
}

/// Dark filled rectangle with fractional-coverage edges.
fn fill_rect(pixels: &mut [f64], u0: f64, v0: f64, u1: f64, v1: f64) {
    let cmin = (u0 - 1.0).floor().max(0.0) as usize;
    let cmax = (u1 + 1.0).ceil().min(FRAME_W as f64 - 1.0) as usize;
    let rmin = (v0 - 1.0).floor().max(0.0) as usize;
    let rmax = (v1 + 1.0).ceil().min(FRAME_H as f64 - 1.0) as usize;
    if cmin > cmax || rmin > rmax {
        return;
    }
    for r in rmin..=rmax {
        let row_cov = overlap(r as f64 - 0.5, r as f64 + 0.5, v0, v1);
        if row_cov <= 0.0 {
            continue;
        }
        for c in cmin..=cmax {
            let col_cov = overlap(c as f64 - 0.5, c as f64 + 0.5, u0, u1);
            if col_cov <= 0.0 {
                continue;
            }
            let px = &mut pixels[r * FRAME_W + c];
            *px += (CAR - *px) * row_cov * col_cov;
        }
    }
}

fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).clamp(0.0, 1.0)
}
