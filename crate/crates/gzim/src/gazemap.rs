//! Fixation-to-heatmap rendering, the central-blob baseline, resizing,
//! keep-probability masks for gaze-modulated dropout, and the two similarity
//! metrics used to score gaze predictions (KL divergence and Pearson CC).

use std::io::Write;

/// Smoothing constant inside the KL sum, standard saliency-benchmark practice.
pub const KL_EPSILON: f64 = 1e-8;

/// Default base keep probability for zero-gaze regions.
pub const DEFAULT_P_BASE: f64 = 0.25;

/// A point where gaze rests: continuous pixel coordinates plus a weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

impl Fixation {
    pub fn new(x: f64, y: f64) -> Self {
        Fixation { x, y, weight: 1.0 }
    }
}

/// Nonnegative heatmap over image coordinates, normalized to unit sum.
/// Row-major: `values[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Per-location keep probabilities in [p_base, 1], monotone in the source map.
#[derive(Debug, Clone, PartialEq)]
pub struct KeepMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GazeMapError {
    #[error("degenerate gaze map: all values are zero")]
    DegenerateMap,
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("zero-variance map: correlation undefined")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GazeMapError>;

impl GazeMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        GazeMap {
            width,
            height,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// (x, y) of the largest value, first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Binary PGM (P5, maxval 255) with values scaled by 255/max.
    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        let max = self.max();
        if max <= 0.0 {
            return Err(GazeMapError::DegenerateMap);
        }
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v / max * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Gaussian-splat fixations onto a grid and sum-normalize.
///
/// Fixations outside the frame are discarded; an empty (or fully discarded)
/// fixation list yields a uniform map.
pub fn render_gaze_map(fixations: &[Fixation], width: usize, height: usize, sigma: f64) -> GazeMap {
    assert!(width > 0 && height > 0 && sigma > 0.0);
    let inside: Vec<&Fixation> = fixations
        .iter()
        .filter(|f| f.x >= 0.0 && f.x < width as f64 && f.y >= 0.0 && f.y < height as f64)
        .collect();
    if inside.is_empty() {
        return GazeMap::uniform(width, height);
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut values = vec![0.0; width * height];
    for f in inside {
        for y in 0..height {
            let dy = y as f64 - f.y;
            let row = &mut values[y * width..(y + 1) * width];
            for (x, v) in row.iter_mut().enumerate() {
                let dx = x as f64 - f.x;
                *v += f.weight * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let map = GazeMap {
        width,
        height,
        values,
    };
    normalize_sum(&map).expect("gaussian splat of an in-frame fixation is nonzero")
}

/// Baseline: one Gaussian at the geometric image center.
pub fn central_blob(width: usize, height: usize, sigma: f64) -> GazeMap {
    let center = Fixation::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    render_gaze_map(&[center], width, height, sigma)
}

/// Scale values to unit sum. Errors on an all-zero map.
pub fn normalize_sum(map: &GazeMap) -> Result<GazeMap> {
    let s = map.sum();
    if s <= 0.0 {
        return Err(GazeMapError::DegenerateMap);
    }
    Ok(GazeMap {
        width: map.width,
        height: map.height,
        values: map.values.iter().map(|v| v / s).collect(),
    })
}

/// Bilinear resize, then renormalize to a distribution.
pub fn resize_map(map: &GazeMap, new_width: usize, new_height: usize) -> GazeMap {
    assert!(new_width > 0 && new_height > 0);
    let mut values = vec![0.0; new_width * new_height];
    for y in 0..new_height {
        let (y0, y1, fy) = lerp_coords(y, new_height, map.height);
        for x in 0..new_width {
            let (x0, x1, fx) = lerp_coords(x, new_width, map.width);
            let v00 = map.values[y0 * map.width + x0];
            let v01 = map.values[y0 * map.width + x1];
            let v10 = map.values[y1 * map.width + x0];
            let v11 = map.values[y1 * map.width + x1];
            values[y * new_width + x] = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
        }
    }
    normalize_sum(&GazeMap {
        width: new_width,
        height: new_height,
        values,
    })
    .expect("bilinear resize of a normalized map is nonzero")
}

fn lerp_coords(i: usize, dn: usize, sn: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * sn as f64 / dn as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
    let f = pos.floor();
    let lo = f as usize;
    (lo, (lo + 1).min(sn - 1), pos - f)
}

/// Derive the dropout keep-probability mask from a gaze map:
/// resize to the target resolution, peak-normalize, then map linearly so the
/// peak keeps with probability 1 and zero-gaze regions with `p_base`.
pub fn keep_prob_mask(
    gaze: &GazeMap,
    p_base: f64,
    target_width: usize,
    target_height: usize,
) -> Result<KeepMask> {
    if !(p_base > 0.0 && p_base <= 1.0) {
        return Err(GazeMapError::InvalidArgument(format!(
            "p_base must be in (0,1], got {p_base}"
        )));
    }
    if gaze.max() <= 0.0 {
        return Err(GazeMapError::DegenerateMap);
    }
    let resized = resize_map(gaze, target_width, target_height);
    let peak = resized.max();
    let values = resized
        .values
        .iter()
        .map(|v| p_base + (1.0 - p_base) * (v / peak))
        .collect();
    Ok(KeepMask {
        width: target_width,
        height: target_height,
        values,
    })
}

/// KL(truth || estimate) with epsilon smoothing on both terms.
pub fn kl_divergence(truth: &GazeMap, estimate: &GazeMap) -> Result<f64> {
    if truth.width != estimate.width || truth.height != estimate.height {
        return Err(GazeMapError::ShapeMismatch(
            truth.width,
            truth.height,
            estimate.width,
            estimate.height,
        ));
    }
    Ok(truth
        .values
        .iter()
        .zip(estimate.values.iter())
        .map(|(t, e)| t * ((t + KL_EPSILON) / (e + KL_EPSILON)).ln())
        .sum())
}

/// Pearson correlation over flattened values.
pub fn correlation_coefficient(a: &GazeMap, b: &GazeMap) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(GazeMapError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    let n = a.values.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(GazeMapError::ZeroVariance);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// One CSV line per fixation: `frame_index,x,y,weight`.
pub fn write_fixation_log(
    w: &mut impl Write,
    frames: impl IntoIterator<Item = (u64, Vec<Fixation>)>,
) -> Result<()> {
    for (frame_index, fixations) in frames {
        for f in fixations {
            writeln!(w, "{},{},{},{}", frame_index, f.x, f.y, f.weight)?;
        }
    }
    Ok(())
}
