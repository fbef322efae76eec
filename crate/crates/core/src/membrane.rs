//! Circular membrane detection (Circular Hough Transform) and boundary
//! refinement (active contour), producing interior masks that restrict
//! all downstream worm search.
//!
//! Detection runs on a block-averaged downscale of the frame: candidate
//! pixels pass a gradient gate and vote full circles over the configured
//! radius range into a (cx, cy, r) accumulator. Peaks survive non-max
//! suppression, are scaled back to full resolution, and are then polished
//! by a local search that maximizes full-resolution gradient magnitude
//! along the circle.

use thiserror::Error;

use crate::imageio::Frame;
use crate::vision::{self, ImageF, Mask};

#[derive(Debug, Error)]
pub enum MembraneError {
    #[error("empty radius range: rMin {r_min} must be < rMax {r_max}")]
    EmptyRadiusRange { r_min: f64, r_max: f64 },
    #[error("frame too small after downscaling by {downscale}: {width}x{height}")]
    FrameTooSmall {
        downscale: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid CHT config: {0}")]
    InvalidChtConfig(String),
    #[error("init circle (cx {cx}, cy {cy}, r {r}) outside the frame")]
    InitOutsideFrame { cx: f64, cy: f64, r: f64 },
    #[error("invalid snake config: {0}")]
    InvalidSnakeConfig(String),
    #[error("degenerate contour: zero interior area")]
    DegenerateContour,
    #[error(transparent)]
    Vision(#[from] vision::VisionError),
}

/// Detected membrane region, full-resolution coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.r * self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedCircle {
    pub circle: Circle,
    pub votes: u32,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ChtConfig {
    /// Integer block-averaging factor applied before voting.
    pub downscale: usize,
    /// Candidate gate: keep pixels at or above this gradient-magnitude
    /// percentile (0.90 keeps the top 10%).
    pub grad_percentile: f64,
    /// Absolute gradient-magnitude floor for candidates (Sobel units);
    /// suppresses votes from sensor noise on featureless frames.
    pub min_grad_mag: f64,
    /// Radius search range at full resolution.
    pub r_min_px: f64,
    pub r_max_px: f64,
    /// Radius quantization at full resolution.
    pub r_step_px: f64,
    /// Accept accumulator peaks >= this fraction of the global max, after
    /// normalizing votes by each circle's circumference.
    pub peak_fraction: f64,
    /// Peaks additionally need votes >= this fraction of the voting
    /// circle's downscaled circumference.
    pub min_votes_frac: f64,
    /// Non-max-suppression center distance (full-resolution px);
    /// None defaults to rMinPx.
    pub min_center_sep_px: Option<f64>,
    /// Full-resolution local refinement of each accepted circle.
    pub refine: bool,
    /// Refined circles must be at least this much darker (smoothed
    /// intensity) along the circumference than 4 px to either side;
    /// rejects accidental vote peaks that lie on no dark rim. Only
    /// applied when `refine` is on.
    pub min_rim_contrast: f64,
}

impl Default for ChtConfig {
    fn default() -> Self {
        ChtConfig {
            downscale: 4,
            grad_percentile: 0.90,
            min_grad_mag: 40.0,
            r_min_px: 40.0,
            r_max_px: 100.0,
            r_step_px: 2.0,
            peak_fraction: 0.5,
            min_votes_frac: 0.6,
            min_center_sep_px: None,
            refine: true,
            min_rim_contrast: 10.0,
        }
    }
}

impl ChtConfig {
    fn validate(&self) -> Result<(), MembraneError> {
        if !(self.r_min_px > 0.0 && self.r_min_px < self.r_max_px) {
            return Err(MembraneError::EmptyRadiusRange {
                r_min: self.r_min_px,
                r_max: self.r_max_px,
            });
        }
        if self.downscale < 1 {
            return Err(MembraneError::InvalidChtConfig("downscale must be >= 1".into()));
        }
        if !(self.peak_fraction > 0.0 && self.peak_fraction <= 1.0) {
            return Err(MembraneError::InvalidChtConfig(format!(
                "peakFraction must be in (0, 1], got {}",
                self.peak_fraction
            )));
        }
        if !(self.r_step_px > 0.0) {
            return Err(MembraneError::InvalidChtConfig("rStepPx must be > 0".into()));
        }
        if self.r_max_px / (self.downscale as f64) < 2.0 {
            return Err(MembraneError::InvalidChtConfig(format!(
                "rMaxPx/downscale must be >= 2, got {}",
                self.r_max_px / self.downscale as f64
            )));
        }
        Ok(())
    }
}

/// Block-average downscale by an integer factor (truncating remainders).
fn downscale_frame(frame: &Frame, factor: usize) -> ImageF {
    let dsw = frame.width / factor;
    let dsh = frame.height / factor;
    let mut out = ImageF::zeros(dsw, dsh);
    let norm = 1.0 / (factor * factor) as f64;
    for by in 0..dsh {
        for bx in 0..dsw {
            let mut acc = 0.0;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    acc += frame.pixels[y * frame.width + x] as f64;
                }
            }
            out.set(bx, by, acc * norm);
        }
    }
    out
}

/// Circular Hough Transform over the configured radius range.
///
/// Returns detected circles sorted by vote count descending, scaled to
/// full-resolution coordinates.
pub fn detect_circles(frame: &Frame, cfg: &ChtConfig) -> Result<Vec<DetectedCircle>, MembraneError> {
    cfg.validate()?;
    let d = cfg.downscale;
    let ds = downscale_frame(frame, d);
    if ds.width < 3 || ds.height < 3 {
        return Err(MembraneError::FrameTooSmall {
            downscale: d,
            width: ds.width,
            height: ds.height,
        });
    }
    let grad = vision::sobel(&ds)?;

    // Candidate gate: top (1 - gradPercentile) fraction by magnitude,
    // with an absolute floor against noise.
    let mut sorted = grad.magnitude.clone();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let gate_idx = ((sorted.len() - 1) as f64 * cfg.grad_percentile).floor() as usize;
    let gate = sorted[gate_idx].max(cfg.min_grad_mag);
    let candidates: Vec<(usize, usize)> = (0..ds.height)
        .flat_map(|y| (0..ds.width).map(move |x| (x, y)))
        .filter(|&(x, y)| grad.magnitude[y * ds.width + x] >= gate)
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    // Full-resolution radii quantized by rStepPx.
    let mut radii = Vec::new();
    let mut r = cfg.r_min_px;
    while r <= cfg.r_max_px + 1e-9 {
        radii.push(r);
        r += cfg.r_step_px;
    }

    let (dsw, dsh) = (ds.width, ds.height);
    let mut accumulators: Vec<Vec<u32>> = vec![vec![0u32; dsw * dsh]; radii.len()];
    let mut cells: Vec<(i32, i32)> = Vec::new();
    for &(px, py) in &candidates {
        for (ri, &r_full) in radii.iter().enumerate() {
            let r_ds = r_full / d as f64;
            // Each candidate votes every cell the circle of radius r_ds
            // around it passes through, exactly once (order-independent).
            let samples = ((std::f64::consts::TAU * r_ds).ceil() as usize * 3).max(8);
            cells.clear();
            for s in 0..samples {
                let theta = std::f64::consts::TAU * s as f64 / samples as f64;
                let cx = (px as f64 + r_ds * theta.cos()).round() as i32;
                let cy = (py as f64 + r_ds * theta.sin()).round() as i32;
                if cx >= 0 && cy >= 0 && (cx as usize) < dsw && (cy as usize) < dsh {
                    cells.push((cx, cy));
                }
            }
            cells.sort_unstable();
            cells.dedup();
            let acc = &mut accumulators[ri];
            for &(cx, cy) in &cells {
                acc[cy as usize * dsw + cx as usize] += 1;
            }
        }
    }

    // For each center cell, the best radius is the raw-vote argmax: raw
    // counts are the right comparison within one circle. Across circles,
    // votes are normalized to the downscaled circumference so small and
    // large radii compete on support fraction rather than raw counts
    // (a perfect small circle collects fewer votes than a perfect large
    // one).
    let score_of = |votes: u32, ri: usize| votes as f64 / (std::f64::consts::TAU * radii[ri] / d as f64);
    let mut per_center: Vec<(u32, usize, usize, usize)> = Vec::new(); // (votes, ri, cx, cy)
    for cy in 0..dsh {
        for cx in 0..dsw {
            let mut best: Option<(u32, usize)> = None;
            for (ri, acc) in accumulators.iter().enumerate() {
                let v = acc[cy * dsw + cx];
                if v > 0 && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, ri));
                }
            }
            if let Some((v, ri)) = best {
                per_center.push((v, ri, cx, cy));
            }
        }
    }
    let max_score = per_center
        .iter()
        .map(|&(v, ri, _, _)| score_of(v, ri))
        .fold(0.0f64, f64::max);
    if max_score <= 0.0 {
        return Ok(Vec::new());
    }

    // Peak candidates above both the relative and absolute thresholds.
    let peaks: Vec<(u32, usize, usize, usize)> = per_center
        .into_iter()
        .filter(|&(v, ri, _, _)| {
            let s = score_of(v, ri);
            s >= cfg.peak_fraction * max_score && s >= cfg.min_votes_frac
        })
        .collect();
    let mut peaks = peaks;
    peaks.sort_unstable_by(|a, b| {
        score_of(b.0, b.1)
            .partial_cmp(&score_of(a.0, a.1))
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.3.cmp(&b.3))
            .then(a.2.cmp(&b.2))
    });

    // Greedy non-max suppression by full-resolution center distance.
    let min_sep = cfg.min_center_sep_px.unwrap_or(cfg.r_min_px);
    let mut accepted: Vec<(u32, usize, usize, usize)> = Vec::new();
    'peaks: for p in peaks {
        for a in &accepted {
            let dx = (p.2 as f64 - a.2 as f64) * d as f64;
            let dy = (p.3 as f64 - a.3 as f64) * d as f64;
            if (dx * dx + dy * dy).sqrt() < min_sep {
                continue 'peaks;
            }
        }
        accepted.push(p);
    }

    // Sub-bin refinement: vote-weighted centroid over the 3x3 center
    // neighborhood, parabolic interpolation across adjacent radius bins.
    // The polish pass needs a lightly smoothed full-resolution intensity
    // image: membrane rims are dark bands, and minimizing blurred
    // intensity along the circle finds the band centerline without
    // preferring the inner or outer edge.
    let smoothed = if cfg.refine {
        Some(vision::gaussian_blur(&ImageF::from_frame(frame), 2.0)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for (votes, ri, cx, cy) in accepted {
        let acc = &accumulators[ri];
        let mut wsum = 0.0;
        let mut xsum = 0.0;
        let mut ysum = 0.0;
        for ny in cy.saturating_sub(1)..=(cy + 1).min(dsh - 1) {
            for nx in cx.saturating_sub(1)..=(cx + 1).min(dsw - 1) {
                let w = acc[ny * dsw + nx] as f64;
                wsum += w;
                xsum += w * nx as f64;
                ysum += w * ny as f64;
            }
        }
        let (rcx, rcy) = if wsum > 0.0 {
            (xsum / wsum, ysum / wsum)
        } else {
            (cx as f64, cy as f64)
        };
        let v0 = acc[cy * dsw + cx] as f64;
        let vm = if ri > 0 { accumulators[ri - 1][cy * dsw + cx] as f64 } else { v0 };
        let vp = if ri + 1 < radii.len() { accumulators[ri + 1][cy * dsw + cx] as f64 } else { v0 };
        let denom = vm - 2.0 * v0 + vp;
        let dr = if denom < -1e-12 { (0.5 * (vm - vp) / denom).clamp(-0.5, 0.5) } else { 0.0 };

        // Scale to full resolution: downscaled cell (i, j) covers full-res
        // pixel block centered at (i + 0.5) * d - 0.5.
        let mut circle = Circle {
            cx: (rcx + 0.5) * d as f64 - 0.5,
            cy: (rcy + 0.5) * d as f64 - 0.5,
            r: radii[ri] + dr * cfg.r_step_px,
        };
        if let Some(img) = &smoothed {
            circle = polish_circle(img, circle, cfg);
            // Rim-darkness verification: at most angles the circumference
            // must be darker than both flanking bands, or the peak was a
            // vote coincidence (e.g. a worm arc plus a nearby rim arc).
            if rim_contrast_median(img, &circle) < cfg.min_rim_contrast {
                continue;
            }
        }
        // Detected circle must lie inside the frame (2 px tolerance).
        let tol = 2.0;
        if circle.cx - circle.r < -tol
            || circle.cy - circle.r < -tol
            || circle.cx + circle.r > frame.width as f64 - 1.0 + tol
            || circle.cy + circle.r > frame.height as f64 - 1.0 + tol
        {
            continue;
        }
        out.push(DetectedCircle { circle, votes });
    }
    out.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.circle.cy.partial_cmp(&b.circle.cy).unwrap())
            .then(a.circle.cx.partial_cmp(&b.circle.cx).unwrap())
    });
    Ok(out)
}

/// Median over circle angles of how much darker the circumference is
/// than the bands 4 px inside and outside it. A genuine rim is darker
/// than both flanks almost everywhere; a coincidental vote peak is not.
fn rim_contrast_median(smoothed: &ImageF, c: &Circle) -> f64 {
    const SAMPLES: usize = 72;
    let r_in = (c.r - 4.0).max(1.0);
    let r_out = c.r + 4.0;
    let mut diffs = [0.0f64; SAMPLES];
    for (s, diff) in diffs.iter_mut().enumerate() {
        let theta = std::f64::consts::TAU * s as f64 / SAMPLES as f64;
        let (cos, sin) = (theta.cos(), theta.sin());
        let on = smoothed.sample_bilinear(c.cx + c.r * cos, c.cy + c.r * sin);
        let inner = smoothed.sample_bilinear(c.cx + r_in * cos, c.cy + r_in * sin);
        let outer = smoothed.sample_bilinear(c.cx + r_out * cos, c.cy + r_out * sin);
        *diff = inner.min(outer) - on;
    }
    diffs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    (diffs[SAMPLES / 2 - 1] + diffs[SAMPLES / 2]) / 2.0
}

/// Mean darkness (negated intensity) sampled along the circle.
fn circle_edge_score(smoothed: &ImageF, c: &Circle) -> f64 {
    const SAMPLES: usize = 72;
    let mut acc = 0.0;
    for s in 0..SAMPLES {
        let theta = std::f64::consts::TAU * s as f64 / SAMPLES as f64;
        acc += smoothed.sample_bilinear(c.cx + c.r * theta.cos(), c.cy + c.r * theta.sin());
    }
    -acc / SAMPLES as f64
}

/// Local grid search at full resolution around a coarse circle, finding
/// the dark rim centerline. Two passes: coarse (1 px / 0.5 px) then fine
/// (0.25 px).
fn polish_circle(smoothed: &ImageF, coarse: Circle, cfg: &ChtConfig) -> Circle {
    let d = cfg.downscale as f64;
    let mut best = coarse;
    let mut best_score = circle_edge_score(smoothed, &coarse);
    let passes: [(f64, f64, f64, f64); 2] = [
        (d, 1.0, cfg.r_step_px + d / 2.0 + 1.0, 0.5),
        (1.0, 0.25, 1.0, 0.25),
    ];
    for (c_range, c_step, r_range, r_step) in passes {
        let center = best;
        let mut dy = -c_range;
        while dy <= c_range + 1e-9 {
            let mut dx = -c_range;
            while dx <= c_range + 1e-9 {
                let mut dr = -r_range;
                while dr <= r_range + 1e-9 {
                    let cand = Circle {
                        cx: center.cx + dx,
                        cy: center.cy + dy,
                        r: center.r + dr,
                    };
                    if cand.r >= 2.0 && cand.r >= cfg.r_min_px && cand.r <= cfg.r_max_px {
                        let score = circle_edge_score(smoothed, &cand);
                        if score > best_score {
                            best_score = score;
                            best = cand;
                        }
                    }
                    dr += r_step;
                }
                dx += c_step;
            }
            dy += c_step;
        }
    }
    best
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SnakeConfig {
    pub n_points: usize,
    /// Elasticity weight (second-difference internal force).
    pub alpha: f64,
    /// Rigidity weight (fourth-difference internal force).
    pub beta: f64,
    /// External-force weight on the edge-map gradient.
    pub gamma: f64,
    pub step_size: f64,
    /// Gaussian sigma for the edge map.
    pub edge_sigma: f64,
    pub max_iters: usize,
    /// Convergence threshold: max point displacement per iteration (px).
    pub epsilon: f64,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        SnakeConfig {
            n_points: 128,
            alpha: 0.05,
            beta: 0.02,
            gamma: 4.0,
            step_size: 1.0,
            edge_sigma: 2.0,
            max_iters: 400,
            epsilon: 0.1,
        }
    }
}

impl SnakeConfig {
    fn validate(&self) -> Result<(), MembraneError> {
        if self.n_points < 16 {
            return Err(MembraneError::InvalidSnakeConfig(format!(
                "nPoints must be >= 16, got {}",
                self.n_points
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 || self.step_size <= 0.0 {
            return Err(MembraneError::InvalidSnakeConfig(
                "weights must be >= 0 and stepSize > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Closed contour of ordered (x, y) points, counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<(f64, f64)>,
    pub converged: bool,
    pub iterations: usize,
}

/// Dense LU factorization with partial pivoting, used to invert the
/// (I + step * A) system matrix of the semi-implicit snake update.
struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl LuFactors {
    fn factor(mut m: Vec<f64>, n: usize) -> LuFactors {
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut max = m[k * n + k].abs();
            for i in k + 1..n {
                let v = m[i * n + k].abs();
                if v > max {
                    max = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    m.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let pivot = m[k * n + k];
            for i in k + 1..n {
                let f = m[i * n + k] / pivot;
                m[i * n + k] = f;
                for j in k + 1..n {
                    m[i * n + j] -= f * m[k * n + j];
                }
            }
        }
        LuFactors { n, lu: m, piv }
    }

    fn solve(&self, b: &[f64], out: &mut Vec<f64>) {
        let n = self.n;
        out.clear();
        out.extend(self.piv.iter().map(|&p| b[p]));
        for i in 1..n {
            for j in 0..i {
                out[i] -= self.lu[i * n + j] * out[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                out[i] -= self.lu[i * n + j] * out[j];
            }
            out[i] /= self.lu[i * n + i];
        }
    }
}

/// Active contour refinement of a coarse circle.
///
/// External energy is the gradient-magnitude map of the Gaussian-smoothed
/// frame, normalized to [0, 1]; the external force is its gradient
/// (pointing toward edges), sampled bilinearly. Internal forces use the
/// discrete second (elasticity) and fourth (rigidity) differences with a
/// semi-implicit update, which keeps the iteration stable at useful step
/// sizes.
pub fn refine_contour(
    frame: &Frame,
    init: &Circle,
    cfg: &SnakeConfig,
) -> Result<Contour, MembraneError> {
    cfg.validate()?;
    let (w, h) = (frame.width as f64, frame.height as f64);
    if init.r <= 0.0
        || init.cx - init.r < -2.0
        || init.cy - init.r < -2.0
        || init.cx + init.r > w + 1.0
        || init.cy + init.r > h + 1.0
    {
        return Err(MembraneError::InitOutsideFrame {
            cx: init.cx,
            cy: init.cy,
            r: init.r,
        });
    }

    // Edge map E = |grad(G_sigma * I)| normalized to [0, 1].
    let blurred = vision::gaussian_blur(&ImageF::from_frame(frame), cfg.edge_sigma)?;
    let mut edge = vision::sobel(&blurred)?.magnitude_image();
    let max = edge.data.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in edge.data.iter_mut() {
            *v /= max;
        }
    }
    // External force field: gradient of the edge map (central differences).
    let mut fx = ImageF::zeros(edge.width, edge.height);
    let mut fy = ImageF::zeros(edge.width, edge.height);
    for y in 0..edge.height as isize {
        for x in 0..edge.width as isize {
            fx.set(
                x as usize,
                y as usize,
                (edge.get_clamped(x + 1, y) - edge.get_clamped(x - 1, y)) / 2.0,
            );
            fy.set(
                x as usize,
                y as usize,
                (edge.get_clamped(x, y + 1) - edge.get_clamped(x, y - 1)) / 2.0,
            );
        }
    }

    let n = cfg.n_points;
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    let mut ys: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let theta = std::f64::consts::TAU * i as f64 / n as f64;
        xs.push(init.cx + init.r * theta.cos());
        ys.push(init.cy + init.r * theta.sin());
    }

    // System matrix M = I + step * A, with A the circulant internal-force
    // operator: alpha second difference + beta fourth difference.
    let mut m = vec![0.0f64; n * n];
    let a = cfg.alpha;
    let b = cfg.beta;
    let row = [
        b,
        -a - 4.0 * b,
        2.0 * a + 6.0 * b,
        -a - 4.0 * b,
        b,
    ];
    for i in 0..n {
        for (k, &v) in row.iter().enumerate() {
            let j = (i + n + k - 2) % n;
            m[i * n + j] += cfg.step_size * v;
        }
        m[i * n + i] += 1.0;
    }
    let lu = LuFactors::factor(m, n);

    let mut rhs_x = vec![0.0f64; n];
    let mut rhs_y = vec![0.0f64; n];
    let mut new_x = Vec::with_capacity(n);
    let mut new_y = Vec::with_capacity(n);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        for i in 0..n {
            rhs_x[i] = xs[i] + cfg.step_size * cfg.gamma * fx.sample_bilinear(xs[i], ys[i]);
            rhs_y[i] = ys[i] + cfg.step_size * cfg.gamma * fy.sample_bilinear(xs[i], ys[i]);
        }
        lu.solve(&rhs_x, &mut new_x);
        lu.solve(&rhs_y, &mut new_y);
        let mut max_disp: f64 = 0.0;
        for i in 0..n {
            let nx = new_x[i].clamp(0.0, w - 1.0);
            let ny = new_y[i].clamp(0.0, h - 1.0);
            let d = ((nx - xs[i]).powi(2) + (ny - ys[i]).powi(2)).sqrt();
            max_disp = max_disp.max(d);
            xs[i] = nx;
            ys[i] = ny;
        }
        if max_disp < cfg.epsilon {
            converged = true;
            break;
        }
    }

    Ok(Contour {
        points: xs.into_iter().zip(ys).collect(),
        converged,
        iterations,
    })
}

/// Scanline even-odd fill of the contour interior.
///
/// A pixel (x, y) is foreground iff the count of contour/scanline
/// intersections strictly left of x is odd — identical to per-pixel
/// ray-cast parity.
pub fn contour_mask(contour: &Contour, width: usize, height: usize) -> Result<Mask, MembraneError> {
    let pts = &contour.points;
    if pts.len() < 3 {
        return Err(MembraneError::DegenerateContour);
    }
    let mut mask = Mask::filled(width, height, false);
    let mut crossings: Vec<f64> = Vec::new();
    let mut any = false;
    for y in 0..height {
        let yf = y as f64;
        crossings.clear();
        for i in 0..pts.len() {
            let (x1, y1) = pts[i];
            let (x2, y2) = pts[(i + 1) % pts.len()];
            if (y1 > yf) != (y2 > yf) {
                crossings.push(x1 + (yf - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            let start = (pair[0].floor() as isize + 1).max(0);
            let end = (pair[1].floor() as isize).min(width as isize - 1);
            for x in start..=end {
                mask.set(x as usize, y, true);
                any = true;
            }
        }
    }
    if !any {
        return Err(MembraneError::DegenerateContour);
    }
    Ok(mask)
}

/// Interior mask of a circle shrunk by `shrink_px`, the fallback when
/// contour refinement is disabled. Shrinking keeps the dark rim itself
/// out of the worm-search region.
pub fn circle_mask(circle: &Circle, width: usize, height: usize, shrink_px: f64) -> Mask {
    let mut mask = Mask::filled(width, height, false);
    let r = (circle.r - shrink_px).max(0.0);
    let r2 = r * r;
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - circle.cx, y as f64 - circle.cy);
            if dx * dx + dy * dy <= r2 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// CSV block for detected circles: `cx,cy,r,votes` with a header row.
pub fn circles_csv(circles: &[DetectedCircle]) -> String {
    let mut out = String::from("cx,cy,r,votes\n");
    for c in circles {
        out.push_str(&format!(
            "{:.3},{:.3},{:.3},{}\n",
            c.circle.cx, c.circle.cy, c.circle.r, c.votes
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Frame;

    /// Anti-aliased dark annulus: rim band of the given thickness
    /// centered on radius r.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn ring_frame(
        w: usize,
        h: usize,
        cx: f64,
        cy: f64,
        r: f64,
        thickness: f64,
        bg: f64,
        rim: f64,
    ) -> Frame {
        let mut pixels = vec![0u8; w * h];
        let half = thickness / 2.0;
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                // Coverage of the band r +/- half, anti-aliased over 1 px.
                let outer = (r + half + 0.5 - d).clamp(0.0, 1.0);
                let inner = (d - (r - half) + 0.5).clamp(0.0, 1.0);
                let c = outer.min(inner);
                let v = bg * (1.0 - c) + rim * c;
                pixels[y * w + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Frame::new(w, h, pixels).unwrap()
    }

    #[test]
    fn detects_single_ring() {
        let frame = ring_frame(256, 256, 100.0, 100.0, 50.0, 4.0, 200.0, 60.0);
        let cfg = ChtConfig {
            r_min_px: 40.0,
            r_max_px: 70.0,
            ..ChtConfig::default()
        };
        let found = detect_circles(&frame, &cfg).unwrap();
        assert_eq!(found.len(), 1, "expected one circle, got {found:?}");
        let c = found[0].circle;
        let center_err = ((c.cx - 100.0).powi(2) + (c.cy - 100.0).powi(2)).sqrt();
        assert!(center_err <= 2.0, "center error {center_err} > 2 px ({c:?})");
        assert!((c.r - 50.0).abs() / 50.0 <= 0.03, "radius error > 3% ({c:?})");
    }

    #[test]
    fn constant_frame_yields_nothing() {
        let frame = Frame::filled(256, 256, 180).unwrap();
        let cfg = ChtConfig {
            r_min_px: 40.0,
            r_max_px: 60.0,
            ..ChtConfig::default()
        };
        assert!(detect_circles(&frame, &cfg).unwrap().is_empty());
    }

    #[test]
    fn four_disjoint_rings() {
        let mut frame = Frame::filled(512, 512, 200).unwrap();
        let centers = [(128.0, 128.0), (384.0, 128.0), (128.0, 384.0), (384.0, 384.0)];
        for &(cx, cy) in &centers {
            let ring = ring_frame(512, 512, cx, cy, 80.0, 4.0, 200.0, 60.0);
            for (dst, src) in frame.pixels.iter_mut().zip(&ring.pixels) {
                *dst = (*dst).min(*src);
            }
        }
        let cfg = ChtConfig {
            r_min_px: 60.0,
            r_max_px: 100.0,
            ..ChtConfig::default()
        };
        let found = detect_circles(&frame, &cfg).unwrap();
        assert_eq!(found.len(), 4, "{found:?}");
        for &(cx, cy) in &centers {
            assert!(found.iter().any(|f| {
                ((f.circle.cx - cx).powi(2) + (f.circle.cy - cy).powi(2)).sqrt() <= 2.0
            }));
        }
    }

    #[test]
    fn rejects_empty_radius_range() {
        let frame = Frame::filled(64, 64, 0).unwrap();
        let cfg = ChtConfig {
            r_min_px: 50.0,
            r_max_px: 40.0,
            ..ChtConfig::default()
        };
        assert!(matches!(
            detect_circles(&frame, &cfg),
            Err(MembraneError::EmptyRadiusRange { .. })
        ));
    }

    #[test]
    fn snake_shrinks_on_uniform_image() {
        let frame = Frame::filled(128, 128, 128).unwrap();
        let init = Circle { cx: 64.0, cy: 64.0, r: 40.0 };
        let cfg = SnakeConfig {
            max_iters: 50,
            epsilon: 0.0,
            ..SnakeConfig::default()
        };
        let contour = refine_contour(&frame, &init, &cfg).unwrap();
        // Mean radius decreased monotonically toward the centroid.
        let mean_r: f64 = contour
            .points
            .iter()
            .map(|&(x, y)| ((x - 64.0).powi(2) + (y - 64.0).powi(2)).sqrt())
            .sum::<f64>()
            / contour.points.len() as f64;
        assert!(mean_r < 40.0, "mean radius {mean_r} did not shrink");
        assert_eq!(contour.points.len(), cfg.n_points);
    }

    #[test]
    fn snake_rejects_outside_init() {
        let frame = Frame::filled(64, 64, 128).unwrap();
        let init = Circle { cx: 60.0, cy: 60.0, r: 30.0 };
        assert!(matches!(
            refine_contour(&frame, &init, &SnakeConfig::default()),
            Err(MembraneError::InitOutsideFrame { .. })
        ));
    }

    #[test]
    fn snake_balanced_forces_converges_immediately() {
        // Zero internal weights and a contour on the edge-map crest of an
        // ideal ring: the external force at the crest is ~0, so the first
        // iteration already moves less than epsilon.
        let frame = ring_frame(256, 256, 128.0, 128.0, 60.0, 6.0, 200.0, 40.0);
        let cfg = SnakeConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.5,
            epsilon: 0.1,
            ..SnakeConfig::default()
        };
        let init = Circle { cx: 128.0, cy: 128.0, r: 60.0 };
        let contour = refine_contour(&frame, &init, &cfg).unwrap();
        assert!(contour.converged);
        assert_eq!(contour.iterations, 1, "expected immediate convergence");
    }

    #[test]
    fn contour_mask_square() {
        let contour = Contour {
            points: vec![(3.0, 3.0), (13.0, 3.0), (13.0, 13.0), (3.0, 13.0)],
            converged: true,
            iterations: 0,
        };
        let mask = contour_mask(&contour, 20, 20).unwrap();
        assert_eq!(mask.count(), 100);
    }

    #[test]
    fn contour_mask_circle_area() {
        let n = 64;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                (32.0 + 20.0 * t.cos(), 32.0 + 20.0 * t.sin())
            })
            .collect();
        let contour = Contour { points, converged: true, iterations: 0 };
        let mask = contour_mask(&contour, 64, 64).unwrap();
        let expected = std::f64::consts::PI * 400.0;
        let got = mask.count() as f64;
        assert!((got - expected).abs() / expected < 0.03, "area {got} vs {expected}");
    }

    #[test]
    fn contour_mask_degenerate() {
        let contour = Contour {
            points: vec![(5.0, 5.0), (5.0, 5.0), (5.0, 5.0)],
            converged: true,
            iterations: 0,
        };
        assert!(matches!(
            contour_mask(&contour, 10, 10),
            Err(MembraneError::DegenerateContour)
        ));
    }
}
