//! Deterministic synthetic-scene generator: circular gel membranes with
//! moving worm-like blobs, rendered to PGM frames with exact per-frame
//! ground truth. Used as the pipeline's test oracle and benchmark source.
//!
//! All randomness comes from a splitmix64 counter-based PRNG so output is
//! bit-reproducible across platforms for a given (config, seed).

use std::collections::VecDeque;

use thiserror::Error;

use crate::imageio::Frame;
use crate::membrane::Circle;
use crate::tracker::{compute_velocities, Track};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("worm (length {length} px) too large for membrane radius {radius} px")]
    WormTooLarge { length: f64, radius: f64 },
    #[error("mismatched frame ranges: tracks reach frame {track_frame}, truth ends at {truth_frame}")]
    MismatchedFrames { track_frame: usize, truth_frame: usize },
    #[error("malformed ground-truth CSV at line {line}: {message}")]
    MalformedTruth { line: usize, message: String },
}

/// splitmix64: standard finalizer-based generator.
///
/// Reference sequence for seed 0:
/// 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    gaussian_spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 {
            state: seed,
            gaussian_spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.gaussian_spare.take() {
            return v;
        }
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.gaussian_spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct MembraneSpec {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub rim_darkness: f64,
    pub interior_brightness: f64,
}

impl Default for MembraneSpec {
    fn default() -> Self {
        MembraneSpec {
            cx: 128.0,
            cy: 128.0,
            r: 85.0,
            rim_darkness: 60.0,
            interior_brightness: 200.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub membranes: Vec<MembraneSpec>,
    pub worms_per_membrane: usize,
    pub worm_length_px: f64,
    pub worm_width_px: f64,
    pub worm_darkness: f64,
    pub speed_px_per_frame: f64,
    /// Heading random-walk std, radians per frame.
    pub heading_noise_std: f64,
    pub undulation_amp_px: f64,
    pub undulation_period_frames: f64,
    pub background_base: f64,
    pub illumination_gradient_per_px: f64,
    /// Additive Gaussian pixel noise std, clamped to [0, 255].
    pub noise_std: f64,
    pub rim_thickness_px: f64,
    pub seed: u64,
    pub fps: f64,
    pub frame_count: usize,
    /// Scripted spawns, consumed in worm-spawn order (membrane-major).
    /// Worms beyond the list spawn at seeded random positions.
    pub spawn_overrides: Vec<SpawnSpec>,
}

/// Fixed spawn position and heading for one worm, for scripted scenes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SpawnSpec {
    pub x: f64,
    pub y: f64,
    pub heading_rad: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 512,
            height: 512,
            membranes: vec![
                MembraneSpec { cx: 128.0, cy: 128.0, ..MembraneSpec::default() },
                MembraneSpec { cx: 384.0, cy: 128.0, ..MembraneSpec::default() },
                MembraneSpec { cx: 128.0, cy: 384.0, ..MembraneSpec::default() },
                MembraneSpec { cx: 384.0, cy: 384.0, ..MembraneSpec::default() },
            ],
            worms_per_membrane: 1,
            worm_length_px: 50.0,
            worm_width_px: 4.0,
            worm_darkness: 40.0,
            speed_px_per_frame: 2.0,
            heading_noise_std: 0.15,
            undulation_amp_px: 2.5,
            undulation_period_frames: 30.0,
            background_base: 150.0,
            illumination_gradient_per_px: 0.02,
            noise_std: 2.0,
            rim_thickness_px: 4.0,
            seed: 42,
            fps: 10.0,
            frame_count: 100,
            spawn_overrides: Vec::new(),
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.width < 16 || self.height < 16 {
            return Err(SynthError::InvalidConfig("frame must be at least 16x16".into()));
        }
        if self.frame_count < 1 {
            return Err(SynthError::InvalidConfig("frameCount must be >= 1".into()));
        }
        if !(self.fps > 0.0) {
            return Err(SynthError::InvalidConfig("fps must be > 0".into()));
        }
        if self.worm_length_px <= 0.0 || self.worm_width_px <= 0.0 {
            return Err(SynthError::InvalidConfig("worm dimensions must be > 0".into()));
        }
        for m in &self.membranes {
            if m.r <= 0.0 {
                return Err(SynthError::InvalidConfig("membrane radius must be > 0".into()));
            }
            if self.worms_per_membrane > 0
                && m.r - self.wall_margin() < self.worm_length_px + 5.0 {
                    return Err(SynthError::WormTooLarge {
                        length: self.worm_length_px,
                        radius: m.r,
                    });
                }
        }
        Ok(())
    }

    /// Distance kept between worm heads and the membrane wall, sized so
    /// no rendered worm pixel (spine offset by undulation, stroke
    /// half-width, anti-aliased fringe) ever touches the rim band.
    fn wall_margin(&self) -> f64 {
        self.worm_width_px / 2.0 + self.undulation_amp_px + 6.0
    }

    /// Minimum turning radius used when steering away from the wall.
    fn turn_radius(&self) -> f64 {
        self.speed_px_per_frame / WALL_TURN_RAD_PER_FRAME
    }
}

/// Per-frame heading change applied while steering a worm away from the
/// wall. The resulting turning radius keeps the two legs of a U-turn
/// farther apart than the body's lateral extent, so the rendered body
/// never folds onto itself (an instantaneous reflection would).
const WALL_TURN_RAD_PER_FRAME: f64 = 0.3;

/// Exact per-frame truth for one worm.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub frame_index: usize,
    pub worm_id: u32,
    pub membrane_id: u32,
    pub x: f64,
    pub y: f64,
    /// fps * centroid displacement from the previous frame; 0 at frame 0.
    pub speed_px_s: f64,
    /// True while this worm's body overlaps another worm's body.
    pub merged: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub circles: Vec<Circle>,
    pub records: Vec<TruthRecord>,
}

impl GroundTruth {
    pub fn max_frame(&self) -> Option<usize> {
        self.records.iter().map(|r| r.frame_index).max()
    }

    /// CSV: `frame_index,worm_id,membrane_id,x_px,y_px,speed_px_s,merged`.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("frame_index,worm_id,membrane_id,x_px,y_px,speed_px_s,merged\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{}\n",
                r.frame_index,
                r.worm_id,
                r.membrane_id,
                r.x,
                r.y,
                r.speed_px_s,
                if r.merged { 1 } else { 0 }
            ));
        }
        out
    }

    /// CSV: `cx,cy,r`.
    pub fn circles_csv(&self) -> String {
        let mut out = String::from("cx,cy,r\n");
        for c in &self.circles {
            out.push_str(&format!("{:.4},{:.4},{:.4}\n", c.cx, c.cy, c.r));
        }
        out
    }

    pub fn parse_records_csv(text: &str) -> Result<GroundTruth, SynthError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(SynthError::MalformedTruth {
                    line: i + 1,
                    message: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let parse_err = |message: String| SynthError::MalformedTruth { line: i + 1, message };
            records.push(TruthRecord {
                frame_index: fields[0].parse().map_err(|e| parse_err(format!("frame_index: {e}")))?,
                worm_id: fields[1].parse().map_err(|e| parse_err(format!("worm_id: {e}")))?,
                membrane_id: fields[2].parse().map_err(|e| parse_err(format!("membrane_id: {e}")))?,
                x: fields[3].parse().map_err(|e| parse_err(format!("x_px: {e}")))?,
                y: fields[4].parse().map_err(|e| parse_err(format!("y_px: {e}")))?,
                speed_px_s: fields[5].parse().map_err(|e| parse_err(format!("speed_px_s: {e}")))?,
                merged: fields[6].trim() == "1",
            });
        }
        Ok(GroundTruth { circles: Vec::new(), records })
    }
}

const BODY_SAMPLES: usize = 13;

#[derive(Debug, Clone)]
struct WormState {
    id: u32,
    membrane_id: u32,
    heading: f64,
    /// Most-recent-first head positions.
    trail: VecDeque<(f64, f64)>,
    prev_centroid: Option<(f64, f64)>,
    phase: f64,
}

impl WormState {
    /// Sample body points at equal arc offsets behind the head along the
    /// trail, with sinusoidal lateral undulation.
    fn body_points(&self, length: f64, amp: f64) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(BODY_SAMPLES);
        let wave_len = length / 1.5;
        for k in 0..BODY_SAMPLES {
            let s = length * k as f64 / (BODY_SAMPLES - 1) as f64;
            let (p, tangent) = self.point_at_arc(s);
            let normal = (-tangent.1, tangent.0);
            // Taper the undulation to zero at head and tail.
            let taper = (std::f64::consts::PI * k as f64 / (BODY_SAMPLES - 1) as f64).sin();
            let lateral = amp * taper * (std::f64::consts::TAU * s / wave_len + self.phase).sin();
            pts.push((p.0 + lateral * normal.0, p.1 + lateral * normal.1));
        }
        pts
    }

    /// Position and unit tangent at arc distance `s` behind the head.
    fn point_at_arc(&self, s: f64) -> ((f64, f64), (f64, f64)) {
        let mut remaining = s;
        for w in 0..self.trail.len().saturating_sub(1) {
            let a = self.trail[w];
            let b = self.trail[w + 1];
            let seg = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            if seg < 1e-12 {
                continue;
            }
            if remaining <= seg {
                let t = remaining / seg;
                let tangent = ((a.0 - b.0) / seg, (a.1 - b.1) / seg);
                return ((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t), tangent);
            }
            remaining -= seg;
        }
        // Trail shorter than the body: extend straight past the last point.
        let n = self.trail.len();
        if n >= 2 {
            let a = self.trail[n - 2];
            let b = self.trail[n - 1];
            let seg = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt().max(1e-12);
            let dir = ((b.0 - a.0) / seg, (b.1 - a.1) / seg);
            return (
                (b.0 + dir.0 * remaining, b.1 + dir.1 * remaining),
                (-dir.0, -dir.1),
            );
        }
        let head = self.trail[0];
        let dir = (self.heading.cos(), self.heading.sin());
        (
            (head.0 - dir.0 * s, head.1 - dir.1 * s),
            dir,
        )
    }
}

/// Streaming scene generator: `next_frame` advances worm state, renders
/// one frame, and appends its truth records.
pub struct Scene {
    cfg: SceneConfig,
    rng: SplitMix64,
    worms: Vec<WormState>,
    static_background: Vec<f64>,
    truth: GroundTruth,
    frame_index: usize,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Result<Scene, SynthError> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed);
        let margin = cfg.wall_margin();
        let mut worms = Vec::new();
        let mut worm_id = 0u32;
        for (mi, m) in cfg.membranes.iter().enumerate() {
            for _ in 0..cfg.worms_per_membrane {
                let (head, heading) = match cfg.spawn_overrides.get(worm_id as usize) {
                    Some(s) => ((s.x, s.y), s.heading_rad),
                    None => {
                        let spawn_r = (m.r - margin - cfg.worm_length_px).max(0.0);
                        let angle = rng.next_f64() * std::f64::consts::TAU;
                        let rad = spawn_r * rng.next_f64().sqrt();
                        (
                            (m.cx + rad * angle.cos(), m.cy + rad * angle.sin()),
                            rng.next_f64() * std::f64::consts::TAU,
                        )
                    }
                };
                // Straight initial trail behind the head.
                let dir = (heading.cos(), heading.sin());
                let step = cfg.speed_px_per_frame.max(1.0);
                let n_hist = (cfg.worm_length_px / step).ceil() as usize + 2;
                let mut trail = VecDeque::with_capacity(n_hist);
                for i in 0..n_hist {
                    trail.push_back((head.0 - dir.0 * step * i as f64, head.1 - dir.1 * step * i as f64));
                }
                worms.push(WormState {
                    id: worm_id,
                    membrane_id: mi as u32,
                    heading,
                    trail,
                    prev_centroid: None,
                    phase: rng.next_f64() * std::f64::consts::TAU,
                });
                worm_id += 1;
            }
        }

        let static_background = render_static(&cfg);
        let circles = cfg
            .membranes
            .iter()
            .map(|m| Circle { cx: m.cx, cy: m.cy, r: m.r })
            .collect();
        Ok(Scene {
            cfg,
            rng,
            worms,
            static_background,
            truth: GroundTruth { circles, records: Vec::new() },
            frame_index: 0,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn into_truth(self) -> GroundTruth {
        self.truth
    }

    /// Advance worm state by one frame (frame 0 keeps spawn positions).
    fn update_worms(&mut self) {
        if self.frame_index == 0 {
            return;
        }
        let cfg = &self.cfg;
        for worm in self.worms.iter_mut() {
            let m = &cfg.membranes[worm.membrane_id as usize];
            if cfg.heading_noise_std > 0.0 {
                worm.heading += self.rng.next_gaussian() * cfg.heading_noise_std;
            }
            let head = worm.trail[0];
            let limit = m.r - cfg.wall_margin();
            let dist = |p: (f64, f64)| ((p.0 - m.cx).powi(2) + (p.1 - m.cy).powi(2)).sqrt();
            // Steer toward the center with bounded per-frame curvature
            // whenever the head is close to the wall and still moving
            // outward. The trigger zone is deep enough (turn radius plus
            // one step) that the turn completes before the head crosses
            // the limit.
            let outward = (head.0 - m.cx) * worm.heading.cos() + (head.1 - m.cy) * worm.heading.sin()
                > 0.0;
            if outward && dist(head) > limit - cfg.turn_radius() - cfg.speed_px_per_frame {
                let to_center = (m.cy - head.1).atan2(m.cx - head.0);
                let mut delta = (to_center - worm.heading) % std::f64::consts::TAU;
                if delta > std::f64::consts::PI {
                    delta -= std::f64::consts::TAU;
                } else if delta < -std::f64::consts::PI {
                    delta += std::f64::consts::TAU;
                }
                worm.heading += delta.clamp(-WALL_TURN_RAD_PER_FRAME, WALL_TURN_RAD_PER_FRAME);
            }
            let dir = (worm.heading.cos(), worm.heading.sin());
            let mut new_head = (
                head.0 + dir.0 * cfg.speed_px_per_frame,
                head.1 + dir.1 * cfg.speed_px_per_frame,
            );
            // Safety net for noise-driven overshoot: project radially back
            // inside the limit.
            let nd = dist(new_head);
            if nd > limit {
                let s = limit / nd;
                new_head = (m.cx + (new_head.0 - m.cx) * s, m.cy + (new_head.1 - m.cy) * s);
            }
            worm.trail.push_front(new_head);
            // Keep enough history for the body plus slack.
            let step = cfg.speed_px_per_frame.max(1e-6);
            let keep = ((cfg.worm_length_px / step).ceil() as usize + 4).max(4);
            while worm.trail.len() > keep {
                worm.trail.pop_back();
            }
            worm.phase += std::f64::consts::TAU / cfg.undulation_period_frames.max(1.0);
        }
    }

    /// Render the next frame, or None when frameCount is reached.
    pub fn next_frame(&mut self) -> Option<Frame> {
        if self.frame_index >= self.cfg.frame_count {
            return None;
        }
        self.update_worms();
        let cfg = &self.cfg;
        let (w, h) = (cfg.width, cfg.height);
        let mut buf = self.static_background.clone();

        // Body geometry for every worm, then truth + merged flags.
        let bodies: Vec<Vec<(f64, f64)>> = self
            .worms
            .iter()
            .map(|worm| worm.body_points(cfg.worm_length_px, cfg.undulation_amp_px))
            .collect();
        let half_w = cfg.worm_width_px / 2.0;
        let mut merged = vec![false; self.worms.len()];
        for i in 0..self.worms.len() {
            for j in i + 1..self.worms.len() {
                if self.worms[i].membrane_id != self.worms[j].membrane_id {
                    continue;
                }
                let touching = bodies[i].iter().any(|a| {
                    bodies[j]
                        .iter()
                        .any(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() < cfg.worm_width_px + 1.0)
                });
                if touching {
                    merged[i] = true;
                    merged[j] = true;
                }
            }
        }

        for (wi, body) in bodies.iter().enumerate() {
            stamp_worm(&mut buf, w, h, body, half_w, cfg.worm_darkness);
            // Truth centroid: center of the body's bounding box, matching
            // the pipeline's bbox-center centroid definition.
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for &(x, y) in body {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let centroid = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let worm = &mut self.worms[wi];
            let speed = match worm.prev_centroid {
                Some(prev) => {
                    ((centroid.0 - prev.0).powi(2) + (centroid.1 - prev.1).powi(2)).sqrt() * cfg.fps
                }
                None => 0.0,
            };
            worm.prev_centroid = Some(centroid);
            self.truth.records.push(TruthRecord {
                frame_index: self.frame_index,
                worm_id: worm.id,
                membrane_id: worm.membrane_id,
                x: centroid.0,
                y: centroid.1,
                speed_px_s: speed,
                merged: merged[wi],
            });
        }

        if cfg.noise_std > 0.0 {
            for v in buf.iter_mut() {
                *v += self.rng.next_gaussian() * cfg.noise_std;
            }
        }
        let pixels: Vec<u8> = buf.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        let mut frame = Frame::new(w, h, pixels).expect("scene dimensions are valid");
        frame.index = self.frame_index;
        frame.timestamp_s = self.frame_index as f64 / cfg.fps;
        self.frame_index += 1;
        Some(frame)
    }
}

/// Background + anti-aliased membrane rims + interiors, without worms.
fn render_static(cfg: &SceneConfig) -> Vec<f64> {
    let (w, h) = (cfg.width, cfg.height);
    let mut buf = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = cfg.illumination_gradient_per_px * x as f64;
            let mut v = cfg.background_base + g;
            for m in &cfg.membranes {
                let d = ((x as f64 - m.cx).powi(2) + (y as f64 - m.cy).powi(2)).sqrt();
                let half = cfg.rim_thickness_px / 2.0;
                if d > m.r + half + 1.0 {
                    continue;
                }
                // Rim band centered on the true radius; the difference
                // between the two disc coverages is the band.
                let outer = (m.r + half + 0.5 - d).clamp(0.0, 1.0);
                let inner = (m.r - half + 0.5 - d).clamp(0.0, 1.0);
                let interior = m.interior_brightness + g;
                v = v * (1.0 - outer) + m.rim_darkness * (outer - inner) + interior * inner;
            }
            buf[y * w + x] = v;
        }
    }
    buf
}

/// Stroke a polyline body with coverage-weighted anti-aliasing.
fn stamp_worm(
    buf: &mut [f64],
    w: usize,
    h: usize,
    body: &[(f64, f64)],
    half_width: f64,
    darkness: f64,
) {
    let pad = half_width + 1.5;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in body {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let xs = ((x0 - pad).floor().max(0.0)) as usize;
    let ys = ((y0 - pad).floor().max(0.0)) as usize;
    let xe = ((x1 + pad).ceil().min(w as f64 - 1.0)) as usize;
    let ye = ((y1 + pad).ceil().min(h as f64 - 1.0)) as usize;
    for y in ys..=ye {
        for x in xs..=xe {
            let p = (x as f64, y as f64);
            let mut dist = f64::MAX;
            for seg in body.windows(2) {
                dist = dist.min(point_segment_distance(p, seg[0], seg[1]));
            }
            let coverage = (half_width + 0.5 - dist).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let i = y * w + x;
                buf[i] = buf[i] * (1.0 - coverage) + darkness * coverage;
            }
        }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 < 1e-12 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Generate a whole scene in memory. For long runs prefer `Scene` and
/// stream the frames.
pub fn simulate(cfg: SceneConfig) -> Result<(Vec<Frame>, GroundTruth), SynthError> {
    let mut scene = Scene::new(cfg)?;
    let mut frames = Vec::new();
    while let Some(frame) = scene.next_frame() {
        frames.push(frame);
    }
    Ok((frames, scene.into_truth()))
}

/// Tracking-quality metrics against scene ground truth.
#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub recall: f64,
    pub precision: f64,
    pub id_switches: usize,
    pub rmse_px: f64,
    /// (worm id, relative error of the matched track's mean velocity).
    pub per_worm_velocity_rel_err: Vec<(u32, f64)>,
    pub matched: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

impl EvalMetrics {
    pub fn mean_velocity_rel_err(&self) -> f64 {
        if self.per_worm_velocity_rel_err.is_empty() {
            return 0.0;
        }
        self.per_worm_velocity_rel_err.iter().map(|(_, e)| e).sum::<f64>()
            / self.per_worm_velocity_rel_err.len() as f64
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("recall,{:.6}\n", self.recall));
        out.push_str(&format!("precision,{:.6}\n", self.precision));
        out.push_str(&format!("id_switches,{}\n", self.id_switches));
        out.push_str(&format!("rmse_px,{:.6}\n", self.rmse_px));
        out.push_str(&format!("mean_velocity_rel_err,{:.6}\n", self.mean_velocity_rel_err()));
        out.push_str(&format!("matched,{}\n", self.matched));
        out.push_str(&format!("false_negatives,{}\n", self.false_negatives));
        out.push_str(&format!("false_positives,{}\n", self.false_positives));
        out
    }
}

/// Match track points to truth centroids frame by frame (greedy nearest
/// within `match_radius_px`) and score recall, precision, id switches,
/// centroid RMSE, and per-worm mean-velocity error.
///
/// Truth records flagged `merged` are ignored on both sides of the
/// recall count: the tracker terminates paths during merges by design.
pub fn evaluate(
    tracks: &[Track],
    truth: &GroundTruth,
    match_radius_px: f64,
    fps: f64,
) -> Result<EvalMetrics, SynthError> {
    let truth_max = truth.max_frame().unwrap_or(0);
    let track_max = tracks
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.frame_index))
        .max()
        .unwrap_or(0);
    if track_max > truth_max {
        return Err(SynthError::MismatchedFrames {
            track_frame: track_max,
            truth_frame: truth_max,
        });
    }

    // Index truth and track points by frame.
    let mut truth_by_frame: Vec<Vec<&TruthRecord>> = vec![Vec::new(); truth_max + 1];
    for r in &truth.records {
        truth_by_frame[r.frame_index].push(r);
    }
    let mut points_by_frame: Vec<Vec<(u64, f64, f64)>> = vec![Vec::new(); truth_max + 1];
    for t in tracks {
        for p in &t.points {
            points_by_frame[p.frame_index].push((t.id, p.x, p.y));
        }
    }

    let mut matched = 0usize;
    let mut false_negatives = 0usize;
    let mut false_positives = 0usize;
    let mut sq_err = 0.0f64;
    let mut id_switches = 0usize;
    let mut last_assigned: std::collections::HashMap<u32, u64> = std::collections::HashMap::new();
    let mut match_count: std::collections::HashMap<(u32, u64), usize> =
        std::collections::HashMap::new();

    for frame in 0..=truth_max {
        let truths = &truth_by_frame[frame];
        let points = &points_by_frame[frame];
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in truths.iter().enumerate() {
            for (pi, &(_, x, y)) in points.iter().enumerate() {
                let d = ((t.x - x).powi(2) + (t.y - y).powi(2)).sqrt();
                if d <= match_radius_px {
                    pairs.push((d, ti, pi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut t_used = vec![false; truths.len()];
        let mut p_used = vec![false; points.len()];
        for (d, ti, pi) in pairs {
            if t_used[ti] || p_used[pi] {
                continue;
            }
            t_used[ti] = true;
            p_used[pi] = true;
            matched += 1;
            sq_err += d * d;
            let worm = truths[ti].worm_id;
            let track_id = points[pi].0;
            *match_count.entry((worm, track_id)).or_insert(0) += 1;
            if let Some(&prev) = last_assigned.get(&worm) {
                if prev != track_id {
                    id_switches += 1;
                }
            }
            last_assigned.insert(worm, track_id);
        }
        for (ti, t) in truths.iter().enumerate() {
            if !t_used[ti] && !t.merged {
                false_negatives += 1;
            }
        }
        false_positives += p_used.iter().filter(|&&u| !u).count();
    }

    let recall = if matched + false_negatives > 0 {
        matched as f64 / (matched + false_negatives) as f64
    } else {
        1.0
    };
    let precision = if matched + false_positives > 0 {
        matched as f64 / (matched + false_positives) as f64
    } else {
        1.0
    };
    let rmse_px = if matched > 0 { (sq_err / matched as f64).sqrt() } else { 0.0 };

    // Per-worm velocity error: compare the dominant matched track's mean
    // velocity to the truth mean speed (frames >= 1, unmerged).
    let mut worm_ids: Vec<u32> = truth.records.iter().map(|r| r.worm_id).collect();
    worm_ids.sort_unstable();
    worm_ids.dedup();
    let mut per_worm_velocity_rel_err = Vec::new();
    for worm in worm_ids {
        let truth_speeds: Vec<f64> = truth
            .records
            .iter()
            .filter(|r| r.worm_id == worm && r.frame_index > 0 && !r.merged)
            .map(|r| r.speed_px_s)
            .collect();
        if truth_speeds.is_empty() {
            continue;
        }
        let truth_mean = truth_speeds.iter().sum::<f64>() / truth_speeds.len() as f64;
        let best_track = match_count
            .iter()
            .filter(|((w, _), _)| *w == worm)
            .max_by_key(|((_, tid), &n)| (n, u64::MAX - *tid))
            .map(|((_, tid), _)| *tid);
        let Some(track_id) = best_track else { continue };
        let Some(track) = tracks.iter().find(|t| t.id == track_id) else { continue };
        if let Ok(v) = compute_velocities(track, fps, 1.0) {
            let err = if truth_mean > 0.0 {
                (v.mean_px_s - truth_mean).abs() / truth_mean
            } else {
                v.mean_px_s.abs()
            };
            per_worm_velocity_rel_err.push((worm, err));
        }
    }

    Ok(EvalMetrics {
        recall,
        precision,
        id_switches,
        rmse_px,
        per_worm_velocity_rel_err,
        matched,
        false_negatives,
        false_positives,
    })
}
