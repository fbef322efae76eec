//! Association of per-frame detections into per-worm tracks.
//!
//! Greedy nearest-neighbor association with a distance gate, restricted
//! to the same membrane. Oversized blobs trigger the occlusion rule:
//! the detection is discarded and every track whose last centroid lies
//! inside its bounding box is terminated; worms re-emerging after a
//! merge start fresh tracks.

use thiserror::Error;

use crate::segment::Detection;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("detections for frame {got} arrived out of order (last processed frame {last})")]
    OutOfOrderFrame { got: usize, last: usize },
    #[error("track {id} has fewer than 2 points; velocity undefined")]
    TrackTooShort { id: u64 },
    #[error("fps must be > 0, got {0}")]
    InvalidFps(f64),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Association gate: max centroid distance in px.
    pub max_assoc_dist_px: f64,
    /// Frames a track survives unmatched before termination.
    pub max_gap_frames: usize,
    /// Occlusion threshold: detections above this area are treated as
    /// merged worms.
    pub merge_area_px: usize,
    /// Apply the occlusion threshold to the bounding-box area instead of
    /// the blob pixel count.
    pub use_bbox_area: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            max_assoc_dist_px: 25.0,
            max_gap_frames: 5,
            merge_area_px: 300,
            use_bbox_area: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame_index: usize,
    pub x: f64,
    pub y: f64,
}

/// Time-ordered centroid sequence for one worm. Once terminated a track
/// never receives new points; re-emerging worms get new ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub membrane_id: u32,
    pub points: Vec<TrackPoint>,
    pub state: TrackState,
    pub gap_count: usize,
}

impl Track {
    pub fn last_point(&self) -> &TrackPoint {
        self.points.last().expect("tracks always hold >= 1 point")
    }

    pub fn path_length_px(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .sum()
    }
}

/// Per-step centroid velocities of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    pub px_per_s: Vec<f64>,
    pub um_per_s: Vec<f64>,
    pub mean_px_s: f64,
    pub mean_um_s: f64,
}

/// v_i = euclidean step distance * fps / frame gap, in px/s and um/s.
pub fn compute_velocities(
    track: &Track,
    fps: f64,
    um_per_pixel: f64,
) -> Result<VelocitySeries, TrackError> {
    if !(fps > 0.0) {
        return Err(TrackError::InvalidFps(fps));
    }
    if track.points.len() < 2 {
        return Err(TrackError::TrackTooShort { id: track.id });
    }
    let mut px_per_s = Vec::with_capacity(track.points.len() - 1);
    for w in track.points.windows(2) {
        let dist = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
        let gap = (w[1].frame_index - w[0].frame_index) as f64;
        px_per_s.push(dist * fps / gap);
    }
    let mean_px_s = px_per_s.iter().sum::<f64>() / px_per_s.len() as f64;
    let um_per_s: Vec<f64> = px_per_s.iter().map(|v| v * um_per_pixel).collect();
    Ok(VelocitySeries {
        mean_um_s: mean_px_s * um_per_pixel,
        px_per_s,
        um_per_s,
        mean_px_s,
    })
}

/// Outcome of the occlusion rule for one frame: detections small enough
/// to associate, plus the ids of tracks terminated by a merge.
#[derive(Debug)]
pub struct OcclusionOutcome {
    pub kept: Vec<usize>,
    pub terminated_track_ids: Vec<u64>,
}

/// Drop merged (oversized) detections and terminate every active track
/// whose last centroid lies inside such a detection's bounding box.
pub fn apply_occlusion_rule(
    detections: &[Detection],
    active_tracks: &mut [Track],
    cfg: &TrackerConfig,
) -> OcclusionOutcome {
    let mut kept = Vec::with_capacity(detections.len());
    let mut terminated = Vec::new();
    for (i, det) in detections.iter().enumerate() {
        let area = if cfg.use_bbox_area {
            det.bbox.area()
        } else {
            det.area_px
        };
        if area <= cfg.merge_area_px {
            kept.push(i);
            continue;
        }
        for track in active_tracks.iter_mut() {
            if track.state == TrackState::Active
                && track.membrane_id == det.membrane_id
                && det.bbox.contains(track.last_point().x, track.last_point().y)
            {
                track.state = TrackState::Terminated;
                terminated.push(track.id);
            }
        }
    }
    OcclusionOutcome {
        kept,
        terminated_track_ids: terminated,
    }
}

/// Pairing produced by `associate` for one frame.
#[derive(Debug, Default)]
pub struct Assignment {
    /// (track index, detection index) pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy nearest-neighbor assignment: all same-membrane pairs within
/// the gate, sorted globally by distance, taken one-to-one.
pub fn associate(tracks: &[Track], detections: &[Detection], cfg: &TrackerConfig) -> Assignment {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        if track.state != TrackState::Active {
            continue;
        }
        let last = track.last_point();
        for (di, det) in detections.iter().enumerate() {
            if det.membrane_id != track.membrane_id {
                continue;
            }
            let dist = ((det.centroid.0 - last.x).powi(2) + (det.centroid.1 - last.y).powi(2)).sqrt();
            if dist <= cfg.max_assoc_dist_px {
                pairs.push((dist, ti, di));
            }
        }
    }
    // Deterministic order: distance, then track index, then detection index.
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (_, ti, di) in pairs {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            matches.push((ti, di));
        }
    }
    let unmatched_tracks = (0..tracks.len())
        .filter(|&i| tracks[i].state == TrackState::Active && !track_used[i])
        .collect();
    let unmatched_detections = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    Assignment {
        matches,
        unmatched_tracks,
        unmatched_detections,
    }
}

/// Stateful per-sequence tracker. Feed frames in index order.
#[derive(Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        }
    }

    /// Process one frame of detections: occlusion rule, then association.
    pub fn step(&mut self, frame_index: usize, detections: &[Detection]) -> Result<(), TrackError> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(TrackError::OutOfOrderFrame {
                    got: frame_index,
                    last,
                });
            }
        }
        self.last_frame = Some(frame_index);

        let occl = apply_occlusion_rule(detections, &mut self.tracks, &self.cfg);
        let kept: Vec<Detection> = occl.kept.iter().map(|&i| detections[i].clone()).collect();
        let assignment = associate(&self.tracks, &kept, &self.cfg);

        for (ti, di) in &assignment.matches {
            let det = &kept[*di];
            self.tracks[*ti].points.push(TrackPoint {
                frame_index,
                x: det.centroid.0,
                y: det.centroid.1,
            });
            self.tracks[*ti].gap_count = 0;
        }
        for ti in &assignment.unmatched_tracks {
            let track = &mut self.tracks[*ti];
            track.gap_count += 1;
            if track.gap_count >= self.cfg.max_gap_frames {
                track.state = TrackState::Terminated;
            }
        }
        for di in &assignment.unmatched_detections {
            let det = &kept[*di];
            self.tracks.push(Track {
                id: self.next_id,
                membrane_id: det.membrane_id,
                points: vec![TrackPoint {
                    frame_index,
                    x: det.centroid.0,
                    y: det.centroid.1,
                }],
                state: TrackState::Active,
                gap_count: 0,
            });
            self.next_id += 1;
        }
        Ok(())
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn finish(self) -> Vec<Track> {
        self.tracks
    }
}

/// A finished track together with its velocity series (None for tracks
/// shorter than 2 points).
#[derive(Debug, Clone)]
pub struct TrackedWorm {
    pub track: Track,
    pub velocity: Option<VelocitySeries>,
}

/// Run the occlusion rule and association over a whole sequence of
/// per-frame detections (ordered by frame index), then attach velocities.
pub fn track_sequence(
    per_frame: &[(usize, Vec<Detection>)],
    cfg: &TrackerConfig,
    fps: f64,
    um_per_pixel: f64,
) -> Result<Vec<TrackedWorm>, TrackError> {
    if !(fps > 0.0) {
        return Err(TrackError::InvalidFps(fps));
    }
    let mut tracker = Tracker::new(cfg.clone());
    for (frame_index, detections) in per_frame {
        tracker.step(*frame_index, detections)?;
    }
    Ok(tracker
        .finish()
        .into_iter()
        .map(|track| {
            let velocity = compute_velocities(&track, fps, um_per_pixel).ok();
            TrackedWorm { track, velocity }
        })
        .collect())
}

/// Per-worm track CSV: columns
/// `frame_index,time_s,cx_px,cy_px,velocity_px_s,velocity_um_s`;
/// velocity fields are blank on the first row.
pub fn track_csv(worm: &TrackedWorm, fps: f64) -> String {
    let mut out = String::from("frame_index,time_s,cx_px,cy_px,velocity_px_s,velocity_um_s\n");
    for (i, p) in worm.track.points.iter().enumerate() {
        let time_s = p.frame_index as f64 / fps;
        if i == 0 {
            out.push_str(&format!("{},{:.3},{:.3},{:.3},,\n", p.frame_index, time_s, p.x, p.y));
        } else {
            let (vpx, vum) = match &worm.velocity {
                Some(v) => (v.px_per_s[i - 1], v.um_per_s[i - 1]),
                None => (0.0, 0.0),
            };
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3},{:.4},{:.4}\n",
                p.frame_index, time_s, p.x, p.y, vpx, vum
            ));
        }
    }
    out
}
