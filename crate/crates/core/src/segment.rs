//! Per-frame worm segmentation inside membrane masks: adaptive local
//! thresholding (per-pixel centered window mean, via integral image)
//! followed by the morphological worm classifier (area and
//! perimeter-to-area ratio).

use crate::imageio::Frame;
use crate::vision::{connected_components, Blob, IntegralImage, Mask};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub window_w: usize,
    pub window_h: usize,
    /// Fraction of the window mean below which a pixel is foreground.
    pub ratio: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            window_w: 100,
            window_h: 100,
            ratio: 0.90,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct WormFilterConfig {
    pub min_area_px: usize,
    pub max_area_px: usize,
    /// Perimeter-to-area ratio bounds (inclusive).
    pub min_pa: f64,
    pub max_pa: f64,
}

impl Default for WormFilterConfig {
    fn default() -> Self {
        WormFilterConfig {
            min_area_px: 200,
            max_area_px: 300,
            min_pa: 0.5,
            max_pa: 1.0,
        }
    }
}

/// A classified worm blob in one frame, tagged with the membrane that
/// contains it. The centroid is the bounding-box center.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub membrane_id: u32,
    pub centroid: (f64, f64),
    pub bbox: crate::vision::BBox,
    pub area_px: usize,
    pub perimeter: usize,
}

/// Adaptive local threshold: pixel p is foreground iff
/// value(p) < ratio * mean(window centered on p), with the window clamped
/// at the borders and the mean taken over in-bounds pixels only.
pub fn local_threshold(frame: &Frame, cfg: &ThresholdConfig) -> Mask {
    let (w, h) = (frame.width, frame.height);
    let integral = IntegralImage::from_frame(frame);
    let mut mask = Mask::filled(w, h, false);
    let (half_l, half_r) = (cfg.window_w / 2, (cfg.window_w - 1) / 2);
    let (half_t, half_b) = (cfg.window_h / 2, (cfg.window_h - 1) / 2);
    for y in 0..h {
        let y0 = y.saturating_sub(half_t);
        let y1 = (y + half_b).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(half_l);
            let x1 = (x + half_r).min(w - 1);
            let sum = integral.rect_sum(x0, y0, x1, y1);
            let count = (x1 - x0 + 1) * (y1 - y0 + 1);
            let value = frame.pixels[y * w + x] as f64;
            if value < cfg.ratio * (sum as f64) / (count as f64) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Keep blobs that are worm-shaped: area and perimeter/area ratio both
/// within the configured closed intervals. Pure filter, order preserved.
pub fn classify_worms(blobs: &[Blob], cfg: &WormFilterConfig) -> Vec<Blob> {
    blobs
        .iter()
        .filter(|b| {
            let pa = b.perimeter_area_ratio();
            b.area >= cfg.min_area_px
                && b.area <= cfg.max_area_px
                && pa >= cfg.min_pa
                && pa <= cfg.max_pa
        })
        .cloned()
        .collect()
}

/// Segment one frame: threshold, intersect with each membrane interior,
/// label components, classify, and emit detections tagged by membrane.
pub fn segment_frame(
    frame: &Frame,
    membrane_masks: &[(u32, Mask)],
    thr_cfg: &ThresholdConfig,
    filt_cfg: &WormFilterConfig,
) -> Vec<Detection> {
    segment_frame_for_tracking(frame, membrane_masks, thr_cfg, filt_cfg, None)
}

/// Like [`segment_frame`], but when `merge_area_px` is given, blobs larger
/// than it are also emitted even though they fail the worm classifier.
/// The tracker's occlusion rule needs to see those merged blobs so it can
/// terminate the tracks they cover.
pub fn segment_frame_for_tracking(
    frame: &Frame,
    membrane_masks: &[(u32, Mask)],
    thr_cfg: &ThresholdConfig,
    filt_cfg: &WormFilterConfig,
    merge_area_px: Option<usize>,
) -> Vec<Detection> {
    let fg = local_threshold(frame, thr_cfg);
    let mut detections = Vec::new();
    for (membrane_id, membrane) in membrane_masks {
        let clipped = fg.intersect(membrane);
        let labeling = connected_components(&clipped);
        let keep = |b: &Blob| {
            let pa = b.perimeter_area_ratio();
            let worm_shaped = b.area >= filt_cfg.min_area_px
                && b.area <= filt_cfg.max_area_px
                && pa >= filt_cfg.min_pa
                && pa <= filt_cfg.max_pa;
            worm_shaped || merge_area_px.is_some_and(|m| b.area > m)
        };
        for blob in labeling.blobs.iter().filter(|b| keep(b)) {
            detections.push(Detection {
                frame_index: frame.index,
                membrane_id: *membrane_id,
                centroid: blob.centroid(),
                bbox: blob.bbox,
                area_px: blob.area,
                perimeter: blob.perimeter,
            });
        }
    }
    detections
}

/// CSV block for per-frame detections:
/// `frame,membraneId,cx,cy,area,perimeter` with a header row.
pub fn detections_csv(detections: &[Detection]) -> String {
    let mut out = String::from("frame,membraneId,cx,cy,area,perimeter\n");
    for d in detections {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{},{}\n",
            d.frame_index, d.membrane_id, d.centroid.0, d.centroid.1, d.area_px, d.perimeter
        ));
    }
    out
}

/// Threshold mask as a 0/255 frame, for debug dumps.
pub fn mask_to_frame(mask: &Mask) -> Frame {
    Frame::new(
        mask.width,
        mask.height,
        mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .expect("mask dimensions are valid")
}
