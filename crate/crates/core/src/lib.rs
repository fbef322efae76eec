//! Analysis pipeline for gel-membrane nematode motility assays.
//!
//! The pipeline runs in five stages:
//!
//! 1. **membrane** – locate circular gel membranes with a Circular Hough
//!    Transform and refine their boundaries with an active contour.
//! 2. **segment** – adaptive local thresholding inside each membrane mask,
//!    followed by a morphological worm classifier (area and
//!    perimeter-to-area ratio).
//! 3. **tracker** – nearest-neighbor association of per-frame detections
//!    into per-worm tracks, with occlusion-triggered track termination and
//!    centroid-velocity computation.
//! 4. **assay** – population velocity summaries, percent response against
//!    control, and 4-parameter logistic fitting to recover EC50.
//! 5. **synth** – a deterministic synthetic-scene generator with exact
//!    ground truth, used as the test oracle and benchmark source.
//!
//! `imageio` handles binary PGM frames and sequence manifests; `vision`
//! holds the shared pixel-level primitives (gradients, integral images,
//! connected components).

// Guards written as `!(x > 0.0)` deliberately reject NaN along with
// non-positive values; the positive spelling would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assay;
pub mod imageio;
pub mod membrane;
pub mod segment;
pub mod synth;
pub mod tracker;
pub mod vision;
