//! Brute-force reference implementations shared by the oracle and
//! acceptance suites. These deliberately share no code with the library.

use gelpad_core::imageio::Frame;
use gelpad_core::membrane::ChtConfig;
use gelpad_core::vision::{sobel, ImageF, Mask};

/// Recursive (explicit stack) flood-fill labeling with its own perimeter
/// and bbox bookkeeping.
#[allow(clippy::type_complexity)]
pub fn flood_fill_oracle(
    mask: &Mask,
) -> (Vec<u32>, Vec<(usize, usize, (usize, usize, usize, usize))>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut stats = Vec::new();
    let mut next = 1u32;
    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sx, sy) || labels[sy * w + sx] != 0 {
                continue;
            }
            let mut stack = vec![(sx, sy)];
            labels[sy * w + sx] = next;
            let mut members = Vec::new();
            while let Some((x, y)) = stack.pop() {
                members.push((x, y));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nxu, nyu) = (nx as usize, ny as usize);
                        if mask.get(nxu, nyu) && labels[nyu * w + nxu] == 0 {
                            labels[nyu * w + nxu] = next;
                            stack.push((nxu, nyu));
                        }
                    }
                }
            }
            let area = members.len();
            let mut perimeter = 0;
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
            for &(x, y) in &members {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0
                        || ny < 0
                        || nx >= w as isize
                        || ny >= h as isize
                        || !mask.get(nx as usize, ny as usize)
                    {
                        perimeter += 1;
                    }
                }
            }
            stats.push((area, perimeter, (x0, y0, x1, y1)));
            next += 1;
        }
    }
    (labels, stats)
}

/// Filled dark disk with a single anti-aliased edge.
pub fn disk_frame(w: usize, cx: f64, cy: f64, r: f64) -> Frame {
    let mut pixels = vec![0u8; w * w];
    for y in 0..w {
        for x in 0..w {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let c = (r - d + 0.5).clamp(0.0, 1.0);
            pixels[y * w + x] = (220.0 * (1.0 - c) + 50.0 * c) as u8;
        }
    }
    Frame::new(w, w, pixels).unwrap()
}

/// Anti-aliased dark ring of the given band thickness, centered on
/// radius r, over a bright background.
#[allow(dead_code)] // not every test binary uses every helper
pub fn ring_frame(w: usize, h: usize, cx: f64, cy: f64, r: f64, thickness: f64) -> Frame {
    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let c = (thickness / 2.0 + 0.5 - (d - r).abs()).clamp(0.0, 1.0);
            pixels[y * w + x] = (200.0 * (1.0 - c) + 60.0 * c) as u8;
        }
    }
    Frame::new(w, h, pixels).unwrap()
}

/// Exhaustive circular-Hough oracle: integer centers x quantized radii,
/// scoring each candidate by the number of gate-passing gradient pixels
/// within half a radius step of its circumference.
#[allow(dead_code)] // not every test binary uses every helper
pub fn exhaustive_cht(frame: &Frame, cfg: &ChtConfig) -> (f64, f64, f64, usize) {
    let (near, best) = exhaustive_cht_near(frame, cfg, 1.0);
    let (cx, cy, r) = near[0];
    (cx, cy, r, best)
}

/// All oracle bins whose count is >= frac * the global best count, best
/// first. An anti-aliased edge spreads its gradient support over ~3 px,
/// so several adjacent bins can be statistically indistinguishable
/// maximizers; equivalence tests should accept any of them.
#[allow(dead_code)]
pub fn exhaustive_cht_near(
    frame: &Frame,
    cfg: &ChtConfig,
    frac: f64,
) -> (Vec<(f64, f64, f64)>, usize) {
    let w = frame.width;
    let h = frame.height;
    let img = ImageF::from_frame(frame);
    let grad = sobel(&img).unwrap();
    let mut mags = grad.magnitude.clone();
    mags.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let gate = mags[((mags.len() - 1) as f64 * cfg.grad_percentile) as usize].max(cfg.min_grad_mag);
    let candidates: Vec<(f64, f64)> = (0..w * h)
        .filter(|&i| grad.magnitude[i] >= gate)
        .map(|i| ((i % w) as f64, (i / w) as f64))
        .collect();
    let mut bins: Vec<(usize, (f64, f64, f64))> = Vec::new();
    for cy in 0..h {
        for cx in 0..w {
            let mut r = cfg.r_min_px;
            while r <= cfg.r_max_px {
                let count = candidates
                    .iter()
                    .filter(|&&(px, py)| {
                        let d = ((px - cx as f64).powi(2) + (py - cy as f64).powi(2)).sqrt();
                        (d - r).abs() <= cfg.r_step_px / 2.0
                    })
                    .count();
                if count > 0 {
                    bins.push((count, (cx as f64, cy as f64, r)));
                }
                r += cfg.r_step_px;
            }
        }
    }
    let best = bins.iter().map(|&(c, _)| c).max().unwrap_or(0);
    let cutoff = ((frac * best as f64).ceil() as usize).max(1);
    let mut near: Vec<(usize, (f64, f64, f64))> =
        bins.into_iter().filter(|&(c, _)| c >= cutoff).collect();
    near.sort_by_key(|&(c, _)| std::cmp::Reverse(c));
    (near.into_iter().map(|(_, b)| b).collect(), best)
}
