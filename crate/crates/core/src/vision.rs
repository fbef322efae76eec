//! Stateless pixel-level primitives shared by detection and segmentation:
//! Sobel gradients, separable Gaussian smoothing, integral images, and
//! 8-connected component labeling with blob shape statistics.

use thiserror::Error;

use crate::imageio::Frame;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("image {width}x{height} is smaller than the 3x3 kernel")]
    TooSmall { width: usize, height: usize },
    #[error("sigma must be >= 0, got {0}")]
    NegativeSigma(f64),
}

/// Real-valued image buffer used for intermediate results.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageF {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageF {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_frame(frame: &Frame) -> Self {
        ImageF {
            width: frame.width,
            height: frame.height,
            data: frame.pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value at the clamped coordinate (replicate border policy).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    /// Bilinear sample with border replication.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let v00 = self.get_clamped(xi, yi);
        let v10 = self.get_clamped(xi + 1, yi);
        let v01 = self.get_clamped(xi, yi + 1);
        let v11 = self.get_clamped(xi + 1, yi + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }
}

/// Per-pixel horizontal/vertical derivatives and gradient norm.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl GradientField {
    pub fn magnitude_image(&self) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.magnitude.clone(),
        }
    }
}

/// 3x3 Sobel with replicated border pixels.
pub fn sobel(img: &ImageF) -> Result<GradientField, VisionError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(VisionError::TooSmall {
            width: w,
            height: h,
        });
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut magnitude = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            gx[i] = sx;
            gy[i] = sy;
            magnitude[i] = (sx * sx + sy * sy).sqrt();
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
    })
}

pub fn sobel_frame(frame: &Frame) -> Result<GradientField, VisionError> {
    sobel(&ImageF::from_frame(frame))
}

/// Separable Gaussian blur; kernel radius = ceil(3*sigma), normalized to
/// sum 1. sigma = 0 returns the input unchanged.
pub fn gaussian_blur(img: &ImageF, sigma: f64) -> Result<ImageF, VisionError> {
    if sigma < 0.0 {
        return Err(VisionError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        let d = k as f64;
        kernel.push((-d * d / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= sum;
    }

    let (w, h) = (img.width, img.height);
    // Horizontal pass.
    let mut tmp = ImageF::zeros(w, h);
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                acc += kv * img.get_clamped(x + ki as isize - radius, y as isize);
            }
            tmp.set(x as usize, y, acc);
        }
    }
    // Vertical pass.
    let mut out = ImageF::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y + ki as isize - radius);
            }
            out.set(x, y as usize, acc);
        }
    }
    Ok(out)
}

/// Summed-area table with one-row/one-column zero padding; exact integer
/// accumulation in u64.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    pub width: usize,
    pub height: usize,
    table: Vec<u64>,
}

impl IntegralImage {
    pub fn from_frame(frame: &Frame) -> Self {
        let (w, h) = (frame.width, frame.height);
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            for x in 0..w {
                row_sum += frame.pixels[y * w + x] as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            width: w,
            height: h,
            table,
        }
    }

    /// Sum over the inclusive window [x0..=x1] x [y0..=y1].
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        debug_assert!(x0 <= x1 && x1 < self.width && y0 <= y1 && y1 < self.height);
        let stride = self.width + 1;
        self.table[(y1 + 1) * stride + x1 + 1] + self.table[y0 * stride + x0]
            - self.table[y0 * stride + x1 + 1]
            - self.table[(y1 + 1) * stride + x0]
    }
}

/// Binary image.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    /// Center point of the bounding box.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min as f64 && x <= self.x_max as f64 && y >= self.y_min as f64 && y <= self.y_max as f64
    }
}

/// A labeled connected component with its shape statistics.
///
/// Perimeter counts pixel edges (4-neighborhood) adjacent to background
/// or the image border. The centroid is the bounding-box center.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub label: u32,
    pub area: usize,
    pub perimeter: usize,
    pub bbox: BBox,
}

impl Blob {
    pub fn centroid(&self) -> (f64, f64) {
        self.bbox.center()
    }

    pub fn perimeter_area_ratio(&self) -> f64 {
        self.perimeter as f64 / self.area as f64
    }
}

/// Labeling produced by `connected_components`: per-pixel labels
/// (0 = background, blobs numbered from 1) plus per-blob statistics.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub blobs: Vec<Blob>,
}

/// 8-connected component labeling over a binary mask.
pub fn connected_components(mask: &Mask) -> Labeling {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut blobs = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut next_label = 1u32;

    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sx, sy) || labels[sy * w + sx] != 0 {
                continue;
            }
            let label = next_label;
            next_label += 1;
            let mut area = 0usize;
            let mut perimeter = 0usize;
            let (mut x_min, mut x_max, mut y_min, mut y_max) = (sx, sx, sy, sy);
            labels[sy * w + sx] = label;
            stack.push((sx, sy));
            while let Some((x, y)) = stack.pop() {
                area += 1;
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
                // 4-neighborhood edges facing background or border.
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
                // 8-connected flood.
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nxu, nyu) = (nx as usize, ny as usize);
                        if mask.get(nxu, nyu) && labels[nyu * w + nxu] == 0 {
                            labels[nyu * w + nxu] = label;
                            stack.push((nxu, nyu));
                        }
                    }
                }
            }
            blobs.push(Blob {
                label,
                area,
                perimeter,
                bbox: BBox {
                    x_min,
                    y_min,
                    x_max,
                    y_max,
                },
            });
        }
    }
    Labeling { labels, blobs }
}
