//! Binary PGM (P5) frame codec and frame-sequence streaming.
//!
//! This is the only module that touches the filesystem for pixel data.
//! Sequences are described by a `manifest.json` with keys `fps`,
//! `umPerPixel`, `framePattern` (printf-style zero-padded index, e.g.
//! `frame_%06d.pgm`) and `frameCount`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("invalid frame dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("missing frame file for index {index}: {path}")]
    MissingFrame { index: usize, path: PathBuf },
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    DimensionMismatch {
        index: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid frame pattern {0:?} (expected exactly one %0<N>d placeholder)")]
    InvalidPattern(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single 8-bit grayscale frame with its position in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major luminance values, length = width * height.
    pub pixels: Vec<u8>,
    pub index: usize,
    pub timestamp_s: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageIoError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageIoError::InvalidDimensions { width, height });
        }
        Ok(Frame {
            width,
            height,
            pixels,
            index: 0,
            timestamp_s: 0.0,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageIoError> {
        Frame::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Acquisition metadata for a frame sequence on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SequenceManifest {
    pub fps: f64,
    pub um_per_pixel: f64,
    pub frame_pattern: String,
    pub frame_count: usize,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<(), ImageIoError> {
        if !(self.fps > 0.0) {
            return Err(ImageIoError::InvalidManifest(format!(
                "fps must be > 0, got {}",
                self.fps
            )));
        }
        if !(self.um_per_pixel > 0.0) {
            return Err(ImageIoError::InvalidManifest(format!(
                "umPerPixel must be > 0, got {}",
                self.um_per_pixel
            )));
        }
        if self.frame_count < 1 {
            return Err(ImageIoError::InvalidManifest(
                "frameCount must be >= 1".into(),
            ));
        }
        parse_pattern(&self.frame_pattern)?;
        Ok(())
    }

    pub fn frame_file_name(&self, index: usize) -> Result<String, ImageIoError> {
        let (prefix, width, suffix) = parse_pattern(&self.frame_pattern)?;
        Ok(format!("{prefix}{index:0width$}{suffix}"))
    }

    pub fn load(path: &Path) -> Result<Self, ImageIoError> {
        let text = fs::read_to_string(path)?;
        let manifest: SequenceManifest = serde_json::from_str(&text)
            .map_err(|e| ImageIoError::InvalidManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageIoError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| ImageIoError::InvalidManifest(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Splits `frame_%06d.pgm` into (prefix, pad width, suffix).
fn parse_pattern(pattern: &str) -> Result<(&str, usize, &str), ImageIoError> {
    let start = pattern
        .find("%0")
        .ok_or_else(|| ImageIoError::InvalidPattern(pattern.to_string()))?;
    let rest = &pattern[start + 2..];
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() || !rest[digits.len()..].starts_with('d') {
        return Err(ImageIoError::InvalidPattern(pattern.to_string()));
    }
    let width: usize = digits
        .parse()
        .map_err(|_| ImageIoError::InvalidPattern(pattern.to_string()))?;
    let suffix = &rest[digits.len() + 1..];
    if suffix.contains('%') || pattern[..start].contains('%') {
        return Err(ImageIoError::InvalidPattern(pattern.to_string()));
    }
    Ok((&pattern[..start], width, suffix))
}

/// Decodes a binary PGM (P5) byte string. maxval must be 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Frame, ImageIoError> {
    if !bytes.starts_with(b"P5") {
        return Err(ImageIoError::MalformedHeader(
            "missing P5 magic".to_string(),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        *field = next_header_token(bytes, &mut pos)?;
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageIoError::MalformedHeader(
            "missing whitespace after maxval".to_string(),
        ));
    }
    pos += 1;
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 255 {
        return Err(ImageIoError::UnsupportedMaxval(maxval as u32));
    }
    if width == 0 || height == 0 {
        return Err(ImageIoError::InvalidDimensions { width, height });
    }
    let expected = width * height;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(ImageIoError::TruncatedData {
            expected,
            got: data.len(),
        });
    }
    Frame::new(width, height, data[..expected].to_vec())
}

/// Reads the next ASCII integer token, skipping whitespace and '#' comment lines.
fn next_header_token(bytes: &[u8], pos: &mut usize) -> Result<u64, ImageIoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(ImageIoError::MalformedHeader(
            "expected integer header field".to_string(),
        ));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageIoError::MalformedHeader("unparseable header field".to_string()))
}

/// Encodes a frame as canonical binary PGM: `P5\n<w> <h>\n255\n` + raw pixels.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

/// Streaming reader over a frame sequence; holds one frame at a time.
#[derive(Debug)]
pub struct SequenceReader {
    manifest: SequenceManifest,
    directory: PathBuf,
    next_index: usize,
    expected_dims: Option<(usize, usize)>,
}

impl SequenceReader {
    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    fn read_frame(&mut self, index: usize) -> Result<Frame, ImageIoError> {
        let name = self.manifest.frame_file_name(index)?;
        let path = self.directory.join(name);
        let mut bytes = Vec::new();
        match fs::File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ImageIoError::MissingFrame { index, path });
            }
            Err(e) => return Err(e.into()),
        }
        let mut frame = decode_pgm(&bytes)?;
        if let Some((w, h)) = self.expected_dims {
            if frame.width != w || frame.height != h {
                return Err(ImageIoError::DimensionMismatch {
                    index,
                    width: frame.width,
                    height: frame.height,
                    expected_width: w,
                    expected_height: h,
                });
            }
        } else {
            self.expected_dims = Some((frame.width, frame.height));
        }
        frame.index = index;
        frame.timestamp_s = index as f64 / self.manifest.fps;
        Ok(frame)
    }
}

impl Iterator for SequenceReader {
    type Item = Result<Frame, ImageIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_index >= self.manifest.frame_count {
            return None;
        }
        let index = self.next_index;
        self.next_index += 1;
        Some(self.read_frame(index))
    }
}

/// Opens a frame sequence for streaming in index order.
///
/// Frame existence is checked up front so a missing file is reported
/// before any processing starts.
pub fn open_sequence(
    manifest: &SequenceManifest,
    directory: &Path,
) -> Result<SequenceReader, ImageIoError> {
    manifest.validate()?;
    for index in 0..manifest.frame_count {
        let path = directory.join(manifest.frame_file_name(index)?);
        if !path.is_file() {
            return Err(ImageIoError::MissingFrame { index, path });
        }
    }
    Ok(SequenceReader {
        manifest: manifest.clone(),
        directory: directory.to_path_buf(),
        next_index: 0,
        expected_dims: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_minimal() {
        let bytes = b"P5\n2 2\n255\n\x00\x40\x80\xff";
        let f = decode_pgm(bytes).unwrap();
        assert_eq!((f.width, f.height), (2, 2));
        assert_eq!(f.pixels, vec![0, 64, 128, 255]);
    }

    #[test]
    fn decode_with_comment() {
        let plain = decode_pgm(b"P5\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        let commented = decode_pgm(b"P5\n2\n# a comment\n2\n255\n\x01\x02\x03\x04").unwrap();
        assert_eq!(plain.pixels, commented.pixels);
    }

    #[test]
    fn decode_rejects_maxval() {
        let err = decode_pgm(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(matches!(err, ImageIoError::UnsupportedMaxval(65535)));
    }

    #[test]
    fn decode_rejects_truncation() {
        let err = decode_pgm(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(matches!(
            err,
            ImageIoError::TruncatedData {
                expected: 4,
                got: 2
            }
        ));
    }

    #[test]
    fn decode_rejects_bad_header() {
        assert!(matches!(
            decode_pgm(b"P6\n1 1\n255\n\x00"),
            Err(ImageIoError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\nxx 1\n255\n\x00"),
            Err(ImageIoError::MalformedHeader(_))
        ));
    }

    #[test]
    fn encode_canonical_1x1() {
        let f = Frame::new(1, 1, vec![0]).unwrap();
        assert_eq!(encode_pgm(&f), b"P5\n1 1\n255\n\x00");
    }

    #[test]
    fn pattern_formatting() {
        let m = SequenceManifest {
            fps: 10.0,
            um_per_pixel: 1.0,
            frame_pattern: "frame_%06d.pgm".to_string(),
            frame_count: 3,
        };
        assert_eq!(m.frame_file_name(7).unwrap(), "frame_000007.pgm");
        assert_eq!(m.frame_file_name(123456).unwrap(), "frame_123456.pgm");
    }

    #[test]
    fn sequence_timestamps_and_missing_frame() {
        let dir = tempfile::tempdir().unwrap();
        let m = SequenceManifest {
            fps: 10.0,
            um_per_pixel: 1.0,
            frame_pattern: "f_%03d.pgm".to_string(),
            frame_count: 3,
        };
        for i in 0..3 {
            let f = Frame::filled(4, 4, i as u8).unwrap();
            fs::write(dir.path().join(m.frame_file_name(i).unwrap()), encode_pgm(&f)).unwrap();
        }
        let frames: Vec<Frame> = open_sequence(&m, dir.path())
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        let ts: Vec<f64> = frames.iter().map(|f| f.timestamp_s).collect();
        assert_eq!(ts, vec![0.0, 0.1, 0.2]);

        fs::remove_file(dir.path().join("f_001.pgm")).unwrap();
        match open_sequence(&m, dir.path()) {
            Err(ImageIoError::MissingFrame { index: 1, .. }) => {}
            other => panic!("expected MissingFrame for index 1, got {other:?}"),
        }
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = SequenceManifest {
            fps: 10.0,
            um_per_pixel: 5.5,
            frame_pattern: "frame_%06d.pgm".to_string(),
            frame_count: 1800,
        };
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(SequenceManifest::load(&path).unwrap(), m);

        let bad = SequenceManifest { fps: 0.0, ..m };
        assert!(bad.validate().is_err());
    }
}
