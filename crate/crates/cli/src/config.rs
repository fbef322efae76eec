//! Run configuration: one JSON file covering every pipeline stage, with
//! dotted-path command-line overrides (`--set tracker.maxGapFrames=3`).

use std::path::Path;

use gelpad_core::membrane::{ChtConfig, SnakeConfig};
use gelpad_core::segment::{ThresholdConfig, WormFilterConfig};
use gelpad_core::synth::SceneConfig;
use gelpad_core::tracker::TrackerConfig;

/// Exit codes: 0 success, 1 config error, 2 I/O error, 3 detection
/// failure, 4 evaluation threshold failure.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }
    pub fn io(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
    pub fn detection(msg: impl Into<String>) -> Self {
        CliError { code: 3, msg: msg.into() }
    }
    pub fn threshold(msg: impl Into<String>) -> Self {
        CliError { code: 4, msg: msg.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.msg)
    }
}

/// Pass/fail thresholds and matching radius for `eval`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EvalConfig {
    pub match_radius_px: f64,
    pub min_recall: f64,
    pub min_precision: f64,
    pub max_rmse_px: f64,
    pub max_id_switches: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_radius_px: 5.0,
            min_recall: 0.95,
            min_precision: 0.90,
            max_rmse_px: 1.5,
            max_id_switches: 0,
        }
    }
}

/// Top-level run configuration; every section has working defaults, so
/// an empty file (or no file) is a valid config.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct RunConfig {
    pub cht: ChtConfig,
    pub snake: SnakeConfig,
    pub threshold: ThresholdConfig,
    pub worm_filter: WormFilterConfig,
    pub tracker: TrackerConfig,
    pub scene: SceneConfig,
    pub eval: EvalConfig,
    /// Physical scale written to synth manifests and used when none is
    /// available from an input manifest.
    pub um_per_pixel: f64,
    /// Refine each detected circle with the active contour and report
    /// the refined contours alongside the circles.
    pub refine_contours: bool,
    /// Interior mask shrink applied to detected membranes before worm
    /// segmentation, keeping the rim out of the search region.
    pub mask_shrink_px: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cht: ChtConfig::default(),
            snake: SnakeConfig::default(),
            threshold: ThresholdConfig::default(),
            worm_filter: WormFilterConfig::default(),
            tracker: TrackerConfig::default(),
            scene: SceneConfig::default(),
            eval: EvalConfig::default(),
            um_per_pixel: 10.0,
            refine_contours: false,
            mask_shrink_px: 4.0,
        }
    }
}

/// Loads the config file (or starts from defaults when none is given)
/// and applies `--set key.path=value` overrides. Values parse as JSON
/// when possible, otherwise as strings. Unknown keys are rejected.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut root: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("invalid config {}: {e}", p.display())))?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    for set in sets {
        apply_override(&mut root, set)?;
    }
    serde_json::from_value(root).map_err(|e| CliError::config(format!("invalid config: {e}")))
}

fn apply_override(root: &mut serde_json::Value, set: &str) -> Result<(), CliError> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got '{set}'")))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("--set has an empty path segment: '{path}'")));
    }
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(CliError::config(format!("--set path '{path}' crosses a non-object")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(CliError::config(format!("--set path '{path}' crosses a non-object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg.tracker.max_gap_frames, 5);
        assert_eq!(cfg.threshold.ratio, 0.90);
    }

    #[test]
    fn set_overrides_nested_values() {
        let sets = vec![
            "tracker.maxGapFrames=3".to_string(),
            "scene.frameCount=12".to_string(),
            "umPerPixel=2.5".to_string(),
        ];
        let cfg = load_config(None, &sets).unwrap();
        assert_eq!(cfg.tracker.max_gap_frames, 3);
        assert_eq!(cfg.scene.frame_count, 12);
        assert_eq!(cfg.um_per_pixel, 2.5);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load_config(None, &["tracker.bogus=1".to_string()]).unwrap_err();
        assert_eq!(err.code, 1);
    }

    #[test]
    fn malformed_set_rejected() {
        let err = load_config(None, &["noequals".to_string()]).unwrap_err();
        assert_eq!(err.code, 1);
    }
}
