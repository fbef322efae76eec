//! `gelpad` — command-line front end for the gel-membrane worm assay
//! pipeline: scene synthesis, membrane detection, worm segmentation and
//! tracking, dose-response analysis, and tracking evaluation.
//!
//! Every command is deterministic given (config, inputs); re-runs write
//! byte-identical outputs.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use config::{load_config, CliError, RunConfig};
use gelpad_core::assay::{
    dose_points_csv, fit_hill, fits_csv, percent_response, plot_data_csv, summarize_velocities,
    summary_csv, summary_from_means, ConditionFit, DosePoint, VelocitySummary,
};
use gelpad_core::imageio::{encode_pgm, open_sequence, Frame, SequenceManifest};
use gelpad_core::membrane::{
    circle_mask, circles_csv, detect_circles, refine_contour, DetectedCircle,
};
use gelpad_core::segment::{segment_frame_for_tracking, Detection};
use gelpad_core::synth::{evaluate, GroundTruth, Scene};
use gelpad_core::tracker::{track_csv, track_sequence, Track, TrackPoint, TrackState, TrackedWorm};
use gelpad_core::vision::Mask;

#[derive(Parser)]
#[command(name = "gelpad", version, about = "Gel-membrane worm assay pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. tracker.maxGapFrames=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads (default: GELPAD_THREADS env var, then 1).
    #[arg(long)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(long)]
    verbose: bool,
}

impl CommonArgs {
    fn config(&self) -> Result<RunConfig, CliError> {
        load_config(self.config.as_deref(), &self.sets)
    }

    fn threads(&self) -> usize {
        self.threads
            .or_else(|| std::env::var("GELPAD_THREADS").ok().and_then(|v| v.parse().ok()))
            .unwrap_or(1)
            .max(1)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: frames, manifest, and ground truth.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for frames and truth files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect gel membranes on the first frame of a sequence.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Input directory with manifest.json and frames.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect membranes, segment worms, and track them.
    Track {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline; with --dose-map, a dose-response assay over one
    /// sequence directory per condition.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON map of condition name to concentration in uM (0 = control).
        #[arg(long)]
        dose_map: Option<PathBuf>,
    },
    /// Dose-response analysis over previously written track CSVs
    /// (one subdirectory per condition).
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dose_map: PathBuf,
    },
    /// Score tracking output against scene ground truth.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory containing track_<id>.csv files.
        #[arg(long)]
        tracks: PathBuf,
        /// Ground-truth records CSV written by synth.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, out } => cmd_synth(&common, &out),
        Command::Detect { common, input, out } => cmd_detect(&common, &input, &out),
        Command::Track { common, input, out } => cmd_track(&common, &input, &out),
        Command::Run { common, input, out, dose_map } => match dose_map {
            Some(map) => cmd_run_doses(&common, &input, &out, &map),
            None => cmd_track(&common, &input, &out),
        },
        Command::Analyze { common, input, out, dose_map } => {
            cmd_analyze(&common, &input, &out, &dose_map)
        }
        Command::Eval { common, tracks, truth, out } => {
            cmd_eval(&common, &tracks, &truth, out.as_deref())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}

fn cmd_synth(common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let cfg = common.config()?;
    let mut scene =
        Scene::new(cfg.scene.clone()).map_err(|e| CliError::config(format!("scene: {e}")))?;
    create_dir(out)?;
    let manifest = SequenceManifest {
        fps: cfg.scene.fps,
        um_per_pixel: cfg.um_per_pixel,
        frame_pattern: "frame_%06d.pgm".to_string(),
        frame_count: cfg.scene.frame_count,
    };
    while let Some(frame) = scene.next_frame() {
        let name = manifest
            .frame_file_name(frame.index)
            .map_err(|e| CliError::config(format!("manifest: {e}")))?;
        write_file(&out.join(name), &encode_pgm(&frame))?;
        if common.verbose {
            eprintln!("wrote frame {}", frame.index);
        }
    }
    manifest
        .save(&out.join("manifest.json"))
        .map_err(|e| CliError::io(format!("manifest: {e}")))?;
    let truth = scene.into_truth();
    write_file(&out.join("truth.csv"), truth.records_csv().as_bytes())?;
    write_file(&out.join("truth_circles.csv"), truth.circles_csv().as_bytes())?;
    println!(
        "synth: {} frames, {} membranes, {} worm records -> {}",
        cfg.scene.frame_count,
        truth.circles.len(),
        truth.records.len(),
        out.display()
    );
    Ok(())
}

/// Loads a sequence and detects membranes on its first frame.
fn load_and_detect(
    cfg: &RunConfig,
    input: &Path,
) -> Result<(SequenceManifest, Vec<Frame>, Vec<DetectedCircle>), CliError> {
    let manifest = SequenceManifest::load(&input.join("manifest.json"))
        .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?;
    let reader = open_sequence(&manifest, input)
        .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?;
    let frames: Vec<Frame> = reader
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(format!("{}: {e}", input.display())))?;
    let circles = detect_circles(&frames[0], &cfg.cht)
        .map_err(|e| CliError::config(format!("cht: {e}")))?;
    if circles.is_empty() {
        return Err(CliError::detection(format!(
            "no membranes detected in {}",
            input.display()
        )));
    }
    Ok((manifest, frames, circles))
}

fn cmd_detect(common: &CommonArgs, input: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = common.config()?;
    let (_, frames, circles) = load_and_detect(&cfg, input)?;
    create_dir(out)?;
    write_file(&out.join("circles.csv"), circles_csv(&circles).as_bytes())?;
    if cfg.refine_contours {
        let mut csv = String::from("circle_index,point_index,x,y\n");
        for (ci, d) in circles.iter().enumerate() {
            let contour = refine_contour(&frames[0], &d.circle, &cfg.snake)
                .map_err(|e| CliError::config(format!("snake: {e}")))?;
            for (pi, (x, y)) in contour.points.iter().enumerate() {
                csv.push_str(&format!("{ci},{pi},{x:.3},{y:.3}\n"));
            }
        }
        write_file(&out.join("contours.csv"), csv.as_bytes())?;
    }
    println!("detect: {} membranes -> {}", circles.len(), out.display());
    Ok(())
}

/// Segments every frame inside the membrane masks, splitting frames
/// across `threads` scoped workers. The result is ordered by frame
/// index regardless of worker count.
fn segment_all(
    frames: &[Frame],
    masks: &[(u32, Mask)],
    cfg: &RunConfig,
    threads: usize,
) -> Vec<(usize, Vec<Detection>)> {
    let merge = Some(cfg.tracker.merge_area_px);
    if threads <= 1 {
        return frames
            .iter()
            .map(|f| {
                (f.index, segment_frame_for_tracking(f, masks, &cfg.threshold, &cfg.worm_filter, merge))
            })
            .collect();
    }
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(threads) {
        let results: Vec<(usize, Vec<Detection>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|f| {
                    scope.spawn(move || {
                        (
                            f.index,
                            segment_frame_for_tracking(
                                f,
                                masks,
                                &cfg.threshold,
                                &cfg.worm_filter,
                                merge,
                            ),
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("segmentation worker")).collect()
        });
        out.extend(results);
    }
    out
}

struct PipelineOutput {
    circles: Vec<DetectedCircle>,
    worms: Vec<TrackedWorm>,
    manifest: SequenceManifest,
}

fn run_pipeline(cfg: &RunConfig, input: &Path, threads: usize, verbose: bool) -> Result<PipelineOutput, CliError> {
    let (manifest, frames, circles) = load_and_detect(cfg, input)?;
    if verbose {
        eprintln!("{}: {} membranes, {} frames", input.display(), circles.len(), frames.len());
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let masks: Vec<(u32, Mask)> = circles
        .iter()
        .enumerate()
        .map(|(i, d)| (i as u32, circle_mask(&d.circle, w, h, cfg.mask_shrink_px)))
        .collect();
    let per_frame = segment_all(&frames, &masks, cfg, threads);
    let worms = track_sequence(&per_frame, &cfg.tracker, manifest.fps, manifest.um_per_pixel)
        .map_err(|e| CliError::config(format!("tracker: {e}")))?;
    Ok(PipelineOutput { circles, worms, manifest })
}

/// Writes circles, per-track CSVs, and the velocity summary for one
/// sequence; returns the velocity summary when any worm was tracked.
fn write_sequence_outputs(
    out: &Path,
    condition: &str,
    result: &PipelineOutput,
) -> Result<Option<VelocitySummary>, CliError> {
    create_dir(out)?;
    write_file(&out.join("circles.csv"), circles_csv(&result.circles).as_bytes())?;
    for worm in &result.worms {
        let name = format!("track_{}.csv", worm.track.id);
        write_file(&out.join(name), track_csv(worm, result.manifest.fps).as_bytes())?;
    }
    let scored: Vec<TrackedWorm> =
        result.worms.iter().filter(|w| w.velocity.is_some()).cloned().collect();
    let summary = if scored.is_empty() {
        eprintln!("warning: no worms tracked in condition '{condition}'");
        None
    } else {
        Some(summarize_velocities(&scored).map_err(|e| CliError::config(format!("assay: {e}")))?)
    };
    let rows = match &summary {
        Some(s) => vec![(condition.to_string(), s.clone(), None)],
        None => Vec::new(),
    };
    write_file(&out.join("velocity_summary.csv"), summary_csv(&rows).as_bytes())?;
    Ok(summary)
}

fn cmd_track(common: &CommonArgs, input: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = common.config()?;
    let result = run_pipeline(&cfg, input, common.threads(), common.verbose)?;
    write_sequence_outputs(out, "all", &result)?;
    println!(
        "track: {} membranes, {} tracks -> {}",
        result.circles.len(),
        result.worms.len(),
        out.display()
    );
    Ok(())
}

fn load_dose_map(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read dose map {}: {e}", path.display())))?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid dose map {}: {e}", path.display())))?;
    if map.is_empty() {
        return Err(CliError::config("dose map is empty"));
    }
    let controls = map.values().filter(|&&c| c == 0.0).count();
    if controls != 1 {
        return Err(CliError::config(format!(
            "dose map needs exactly one control (concentration 0), found {controls}"
        )));
    }
    Ok(map)
}

/// Shared tail of `run --dose-map` and `analyze`: percent response per
/// condition against the control, then a Hill fit over the dosed points.
fn write_assay_outputs(
    out: &Path,
    dose_map: &BTreeMap<String, f64>,
    summaries: &BTreeMap<String, VelocitySummary>,
) -> Result<(), CliError> {
    let control_name = dose_map
        .iter()
        .find(|(_, &c)| c == 0.0)
        .map(|(n, _)| n.clone())
        .expect("dose map validated");
    let control = summaries
        .get(&control_name)
        .ok_or_else(|| CliError::config(format!("control condition '{control_name}' has no tracked worms")))?;

    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (name, conc) in dose_map {
        let summary = summaries
            .get(name)
            .ok_or_else(|| CliError::config(format!("condition '{name}' has no tracked worms")))?;
        let pct = percent_response(summary, control)
            .map_err(|e| CliError::config(format!("assay: {e}")))?;
        rows.push((name.clone(), summary.clone(), Some(pct)));
        if *conc > 0.0 {
            points.push(DosePoint { concentration_um: *conc, percent_response: pct });
        }
    }
    write_file(&out.join("velocity_summary.csv"), summary_csv(&rows).as_bytes())?;

    let fit = fit_hill(&points, None).map_err(|e| CliError::config(format!("hill fit: {e}")))?;
    let fits = vec![ConditionFit { condition: "doseSeries".to_string(), points, fit }];
    write_file(&out.join("hill_fits.csv"), fits_csv(&fits).as_bytes())?;
    write_file(&out.join("dose_points.csv"), dose_points_csv(&fits).as_bytes())?;
    write_file(&out.join("plot_data.csv"), plot_data_csv(&fits).as_bytes())?;
    println!(
        "assay: ec50 {:.3} uM, hill slope {:.3}, {} conditions -> {}",
        fits[0].fit.ec50,
        fits[0].fit.hill_slope,
        dose_map.len(),
        out.display()
    );
    Ok(())
}

fn cmd_run_doses(common: &CommonArgs, input: &Path, out: &Path, map_path: &Path) -> Result<(), CliError> {
    let cfg = common.config()?;
    let dose_map = load_dose_map(map_path)?;
    create_dir(out)?;
    let mut summaries = BTreeMap::new();
    for name in dose_map.keys() {
        let dir = input.join(name);
        let result = run_pipeline(&cfg, &dir, common.threads(), common.verbose)?;
        if let Some(summary) = write_sequence_outputs(&out.join(name), name, &result)? {
            summaries.insert(name.clone(), summary);
        }
    }
    write_assay_outputs(out, &dose_map, &summaries)
}

/// Reads a `track_<id>.csv` back into points and per-step um/s
/// velocities (blank on the first row).
fn parse_track_csv(path: &Path) -> Result<(Vec<TrackPoint>, Vec<f64>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut points = Vec::new();
    let mut velocities = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::config(format!(
                "{}:{}: expected 6 columns, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                CliError::config(format!("{}:{}: bad number '{s}'", path.display(), ln + 1))
            })
        };
        points.push(TrackPoint {
            frame_index: fields[0].parse().map_err(|_| {
                CliError::config(format!("{}:{}: bad frame index", path.display(), ln + 1))
            })?,
            x: parse(fields[2])?,
            y: parse(fields[3])?,
        });
        if !fields[5].is_empty() {
            velocities.push(parse(fields[5])?);
        }
    }
    Ok((points, velocities))
}

/// (track id, points, per-step um/s velocities) parsed from one CSV.
type LoadedTrack = (u64, Vec<TrackPoint>, Vec<f64>);

/// All track CSVs in a directory, sorted by track id.
fn load_tracks_dir(dir: &Path) -> Result<Vec<LoadedTrack>, CliError> {
    let mut tracks = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(id) = name
            .strip_prefix("track_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        let (points, velocities) = parse_track_csv(&entry.path())?;
        tracks.push((id, points, velocities));
    }
    tracks.sort_by_key(|(id, _, _)| *id);
    Ok(tracks)
}

fn cmd_analyze(common: &CommonArgs, input: &Path, out: &Path, map_path: &Path) -> Result<(), CliError> {
    common.config()?; // validate config + overrides even though unused
    let dose_map = load_dose_map(map_path)?;
    create_dir(out)?;
    let mut summaries = BTreeMap::new();
    for name in dose_map.keys() {
        let tracks = load_tracks_dir(&input.join(name))?;
        let means: Vec<f64> = tracks
            .iter()
            .filter(|(_, _, v)| !v.is_empty())
            .map(|(_, _, v)| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        if means.is_empty() {
            eprintln!("warning: no scored tracks in condition '{name}'");
            continue;
        }
        summaries.insert(name.clone(), summary_from_means(means));
    }
    write_assay_outputs(out, &dose_map, &summaries)
}

fn cmd_eval(
    common: &CommonArgs,
    tracks_dir: &Path,
    truth_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = common.config()?;
    let text = std::fs::read_to_string(truth_path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", truth_path.display())))?;
    let truth = GroundTruth::parse_records_csv(&text)
        .map_err(|e| CliError::config(format!("truth: {e}")))?;
    let tracks: Vec<Track> = load_tracks_dir(tracks_dir)?
        .into_iter()
        .map(|(id, points, _)| Track {
            id,
            membrane_id: 0,
            points,
            state: TrackState::Terminated,
            gap_count: 0,
        })
        .collect();
    if tracks.is_empty() {
        return Err(CliError::config(format!("no track CSVs in {}", tracks_dir.display())));
    }
    let metrics = evaluate(&tracks, &truth, cfg.eval.match_radius_px, cfg.scene.fps)
        .map_err(|e| CliError::config(format!("eval: {e}")))?;
    print!("{}", metrics.csv());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.csv"), metrics.csv().as_bytes())?;
    }
    let mut failures = Vec::new();
    if metrics.recall < cfg.eval.min_recall {
        failures.push(format!("recall {:.4} < {:.4}", metrics.recall, cfg.eval.min_recall));
    }
    if metrics.precision < cfg.eval.min_precision {
        failures.push(format!("precision {:.4} < {:.4}", metrics.precision, cfg.eval.min_precision));
    }
    if metrics.rmse_px > cfg.eval.max_rmse_px {
        failures.push(format!("rmse {:.4} > {:.4}", metrics.rmse_px, cfg.eval.max_rmse_px));
    }
    if metrics.id_switches > cfg.eval.max_id_switches {
        failures.push(format!(
            "id switches {} > {}",
            metrics.id_switches, cfg.eval.max_id_switches
        ));
    }
    if !failures.is_empty() {
        return Err(CliError::threshold(format!("thresholds unmet: {}", failures.join("; "))));
    }
    println!("eval: all thresholds met");
    Ok(())
}
