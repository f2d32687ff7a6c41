//! Command-line front end: configuration, subcommands, and artifact layout.
//!
//! Every artifact a subcommand writes is recorded with a CRC-32 checksum in
//! `run_report.json`; the `report` subcommand consolidates those sections
//! into one Markdown document and flags drift for human review.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::detector::{
    self, calibrate_threshold, crc32, AnomalyVerdict, DetectorKind, DetectorModel, Label,
    ModelParams, Thresholds, TrainingMeta,
};
use crate::embed::{self, TsneConfig};
use crate::error::{Error, Result};
use crate::ingest::{self, FrameSeries};
use crate::mat::Mat;
use crate::nn::{self, Dataset, LstmAe, Model, TrainConfig, VanillaAe};
use crate::rng::{role, Rng};
use crate::surrogate::{self, ForestSpec, TreeNode, FEATURE_NAMES};
use crate::synth::{self, AnomalyKind, AnomalyWindow, ScenarioSpec};

pub const TRUTH_HEADER: &str = "timestamp,is_anomaly";
pub const VERDICT_HEADER: &str = "timestamp,score,label";
/// Flag-rate drift threshold for the report: twice the calibrated 5%.
pub const DRIFT_FLAG_RATE: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cadence_seconds: u32,
    pub sog_epsilon: f64,
    pub detector: DetectorKind,
    pub window_len: usize,
    pub stride: usize,
    pub percentile: f64,
    pub high_cut: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub perplexity: f64,
    pub tsne_iters: usize,
    /// t-SNE is exact O(n^2); larger inputs are subsampled evenly to this.
    pub max_points: usize,
    pub duration_seconds: u64,
    pub windows: Vec<AnomalyWindow>,
    pub out_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cadence_seconds: 10,
            sog_epsilon: 0.05,
            detector: DetectorKind::Lstm,
            window_len: 13,
            stride: 1,
            percentile: 95.0,
            high_cut: 0.05,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            max_depth: 5,
            n_trees: 100,
            perplexity: 30.0,
            tsne_iters: 1000,
            max_points: 500,
            duration_seconds: 86_400,
            windows: Vec::new(),
            out_dir: PathBuf::from("out"),
            model_path: None,
            input: None,
            truth: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Param(format!("config key '{key}': cannot parse '{value}'")))
}

pub fn parse_detector_kind(s: &str) -> Result<DetectorKind> {
    match s {
        "vanilla" => Ok(DetectorKind::Vanilla),
        "lstm" => Ok(DetectorKind::Lstm),
        other => Err(Error::Param(format!("unknown detector '{other}' (vanilla|lstm)"))),
    }
}

/// Anomaly window list syntax: `kind:start:length[,kind:start:length...]`
/// with kind ∈ {propeller, stress} and seconds for start/length.
pub fn parse_windows(s: &str) -> Result<Vec<AnomalyWindow>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Param(format!(
                    "window '{item}': expected kind:start:length"
                )));
            }
            let kind = match parts[0] {
                "propeller" => AnomalyKind::PropellerFailure,
                "stress" => AnomalyKind::StressManeuver,
                other => {
                    return Err(Error::Param(format!(
                        "unknown anomaly kind '{other}' (propeller|stress)"
                    )))
                }
            };
            Ok(AnomalyWindow {
                kind,
                start_seconds: parse_num("windows", parts[1])?,
                length_seconds: parse_num("windows", parts[2])?,
            })
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` setting; unknown keys are config errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "cadence_seconds" => self.cadence_seconds = parse_num(key, value)?,
            "sog_epsilon" => self.sog_epsilon = parse_num(key, value)?,
            "detector" => self.detector = parse_detector_kind(value)?,
            "window_len" => self.window_len = parse_num(key, value)?,
            "stride" => self.stride = parse_num(key, value)?,
            "percentile" => self.percentile = parse_num(key, value)?,
            "high_cut" => self.high_cut = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "max_depth" => self.max_depth = parse_num(key, value)?,
            "n_trees" => self.n_trees = parse_num(key, value)?,
            "perplexity" => self.perplexity = parse_num(key, value)?,
            "tsne_iters" => self.tsne_iters = parse_num(key, value)?,
            "max_points" => self.max_points = parse_num(key, value)?,
            "duration_seconds" => self.duration_seconds = parse_num(key, value)?,
            "windows" => self.windows = parse_windows(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "model_path" => self.model_path = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "truth" => self.truth = Some(PathBuf::from(value)),
            other => return Err(Error::Param(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Flat `key = value` config file with `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Param(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                i + 1
            )))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence_seconds == 0 {
            return Err(Error::Param("cadence_seconds must be >= 1".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Param(format!(
                "percentile {} outside (0, 100]",
                self.percentile
            )));
        }
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Param("window_len and stride must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Param("learning_rate must be > 0".into()));
        }
        if !(self.high_cut >= 0.0) {
            return Err(Error::Param("high_cut must be >= 0".into()));
        }
        if !(self.perplexity > 0.0) {
            return Err(Error::Param("perplexity must be > 0".into()));
        }
        if self.max_points < 4 {
            return Err(Error::Param("max_points must be >= 4".into()));
        }
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn input_path(&self) -> PathBuf {
        self.input.clone().unwrap_or_else(|| self.out_dir.join("telemetry.csv"))
    }

    fn echo(&self) -> Value {
        json!({
            "cadence_seconds": self.cadence_seconds,
            "sog_epsilon": self.sog_epsilon,
            "detector": self.detector.to_string(),
            "window_len": self.window_len,
            "stride": self.stride,
            "percentile": self.percentile,
            "high_cut": self.high_cut,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "n_trees": self.n_trees,
            "perplexity": self.perplexity,
            "tsne_iters": self.tsne_iters,
            "max_points": self.max_points,
        })
    }
}

#[derive(Parser, Debug)]
#[command(name = "vesselad", version, about = "Vessel operational anomaly detection pipeline")]
pub struct Cli {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model file path (default: OUT/model.json).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Detector kind: vanilla | lstm.
    #[arg(long, global = true)]
    pub detector: Option<String>,
    /// Input telemetry CSV (default: OUT/telemetry.csv).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Ground-truth CSV (timestamp,is_anomaly) for evaluation.
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,

    #[arg(long, global = true)]
    pub cadence_seconds: Option<u32>,
    #[arg(long, global = true)]
    pub sog_epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub window_len: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true)]
    pub percentile: Option<f64>,
    #[arg(long, global = true)]
    pub high_cut: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub n_trees: Option<usize>,
    #[arg(long, global = true)]
    pub perplexity: Option<f64>,
    #[arg(long, global = true)]
    pub tsne_iters: Option<usize>,
    #[arg(long, global = true)]
    pub max_points: Option<usize>,
    #[arg(long, global = true)]
    pub duration_seconds: Option<u64>,
    /// Anomaly windows: kind:start:length[,...] with kind propeller|stress.
    #[arg(long, global = true)]
    pub windows: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic telemetry and ground truth
    Synth,
    /// Preprocess, train, calibrate, and persist a detector
    Train,
    /// Score telemetry with a persisted model and emit verdicts
    Detect,
    /// Fit the interpretable surrogate and extract rules
    Explain,
    /// Project scored points onto the 2-D t-SNE map
    Embed,
    /// Consolidate previous outputs into one Markdown report
    Report,
}

impl Cli {
    pub fn into_config(self) -> Result<(RunConfig, Command)> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(seed);
        set!(cadence_seconds);
        set!(sog_epsilon);
        set!(window_len);
        set!(stride);
        set!(percentile);
        set!(high_cut);
        set!(epochs);
        set!(batch_size);
        set!(learning_rate);
        set!(max_depth);
        set!(n_trees);
        set!(perplexity);
        set!(tsne_iters);
        set!(max_points);
        set!(duration_seconds);
        if let Some(s) = &self.detector {
            cfg.detector = parse_detector_kind(s)?;
        }
        if let Some(s) = &self.windows {
            cfg.windows = parse_windows(s)?;
        }
        if let Some(p) = self.out {
            cfg.out_dir = p;
        }
        if let Some(p) = self.model {
            cfg.model_path = Some(p);
        }
        if let Some(p) = self.input {
            cfg.input = Some(p);
        }
        if let Some(p) = self.truth {
            cfg.truth = Some(p);
        }
        cfg.validate()?;
        Ok((cfg, self.command))
    }
}

/// Process entry point; returns the exit code.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    match cli.into_config().and_then(|(cfg, command)| dispatch(&cfg, &command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cfg: &RunConfig, command: &Command) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    match command {
        Command::Synth => cmd_synth(cfg),
        Command::Train => cmd_train(cfg),
        Command::Detect => cmd_detect(cfg),
        Command::Explain => cmd_explain(cfg),
        Command::Embed => cmd_embed(cfg),
        Command::Report => cmd_report(cfg),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn write_artifact(path: &Path, contents: &str) -> Result<(String, u32)> {
    std::fs::write(path, contents)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok((name, crc32(contents.bytes())))
}

/// Merges one section plus its file checksums into `run_report.json`.
fn update_report(cfg: &RunConfig, section: &str, body: Value, files: &[(String, u32)]) -> Result<()> {
    let path = cfg.out_dir.join("run_report.json");
    let mut report: Value = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("run_report.json is corrupt: {e}")))?,
        Err(_) => json!({}),
    };
    report["config"] = cfg.echo();
    report["sections"][section] = body;
    for (name, checksum) in files {
        report["manifest"][name] = json!(format!("{checksum:08x}"));
    }
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Parse, resample, and filter the input telemetry. Returns the series plus
/// (rows resampled, rows dropped by the inactive filter).
fn load_series(cfg: &RunConfig) -> Result<(FrameSeries, usize, usize)> {
    let path = cfg.input_path();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let records = ingest::parse_telemetry(&text)?;
    let resampled = ingest::resample_mean(&records, cfg.cadence_seconds)?;
    let filtered = ingest::filter_inactive(&resampled, cfg.sog_epsilon);
    let dropped = resampled.len() - filtered.len();
    Ok((filtered, resampled.len(), dropped))
}

fn series_to_csv(series: &FrameSeries) -> String {
    let mut out = String::from(ingest::TELEMETRY_HEADER);
    out.push('\n');
    for frame in &series.frames {
        out.push_str(&ingest::format_timestamp(frame.timestamp));
        for v in &frame.values {
            out.push(',');
            if let Some(x) = v {
                out.push_str(&x.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn parse_truth(text: &str) -> Result<Vec<(i64, bool)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRUTH_HEADER => {}
        _ => return Err(Error::Schema(format!("truth CSV must start with '{TRUTH_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (ts, flag) = line.split_once(',').ok_or(Error::Parse {
            line: i + 1,
            message: "expected 'timestamp,is_anomaly'".into(),
        })?;
        let seconds = ingest::parse_timestamp(ts.trim()).ok_or(Error::Parse {
            line: i + 1,
            message: format!("bad timestamp '{ts}'"),
        })? as i64;
        let flag = match flag.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("is_anomaly must be 0 or 1, got '{other}'"),
                })
            }
        };
        out.push((seconds, flag));
    }
    Ok(out)
}

fn load_truth(path: &Path) -> Result<Vec<(i64, bool)>> {
    parse_truth(&std::fs::read_to_string(path)?)
}

fn verdict_csv(verdicts: &[AnomalyVerdict]) -> String {
    let mut out = String::from(VERDICT_HEADER);
    out.push('\n');
    for v in verdicts {
        out.push_str(&format!(
            "{},{},{}\n",
            ingest::format_timestamp(v.timestamp),
            v.score,
            v.label.as_csv()
        ));
    }
    out
}

fn label_counts(verdicts: &[AnomalyVerdict]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for v in verdicts {
        counts[v.label.index()] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    if cfg.duration_seconds == 0 {
        return Err(Error::Scenario("duration_seconds must be > 0".into()));
    }
    let spec = ScenarioSpec {
        duration_seconds: cfg.duration_seconds,
        seed: cfg.seed,
        cadence_seconds: cfg.cadence_seconds,
        anomaly_windows: cfg.windows.clone(),
    };
    let labeled = synth::generate(&spec)?;

    let telemetry = series_to_csv(&labeled.series);
    let mut truth = String::from(TRUTH_HEADER);
    truth.push('\n');
    for (frame, &flag) in labeled.series.frames.iter().zip(&labeled.truth) {
        truth.push_str(&format!(
            "{},{}\n",
            ingest::format_timestamp(frame.timestamp),
            if flag { 1 } else { 0 }
        ));
    }
    let f1 = write_artifact(&cfg.out_dir.join("telemetry.csv"), &telemetry)?;
    let f2 = write_artifact(&cfg.out_dir.join("truth.csv"), &truth)?;

    let anomalous = labeled.truth.iter().filter(|&&t| t).count();
    println!(
        "synth: {} frames, {} anomalous ({} windows)",
        labeled.series.len(),
        anomalous,
        cfg.windows.len()
    );
    update_report(
        cfg,
        "synth",
        json!({
            "frames": labeled.series.len(),
            "anomalous_frames": anomalous,
            "windows": cfg.windows.len(),
        }),
        &[f1, f2],
    )
}

/// Length-L windows over a frame series segment, as LSTM training mats.
fn series_windows(
    series: &FrameSeries,
    scaler: &ingest::Scaler,
    cfg: &RunConfig,
) -> Result<Vec<detector::Window>> {
    let matrix = ingest::apply_scaler(scaler, series, 0.0);
    detector::make_windows(
        &matrix,
        &series.timestamps(),
        series.cadence_seconds,
        cfg.window_len,
        cfg.stride,
    )
}

fn slice_series(series: &FrameSeries, range: std::ops::Range<usize>) -> FrameSeries {
    FrameSeries {
        frames: series.frames[range].to_vec(),
        cadence_seconds: series.cadence_seconds,
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (series, resampled, dropped) = load_series(cfg)?;
    if series.is_empty() {
        return Err(Error::EmptyInput("no active frames after filtering".into()));
    }
    // chronological split: first 90% trains, the final 10% validates
    let split = (series.len() * 9) / 10;
    if split == 0 {
        return Err(Error::InsufficientData("fewer than 10 usable frames".into()));
    }
    let train_series = slice_series(&series, 0..split);
    let val_series = slice_series(&series, split..series.len());
    let scaler = ingest::fit_scaler(&train_series)?;

    if cfg.epochs == 0 {
        println!("warning: epochs = 0; persisting an untrained model");
    }
    let train_config = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        shuffle: true,
    };
    let mut init_rng = Rng::for_role(cfg.seed, role::NN_INIT);

    let (model, history, train_scores, final_loss) = match cfg.detector {
        DetectorKind::Vanilla => {
            let train_mat = ingest::apply_scaler(&scaler, &train_series, 0.0);
            let dataset = Dataset::Rows(train_mat.clone());
            let val = if val_series.is_empty() {
                None
            } else {
                Some(Dataset::Rows(ingest::apply_scaler(&scaler, &val_series, 0.0)))
            };
            let mut model = VanillaAe::new(&mut init_rng);
            let history = nn::train(&mut model, &dataset, val.as_ref(), &train_config)?;
            let scores = detector::row_scores(&model, &train_mat)?;
            let final_loss = model.loss(&dataset.gather(&(0..dataset.len()).collect::<Vec<_>>()))?;
            (DetectorModel::Vanilla(model), history, scores, final_loss)
        }
        DetectorKind::Lstm => {
            let windows = series_windows(&train_series, &scaler, cfg)?;
            let dataset = Dataset::Windows(windows.iter().map(|w| w.mat.clone()).collect());
            let val = series_windows(&val_series, &scaler, cfg)
                .ok()
                .map(|ws| Dataset::Windows(ws.into_iter().map(|w| w.mat).collect()));
            let mut model = LstmAe::new(cfg.window_len, &mut init_rng);
            let history = nn::train(&mut model, &dataset, val.as_ref(), &train_config)?;
            let scores = detector::window_scores(&model, &windows)?;
            let final_loss = model.loss(&dataset.gather(&(0..dataset.len()).collect::<Vec<_>>()))?;
            (DetectorModel::Lstm(model), history, scores, final_loss)
        }
    };
    for (i, loss) in history.train_loss.iter().enumerate() {
        match history.val_loss.get(i) {
            Some(v) => println!("epoch {}/{}: train {loss:.6} val {v:.6}", i + 1, cfg.epochs),
            None => println!("epoch {}/{}: train {loss:.6}", i + 1, cfg.epochs),
        }
    }

    let tau = calibrate_threshold(&train_scores, cfg.percentile)?;
    let thresholds = Thresholds { tau, high_cut: cfg.high_cut };
    let mut warnings = Vec::new();
    if let Some(w) = thresholds.warning() {
        println!("warning: {w}");
        warnings.push(w);
    }
    println!("calibrated tau = {tau} (p{} of {} training scores)", cfg.percentile, train_scores.len());

    let params = ModelParams {
        model,
        scaler,
        thresholds,
        training: TrainingMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            final_loss,
        },
        window_len: cfg.window_len,
        stride: cfg.stride,
    };
    let model_path = cfg.model_path();
    detector::save_model(&params, &model_path)?;
    let model_text = std::fs::read_to_string(&model_path)?;
    let model_file = (
        model_path.file_name().unwrap().to_string_lossy().into_owned(),
        crc32(model_text.bytes()),
    );

    update_report(
        cfg,
        "train",
        json!({
            "rows_resampled": resampled,
            "rows_dropped": dropped,
            "rows_trained": train_series.len(),
            "rows_validation": val_series.len(),
            "train_loss": history.train_loss,
            "val_loss": history.val_loss,
            "tau": tau,
            "warnings": warnings,
        }),
        &[model_file],
    )
}

fn render_timeseries_svg(verdicts: &[AnomalyVerdict], thresholds: &Thresholds) -> String {
    const W: f64 = 1000.0;
    const H: f64 = 300.0;
    const MARGIN: f64 = 30.0;
    let n = verdicts.len();
    let (t0, t1) = if n == 0 {
        (0.0, 1.0)
    } else {
        (verdicts[0].timestamp as f64, verdicts[n - 1].timestamp.max(verdicts[0].timestamp + 1) as f64)
    };
    let smax = verdicts
        .iter()
        .map(|v| v.score)
        .fold(thresholds.high_cut, f64::max)
        .max(1e-12);
    let sx = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (W - 2.0 * MARGIN);
    let sy = |s: f64| H - MARGIN - (s / smax) * (H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (score, color) in [(thresholds.tau, "#ff9800"), (thresholds.high_cut, "#e53935")] {
        svg.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" \
             stroke-dasharray=\"4 3\"/>\n",
            W - MARGIN,
            y = sy(score)
        ));
    }
    if n > 0 {
        let mut points = String::new();
        for v in verdicts {
            points.push_str(&format!("{:.2},{:.2} ", sx(v.timestamp as f64), sy(v.score)));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#607d8b\" stroke-width=\"1\"/>\n",
            points.trim_end()
        ));
    }
    for v in verdicts.iter().filter(|v| v.label != Label::Normal) {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>\n",
            sx(v.timestamp as f64),
            sy(v.score),
            embed::LABEL_COLORS[v.label.index()]
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn cmd_detect(cfg: &RunConfig) -> Result<()> {
    let params = detector::load_model(&cfg.model_path())?;
    let (series, resampled, dropped) = load_series(cfg)?;
    let verdicts = detector::verdicts(&params, &series)?;
    let counts = label_counts(&verdicts);
    let non_normal = counts[1] + counts[2];
    let fraction = if verdicts.is_empty() {
        0.0
    } else {
        non_normal as f64 / verdicts.len() as f64
    };

    let f1 = write_artifact(&cfg.out_dir.join("verdicts.csv"), &verdict_csv(&verdicts))?;
    let svg = render_timeseries_svg(&verdicts, &params.thresholds);
    let f2 = write_artifact(&cfg.out_dir.join("timeseries.svg"), &svg)?;

    println!(
        "detect: {} verdicts — normal {}, potential {}, high {} (flag rate {:.4})",
        verdicts.len(),
        counts[0],
        counts[1],
        counts[2],
        fraction
    );

    let mut body = json!({
        "rows_resampled": resampled,
        "rows_dropped": dropped,
        "verdicts": verdicts.len(),
        "counts": {"normal": counts[0], "potential": counts[1], "high": counts[2]},
        "non_normal_fraction": fraction,
        "tau": params.thresholds.tau,
        "high_cut": params.thresholds.high_cut,
    });
    if let Some(truth_path) = &cfg.truth {
        let truth = load_truth(truth_path)?;
        let metrics = detector::evaluate(&verdicts, &truth, 60);
        println!(
            "metrics: precision {:.4} recall {:.4} f1 {:.4} (tp {}, fp {}, truth {})",
            metrics.precision,
            metrics.recall,
            metrics.f1,
            metrics.true_positives,
            metrics.false_positives,
            metrics.total_truth
        );
        if metrics.no_detections {
            println!("warning: no detections; precision reported as 0 by convention");
        }
        body["metrics"] = serde_json::to_value(&metrics)?;
    }
    update_report(cfg, "detect", body, &[f1, f2])
}

fn cmd_explain(cfg: &RunConfig) -> Result<()> {
    let params = detector::load_model(&cfg.model_path())?;
    let (series, _, _) = load_series(cfg)?;
    let verdicts = detector::verdicts(&params, &series)?;
    let samples = surrogate::build_samples(&series, &verdicts)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no verdicts to explain".into()));
    }

    let forest_spec = ForestSpec { n_trees: cfg.n_trees, seed: cfg.seed, ..Default::default() };
    let forest = surrogate::fit_forest(&samples, &forest_spec)?;
    let importance = surrogate::feature_importance(&forest);
    let mut warnings = Vec::new();
    if let Some(w) = &importance.warning {
        println!("warning: {w}");
        warnings.push(w.clone());
    }
    let selected =
        surrogate::select_features(&importance.scores, surrogate::DEFAULT_CUMULATIVE_IMPORTANCE);

    // restrict the tree to the selected features; conjunct indices map back
    // through `selected`
    let reduced: Vec<surrogate::SurrogateSample> = samples
        .iter()
        .map(|s| surrogate::SurrogateSample {
            features: selected.iter().map(|&f| s.features[f]).collect(),
            label: s.label,
        })
        .collect();
    let tree = surrogate::fit_tree(&reduced, cfg.max_depth, 1)?;
    let fidelity = surrogate::fidelity(&tree, &reduced)?;

    let rules = if matches!(tree, TreeNode::Leaf { .. }) {
        let w = "all verdicts share one label; surrogate is a single leaf, no rules extracted";
        println!("warning: {w}");
        warnings.push(w.into());
        Vec::new()
    } else {
        surrogate::extract_rules(&tree, 0.0)
    };
    let selected_names: Vec<&str> = selected.iter().map(|&f| FEATURE_NAMES[f]).collect();
    let mut rules_text = String::new();
    for (i, rule) in rules.iter().enumerate() {
        rules_text.push_str(&format!("{}) {}\n", i + 1, surrogate::render_rule(rule, &selected_names)));
    }
    let f1 = write_artifact(&cfg.out_dir.join("rules.txt"), &rules_text)?;
    let tree_doc = serde_json::to_string_pretty(&json!({
        "selected_features": selected_names,
        "tree": tree,
    }))?;
    let f2 = write_artifact(&cfg.out_dir.join("tree.json"), &tree_doc)?;

    println!(
        "explain: fidelity {fidelity:.4}, {} rules from {} selected features",
        rules.len(),
        selected.len()
    );
    for (name, score) in FEATURE_NAMES.iter().zip(&importance.scores) {
        println!("  importance {name} = {score:.4}");
    }

    update_report(
        cfg,
        "explain",
        json!({
            "fidelity": fidelity,
            "importances": importance.scores,
            "selected_features": selected_names,
            "rules": rules_text.lines().collect::<Vec<_>>(),
            "warnings": warnings,
        }),
        &[f1, f2],
    )
}

fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let params = detector::load_model(&cfg.model_path())?;
    let (series, _, _) = load_series(cfg)?;
    let verdicts = detector::verdicts(&params, &series)?;
    if verdicts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "t-SNE needs at least 4 scored points, got {}",
            verdicts.len()
        )));
    }
    // the detector's view of the data: normalized features at each verdict's
    // frame (window-end frame for the LSTM)
    let matrix = ingest::apply_scaler(&params.scaler, &series, 0.0);
    let index: std::collections::HashMap<i64, usize> = series
        .timestamps()
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, i))
        .collect();

    let picked: Vec<usize> = if verdicts.len() > cfg.max_points {
        (0..cfg.max_points).map(|i| i * verdicts.len() / cfg.max_points).collect()
    } else {
        (0..verdicts.len()).collect()
    };
    let mut x = Mat::zeros(picked.len(), matrix.cols);
    let mut labels = Vec::with_capacity(picked.len());
    let mut timestamps = Vec::with_capacity(picked.len());
    for (r, &vi) in picked.iter().enumerate() {
        let v = &verdicts[vi];
        let row = *index.get(&v.timestamp).ok_or_else(|| {
            Error::TimestampMismatch(format!("verdict at {} has no frame", v.timestamp))
        })?;
        x.data[r * matrix.cols..(r + 1) * matrix.cols].copy_from_slice(matrix.row(row));
        labels.push(v.label);
        timestamps.push(v.timestamp);
    }

    let tsne_config = TsneConfig {
        perplexity: cfg.perplexity,
        iters: cfg.tsne_iters,
        learning_rate: embed::DEFAULT_LEARNING_RATE,
        seed: cfg.seed,
    };
    let embedding = embed::tsne(&x, &labels, &timestamps, &tsne_config)?;
    embed::export_map(&embedding, &cfg.out_dir)?;
    let csv_text = std::fs::read_to_string(cfg.out_dir.join("embedding.csv"))?;
    let svg_text = std::fs::read_to_string(cfg.out_dir.join("embedding.svg"))?;
    let final_kl = embedding.kl_history.last().copied().unwrap_or(0.0);
    println!(
        "embed: {} points, final KL {final_kl:.4} (subsampled from {})",
        picked.len(),
        verdicts.len()
    );
    update_report(
        cfg,
        "embed",
        json!({
            "points": picked.len(),
            "scored": verdicts.len(),
            "final_kl": final_kl,
        }),
        &[
            ("embedding.csv".to_string(), crc32(csv_text.bytes())),
            ("embedding.svg".to_string(), crc32(svg_text.bytes())),
        ],
    )
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let path = cfg.out_dir.join("run_report.json");
    let report: Value = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("run_report.json is corrupt: {e}")))?,
        Err(_) => json!({}),
    };

    let mut md = String::from("# Run report\n\n");
    if let Some(config) = report.get("config") {
        md.push_str("## Configuration\n\n```\n");
        if let Some(map) = config.as_object() {
            for (k, v) in map {
                md.push_str(&format!("{k} = {v}\n"));
            }
        }
        md.push_str("```\n\n");
    }

    let sections: [(&str, &str); 5] = [
        ("synth", "Synthesis"),
        ("train", "Training"),
        ("detect", "Detection"),
        ("explain", "Explanation"),
        ("embed", "Embedding"),
    ];
    for (key, title) in sections {
        md.push_str(&format!("## {title}\n\n"));
        match report.get("sections").and_then(|s| s.get(key)) {
            None => md.push_str(&format!("_No `{key}` output found in this run directory._\n\n")),
            Some(body) => {
                if let Some(map) = body.as_object() {
                    for (k, v) in map {
                        md.push_str(&format!("- {k}: {v}\n"));
                    }
                }
                md.push('\n');
                if key == "detect" {
                    if let Some(fraction) =
                        body.get("non_normal_fraction").and_then(|v| v.as_f64())
                    {
                        if fraction > DRIFT_FLAG_RATE {
                            md.push_str(&format!(
                                "**Drift warning:** non-Normal fraction {fraction:.4} vs the \
                                 expected 0.05 calibration rate — review the detector against \
                                 recent data.\n\n"
                            ));
                        }
                    }
                }
                if let Some(warnings) = body.get("warnings").and_then(|w| w.as_array()) {
                    for w in warnings {
                        md.push_str(&format!("**Warning:** {}\n\n", w.as_str().unwrap_or("")));
                    }
                }
            }
        }
    }

    md.push_str("## Manifest\n\n");
    let manifest: BTreeMap<String, String> = report
        .get("manifest")
        .and_then(|m| m.as_object())
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().unwrap_or("").to_string()))
                .collect()
        })
        .unwrap_or_default();
    if manifest.is_empty() {
        md.push_str("_No artifacts recorded._\n");
    }
    for (name, recorded) in &manifest {
        let status = match std::fs::read(cfg.out_dir.join(name)) {
            Ok(bytes) => {
                let actual = format!("{:08x}", crc32(bytes.iter().copied()));
                if &actual == recorded { "ok" } else { "CHECKSUM MISMATCH" }
            }
            Err(_) => "missing",
        };
        md.push_str(&format!("- `{name}` crc32 {recorded} ({status})\n"));
    }

    write_artifact(&cfg.out_dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_contract() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.cadence_seconds, 10);
        assert_eq!(cfg.sog_epsilon, 0.05);
        assert_eq!(cfg.window_len, 13);
        assert_eq!(cfg.stride, 1);
        assert_eq!(cfg.percentile, 95.0);
        assert_eq!(cfg.high_cut, 0.05);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.max_depth, 5);
        assert_eq!(cfg.n_trees, 100);
        assert_eq!(cfg.perplexity, 30.0);
    }

    #[test]
    fn config_file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\nseed = 7\nepochs = 3   # trailing comment\ndetector = vanilla\n\
             windows = propeller:100:60,stress:400:120\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.detector, DetectorKind::Vanilla);
        assert_eq!(cfg.windows.len(), 2);
        assert_eq!(cfg.windows[1].kind, AnomalyKind::StressManeuver);
        assert_eq!(cfg.windows[1].start_seconds, 400);
    }

    #[test]
    fn unknown_key_is_param_error() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply("no_such_key", "1"), Err(Error::Param(_))));
        assert!(matches!(cfg.apply("epochs", "many"), Err(Error::Param(_))));
        assert!(matches!(parse_windows("propeller:1"), Err(Error::Param(_))));
        assert!(matches!(parse_windows("quake:1:2"), Err(Error::Param(_))));
        assert!(matches!(parse_detector_kind("cnn"), Err(Error::Param(_))));
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut cfg = RunConfig::default();
        cfg.percentile = 0.0;
        assert!(cfg.validate().is_err());
        cfg.percentile = 95.0;
        cfg.window_len = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn truth_round_trip() {
        let text = "timestamp,is_anomaly\n2024-01-01T00:00:00Z,0\n2024-01-01T00:00:10Z,1\n";
        let truth = parse_truth(text).unwrap();
        assert_eq!(truth.len(), 2);
        assert!(!truth[0].1);
        assert!(truth[1].1);
        assert_eq!(truth[1].0 - truth[0].0, 10);
        assert!(parse_truth("bogus\n").is_err());
        assert!(parse_truth("timestamp,is_anomaly\nnot-a-date,1\n").is_err());
    }

    #[test]
    fn telemetry_csv_round_trips_through_ingest() {
        let spec = ScenarioSpec::normal(1200, 5);
        let series = synth::generate_normal(&spec).unwrap().series;
        let text = series_to_csv(&series);
        let records = ingest::parse_telemetry(&text).unwrap();
        let resampled = ingest::resample_mean(&records, 10).unwrap();
        assert_eq!(resampled.len(), series.len());
        for (a, b) in resampled.frames.iter().zip(&series.frames) {
            assert_eq!(a.timestamp, b.timestamp);
            for (x, y) in a.values.iter().zip(&b.values) {
                match (x, y) {
                    (Some(x), Some(y)) => assert_eq!(x, y, "values must round-trip exactly"),
                    (None, None) => {}
                    other => panic!("null mismatch {other:?}"),
                }
            }
        }
    }

    #[test]
    fn verdict_csv_format() {
        let verdicts = vec![AnomalyVerdict {
            timestamp: 1_704_067_200,
            score: 0.0625,
            label: Label::HighScoreAnomaly,
        }];
        let text = verdict_csv(&verdicts);
        assert_eq!(text, "timestamp,score,label\n2024-01-01T00:00:00Z,0.0625,high\n");
    }
}
