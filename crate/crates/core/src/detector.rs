//! Detector lifecycle: window the data, score reconstruction errors,
//! calibrate the percentile threshold, classify into the three bands, and
//! evaluate against ground truth. Also owns model persistence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FrameSeries, Scaler, N_SIGNALS};
use crate::mat::Mat;
use crate::nn::{LstmAe, Model, VanillaAe};
use crate::rng::Rng;

/// Published reference thresholds, kept as regression constants. These were
/// calibrated on the original vessel data; fresh calibration always
/// recomputes tau from the actual training scores.
pub const REFERENCE_TAU_LSTM: f64 = 0.036;
pub const REFERENCE_TAU_VANILLA: f64 = 0.013;
/// Unified high-score cutoff shared by both detectors.
pub const DEFAULT_HIGH_CUT: f64 = 0.05;

pub const DEFAULT_WINDOW_LEN: usize = 13;
pub const DEFAULT_STRIDE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    PotentialAnomaly,
    HighScoreAnomaly,
}

impl Label {
    pub fn as_csv(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::PotentialAnomaly => "potential",
            Label::HighScoreAnomaly => "high",
        }
    }

    /// Rendering used in surrogate rule text.
    pub fn as_rule_text(&self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::PotentialAnomaly => "Potential Anomaly",
            Label::HighScoreAnomaly => "High-Score Anomaly",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Label::Normal => 0,
            Label::PotentialAnomaly => 1,
            Label::HighScoreAnomaly => 2,
        }
    }

    pub fn from_index(i: usize) -> Label {
        match i {
            0 => Label::Normal,
            1 => Label::PotentialAnomaly,
            _ => Label::HighScoreAnomaly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau: f64,
    pub high_cut: f64,
}

impl Thresholds {
    /// The three-band scheme needs tau <= high_cut; a violation is reported
    /// as a calibration warning, never silently.
    pub fn warning(&self) -> Option<String> {
        if self.tau > self.high_cut {
            Some(format!(
                "calibrated tau {} exceeds high-score cutoff {}; the potential band is empty",
                self.tau, self.high_cut
            ))
        } else if self.tau < 0.0 {
            Some(format!("calibrated tau {} is negative", self.tau))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyVerdict {
    /// Epoch seconds. For the LSTM detector this is the window's last frame.
    pub timestamp: i64,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Vanilla,
    Lstm,
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectorKind::Vanilla => write!(f, "vanilla"),
            DetectorKind::Lstm => write!(f, "lstm"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DetectorModel {
    Vanilla(VanillaAe),
    Lstm(LstmAe),
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Vanilla(_) => DetectorKind::Vanilla,
            DetectorModel::Lstm(_) => DetectorKind::Lstm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub final_loss: f64,
}

/// Everything needed to reproduce a detector's verdicts.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub model: DetectorModel,
    pub scaler: Scaler,
    pub thresholds: Thresholds,
    pub training: TrainingMeta,
    /// Window length and stride; only meaningful for the LSTM detector.
    pub window_len: usize,
    pub stride: usize,
}

/// A sliding window over contiguous rows, attributed to its last frame.
#[derive(Debug, Clone)]
pub struct Window {
    pub mat: Mat,
    pub end_timestamp: i64,
}

/// Cuts length-L windows out of each contiguous segment of the series.
/// Windows never span timestamp gaps left by filtering.
pub fn make_windows(
    matrix: &Mat,
    timestamps: &[i64],
    cadence_seconds: u32,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Param("stride must be >= 1".into()));
    }
    if window_len == 0 {
        return Err(Error::Param("window length must be >= 1".into()));
    }
    if matrix.rows != timestamps.len() {
        return Err(Error::Shape("make_windows: matrix rows != timestamps".into()));
    }
    let cad = cadence_seconds as i64;
    let mut windows = Vec::new();
    let mut seg_start = 0usize;
    let n = matrix.rows;
    for i in 0..=n {
        let boundary = i == n || (i > 0 && timestamps[i] - timestamps[i - 1] != cad);
        if !boundary {
            continue;
        }
        let seg_len = i - seg_start;
        if seg_len >= window_len {
            let mut start = seg_start;
            while start + window_len <= i {
                let mut w = Mat::zeros(window_len, matrix.cols);
                for (r, src) in (start..start + window_len).enumerate() {
                    w.data[r * matrix.cols..(r + 1) * matrix.cols]
                        .copy_from_slice(matrix.row(src));
                }
                windows.push(Window { mat: w, end_timestamp: timestamps[start + window_len - 1] });
                start += stride;
            }
        }
        seg_start = i;
    }
    if windows.is_empty() && n > 0 {
        return Err(Error::InsufficientData(format!(
            "no contiguous segment holds a full window of {window_len} rows"
        )));
    }
    Ok(windows)
}

/// Per-row MSE for the vanilla detector. Inputs must already be normalized
/// with the model's scaler.
pub fn row_scores(model: &VanillaAe, inputs: &Mat) -> Result<Vec<f64>> {
    if inputs.cols != model.input_dim() {
        return Err(Error::Shape(format!(
            "row_scores: {} features vs model input {}",
            inputs.cols,
            model.input_dim()
        )));
    }
    if inputs.rows == 0 {
        return Ok(Vec::new());
    }
    let recon = model.forward(inputs)?;
    let mut out = Vec::with_capacity(inputs.rows);
    for i in 0..inputs.rows {
        let mut acc = 0.0;
        for (a, b) in recon.row(i).iter().zip(inputs.row(i)) {
            acc += (a - b) * (a - b);
        }
        out.push(acc / inputs.cols as f64);
    }
    Ok(out)
}

/// Per-window MSE over all L x features elements for the LSTM detector.
/// Windows are scored in fixed-size batches for throughput.
pub fn window_scores(model: &LstmAe, windows: &[Window]) -> Result<Vec<f64>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(windows.len());
    let feat = model.input_dim();
    for chunk in windows.chunks(CHUNK) {
        let n = chunk.len();
        let mut steps = vec![Mat::zeros(n, feat); model.seq_len];
        for (bi, w) in chunk.iter().enumerate() {
            if w.mat.rows != model.seq_len || w.mat.cols != feat {
                return Err(Error::Shape(format!(
                    "window_scores: window is {}x{}, model wants {}x{feat}",
                    w.mat.rows, w.mat.cols, model.seq_len
                )));
            }
            for t in 0..model.seq_len {
                steps[t].data[bi * feat..(bi + 1) * feat].copy_from_slice(w.mat.row(t));
            }
        }
        let recon = model.forward(&steps)?;
        for (bi, _) in chunk.iter().enumerate() {
            let mut acc = 0.0;
            for t in 0..model.seq_len {
                for (a, b) in recon[t].row(bi).iter().zip(steps[t].row(bi)) {
                    acc += (a - b) * (a - b);
                }
            }
            out.push(acc / (model.seq_len * feat) as f64);
        }
    }
    Ok(out)
}

/// Nearest-rank percentile: value at index ceil(p/100 * n) (1-based) of the
/// ascending-sorted scores.
pub fn calibrate_threshold(train_scores: &[f64], percentile: f64) -> Result<f64> {
    if train_scores.is_empty() {
        return Err(Error::EmptyInput("no scores to calibrate on".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Param(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut sorted = train_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Three-band scheme: above the unified cutoff is a high-score anomaly,
/// between tau and the cutoff a potential anomaly, at or below tau normal.
pub fn classify(score: f64, thresholds: &Thresholds) -> Label {
    if score > thresholds.high_cut {
        Label::HighScoreAnomaly
    } else if score > thresholds.tau {
        Label::PotentialAnomaly
    } else {
        Label::Normal
    }
}

/// Full inference pipeline: normalize, window when needed, score, classify.
pub fn verdicts(params: &ModelParams, series: &FrameSeries) -> Result<Vec<AnomalyVerdict>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    if params.scaler.min.len() != N_SIGNALS {
        return Err(Error::Shape(format!(
            "scaler has {} features, expected {N_SIGNALS}",
            params.scaler.min.len()
        )));
    }
    let matrix = crate::ingest::apply_scaler(&params.scaler, series, 0.0);
    let timestamps = series.timestamps();
    match &params.model {
        DetectorModel::Vanilla(m) => {
            let scores = row_scores(m, &matrix)?;
            Ok(scores
                .into_iter()
                .zip(timestamps)
                .map(|(score, timestamp)| AnomalyVerdict {
                    timestamp,
                    score,
                    label: classify(score, &params.thresholds),
                })
                .collect())
        }
        DetectorModel::Lstm(m) => {
            let windows = make_windows(
                &matrix,
                &timestamps,
                series.cadence_seconds,
                params.window_len,
                params.stride,
            )?;
            let scores = window_scores(m, &windows)?;
            Ok(scores
                .into_iter()
                .zip(windows)
                .map(|(score, w)| AnomalyVerdict {
                    timestamp: w.end_timestamp,
                    score,
                    label: classify(score, &params.thresholds),
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub matched_truth: usize,
    pub total_truth: usize,
    /// Set when there were no detections at all; precision is reported as 0
    /// by convention in that case.
    pub no_detections: bool,
}

/// Event-tolerant matching: a non-Normal verdict is a detection; it is a
/// true positive iff some truth-true frame lies within +-tolerance of it.
/// Recall counts truth-true frames matched by at least one detection.
pub fn evaluate(
    verdicts: &[AnomalyVerdict],
    truth: &[(i64, bool)],
    tolerance_seconds: i64,
) -> Metrics {
    let mut truth_times: Vec<i64> =
        truth.iter().filter(|(_, t)| *t).map(|(ts, _)| *ts).collect();
    truth_times.sort_unstable();
    let mut detections: Vec<i64> = verdicts
        .iter()
        .filter(|v| v.label != Label::Normal)
        .map(|v| v.timestamp)
        .collect();
    detections.sort_unstable();

    let near = |sorted: &[i64], t: i64| -> bool {
        let idx = sorted.partition_point(|&x| x < t);
        (idx < sorted.len() && sorted[idx] - t <= tolerance_seconds)
            || (idx > 0 && t - sorted[idx - 1] <= tolerance_seconds)
    };

    let tp = detections.iter().filter(|&&d| near(&truth_times, d)).count();
    let fp = detections.len() - tp;
    let matched = truth_times.iter().filter(|&&t| near(&detections, t)).count();

    let no_detections = detections.is_empty();
    let precision = if no_detections { 0.0 } else { tp as f64 / detections.len() as f64 };
    let recall =
        if truth_times.is_empty() { 0.0 } else { matched as f64 / truth_times.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        matched_truth: matched,
        total_truth: truth_times.len(),
        no_detections,
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArchitectureFile {
    kind: DetectorKind,
    /// Dense widths for vanilla; [input, h1, h2] for LSTM.
    widths: Vec<usize>,
    window_len: usize,
    stride: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    role: String,
    shape: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    architecture: ArchitectureFile,
    scaler: Scaler,
    thresholds: Thresholds,
    layers: Vec<LayerFile>,
    training: TrainingMeta,
    checksum: u32,
}

/// CRC-32 (IEEE) over the canonical little-endian byte stream of all layer
/// weights in order.
fn weight_checksum(layers: &[LayerFile]) -> u32 {
    crc32(layers.iter().flat_map(|l| l.weights.iter()).flat_map(|w| w.to_le_bytes()))
}

/// CRC-32 (IEEE); used for the model weight checksum and file manifests.
pub fn crc32(bytes: impl IntoIterator<Item = u8>) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

fn layer_files(model: &DetectorModel) -> Vec<LayerFile> {
    match model {
        DetectorModel::Vanilla(m) => m
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut weights = Vec::with_capacity(l.param_count());
                l.write_params(&mut weights);
                LayerFile {
                    role: format!("dense_{i}"),
                    shape: vec![l.out_dim(), l.in_dim()],
                    weights,
                }
            })
            .collect(),
        DetectorModel::Lstm(m) => {
            let mk = |role: &str, l: &crate::nn::LstmLayer| {
                let mut weights = Vec::with_capacity(l.param_count());
                l.write_params(&mut weights);
                LayerFile {
                    role: role.into(),
                    shape: vec![l.hidden_dim(), l.input_dim()],
                    weights,
                }
            };
            let mut out_weights = Vec::with_capacity(m.out.param_count());
            m.out.write_params(&mut out_weights);
            vec![
                mk("lstm_encoder_1", &m.enc1),
                mk("lstm_encoder_2", &m.enc2),
                mk("lstm_decoder_1", &m.dec1),
                mk("lstm_decoder_2", &m.dec2),
                LayerFile {
                    role: "time_distributed_dense".into(),
                    shape: vec![m.out.out_dim(), m.out.in_dim()],
                    weights: out_weights,
                },
            ]
        }
    }
}

pub fn save_model(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    let layers = layer_files(&params.model);
    let architecture = match &params.model {
        DetectorModel::Vanilla(m) => {
            let mut widths = vec![m.input_dim()];
            widths.extend(m.layers.iter().map(|l| l.out_dim()));
            ArchitectureFile {
                kind: DetectorKind::Vanilla,
                widths,
                window_len: 1,
                stride: 1,
            }
        }
        DetectorModel::Lstm(m) => ArchitectureFile {
            kind: DetectorKind::Lstm,
            widths: vec![m.input_dim(), m.enc1.hidden_dim(), m.enc2.hidden_dim()],
            window_len: params.window_len,
            stride: params.stride,
        },
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        checksum: weight_checksum(&layers),
        architecture,
        scaler: params.scaler.clone(),
        thresholds: params.thresholds,
        layers,
        training: params.training.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let expect = weight_checksum(&file.layers);
    if expect != file.checksum {
        return Err(Error::ModelFormat(format!(
            "checksum mismatch: file says {:#010x}, weights hash to {expect:#010x}",
            file.checksum
        )));
    }
    if file.scaler.min.len() != N_SIGNALS || file.scaler.max.len() != N_SIGNALS {
        return Err(Error::ModelFormat(format!(
            "scaler width {} inconsistent with {N_SIGNALS}-feature architecture",
            file.scaler.min.len()
        )));
    }
    let mut flat: Vec<f64> = Vec::new();
    for l in &file.layers {
        flat.extend_from_slice(&l.weights);
    }
    let model = match file.architecture.kind {
        DetectorKind::Vanilla => {
            let mut m = VanillaAe::with_widths(&file.architecture.widths, &mut Rng::new(0));
            if m.param_count() != flat.len() {
                return Err(Error::ModelFormat(format!(
                    "weight count {} inconsistent with architecture ({} expected)",
                    flat.len(),
                    m.param_count()
                )));
            }
            m.set_params(&flat);
            DetectorModel::Vanilla(m)
        }
        DetectorKind::Lstm => {
            let w = &file.architecture.widths;
            if w.len() != 3 {
                return Err(Error::ModelFormat("lstm architecture needs 3 widths".into()));
            }
            let mut m =
                LstmAe::with_dims(w[0], w[1], w[2], file.architecture.window_len, &mut Rng::new(0));
            if m.param_count() != flat.len() {
                return Err(Error::ModelFormat(format!(
                    "weight count {} inconsistent with architecture ({} expected)",
                    flat.len(),
                    m.param_count()
                )));
            }
            m.set_params(&flat);
            DetectorModel::Lstm(m)
        }
    };
    Ok(ModelParams {
        model,
        scaler: file.scaler,
        thresholds: file.thresholds,
        training: file.training,
        window_len: file.architecture.window_len,
        stride: file.architecture.stride,
    })
}
