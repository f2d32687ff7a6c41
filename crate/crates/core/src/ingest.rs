//! Telemetry parsing and preprocessing: resample to a fixed cadence, drop
//! inactive periods, min-max normalize.

use chrono::{DateTime, TimeZone, Utc};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// The eight vessel signals, in canonical column order.
pub const SIGNAL_NAMES: [&str; 8] = [
    "port_rpm",
    "stbd_rpm",
    "port_batt_v",
    "stbd_batt_v",
    "heading_true",
    "rate_of_turn",
    "sog",
    "rudder_angle",
];

pub const N_SIGNALS: usize = 8;

pub const SIG_PORT_RPM: usize = 0;
pub const SIG_STBD_RPM: usize = 1;
pub const SIG_PORT_BATT_V: usize = 2;
pub const SIG_STBD_BATT_V: usize = 3;
pub const SIG_HEADING_TRUE: usize = 4;
pub const SIG_RATE_OF_TURN: usize = 5;
pub const SIG_SOG: usize = 6;
pub const SIG_RUDDER_ANGLE: usize = 7;

/// One observed sample of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// Epoch seconds, fractional part allowed.
    pub timestamp: f64,
    /// Index into [`SIGNAL_NAMES`].
    pub signal: usize,
    pub value: f64,
}

/// One 10-second bin of per-signal means. `None` means no sample landed in
/// the bin for that signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    /// Bin start, epoch seconds.
    pub timestamp: i64,
    pub values: [Option<f64>; N_SIGNALS],
}

impl SignalFrame {
    pub fn all_null(&self) -> bool {
        self.values.iter().all(|v| v.is_none())
    }

    pub fn sog(&self) -> Option<f64> {
        self.values[SIG_SOG]
    }
}

/// Time-ordered frames on a uniform cadence grid. Timestamps are strictly
/// increasing multiples of the cadence; filtering may leave gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub frames: Vec<SignalFrame>,
    pub cadence_seconds: u32,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }
}

/// Per-feature min/max fitted on training data only.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub const TELEMETRY_HEADER: &str =
    "timestamp,port_rpm,stbd_rpm,port_batt_v,stbd_batt_v,heading_true,rate_of_turn,sog,rudder_angle";

pub fn parse_timestamp(s: &str) -> Option<f64> {
    let dt: DateTime<Utc> = DateTime::parse_from_rfc3339(s).ok()?.with_timezone(&Utc);
    Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9)
}

pub fn format_timestamp(epoch_seconds: i64) -> String {
    Utc.timestamp_opt(epoch_seconds, 0)
        .single()
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| format!("@{epoch_seconds}"))
}

/// Parses the telemetry CSV into per-signal records. Empty cells are nulls
/// and produce no record; row order is preserved.
pub fn parse_telemetry(csv_text: &str) -> Result<Vec<RawRecord>> {
    let mut lines = csv_text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("telemetry CSV has no header".into()))?;
    if header.trim_end() != TELEMETRY_HEADER {
        return Err(Error::Schema(format!(
            "unexpected header: '{}' (want '{}')",
            header.trim_end(),
            TELEMETRY_HEADER
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != N_SIGNALS + 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} cells, got {}", N_SIGNALS + 1, cells.len()),
            });
        }
        let ts = parse_timestamp(cells[0]).ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("malformed timestamp '{}'", cells[0]),
        })?;
        for (sig, cell) in cells[1..].iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed number '{cell}' in column {}", SIGNAL_NAMES[sig]),
            })?;
            records.push(RawRecord { timestamp: ts, signal: sig, value });
        }
    }
    Ok(records)
}

/// Bins records into `[k*cadence, (k+1)*cadence)` intervals anchored at the
/// Unix epoch and takes the per-signal arithmetic mean in each bin. Bins
/// between the first and last record with no samples are emitted all-null.
pub fn resample_mean(records: &[RawRecord], cadence_seconds: u32) -> Result<FrameSeries> {
    if cadence_seconds == 0 {
        return Err(Error::Param("cadence_seconds must be positive".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to resample".into()));
    }
    let cad = cadence_seconds as f64;
    let bin_of = |ts: f64| (ts / cad).floor() as i64;
    let first = records.iter().map(|r| bin_of(r.timestamp)).min().unwrap();
    let last = records.iter().map(|r| bin_of(r.timestamp)).max().unwrap();
    let n_bins = (last - first + 1) as usize;
    let mut sums = vec![[0.0f64; N_SIGNALS]; n_bins];
    let mut counts = vec![[0usize; N_SIGNALS]; n_bins];
    for r in records {
        let b = (bin_of(r.timestamp) - first) as usize;
        sums[b][r.signal] += r.value;
        counts[b][r.signal] += 1;
    }
    let frames = (0..n_bins)
        .map(|b| {
            let mut values = [None; N_SIGNALS];
            for s in 0..N_SIGNALS {
                if counts[b][s] > 0 {
                    values[s] = Some(sums[b][s] / counts[b][s] as f64);
                }
            }
            SignalFrame { timestamp: (first + b as i64) * cadence_seconds as i64, values }
        })
        .collect();
    Ok(FrameSeries { frames, cadence_seconds })
}

/// Drops frames that represent a non-functioning vessel (all signals null)
/// or a non-moving one (both battery voltages null and SOG below epsilon).
/// Order is preserved; the result may have timestamp gaps.
pub fn filter_inactive(series: &FrameSeries, sog_epsilon: f64) -> FrameSeries {
    let frames = series
        .frames
        .iter()
        .filter(|f| {
            if f.all_null() {
                return false;
            }
            let batteries_null =
                f.values[SIG_PORT_BATT_V].is_none() && f.values[SIG_STBD_BATT_V].is_none();
            let slow = matches!(f.sog(), Some(s) if s < sog_epsilon);
            !(batteries_null && slow)
        })
        .cloned()
        .collect();
    FrameSeries { frames, cadence_seconds: series.cadence_seconds }
}

/// Per-feature min/max over non-null values. Errors if any feature is
/// entirely null.
pub fn fit_scaler(series: &FrameSeries) -> Result<Scaler> {
    if series.is_empty() {
        return Err(Error::EmptyInput("cannot fit scaler on empty series".into()));
    }
    let mut min = vec![f64::INFINITY; N_SIGNALS];
    let mut max = vec![f64::NEG_INFINITY; N_SIGNALS];
    for f in &series.frames {
        for s in 0..N_SIGNALS {
            if let Some(v) = f.values[s] {
                min[s] = min[s].min(v);
                max[s] = max[s].max(v);
            }
        }
    }
    for s in 0..N_SIGNALS {
        if !min[s].is_finite() {
            return Err(Error::UnfittableFeature(SIGNAL_NAMES[s].into()));
        }
    }
    Ok(Scaler { min, max })
}

/// Min-max transform to a dense rows x 8 matrix. Degenerate features
/// (max == min) map to 0; nulls become `null_fill`. No clamping: out-of-range
/// test values land outside [0, 1] and that is anomaly evidence.
pub fn apply_scaler(scaler: &Scaler, series: &FrameSeries, null_fill: f64) -> Mat {
    let mut out = Mat::zeros(series.len(), N_SIGNALS);
    for (i, f) in series.frames.iter().enumerate() {
        for s in 0..N_SIGNALS {
            let x = match f.values[s] {
                Some(v) => {
                    let range = scaler.max[s] - scaler.min[s];
                    if range == 0.0 {
                        0.0
                    } else {
                        (v - scaler.min[s]) / range
                    }
                }
                None => null_fill,
            };
            *out.at_mut(i, s) = x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: i64, values: [Option<f64>; N_SIGNALS]) -> SignalFrame {
        SignalFrame { timestamp: ts, values }
    }

    #[test]
    fn parse_full_row_gives_eight_records() {
        let csv = format!(
            "{TELEMETRY_HEADER}\n2024-01-01T00:00:00Z,25.0,25.1,12.6,12.7,1.0,0.01,5.5,-0.02\n"
        );
        let recs = parse_telemetry(&csv).unwrap();
        assert_eq!(recs.len(), 8);
        assert_eq!(recs[0].signal, SIG_PORT_RPM);
        assert_eq!(recs[6].value, 5.5);
    }

    #[test]
    fn parse_skips_empty_cells() {
        let csv = format!(
            "{TELEMETRY_HEADER}\n2024-01-01T00:00:00Z,25.0,25.1,12.6,12.7,1.0,0.01,,-0.02\n"
        );
        let recs = parse_telemetry(&csv).unwrap();
        assert_eq!(recs.len(), 7);
        assert!(recs.iter().all(|r| r.signal != SIG_SOG));
    }

    #[test]
    fn parse_bad_timestamp_reports_line() {
        let csv = format!("{TELEMETRY_HEADER}\nnot-a-date,1,1,1,1,1,1,1,1\n");
        match parse_telemetry(&csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_unknown_header_is_schema_error() {
        let csv = "timestamp,bogus\n2024-01-01T00:00:00Z,1\n";
        assert!(matches!(parse_telemetry(csv), Err(Error::Schema(_))));
    }

    #[test]
    fn resample_means_two_samples() {
        let records = vec![
            RawRecord { timestamp: 1.0, signal: SIG_SOG, value: 2.0 },
            RawRecord { timestamp: 6.0, signal: SIG_SOG, value: 4.0 },
        ];
        let series = resample_mean(&records, 10).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series.frames[0].timestamp, 0);
        assert_eq!(series.frames[0].sog(), Some(3.0));
    }

    #[test]
    fn resample_single_sample_identity() {
        let records = vec![RawRecord { timestamp: 15.0, signal: SIG_PORT_RPM, value: 7.0 }];
        let series = resample_mean(&records, 10).unwrap();
        assert_eq!(series.frames[0].values[SIG_PORT_RPM], Some(7.0));
    }

    #[test]
    fn resample_emits_empty_bins() {
        let records = vec![
            RawRecord { timestamp: 0.0, signal: SIG_SOG, value: 1.0 },
            RawRecord { timestamp: 35.0, signal: SIG_SOG, value: 2.0 },
        ];
        let series = resample_mean(&records, 10).unwrap();
        assert_eq!(series.len(), 4);
        assert!(series.frames[1].all_null());
        assert!(series.frames[2].all_null());
    }

    #[test]
    fn resample_empty_is_error() {
        assert!(matches!(resample_mean(&[], 10), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn resample_idempotent_on_cadenced_series() {
        // one sample per bin, exactly on the grid
        let records: Vec<RawRecord> = (0..5)
            .map(|i| RawRecord { timestamp: (i * 10) as f64, signal: SIG_SOG, value: i as f64 })
            .collect();
        let series = resample_mean(&records, 10).unwrap();
        let back: Vec<RawRecord> = series
            .frames
            .iter()
            .map(|f| RawRecord {
                timestamp: f.timestamp as f64,
                signal: SIG_SOG,
                value: f.sog().unwrap(),
            })
            .collect();
        let series2 = resample_mean(&back, 10).unwrap();
        assert_eq!(series, series2);
    }

    #[test]
    fn filter_drops_all_null_and_non_moving() {
        let mut kept = [None; N_SIGNALS];
        kept[SIG_SOG] = Some(0.0);
        kept[SIG_PORT_BATT_V] = Some(12.5);
        let mut slow = [None; N_SIGNALS];
        slow[SIG_SOG] = Some(0.01);
        let series = FrameSeries {
            frames: vec![
                frame(0, [None; N_SIGNALS]),     // non-functioning
                frame(10, slow),                 // non-moving: batteries null, sog < eps
                frame(20, kept),                 // battery present, kept even at sog 0
            ],
            cadence_seconds: 10,
        };
        let out = filter_inactive(&series, 0.05);
        assert_eq!(out.len(), 1);
        assert_eq!(out.frames[0].timestamp, 20);
    }

    #[test]
    fn scaler_min_max_and_degenerate() {
        let mut f1 = [Some(7.0); N_SIGNALS];
        let mut f2 = [Some(7.0); N_SIGNALS];
        let mut f3 = [Some(7.0); N_SIGNALS];
        f1[SIG_SOG] = Some(0.0);
        f2[SIG_SOG] = Some(5.0);
        f3[SIG_SOG] = Some(10.0);
        let series = FrameSeries {
            frames: vec![frame(0, f1), frame(10, f2), frame(20, f3)],
            cadence_seconds: 10,
        };
        let scaler = fit_scaler(&series).unwrap();
        assert_eq!(scaler.min[SIG_SOG], 0.0);
        assert_eq!(scaler.max[SIG_SOG], 10.0);
        assert_eq!(scaler.min[SIG_PORT_RPM], 7.0);
        assert_eq!(scaler.max[SIG_PORT_RPM], 7.0);

        let m = apply_scaler(&scaler, &series, 0.0);
        assert_eq!(m.at(0, SIG_SOG), 0.0);
        assert_eq!(m.at(2, SIG_SOG), 1.0);
        // degenerate feature maps to 0
        assert_eq!(m.at(0, SIG_PORT_RPM), 0.0);
    }

    #[test]
    fn scaler_entirely_null_feature_is_error() {
        let mut v = [Some(1.0); N_SIGNALS];
        v[SIG_RUDDER_ANGLE] = None;
        let series = FrameSeries { frames: vec![frame(0, v)], cadence_seconds: 10 };
        match fit_scaler(&series) {
            Err(Error::UnfittableFeature(name)) => assert_eq!(name, "rudder_angle"),
            other => panic!("expected unfittable feature, got {other:?}"),
        }
    }

    #[test]
    fn no_clamping_out_of_range() {
        let mut lo = [Some(0.0); N_SIGNALS];
        let mut hi = [Some(10.0); N_SIGNALS];
        lo[SIG_SOG] = Some(0.0);
        hi[SIG_SOG] = Some(10.0);
        let train =
            FrameSeries { frames: vec![frame(0, lo), frame(10, hi)], cadence_seconds: 10 };
        let scaler = fit_scaler(&train).unwrap();
        let mut over = [Some(5.0); N_SIGNALS];
        over[SIG_SOG] = Some(12.0);
        let test = FrameSeries { frames: vec![frame(20, over)], cadence_seconds: 10 };
        let m = apply_scaler(&scaler, &test, 0.0);
        assert!((m.at(0, SIG_SOG) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn scaler_round_trip_recovers_inputs() {
        let mut rng = crate::rng::Rng::new(11);
        let frames: Vec<SignalFrame> = (0..50)
            .map(|i| {
                let mut values = [None; N_SIGNALS];
                for v in values.iter_mut() {
                    *v = Some(rng.uniform(-3.0, 9.0));
                }
                frame(i * 10, values)
            })
            .collect();
        let series = FrameSeries { frames, cadence_seconds: 10 };
        let scaler = fit_scaler(&series).unwrap();
        let m = apply_scaler(&scaler, &series, 0.0);
        for (i, f) in series.frames.iter().enumerate() {
            for s in 0..N_SIGNALS {
                let orig = f.values[s].unwrap();
                let rec = m.at(i, s) * (scaler.max[s] - scaler.min[s]) + scaler.min[s];
                assert!((rec - orig).abs() <= 1e-12 * orig.abs().max(1.0));
            }
        }
    }
}
