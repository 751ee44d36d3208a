//! Ingestion and preprocessing of wrist-worn EDA/BVP/TEMP recordings.
//!
//! A [`SignalSession`] is smoothed, upsampled to a common rate, cropped to the
//! channels' shared time range and min-max scaled into a
//! [`PreprocessedSession`], which is then cut into a [`WindowSet`] of fixed
//! length windows that each sit inside a single label interval.

mod filters;
mod io;
mod windows;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use filters::{min_max_scale, savgol_coefficients, savitzky_golay, upsample};
pub use io::{ingest_e4_csv, read_labels, write_e4_csv, WindowCache, CACHE_FORMAT};
pub use windows::{label_runs, make_windows, window_count, WindowSet};

pub const TARGET_RATE_HZ: f64 = 64.0;
pub const CHANNELS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: malformed sample-rate line `{line}`")]
    MalformedRate { path: PathBuf, line: String },
    #[error("{path}:{line}: malformed value `{text}`")]
    MalformedValue { path: PathBuf, line: usize, text: String },
    #[error("intervals overlap: {first} and {second}")]
    OverlappingIntervals { first: String, second: String },
    #[error("invalid interval {0}")]
    InvalidInterval(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("cannot resample {from} Hz to {to} Hz: ratio is not an integer")]
    NonIntegerRatio { from: f64, to: f64 },
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(f64),
    #[error("session is missing channel {0}")]
    MissingChannel(ChannelKind),
    #[error("channel {0} has no samples")]
    EmptyChannel(ChannelKind),
    #[error("channels do not overlap in time")]
    NoOverlap,
    #[error("window length {delta} exceeds every labeled run (longest is {longest})")]
    NoWindows { delta: usize, longest: usize },
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "BVP")]
    Bvp,
    #[serde(rename = "TEMP")]
    Temp,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::Eda, ChannelKind::Bvp, ChannelKind::Temp];

    pub fn file_stem(self) -> &'static str {
        match self {
            ChannelKind::Eda => "EDA",
            ChannelKind::Bvp => "BVP",
            ChannelKind::Temp => "TEMP",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    /// Seconds since the session origin.
    pub start_time: f64,
}

impl Channel {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
}

impl fmt::Display for LabelInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}, {})", self.label, self.t_start, self.t_end)
    }
}

/// Sorts intervals and rejects empty or overlapping ones.
pub fn validate_intervals(intervals: &mut [LabelInterval]) -> Result<(), SignalError> {
    for iv in intervals.iter() {
        if !(iv.t_start < iv.t_end) || !iv.t_start.is_finite() || !iv.t_end.is_finite() {
            return Err(SignalError::InvalidInterval(iv.to_string()));
        }
    }
    intervals.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    for pair in intervals.windows(2) {
        if pair[1].t_start < pair[0].t_end {
            return Err(SignalError::OverlappingIntervals {
                first: pair[0].to_string(),
                second: pair[1].to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedingMode {
    #[default]
    Contextual,
    SelfReported,
}

/// One subject's raw recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSession {
    pub subject_id: String,
    pub channels: Vec<Channel>,
    pub intervals: Vec<LabelInterval>,
    pub seeding_mode: SeedingMode,
}

impl SignalSession {
    pub fn channel(&self, kind: ChannelKind) -> Result<&Channel, SignalError> {
        self.channels
            .iter()
            .find(|c| c.kind == kind)
            .ok_or(SignalError::MissingChannel(kind))
    }

    /// Sorted distinct interval labels; a label's position is its class id.
    pub fn class_names(&self) -> Vec<String> {
        class_names(&self.intervals)
    }
}

pub(crate) fn class_names(intervals: &[LabelInterval]) -> Vec<String> {
    let mut names: Vec<String> = intervals.iter().map(|i| i.label.clone()).collect();
    names.sort();
    names.dedup();
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub sg_window: usize,
    pub sg_order: usize,
    pub target_hz: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            sg_window: 11,
            sg_order: 1,
            target_hz: TARGET_RATE_HZ,
        }
    }
}

/// A session resampled to one rate, cropped to a common time range and
/// scaled per channel into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedSession {
    pub subject_id: String,
    pub seeding_mode: SeedingMode,
    pub sample_rate_hz: f64,
    /// Time of sample 0, seconds since the session origin.
    pub start_time: f64,
    /// Row-major `(samples, 3)` in EDA, BVP, TEMP order.
    pub signal: Vec<f64>,
    pub intervals: Vec<LabelInterval>,
    pub class_names: Vec<String>,
}

impl PreprocessedSession {
    pub fn len(&self) -> usize {
        self.signal.len() / CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn channel(&self, kind: ChannelKind) -> Vec<f64> {
        let c = ChannelKind::ALL.iter().position(|&k| k == kind).unwrap();
        self.signal.iter().skip(c).step_by(CHANNELS).copied().collect()
    }
}

/// Smooth the slow channels at their native rate, upsample everything to
/// the target rate, crop to the shared time range and min-max scale.
pub fn preprocess(session: &SignalSession, opts: &PreprocessOptions) -> Result<PreprocessedSession, SignalError> {
    let mut intervals = session.intervals.clone();
    validate_intervals(&mut intervals)?;
    let mut resampled = Vec::with_capacity(CHANNELS);
    for kind in ChannelKind::ALL {
        let raw = session.channel(kind)?;
        if raw.samples.is_empty() {
            return Err(SignalError::EmptyChannel(kind));
        }
        if !(raw.sample_rate_hz == 4.0 || raw.sample_rate_hz == 64.0) {
            return Err(SignalError::UnsupportedRate(raw.sample_rate_hz));
        }
        let mut ch = raw.clone();
        if kind != ChannelKind::Bvp {
            ch.samples = savitzky_golay(&ch.samples, opts.sg_window, opts.sg_order)?;
        }
        resampled.push(upsample(&ch, opts.target_hz)?);
    }

    let start = resampled.iter().map(|c| c.start_time).fold(f64::NEG_INFINITY, f64::max);
    let end = resampled
        .iter()
        .map(|c| c.start_time + c.duration())
        .fold(f64::INFINITY, f64::min);
    if !(end > start) {
        return Err(SignalError::NoOverlap);
    }
    let offsets: Vec<usize> = resampled
        .iter()
        .map(|c| ((start - c.start_time) * opts.target_hz).round().max(0.0) as usize)
        .collect();
    let len = resampled
        .iter()
        .zip(&offsets)
        .map(|(c, &o)| c.samples.len().saturating_sub(o))
        .min()
        .unwrap_or(0);
    if len == 0 {
        return Err(SignalError::NoOverlap);
    }
    let scaled: Vec<Vec<f64>> = resampled
        .iter()
        .zip(&offsets)
        .map(|(c, &o)| min_max_scale(&c.samples[o..o + len]))
        .collect();
    let mut signal = Vec::with_capacity(len * CHANNELS);
    for i in 0..len {
        signal.extend(scaled.iter().map(|c| c[i]));
    }
    Ok(PreprocessedSession {
        subject_id: session.subject_id.clone(),
        seeding_mode: session.seeding_mode,
        sample_rate_hz: opts.target_hz,
        start_time: start,
        signal,
        class_names: class_names(&intervals),
        intervals,
    })
}
