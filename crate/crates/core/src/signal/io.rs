//! E4-style CSV exports and the per-session window cache.
//!
//! Each channel file holds the start epoch (seconds) on line 1, the sample
//! rate on line 2 and one sample per line after that. `labels.csv` has the
//! header `label,t_start,t_end` with times relative to the session origin,
//! which is the earliest channel start.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    validate_intervals, Channel, ChannelKind, LabelInterval, PreprocessedSession, SeedingMode, SignalError,
    SignalSession, WindowSet,
};

pub const CACHE_FORMAT: &str = "deepseed-window-cache/v1";

fn read_text(path: &Path) -> Result<String, SignalError> {
    if !path.is_file() {
        return Err(SignalError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn first_field(line: &str) -> &str {
    line.split(',').next().unwrap_or("").trim()
}

fn read_channel(path: &Path, kind: ChannelKind) -> Result<(f64, Channel), SignalError> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let epoch_line = lines.next().unwrap_or("");
    let epoch: f64 = first_field(epoch_line).parse().map_err(|_| SignalError::MalformedValue {
        path: path.to_path_buf(),
        line: 1,
        text: epoch_line.to_string(),
    })?;
    let rate_line = lines.next().unwrap_or("");
    let rate: f64 = first_field(rate_line)
        .parse()
        .ok()
        .filter(|r: &f64| r.is_finite() && *r > 0.0)
        .ok_or_else(|| SignalError::MalformedRate {
            path: path.to_path_buf(),
            line: rate_line.to_string(),
        })?;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let field = first_field(line);
        if field.is_empty() {
            continue;
        }
        let v: f64 = field
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| SignalError::MalformedValue {
                path: path.to_path_buf(),
                line: i + 3,
                text: line.to_string(),
            })?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(SignalError::EmptyChannel(kind));
    }
    Ok((
        epoch,
        Channel {
            kind,
            sample_rate_hz: rate,
            samples,
            start_time: 0.0,
        },
    ))
}

/// Parse a `label,t_start,t_end` file; intervals come back sorted and
/// checked for overlap.
pub fn read_labels(path: &Path) -> Result<Vec<LabelInterval>, SignalError> {
    let text = read_text(path)?;
    let mut intervals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("label")) {
            continue;
        }
        let bad = || SignalError::MalformedValue {
            path: path.to_path_buf(),
            line: i + 1,
            text: line.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [label, a, b] = fields.as_slice() else {
            return Err(bad());
        };
        intervals.push(LabelInterval {
            label: label.to_string(),
            t_start: a.parse().map_err(|_| bad())?,
            t_end: b.parse().map_err(|_| bad())?,
        });
    }
    validate_intervals(&mut intervals)?;
    Ok(intervals)
}

/// Read `EDA.csv`, `BVP.csv`, `TEMP.csv` and `labels.csv` from `dir`.
/// The subject id is the directory name.
pub fn ingest_e4_csv(dir: &Path, seeding_mode: SeedingMode) -> Result<SignalSession, SignalError> {
    let mut raw = Vec::with_capacity(3);
    for kind in ChannelKind::ALL {
        raw.push(read_channel(&dir.join(format!("{}.csv", kind.file_stem())), kind)?);
    }
    let intervals = read_labels(&dir.join("labels.csv"))?;
    let origin = raw.iter().map(|(e, _)| *e).fold(f64::INFINITY, f64::min);
    let channels = raw
        .into_iter()
        .map(|(epoch, mut ch)| {
            ch.start_time = epoch - origin;
            ch
        })
        .collect();
    Ok(SignalSession {
        subject_id: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        channels,
        intervals,
        seeding_mode,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SignalError + '_ {
    move |source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a session in the layout [`ingest_e4_csv`] reads. `origin_epoch` is
/// the wall-clock time of the session origin.
pub fn write_e4_csv(session: &SignalSession, dir: &Path, origin_epoch: f64) -> Result<(), SignalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for ch in &session.channels {
        let path: PathBuf = dir.join(format!("{}.csv", ch.kind.file_stem()));
        let mut out = String::with_capacity(ch.samples.len() * 20);
        out.push_str(&format!("{}\n{:.6}\n", origin_epoch + ch.start_time, ch.sample_rate_hz));
        for v in &ch.samples {
            out.push_str(&format!("{v}\n"));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    let path = dir.join("labels.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let mut body = String::from("label,t_start,t_end\n");
    for iv in &session.intervals {
        body.push_str(&format!("{},{},{}\n", iv.label, iv.t_start, iv.t_end));
    }
    f.write_all(body.as_bytes()).map_err(io_err(&path))?;
    Ok(())
}

/// On-disk form of a preprocessed session plus its window index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCache {
    pub format: String,
    pub subject_id: String,
    pub seeding_mode: SeedingMode,
    pub sample_rate_hz: f64,
    pub start_time: f64,
    pub channels: Vec<ChannelKind>,
    pub intervals: Vec<LabelInterval>,
    pub class_names: Vec<String>,
    pub delta: usize,
    pub step: usize,
    pub window_starts: Vec<usize>,
    pub seed_labels: Vec<usize>,
    /// Row-major `(samples, 3)` scaled signal.
    pub signal: Vec<f64>,
}

impl WindowCache {
    pub fn new(session: &PreprocessedSession, windows: &WindowSet, step: usize) -> Self {
        Self {
            format: CACHE_FORMAT.to_string(),
            subject_id: session.subject_id.clone(),
            seeding_mode: session.seeding_mode,
            sample_rate_hz: session.sample_rate_hz,
            start_time: session.start_time,
            channels: ChannelKind::ALL.to_vec(),
            intervals: session.intervals.clone(),
            class_names: session.class_names.clone(),
            delta: windows.delta(),
            step,
            window_starts: windows.starts().to_vec(),
            seed_labels: windows.labels().to_vec(),
            signal: session.signal.clone(),
        }
    }

    pub fn session(&self) -> PreprocessedSession {
        PreprocessedSession {
            subject_id: self.subject_id.clone(),
            seeding_mode: self.seeding_mode,
            sample_rate_hz: self.sample_rate_hz,
            start_time: self.start_time,
            signal: self.signal.clone(),
            intervals: self.intervals.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn windows(&self) -> Result<WindowSet, SignalError> {
        WindowSet::from_parts(
            Arc::from(self.signal.as_slice()),
            self.delta,
            self.window_starts.clone(),
            self.seed_labels.clone(),
            self.class_names.clone(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<(), SignalError> {
        let json = serde_json::to_vec(self).map_err(|e| SignalError::Cache(e.to_string()))?;
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, SignalError> {
        if !path.is_file() {
            return Err(SignalError::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(io_err(path))?;
        let cache: WindowCache =
            serde_json::from_slice(&bytes).map_err(|e| SignalError::Cache(format!("{}: {e}", path.display())))?;
        if cache.format != CACHE_FORMAT {
            return Err(SignalError::Cache(format!(
                "{}: unsupported format tag `{}`",
                path.display(),
                cache.format
            )));
        }
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, bvp_rate: &str, labels: &str) {
        fs::write(dir.join("EDA.csv"), "1500000000.000000\n4.000000\n0.1\n0.2\n0.3\n0.4\n").unwrap();
        fs::write(dir.join("TEMP.csv"), "1500000000.000000\n4.000000\n30.1\n30.1\n30.2\n30.2\n").unwrap();
        let mut bvp = format!("1500000000.000000\n{bvp_rate}\n");
        for i in 0..64 {
            bvp.push_str(&format!("{}\n", (i as f64 / 10.0).sin()));
        }
        fs::write(dir.join("BVP.csv"), bvp).unwrap();
        fs::write(dir.join("labels.csv"), labels).unwrap();
    }

    #[test]
    fn reads_minimal_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), "64.000000", "label,t_start,t_end\nbaseline,0,1\n");
        let s = ingest_e4_csv(tmp.path(), SeedingMode::Contextual).unwrap();
        assert_eq!(s.channels.len(), 3);
        assert_eq!(s.channel(ChannelKind::Bvp).unwrap().sample_rate_hz, 64.0);
        assert_eq!(s.channel(ChannelKind::Eda).unwrap().samples, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(s.intervals.len(), 1);
    }

    #[test]
    fn distinct_errors() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), "sixty-four", "label,t_start,t_end\na,0,1\n");
        assert!(matches!(
            ingest_e4_csv(tmp.path(), SeedingMode::Contextual),
            Err(SignalError::MalformedRate { .. })
        ));

        write_fixture(tmp.path(), "64.0", "label,t_start,t_end\na,0,2\nb,1,3\n");
        assert!(matches!(
            ingest_e4_csv(tmp.path(), SeedingMode::Contextual),
            Err(SignalError::OverlappingIntervals { .. })
        ));

        fs::remove_file(tmp.path().join("labels.csv")).unwrap();
        match ingest_e4_csv(tmp.path(), SeedingMode::Contextual) {
            Err(SignalError::MissingFile(p)) => assert!(p.ends_with("labels.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn start_times_are_relative_to_earliest_channel() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), "64", "label,t_start,t_end\na,0,1\n");
        fs::write(tmp.path().join("TEMP.csv"), "1500000002\n4\n1\n2\n").unwrap();
        let s = ingest_e4_csv(tmp.path(), SeedingMode::SelfReported).unwrap();
        assert_eq!(s.channel(ChannelKind::Temp).unwrap().start_time, 2.0);
        assert_eq!(s.channel(ChannelKind::Eda).unwrap().start_time, 0.0);
    }
}
