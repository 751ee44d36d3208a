use std::sync::Arc;

use super::{PreprocessedSession, SignalError, CHANNELS};

/// Number of windows of length `delta` taken every `step` samples from a
/// run of `run_len` samples.
pub fn window_count(run_len: usize, delta: usize, step: usize) -> usize {
    if delta == 0 || step == 0 || run_len < delta {
        0
    } else {
        (run_len - delta) / step + 1
    }
}

/// Maximal sample runs `(start, end_exclusive, class_id)` covered by a single
/// interval. A sample at time `t` belongs to `[t_start, t_end)`.
pub fn label_runs(session: &PreprocessedSession) -> Vec<(usize, usize, usize)> {
    let n = session.len();
    let rate = session.sample_rate_hz;
    let index_of = |t: f64| -> usize {
        let x = (t - session.start_time) * rate;
        (x - 1e-9).ceil().clamp(0.0, n as f64) as usize
    };
    session
        .intervals
        .iter()
        .filter_map(|iv| {
            let (a, b) = (index_of(iv.t_start), index_of(iv.t_end));
            let class = session.class_names.iter().position(|c| *c == iv.label)?;
            (b > a).then_some((a, b, class))
        })
        .collect()
}

/// Fixed-length windows over a shared scaled signal.
///
/// Windows are slices `[start, start + delta)` of the session matrix and are
/// never copied out.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    signal: Arc<[f64]>,
    delta: usize,
    starts: Vec<usize>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl WindowSet {
    pub fn from_parts(
        signal: Arc<[f64]>,
        delta: usize,
        starts: Vec<usize>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, SignalError> {
        let total = signal.len() / CHANNELS;
        if starts.len() != labels.len() {
            return Err(SignalError::Cache("start/label count mismatch".into()));
        }
        if let Some(&s) = starts.iter().find(|&&s| s + delta > total) {
            return Err(SignalError::Cache(format!(
                "window at {s} with length {delta} overruns {total} samples"
            )));
        }
        if labels.iter().any(|&l| l >= class_names.len()) {
            return Err(SignalError::Cache("label outside class list".into()));
        }
        Ok(Self {
            signal,
            delta,
            starts,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    /// Row-major `(delta, 3)` values of window `i`.
    pub fn window(&self, i: usize) -> &[f64] {
        let s = self.starts[i] * CHANNELS;
        &self.signal[s..s + self.delta * CHANNELS]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn signal(&self) -> &Arc<[f64]> {
        &self.signal
    }

    /// Windows at the given positions, sharing the underlying signal.
    pub fn subset(&self, indices: &[usize]) -> WindowSet {
        WindowSet {
            signal: Arc::clone(&self.signal),
            delta: self.delta,
            starts: indices.iter().map(|&i| self.starts[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Slide a `delta`-sample window by `step` over every single-label run.
/// Windows that would cross an interval boundary are not produced.
pub fn make_windows(session: &PreprocessedSession, delta: usize, step: usize) -> Result<WindowSet, SignalError> {
    if delta == 0 || step == 0 {
        return Err(SignalError::InvalidFilter(format!(
            "window length {delta} and step {step} must be positive"
        )));
    }
    let runs = label_runs(session);
    let mut starts = Vec::new();
    let mut labels = Vec::new();
    for &(a, b, class) in &runs {
        let count = window_count(b - a, delta, step);
        starts.extend((0..count).map(|j| a + j * step));
        labels.extend(std::iter::repeat_n(class, count));
    }
    if starts.is_empty() {
        return Err(SignalError::NoWindows {
            delta,
            longest: runs.iter().map(|(a, b, _)| b - a).max().unwrap_or(0),
        });
    }
    WindowSet::from_parts(
        Arc::from(session.signal.as_slice()),
        delta,
        starts,
        labels,
        session.class_names.clone(),
    )
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::signal::{LabelInterval, SeedingMode};

    fn session(intervals: Vec<(&str, f64, f64)>, seconds: usize) -> PreprocessedSession {
        let n = seconds * 64;
        let intervals: Vec<LabelInterval> = intervals
            .into_iter()
            .map(|(l, a, b)| LabelInterval { label: l.into(), t_start: a, t_end: b })
            .collect();
        PreprocessedSession {
            subject_id: "s".into(),
            seeding_mode: SeedingMode::Contextual,
            sample_rate_hz: 64.0,
            start_time: 0.0,
            signal: (0..n * 3).map(|i| (i % 7) as f64 / 7.0).collect(),
            class_names: crate::signal::class_names(&intervals),
            intervals,
        }
    }

    #[test]
    fn count_examples() {
        assert_eq!(window_count(600, 600, 1), 1);
        assert_eq!(window_count(1000, 600, 1), 401);
        assert_eq!(window_count(599, 600, 1), 0);
        assert_eq!(window_count(1000, 600, 7), 58);
    }

    #[test]
    fn windows_stay_inside_one_interval() {
        // 0-10 s "a", 10-20 s "b", 25-30 s "a"
        let s = session(vec![("a", 0.0, 10.0), ("b", 10.0, 20.0), ("a", 25.0, 30.0)], 30);
        let w = make_windows(&s, 128, 1).unwrap();
        assert_eq!(w.len(), 2 * (640 - 127) + (320 - 127));
        for i in 0..w.len() {
            let t0 = w.starts()[i] as f64 / 64.0;
            let t1 = (w.starts()[i] + w.delta() - 1) as f64 / 64.0;
            let owner: Vec<_> = s
                .intervals
                .iter()
                .filter(|iv| iv.t_start <= t0 && t1 < iv.t_end)
                .collect();
            assert_eq!(owner.len(), 1);
            assert_eq!(w.class_names()[w.label(i)], owner[0].label);
        }
        assert_eq!(w.window(0).len(), 128 * 3);
    }

    #[test]
    fn too_long_window_is_an_error() {
        let s = session(vec![("a", 0.0, 5.0)], 10);
        match make_windows(&s, 600, 1) {
            Err(SignalError::NoWindows { delta, longest }) => assert_eq!((delta, longest), (600, 320)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subset_shares_signal() {
        let s = session(vec![("a", 0.0, 5.0), ("b", 5.0, 10.0)], 10);
        let w = make_windows(&s, 64, 4).unwrap();
        let sub = w.subset(&[0, w.len() - 1]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.window(1), w.window(w.len() - 1));
        assert!(Arc::ptr_eq(sub.signal(), w.signal()));
    }

    proptest! {
        #[test]
        fn emitted_count_matches_formula(lens in prop::collection::vec(1usize..900, 1..5), delta in 1usize..700, step in 1usize..9) {
            let mut t = 0.0;
            let mut ivs = Vec::new();
            for (k, &l) in lens.iter().enumerate() {
                let dur = l as f64 / 64.0;
                ivs.push((if k % 2 == 0 { "x" } else { "y" }, t, t + dur));
                t += dur;
            }
            let total = t.ceil() as usize + 1;
            let s = session(ivs, total);
            let expected: usize = lens.iter().map(|&l| window_count(l, delta, step)).sum();
            match make_windows(&s, delta, step) {
                Ok(w) => prop_assert_eq!(w.len(), expected),
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
