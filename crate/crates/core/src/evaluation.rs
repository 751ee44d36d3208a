//! Within-subject k-fold cross-validation, classification metrics and the
//! window-length / embedding-size sensitivity sweep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::silhouette;
use crate::signal::{make_windows, PreprocessedSession, SignalError, WindowSet};
use crate::trainer::{fit, predict, EpochLosses, SplitMode, TrainConfig, TrainError, TrainedModel};

pub const REPORT_FORMAT: &str = "deepseed-report/v1";
pub const SWEEP_FORMAT: &str = "deepseed-sweep/v1";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{windows} windows cannot fill {folds} folds")]
    TooFewWindows { windows: usize, folds: usize },
    #[error("fold count must be at least 2, got {0}")]
    FoldCount(usize),
    #[error("downsample factor and evaluation stride must be positive")]
    ZeroFactor,
    #[error("empty confusion matrix")]
    EmptyConfusion,
    #[error("confusion matrix is not square")]
    NotSquare,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl EvalError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, EvalError::Train(e) if e.is_numerical())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: SplitMode,
    pub fold_count: usize,
    pub downsample_factor: usize,
    pub folds: Vec<Fold>,
}

/// Split `0..window_count` into test folds; each fold trains on every Nth
/// index of the remaining windows, in time order.
pub fn make_folds(
    window_count: usize,
    mode: SplitMode,
    fold_count: usize,
    downsample_factor: usize,
    rng_seed: u64,
) -> Result<FoldPlan, EvalError> {
    if fold_count < 2 {
        return Err(EvalError::FoldCount(fold_count));
    }
    if window_count < fold_count {
        return Err(EvalError::TooFewWindows {
            windows: window_count,
            folds: fold_count,
        });
    }
    if downsample_factor == 0 {
        return Err(EvalError::ZeroFactor);
    }
    let mut order: Vec<usize> = (0..window_count).collect();
    if mode == SplitMode::NonSequential {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(3);
        order.shuffle(&mut rng);
    }
    let base = window_count / fold_count;
    let extra = window_count % fold_count;
    let mut owner = vec![0usize; window_count];
    let mut tests = Vec::with_capacity(fold_count);
    let mut at = 0;
    for f in 0..fold_count {
        let size = base + usize::from(f < extra);
        let mut test = order[at..at + size].to_vec();
        test.sort_unstable();
        for &i in &test {
            owner[i] = f;
        }
        tests.push(test);
        at += size;
    }
    let folds = tests
        .into_iter()
        .enumerate()
        .map(|(f, test)| Fold {
            index: f,
            train: (0..window_count).filter(|&i| owner[i] != f).step_by(downsample_factor).collect(),
            test,
        })
        .collect();
    Ok(FoldPlan {
        mode,
        fold_count,
        downsample_factor,
        folds,
    })
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::EmptyConfusion);
        }
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(EvalError::NotSquare);
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut c = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.counts[t * classes + p] += 1;
        }
        c
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let name = |k: usize| class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let mut out = String::from("truth");
        for k in 0..self.classes {
            out.push(',');
            out.push_str(&name(k));
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(&name(t));
            for p in 0..self.classes {
                out.push_str(&format!(",{}", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Classes whose precision or recall had a zero denominator and was
    /// counted as 0.
    pub undefined: Vec<usize>,
}

/// Accuracy, per-class and averaged precision/recall of a confusion matrix.
pub fn metrics(confusion: &Confusion) -> Result<Metrics, EvalError> {
    let k = confusion.classes;
    let total = confusion.total();
    if k == 0 || total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut undefined = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    for c in 0..k {
        let tp = confusion.get(c, c);
        let predicted: u64 = (0..k).map(|t| confusion.get(t, c)).sum();
        let actual: u64 = (0..k).map(|p| confusion.get(c, p)).sum();
        tp_all += tp;
        fp_all += predicted - tp;
        fn_all += actual - tp;
        if predicted == 0 || actual == 0 {
            undefined.push(c);
        }
        precision.push(if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 });
        recall.push(if actual == 0 { 0.0 } else { tp as f64 / actual as f64 });
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        accuracy: confusion.trace() as f64 / total as f64,
        macro_precision: precision.iter().sum::<f64>() / k as f64,
        macro_recall: recall.iter().sum::<f64>() / k as f64,
        micro_precision: ratio(tp_all, tp_all + fp_all),
        micro_recall: ratio(tp_all, tp_all + fn_all),
        precision,
        recall,
        undefined,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile of the sorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            median: median(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Stat,
    pub macro_precision: Stat,
    pub macro_recall: Stat,
}

impl Aggregate {
    fn of(metrics: &[&Metrics]) -> Self {
        let col = |f: fn(&Metrics) -> f64| metrics.iter().map(|m| f(m)).collect::<Vec<_>>();
        Self {
            accuracy: Stat::of(&col(|m| m.accuracy)),
            macro_precision: Stat::of(&col(|m| m.macro_precision)),
            macro_recall: Stat::of(&col(|m| m.macro_recall)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub test: Metrics,
    pub train: Metrics,
    pub test_confusion: Confusion,
    pub train_confusion: Confusion,
    /// Mean silhouette of test embeddings under argmax assignments.
    pub silhouette: Option<f64>,
    pub history: Vec<EpochLosses>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FoldOutcome {
    Completed(FoldResult),
    Skipped { fold: usize, reason: String },
    Failed {
        fold: usize,
        error: String,
        /// Training diverged or produced non-finite values.
        numerical: bool,
    },
}

impl FoldOutcome {
    pub fn completed(&self) -> Option<&FoldResult> {
        match self {
            FoldOutcome::Completed(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub fold_count: usize,
    /// Score every Nth test window of a fold.
    pub eval_stride: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            fold_count: 10,
            eval_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub subject_id: String,
    pub class_names: Vec<String>,
    pub mode: SplitMode,
    pub fold_count: usize,
    pub downsample_factor: usize,
    pub eval_stride: usize,
    pub delta: usize,
    pub embedding_dim: usize,
    pub fingerprint: String,
    pub folds: Vec<FoldOutcome>,
    /// Over completed folds; `None` when every fold was skipped or failed.
    pub test: Option<Aggregate>,
    pub train: Option<Aggregate>,
    pub silhouette: Option<Stat>,
    pub test_confusion: Confusion,
}

impl EvaluationReport {
    pub fn completed(&self) -> Vec<&FoldResult> {
        self.folds.iter().filter_map(FoldOutcome::completed).collect()
    }

    pub fn test_accuracies(&self) -> Vec<f64> {
        self.completed().iter().map(|r| r.test.accuracy).collect()
    }

    pub fn mean_test_accuracy(&self) -> Option<f64> {
        self.test.map(|a| a.accuracy.mean)
    }

    /// One row per fold.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from(
            "subject,fold,status,train_windows,test_windows,test_accuracy,test_precision,test_recall,train_accuracy,train_precision,train_recall,silhouette\n",
        );
        for f in &self.folds {
            match f {
                FoldOutcome::Completed(r) => out.push_str(&format!(
                    "{},{},completed,{},{},{},{},{},{},{},{},{}\n",
                    self.subject_id,
                    r.fold,
                    r.train_windows,
                    r.test_windows,
                    r.test.accuracy,
                    r.test.macro_precision,
                    r.test.macro_recall,
                    r.train.accuracy,
                    r.train.macro_precision,
                    r.train.macro_recall,
                    r.silhouette.map_or(String::new(), |s| s.to_string()),
                )),
                FoldOutcome::Skipped { fold, .. } => {
                    out.push_str(&format!("{},{fold},skipped,,,,,,,,,\n", self.subject_id))
                }
                FoldOutcome::Failed { fold, .. } => {
                    out.push_str(&format!("{},{fold},failed,,,,,,,,,\n", self.subject_id))
                }
            }
        }
        out
    }
}

/// Header of [`summary_row`].
pub const SUMMARY_HEADER: &str = "subject,test_accuracy,test_precision,test_recall,train_accuracy,train_precision,train_recall,test_accuracy_median,train_accuracy_median,silhouette_mean,silhouette_median,completed_folds";

/// Mean test and train metrics of one subject.
pub fn summary_row(report: &EvaluationReport) -> String {
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let (te, tr) = (report.test, report.train);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        report.subject_id,
        f(te.map(|a| a.accuracy.mean)),
        f(te.map(|a| a.macro_precision.mean)),
        f(te.map(|a| a.macro_recall.mean)),
        f(tr.map(|a| a.accuracy.mean)),
        f(tr.map(|a| a.macro_precision.mean)),
        f(tr.map(|a| a.macro_recall.mean)),
        f(te.map(|a| a.accuracy.median)),
        f(tr.map(|a| a.accuracy.median)),
        f(report.silhouette.map(|s| s.mean)),
        f(report.silhouette.map(|s| s.median)),
        report.completed().len(),
    )
}

/// Header of [`quartile_row`].
pub const QUARTILE_HEADER: &str = "subject,min,q1,median,q3,max";

/// Spread of per-fold test accuracy, for box plots.
pub fn quartile_row(report: &EvaluationReport) -> String {
    let acc = report.test_accuracies();
    format!(
        "{},{},{},{},{},{}",
        report.subject_id,
        quantile(&acc, 0.0),
        quantile(&acc, 0.25),
        quantile(&acc, 0.5),
        quantile(&acc, 0.75),
        quantile(&acc, 1.0)
    )
}

/// Called with every trained fold model, e.g. to write checkpoints.
pub type FoldHook<'a> = &'a (dyn Fn(&Fold, &TrainedModel) + Sync);

fn run_fold(windows: &WindowSet, fold: &Fold, config: &TrainConfig, cv: &CvOptions, hook: Option<FoldHook>) -> FoldOutcome {
    let k = windows.class_count();
    let mut present = vec![false; k];
    for &i in &fold.train {
        present[windows.label(i)] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        let reason = format!(
            "class `{}` has no training windows after downsampling by {}",
            windows.class_names()[missing],
            config.downsample()
        );
        log::warn!("fold {}: {reason}; skipped", fold.index);
        return FoldOutcome::Skipped {
            fold: fold.index,
            reason,
        };
    }
    let result = (|| -> Result<FoldResult, EvalError> {
        let train_set = windows.subset(&fold.train);
        let test_idx: Vec<usize> = fold.test.iter().copied().step_by(cv.eval_stride).collect();
        let test_set = windows.subset(&test_idx);
        let fold_config = TrainConfig {
            rng_seed: config.rng_seed.wrapping_add(fold.index as u64),
            ..config.clone()
        };
        let trained = fit(&train_set, &fold_config)?;
        if let Some(hook) = hook {
            hook(fold, &trained);
        }
        let test_pred = predict(&trained, &test_set)?;
        let train_pred = predict(&trained, &train_set)?;
        let test_confusion = Confusion::from_predictions(k, test_set.labels(), &test_pred.classes);
        let train_confusion = Confusion::from_predictions(k, train_set.labels(), &train_pred.classes);
        let silhouette = silhouette(&test_pred.embeddings, &test_pred.memberships.argmax_rows())
            .ok()
            .map(|s| s.mean);
        Ok(FoldResult {
            fold: fold.index,
            train_windows: train_set.len(),
            test_windows: test_set.len(),
            test: metrics(&test_confusion)?,
            train: metrics(&train_confusion)?,
            test_confusion,
            train_confusion,
            silhouette,
            history: trained.history,
        })
    })();
    match result {
        Ok(r) => FoldOutcome::Completed(r),
        Err(e) => {
            log::error!("fold {} failed: {e}", fold.index);
            FoldOutcome::Failed {
                fold: fold.index,
                error: e.to_string(),
                numerical: e.is_numerical(),
            }
        }
    }
}

/// Cross-validate one subject's windows. Folds run on the current rayon
/// pool; the report does not depend on scheduling.
pub fn run_cv(
    subject_id: &str,
    windows: &WindowSet,
    config: &TrainConfig,
    cv: &CvOptions,
) -> Result<EvaluationReport, EvalError> {
    run_cv_with_hook(subject_id, windows, config, cv, None)
}

/// [`run_cv`] with a callback receiving each fold's trained model.
pub fn run_cv_with_hook(
    subject_id: &str,
    windows: &WindowSet,
    config: &TrainConfig,
    cv: &CvOptions,
    hook: Option<FoldHook>,
) -> Result<EvaluationReport, EvalError> {
    config.validate()?;
    if cv.eval_stride == 0 {
        return Err(EvalError::ZeroFactor);
    }
    let plan = make_folds(windows.len(), config.split_mode, cv.fold_count, config.downsample(), config.rng_seed)?;
    let folds: Vec<FoldOutcome> = plan.folds.par_iter().map(|f| run_fold(windows, f, config, cv, hook)).collect();
    let done: Vec<&FoldResult> = folds.iter().filter_map(FoldOutcome::completed).collect();
    let (test, train) = if done.is_empty() {
        (None, None)
    } else {
        (
            Some(Aggregate::of(&done.iter().map(|r| &r.test).collect::<Vec<_>>())),
            Some(Aggregate::of(&done.iter().map(|r| &r.train).collect::<Vec<_>>())),
        )
    };
    let sil: Vec<f64> = done.iter().filter_map(|r| r.silhouette).collect();
    let mut test_confusion = Confusion::new(windows.class_count());
    for r in &done {
        for (a, b) in test_confusion.counts.iter_mut().zip(&r.test_confusion.counts) {
            *a += b;
        }
    }
    Ok(EvaluationReport {
        format: REPORT_FORMAT.to_string(),
        subject_id: subject_id.to_string(),
        class_names: windows.class_names().to_vec(),
        mode: plan.mode,
        fold_count: plan.fold_count,
        downsample_factor: plan.downsample_factor,
        eval_stride: cv.eval_stride,
        delta: config.delta,
        embedding_dim: config.embedding_dim,
        fingerprint: config.fingerprint(),
        folds,
        test,
        train,
        silhouette: (!sil.is_empty()).then(|| Stat::of(&sil)),
        test_confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub deltas: Vec<usize>,
    pub dims: Vec<usize>,
    /// Window length held fixed while the embedding size varies.
    pub fixed_delta: usize,
    /// Embedding size held fixed while the window length varies.
    pub fixed_dim: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            deltas: vec![128, 256, 600, 960],
            dims: vec![30, 40, 60],
            fixed_delta: 600,
            fixed_dim: 30,
        }
    }
}

impl SweepGrid {
    /// `(delta, dim)` for every grid point, window lengths first.
    pub fn settings(&self) -> Vec<(usize, usize)> {
        self.deltas
            .iter()
            .map(|&d| (d, self.fixed_dim))
            .chain(self.dims.iter().map(|&e| (self.fixed_delta, e)))
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.deltas
            .iter()
            .map(|d| format!("delta={d}"))
            .chain(self.dims.iter().map(|e| format!("dim={e}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub delta: usize,
    pub embedding_dim: usize,
    pub mean_accuracy: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSweep {
    pub subject_id: String,
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the highest mean accuracy.
    pub best: Option<usize>,
}

impl SubjectSweep {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.best.and_then(|b| self.points[b].mean_accuracy)
    }
}

/// One cross-validation per grid point. Windows are re-cut from the
/// preprocessed session at each length with the given `step`.
pub fn sensitivity_sweep(
    session: &PreprocessedSession,
    base: &TrainConfig,
    cv: &CvOptions,
    grid: &SweepGrid,
    step: usize,
) -> Result<SubjectSweep, EvalError> {
    let mut points = Vec::new();
    for ((delta, dim), setting) in grid.settings().into_iter().zip(grid.labels()) {
        let config = TrainConfig {
            delta,
            embedding_dim: dim,
            ..base.clone()
        };
        let outcome = make_windows(session, delta, step)
            .map_err(EvalError::from)
            .and_then(|w| run_cv(&session.subject_id, &w, &config, cv));
        let (mean_accuracy, note) = match outcome {
            Ok(report) => match report.mean_test_accuracy() {
                Some(a) => (Some(a), None),
                None => (None, Some("no fold completed".to_string())),
            },
            Err(e) => {
                log::warn!("{}: {setting} skipped: {e}", session.subject_id);
                (None, Some(e.to_string()))
            }
        };
        points.push(SweepPoint {
            setting,
            delta,
            embedding_dim: dim,
            mean_accuracy,
            note,
        });
    }
    let best = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.mean_accuracy.map(|a| (i, a)))
        .fold(None, |best: Option<(usize, f64)>, (i, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((i, a)),
        })
        .map(|(i, _)| i);
    Ok(SubjectSweep {
        subject_id: session.subject_id.clone(),
        points,
        best,
    })
}

/// Subjects as rows, grid settings as columns, plus the best setting.
pub fn sweep_table_csv(sweeps: &[SubjectSweep], grid: &SweepGrid) -> String {
    let labels = grid.labels();
    let mut out = format!("subject,{},best,best_accuracy\n", labels.join(","));
    for s in sweeps {
        out.push_str(&s.subject_id);
        for p in &s.points {
            out.push(',');
            if let Some(a) = p.mean_accuracy {
                out.push_str(&a.to_string());
            }
        }
        let best = s.best.map(|b| s.points[b].setting.clone()).unwrap_or_default();
        let acc = s.best_accuracy().map_or(String::new(), |a| a.to_string());
        out.push_str(&format!(",{best},{acc}\n"));
    }
    let means = sweep_column_means(sweeps, grid);
    out.push_str("mean");
    for m in &means {
        out.push(',');
        if let Some(m) = m {
            out.push_str(&m.to_string());
        }
    }
    let best_mean = best_of_grid_mean(sweeps);
    out.push_str(&format!(",,{}\n", best_mean.map_or(String::new(), |m| m.to_string())));
    out
}

/// One row per subject and setting with a `best` flag.
pub fn sweep_long_csv(sweeps: &[SubjectSweep]) -> String {
    let mut out = String::from("subject,setting,delta,embedding_dim,mean_accuracy,best,note\n");
    for s in sweeps {
        for (i, p) in s.points.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.subject_id,
                p.setting,
                p.delta,
                p.embedding_dim,
                p.mean_accuracy.map_or(String::new(), |a| a.to_string()),
                s.best == Some(i),
                p.note.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
    }
    out
}

/// Mean over subjects of each setting's accuracy, `None` where any subject
/// lacks a value.
pub fn sweep_column_means(sweeps: &[SubjectSweep], grid: &SweepGrid) -> Vec<Option<f64>> {
    (0..grid.settings().len())
        .map(|j| {
            let vals: Option<Vec<f64>> = sweeps.iter().map(|s| s.points.get(j).and_then(|p| p.mean_accuracy)).collect();
            vals.filter(|v| !v.is_empty()).map(|v| mean(&v))
        })
        .collect()
}

/// Mean over subjects of each subject's best setting.
pub fn best_of_grid_mean(sweeps: &[SubjectSweep]) -> Option<f64> {
    let vals: Option<Vec<f64>> = sweeps.iter().map(SubjectSweep::best_accuracy).collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(&v))
}
