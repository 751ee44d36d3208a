use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use deepseed::evaluation::{
    best_of_grid_mean, mean, quartile_row, run_cv_with_hook, sensitivity_sweep, summary_row, sweep_long_csv,
    sweep_table_csv, EvalError, EvaluationReport, Fold, FoldOutcome, SubjectSweep, SweepGrid, QUARTILE_HEADER,
    SUMMARY_HEADER, SWEEP_FORMAT,
};
use deepseed::signal::{
    ingest_e4_csv, make_windows, preprocess as preprocess_session, SignalError, WindowCache, WindowSet,
};
use deepseed::synthetic::{generate, two_class_specs, SyntheticOptions};
use deepseed::trainer::{fit, EpochLosses, TrainError, TrainedModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{resolve, Overrides, RunConfig};
use crate::run::{write, write_json, RunDir};

/// Command failure mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<SignalError> for Failure {
    fn from(e: SignalError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Command = fn(&RunConfig, &mut RunDir) -> Result<(), Failure>;

/// Resolve the configuration, set up the worker pool and run directory, then
/// run `command`.
pub fn with_config(path: Option<&Path>, overrides: &Overrides, name: &str, command: Command) -> Result<(), Failure> {
    let config = resolve(path, overrides).map_err(Failure::Usage)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("jobs: {e}")))?;
    let mut run = RunDir::create(&config, name)?;
    pool.install(|| command(&config, &mut run))?;
    let path = run.finish()?;
    println!("run directory: {}", path.display());
    Ok(())
}

fn subject_dirs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(root).map_err(|e| Failure::Data(format!("dataset root {}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Data(format!("no subject directories under {}", root.display())));
    }
    Ok(dirs)
}

fn cache_path(config: &RunConfig, subject: &str) -> PathBuf {
    config.cache_dir.join(format!("{subject}.json"))
}

pub fn synth(config: &RunConfig, run: &mut RunDir) -> Result<(), Failure> {
    let specs = two_class_specs(config.synth_blocks.max(1), config.synth_block_s);
    for s in 1..=config.synth_subjects {
        let subject = format!("S{s}");
        let options = SyntheticOptions {
            subject_id: subject.clone(),
            seeding_mode: config.seeding_mode,
            noise_sd: config.synth_noise_sd,
        };
        let session = generate(&specs, &options, config.rng_seed.wrapping_add(s as u64))
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let dir = config.dataset_root.join(&subject);
        deepseed::signal::write_e4_csv(&session, &dir, 1_600_000_000.0)?;
        run.event(&json!({ "event": "synth", "subject": subject, "path": dir }))?;
        println!("{subject}: {} intervals -> {}", session.intervals.len(), dir.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PreprocessSummary {
    subject: String,
    windows: usize,
    per_class: Vec<(String, usize)>,
    cache: PathBuf,
}

pub fn preprocess(config: &RunConfig, run: &mut RunDir) -> Result<(), Failure> {
    let dirs = subject_dirs(&config.dataset_root)?;
    fs::create_dir_all(&config.cache_dir).map_err(|e| Failure::Data(format!("{}: {e}", config.cache_dir.display())))?;
    let results: Vec<(String, Result<PreprocessSummary, SignalError>)> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let result = (|| {
                let session = ingest_e4_csv(dir, config.seeding_mode)?;
                let pre = preprocess_session(&session, &config.preprocess_options())?;
                let windows = make_windows(&pre, config.delta, config.window_step)?;
                let cache = WindowCache::new(&pre, &windows, config.window_step);
                let path = cache_path(config, &session.subject_id);
                cache.write(&path)?;
                let per_class = windows
                    .class_names()
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (c.clone(), windows.labels().iter().filter(|&&l| l == k).count()))
                    .collect();
                Ok(PreprocessSummary {
                    subject: session.subject_id,
                    windows: windows.len(),
                    per_class,
                    cache: path,
                })
            })();
            (name, result)
        })
        .collect();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (name, result) in results {
        match result {
            Ok(s) => {
                let classes: Vec<String> = s.per_class.iter().map(|(c, n)| format!("{c}={n}")).collect();
                println!("{}: {} windows ({})", s.subject, s.windows, classes.join(", "));
                run.event(&json!({ "event": "preprocessed", "subject": s.subject, "windows": s.windows }))?;
                summaries.push(s);
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                run.event(&json!({ "event": "error", "subject": name, "error": e.to_string() }))?;
                failures.push(format!("{name}: {e}"));
            }
        }
    }
    write_json(&run.path.join("summary.json"), &json!({ "sessions": summaries, "errors": failures }))?;
    if summaries.is_empty() {
        return Err(Failure::Data(format!("every session failed:\n  {}", failures.join("\n  "))));
    }
    Ok(())
}

/// Subjects to process with their window caches. Every subject directory
/// under the dataset root needs a cache; without a dataset root, all caches
/// in the cache directory are used.
fn load_caches(config: &RunConfig) -> Result<Vec<WindowCache>, Failure> {
    let paths: Vec<PathBuf> = if config.dataset_root.is_dir() {
        let subjects = subject_dirs(&config.dataset_root)?;
        let paths: Vec<PathBuf> = subjects
            .iter()
            .map(|d| cache_path(config, &d.file_name().unwrap_or_default().to_string_lossy()))
            .collect();
        let missing: Vec<String> = paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
        if !missing.is_empty() {
            return Err(Failure::Data(format!(
                "missing window caches (run `deepseed preprocess` first):\n  {}",
                missing.join("\n  ")
            )));
        }
        paths
    } else {
        let mut paths: Vec<PathBuf> = fs::read_dir(&config.cache_dir)
            .map_err(|e| Failure::Data(format!("cache directory {}: {e}", config.cache_dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Failure::Data(format!("no window caches in {}", config.cache_dir.display())));
        }
        paths
    };
    paths.iter().map(|p| WindowCache::read(p).map_err(Failure::from)).collect()
}

/// Windows at the configured length and step, re-cut when the cache used
/// other settings.
fn windows_for(config: &RunConfig, cache: &WindowCache) -> Result<WindowSet, Failure> {
    if cache.delta == config.delta && cache.step == config.window_step {
        Ok(cache.windows()?)
    } else {
        Ok(make_windows(&cache.session(), config.delta, config.window_step)?)
    }
}

fn log_history(run: &mut RunDir, subject: &str, fold: Option<usize>, history: &[EpochLosses]) -> Result<(), Failure> {
    for e in history {
        run.event(&json!({
            "event": "epoch",
            "subject": subject,
            "fold": fold,
            "phase": e.phase,
            "epoch": e.epoch,
            "reconstruction": e.reconstruction,
            "clustering": e.clustering,
            "total": e.total,
            "refreshed_clustering": e.refreshed_clustering,
        }))?;
    }
    Ok(())
}

pub fn train(config: &RunConfig, run: &mut RunDir) -> Result<(), Failure> {
    let caches = load_caches(config)?;
    let models = run.subdir("models")?;
    let train_config = config.train_config();
    let results: Vec<(String, Result<TrainedModel, Failure>)> = caches
        .par_iter()
        .map(|cache| {
            let result = windows_for(config, cache).and_then(|w| {
                let idx: Vec<usize> = (0..w.len()).step_by(train_config.downsample()).collect();
                fit(&w.subset(&idx), &train_config).map_err(Failure::from)
            });
            (cache.subject_id.clone(), result)
        })
        .collect();
    for (subject, result) in results {
        let trained = result?;
        log_history(run, &subject, None, &trained.history)?;
        let path = models.join(format!("{subject}.json"));
        trained.write_checkpoint(&path)?;
        let last = trained.history.last();
        println!(
            "{subject}: {} epochs, final reconstruction {:.6} -> {}",
            trained.history.len(),
            last.map_or(f64::NAN, |e| e.reconstruction),
            path.display()
        );
    }
    Ok(())
}

pub fn evaluate(config: &RunConfig, run: &mut RunDir) -> Result<(), Failure> {
    let caches = load_caches(config)?;
    let reports_dir = run.subdir("reports")?;
    let checkpoints = run.subdir("checkpoints")?;
    let train_config = config.train_config();
    let cv = config.cv_options();
    let results: Vec<Result<EvaluationReport, Failure>> = caches
        .par_iter()
        .map(|cache| {
            let windows = windows_for(config, cache)?;
            let dir = checkpoints.join(&cache.subject_id);
            fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
            let hook = |fold: &Fold, trained: &TrainedModel| {
                let path = dir.join(format!("fold-{}.json", fold.index));
                if let Err(e) = trained.write_checkpoint(&path) {
                    log::error!("{}: {e}", path.display());
                }
            };
            Ok(run_cv_with_hook(&cache.subject_id, &windows, &train_config, &cv, Some(&hook))?)
        })
        .collect();
    let mut reports = Vec::new();
    for r in results {
        let report = r?;
        for f in &report.folds {
            match f {
                FoldOutcome::Completed(r) => log_history(run, &report.subject_id, Some(r.fold), &r.history)?,
                FoldOutcome::Skipped { fold, reason } => run.event(&json!({
                    "event": "fold-skipped", "subject": report.subject_id, "fold": fold, "reason": reason
                }))?,
                FoldOutcome::Failed { fold, error, .. } => run.event(&json!({
                    "event": "fold-failed", "subject": report.subject_id, "fold": fold, "error": error
                }))?,
            }
        }
        write_json(&reports_dir.join(format!("{}.json", report.subject_id)), &report)?;
        reports.push(report);
    }
    emit_evaluation_tables(&run.path, &reports)?;
    let stuck: Vec<&EvaluationReport> = reports.iter().filter(|r| r.test.is_none()).collect();
    if !stuck.is_empty() {
        let numerical = stuck
            .iter()
            .all(|r| r.folds.iter().any(|f| matches!(f, FoldOutcome::Failed { numerical: true, .. })));
        let names: Vec<&str> = stuck.iter().map(|r| r.subject_id.as_str()).collect();
        let msg = format!("no fold completed for {}", names.join(", "));
        return Err(if numerical { Failure::Numerical(msg) } else { Failure::Data(msg) });
    }
    Ok(())
}

/// Mean over subjects of each subject's mean test accuracy.
pub fn aggregate_accuracy(reports: &[EvaluationReport]) -> Option<f64> {
    let means: Vec<f64> = reports.iter().filter_map(EvaluationReport::mean_test_accuracy).collect();
    (!means.is_empty()).then(|| mean(&means))
}

fn emit_evaluation_tables(dir: &Path, reports: &[EvaluationReport]) -> Result<(), Failure> {
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut quartiles = format!("{QUARTILE_HEADER}\n");
    for r in reports {
        summary.push_str(&summary_row(r));
        summary.push('\n');
        quartiles.push_str(&quartile_row(r));
        quartiles.push('\n');
        write(&dir.join(format!("{}_folds.csv", r.subject_id)), r.folds_csv())?;
        write(&dir.join(format!("{}_confusion.csv", r.subject_id)), r.test_confusion.to_csv(&r.class_names))?;
    }
    let done: Vec<&EvaluationReport> = reports.iter().filter(|r| r.test.is_some()).collect();
    let col = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> String {
        let v: Vec<f64> = done.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            String::new()
        } else {
            mean(&v).to_string()
        }
    };
    summary.push_str(&format!(
        "mean,{},{},{},{},{},{},,,,,\n",
        col(&|r| r.test.map(|a| a.accuracy.mean)),
        col(&|r| r.test.map(|a| a.macro_precision.mean)),
        col(&|r| r.test.map(|a| a.macro_recall.mean)),
        col(&|r| r.train.map(|a| a.accuracy.mean)),
        col(&|r| r.train.map(|a| a.macro_precision.mean)),
        col(&|r| r.train.map(|a| a.macro_recall.mean)),
    ));
    write(&dir.join("summary.csv"), &summary)?;
    write(&dir.join("quartiles.csv"), quartiles)?;
    write_json(
        &dir.join("aggregate.json"),
        &json!({
            "subjects": reports.iter().map(|r| &r.subject_id).collect::<Vec<_>>(),
            "mean_test_accuracy": aggregate_accuracy(reports),
        }),
    )?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepFile {
    format: String,
    grid: SweepGrid,
    subjects: Vec<SubjectSweep>,
    best_of_grid_mean: Option<f64>,
}

pub fn sweep(config: &RunConfig, run: &mut RunDir) -> Result<(), Failure> {
    let caches = load_caches(config)?;
    let grid = config.sweep_grid();
    let train_config = config.train_config();
    let cv = config.cv_options();
    let sweeps: Vec<Result<SubjectSweep, Failure>> = caches
        .par_iter()
        .map(|cache| Ok(sensitivity_sweep(&cache.session(), &train_config, &cv, &grid, config.window_step)?))
        .collect();
    let sweeps = sweeps.into_iter().collect::<Result<Vec<_>, _>>()?;
    for s in &sweeps {
        for p in &s.points {
            run.event(&json!({
                "event": "sweep-point", "subject": s.subject_id, "setting": p.setting,
                "mean_accuracy": p.mean_accuracy, "note": p.note
            }))?;
        }
    }
    let file = SweepFile {
        format: SWEEP_FORMAT.to_string(),
        best_of_grid_mean: best_of_grid_mean(&sweeps),
        grid,
        subjects: sweeps,
    };
    write_json(&run.path.join("sweep.json"), &file)?;
    emit_sweep_tables(&run.path, &file)
}

fn emit_sweep_tables(dir: &Path, file: &SweepFile) -> Result<(), Failure> {
    let table = sweep_table_csv(&file.subjects, &file.grid);
    write(&dir.join("sweep.csv"), &table)?;
    write(&dir.join("sweep_long.csv"), sweep_long_csv(&file.subjects))?;
    print!("{table}");
    Ok(())
}

/// Rebuild the CSV tables of a finished run from its JSON reports.
pub fn report(run: &Path) -> Result<(), Failure> {
    if !run.is_dir() {
        return Err(Failure::Usage(format!("{} is not a run directory", run.display())));
    }
    let mut found = false;
    let reports_dir = run.join("reports");
    if reports_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&reports_dir)
            .map_err(|e| Failure::Data(format!("{}: {e}", reports_dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut reports = Vec::new();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            let r: EvaluationReport =
                serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            if r.format != deepseed::evaluation::REPORT_FORMAT {
                return Err(Failure::Data(format!("{}: unsupported format `{}`", p.display(), r.format)));
            }
            reports.push(r);
        }
        if !reports.is_empty() {
            emit_evaluation_tables(run, &reports)?;
            found = true;
        }
    }
    let sweep_path = run.join("sweep.json");
    if sweep_path.is_file() {
        let text = fs::read_to_string(&sweep_path).map_err(|e| Failure::Data(e.to_string()))?;
        let file: SweepFile =
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", sweep_path.display())))?;
        if file.format != SWEEP_FORMAT {
            return Err(Failure::Data(format!("{}: unsupported format `{}`", sweep_path.display(), file.format)));
        }
        emit_sweep_tables(run, &file)?;
        found = true;
    }
    if !found {
        return Err(Failure::Data(format!("no reports or sweep results in {}", run.display())));
    }
    Ok(())
}
