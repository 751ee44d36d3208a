//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line.
//!
//! Tests hold a shared lock so that wall-clock budgets are measured without
//! other acceptance work competing for the CPU.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use deepseed::autoencoder::{AutoencoderModel, ModelShape};
use deepseed::clustering::{
    cmeans_centroids, cmeans_loss_sum, cmeans_membership, distance_weight, kmeans_assign, kmeans_loss,
    kmeans_update, ClusterState, Matrix,
};
use deepseed::evaluation::{
    best_of_grid_mean, median, run_cv, sensitivity_sweep, sweep_column_means, CvOptions, EvaluationReport, SweepGrid,
};
use deepseed::signal::{
    make_windows, min_max_scale, preprocess, savitzky_golay, LabelInterval, PreprocessOptions, PreprocessedSession,
    SeedingMode,
};
use deepseed::synthetic::{generate, two_class_specs, RegimeSpec, SyntheticOptions};
use deepseed::tensor::Tape;
use deepseed::trainer::{fit, joint_loss, joint_loss_on_tape, SplitMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written to the stdout handle directly so the line survives output capture.
fn verdict(name: &str, pass: bool, detail: String) -> bool {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

// Direct transcriptions used as oracles: plain loops over rows of Vec<Vec<f64>>.

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows).map(|i| m.row(i).to_vec()).collect()
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s
}

fn oracle_assign(x: &[Vec<f64>], mu: &[Vec<f64>]) -> Vec<usize> {
    x.iter()
        .map(|xt| {
            let mut j = 0;
            for i in 1..mu.len() {
                if sqdist(xt, &mu[i]) < sqdist(xt, &mu[j]) {
                    j = i;
                }
            }
            j
        })
        .collect()
}

fn oracle_means(x: &[Vec<f64>], s: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    (0..k)
        .map(|j| {
            let members: Vec<&Vec<f64>> = x.iter().zip(s).filter(|(_, &sj)| sj == j).map(|(xt, _)| xt).collect();
            if members.is_empty() {
                return None;
            }
            let mut m = vec![0.0; x[0].len()];
            for xt in &members {
                for (a, b) in m.iter_mut().zip(xt.iter()) {
                    *a += b;
                }
            }
            Some(m.into_iter().map(|v| v / members.len() as f64).collect())
        })
        .collect()
}

fn oracle_u(x: &[Vec<f64>], mu: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|xt| {
            let e: Vec<f64> = mu
                .iter()
                .map(|m| {
                    let d = sqdist(xt, m);
                    (-(2.0 / gamma) * d / (1.0 + d)).exp()
                })
                .collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

fn oracle_d(x: &[f64], mu: &[f64]) -> f64 {
    let r = sqdist(x, mu).sqrt();
    (r + 2.0) / ((r + 1.0) * (r + 1.0))
}

fn oracle_mu(x: &[Vec<f64>], u: &[Vec<f64>], prev: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..prev.len())
        .map(|k| {
            let mut num = vec![0.0; x[0].len()];
            let mut den = 0.0;
            for t in 0..x.len() {
                let w = oracle_d(&x[t], &prev[k]) * u[t][k];
                den += w;
                for (n, v) in num.iter_mut().zip(&x[t]) {
                    *n += w * v;
                }
            }
            num.into_iter().map(|v| v / den).collect()
        })
        .collect()
}

fn oracle_lcm(x: &[Vec<f64>], mu: &[Vec<f64>], u: &[Vec<f64>]) -> f64 {
    let mut l = 0.0;
    for t in 0..x.len() {
        for k in 0..mu.len() {
            l += u[t][k] * sqdist(&x[t], &mu[k]);
        }
    }
    l
}

#[test]
fn gradient_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let (delta, dim, n) = (8, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<Vec<f64>> = (0..n).map(|_| (0..delta * 3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let windows: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut model = AutoencoderModel::new(ModelShape { channels: 3, embedding_dim: dim, delta }, 5);
    let z = Matrix::new(n, dim, model.embed(&windows, n).unwrap()).unwrap();
    let mut state = ClusterState::seeded(&z, &labels, 2, 0.1).unwrap();
    state.refresh(&z).unwrap();

    let mut tape = Tape::new();
    let pass = joint_loss_on_tape(&model, &mut tape, &windows, &state.centroids, &state.memberships).unwrap();
    tape.backward(pass.total, &mut model.params).unwrap();
    let analytic: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| t.grad().unwrap().to_vec()).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for j in 0..model.params.get(id).numel() {
            let orig = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = orig + h;
            let up = joint_loss(&model, &windows, &state.centroids, &state.memberships).unwrap();
            model.params.get_mut(id).data_mut()[j] = orig - h;
            let down = joint_loss(&model, &windows, &state.centroids, &state.memberships).unwrap();
            model.params.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-4 && elapsed < Duration::from_secs(10);
    assert!(verdict(
        "gradient fidelity",
        ok,
        format!("{checked} parameters, max relative error {worst:.2e} (< 1e-4), {elapsed:.2?} (< 10 s)")
    ));
}

#[test]
fn clustering_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut assign_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(4..30);
        let d = rng.random_range(1..6);
        let k = rng.random_range(2..5);
        let gamma = rng.random_range(0.05..2.0);
        let x = random_matrix(&mut rng, n, d, 2.0);
        let mu = random_matrix(&mut rng, k, d, 2.0);
        let (xr, mur) = (to_rows(&x), to_rows(&mu));

        let s = kmeans_assign(&x, &mu).unwrap();
        if s != oracle_assign(&xr, &mur) {
            assign_mismatch += 1;
        }
        let (means, _) = kmeans_update(&x, &s, &mu).unwrap();
        for (j, m) in oracle_means(&xr, &s, k).into_iter().enumerate() {
            if let Some(m) = m {
                for (a, b) in means.row(j).iter().zip(&m) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        let u = cmeans_membership(&x, &mu, gamma).unwrap();
        let uo = oracle_u(&xr, &mur, gamma);
        for t in 0..n {
            for j in 0..k {
                worst = worst.max((u.row(t)[j] - uo[t][j]).abs());
            }
        }
        for t in 0..n {
            for j in 0..k {
                worst = worst.max((distance_weight(sqdist(&xr[t], &mur[j]).sqrt()) - oracle_d(&xr[t], &mur[j])).abs());
            }
        }
        let (c, _) = cmeans_centroids(&x, &u, &mu).unwrap();
        let co = oracle_mu(&xr, &uo, &mur);
        for j in 0..k {
            for (a, b) in c.row(j).iter().zip(&co[j]) {
                worst = worst.max((a - b).abs());
            }
        }
        worst = worst.max((cmeans_loss_sum(&x, &c, &u) - oracle_lcm(&xr, &co, &uo)).abs());
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-10 && assign_mismatch == 0 && elapsed < Duration::from_secs(5);
    assert!(verdict(
        "clustering oracle equivalence",
        ok,
        format!("100 instances, max abs deviation {worst:.2e} (< 1e-10), {assign_mismatch} assignment mismatches, {elapsed:.2?} (< 5 s)")
    ));
}

#[test]
fn cmeans_algebra() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut row_err: f64 = 0.0;
    let mut limit_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(2..25);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..5);
        let x = random_matrix(&mut rng, n, d, 3.0);
        let mu = random_matrix(&mut rng, k, d, 3.0);
        let gamma = rng.random_range(0.01..5.0);
        let u = cmeans_membership(&x, &mu, gamma).unwrap();
        for t in 0..n {
            row_err = row_err.max((u.row(t).iter().sum::<f64>() - 1.0).abs());
        }
        let hard = kmeans_assign(&x, &mu).unwrap();
        let u0 = cmeans_membership(&x, &mu, 1e-6).unwrap();
        for t in 0..n {
            let mut q: Vec<f64> = (0..k)
                .map(|j| {
                    let s = sqdist(x.row(t), mu.row(j));
                    s / (1.0 + s)
                })
                .collect();
            q.sort_by(f64::total_cmp);
            if q[1] - q[0] > 1e-4 && u0.argmax_rows()[t] != hard[t] {
                limit_ok = false;
            }
        }
    }
    // a point equidistant from every centroid
    let mut sym_err: f64 = 0.0;
    for k in 2..6 {
        let mut c = Matrix::zeros(k, k);
        for j in 0..k {
            c.row_mut(j)[j] = 1.5;
        }
        let u = cmeans_membership(&Matrix::zeros(1, k), &c, 0.1).unwrap();
        for v in u.row(0) {
            sym_err = sym_err.max((v - 1.0 / k as f64).abs());
        }
    }
    let d0 = distance_weight(0.0);
    let ok = row_err < 1e-9 && sym_err < 1e-12 && limit_ok && d0 == 2.0;
    assert!(verdict(
        "c-means algebra",
        ok,
        format!("row-sum error {row_err:.1e} (< 1e-9), symmetric-row error {sym_err:.1e}, small-gamma limit matches k-means: {limit_ok}, d(0) = {d0}")
    ));
}

#[test]
fn kmeans_loss_non_increasing() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0;
    let mut worst_rise: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..6);
        let x = random_matrix(&mut rng, n, d, 5.0);
        let mut mu = random_matrix(&mut rng, k, d, 5.0);
        let mut s = kmeans_assign(&x, &mu).unwrap();
        let mut last = kmeans_loss(&x, &mu, &s);
        for _ in 0..20 {
            mu = kmeans_update(&x, &s, &mu).unwrap().0;
            s = kmeans_assign(&x, &mu).unwrap();
            let now = kmeans_loss(&x, &mu, &s);
            if now > last + 1e-9 * last.max(1.0) {
                violations += 1;
                worst_rise = worst_rise.max(now - last);
            }
            last = now;
        }
    }
    assert!(verdict(
        "k-means loss non-increasing",
        violations == 0,
        format!("50 instances x 20 iterations, {violations} increases (largest {worst_rise:.1e})")
    ));
}

fn session_with_runs(lens: &[usize]) -> PreprocessedSession {
    let mut intervals = Vec::new();
    let mut t = 0.0;
    for (i, &l) in lens.iter().enumerate() {
        let dur = l as f64 / 64.0;
        intervals.push(LabelInterval {
            label: if i % 2 == 0 { "a".into() } else { "b".into() },
            t_start: t,
            t_end: t + dur,
        });
        t += dur;
    }
    let n: usize = lens.iter().sum();
    PreprocessedSession {
        subject_id: "runs".into(),
        seeding_mode: SeedingMode::Contextual,
        sample_rate_hz: 64.0,
        start_time: 0.0,
        signal: vec![0.5; n * 3],
        intervals,
        class_names: vec!["a".into(), "b".into()],
    }
}

#[test]
fn preprocessing_exactness() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sg_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(11..400);
        let (a, b) = (rng.random_range(-100.0..100.0), rng.random_range(-5.0..5.0));
        let x: Vec<f64> = (0..n).map(|i| a + b * i as f64).collect();
        let y = savitzky_golay(&x, 11, 1).unwrap();
        for (p, q) in x.iter().zip(&y) {
            sg_err = sg_err.max((p - q).abs());
        }
    }
    let mut range_ok = true;
    let mut idem_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..300);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let y = min_max_scale(&x);
        range_ok &= y.iter().all(|v| (0.0..=1.0).contains(v));
        for (p, q) in y.iter().zip(&min_max_scale(&y)) {
            idem_err = idem_err.max((p - q).abs());
        }
    }
    let mut count_mismatch = 0;
    for _ in 0..20 {
        let lens: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(50..2000)).collect();
        let delta = rng.random_range(16..700);
        let step = rng.random_range(1..8);
        let expected: usize = lens.iter().filter(|&&l| l >= delta).map(|&l| (l - delta) / step + 1).sum();
        let got = make_windows(&session_with_runs(&lens), delta, step).map_or(0, |w| w.len());
        if got != expected {
            count_mismatch += 1;
        }
    }
    let ok = sg_err < 1e-10 && range_ok && idem_err == 0.0 && count_mismatch == 0;
    assert!(verdict(
        "preprocessing exactness",
        ok,
        format!("affine smoothing error {sg_err:.1e} (< 1e-10), scaled values in [0,1]: {range_ok}, idempotence error {idem_err:.1e}, window-count mismatches {count_mismatch}/20")
    ));
}

fn e2e_config() -> TrainConfig {
    TrainConfig {
        delta: 128,
        epochs: 30,
        split_mode: SplitMode::NonSequential,
        // ~67 training windows per fold from ~13k candidates
        downsample_factor: Some(200),
        rng_seed: 1,
        ..TrainConfig::default()
    }
}

fn e2e_run() -> &'static (EvaluationReport, Duration) {
    static RUN: OnceLock<(EvaluationReport, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let session = generate(&two_class_specs(2, 60.0), &SyntheticOptions::default(), 1).unwrap();
        let pre = preprocess(&session, &PreprocessOptions::default()).unwrap();
        let windows = make_windows(&pre, 128, 1).unwrap();
        let report = run_cv("synthetic", &windows, &e2e_config(), &CvOptions::default()).unwrap();
        (report, start.elapsed())
    })
}

#[test]
fn end_to_end_synthetic_recovery() {
    let _g = serial();
    let (report, elapsed) = e2e_run();
    let mean = report.mean_test_accuracy().unwrap_or(0.0);
    let folds = report.completed().len();
    let ok = mean >= 0.90 && folds == 10 && *elapsed < Duration::from_secs(300);
    assert!(verdict(
        "end-to-end synthetic recovery",
        ok,
        format!("{folds}/10 folds, mean test accuracy {mean:.4} (>= 0.90), {elapsed:.1?} (< 5 min)")
    ));
}

#[test]
fn no_overfit_on_synthetic() {
    let _g = serial();
    let (report, _) = e2e_run();
    let gaps: Vec<f64> = report.completed().iter().map(|f| f.train.accuracy - f.test.accuracy).collect();
    let gap = median(&gaps);
    let ok = gap.abs() < 0.10;
    assert!(verdict(
        "no overfitting",
        ok,
        format!("median train-test accuracy gap {:.2} pp over {} folds (< 10 pp)", 100.0 * gap, gaps.len())
    ));
}

#[test]
fn determinism() {
    let _g = serial();
    let session = generate(&two_class_specs(1, 20.0), &SyntheticOptions::default(), 4).unwrap();
    let pre = preprocess(&session, &PreprocessOptions::default()).unwrap();
    let windows = make_windows(&pre, 64, 2).unwrap();
    let config = TrainConfig {
        delta: 64,
        embedding_dim: 8,
        epochs: 3,
        downsample_factor: Some(20),
        rng_seed: 17,
        ..TrainConfig::default()
    };
    let cv = CvOptions { fold_count: 3, eval_stride: 4 };
    let a = run_cv("s", &windows, &config, &cv).unwrap();
    let b = run_cv("s", &windows, &config, &cv).unwrap();
    let json_a = serde_json::to_string(&a).unwrap();
    let json_b = serde_json::to_string(&b).unwrap();
    let train = windows.subset(&(0..windows.len()).step_by(15).collect::<Vec<_>>());
    let h1 = fit(&train, &config).unwrap();
    let h2 = fit(&train, &config).unwrap();
    let bits = |t: &deepseed::trainer::TrainedModel| {
        t.history.iter().flat_map(|e| [e.reconstruction.to_bits(), e.clustering.to_bits()]).collect::<Vec<_>>()
    };
    let ok = json_a == json_b && bits(&h1) == bits(&h2) && h1.model.params == h2.model.params && a.completed().len() == 3;
    assert!(verdict(
        "determinism",
        ok,
        format!(
            "reports byte-identical: {}, loss histories bit-identical: {}",
            json_a == json_b,
            bits(&h1) == bits(&h2)
        )
    ));
}

#[test]
fn sensitivity_harness() {
    let _g = serial();
    let start = Instant::now();
    let grid = SweepGrid::default();
    let base = TrainConfig {
        epochs: 2,
        batch_size: 16,
        downsample_factor: Some(2),
        rng_seed: 5,
        ..TrainConfig::default()
    };
    let cv = CvOptions { fold_count: 3, eval_stride: 3 };
    let mut sweeps = Vec::new();
    for (s, noise) in [0.02, 0.05, 0.1].into_iter().enumerate() {
        let specs = vec![
            RegimeSpec::calm("calm", 20.0),
            RegimeSpec::aroused("aroused", 20.0),
            RegimeSpec::calm("calm", 20.0),
            RegimeSpec::aroused("aroused", 20.0),
        ];
        let options = SyntheticOptions { subject_id: format!("S{}", s + 1), noise_sd: noise, ..SyntheticOptions::default() };
        let session = generate(&specs, &options, 100 + s as u64).unwrap();
        let pre = preprocess(&session, &PreprocessOptions::default()).unwrap();
        sweeps.push(sensitivity_sweep(&pre, &base, &cv, &grid, 64).unwrap());
    }
    let complete = sweeps.iter().all(|s| s.points.len() == 7 && s.points.iter().all(|p| p.mean_accuracy.is_some()));
    let best = best_of_grid_mean(&sweeps).unwrap_or(f64::NAN);
    let fixed = sweep_column_means(&sweeps, &grid);
    let dominated = fixed.iter().all(|m| m.is_some_and(|m| best >= m));
    let fixed_txt: Vec<String> = fixed.iter().map(|m| m.map_or("-".into(), |m| format!("{m:.3}"))).collect();
    let ok = complete && dominated;
    assert!(verdict(
        "sensitivity harness",
        ok,
        format!(
            "3 subjects x 7 settings complete: {complete}, best-of-grid mean {best:.3} >= fixed-setting means [{}], {:.1?}",
            fixed_txt.join(", "),
            start.elapsed()
        )
    ));
}
