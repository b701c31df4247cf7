//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Each check enforces its own runtime bound.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scour_core::dataset::{
    make_windows, window_count, Batch, FeatureCombo, FeatureFrame, Prepared, SplitRanges, WindowSets, WindowSpec,
};
use scour_core::earlywarn::{
    band, exceedance, max_scour_distribution, rolling_forecast, scour_error_percent, solve_scour, summarize_errors,
    Aligned, BAND_LOWER, BAND_UPPER,
};
use scour_core::exec::Exec;
use scour_core::harness::{mae_in_meters, read_results, run_grid, GridSpec, WindowBank};
use scour_core::ingest::{regrid_hourly, Channel, Sensor};
use scour_core::neural::snapshot::Snapshot;
use scour_core::neural::{
    batch_gradient, evaluate, fit_loop, loss_and_metrics, train, Architecture, EpochOutcome, Model, ModelConfig,
    Variant,
};
use scour_core::preprocess::{clean, impute, ImputeSpec, PreprocessConfig};
use scour_core::synth::{generate, SynthSpec};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn origin() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// Worst `|analytic − fd| / max(1, |analytic|)` over all parameters.
fn gradient_case(variant: Variant) -> f64 {
    let cfg = ModelConfig {
        combo: FeatureCombo::Ssy,
        variant,
        window: WindowSpec { input_width: 8, label_width: 2 },
        units: 4,
        clip_norm: None,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut model = Model::zeros(Architecture::from_config(&cfg));
    for p in model.params_mut() {
        *p = rng.random_range(-0.5..0.5);
    }
    let (b, nf, nl) = (3, 4, 2);
    let mut r = || rng.random_range(-1.5..1.5);
    let batch = Batch {
        starts: (0..b).collect(),
        input: Array3::from_shape_fn((8, b, nf), |_| r()),
        label: Array3::from_shape_fn((b, 2, nl), |_| r()),
        decoder_exog: Array3::from_shape_fn((1, b, nf), |_| r()),
    };
    let loss = |m: &Model| {
        let (pred, _) = m.forward(&batch, None).unwrap();
        loss_and_metrics(pred.view(), batch.label.view()).unwrap().0
    };
    let (grads, _) = batch_gradient(&model, &batch, None, Exec::Sequential).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..model.n_params() {
        let orig = model.params()[k];
        model.params_mut()[k] = orig + h;
        let up = loss(&model);
        model.params_mut()[k] = orig - h;
        let down = loss(&model);
        model.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((grads[k] - fd).abs() / grads[k].abs().max(1.0));
    }
    worst
}

fn c1_gradients() -> Result<String, String> {
    let mut parts = Vec::new();
    for v in [Variant::SingleShot, Variant::Feedback, Variant::TwoLayer] {
        let err = gradient_case(v);
        ensure!(err < 1e-4, "{v}: worst relative error {err:e}");
        parts.push(format!("{v} {err:.1e}"));
    }
    Ok(format!("worst relative error: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 2. Model ordering on the default synthetic series

fn c2_model_ordering() -> Result<String, String> {
    let spec = SynthSpec { seed: 42, ..SynthSpec::default() };
    let out = generate(&spec).map_err(|e| e.to_string())?;
    let grid = regrid_hourly(&out.raw, &Sensor::ALL, spec.origin(), spec.n_steps()).map_err(|e| e.to_string())?;
    let cleaned = clean(&grid.series, &PreprocessConfig::default(), Exec::Parallel).map_err(|e| e.to_string())?;
    let prepared = Prepared::new(&cleaned.series, 0.2, 0.2).map_err(|e| e.to_string())?;
    let window = WindowSpec { input_width: 336, label_width: 168 };
    let windows = prepared.windows(FeatureCombo::Ss, window, 8).map_err(|e| e.to_string())?;
    let mut mae = Vec::new();
    for variant in [Variant::Baseline, Variant::Dense, Variant::SingleShot] {
        let cfg = ModelConfig {
            combo: FeatureCombo::Ss,
            variant,
            window,
            units: 32,
            max_epochs: 30,
            learning_rate: 0.003,
            seed: 42,
            ..Default::default()
        };
        let t = train(&cfg, &windows, Exec::Parallel).map_err(|e| e.to_string())?;
        let e = evaluate(&t.model, &windows.test, Exec::Parallel).map_err(|e| e.to_string())?;
        mae.push(mae_in_meters(FeatureCombo::Ss, &prepared.norm, &e.mae).map_err(|e| e.to_string())?.0);
    }
    let (base, dense, lstm) = (mae[0], mae[1], mae[2]);
    let gap1 = (dense - lstm) / dense;
    let gap2 = (base - dense) / base;
    let detail = format!(
        "test sonar MAE: lstm {lstm:.4} m, dense {dense:.4} m, baseline {base:.4} m; gaps {:.1}% / {:.1}%",
        100.0 * gap1,
        100.0 * gap2
    );
    ensure!(gap1 >= 0.05 && gap2 >= 0.05, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 3. Error-summary formula

fn c3_error_summary() -> Result<String, String> {
    let mut got = Vec::new();
    for (mae, depth, want) in [(0.19, 2.1, 9.0), (0.25, 3.3, 7.6), (0.37, 1.5, 24.7)] {
        let n = 500;
        let actual: Vec<f64> = (0..n).map(|i| 30.0 - depth * ((i as f64) / 80.0).sin().abs()).collect();
        let mean: Vec<f64> = actual.iter().enumerate().map(|(i, a)| if i % 2 == 0 { a + mae } else { a - mae }).collect();
        let sonar = Aligned { lower: mean.clone(), upper: mean.clone(), mean, actual };
        let s = summarize_errors(&sonar, &sonar, depth).map_err(|e| e.to_string())?;
        let direct = scour_error_percent(mae, depth).map_err(|e| e.to_string())?;
        ensure!((s.sonar_mae - mae).abs() < 1e-12, "sonar MAE {} != {mae}", s.sonar_mae);
        ensure!((s.scour_error_percent - want).abs() <= 0.5, "({mae}, {depth}) -> {:.2}% vs {want}%", s.scour_error_percent);
        ensure!((direct - s.scour_error_percent).abs() < 1e-12, "direct formula disagrees");
        got.push(format!("{:.1}%", s.scour_error_percent));
    }
    Ok(format!("scour error {}", got.join(" / ")))
}

// ---------------------------------------------------------------------------
// 4. Window arithmetic

fn c4_window_counts() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases: Vec<(usize, WindowSpec)> = [(336, 168), (720, 168), (720, 336)]
        .iter()
        .map(|&(i, l)| (rng.random_range(0..4000), WindowSpec { input_width: i, label_width: l }))
        .collect();
    while cases.len() < 50 {
        let spec = WindowSpec { input_width: rng.random_range(1..400), label_width: rng.random_range(1..200) };
        cases.push((rng.random_range(0..1500), spec));
    }
    for (len, spec) in &cases {
        let enumerated = (0..*len).filter(|s| s + spec.input_width + spec.label_width <= *len).count();
        let formula = (len + 1).saturating_sub(spec.input_width + spec.label_width);
        ensure!(window_count(*len, *spec) == enumerated, "L={len} {spec}: {} vs {enumerated}", window_count(*len, *spec));
        ensure!(formula == enumerated, "closed form disagrees at L={len} {spec}");
        // The windows actually cut from an all-valid frame agree too.
        let frame = FeatureFrame {
            combo: FeatureCombo::Ss,
            origin: origin(),
            features: Array2::zeros((*len, 2)),
            valid: vec![true; *len],
        };
        let ranges = SplitRanges { train: 0..*len, validation: *len..*len, test: *len..*len };
        let sets = make_windows(Arc::new(frame), *spec, &ranges);
        ensure!(sets.train.len() == enumerated, "make_windows gives {} at L={len} {spec}", sets.train.len());
    }
    Ok(format!("{} cases including (336,168), (720,168), (720,336)", cases.len()))
}

// ---------------------------------------------------------------------------
// 5. Early stopping trace

fn c5_early_stopping() -> Result<String, String> {
    let losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.5, 0.4, 0.3];
    let s = fit_loop(100, 5, 0usize, |epoch, state| {
        *state = epoch;
        Ok(EpochOutcome { train_loss: 0.0, train_mae: vec![], val_loss: losses[epoch - 1], val_mae: vec![] })
    })
    .map_err(|e| e.to_string())?;
    ensure!(s.stopped_epoch == 7, "stopped at {}", s.stopped_epoch);
    ensure!(s.best_epoch == 2 && s.state == 2 && s.restored_best, "restored {} (best {})", s.state, s.best_epoch);
    Ok("stop at epoch 7, restored epoch 2".into())
}

// ---------------------------------------------------------------------------
// 6. Surrogate solver

fn c6_surrogate() -> Result<String, String> {
    let y = solve_scour(1.0, 2.0).map_err(|e| e.to_string())?;
    ensure!(y == 1.0, "y_s(1, 2) = {y:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let eta = rng.random_range(0.0..10.0);
        let d = rng.random_range(0.01..20.0);
        let y = solve_scour(eta, d).map_err(|e| e.to_string())?;
        let residual = (y - eta * (d - y).powf(0.418)).abs();
        worst = worst.max(residual);
        ensure!(residual < 1e-10, "residual {residual:e} at eta={eta}, d={d}");
        let (de, dd) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        ensure!(solve_scour(eta + de, d).unwrap() >= y, "not monotone in eta at ({eta}, {d})");
        ensure!(solve_scour(eta, d + dd).unwrap() >= y, "not monotone in d at ({eta}, {d})");
    }
    Ok(format!("y_s(1,2) = 1 exactly; worst residual {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 7. Overfit capacity

fn sine_windows(len: usize, spec: WindowSpec, combo: FeatureCombo) -> WindowSets {
    let nf = combo.channels().len();
    let features = Array2::from_shape_fn((len, nf), |(t, j)| {
        let t = t as f64;
        match j {
            0 => (t / 9.0).sin() + 0.3 * (t / 4.0).cos(),
            1 => (t / 13.0).cos(),
            _ => (t / 30.0 + j as f64).sin(),
        }
    });
    let frame = FeatureFrame { combo, origin: origin(), features, valid: vec![true; len] };
    let n = spec.total() + 9;
    let ranges = SplitRanges { train: 0..len - 2 * n, validation: len - 2 * n..len - n, test: len - n..len };
    make_windows(Arc::new(frame), spec, &ranges)
}

fn c7_overfit() -> Result<String, String> {
    let spec = WindowSpec { input_width: 24, label_width: 6 };
    let full = sine_windows(400, spec, FeatureCombo::Ss);
    let mut sets = full.clone();
    sets.train.starts = full.train.starts.iter().step_by(17).take(10).copied().collect();
    let cfg = ModelConfig {
        window: spec,
        units: 32,
        max_epochs: 500,
        patience: 0,
        batch_size: 10,
        learning_rate: 0.01,
        ..Default::default()
    };
    let t = train(&cfg, &sets, Exec::Sequential).map_err(|e| e.to_string())?;
    let mse = evaluate(&t.model, &sets.train, Exec::Sequential).map_err(|e| e.to_string())?.mse;
    ensure!(sets.train.len() == 10, "training set has {} sequences", sets.train.len());
    ensure!(mse < 1e-3, "training MSE {mse:e} after {} epochs", t.stopped_epoch);
    Ok(format!("training MSE {mse:.1e} on 10 sequences after {} epochs", t.stopped_epoch))
}

// ---------------------------------------------------------------------------
// 8. Preprocessing recovery

fn c8_preprocess_recovery() -> Result<String, String> {
    let spec = SynthSpec::default();
    let out = generate(&spec).map_err(|e| e.to_string())?;
    let grid = regrid_hourly(&out.raw, &Sensor::ALL, spec.origin(), spec.n_steps()).map_err(|e| e.to_string())?;
    let cleaned = clean(&grid.series, &PreprocessConfig::default(), Exec::Parallel).map_err(|e| e.to_string())?;
    let d0 = spec.base_stage_m - spec.base_bed_m;
    let q_sigma = spec.noise_std_m * spec.rating_coef * spec.rating_exp * d0.powf(spec.rating_exp - 1.0);
    let mut parts = Vec::new();
    for (ch, sigma) in [(Channel::Stage, spec.noise_std_m), (Channel::Sonar, spec.noise_std_m), (Channel::Discharge, q_sigma)] {
        let got = cleaned.series.channel(ch).unwrap();
        let want = out.truth.channel(ch).unwrap();
        let imputed = &cleaned.imputed[&ch];
        let errs: Vec<f64> =
            (0..got.len()).filter(|&i| !imputed[i]).filter_map(|i| Some((got[i]? - want[i]?).abs())).collect();
        ensure!(!errs.is_empty(), "{ch}: nothing to compare");
        let mae = errs.iter().sum::<f64>() / errs.len() as f64;
        ensure!(mae < 3.0 * sigma, "{ch}: MAE {mae:.4} vs 3σ = {:.4}", 3.0 * sigma);
        parts.push(format!("{ch} {:.2}σ", mae / sigma));
    }
    let truth: Vec<f64> = (0..400).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 168.0).sin()).collect();
    let mut x: Vec<Option<f64>> = truth.iter().copied().map(Some).collect();
    for v in &mut x[200..224] {
        *v = None;
    }
    let filled = impute(&x, &ImputeSpec::default()).map_err(|e| e.to_string())?;
    let gp_err = (200..224).map(|t| (filled.values[t] - truth[t]).abs()).fold(0.0, f64::max);
    ensure!(gp_err < 0.05, "GP max error {gp_err}");
    Ok(format!("MAE {}; GP 24-sample gap max error {gp_err:.1e}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 9. Determinism

fn snapshot_bytes(cfg: &ModelConfig, sets: &WindowSets, exec: Exec) -> Vec<u8> {
    let t = train(cfg, sets, exec).unwrap();
    let norm = scour_core::preprocess::NormStats::from_values([(Channel::Sonar, 0.0, 1.0), (Channel::Stage, 0.0, 1.0)])
        .unwrap();
    let mut buf = Vec::new();
    Snapshot { config: t.config, norm, model: t.model }.write(&mut buf).unwrap();
    buf
}

/// Rows of a results file without the wall-clock column, sorted.
fn stable_rows(path: &Path) -> Vec<String> {
    let mut rows: Vec<String> = read_results(path)
        .unwrap()
        .into_iter()
        .map(|r| format!("{},{},{},{},{:?},{:?},{}", r.config_code, r.repetition, r.seed, r.split, r.sonar_mae, r.stage_mae, r.stopped_epoch))
        .collect();
    rows.sort();
    rows
}

fn c9_determinism() -> Result<String, String> {
    let spec = WindowSpec { input_width: 12, label_width: 4 };
    let sets = sine_windows(300, spec, FeatureCombo::Ss);
    let cfg = ModelConfig { window: spec, units: 6, dropout: 0.2, max_epochs: 5, seed: 9, ..Default::default() };
    let a = snapshot_bytes(&cfg, &sets, Exec::Sequential);
    let b = snapshot_bytes(&cfg, &sets, Exec::Sequential);
    let c = snapshot_bytes(&cfg, &sets, Exec::Parallel);
    ensure!(a == b, "snapshots differ between identical runs");
    ensure!(a == c, "snapshots differ between sequential and parallel execution");

    let cleaned = {
        let n = 2000;
        let mut s = scour_core::ingest::UniformSeries::new(origin(), n);
        s.set_channel(Channel::Sonar, (0..n).map(|t| Some(30.0 + (t as f64 / 50.0).sin())).collect()).unwrap();
        s.set_channel(Channel::Stage, (0..n).map(|t| Some(33.0 + (t as f64 / 70.0).cos())).collect()).unwrap();
        s
    };
    let prepared = Prepared::new(&cleaned, 0.2, 0.2).unwrap();
    let grid = GridSpec {
        combos: vec![FeatureCombo::Ss],
        variants: vec![Variant::SingleShot, Variant::Feedback],
        windows: vec![spec],
        units: vec![4],
        dropouts: vec![0.0, 0.2],
        repetitions: 2,
        base: ModelConfig { max_epochs: 3, seed: 5, ..Default::default() },
    };
    let bank = WindowBank::for_grid(&prepared, &grid, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    run_grid(&grid, &bank, &p1, Exec::Parallel).unwrap();
    run_grid(&grid, &bank, &p2, Exec::Sequential).unwrap();
    let (r1, r2) = (stable_rows(&p1), stable_rows(&p2));
    ensure!(r1.len() == 16, "expected 16 rows, got {}", r1.len());
    ensure!(r1 == r2, "grid rows differ between runs");
    Ok(format!("{} snapshot bytes identical ×3; {} grid rows identical", a.len(), r1.len()))
}

// ---------------------------------------------------------------------------
// 10. Forecast-band contracts

fn sort_quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn c10_bands() -> Result<String, String> {
    let spec = WindowSpec { input_width: 12, label_width: 6 };
    let sets = sine_windows(300, spec, FeatureCombo::Ss);
    let members: Vec<Model> = (0..7)
        .map(|k| Model::init(Architecture::from_config(&ModelConfig { window: spec, units: 5, ..Default::default() }), k))
        .collect();
    let norm = scour_core::preprocess::NormStats::from_values([(Channel::Sonar, 30.0, 0.7), (Channel::Stage, 33.0, 1.3)])
        .unwrap();
    let fc = rolling_forecast(&members, &norm, &sets.test, 2, Exec::Parallel).map_err(|e| e.to_string())?;
    ensure!(!fc.origins.is_empty(), "no forecast origins");
    let mut checked = 0;
    for k in 0..fc.origins.len() {
        let preds = fc.at(k);
        let b = band(preds).map_err(|e| e.to_string())?;
        let (lower, upper) = (b.lower.unwrap(), b.upper.unwrap());
        for t in 0..fc.horizon() {
            for j in 0..2 {
                let m = b.mean[[t, j]];
                ensure!(lower[[t, j]] <= m && m <= upper[[t, j]], "band violated at origin {k}, step {t}");
                let xs: Vec<f64> = preds.index_axis(Axis(2), j).column(t).to_vec();
                let (ql, qu) = (sort_quantile(&xs, BAND_LOWER), sort_quantile(&xs, BAND_UPPER));
                ensure!(
                    (lower[[t, j]] - ql.min(m)).abs() <= 1e-12 && (upper[[t, j]] - qu.max(m)).abs() <= 1e-12,
                    "band quantiles disagree with the sort oracle"
                );
                for p in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
                    let q = scour_core::stats::quantile(&xs, p);
                    ensure!((q - sort_quantile(&xs, p)).abs() <= 1e-12, "quantile({p}) disagrees");
                }
                checked += 1;
            }
        }
        let dist = max_scour_distribution(preds, 0, fc.at_origin[[k, 0]]);
        let mut prev = 1.0;
        for i in 0..200 {
            let threshold = -2.0 + i as f64 * 0.02;
            let e = exceedance(&dist.samples, threshold);
            ensure!((0.0..=1.0).contains(&e) && e <= prev, "exceedance not monotone at {threshold}");
            prev = e;
        }
    }
    Ok(format!("{checked} band cells over {} origins × {} members", fc.origins.len(), fc.members()))
}

// ---------------------------------------------------------------------------
// 11. End-to-end pipeline through the command-line tool

const E2E_CONFIG: &str = "\
[dataset]
input_width = 336
label_width = 168
train_stride = 8

[train]
units = 8
max_epochs = 5
learning_rate = 0.003
ensemble_size = 5

[grid]
combos = ss
variants = ss, fd
windows = (336,168)
units = 4, 8
dropouts = 0
repetitions = 3

[forecast]
stride = 24

[alert]
origin = worst
";

fn scour(out: &Path, config: &Path, args: &[&str]) -> Result<String, String> {
    let result = Command::new(env!("CARGO_BIN_EXE_scour"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&result.stdout).into_owned();
    ensure!(result.status.success(), "`scour {}` failed: {}", args.join(" "), String::from_utf8_lossy(&result.stderr));
    Ok(stdout)
}

fn c11_end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.ini");
    fs::write(&config, E2E_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    for stage in [&["synth"][..], &["ingest"], &["preprocess"], &["gridsearch"], &["train", "--from-grid"], &["forecast"], &["alert"]] {
        scour(&out, &config, stage)?;
        ensure!(out.join(stage[0]).join("config.ini").exists(), "{} wrote no config echo", stage[0]);
    }
    let results = read_results(&out.join("gridsearch/results.csv")).map_err(|e| e.to_string())?;
    let runs = results.iter().filter(|r| r.split.name() != "test").count();
    ensure!(runs == 12, "grid search recorded {runs} runs, expected 2 variants × 2 units × 3");
    let members = fs::read_dir(out.join("train")).map_err(|e| e.to_string())?
        .filter(|e| e.as_ref().is_ok_and(|e| e.file_name().to_string_lossy().ends_with(".snap")))
        .count();
    ensure!(members == 5, "{members} ensemble snapshots");
    let alert = fs::read_to_string(out.join("alert/alert.csv")).map_err(|e| e.to_string())?;
    let mut probs = Vec::new();
    for line in alert.lines().filter(|l| l.starts_with("exceedance_gt_") || l.starts_with("alert_probability")) {
        let p: f64 = line.rsplit(',').next().unwrap().parse().map_err(|_| format!("bad line {line}"))?;
        ensure!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
        probs.push(p);
    }
    ensure!(probs.len() >= 2, "alert report has no exceedance probabilities");
    let level = alert.lines().find_map(|l| l.strip_prefix("level,")).unwrap_or("?").to_string();
    Ok(format!("7 stages exit 0; {} exceedance probabilities in [0,1]; alert level {level}", probs.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, Check, Option<Duration>); 11] = [
        ("gradient correctness", c1_gradients, Some(Duration::from_secs(30))),
        ("model ordering LSTM < Dense < Baseline", c2_model_ordering, Some(Duration::from_secs(600))),
        ("error-summary formula", c3_error_summary, Some(Duration::from_secs(1))),
        ("window arithmetic", c4_window_counts, Some(Duration::from_secs(1))),
        ("early stopping", c5_early_stopping, Some(Duration::from_secs(1))),
        ("surrogate solver", c6_surrogate, Some(Duration::from_secs(1))),
        ("overfit capacity", c7_overfit, Some(Duration::from_secs(120))),
        ("preprocessing recovery", c8_preprocess_recovery, Some(Duration::from_secs(60))),
        ("determinism", c9_determinism, None),
        ("forecast-band contracts", c10_bands, Some(Duration::from_secs(1))),
        ("end-to-end pipeline", c11_end_to_end, Some(Duration::from_secs(1800))),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check, limit)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|k| k != n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > *l => Err(format!("took {elapsed:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name} [{elapsed:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name} [{elapsed:.2?}]: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
