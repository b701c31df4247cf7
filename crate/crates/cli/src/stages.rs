//! One function per pipeline stage. Each reads only artifacts of earlier
//! stages and writes into its own directory under the output root.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;

use chrono::{DurationRound, TimeDelta};
use scour_core::config::{OriginChoice, RunConfig};
use scour_core::dataset::Prepared;
use scour_core::earlywarn::{pooled_by_time, rolling_forecast, summarize_errors, Aligned, AlertReport, RollingForecast};
use scour_core::exec::Exec;
use scour_core::harness::{
    decode_config, encode_config, grid_box_plot, load_ensemble, member_file_name, run_grid, select_best,
    train_ensemble, RecordSplit, Target, WindowBank,
};
use scour_core::ingest::{
    apply_bias_shifts, detect_schema, format_timestamp, parse_csv, regrid_hourly, write_readings_csv, BiasShiftTable,
    Sensor, UniformSeries,
};
use scour_core::neural::ModelConfig;
use scour_core::plot::{Band, Line, LinePlot, PALETTE};
use scour_core::preprocess::clean;
use scour_core::synth::generate;
use scour_core::{Error, Result};

use crate::layout::{require, Layout};

pub fn synth(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let spec = cfg.resolved_synth();
    let out = generate(&spec)?;
    let dir = layout.begin("synth", cfg)?;
    write_readings_csv(BufWriter::new(File::create(layout.synth_raw())?), &Sensor::ALL, &out.raw)?;
    out.truth.save(&layout.synth_truth())?;
    let mut floods = String::from("peak,magnitude_m,duration_hours\n");
    for f in &out.floods {
        let peak = spec.origin() + TimeDelta::seconds((f.peak_hour * 3600.0).round() as i64);
        let _ = writeln!(floods, "{},{:?},{:?}", format_timestamp(peak), f.magnitude_m, f.duration_hours);
    }
    fs::write(dir.join("floods.csv"), floods)?;
    println!(
        "synth: {} readings ({} outliers, {} floods) -> {}",
        out.raw.len(),
        out.outliers,
        out.floods.len(),
        dir.display()
    );
    Ok(())
}

pub fn ingest(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let input = match &cfg.ingest.input {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config { key: "ingest.input".into(), message: format!("{} not found", p.display()) });
            }
            p.clone()
        }
        None => {
            require(&layout.synth_raw(), "synth")?;
            layout.synth_raw()
        }
    };
    let schema = detect_schema(&input)?;
    let mut readings = parse_csv(&input, &schema, cfg.ingest.units)?;
    let shifts = match &cfg.ingest.bias_table {
        Some(p) => BiasShiftTable::load(p)?,
        None => BiasShiftTable::default(),
    };
    if !shifts.is_empty() {
        readings = apply_bias_shifts(&readings, &shifts);
    }
    let first = readings.iter().map(|r| r.timestamp).min().ok_or_else(|| Error::InvalidParameter("input has no readings".into()))?;
    let last = readings.iter().map(|r| r.timestamp).max().expect("non-empty");
    let hour = TimeDelta::hours(1);
    let origin = first.duration_trunc(hour).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let end = last.duration_trunc(hour).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let n_steps = (end - origin).num_hours() as usize + 1;
    let grid = regrid_hourly(&readings, &schema, origin, n_steps)?;

    let dir = layout.begin("ingest", cfg)?;
    grid.series.save(&layout.ingest_series())?;
    let mut report = format!(
        "input: {}\nreadings: {}\nbias shifts: {}\norigin: {}\nsteps: {}\n",
        input.display(),
        readings.len(),
        shifts.entries().len(),
        format_timestamp(origin),
        n_steps
    );
    for (ch, values) in grid.series.iter() {
        let gaps = values.iter().filter(|v| v.is_none()).count();
        let _ = writeln!(report, "{ch}: {gaps} empty hours");
    }
    fs::write(dir.join("report.txt"), &report)?;
    println!("ingest: {} readings onto {n_steps} hourly steps -> {}", readings.len(), dir.display());
    Ok(())
}

fn load_ingested(layout: &Layout) -> Result<UniformSeries> {
    require(&layout.ingest_series(), "ingest")?;
    UniformSeries::load(&layout.ingest_series())
}

pub fn preprocess(cfg: &RunConfig, layout: &Layout, exec: Exec) -> Result<()> {
    let series = load_ingested(layout)?;
    let cleaned = clean(&series, &cfg.preprocess, exec)?;
    let dir = layout.begin("preprocess", cfg)?;
    cleaned.series.save(&layout.cleaned())?;
    fs::write(dir.join("report.txt"), cleaned.report.to_text())?;
    let mut mask = String::from("index");
    for ch in cleaned.imputed.keys() {
        let _ = write!(mask, ",{ch}_imputed");
    }
    mask.push('\n');
    for i in 0..cleaned.series.len() {
        let _ = write!(mask, "{i}");
        for flags in cleaned.imputed.values() {
            let _ = write!(mask, ",{}", u8::from(flags[i]));
        }
        mask.push('\n');
    }
    fs::write(dir.join("imputed.csv"), mask)?;
    println!("preprocess: {} segments -> {}", cleaned.report.segments.len(), dir.display());
    Ok(())
}

fn load_cleaned(layout: &Layout) -> Result<UniformSeries> {
    require(&layout.cleaned(), "preprocess")?;
    UniformSeries::load(&layout.cleaned())
}

fn prepare(cfg: &RunConfig, layout: &Layout) -> Result<Prepared> {
    Prepared::new(&load_cleaned(layout)?, cfg.dataset.val_fraction, cfg.dataset.test_fraction)
}

fn history_csv(t: &scour_core::neural::TrainedModel) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,train_mae_sonar,val_mae_sonar\n");
    for h in &t.history {
        let first = |v: &[f64]| v.first().copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?}",
            h.epoch,
            h.train_loss,
            h.val_loss,
            first(&h.train_mae),
            first(&h.val_mae)
        );
    }
    s
}

pub fn train(cfg: &RunConfig, layout: &Layout, from_grid: bool, exec: Exec) -> Result<()> {
    let prepared = prepare(cfg, layout)?;
    let mut cfg = cfg.clone();
    if from_grid {
        require(&layout.grid_best(), "gridsearch")?;
        let code = fs::read_to_string(layout.grid_best())?;
        let chosen = decode_config(code.trim(), &cfg.resolved_model())?;
        cfg.model = ModelConfig { seed: cfg.model.seed, ..chosen };
    }
    let model = cfg.resolved_model();
    let windows = prepared.windows(model.combo, model.window, cfg.dataset.train_stride)?;
    let ensemble = train_ensemble(&model, &windows, &prepared.norm, cfg.ensemble_size, exec)?;

    let dir = cfg_stage_dir(layout, "train", &cfg)?;
    ensemble.save(&dir)?;
    let mut summary = String::from("member,seed,stopped_epoch,best_epoch,test_sonar_mae_m,test_stage_mae_m\n");
    for ((k, t), (sonar, stage)) in ensemble.members.iter().zip(&ensemble.test_mae) {
        fs::write(dir.join(format!("history_{k:02}.csv")), history_csv(t))?;
        let _ = writeln!(summary, "{k},{},{},{},{sonar:?},{stage:?}", t.config.seed, t.stopped_epoch, t.best_epoch);
    }
    for (k, why) in &ensemble.failed {
        let _ = writeln!(summary, "{k},{},failed,,,", model.seed.wrapping_add(*k as u64));
        eprintln!("member {k} failed: {why}");
    }
    fs::write(dir.join("members.csv"), summary)?;
    let s = ensemble.test_summary(Target::Sonar).expect("at least one member");
    println!(
        "train: {} of {} members of {} (test sonar MAE {:.4} ± {:.4} m) -> {}",
        ensemble.members.len(),
        cfg.ensemble_size,
        encode_config(&model),
        s.mean,
        s.std,
        dir.display()
    );
    Ok(())
}

/// Stage directory with stale member files of an earlier, larger ensemble
/// removed.
fn cfg_stage_dir(layout: &Layout, stage: &str, cfg: &RunConfig) -> Result<std::path::PathBuf> {
    let dir = layout.begin(stage, cfg)?;
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if (name.starts_with("member_") && name.ends_with(".snap")) || (name.starts_with("history_") && name.ends_with(".csv")) {
            fs::remove_file(&path)?;
        }
    }
    Ok(dir)
}

pub fn gridsearch(cfg: &RunConfig, layout: &Layout, exec: Exec) -> Result<()> {
    let prepared = prepare(cfg, layout)?;
    let grid = cfg.resolved_grid();
    grid.validate()?;
    let bank = WindowBank::for_grid(&prepared, &grid, cfg.dataset.train_stride)?;
    let dir = layout.begin("gridsearch", cfg)?;
    let outcome = run_grid(&grid, &bank, &layout.grid_results(), exec)?;

    let mut table = String::from("config_code,completed,failed");
    for split in ["validation", "test"] {
        for feat in ["sonar", "stage"] {
            for stat in ["mean", "std", "q1", "median", "q3"] {
                let _ = write!(table, ",{split}_{feat}_{stat}");
            }
        }
    }
    table.push('\n');
    for c in &outcome.cells {
        let _ = write!(table, "{},{},{}", c.code, c.completed(), c.failed());
        for split in [RecordSplit::Validation, RecordSplit::Test] {
            for target in [Target::Sonar, Target::Stage] {
                match c.summary(split, target) {
                    Some(s) => {
                        let _ = write!(table, ",{:?},{:?},{:?},{:?},{:?}", s.mean, s.std, s.q1, s.median, s.q3);
                    }
                    None => table.push_str(",,,,,"),
                }
            }
        }
        table.push('\n');
    }
    fs::write(dir.join("cells.csv"), table)?;
    for (split, target, name) in [
        (RecordSplit::Validation, Target::Sonar, "box_validation_sonar.svg"),
        (RecordSplit::Validation, Target::Stage, "box_validation_stage.svg"),
        (RecordSplit::Test, Target::Sonar, "box_test_sonar.svg"),
        (RecordSplit::Test, Target::Stage, "box_test_stage.svg"),
    ] {
        fs::write(dir.join(name), grid_box_plot(&outcome.cells, split, target))?;
    }
    for c in outcome.cells.iter().filter(|c| c.all_failed()) {
        eprintln!("cell {} failed in every repetition", c.code);
    }
    let best = select_best(&outcome.cells, Target::Sonar)?;
    fs::write(layout.grid_best(), format!("{}\n", best.code))?;
    let s = best.summary(RecordSplit::Validation, Target::Sonar).expect("selected cells have runs");
    println!(
        "gridsearch: {} cells, {} new runs; best {} (validation sonar MAE {:.4} ± {:.4} m) -> {}",
        outcome.cells.len(),
        outcome.new_runs,
        best.code,
        s.mean,
        s.std,
        dir.display()
    );
    Ok(())
}

/// Restrict both features to pooled rows where every value is known.
/// Returns the kept row numbers alongside.
fn finite_rows(a: Aligned, b: Aligned) -> (Aligned, Aligned, Vec<usize>) {
    let ok = |x: &Aligned, i: usize| x.actual[i].is_finite() && x.mean[i].is_finite();
    let keep: Vec<usize> = (0..a.actual.len()).filter(|&i| ok(&a, i) && ok(&b, i)).collect();
    let pick = |x: &Aligned| {
        let col = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Aligned { actual: col(&x.actual), mean: col(&x.mean), lower: col(&x.lower), upper: col(&x.upper) }
    };
    (pick(&a), pick(&b), keep)
}

/// Band plot of one feature of the pooled test forecast.
pub fn band_plot(fc: &RollingForecast, feature: usize) -> String {
    let pooled = pooled_by_time(fc);
    let first = pooled.index.first().copied().unwrap_or(0);
    let x = |row: usize| (pooled.index[row] - first) as f64 / 24.0;
    let rows = 0..pooled.index.len();
    let name = fc.label_channels[feature].to_string();
    LinePlot {
        title: format!("{name}: ensemble forecast over the test period ({} members)", fc.members()),
        x_label: "days since first forecast step".into(),
        y_label: format!("{name} (m)"),
        bands: vec![Band {
            name: "95% band".into(),
            points: rows.clone().map(|r| (x(r), pooled.lower[[r, feature]], pooled.upper[[r, feature]])).collect(),
            color: PALETTE[0].into(),
        }],
        lines: vec![
            Line {
                name: "observed".into(),
                points: rows.clone().map(|r| (x(r), pooled.actual[[r, feature]])).collect(),
                color: "#000000".into(),
                dashed: false,
            },
            Line {
                name: "ensemble mean".into(),
                points: rows.map(|r| (x(r), pooled.mean[[r, feature]])).collect(),
                color: PALETTE[1].into(),
                dashed: true,
            },
        ],
    }
    .to_svg()
}

pub fn forecast(cfg: &RunConfig, layout: &Layout, exec: Exec) -> Result<()> {
    let cleaned = load_cleaned(layout)?;
    let first_member = layout.train_dir().join(member_file_name(0));
    if !layout.train_dir().exists() || load_ensemble(&layout.train_dir()).map(|m| m.is_empty()).unwrap_or(true) {
        return Err(Error::MissingArtifact { stage: "train".into(), path: first_member });
    }
    let snaps = load_ensemble(&layout.train_dir())?;
    let lead = &snaps[0];
    if snaps.iter().any(|s| s.norm != lead.norm || s.config.window != lead.config.window || s.config.combo != lead.config.combo) {
        return Err(Error::Snapshot("ensemble members disagree on normalization, combo or window".into()));
    }
    let prepared = Prepared::with_norm(&cleaned, cfg.dataset.val_fraction, cfg.dataset.test_fraction, lead.norm.clone())?;
    let windows = prepared.windows(lead.config.combo, lead.config.window, 1)?;
    let models: Vec<_> = snaps.iter().map(|s| s.model.clone()).collect();
    let fc = rolling_forecast(&models, &prepared.norm, &windows.test, cfg.forecast.stride, exec)?;
    if fc.origins.is_empty() {
        return Err(Error::InsufficientLength { required: windows.test.spec.total(), actual: windows.test.range.len() });
    }

    let dir = layout.begin("forecast", cfg)?;
    fc.write_members_csv(BufWriter::new(File::create(layout.forecast_members())?))?;
    fc.write_band_csv(BufWriter::new(File::create(dir.join("forecast.csv"))?))?;

    let pooled = pooled_by_time(&fc);
    let (sonar, second, kept) = finite_rows(Aligned::from_pooled(&pooled, 0), Aligned::from_pooled(&pooled, 1));
    let (lo, hi) = sonar.actual.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let max_scour = hi - lo;
    let summary = summarize_errors(&sonar, &second, max_scour)?;
    let code = encode_config(&lead.config);
    let errors = format!(
        "config_code,members,origins,sonar_mae_m,stage_mae_m,max_scour_depth_m,scour_error_percent\n{code},{},{},{:?},{:?},{:?},{:?}\n",
        fc.members(),
        fc.origins.len(),
        summary.sonar_mae,
        summary.second_mae,
        summary.max_scour_depth,
        summary.scour_error_percent
    );
    fs::write(layout.forecast_errors(), errors)?;
    let mut extrema = String::from("kind,timestamp,actual_m,mean_error_m,bound_error_m\n");
    for (kind, list) in [("trough", &summary.troughs), ("peak", &summary.peaks)] {
        for e in list.iter() {
            let ts = format_timestamp(fc.timestamp(pooled.index[kept[e.index]]));
            let _ = writeln!(extrema, "{kind},{ts},{:?},{:?},{:?}", e.actual, e.mean_error, e.bound_error);
        }
    }
    fs::write(dir.join("extrema.csv"), extrema)?;
    for (j, ch) in fc.label_channels.iter().enumerate() {
        fs::write(dir.join(format!("band_{ch}.svg")), band_plot(&fc, j))?;
    }
    println!(
        "forecast: {} origins × {} members of {code}; sonar MAE {:.4} m, scour error {:.1}% -> {}",
        fc.origins.len(),
        fc.members(),
        summary.sonar_mae,
        summary.scour_error_percent,
        dir.display()
    );
    Ok(())
}

pub fn load_forecast(layout: &Layout) -> Result<RollingForecast> {
    require(&layout.forecast_members(), "forecast")?;
    RollingForecast::read_members_csv(File::open(layout.forecast_members())?)
}

pub fn alert(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let fc = load_forecast(layout)?;
    let k = match cfg.alert_origin {
        OriginChoice::Last => fc.origins.len() - 1,
        OriginChoice::Worst => fc.worst_origin().expect("forecast has a sonar channel"),
        OriginChoice::Index(k) => k,
    };
    let report = AlertReport::assess(&fc, k, &cfg.alert)?;
    let dir = layout.begin("alert", cfg)?;
    fs::write(dir.join("alert.txt"), report.to_text())?;
    fs::write(layout.alert_csv(), report.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}
