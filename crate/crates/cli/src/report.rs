//! `report`: plots and summary tables from whatever stages have run. Writes
//! only below `<out>/report`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use scour_core::config::RunConfig;
use scour_core::harness::{decode_config, grid_box_plot, read_results, CellResult, RecordSplit, Target};
use scour_core::ingest::{Channel, UniformSeries};
use scour_core::plot::{Line, LinePlot, PALETTE};
use scour_core::Result;

use crate::layout::{require, Layout};
use crate::stages::{band_plot, load_forecast};

fn series_points(s: &UniformSeries, ch: Channel) -> Option<Vec<(f64, f64)>> {
    let values = s.channel(ch)?;
    let offset = (s.origin() - s.timestamp(0)).num_hours() as f64;
    Some(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| ((i as f64 + offset) / 24.0, v.unwrap_or(f64::NAN)))
            .collect(),
    )
}

/// Overlay of the ingested, cleaned and (for synthetic runs) true series.
fn series_plot(layout: &Layout, ch: Channel) -> Result<Option<String>> {
    let mut lines = Vec::new();
    let mut origin = None;
    let sources = [
        (layout.ingest_series(), "hourly readings", PALETTE[0], false),
        (layout.cleaned(), "cleaned", PALETTE[1], false),
        (layout.synth_truth(), "ground truth", "#000000", true),
    ];
    for (path, name, color, dashed) in sources {
        if !path.exists() {
            continue;
        }
        let s = UniformSeries::load(&path)?;
        let start = *origin.get_or_insert(s.origin());
        let shift = (s.origin() - start).num_hours() as f64 / 24.0;
        if let Some(points) = series_points(&s, ch) {
            let points = points.into_iter().map(|(x, y)| (x + shift, y)).collect();
            lines.push(Line { name: name.into(), points, color: color.into(), dashed });
        }
    }
    if lines.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        LinePlot {
            title: format!("{ch} series"),
            x_label: "days since first reading".into(),
            y_label: format!("{ch} (m)"),
            lines,
            bands: vec![],
        }
        .to_svg(),
    ))
}

/// Validation and training loss of every ensemble member.
fn history_plot(dir: &Path) -> Result<Option<String>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("history_")))
        .collect();
    files.sort();
    let mut lines = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let num = |k: usize| rec.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
            train.push((num(0), num(1)));
            val.push((num(0), num(2)));
        }
        let color = PALETTE[i % PALETTE.len()].to_string();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").trim_start_matches("history_");
        lines.push(Line { name: format!("member {stem} validation"), points: val, color: color.clone(), dashed: false });
        lines.push(Line { name: format!("member {stem} training"), points: train, color, dashed: true });
    }
    if lines.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        LinePlot {
            title: "Training history (normalized MSE)".into(),
            x_label: "epoch".into(),
            y_label: "loss".into(),
            lines,
            bands: vec![],
        }
        .to_svg(),
    ))
}

pub fn render(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    require(&layout.ingest_series(), "ingest")?;
    let dir = layout.begin("report", cfg)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        fs::write(dir.join(name), body)?;
        written.push(name.to_string());
        Ok(())
    };

    for ch in [Channel::Sonar, Channel::Stage, Channel::Discharge] {
        if let Some(svg) = series_plot(layout, ch)? {
            put(&format!("series_{ch}.svg"), svg)?;
        }
    }
    if layout.train_dir().exists() {
        if let Some(svg) = history_plot(&layout.train_dir())? {
            put("history.svg", svg)?;
        }
    }
    if layout.grid_results().exists() {
        let records = read_results(&layout.grid_results())?;
        let codes: BTreeSet<&str> = records.iter().map(|r| r.config_code.as_str()).collect();
        let base = cfg.resolved_model();
        let cells: Vec<CellResult> = codes
            .into_iter()
            .filter_map(|c| decode_config(c, &base).ok())
            .map(|c| CellResult::from_records(c, &records))
            .collect();
        for (split, target, name) in [
            (RecordSplit::Validation, Target::Sonar, "grid_validation_sonar.svg"),
            (RecordSplit::Validation, Target::Stage, "grid_validation_stage.svg"),
            (RecordSplit::Test, Target::Sonar, "grid_test_sonar.svg"),
            (RecordSplit::Test, Target::Stage, "grid_test_stage.svg"),
        ] {
            put(name, grid_box_plot(&cells, split, target))?;
        }
    }
    if layout.forecast_members().exists() {
        let fc = load_forecast(layout)?;
        for (j, ch) in fc.label_channels.iter().enumerate() {
            put(&format!("forecast_{ch}.svg"), band_plot(&fc, j))?;
        }
    }
    let mut summary = String::new();
    if layout.forecast_errors().exists() {
        summary = fs::read_to_string(layout.forecast_errors())?;
        put("summary.csv", summary.clone())?;
    }
    let mut text = String::from("Scour forecasting report\n\n");
    if let Some((header, row)) = summary.lines().next().zip(summary.lines().nth(1)) {
        text.push_str("Performance summary\n");
        for (k, v) in header.split(',').zip(row.split(',')) {
            let _ = writeln!(text, "  {k:<22} {v}");
        }
        text.push('\n');
    }
    if layout.alert_csv().exists() {
        text.push_str("Alert\n");
        for line in fs::read_to_string(layout.stage("alert").join("alert.txt"))?.lines() {
            let _ = writeln!(text, "  {line}");
        }
        text.push('\n');
    }
    text.push_str("Figures\n");
    for name in &written {
        let _ = writeln!(text, "  {name}");
    }
    fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
