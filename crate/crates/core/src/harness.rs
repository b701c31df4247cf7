//! Grid search over model configurations and ensemble retraining.
//!
//! Every (cell, repetition) pair is an independent training run. Runs are
//! appended to a results CSV as they finish, so an interrupted search
//! resumes where it stopped, and all statistics are recomputed from that
//! file rather than kept in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::dataset::{FeatureCombo, Prepared, WindowSets, WindowSpec};
use crate::exec::Exec;
use crate::ingest::Channel;
use crate::neural::snapshot::Snapshot;
use crate::neural::{evaluate, train, ModelConfig, TrainedModel, Variant};
use crate::plot;
use crate::preprocess::NormStats;
use crate::stats::Summary;
use crate::{Error, Result};

/// Tolerance under which two mean MAEs count as tied in [`select_best`].
pub const TIE_TOLERANCE: f64 = 1e-9;

pub const RESULTS_HEADER: [&str; 8] =
    ["config_code", "repetition", "seed", "split", "sonar_mae", "stage_mae", "stopped_epoch", "wall_seconds"];

/// The axes of an exhaustive grid. Everything not on an axis (optimizer,
/// learning rate, epochs, ...) comes from `base`; repetition `k` of every
/// cell trains with seed `base.seed + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub combos: Vec<FeatureCombo>,
    pub variants: Vec<Variant>,
    pub windows: Vec<WindowSpec>,
    pub units: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub repetitions: usize,
    pub base: ModelConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            combos: vec![FeatureCombo::Ss, FeatureCombo::Ssy],
            variants: vec![Variant::SingleShot, Variant::Feedback, Variant::TwoLayer],
            windows: vec![
                WindowSpec { input_width: 336, label_width: 168 },
                WindowSpec { input_width: 720, label_width: 168 },
                WindowSpec { input_width: 720, label_width: 336 },
            ],
            units: vec![32, 64, 128, 256],
            dropouts: vec![0.0, 0.2],
            repetitions: 20,
            base: ModelConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("combos", self.combos.len()),
            ("variants", self.variants.len()),
            ("windows", self.windows.len()),
            ("units", self.units.len()),
            ("dropouts", self.dropouts.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::param(format!("grid axis `{name}` is empty")));
        }
        if self.repetitions == 0 {
            return Err(Error::param("repetitions must be >= 1"));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.combos.len() * self.variants.len() * self.windows.len() * self.units.len() * self.dropouts.len()
    }

    /// Every cell, in axis order (combo outermost, dropout innermost).
    pub fn cells(&self) -> Vec<ModelConfig> {
        let mut out = Vec::with_capacity(self.size());
        for &combo in &self.combos {
            for &variant in &self.variants {
                for &window in &self.windows {
                    for &units in &self.units {
                        for &dropout in &self.dropouts {
                            out.push(ModelConfig { combo, variant, window, units, dropout, ..self.base.clone() });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn seed_for(&self, repetition: usize) -> u64 {
        self.base.seed.wrapping_add(repetition as u64)
    }
}

/// `[features]-[model]-[window]-[units]-[dropout %]`, e.g.
/// `ssy-ss-(336,168)-256-0`.
pub fn encode_config(config: &ModelConfig) -> String {
    format!(
        "{}-{}-{}-{}-{}",
        config.combo.code(),
        config.variant.code(),
        config.window,
        config.units,
        config.dropout_percent()
    )
}

/// Inverse of [`encode_config`]; fields outside the code come from `base`.
pub fn decode_config(code: &str, base: &ModelConfig) -> Result<ModelConfig> {
    let bad = || Error::param(format!("malformed configuration code `{code}`"));
    let parts: Vec<&str> = code.split('-').collect();
    let [combo, variant, window, units, dropout] = parts[..] else {
        return Err(bad());
    };
    let percent: u32 = dropout.parse().map_err(|_| bad())?;
    let config = ModelConfig {
        combo: combo.parse()?,
        variant: variant.parse()?,
        window: window.parse()?,
        units: units.parse().map_err(|_| bad())?,
        dropout: f64::from(percent) / 100.0,
        ..base.clone()
    };
    config.validate()?;
    Ok(config)
}

/// Which split a results row describes; `Failed` rows record a run that
/// diverged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordSplit {
    Validation,
    Test,
    Failed,
}

impl RecordSplit {
    pub fn name(self) -> &'static str {
        match self {
            RecordSplit::Validation => "validation",
            RecordSplit::Test => "test",
            RecordSplit::Failed => "failed",
        }
    }
}

impl fmt::Display for RecordSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecordSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(RecordSplit::Validation),
            "test" => Ok(RecordSplit::Test),
            "failed" => Ok(RecordSplit::Failed),
            _ => Err(Error::param(format!("unknown split `{s}`"))),
        }
    }
}

/// The label feature a statistic refers to. For the `sd` combination the
/// second label is discharge and is reported in the stage slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Sonar,
    Stage,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sonar" => Ok(Target::Sonar),
            "stage" => Ok(Target::Stage),
            _ => Err(Error::param(format!("unknown target feature `{s}`"))),
        }
    }
}

/// One row of the results CSV. MAEs are in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_code: String,
    pub repetition: usize,
    pub seed: u64,
    pub split: RecordSplit,
    pub sonar_mae: f64,
    pub stage_mae: f64,
    pub stopped_epoch: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    fn to_row(&self) -> [String; 8] {
        [
            self.config_code.clone(),
            self.repetition.to_string(),
            self.seed.to_string(),
            self.split.to_string(),
            format!("{:?}", self.sonar_mae),
            format!("{:?}", self.stage_mae),
            self.stopped_epoch.to_string(),
            format!("{:.3}", self.wall_seconds),
        ]
    }

    pub fn mae(&self, target: Target) -> f64 {
        match target {
            Target::Sonar => self.sonar_mae,
            Target::Stage => self.stage_mae,
        }
    }
}

/// Read every row of a results file; a missing file has no rows.
pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Parse { line: 1, message: format!("unexpected results header {header:?}") });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| Error::Parse { line, message: format!("bad number `{}`", field(k)) })
        };
        let int = |k: usize| -> Result<u64> {
            field(k).parse().map_err(|_| Error::Parse { line, message: format!("bad integer `{}`", field(k)) })
        };
        out.push(RunRecord {
            config_code: field(0).to_string(),
            repetition: int(1)? as usize,
            seed: int(2)?,
            split: field(3).parse().map_err(|_| Error::Parse { line, message: format!("bad split `{}`", field(3)) })?,
            sonar_mae: num(4)?,
            stage_mae: num(5)?,
            stopped_epoch: int(6)? as usize,
            wall_seconds: num(7)?,
        });
    }
    Ok(out)
}

/// Append-only results writer shared by worker threads.
struct ResultsWriter {
    file: Mutex<File>,
}

impl ResultsWriter {
    fn open(path: &Path) -> Result<ResultsWriter> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{}", RESULTS_HEADER.join(","))?;
        }
        Ok(ResultsWriter { file: Mutex::new(file) })
    }

    /// Write all rows of one run with a single flush, so a run is either
    /// fully recorded or not at all.
    fn append(&self, rows: &[RunRecord]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in rows {
            w.write_record(r.to_row())?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&bytes)?;
        file.flush()?;
        Ok(())
    }
}

/// Window sets for every (combo, window) pair of a grid, built once from a
/// prepared series and shared read-only by all runs.
#[derive(Debug, Clone)]
pub struct WindowBank {
    pub norm: NormStats,
    sets: BTreeMap<(FeatureCombo, WindowSpec), Arc<WindowSets>>,
}

impl WindowBank {
    pub fn build(
        prepared: &Prepared,
        keys: impl IntoIterator<Item = (FeatureCombo, WindowSpec)>,
        train_stride: usize,
    ) -> Result<WindowBank> {
        let mut sets = BTreeMap::new();
        for (combo, window) in keys {
            if let std::collections::btree_map::Entry::Vacant(e) = sets.entry((combo, window)) {
                e.insert(Arc::new(prepared.windows(combo, window, train_stride)?));
            }
        }
        Ok(WindowBank { norm: prepared.norm.clone(), sets })
    }

    pub fn for_grid(prepared: &Prepared, grid: &GridSpec, train_stride: usize) -> Result<WindowBank> {
        let keys: Vec<_> =
            grid.combos.iter().flat_map(|&c| grid.windows.iter().map(move |&w| (c, w))).collect();
        Self::build(prepared, keys, train_stride)
    }

    pub fn get(&self, combo: FeatureCombo, window: WindowSpec) -> Result<Arc<WindowSets>> {
        self.sets
            .get(&(combo, window))
            .cloned()
            .ok_or_else(|| Error::param(format!("no windows prepared for {combo} {window}")))
    }
}

/// Normalized per-feature MAE converted to meters, as (sonar, stage) slots.
pub fn mae_in_meters(combo: FeatureCombo, norm: &NormStats, mae: &[f64]) -> Result<(f64, f64)> {
    let labels = combo.label_channels();
    if mae.len() != labels.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} MAEs", labels.len()), actual: mae.len().to_string() });
    }
    let mut slots = [f64::NAN; 2];
    for (j, ch) in labels.iter().enumerate() {
        let (_, std) = norm.get(*ch)?;
        let slot = if *ch == Channel::Sonar { 0 } else { 1 };
        slots[slot] = mae[j] * std;
    }
    Ok((slots[0], slots[1]))
}

fn is_run_failure(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::NonFinite(_))
}

/// Train one (cell, repetition) and describe it as results rows.
fn run_one(config: &ModelConfig, repetition: usize, windows: &WindowSets, norm: &NormStats, exec: Exec) -> Result<Vec<RunRecord>> {
    let code = encode_config(config);
    let started = Instant::now();
    let record = |split, (sonar_mae, stage_mae): (f64, f64), stopped_epoch, wall_seconds| RunRecord {
        config_code: code.clone(),
        repetition,
        seed: config.seed,
        split,
        sonar_mae,
        stage_mae,
        stopped_epoch,
        wall_seconds,
    };
    let trained = match train(config, windows, exec) {
        Ok(t) => t,
        Err(e) if is_run_failure(&e) => {
            let epoch = if let Error::Diverged { epoch } = e { epoch } else { 0 };
            return Ok(vec![record(RecordSplit::Failed, (f64::NAN, f64::NAN), epoch, started.elapsed().as_secs_f64())]);
        }
        Err(e) => return Err(e),
    };
    let val = evaluate(&trained.model, &windows.validation, exec)?;
    let test = evaluate(&trained.model, &windows.test, exec)?;
    let wall = started.elapsed().as_secs_f64();
    Ok(vec![
        record(RecordSplit::Validation, mae_in_meters(config.combo, norm, &val.mae)?, trained.stopped_epoch, wall),
        record(RecordSplit::Test, mae_in_meters(config.combo, norm, &test.mae)?, trained.stopped_epoch, wall),
    ])
}

/// Aggregated repetitions of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub code: String,
    pub config: ModelConfig,
    /// Rows of this cell, ordered by (repetition, split).
    pub records: Vec<RunRecord>,
}

impl CellResult {
    pub fn from_records(config: ModelConfig, records: &[RunRecord]) -> CellResult {
        let code = encode_config(&config);
        let mut mine: Vec<RunRecord> = records.iter().filter(|r| r.config_code == code).cloned().collect();
        mine.sort_by(|a, b| (a.repetition, a.split).cmp(&(b.repetition, b.split)));
        CellResult { code, config, records: mine }
    }

    /// Per-repetition MAEs (meters) of one split and feature.
    pub fn values(&self, split: RecordSplit, target: Target) -> Vec<f64> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.mae(target)).collect()
    }

    pub fn summary(&self, split: RecordSplit, target: Target) -> Option<Summary> {
        Summary::of(&self.values(split, target))
    }

    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.split == RecordSplit::Failed).count()
    }

    pub fn completed(&self) -> usize {
        self.records.iter().filter(|r| r.split == RecordSplit::Validation).count()
    }

    /// Every recorded run of the cell diverged.
    pub fn all_failed(&self) -> bool {
        self.failed() > 0 && self.completed() == 0
    }
}

/// Outcome of [`run_grid`].
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<CellResult>,
    /// Training runs executed by this call (0 when everything was already
    /// in the results file).
    pub new_runs: usize,
}

/// Train every missing (cell, repetition) pair of `grid`, appending rows to
/// `results_path`, then aggregate the whole file. Runs execute through
/// `exec`; each run is itself deterministic, so the rows do not depend on
/// scheduling (only their order in the file does).
pub fn run_grid(grid: &GridSpec, bank: &WindowBank, results_path: &Path, exec: Exec) -> Result<GridOutcome> {
    grid.validate()?;
    let done: BTreeSet<(String, usize)> =
        read_results(results_path)?.into_iter().map(|r| (r.config_code, r.repetition)).collect();
    let mut tasks = Vec::new();
    for cell in grid.cells() {
        let code = encode_config(&cell);
        for rep in 0..grid.repetitions {
            if !done.contains(&(code.clone(), rep)) {
                tasks.push((ModelConfig { seed: grid.seed_for(rep), ..cell.clone() }, rep));
            }
        }
    }
    let writer = ResultsWriter::open(results_path)?;
    let outcomes = exec.map(&tasks, |(config, rep)| -> Result<()> {
        let windows = bank.get(config.combo, config.window)?;
        let rows = run_one(config, *rep, &windows, &bank.norm, exec)?;
        writer.append(&rows)
    });
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;

    let records = read_results(results_path)?;
    let cells = grid.cells().into_iter().map(|c| CellResult::from_records(c, &records)).collect();
    Ok(GridOutcome { cells, new_runs: tasks.len() })
}

/// Smallest mean validation MAE of `target`; means within
/// [`TIE_TOLERANCE`] tie and are separated by the smaller standard
/// deviation (again within tolerance), then by code. Cells without any
/// completed run are ignored. The choice does not depend on input order.
pub fn select_best(results: &[CellResult], target: Target) -> Result<&CellResult> {
    let scored: Vec<(&CellResult, Summary)> = results
        .iter()
        .filter_map(|c| c.summary(RecordSplit::Validation, target).map(|s| (c, s)))
        .filter(|(_, s)| s.mean.is_finite())
        .collect();
    let min_mean = scored.iter().map(|(_, s)| s.mean).fold(f64::INFINITY, f64::min);
    if !min_mean.is_finite() {
        return Err(Error::param("no grid cell has a completed run"));
    }
    let tied: Vec<_> = scored.into_iter().filter(|(_, s)| s.mean <= min_mean + TIE_TOLERANCE).collect();
    let min_std = tied.iter().map(|(_, s)| s.std).fold(f64::INFINITY, f64::min);
    Ok(tied
        .into_iter()
        .filter(|(_, s)| s.std <= min_std + TIE_TOLERANCE)
        .map(|(c, _)| c)
        .min_by(|a, b| a.code.cmp(&b.code))
        .expect("at least one tied cell"))
}

/// Box plot of one split and feature across cells, in the given order.
pub fn grid_box_plot(cells: &[CellResult], split: RecordSplit, target: Target) -> String {
    let name = match target {
        Target::Sonar => "sonar",
        Target::Stage => "stage",
    };
    let groups: Vec<(String, Vec<f64>)> = cells.iter().map(|c| (c.code.clone(), c.values(split, target))).collect();
    plot::box_plot(&format!("Grid search: {split} {name} MAE"), "MAE (m)", &groups)
}

/// K independently seeded retrainings of one configuration.
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub config: ModelConfig,
    pub norm: NormStats,
    /// `(member index, model)`; failed members are absent.
    pub members: Vec<(usize, TrainedModel)>,
    pub failed: Vec<(usize, String)>,
    /// Test MAE (meters) per member, in `members` order, as (sonar, stage).
    pub test_mae: Vec<(f64, f64)>,
}

impl TrainedEnsemble {
    pub fn test_summary(&self, target: Target) -> Option<Summary> {
        let xs: Vec<f64> = self
            .test_mae
            .iter()
            .map(|(s, g)| match target {
                Target::Sonar => *s,
                Target::Stage => *g,
            })
            .collect();
        Summary::of(&xs)
    }

    pub fn snapshots(&self) -> Vec<(usize, Snapshot)> {
        self.members
            .iter()
            .map(|(k, t)| (*k, Snapshot { config: t.config.clone(), norm: self.norm.clone(), model: t.model.clone() }))
            .collect()
    }

    /// Write `member_{k:02}.snap` for every member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (k, snap) in self.snapshots() {
            let path = dir.join(member_file_name(k));
            snap.save(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn member_file_name(k: usize) -> String {
    format!("member_{k:02}.snap")
}

/// Successful members required out of `k`: `max(2, k/2)`, capped at `k`.
pub fn required_members(k: usize) -> usize {
    (k / 2).max(2).min(k)
}

/// Retrain `config` `k` times with seeds `config.seed + i`. Diverged
/// members are dropped; fewer than [`required_members`] survivors is an
/// error.
pub fn train_ensemble(config: &ModelConfig, windows: &WindowSets, norm: &NormStats, k: usize, exec: Exec) -> Result<TrainedEnsemble> {
    if k == 0 {
        return Err(Error::param("ensemble size must be >= 1"));
    }
    config.validate()?;
    let runs = exec.map_range(k, |i| -> Result<(TrainedModel, (f64, f64))> {
        let cfg = ModelConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let trained = train(&cfg, windows, exec)?;
        let test = evaluate(&trained.model, &windows.test, exec)?;
        let mae = mae_in_meters(cfg.combo, norm, &test.mae)?;
        Ok((trained, mae))
    });
    let mut members = Vec::new();
    let mut failed = Vec::new();
    let mut test_mae = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok((t, m)) => {
                members.push((i, t));
                test_mae.push(m);
            }
            Err(e) if is_run_failure(&e) => failed.push((i, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let required = required_members(k);
    if members.len() < required {
        return Err(Error::TooFewMembers { requested: k, succeeded: members.len(), required });
    }
    Ok(TrainedEnsemble { config: config.clone(), norm: norm.clone(), members, failed, test_mae })
}

/// Load every `member_*.snap` of `dir`, ordered by member index.
pub fn load_ensemble(dir: &Path) -> Result<Vec<Snapshot>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("member_") && n.ends_with(".snap"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| Snapshot::load(p)).collect()
}
