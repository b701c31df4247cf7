//! Run configuration: plain-text `[section]` blocks of `key = value` lines.
//!
//! Every key has a default, unknown sections and keys are rejected, and the
//! resolved configuration can be written back out ([`RunConfig::to_ini`])
//! in a form that parses to the same value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{FeatureCombo, WindowSpec};
use crate::earlywarn::AlertConfig;
use crate::harness::GridSpec;
use crate::ingest::Units;
use crate::neural::{ModelConfig, Variant};
use crate::preprocess::PreprocessConfig;
use crate::synth::{FloodSpec, FrozenWindow, SynthSpec};
use crate::{Error, Result};

/// Where the ingest stage reads from and how values are interpreted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestConfig {
    /// Raw readings CSV; `None` reads the output of the `synth` stage.
    pub input: Option<PathBuf>,
    pub units: Units,
    /// Bias-shift table CSV (`sensor,start,end,offset_m`).
    pub bias_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Keep every n-th training window.
    pub train_stride: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { val_fraction: 0.2, test_fraction: 0.2, train_stride: 1 }
    }
}

/// Which forecast origin an alert is raised for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OriginChoice {
    #[default]
    Last,
    /// The origin whose ensemble-mean maximum scour is largest.
    Worst,
    Index(usize),
}

impl FromStr for OriginChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(OriginChoice::Last),
            "worst" => Ok(OriginChoice::Worst),
            n => n.parse().map(OriginChoice::Index).map_err(|_| Error::param(format!("bad origin `{s}`"))),
        }
    }
}

impl std::fmt::Display for OriginChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OriginChoice::Last => f.write_str("last"),
            OriginChoice::Worst => f.write_str("worst"),
            OriginChoice::Index(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    /// Hours between consecutive forecast origins.
    pub stride: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { stride: 24 }
    }
}

/// Every setting of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds the synthetic generator and, offset per member or repetition,
    /// every training run.
    pub seed: u64,
    pub synth: SynthSpec,
    pub ingest: IngestConfig,
    pub preprocess: PreprocessConfig,
    pub dataset: DatasetConfig,
    /// Architecture and optimization of `train`; its seed is ignored in
    /// favour of [`RunConfig::seed`].
    pub model: ModelConfig,
    pub ensemble_size: usize,
    pub grid: GridSpec,
    pub forecast: ForecastConfig,
    pub alert: AlertConfig,
    pub alert_origin: OriginChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            synth: SynthSpec::default(),
            ingest: IngestConfig::default(),
            preprocess: PreprocessConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            ensemble_size: 20,
            grid: GridSpec::default(),
            forecast: ForecastConfig::default(),
            alert: AlertConfig::default(),
            alert_origin: OriginChoice::Last,
        }
    }
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn join<T>(items: &[T], show: impl Fn(&T) -> String) -> String {
    items.iter().map(show).collect::<Vec<_>>().join(", ")
}

/// Split a list on commas and whitespace that are not inside parentheses,
/// so window lists like `(336,168), (720,168)` work.
fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' | ' ' | '\t' if depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            _ if c.is_whitespace() => {}
            _ => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or("none".into(), |p| p.display().to_string())
}

fn format_flood(fl: &FloodSpec) -> String {
    format!("{:?}:{:?}:{:?}:{:?}:{:?}", fl.peak_day, fl.jitter_days, fl.magnitude_m, fl.magnitude_jitter, fl.duration_days)
}

fn parse_flood(s: &str) -> Option<FloodSpec> {
    let v: Vec<f64> = s.split(':').map(str::parse).collect::<Result<_, _>>().ok()?;
    let [peak_day, jitter_days, magnitude_m, magnitude_jitter, duration_days] = v[..] else {
        return None;
    };
    Some(FloodSpec { peak_day, jitter_days, magnitude_m, magnitude_jitter, duration_days })
}

fn format_frozen(fr: &Option<FrozenWindow>) -> String {
    fr.map_or("none".into(), |w| format!("{:02}-{:02}..{:02}-{:02}", w.start.0, w.start.1, w.end.0, w.end.1))
}

fn parse_frozen(s: &str) -> Option<Option<FrozenWindow>> {
    if s == "none" {
        return Some(None);
    }
    let (a, b) = s.split_once("..")?;
    let md = |x: &str| -> Option<(u32, u32)> {
        let (m, d) = x.split_once('-')?;
        let (m, d) = (m.parse().ok()?, d.parse().ok()?);
        ((1..=12).contains(&m) && (1..=31).contains(&d)).then_some((m, d))
    };
    Some(Some(FrozenWindow { start: md(a)?, end: md(b)? }))
}

impl RunConfig {
    /// `(section, key, value)` of every setting, in file order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let s = &self.synth;
        let p = &self.preprocess;
        let m = &self.model;
        let g = &self.grid;
        let a = &self.alert;
        vec![
            ("run", "seed", self.seed.to_string()),
            ("synth", "years", s.years.to_string()),
            ("synth", "start_year", s.start_year.to_string()),
            ("synth", "base_bed_m", f(s.base_bed_m)),
            ("synth", "base_stage_m", f(s.base_stage_m)),
            ("synth", "seasonal_amplitude_m", f(s.seasonal_amplitude_m)),
            ("synth", "floods", join(&s.floods, format_flood)),
            ("synth", "eta", f(s.eta)),
            ("synth", "scour_tau_hours", f(s.scour_tau_hours)),
            ("synth", "fill_tau_days", f(s.fill_tau_days)),
            ("synth", "rating_coef", f(s.rating_coef)),
            ("synth", "rating_exp", f(s.rating_exp)),
            ("synth", "noise_std_m", f(s.noise_std_m)),
            ("synth", "outlier_rate", f(s.outlier_rate)),
            ("synth", "outlier_magnitude_m", f(s.outlier_magnitude_m)),
            ("synth", "gap_rate", f(s.gap_rate)),
            ("synth", "gap_max_hours", s.gap_max_hours.to_string()),
            ("synth", "frozen", format_frozen(&s.frozen)),
            ("ingest", "input", opt_path(&self.ingest.input)),
            ("ingest", "units", self.ingest.units.to_string()),
            ("ingest", "bias_table", opt_path(&self.ingest.bias_table)),
            ("preprocess", "median_window", p.filter.median_window.to_string()),
            ("preprocess", "ma_window", p.filter.ma_window.to_string()),
            ("preprocess", "lowpass_cutoff", f(p.filter.lowpass_cutoff)),
            ("preprocess", "lowpass_order", p.filter.lowpass_order.to_string()),
            ("preprocess", "short_gap_max", p.impute.short_gap_max.to_string()),
            ("preprocess", "poly_degree", p.impute.poly_degree.to_string()),
            ("preprocess", "gp_length_scale", f(p.impute.kernel.length_scale)),
            ("preprocess", "gp_signal_variance", f(p.impute.kernel.signal_variance)),
            ("preprocess", "gp_noise_variance", f(p.impute.kernel.noise_variance)),
            ("preprocess", "gp_context", p.impute.gp_context.to_string()),
            ("preprocess", "max_gap", p.impute.max_gap.to_string()),
            ("dataset", "feature_combo", m.combo.to_string()),
            ("dataset", "input_width", m.window.input_width.to_string()),
            ("dataset", "label_width", m.window.label_width.to_string()),
            ("dataset", "val_fraction", f(self.dataset.val_fraction)),
            ("dataset", "test_fraction", f(self.dataset.test_fraction)),
            ("dataset", "batch_size", m.batch_size.to_string()),
            ("dataset", "train_stride", self.dataset.train_stride.to_string()),
            ("train", "variant", m.variant.to_string()),
            ("train", "units", m.units.to_string()),
            ("train", "dropout", f(m.dropout)),
            ("train", "optimizer", m.optimizer.code().to_string()),
            ("train", "learning_rate", f(m.learning_rate)),
            ("train", "max_epochs", m.max_epochs.to_string()),
            ("train", "patience", m.patience.to_string()),
            ("train", "clip_norm", m.clip_norm.map_or("none".into(), f)),
            ("train", "output_activation", m.output_activation.code().to_string()),
            ("train", "ensemble_size", self.ensemble_size.to_string()),
            ("grid", "combos", join(&g.combos, |c| c.to_string())),
            ("grid", "variants", join(&g.variants, |v| v.to_string())),
            ("grid", "windows", join(&g.windows, |w| w.to_string())),
            ("grid", "units", join(&g.units, |u| u.to_string())),
            ("grid", "dropouts", join(&g.dropouts, |d| f(*d))),
            ("grid", "repetitions", g.repetitions.to_string()),
            ("forecast", "stride", self.forecast.stride.to_string()),
            ("alert", "embedment_m", f(a.embedment_m)),
            ("alert", "min_residual_m", f(a.min_residual_m)),
            ("alert", "target_exceedance", f(a.target_exceedance)),
            ("alert", "critical_probability", f(a.critical_probability)),
            ("alert", "watch_probability", f(a.watch_probability)),
            ("alert", "thresholds", join(&a.thresholds, |t| f(*t))),
            ("alert", "datum", a.datum.map_or("origin".into(), f)),
            ("alert", "origin", self.alert_origin.to_string()),
        ]
    }

    /// Set one key from its text form. Errors name `section.key`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let name = format!("{section}.{key}");
        let value = value.trim();
        let invalid = |msg: String| Error::Config { key: name.clone(), message: msg };
        let bad = || invalid(format!("invalid value `{value}`"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        macro_rules! list {
            () => {{
                let items = split_list(value);
                if items.is_empty() {
                    return Err(invalid("list must not be empty".into()));
                }
                items.iter().map(|x| x.parse()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad())?
            }};
        }
        let opt_path = || if value == "none" { None } else { Some(PathBuf::from(value)) };
        let s = &mut self.synth;
        let p = &mut self.preprocess;
        let m = &mut self.model;
        let g = &mut self.grid;
        let a = &mut self.alert;
        match (section, key) {
            ("run", "seed") => self.seed = parse!(),
            ("synth", "years") => s.years = parse!(),
            ("synth", "start_year") => s.start_year = parse!(),
            ("synth", "base_bed_m") => s.base_bed_m = parse!(),
            ("synth", "base_stage_m") => s.base_stage_m = parse!(),
            ("synth", "seasonal_amplitude_m") => s.seasonal_amplitude_m = parse!(),
            ("synth", "floods") => {
                s.floods = if value == "none" {
                    Vec::new()
                } else {
                    split_list(value).iter().map(|x| parse_flood(x)).collect::<Option<_>>().ok_or_else(bad)?
                }
            }
            ("synth", "eta") => s.eta = parse!(),
            ("synth", "scour_tau_hours") => s.scour_tau_hours = parse!(),
            ("synth", "fill_tau_days") => s.fill_tau_days = parse!(),
            ("synth", "rating_coef") => s.rating_coef = parse!(),
            ("synth", "rating_exp") => s.rating_exp = parse!(),
            ("synth", "noise_std_m") => s.noise_std_m = parse!(),
            ("synth", "outlier_rate") => s.outlier_rate = parse!(),
            ("synth", "outlier_magnitude_m") => s.outlier_magnitude_m = parse!(),
            ("synth", "gap_rate") => s.gap_rate = parse!(),
            ("synth", "gap_max_hours") => s.gap_max_hours = parse!(),
            ("synth", "frozen") => s.frozen = parse_frozen(value).ok_or_else(bad)?,
            ("ingest", "input") => self.ingest.input = opt_path(),
            ("ingest", "units") => self.ingest.units = parse!(),
            ("ingest", "bias_table") => self.ingest.bias_table = opt_path(),
            ("preprocess", "median_window") => p.filter.median_window = parse!(),
            ("preprocess", "ma_window") => p.filter.ma_window = parse!(),
            ("preprocess", "lowpass_cutoff") => p.filter.lowpass_cutoff = parse!(),
            ("preprocess", "lowpass_order") => p.filter.lowpass_order = parse!(),
            ("preprocess", "short_gap_max") => p.impute.short_gap_max = parse!(),
            ("preprocess", "poly_degree") => p.impute.poly_degree = parse!(),
            ("preprocess", "gp_length_scale") => p.impute.kernel.length_scale = parse!(),
            ("preprocess", "gp_signal_variance") => p.impute.kernel.signal_variance = parse!(),
            ("preprocess", "gp_noise_variance") => p.impute.kernel.noise_variance = parse!(),
            ("preprocess", "gp_context") => p.impute.gp_context = parse!(),
            ("preprocess", "max_gap") => p.impute.max_gap = parse!(),
            ("dataset", "feature_combo") => m.combo = parse!(),
            ("dataset", "input_width") => m.window.input_width = parse!(),
            ("dataset", "label_width") => m.window.label_width = parse!(),
            ("dataset", "val_fraction") => self.dataset.val_fraction = parse!(),
            ("dataset", "test_fraction") => self.dataset.test_fraction = parse!(),
            ("dataset", "batch_size") => m.batch_size = parse!(),
            ("dataset", "train_stride") => self.dataset.train_stride = parse!(),
            ("train", "variant") => m.variant = parse!(),
            ("train", "units") => m.units = parse!(),
            ("train", "dropout") => m.dropout = parse!(),
            ("train", "optimizer") => m.optimizer = parse!(),
            ("train", "learning_rate") => m.learning_rate = parse!(),
            ("train", "max_epochs") => m.max_epochs = parse!(),
            ("train", "patience") => m.patience = parse!(),
            ("train", "clip_norm") => m.clip_norm = if value == "none" { None } else { Some(parse!()) },
            ("train", "output_activation") => m.output_activation = parse!(),
            ("train", "ensemble_size") => self.ensemble_size = parse!(),
            ("grid", "combos") => g.combos = list!(),
            ("grid", "variants") => g.variants = list!(),
            ("grid", "windows") => g.windows = list!(),
            ("grid", "units") => g.units = list!(),
            ("grid", "dropouts") => g.dropouts = list!(),
            ("grid", "repetitions") => g.repetitions = parse!(),
            ("forecast", "stride") => self.forecast.stride = parse!(),
            ("alert", "embedment_m") => a.embedment_m = parse!(),
            ("alert", "min_residual_m") => a.min_residual_m = parse!(),
            ("alert", "target_exceedance") => a.target_exceedance = parse!(),
            ("alert", "critical_probability") => a.critical_probability = parse!(),
            ("alert", "watch_probability") => a.watch_probability = parse!(),
            ("alert", "thresholds") => a.thresholds = if value == "none" { Vec::new() } else { list!() },
            ("alert", "datum") => a.datum = if value == "origin" { None } else { Some(parse!()) },
            ("alert", "origin") => self.alert_origin = parse!(),
            _ => return Err(invalid("unknown key".into())),
        }
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (lhs, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            key: assignment.to_string(),
            message: "expected section.key=value".into(),
        })?;
        let (section, key) = lhs.trim().split_once('.').ok_or_else(|| Error::Config {
            key: lhs.trim().to_string(),
            message: "expected section.key".into(),
        })?;
        self.set(section.trim(), key.trim(), value)
    }

    /// Parse a config file over the defaults. Keys absent from the text keep
    /// their default.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse { line: i as u64 + 1, message: format!("expected `key = value`, got `{line}`") });
            };
            let Some(sec) = &section else {
                return Err(Error::Config { key: key.trim().to_string(), message: "key outside of any [section]".into() });
            };
            cfg.set(sec, key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Check cross-field constraints; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let named = |key: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidParameter(message) => Error::Config { key: key.to_string(), message },
                other => other,
            })
        };
        named("synth", self.synth.validate())?;
        named("preprocess", self.preprocess.filter.validate())?;
        named("preprocess", self.preprocess.impute.validate())?;
        named("train", self.resolved_model().validate())?;
        named("grid", GridSpec { base: self.resolved_model(), ..self.grid.clone() }.validate())?;
        named("alert", self.alert.validate())?;
        let d = &self.dataset;
        if !(d.val_fraction > 0.0 && d.test_fraction > 0.0 && d.val_fraction + d.test_fraction < 1.0) {
            return Err(Error::Config {
                key: "dataset.val_fraction".into(),
                message: "validation and test fractions must be positive and sum to less than 1".into(),
            });
        }
        if d.train_stride == 0 {
            return Err(Error::Config { key: "dataset.train_stride".into(), message: "must be >= 1".into() });
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config { key: "train.ensemble_size".into(), message: "must be >= 1".into() });
        }
        if self.forecast.stride == 0 {
            return Err(Error::Config { key: "forecast.stride".into(), message: "must be >= 1".into() });
        }
        Ok(())
    }

    /// Synthetic spec with the run seed applied.
    pub fn resolved_synth(&self) -> SynthSpec {
        SynthSpec { seed: self.seed, ..self.synth.clone() }
    }

    /// Model config with the run seed applied.
    pub fn resolved_model(&self) -> ModelConfig {
        ModelConfig { seed: self.seed, ..self.model.clone() }
    }

    /// Grid whose non-axis settings come from the `train` section.
    pub fn resolved_grid(&self) -> GridSpec {
        GridSpec { base: self.resolved_model(), ..self.grid.clone() }
    }

    pub fn window(&self) -> WindowSpec {
        self.model.window
    }

    pub fn combo(&self) -> FeatureCombo {
        self.model.combo
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    /// The resolved configuration as a config file.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.entries() {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
