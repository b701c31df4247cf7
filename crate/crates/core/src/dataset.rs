//! Feature assembly, chronological splits, sliding windows and batching.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Datelike, TimeZone, Utc};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Channel, UniformSeries};
use crate::preprocess::NormStats;
use crate::{Error, Result};

const SECONDS_PER_YEAR: f64 = 365.2425 * 86_400.0;

/// Which sensor channels feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureCombo {
    /// sonar, stage
    Ss,
    /// sonar, stage, year_sin, year_cos
    Ssy,
    /// sonar, stage, discharge
    Ssd,
    /// sonar, discharge
    Sd,
}

impl FeatureCombo {
    pub const ALL: [FeatureCombo; 4] = [FeatureCombo::Ss, FeatureCombo::Ssy, FeatureCombo::Ssd, FeatureCombo::Sd];

    pub fn code(self) -> &'static str {
        match self {
            FeatureCombo::Ss => "ss",
            FeatureCombo::Ssy => "ssy",
            FeatureCombo::Ssd => "ssd",
            FeatureCombo::Sd => "sd",
        }
    }

    /// Input channels in model column order. Sonar is always column 0.
    pub fn channels(self) -> &'static [Channel] {
        match self {
            FeatureCombo::Ss => &[Channel::Sonar, Channel::Stage],
            FeatureCombo::Ssy => &[Channel::Sonar, Channel::Stage, Channel::YearSin, Channel::YearCos],
            FeatureCombo::Ssd => &[Channel::Sonar, Channel::Stage, Channel::Discharge],
            FeatureCombo::Sd => &[Channel::Sonar, Channel::Discharge],
        }
    }

    /// Forecast targets, sonar first.
    pub fn label_channels(self) -> &'static [Channel] {
        match self {
            FeatureCombo::Sd => &[Channel::Sonar, Channel::Discharge],
            _ => &[Channel::Sonar, Channel::Stage],
        }
    }

    /// Input column of each label channel.
    pub fn label_columns(self) -> Vec<usize> {
        let chans = self.channels();
        self.label_channels()
            .iter()
            .map(|l| chans.iter().position(|c| c == l).expect("label channel is an input"))
            .collect()
    }

    pub fn needs_time_features(self) -> bool {
        self.channels().iter().any(|c| c.is_calendar())
    }
}

impl fmt::Display for FeatureCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FeatureCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureCombo::ALL
            .into_iter()
            .find(|c| c.code() == s.trim())
            .ok_or_else(|| Error::param(format!("unknown feature combo `{s}`")))
    }
}

/// Fraction of the (365.2425-day) year elapsed since Jan 1 00:00 UTC.
pub fn year_fraction(t: DateTime<Utc>) -> f64 {
    let jan1 = Utc.with_ymd_and_hms(t.year(), 1, 1, 0, 0, 0).unwrap();
    (t - jan1).num_seconds() as f64 / SECONDS_PER_YEAR
}

/// Add `year_sin`/`year_cos` channels encoding the time of year.
pub fn add_time_features(series: &UniformSeries) -> Result<UniformSeries> {
    let mut out = series.clone();
    let tau: Vec<f64> = (0..series.len()).map(|i| year_fraction(series.timestamp(i))).collect();
    let angle = |t: &f64| 2.0 * std::f64::consts::PI * t;
    out.set_channel(Channel::YearSin, tau.iter().map(|t| Some(angle(t).sin())).collect())?;
    out.set_channel(Channel::YearCos, tau.iter().map(|t| Some(angle(t).cos())).collect())?;
    Ok(out)
}

/// History length and forecast horizon, in steps. The offset between the
/// last input step and the last label step equals the label width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowSpec {
    pub input_width: usize,
    pub label_width: usize,
}

impl WindowSpec {
    pub fn new(input_width: usize, label_width: usize) -> Result<Self> {
        if input_width == 0 || label_width == 0 {
            return Err(Error::param("window widths must be >= 1"));
        }
        Ok(WindowSpec { input_width, label_width })
    }

    pub fn offset(&self) -> usize {
        self.label_width
    }

    pub fn total(&self) -> usize {
        self.input_width + self.label_width
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.input_width, self.label_width)
    }
}

impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (a, b) = inner
            .split_once(',')
            .ok_or_else(|| Error::param(format!("window `{s}` is not `(input,label)`")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::param(format!("window `{s}` has a non-integer width")))
        };
        WindowSpec::new(parse(a)?, parse(b)?)
    }
}

/// Sequences that fit in a contiguous run of `len` samples.
pub fn window_count(len: usize, spec: WindowSpec) -> usize {
    (len + 1).saturating_sub(spec.total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Test is the final `test_steps`, validation the `val_steps` before it,
/// training everything earlier.
pub fn chronological_split(len: usize, test_steps: usize, val_steps: usize) -> Result<SplitRanges> {
    let required = test_steps + val_steps + 1;
    if len < required || test_steps == 0 || val_steps == 0 {
        return Err(Error::InsufficientLength { required, actual: len });
    }
    let test_start = len - test_steps;
    let val_start = test_start - val_steps;
    Ok(SplitRanges { train: 0..val_start, validation: val_start..test_start, test: test_start..len })
}

/// Split so that validation and test receive the given fractions of the
/// *valid* rows (test last). Long invalid stretches such as frozen seasons
/// therefore do not eat into either split.
pub fn split_by_valid_fraction(valid: &[bool], val_fraction: f64, test_fraction: f64) -> Result<SplitRanges> {
    if !(val_fraction > 0.0 && test_fraction > 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(Error::param("split fractions must be positive and sum to less than 1"));
    }
    let rows: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    let n = rows.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_test == 0 || n_val == 0 || n_test + n_val >= n {
        return Err(Error::InsufficientLength { required: 3, actual: n });
    }
    let test_start = rows[n - n_test];
    let val_start = rows[n - n_test - n_val];
    Ok(SplitRanges { train: 0..val_start, validation: val_start..test_start, test: test_start..valid.len() })
}

/// Normalized feature matrix of one feature combination.
#[derive(Debug, Clone)]
pub struct FeatureFrame {
    pub combo: FeatureCombo,
    pub origin: DateTime<Utc>,
    /// `[time, feature]`; `NaN` where a row is invalid.
    pub features: Array2<f64>,
    /// `true` where every feature is present.
    pub valid: Vec<bool>,
}

impl FeatureFrame {
    /// Select the combo's channels from a normalized series that already
    /// carries any calendar channels it needs.
    pub fn build(series: &UniformSeries, combo: FeatureCombo) -> Result<FeatureFrame> {
        let chans = combo.channels();
        let cols: Vec<&[Option<f64>]> = chans.iter().map(|c| series.require(*c)).collect::<Result<_>>()?;
        let n = series.len();
        let mut features = Array2::from_elem((n, chans.len()), f64::NAN);
        let mut valid = vec![true; n];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                match v {
                    Some(x) => features[[i, j]] = *x,
                    None => valid[i] = false,
                }
            }
        }
        Ok(FeatureFrame { combo, origin: series.origin(), features, valid })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Maximal runs of valid rows inside `range`.
    pub fn valid_runs(&self, range: Range<usize>) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for i in range.clone() {
            match (self.valid[i], start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(s..range.end);
        }
        runs
    }
}

/// One materialized (input, label) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub start: usize,
    /// `[input_width, n_features]`
    pub input: Array2<f64>,
    /// `[label_width, n_label]`
    pub label: Array2<f64>,
}

/// Model-ready tensors for a group of sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub starts: Vec<usize>,
    /// `[input_width, batch, n_features]`, time-major.
    pub input: Array3<f64>,
    /// `[batch, label_width, n_label]`
    pub label: Array3<f64>,
    /// Inputs for feedback decoding steps 1.. as `[label_width - 1, batch,
    /// n_features]`: calendar columns carry their true future values, other
    /// columns hold the last observed input value. Label columns are
    /// overwritten by the model's own predictions.
    pub decoder_exog: Array3<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// The sequences at positions `range` of this batch.
    pub fn rows(&self, range: Range<usize>) -> Batch {
        use ndarray::s;
        Batch {
            starts: self.starts[range.clone()].to_vec(),
            input: self.input.slice(s![.., range.clone(), ..]).to_owned(),
            label: self.label.slice(s![range.clone(), .., ..]).to_owned(),
            decoder_exog: self.decoder_exog.slice(s![.., range, ..]).to_owned(),
        }
    }
}

/// Sliding windows of one split. The frame is shared, windows are start
/// indices into it.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub frame: Arc<FeatureFrame>,
    pub spec: WindowSpec,
    pub split: Split,
    /// Frame rows belonging to the split.
    pub range: Range<usize>,
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.frame.n_features()
    }

    pub fn n_label(&self) -> usize {
        self.frame.combo.label_channels().len()
    }

    pub fn sequence(&self, k: usize) -> Sequence {
        let s = self.starts[k];
        let iw = self.spec.input_width;
        let lw = self.spec.label_width;
        let f = &self.frame.features;
        let label_cols = self.frame.combo.label_columns();
        let input = f.slice(ndarray::s![s..s + iw, ..]).to_owned();
        let label = Array2::from_shape_fn((lw, label_cols.len()), |(t, j)| f[[s + iw + t, label_cols[j]]]);
        Sequence { start: s, input, label }
    }

    /// Materialize the windows at `indices` (positions in `starts`).
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let iw = self.spec.input_width;
        let lw = self.spec.label_width;
        let nf = self.n_features();
        let f = &self.frame.features;
        let label_cols = self.frame.combo.label_columns();
        let calendar: Vec<bool> = self.frame.combo.channels().iter().map(|c| c.is_calendar()).collect();
        let starts: Vec<usize> = indices.iter().map(|&k| self.starts[k]).collect();
        let b = starts.len();
        let input = Array3::from_shape_fn((iw, b, nf), |(t, n, j)| f[[starts[n] + t, j]]);
        let label = Array3::from_shape_fn((b, lw, label_cols.len()), |(n, t, j)| {
            f[[starts[n] + iw + t, label_cols[j]]]
        });
        let decoder_exog = Array3::from_shape_fn((lw - 1, b, nf), |(k, n, j)| {
            if calendar[j] {
                f[[starts[n] + iw + k, j]]
            } else {
                f[[starts[n] + iw - 1, j]]
            }
        });
        Batch { starts, input, label, decoder_exog }
    }

    pub fn all(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone)]
pub struct WindowSets {
    pub train: WindowSet,
    pub validation: WindowSet,
    pub test: WindowSet,
}

impl WindowSets {
    pub fn get(&self, split: Split) -> &WindowSet {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Window starts of one split: every contiguous valid run is windowed on
/// its own with stride 1.
pub fn window_starts(frame: &FeatureFrame, spec: WindowSpec, range: Range<usize>) -> Vec<usize> {
    frame
        .valid_runs(range)
        .into_iter()
        .flat_map(|run| {
            let n = window_count(run.len(), spec);
            (run.start..run.start + n).collect::<Vec<_>>()
        })
        .collect()
}

pub fn make_windows(frame: Arc<FeatureFrame>, spec: WindowSpec, ranges: &SplitRanges) -> WindowSets {
    make_windows_strided(frame, spec, ranges, 1)
}

/// Like [`make_windows`], but keeps only every `train_stride`-th training
/// window. Validation and test sets always use stride 1.
pub fn make_windows_strided(
    frame: Arc<FeatureFrame>,
    spec: WindowSpec,
    ranges: &SplitRanges,
    train_stride: usize,
) -> WindowSets {
    let stride = train_stride.max(1);
    let set = |split: Split| {
        let mut starts = window_starts(&frame, spec, ranges.get(split));
        if split == Split::Train && stride > 1 {
            starts = starts.into_iter().step_by(stride).collect();
        }
        WindowSet { frame: Arc::clone(&frame), spec, split, range: ranges.get(split), starts }
    };
    WindowSets { train: set(Split::Train), validation: set(Split::Validation), test: set(Split::Test) }
}

/// A cleaned series made model-ready: normalized with training-split
/// statistics and carrying calendar channels. Any feature combination and
/// window spec can be cut from it without re-fitting anything.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: UniformSeries,
    pub norm: NormStats,
    pub ranges: SplitRanges,
}

impl Prepared {
    /// Split on rows where every sensor channel is present, fit the
    /// normalization on the training range, normalize, and add calendar
    /// channels.
    pub fn new(cleaned: &UniformSeries, val_fraction: f64, test_fraction: f64) -> Result<Prepared> {
        Self::build(cleaned, val_fraction, test_fraction, None)
    }

    /// Like [`Prepared::new`] but with given normalization statistics, e.g.
    /// those stored in a model snapshot.
    pub fn with_norm(cleaned: &UniformSeries, val_fraction: f64, test_fraction: f64, norm: NormStats) -> Result<Prepared> {
        Self::build(cleaned, val_fraction, test_fraction, Some(norm))
    }

    fn build(cleaned: &UniformSeries, val_fraction: f64, test_fraction: f64, norm: Option<NormStats>) -> Result<Prepared> {
        let sensors: Vec<&[Option<f64>]> =
            cleaned.iter().filter(|(c, _)| !c.is_calendar()).map(|(_, v)| v).collect();
        if sensors.is_empty() {
            return Err(Error::param("series has no sensor channels"));
        }
        let valid: Vec<bool> = (0..cleaned.len()).map(|i| sensors.iter().all(|v| v[i].is_some())).collect();
        let ranges = split_by_valid_fraction(&valid, val_fraction, test_fraction)?;
        let mut sensor_only = UniformSeries::new(cleaned.origin(), cleaned.len());
        for (c, v) in cleaned.iter().filter(|(c, _)| !c.is_calendar()) {
            sensor_only.set_channel(c, v.to_vec())?;
        }
        let norm = match norm {
            Some(n) => n,
            None => NormStats::fit(&sensor_only, ranges.train.clone())?,
        };
        let series = add_time_features(&norm.normalize(&sensor_only)?)?;
        Ok(Prepared { series, norm, ranges })
    }

    pub fn frame(&self, combo: FeatureCombo) -> Result<Arc<FeatureFrame>> {
        Ok(Arc::new(FeatureFrame::build(&self.series, combo)?))
    }

    pub fn windows(&self, combo: FeatureCombo, spec: WindowSpec, train_stride: usize) -> Result<WindowSets> {
        Ok(make_windows_strided(self.frame(combo)?, spec, &self.ranges, train_stride))
    }
}

/// Index batches over a window set. Training windows are shuffled with
/// `shuffle_seed` when given; other splits keep chronological order. The
/// final partial batch is kept.
pub fn batches(windows: &WindowSet, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    if let (Split::Train, Some(seed)) = (windows.split, shuffle_seed) {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
