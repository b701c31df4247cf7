//! From an ensemble of trained models to scour alerts.
//!
//! * [`rolling_forecast`]: every member predicts from every test origin.
//! * [`band`]: ensemble mean and empirical 95 % band per step.
//! * [`max_scour_distribution`] / [`exceedance`]: the predicted maximum
//!   scour depth per member and its exceedance probabilities.
//! * [`AlertReport`]: residual embedment and alert level for one window.
//! * [`summarize_errors`]: test-set error summary.
//! * [`solve_scour`] / [`hec18_surrogate`]: the reduced pier-scour relation
//!   `y_s = η (d − y_s)^p`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufReader, Read, Write};

use chrono::{DateTime, Duration, Utc};
use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};

use crate::dataset::{FeatureCombo, WindowSet};
use crate::exec::Exec;
use crate::ingest::{format_timestamp, parse_timestamp, Channel};
use crate::neural::Model;
use crate::preprocess::NormStats;
use crate::stats;
use crate::{Error, Result};

/// Exponent of the reduced scour relation: `0.13 + 0.43 · 0.67`, rounded.
pub const SCOUR_EXPONENT: f64 = 0.418;
/// Lower and upper band percentiles.
pub const BAND_LOWER: f64 = 0.025;
pub const BAND_UPPER: f64 = 0.975;

// ---------------------------------------------------------------------------
// Scour relation

/// Constants of the reduced pier-scour relation. `eta` combines the pier
/// constant `alpha`, the Manning factor `beta = sqrt(slope) / manning_n` and
/// the hydraulic-radius proportionality `mu`:
/// `eta = alpha · beta^0.43 · mu^0.2881`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConstants {
    pub alpha: Option<f64>,
    pub slope: Option<f64>,
    pub manning_n: Option<f64>,
    pub mu: Option<f64>,
    pub eta: f64,
    pub exponent: f64,
}

impl SurrogateConstants {
    /// Use a calibrated combined constant directly.
    pub fn with_eta(eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::param("eta must be finite and non-negative"));
        }
        Ok(SurrogateConstants { alpha: None, slope: None, manning_n: None, mu: None, eta, exponent: SCOUR_EXPONENT })
    }

    /// Derive `eta` from its physical components.
    pub fn from_components(alpha: f64, slope: f64, manning_n: f64, mu: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("slope", slope), ("manning_n", manning_n), ("mu", mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        let eta = alpha * Self::beta_of(slope, manning_n).powf(0.43) * mu.powf(0.43 * 0.67);
        Ok(SurrogateConstants {
            alpha: Some(alpha),
            slope: Some(slope),
            manning_n: Some(manning_n),
            mu: Some(mu),
            eta,
            exponent: SCOUR_EXPONENT,
        })
    }

    fn beta_of(slope: f64, manning_n: f64) -> f64 {
        slope.sqrt() / manning_n
    }

    pub fn beta(&self) -> Option<f64> {
        Some(Self::beta_of(self.slope?, self.manning_n?))
    }
}

/// Solve `y = eta · (d − y)^SCOUR_EXPONENT` on `[0, d]` by bisection.
///
/// The left side increases and the right side decreases in `y`, so the root
/// is unique. Iterates until the residual is below 1e-13 (relative to
/// `max(1, d)`) or the bracket can no longer shrink.
pub fn solve_scour(eta: f64, d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::param(format!("stage-to-bed spread must be positive, got {d}")));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::param("eta must be finite and non-negative"));
    }
    let f = |y: f64| y - eta * (d - y).powf(SCOUR_EXPONENT);
    let tol = 1e-13 * d.max(1.0);
    let (mut lo, mut hi) = (0.0f64, d);
    if f(lo) >= 0.0 {
        return Ok(0.0);
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = f(mid);
        if r == 0.0 || r.abs() < tol {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Scour depth from the peak stage and lowest bed reading of an event.
pub fn hec18_surrogate(c: &SurrogateConstants, y_st_max: f64, y_so_min: f64) -> Result<f64> {
    solve_scour(c.eta, y_st_max - y_so_min)
}

// ---------------------------------------------------------------------------
// Rolling forecasts and bands

/// Predictions of every member from every forecast origin, in physical
/// units.
#[derive(Debug, Clone)]
pub struct RollingForecast {
    pub combo: FeatureCombo,
    pub label_channels: Vec<Channel>,
    /// Index (into the frame) of the last input step of each origin.
    pub origins: Vec<usize>,
    pub series_origin: DateTime<Utc>,
    /// `[origin, member, step, feature]`
    pub predictions: Array4<f64>,
    /// `[origin, step, feature]`
    pub actual: Array3<f64>,
    /// Observed value at each origin, `[origin, feature]`.
    pub at_origin: Array2<f64>,
    /// Candidate origins dropped because their history or labels were
    /// incomplete.
    pub skipped: usize,
}

impl RollingForecast {
    pub fn horizon(&self) -> usize {
        self.actual.dim().1
    }

    pub fn members(&self) -> usize {
        self.predictions.dim().1
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.series_origin + Duration::hours(index as i64)
    }

    /// `[member, step, feature]` for origin `k`.
    pub fn at(&self, k: usize) -> ArrayView3<'_, f64> {
        self.predictions.index_axis(Axis(0), k)
    }

    /// Long-format CSV of every member prediction, preceded by one
    /// `# key=value` metadata line. Values are written exactly.
    pub fn write_members_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# combo={} series_origin={} skipped={}",
            self.combo,
            format_timestamp(self.series_origin),
            self.skipped
        )?;
        writeln!(w, "origin_index,origin,member,step,feature,predicted_m,actual_m,at_origin_m")?;
        let (n_origin, n_member, horizon, nf) = self.predictions.dim();
        for k in 0..n_origin {
            let ts = format_timestamp(self.timestamp(self.origins[k]));
            for m in 0..n_member {
                for t in 0..horizon {
                    for j in 0..nf {
                        writeln!(
                            w,
                            "{},{ts},{m},{},{},{:?},{:?},{:?}",
                            self.origins[k],
                            t + 1,
                            self.label_channels[j],
                            self.predictions[[k, m, t, j]],
                            self.actual[[k, t, j]],
                            self.at_origin[[k, j]]
                        )?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`RollingForecast::write_members_csv`].
    pub fn read_members_csv<R: Read>(r: R) -> Result<RollingForecast> {
        let mut text = String::new();
        BufReader::new(r).read_to_string(&mut text)?;
        let mut lines = text.lines();
        let meta_line = lines.next().unwrap_or("");
        let meta: BTreeMap<&str, &str> = meta_line
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse { line: 1, message: "missing forecast metadata line".into() })?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| Error::Parse { line: 1, message: format!("missing `{k}`") });
        let combo: FeatureCombo = get("combo")?.parse()?;
        let series_origin = parse_timestamp(get("series_origin")?)?;
        let skipped: usize = get("skipped")?.parse().map_err(|_| Error::Parse { line: 1, message: "bad skipped".into() })?;

        struct Row {
            origin: usize,
            member: usize,
            step: usize,
            feature: Channel,
            predicted: f64,
            actual: f64,
            at_origin: f64,
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().skip(1) {
            let lineno = i as u64 + 2;
            let bad = |what: &str| Error::Parse { line: lineno, message: format!("bad {what}") };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("field count"));
            }
            rows.push(Row {
                origin: f[0].parse().map_err(|_| bad("origin_index"))?,
                member: f[2].parse().map_err(|_| bad("member"))?,
                step: f[3].parse().map_err(|_| bad("step"))?,
                feature: f[4].parse().map_err(|_| bad("feature"))?,
                predicted: f[5].parse().map_err(|_| bad("predicted_m"))?,
                actual: f[6].parse().map_err(|_| bad("actual_m"))?,
                at_origin: f[7].parse().map_err(|_| bad("at_origin_m"))?,
            });
        }
        let mut origins: Vec<usize> = rows.iter().map(|r| r.origin).collect();
        origins.dedup();
        let mut labels: Vec<Channel> = Vec::new();
        for r in &rows {
            if !labels.contains(&r.feature) {
                labels.push(r.feature);
            }
        }
        let members = rows.iter().map(|r| r.member + 1).max().unwrap_or(0);
        let horizon = rows.iter().map(|r| r.step).max().unwrap_or(0);
        let (no, nf) = (origins.len(), labels.len());
        if rows.len() != no * members * horizon * nf {
            return Err(Error::ShapeMismatch {
                expected: format!("{no}×{members}×{horizon}×{nf} rows"),
                actual: rows.len().to_string(),
            });
        }
        let mut predictions = Array4::from_elem((no, members, horizon, nf), f64::NAN);
        let mut actual = Array3::from_elem((no, horizon, nf), f64::NAN);
        let mut at_origin = Array2::from_elem((no, nf), f64::NAN);
        for r in &rows {
            let k = origins.binary_search(&r.origin).map_err(|_| Error::param("forecast origins are not sorted"))?;
            let j = labels.iter().position(|c| *c == r.feature).expect("collected above");
            if r.step == 0 {
                return Err(Error::param("forecast steps are 1-based"));
            }
            predictions[[k, r.member, r.step - 1, j]] = r.predicted;
            actual[[k, r.step - 1, j]] = r.actual;
            at_origin[[k, j]] = r.at_origin;
        }
        if predictions.iter().any(|v| v.is_nan()) {
            return Err(Error::param("forecast file has missing entries"));
        }
        Ok(RollingForecast { combo, label_channels: labels, origins, series_origin, predictions, actual, at_origin, skipped })
    }

    /// Ensemble mean and band per origin, step and feature:
    /// `origin,step,feature,mean_m,lb_m,ub_m,actual_m`. A single-member
    /// ensemble has a zero-width band.
    pub fn write_band_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "origin,step,feature,mean_m,lb_m,ub_m,actual_m")?;
        for k in 0..self.origins.len() {
            let ts = format_timestamp(self.timestamp(self.origins[k]));
            let b = band(self.at(k))?;
            let lower = b.lower.as_ref().unwrap_or(&b.mean);
            let upper = b.upper.as_ref().unwrap_or(&b.mean);
            for t in 0..self.horizon() {
                for (j, ch) in self.label_channels.iter().enumerate() {
                    writeln!(
                        w,
                        "{ts},{},{ch},{:?},{:?},{:?},{:?}",
                        t + 1,
                        b.mean[[t, j]],
                        lower[[t, j]],
                        upper[[t, j]],
                        self.actual[[k, t, j]]
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Index of the origin whose ensemble-mean maximum scour (drop of the
    /// bed below its value at the origin) is largest.
    pub fn worst_origin(&self) -> Option<usize> {
        let sonar = self.label_channels.iter().position(|c| *c == Channel::Sonar)?;
        (0..self.origins.len())
            .map(|k| {
                let dist = max_scour_distribution(self.at(k), sonar, self.at_origin[[k, sonar]]);
                (k, dist.mean())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
    }
}

/// Let every member forecast from every window of `windows` (typically the
/// test split), keeping every `stride`-th origin. Predictions and actuals
/// are denormalized with `norm`. Origins are processed in parallel when
/// `exec` allows; results do not depend on it.
pub fn rolling_forecast(
    members: &[Model],
    norm: &NormStats,
    windows: &WindowSet,
    stride: usize,
    exec: Exec,
) -> Result<RollingForecast> {
    if members.is_empty() {
        return Err(Error::param("ensemble has no members"));
    }
    if stride == 0 {
        return Err(Error::param("origin stride must be >= 1"));
    }
    let frame = &windows.frame;
    let spec = windows.spec;
    let combo = frame.combo;
    let labels: Vec<Channel> = combo.label_channels().to_vec();
    let label_cols = combo.label_columns();
    let (mean, std): (Vec<f64>, Vec<f64>) =
        labels.iter().map(|c| norm.get(*c)).collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let candidates = crate::dataset::window_count(windows.range.len(), spec);
    let skipped = candidates.saturating_sub(windows.len());

    let picks: Vec<usize> = (0..windows.len()).step_by(stride).collect();
    let nl = labels.len();
    let lw = spec.label_width;
    let chunks: Vec<Vec<usize>> = picks.chunks(32).map(<[usize]>::to_vec).collect();
    let per_chunk = exec.map(&chunks, |idx| -> Result<Array4<f64>> {
        let batch = windows.batch(idx);
        let mut out = Array4::zeros((idx.len(), members.len(), lw, nl));
        for (m, model) in members.iter().enumerate() {
            let pred = model.predict(&batch)?;
            out.slice_mut(s![.., m, .., ..]).assign(&pred);
        }
        Ok(out)
    });
    let mut predictions = Array4::zeros((picks.len(), members.len(), lw, nl));
    let mut row = 0;
    for chunk in per_chunk {
        let chunk = chunk?;
        let n = chunk.dim().0;
        predictions.slice_mut(s![row..row + n, .., .., ..]).assign(&chunk);
        row += n;
    }
    for ((_, _, _, j), v) in predictions.indexed_iter_mut() {
        *v = *v * std[j] + mean[j];
    }
    let f = &frame.features;
    let iw = spec.input_width;
    let origins: Vec<usize> = picks.iter().map(|&k| windows.starts[k] + iw - 1).collect();
    let actual = Array3::from_shape_fn((picks.len(), lw, nl), |(k, t, j)| {
        f[[origins[k] + 1 + t, label_cols[j]]] * std[j] + mean[j]
    });
    let at_origin = Array2::from_shape_fn((picks.len(), nl), |(k, j)| f[[origins[k], label_cols[j]]] * std[j] + mean[j]);
    Ok(RollingForecast {
        combo,
        label_channels: labels,
        origins,
        series_origin: frame.origin,
        predictions,
        actual,
        at_origin,
        skipped,
    })
}

/// Ensemble mean and, with two or more members, the empirical 95 % band.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBand {
    /// `[step, feature]`
    pub mean: Array2<f64>,
    /// `None` when the ensemble has a single member.
    pub lower: Option<Array2<f64>>,
    pub upper: Option<Array2<f64>>,
}

/// Band of one origin from `[member, step, feature]` predictions. The
/// band is clamped to contain the mean.
pub fn band(predictions: ArrayView3<'_, f64>) -> Result<ForecastBand> {
    let (members, steps, nf) = predictions.dim();
    if members == 0 {
        return Err(Error::param("band needs at least one member"));
    }
    let mean = predictions.mean_axis(Axis(0)).expect("non-empty");
    if members < 2 {
        return Ok(ForecastBand { mean, lower: None, upper: None });
    }
    let mut lower = Array2::zeros((steps, nf));
    let mut upper = Array2::zeros((steps, nf));
    for t in 0..steps {
        for j in 0..nf {
            let samples = predictions.slice(s![.., t, j]).to_vec();
            lower[[t, j]] = stats::quantile(&samples, BAND_LOWER).min(mean[[t, j]]);
            upper[[t, j]] = stats::quantile(&samples, BAND_UPPER).max(mean[[t, j]]);
        }
    }
    Ok(ForecastBand { mean, lower: Some(lower), upper: Some(upper) })
}

/// Statistics of every prediction targeting the same time step, pooled
/// over members and overlapping origins ("shade" display).
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSeries {
    /// Frame index of each row.
    pub index: Vec<usize>,
    /// `[row, feature]`
    pub mean: Array2<f64>,
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
    pub actual: Array2<f64>,
}

pub fn pooled_by_time(fc: &RollingForecast) -> PooledSeries {
    let nf = fc.label_channels.len();
    let Some(&first) = fc.origins.first() else {
        let empty = Array2::zeros((0, nf));
        return PooledSeries { index: vec![], mean: empty.clone(), lower: empty.clone(), upper: empty.clone(), actual: empty };
    };
    let last = *fc.origins.last().unwrap() + fc.horizon();
    let span = last - first;
    let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); nf]; span];
    let mut actual = vec![vec![f64::NAN; nf]; span];
    for (k, &o) in fc.origins.iter().enumerate() {
        for t in 0..fc.horizon() {
            let row = o + 1 + t - first - 1;
            for j in 0..nf {
                for m in 0..fc.members() {
                    samples[row][j].push(fc.predictions[[k, m, t, j]]);
                }
                actual[row][j] = fc.actual[[k, t, j]];
            }
        }
    }
    let rows: Vec<usize> = (0..span).filter(|&r| !samples[r][0].is_empty()).collect();
    let n = rows.len();
    let mut out = PooledSeries {
        index: rows.iter().map(|r| first + 1 + r).collect(),
        mean: Array2::zeros((n, nf)),
        lower: Array2::zeros((n, nf)),
        upper: Array2::zeros((n, nf)),
        actual: Array2::zeros((n, nf)),
    };
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..nf {
            let xs = &samples[r][j];
            let m = stats::mean(xs);
            out.mean[[i, j]] = m;
            out.lower[[i, j]] = stats::quantile(xs, BAND_LOWER).min(m);
            out.upper[[i, j]] = stats::quantile(xs, BAND_UPPER).max(m);
            out.actual[[i, j]] = actual[r][j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scour distribution and alerts

/// Predicted maximum scour depth of each member over one forecast window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScourDistribution {
    pub datum: f64,
    pub samples: Vec<f64>,
}

impl ScourDistribution {
    pub fn mean(&self) -> f64 {
        stats::mean(&self.samples)
    }

    /// Depth exceeded with probability `p` (empirical upper quantile).
    pub fn depth_at_exceedance(&self, p: f64) -> f64 {
        stats::quantile(&self.samples, 1.0 - p)
    }
}

/// `datum − min_t sonar` per member. `predictions` is `[member, step,
/// feature]` with sonar in feature column `sonar_col`.
pub fn max_scour_distribution(predictions: ArrayView3<'_, f64>, sonar_col: usize, datum: f64) -> ScourDistribution {
    let samples = predictions
        .outer_iter()
        .map(|member| {
            let low = member.column(sonar_col).iter().copied().fold(f64::INFINITY, f64::min);
            datum - low
        })
        .collect();
    ScourDistribution { datum, samples }
}

/// Fraction of samples strictly greater than `threshold`.
pub fn exceedance(samples: &[f64], threshold: f64) -> f64 {
    assert!(!samples.is_empty(), "exceedance of an empty distribution");
    samples.iter().filter(|&&s| s > threshold).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AlertLevel {
    Normal,
    Watch,
    Critical,
}

impl AlertLevel {
    pub fn name(self) -> &'static str {
        match self {
            AlertLevel::Normal => "normal",
            AlertLevel::Watch => "watch",
            AlertLevel::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertConfig {
    /// As-built embedment of the foundation below the datum (m).
    pub embedment_m: f64,
    /// Residual embedment regarded as the minimum safe value (m); the alert
    /// threshold on scour depth is `embedment_m − min_residual_m`.
    pub min_residual_m: f64,
    /// Exceedance probability at which the design scour depth is read.
    pub target_exceedance: f64,
    pub critical_probability: f64,
    pub watch_probability: f64,
    /// Extra scour depths to report exceedance probabilities for.
    pub thresholds: Vec<f64>,
    /// Fixed survey datum; `None` uses the bed elevation at the origin.
    pub datum: Option<f64>,
}

impl Default for AlertConfig {
    fn default() -> Self {
        AlertConfig {
            embedment_m: 6.0,
            min_residual_m: 4.0,
            target_exceedance: 0.10,
            critical_probability: 0.10,
            watch_probability: 0.01,
            thresholds: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
            datum: None,
        }
    }
}

impl AlertConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.target_exceedance, self.critical_probability, self.watch_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("alert probabilities must lie in [0, 1]"));
        }
        if self.watch_probability > self.critical_probability {
            return Err(Error::param("watch probability must not exceed the critical probability"));
        }
        if !(self.embedment_m > 0.0) || self.min_residual_m < 0.0 || self.min_residual_m >= self.embedment_m {
            return Err(Error::param("need embedment_m > min_residual_m >= 0"));
        }
        Ok(())
    }

    pub fn alert_depth(&self) -> f64 {
        self.embedment_m - self.min_residual_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertReport {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub distribution: ScourDistribution,
    /// `(threshold, probability)`, thresholds ascending; includes the alert
    /// depth.
    pub exceedance: Vec<(f64, f64)>,
    pub alert_depth: f64,
    pub alert_probability: f64,
    /// Scour depth exceeded with the target probability.
    pub design_scour: f64,
    pub residual_embedment: f64,
    pub level: AlertLevel,
}

impl AlertReport {
    /// Assess origin `k` of a rolling forecast.
    pub fn assess(fc: &RollingForecast, k: usize, cfg: &AlertConfig) -> Result<AlertReport> {
        cfg.validate()?;
        if k >= fc.origins.len() {
            return Err(Error::param(format!("origin {k} out of range ({} origins)", fc.origins.len())));
        }
        let sonar_col = fc
            .label_channels
            .iter()
            .position(|c| *c == Channel::Sonar)
            .ok_or_else(|| Error::param("forecast has no sonar channel"))?;
        let datum = cfg.datum.unwrap_or(fc.at_origin[[k, sonar_col]]);
        let distribution = max_scour_distribution(fc.at(k), sonar_col, datum);
        let alert_depth = cfg.alert_depth();
        let mut thresholds = cfg.thresholds.clone();
        thresholds.push(alert_depth);
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let exceed: Vec<(f64, f64)> =
            thresholds.iter().map(|&t| (t, exceedance(&distribution.samples, t))).collect();
        let alert_probability = exceedance(&distribution.samples, alert_depth);
        let level = if alert_probability >= cfg.critical_probability {
            AlertLevel::Critical
        } else if alert_probability >= cfg.watch_probability {
            AlertLevel::Watch
        } else {
            AlertLevel::Normal
        };
        let design_scour = distribution.depth_at_exceedance(cfg.target_exceedance);
        let origin = fc.origins[k];
        Ok(AlertReport {
            window_start: fc.timestamp(origin),
            window_end: fc.timestamp(origin + fc.horizon()),
            distribution,
            exceedance: exceed,
            alert_depth,
            alert_probability,
            design_scour,
            residual_embedment: cfg.embedment_m - design_scour,
            level,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "forecast window: {} .. {}", format_timestamp(self.window_start), format_timestamp(self.window_end));
        let _ = writeln!(s, "datum: {:.3} m", self.distribution.datum);
        let _ = writeln!(
            s,
            "predicted max scour: mean {:.3} m over {} members",
            self.distribution.mean(),
            self.distribution.samples.len()
        );
        let _ = writeln!(s, "design scour at target exceedance: {:.3} m", self.design_scour);
        let _ = writeln!(s, "residual embedment: {:.3} m", self.residual_embedment);
        let _ = writeln!(s, "alert depth {:.3} m exceeded with probability {:.3}", self.alert_depth, self.alert_probability);
        let _ = writeln!(s, "alert level: {}", self.level.name());
        let _ = writeln!(s, "exceedance:");
        for (t, p) in &self.exceedance {
            let _ = writeln!(s, "  > {t:.3} m: {p:.3}");
        }
        s
    }

    /// Machine-readable rows: `key,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let _ = writeln!(s, "window_start,{}", format_timestamp(self.window_start));
        let _ = writeln!(s, "window_end,{}", format_timestamp(self.window_end));
        let _ = writeln!(s, "datum_m,{}", self.distribution.datum);
        let _ = writeln!(s, "mean_scour_m,{}", self.distribution.mean());
        let _ = writeln!(s, "design_scour_m,{}", self.design_scour);
        let _ = writeln!(s, "residual_embedment_m,{}", self.residual_embedment);
        let _ = writeln!(s, "alert_depth_m,{}", self.alert_depth);
        let _ = writeln!(s, "alert_probability,{}", self.alert_probability);
        let _ = writeln!(s, "level,{}", self.level.name());
        for (t, p) in &self.exceedance {
            let _ = writeln!(s, "exceedance_gt_{t},{p}");
        }
        for (m, y) in self.distribution.samples.iter().enumerate() {
            let _ = writeln!(s, "member_{m:02}_scour_m,{y}");
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Error summary

/// Sonar MAE as a percentage of the maximum scour depth.
pub fn scour_error_percent(sonar_mae: f64, max_scour_depth: f64) -> Result<f64> {
    if !(max_scour_depth > 0.0) {
        return Err(Error::param("max scour depth must be positive"));
    }
    Ok(sonar_mae / max_scour_depth * 100.0)
}

/// Time-aligned forecast statistics and observations of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub actual: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Aligned {
    pub fn from_pooled(p: &PooledSeries, feature: usize) -> Aligned {
        Aligned {
            actual: p.actual.column(feature).to_vec(),
            mean: p.mean.column(feature).to_vec(),
            lower: p.lower.column(feature).to_vec(),
            upper: p.upper.column(feature).to_vec(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.actual.len();
        if self.mean.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} aligned values"),
                actual: format!("{}/{}/{}", self.mean.len(), self.lower.len(), self.upper.len()),
            });
        }
        Ok(())
    }
}

/// Forecast error at one extremum of the observed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremumError {
    pub index: usize,
    pub actual: f64,
    /// `|mean − actual|`
    pub mean_error: f64,
    /// `|lower − actual|` at troughs, `|upper − actual|` at peaks.
    pub bound_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub sonar_mae: f64,
    /// MAE of the second label feature (stage, or discharge for `sd`).
    pub second_mae: f64,
    pub max_scour_depth: f64,
    pub scour_error_percent: f64,
    pub troughs: Vec<ExtremumError>,
    pub peaks: Vec<ExtremumError>,
}

/// Indices of local extrema: `i` is kept when it is the extreme value of
/// `[i − separation, i + separation]`, the earliest one on plateaus.
pub fn local_extrema(xs: &[f64], separation: usize, minima: bool) -> Vec<usize> {
    let better = |a: f64, b: f64| if minima { a < b } else { a > b };
    (0..xs.len())
        .filter(|&i| {
            let lo = i.saturating_sub(separation);
            let hi = (i + separation + 1).min(xs.len());
            (lo..i).all(|k| better(xs[i], xs[k])) && (i + 1..hi).all(|k| !better(xs[k], xs[i]))
        })
        .filter(|&i| i > 0 && i + 1 < xs.len())
        .collect()
}

/// Default separation between troughs/peaks: seven days of hourly data.
pub const EXTREMUM_SEPARATION: usize = 168;

pub fn summarize_errors(sonar: &Aligned, second: &Aligned, max_scour_depth: f64) -> Result<ErrorSummary> {
    sonar.check()?;
    second.check()?;
    let sonar_mae = stats::mae(&sonar.mean, &sonar.actual);
    let second_mae = stats::mae(&second.mean, &second.actual);
    let pct = scour_error_percent(sonar_mae, max_scour_depth)?;
    let at = |i: usize, bound: &[f64]| ExtremumError {
        index: i,
        actual: sonar.actual[i],
        mean_error: (sonar.mean[i] - sonar.actual[i]).abs(),
        bound_error: (bound[i] - sonar.actual[i]).abs(),
    };
    let troughs = local_extrema(&sonar.actual, EXTREMUM_SEPARATION, true)
        .into_iter()
        .map(|i| at(i, &sonar.lower))
        .collect();
    let peaks = local_extrema(&sonar.actual, EXTREMUM_SEPARATION, false)
        .into_iter()
        .map(|i| at(i, &sonar.upper))
        .collect();
    Ok(ErrorSummary {
        sonar_mae: if sonar.actual.is_empty() { 0.0 } else { sonar_mae },
        second_mae: if second.actual.is_empty() { 0.0 } else { second_mae },
        max_scour_depth,
        scour_error_percent: if sonar.actual.is_empty() { 0.0 } else { pct },
        troughs,
        peaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};
    use proptest::prelude::*;

    fn toy_forecast() -> RollingForecast {
        let (no, nm, h) = (3, 4, 5);
        let predictions = Array4::from_shape_fn((no, nm, h, 2), |(k, m, t, j)| {
            if j == 0 {
                30.0 - 0.1 * (k * t) as f64 - 0.01 * m as f64
            } else {
                33.0 + 0.1 * t as f64
            }
        });
        RollingForecast {
            combo: FeatureCombo::Ss,
            label_channels: vec![Channel::Sonar, Channel::Stage],
            origins: vec![10, 34, 58],
            series_origin: parse_timestamp("2016-04-01T00:00:00Z").unwrap(),
            predictions,
            actual: Array3::from_shape_fn((no, h, 2), |(k, t, j)| 30.0 + j as f64 * 3.0 - 0.01 * (k + t) as f64),
            at_origin: Array2::from_shape_fn((no, 2), |(_, j)| 30.0 + 3.0 * j as f64),
            skipped: 2,
        }
    }

    #[test]
    fn members_csv_round_trips_exactly() {
        let fc = toy_forecast();
        let mut buf = Vec::new();
        fc.write_members_csv(&mut buf).unwrap();
        let back = RollingForecast::read_members_csv(buf.as_slice()).unwrap();
        assert_eq!(back.predictions, fc.predictions);
        assert_eq!(back.actual, fc.actual);
        assert_eq!(back.at_origin, fc.at_origin);
        assert_eq!(back.origins, fc.origins);
        assert_eq!(back.label_channels, fc.label_channels);
        assert_eq!((back.combo, back.series_origin, back.skipped), (fc.combo, fc.series_origin, fc.skipped));
        assert!(RollingForecast::read_members_csv(&buf[..buf.len() / 2]).is_err());
    }

    #[test]
    fn worst_origin_has_deepest_mean_scour() {
        assert_eq!(toy_forecast().worst_origin(), Some(2));
    }

    #[test]
    fn band_csv_rows_are_ordered() {
        let fc = toy_forecast();
        let mut buf = Vec::new();
        fc.write_band_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 5 * 2);
        for line in text.lines().skip(1) {
            let f: Vec<f64> = line.split(',').skip(3).map(|x| x.parse().unwrap()).collect();
            assert!(f[1] <= f[0] && f[0] <= f[2], "{line}");
        }
    }

    /// Regula falsi on the same bracket, an independent route to the root.
    fn regula_falsi(eta: f64, d: f64) -> f64 {
        let f = |y: f64| y - eta * (d - y).powf(SCOUR_EXPONENT);
        let (mut a, mut b) = (0.0f64, d);
        let (mut fa, mut fb) = (f(a), f(b));
        let mut side = 0;
        for _ in 0..10_000 {
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = f(c);
            if fc.abs() < 1e-14 {
                return c;
            }
            if fc * fb > 0.0 {
                b = c;
                fb = fc;
                if side == -1 {
                    fa /= 2.0;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb /= 2.0;
                }
                side = 1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn unit_fixed_point_is_exact() {
        assert_eq!(solve_scour(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(solve_scour(0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn d_three_matches_regula_falsi() {
        let y = solve_scour(1.0, 3.0).unwrap();
        assert!((y - (3.0 - y).powf(0.418)).abs() < 1e-10);
        assert!((y - regula_falsi(1.0, 3.0)).abs() < 1e-10);
    }

    #[test]
    fn non_positive_spread_is_an_error() {
        assert!(solve_scour(1.0, 0.0).is_err());
        assert!(solve_scour(1.0, -1.0).is_err());
        let c = SurrogateConstants::with_eta(1.0).unwrap();
        assert!(hec18_surrogate(&c, 30.0, 31.0).is_err());
        assert_eq!(hec18_surrogate(&c, 34.0, 32.0).unwrap(), 1.0);
    }

    #[test]
    fn eta_from_components() {
        let c = SurrogateConstants::from_components(2.0, 0.0004, 0.04, 1.5).unwrap();
        let beta: f64 = 0.02 / 0.04;
        assert!((c.beta().unwrap() - beta).abs() < 1e-15);
        let eta = 2.0 * beta.powf(0.43) * 1.5f64.powf(0.2881);
        assert!((c.eta - eta).abs() < 1e-12);
        assert!(SurrogateConstants::from_components(0.0, 1.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bisection_residual_and_oracle(eta in 0.0f64..10.0, d in 0.01f64..20.0) {
            let y = solve_scour(eta, d).unwrap();
            prop_assert!((0.0..=d).contains(&y));
            prop_assert!((y - eta * (d - y).powf(SCOUR_EXPONENT)).abs() < 1e-10);
            prop_assert!((y - regula_falsi(eta, d)).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_eta_and_d(eta in 0.0f64..10.0, d in 0.01f64..20.0, de in 0.0f64..2.0, dd in 0.0f64..2.0) {
            let y = solve_scour(eta, d).unwrap();
            prop_assert!(solve_scour(eta + de, d).unwrap() >= y);
            prop_assert!(solve_scour(eta, d + dd).unwrap() >= y);
        }

        #[test]
        fn exceedance_is_monotone(xs in prop::collection::vec(-5.0f64..5.0, 1..40), a in -6.0f64..6.0, b in -6.0f64..6.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pa = exceedance(&xs, lo);
            prop_assert!((0.0..=1.0).contains(&pa));
            prop_assert!(pa >= exceedance(&xs, hi));
        }

        #[test]
        fn band_is_ordered_and_matches_sort_oracle(vals in prop::collection::vec(-3.0f64..3.0, 6..60)) {
            let members = 2 + vals.len() % 5;
            let steps = vals.len() / members;
            prop_assume!(steps >= 1);
            let p = Array3::from_shape_vec((members, steps, 1), vals[..members * steps].to_vec()).unwrap();
            let b = band(p.view()).unwrap();
            let (lo, hi) = (b.lower.unwrap(), b.upper.unwrap());
            for t in 0..steps {
                let mut col: Vec<f64> = p.slice(s![.., t, 0]).to_vec();
                col.sort_by(f64::total_cmp);
                let m = b.mean[[t, 0]];
                prop_assert!(lo[[t, 0]] <= m && m <= hi[[t, 0]]);
                prop_assert!((lo[[t, 0]] - stats::quantile_sorted(&col, BAND_LOWER).min(m)).abs() < 1e-12);
                prop_assert!((hi[[t, 0]] - stats::quantile_sorted(&col, BAND_UPPER).max(m)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn band_examples() {
        let p = Array3::from_shape_vec((5, 1, 1), vec![1.0, 1.2, 1.4, 1.6, 1.8]).unwrap();
        let b = band(p.view()).unwrap();
        assert!((b.mean[[0, 0]] - 1.4).abs() < 1e-12);
        let same = Array3::from_elem((4, 3, 2), 2.5);
        let b = band(same.view()).unwrap();
        assert_eq!(b.lower.as_ref().unwrap(), &b.upper.clone().unwrap());
        let single = Array3::from_elem((1, 3, 2), 2.5);
        let b = band(single.view()).unwrap();
        assert!(b.lower.is_none() && b.upper.is_none());
    }

    #[test]
    fn scour_distribution_examples() {
        let flat = Array3::from_elem((3, 4, 2), 34.0);
        let d = max_scour_distribution(flat.view(), 0, 34.0);
        assert_eq!(d.samples, vec![0.0; 3]);

        let mut p = Array3::from_elem((2, 3, 2), 34.0);
        p[[0, 1, 0]] = 33.0;
        p[[1, 2, 0]] = 33.5;
        let d = max_scour_distribution(p.view(), 0, 34.0);
        assert_eq!(d.samples, vec![1.0, 0.5]);
        assert_eq!(d.mean(), 0.75);
    }

    #[test]
    fn exceedance_examples() {
        let xs = [1.0, 1.2, 1.4, 1.6, 1.8];
        assert!((exceedance(&xs, 1.5) - 0.4).abs() < 1e-15);
        assert_eq!(exceedance(&xs, 0.0), 1.0);
        assert_eq!(exceedance(&xs, 2.0), 0.0);
        assert_eq!(exceedance(&xs, 1.8), 0.0);
    }

    #[test]
    fn reference_scour_error_rows() {
        for (mae, depth, pct) in [(0.19, 2.1, 9.0), (0.25, 3.3, 7.6), (0.37, 1.5, 24.7)] {
            let got = scour_error_percent(mae, depth).unwrap();
            assert!((got - pct).abs() < 0.5, "{got}");
        }
        assert!(scour_error_percent(0.1, 0.0).is_err());
    }

    #[test]
    fn perfect_forecast_has_zero_errors() {
        let actual: Vec<f64> = (0..800).map(|i| 30.0 + (i as f64 / 90.0).sin()).collect();
        let a = Aligned { actual: actual.clone(), mean: actual.clone(), lower: actual.clone(), upper: actual.clone() };
        let s = summarize_errors(&a, &a, 2.0).unwrap();
        assert_eq!((s.sonar_mae, s.second_mae, s.scour_error_percent), (0.0, 0.0, 0.0));
        assert!(!s.troughs.is_empty() && !s.peaks.is_empty());
        assert!(s.troughs.iter().chain(&s.peaks).all(|e| e.mean_error == 0.0 && e.bound_error == 0.0));
    }

    #[test]
    fn extrema_respect_separation() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 2.0 * std::f64::consts::PI / 400.0).sin()).collect();
        let mins = local_extrema(&xs, 168, true);
        let maxs = local_extrema(&xs, 168, false);
        assert_eq!(mins, vec![300, 700]);
        assert_eq!(maxs, vec![100, 500, 900]);
    }
}
