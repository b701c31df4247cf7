//! Synthetic bridge-monitoring series with known ground truth.
//!
//! Stage follows a seasonal cosine peaking in mid-July plus flood pulses.
//! While the flow depth over the base bed exceeds the seasonal maximum, the
//! bed relaxes quickly toward the scour predicted by the pier-scour fixed
//! point ([`crate::earlywarn::solve_scour`]); afterwards it fills back
//! slowly. [`corrupt`] then adds what field data suffers from: noise,
//! spikes, dropouts and the frozen-river winter gap.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::year_fraction;
use crate::earlywarn::solve_scour;
use crate::ingest::{Channel, RawReading, Sensor, UniformSeries};
use crate::{Error, Result};

/// Day of year (fractional, 0 = Jan 1) at which the seasonal stage peaks.
const SEASONAL_PEAK_DAY: f64 = 196.0;
const DAYS_PER_YEAR: f64 = 365.2425;

/// One recurring flood pulse per year.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodSpec {
    /// Nominal peak, in days since Jan 1.
    pub peak_day: f64,
    /// Peak shifted uniformly by up to ± this many days.
    pub jitter_days: f64,
    /// Stage rise at the peak (m).
    pub magnitude_m: f64,
    /// Magnitude scaled by a uniform factor in `1 ± magnitude_jitter`.
    pub magnitude_jitter: f64,
    /// Length of the raised-cosine hydrograph (days).
    pub duration_days: f64,
}

/// Month/day bounds of the frozen season, inclusive, wrapping over New Year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenWindow {
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl FrozenWindow {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        let md = (t.month(), t.day());
        if self.start <= self.end {
            md >= self.start && md <= self.end
        } else {
            md >= self.start || md <= self.end
        }
    }
}

impl Default for FrozenWindow {
    fn default() -> Self {
        FrozenWindow { start: (11, 1), end: (3, 31) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub years: u32,
    pub start_year: i32,
    pub base_bed_m: f64,
    pub base_stage_m: f64,
    pub seasonal_amplitude_m: f64,
    pub floods: Vec<FloodSpec>,
    /// Combined pier constant of the scour fixed point.
    pub eta: f64,
    /// Time constant of scour while the target exceeds current scour (h).
    pub scour_tau_hours: f64,
    /// Time constant of filling once the target recedes (days).
    pub fill_tau_days: f64,
    /// Rating curve `Q = coef · depth^exp` (m³/s, depth in m).
    pub rating_coef: f64,
    pub rating_exp: f64,
    /// Noise std of elevation readings (m). Discharge noise is this value
    /// times the rating-curve slope at the base depth.
    pub noise_std_m: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude_m: f64,
    /// Per-hour probability that a sensor starts a short dropout.
    pub gap_rate: f64,
    pub gap_max_hours: usize,
    pub frozen: Option<FrozenWindow>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            years: 2,
            start_year: 2015,
            base_bed_m: 30.0,
            base_stage_m: 33.0,
            seasonal_amplitude_m: 1.0,
            floods: vec![
                FloodSpec {
                    peak_day: 205.0,
                    jitter_days: 10.0,
                    magnitude_m: 2.5,
                    magnitude_jitter: 0.3,
                    duration_days: 10.0,
                },
                FloodSpec {
                    peak_day: 266.0,
                    jitter_days: 10.0,
                    magnitude_m: 2.5,
                    magnitude_jitter: 0.3,
                    duration_days: 10.0,
                },
            ],
            eta: 6.0,
            scour_tau_hours: 24.0,
            fill_tau_days: 10.0,
            rating_coef: 20.0,
            rating_exp: 1.6,
            noise_std_m: 0.05,
            outlier_rate: 0.002,
            outlier_magnitude_m: 2.0,
            gap_rate: 0.001,
            gap_max_hours: 12,
            frozen: Some(FrozenWindow::default()),
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("seasonal_amplitude_m", self.seasonal_amplitude_m),
            ("eta", self.eta),
            ("noise_std_m", self.noise_std_m),
            ("outlier_rate", self.outlier_rate),
            ("outlier_magnitude_m", self.outlier_magnitude_m),
            ("gap_rate", self.gap_rate),
        ];
        if self.years == 0 {
            return Err(Error::param("years must be >= 1"));
        }
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.outlier_rate > 1.0 || self.gap_rate > 1.0 {
            return Err(Error::param("rates must not exceed 1"));
        }
        if !(self.scour_tau_hours > 0.0 && self.fill_tau_days > 0.0) {
            return Err(Error::param("relaxation time constants must be positive"));
        }
        if !(self.rating_coef > 0.0 && self.rating_exp > 0.0) {
            return Err(Error::param("rating curve parameters must be positive"));
        }
        if self.base_stage_m - self.seasonal_amplitude_m <= self.base_bed_m {
            return Err(Error::param("seasonal low stage must stay above the base bed"));
        }
        for f in &self.floods {
            if f.magnitude_m < 0.0 || f.duration_days <= 0.0 || f.jitter_days < 0.0 || !(0.0..1.0).contains(&f.magnitude_jitter) {
                return Err(Error::param("flood magnitudes/jitters must be non-negative and durations positive"));
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(self.start_year, 1, 1, 0, 0, 0).unwrap()
    }

    pub fn n_steps(&self) -> usize {
        let end = Utc.with_ymd_and_hms(self.start_year + self.years as i32, 1, 1, 0, 0, 0).unwrap();
        (end - self.origin()).num_hours() as usize
    }

    /// Flow depth above the base bed beyond which the bed starts to scour.
    pub fn threshold_depth(&self) -> f64 {
        self.base_stage_m + self.seasonal_amplitude_m - self.base_bed_m
    }

    fn discharge_scale(&self) -> f64 {
        let d0 = self.base_stage_m - self.base_bed_m;
        self.rating_coef * self.rating_exp * d0.powf(self.rating_exp - 1.0)
    }

    /// Ordered `key = value` description, used for the spec echo.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("years".into(), self.years.to_string()),
            ("start_year".into(), self.start_year.to_string()),
            ("base_bed_m".into(), format!("{:?}", self.base_bed_m)),
            ("base_stage_m".into(), format!("{:?}", self.base_stage_m)),
            ("seasonal_amplitude_m".into(), format!("{:?}", self.seasonal_amplitude_m)),
            ("eta".into(), format!("{:?}", self.eta)),
            ("scour_tau_hours".into(), format!("{:?}", self.scour_tau_hours)),
            ("fill_tau_days".into(), format!("{:?}", self.fill_tau_days)),
            ("rating_coef".into(), format!("{:?}", self.rating_coef)),
            ("rating_exp".into(), format!("{:?}", self.rating_exp)),
            ("noise_std_m".into(), format!("{:?}", self.noise_std_m)),
            ("outlier_rate".into(), format!("{:?}", self.outlier_rate)),
            ("outlier_magnitude_m".into(), format!("{:?}", self.outlier_magnitude_m)),
            ("gap_rate".into(), format!("{:?}", self.gap_rate)),
            ("gap_max_hours".into(), self.gap_max_hours.to_string()),
            (
                "frozen".into(),
                self.frozen.map_or("none".into(), |f| {
                    format!("{:02}-{:02}..{:02}-{:02}", f.start.0, f.start.1, f.end.0, f.end.1)
                }),
            ),
            ("seed".into(), self.seed.to_string()),
        ];
        for (i, f) in self.floods.iter().enumerate() {
            kv.push((
                format!("flood{i}"),
                format!(
                    "peak_day={:?} jitter_days={:?} magnitude_m={:?} magnitude_jitter={:?} duration_days={:?}",
                    f.peak_day, f.jitter_days, f.magnitude_m, f.magnitude_jitter, f.duration_days
                ),
            ));
        }
        kv
    }
}

/// A realized flood pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodEvent {
    /// Hours since the series origin.
    pub peak_hour: f64,
    pub magnitude_m: f64,
    pub duration_hours: f64,
}

impl FloodEvent {
    fn rise(&self, hour: f64) -> f64 {
        let x = (hour - self.peak_hour) / self.duration_hours;
        if x.abs() >= 0.5 {
            0.0
        } else {
            self.magnitude_m * 0.5 * (1.0 + (2.0 * PI * x).cos())
        }
    }
}

/// Ground truth plus the corrupted readings derived from it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Clean, gap-free hourly stage, sonar and discharge.
    pub truth: UniformSeries,
    pub floods: Vec<FloodEvent>,
    pub raw: Vec<RawReading>,
    pub outliers: usize,
}

/// Draw the flood pulses of every year.
pub fn flood_events(spec: &SynthSpec) -> Vec<FloodEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let origin = spec.origin();
    let mut events = Vec::new();
    for y in 0..spec.years as i32 {
        let jan1 = Utc.with_ymd_and_hms(spec.start_year + y, 1, 1, 0, 0, 0).unwrap();
        let year_hour = (jan1 - origin).num_hours() as f64;
        for f in &spec.floods {
            let shift = if f.jitter_days > 0.0 { rng.random_range(-f.jitter_days..=f.jitter_days) } else { 0.0 };
            let scale = if f.magnitude_jitter > 0.0 {
                rng.random_range(1.0 - f.magnitude_jitter..=1.0 + f.magnitude_jitter)
            } else {
                1.0
            };
            events.push(FloodEvent {
                peak_hour: year_hour + (f.peak_day + shift) * 24.0,
                magnitude_m: f.magnitude_m * scale,
                duration_hours: f.duration_days * 24.0,
            });
        }
    }
    events
}

/// Clean ground truth: stage, sonar (bed elevation) and discharge.
pub fn ground_truth(spec: &SynthSpec) -> Result<(UniformSeries, Vec<FloodEvent>)> {
    spec.validate()?;
    let origin = spec.origin();
    let n = spec.n_steps();
    let floods = flood_events(spec);
    let d0 = spec.threshold_depth();
    let base_scour = solve_scour(spec.eta, d0)?;
    let k_scour = 1.0 - (-1.0 / spec.scour_tau_hours).exp();
    let k_fill = 1.0 - (-1.0 / (spec.fill_tau_days * 24.0)).exp();

    let mut stage = Vec::with_capacity(n);
    let mut sonar = Vec::with_capacity(n);
    let mut discharge = Vec::with_capacity(n);
    let mut scour = 0.0f64;
    for i in 0..n {
        let t = origin + Duration::hours(i as i64);
        let day = year_fraction(t) * DAYS_PER_YEAR;
        let seasonal = spec.seasonal_amplitude_m * (2.0 * PI * (day - SEASONAL_PEAK_DAY) / DAYS_PER_YEAR).cos();
        let hour = i as f64;
        let flood: f64 = floods.iter().map(|f| f.rise(hour)).sum();
        let s = spec.base_stage_m + seasonal + flood;
        let depth = s - spec.base_bed_m;
        let target = if depth > d0 { (solve_scour(spec.eta, depth)? - base_scour).max(0.0) } else { 0.0 };
        let k = if target > scour { k_scour } else { k_fill };
        scour += (target - scour) * k;
        let bed = spec.base_bed_m - scour;
        stage.push(Some(s));
        sonar.push(Some(bed));
        discharge.push(Some(spec.rating_coef * (s - bed).powf(spec.rating_exp)));
    }
    let mut truth = UniformSeries::new(origin, n);
    truth.set_channel(Channel::Stage, stage)?;
    truth.set_channel(Channel::Sonar, sonar)?;
    truth.set_channel(Channel::Discharge, discharge)?;
    Ok((truth, floods))
}

/// Corrupted readings of a clean, gap-free series: Gaussian noise, spikes,
/// short dropouts and the frozen season. Returns the readings (sorted by
/// sensor, then time) and the number of injected spikes.
pub fn corrupt(clean: &UniformSeries, spec: &SynthSpec) -> Result<(Vec<RawReading>, usize)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x636f_7272_7570_7421);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut readings = Vec::new();
    let mut outliers = 0;
    let channels: BTreeMap<Sensor, &[Option<f64>]> = Sensor::ALL
        .iter()
        .filter_map(|&s| clean.channel(s.into()).map(|v| (s, v)))
        .collect();
    for (&sensor, values) in &channels {
        let scale = if sensor == Sensor::Discharge { spec.discharge_scale() } else { 1.0 };
        let mut gap_left = 0usize;
        for (i, v) in values.iter().enumerate() {
            let v = v.ok_or(Error::GapInSegment { index: i })?;
            // draw every random number unconditionally so each stream stays
            // aligned regardless of which readings are dropped
            let z = noise.sample(&mut rng);
            let spike: f64 = rng.random();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let gap: f64 = rng.random();
            let gap_len = rng.random_range(1..=spec.gap_max_hours.max(1));
            if gap_left == 0 && gap < spec.gap_rate {
                gap_left = gap_len;
            }
            if gap_left > 0 {
                gap_left -= 1;
                continue;
            }
            let t = clean.timestamp(i);
            if spec.frozen.is_some_and(|f| f.contains(t)) {
                continue;
            }
            let mut value = v + spec.noise_std_m * scale * z;
            if spike < spec.outlier_rate {
                value += sign * spec.outlier_magnitude_m * scale;
                outliers += 1;
            }
            readings.push(RawReading { timestamp: t, sensor, value });
        }
    }
    Ok((readings, outliers))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    let (truth, floods) = ground_truth(spec)?;
    let (raw, outliers) = corrupt(&truth, spec)?;
    Ok(SynthOutput { truth, floods, raw, outliers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthSpec {
        SynthSpec {
            noise_std_m: 0.0,
            outlier_rate: 0.0,
            gap_rate: 0.0,
            frozen: None,
            ..Default::default()
        }
    }

    fn values(s: &UniformSeries, ch: Channel) -> Vec<f64> {
        s.channel(ch).unwrap().iter().map(|v| v.unwrap()).collect()
    }

    #[test]
    fn no_floods_means_constant_bed_and_sinusoidal_stage() {
        let spec = SynthSpec { floods: vec![], ..quiet() };
        let (truth, _) = ground_truth(&spec).unwrap();
        assert!(values(&truth, Channel::Sonar).iter().all(|&b| b == spec.base_bed_m));
        for (i, s) in values(&truth, Channel::Stage).iter().enumerate() {
            let day = year_fraction(truth.timestamp(i)) * DAYS_PER_YEAR;
            let expected = 33.0 + (2.0 * PI * (day - SEASONAL_PEAK_DAY) / DAYS_PER_YEAR).cos();
            assert!((s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_eta_never_scours() {
        let spec = SynthSpec { eta: 0.0, ..quiet() };
        let (truth, _) = ground_truth(&spec).unwrap();
        assert!(values(&truth, Channel::Sonar).iter().all(|&b| b == 30.0));
    }

    #[test]
    fn zero_corruption_reproduces_truth() {
        let spec = quiet();
        let out = generate(&spec).unwrap();
        assert_eq!(out.outliers, 0);
        assert_eq!(out.raw.len(), 3 * out.truth.len());
        for r in &out.raw {
            let i = (r.timestamp - out.truth.origin()).num_hours() as usize;
            assert_eq!(Some(r.value), out.truth.channel(r.sensor.into()).unwrap()[i]);
        }
    }

    #[test]
    fn frozen_window_has_no_readings() {
        let out = generate(&SynthSpec::default()).unwrap();
        let frozen = FrozenWindow::default();
        assert!(out.raw.iter().all(|r| !frozen.contains(r.timestamp)));
        assert!(out.raw.iter().any(|r| r.timestamp.month() == 4 && r.timestamp.day() == 1));
        assert!(!out.raw.iter().any(|r| r.timestamp.month() == 3 && r.timestamp.day() == 31));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SynthSpec::default()).unwrap();
        let b = generate(&SynthSpec::default()).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.raw, b.raw);
        let c = generate(&SynthSpec { seed: 43, ..Default::default() }).unwrap();
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn flow_depth_is_never_negative() {
        let (truth, _) = ground_truth(&SynthSpec { years: 3, ..Default::default() }).unwrap();
        let stage = values(&truth, Channel::Stage);
        let bed = values(&truth, Channel::Sonar);
        assert!(stage.iter().zip(&bed).all(|(s, b)| s >= b));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SynthSpec { years: 0, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { noise_std_m: -1.0, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { base_stage_m: 30.5, ..Default::default() }.validate().is_err());
    }
}
