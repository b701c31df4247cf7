//! Cleaning chain: outlier removal, gap imputation, denoising, normalization.
//!
//! [`clean`] applies, per channel, median filter → imputation → moving
//! average → zero-phase low-pass. Bias correction and regridding happen
//! earlier in [`crate::ingest`]; normalization is fitted later on the
//! training split (see [`NormStats`]).

mod filters;
mod impute;
mod normalize;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

pub use filters::{
    butterworth_lowpass, filtfilt, lowpass_filter, median_filter, moving_average, present_runs, Biquad,
};
pub use impute::{impute, ImputeSpec, Imputed, SeKernel};
pub use normalize::NormStats;

use crate::exec::Exec;
use crate::ingest::{Channel, UniformSeries};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub median_window: usize,
    pub ma_window: usize,
    /// Cycles per sample (per hour on the hourly grid).
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { median_window: 5, ma_window: 6, lowpass_cutoff: 1.0 / 24.0, lowpass_order: 2 }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.median_window < 3 || self.median_window % 2 == 0 {
            return Err(Error::param("median_window must be odd and >= 3"));
        }
        if self.ma_window < 1 {
            return Err(Error::param("ma_window must be >= 1"));
        }
        if !(self.lowpass_cutoff > 0.0 && self.lowpass_cutoff < 0.5) {
            return Err(Error::param("lowpass_cutoff must lie in (0, 0.5)"));
        }
        if self.lowpass_order < 1 {
            return Err(Error::param("lowpass_order must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PreprocessConfig {
    pub filter: FilterSpec,
    pub impute: ImputeSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub channel: Channel,
    /// Samples the median filter moved by more than three robust sigmas.
    pub outliers_replaced: usize,
    pub imputed: usize,
    /// Samples dropped as leading/trailing gaps of a segment.
    pub trimmed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub channels: Vec<ChannelReport>,
    /// Contiguous, gap-free index ranges of the cleaned series.
    pub segments: Vec<Range<usize>>,
}

impl PreprocessReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.channels {
            let _ = writeln!(
                s,
                "{}: outliers_replaced={} imputed={} trimmed={}",
                c.channel, c.outliers_replaced, c.imputed, c.trimmed
            );
        }
        for r in &self.segments {
            let _ = writeln!(s, "segment {}..{} ({} samples)", r.start, r.end, r.len());
        }
        s
    }
}

/// Output of [`clean`]: same length and channels as the input, gap-free
/// inside `report.segments` and empty outside them.
#[derive(Debug, Clone)]
pub struct Cleaned {
    pub series: UniformSeries,
    pub imputed: BTreeMap<Channel, Vec<bool>>,
    pub report: PreprocessReport,
}

/// Split the series into segments separated by stretches longer than
/// `max_gap` where every channel is missing, then shrink each segment until
/// every channel is present at both ends.
pub fn segments(series: &UniformSeries, max_gap: usize) -> Vec<Range<usize>> {
    let n = series.len();
    let chans: Vec<&[Option<f64>]> = series.iter().map(|(_, v)| v).collect();
    if chans.is_empty() {
        return Vec::new();
    }
    let dead: Vec<bool> = (0..n).map(|i| chans.iter().all(|c| c[i].is_none())).collect();
    let mut raw = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        if dead[i] {
            let run_start = i;
            while i < n && dead[i] {
                i += 1;
            }
            if i - run_start > max_gap || run_start == 0 || i == n {
                if run_start > start {
                    raw.push(start..run_start);
                }
                start = i;
            }
        } else {
            i += 1;
        }
    }
    if start < n {
        raw.push(start..n);
    }
    raw.into_iter()
        .filter_map(|r| {
            let lo = chans
                .iter()
                .map(|c| c[r.clone()].iter().position(Option::is_some).map(|p| r.start + p))
                .collect::<Option<Vec<_>>>()?
                .into_iter()
                .max()?;
            let hi = chans
                .iter()
                .map(|c| c[r.clone()].iter().rposition(Option::is_some).map(|p| r.start + p + 1))
                .collect::<Option<Vec<_>>>()?
                .into_iter()
                .min()?;
            (lo < hi).then_some(lo..hi)
        })
        .collect()
}

fn robust_outlier_count(raw: &[Option<f64>], filtered: &[Option<f64>]) -> usize {
    let resid: Vec<f64> = raw
        .iter()
        .zip(filtered)
        .filter_map(|(a, b)| Some(a.as_ref()? - b.as_ref()?))
        .collect();
    if resid.is_empty() {
        return 0;
    }
    let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
    let mad = crate::stats::quantile(&abs, 0.5);
    let limit = 3.0 * 1.4826 * mad;
    abs.iter().filter(|&&r| r > limit && r > 1e-12).count()
}

struct ChannelOutcome {
    values: Vec<Option<f64>>,
    imputed: Vec<bool>,
    report: ChannelReport,
}

fn clean_channel(
    channel: Channel,
    raw: &[Option<f64>],
    segs: &[Range<usize>],
    cfg: &PreprocessConfig,
) -> Result<ChannelOutcome> {
    let n = raw.len();
    let despiked = median_filter(raw, cfg.filter.median_window)?;
    let outliers_replaced = robust_outlier_count(raw, &despiked);

    let mut filled = vec![None; n];
    let mut imputed = vec![false; n];
    let mut kept = 0;
    for seg in segs {
        let out = impute(&despiked[seg.clone()], &cfg.impute)?;
        debug_assert_eq!(out.start, 0);
        debug_assert_eq!(out.values.len(), seg.len());
        for (k, (v, m)) in out.values.iter().zip(&out.imputed).enumerate() {
            filled[seg.start + k] = Some(*v);
            imputed[seg.start + k] = *m;
        }
        kept += seg.len();
    }
    let present = raw.iter().filter(|v| v.is_some()).count();
    let imputed_count = imputed.iter().filter(|&&m| m).count();

    let smoothed = moving_average(&filled, cfg.filter.ma_window)?;
    let values = lowpass_filter(&smoothed, cfg.filter.lowpass_cutoff, cfg.filter.lowpass_order)?;
    Ok(ChannelOutcome {
        values,
        imputed,
        report: ChannelReport {
            channel,
            outliers_replaced,
            imputed: imputed_count,
            trimmed: present + imputed_count - kept,
        },
    })
}

/// Run the cleaning chain on every channel. Channels are processed in
/// parallel when `exec` allows it.
pub fn clean(series: &UniformSeries, cfg: &PreprocessConfig, exec: Exec) -> Result<Cleaned> {
    cfg.filter.validate()?;
    cfg.impute.validate()?;
    let segs = segments(series, cfg.impute.max_gap);
    let inputs: Vec<(Channel, &[Option<f64>])> = series.iter().collect();
    let outcomes = exec.map(&inputs, |(ch, raw)| clean_channel(*ch, raw, &segs, cfg));

    let mut out = UniformSeries::new(series.origin(), series.len());
    let mut imputed = BTreeMap::new();
    let mut reports = Vec::new();
    for ((ch, _), outcome) in inputs.iter().zip(outcomes) {
        let o = outcome?;
        out.set_channel(*ch, o.values)?;
        imputed.insert(*ch, o.imputed);
        reports.push(o.report);
    }
    Ok(Cleaned {
        series: out,
        imputed,
        report: PreprocessReport { channels: reports, segments: segs },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn series(chans: &[(Channel, Vec<Option<f64>>)]) -> UniformSeries {
        let mut s = UniformSeries::new(Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(), chans[0].1.len());
        for (c, v) in chans {
            s.set_channel(*c, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn segments_split_on_long_dead_stretches() {
        let mut a: Vec<Option<f64>> = vec![Some(1.0); 40];
        let mut b = a.clone();
        for i in 10..25 {
            a[i] = None;
            b[i] = None;
        }
        a[0] = None;
        b[39] = None;
        b[30] = None;
        let s = series(&[(Channel::Stage, a), (Channel::Sonar, b)]);
        assert_eq!(segments(&s, 10), vec![1..10, 25..39]);
        assert_eq!(segments(&s, 20), vec![1..39]);
    }

    #[test]
    fn clean_preserves_length_and_fills_segments() {
        let n = 300;
        let mut a: Vec<Option<f64>> = (0..n).map(|i| Some((i as f64 / 30.0).sin())).collect();
        let mut b: Vec<Option<f64>> = (0..n).map(|i| Some(2.0 + (i as f64 / 50.0).cos())).collect();
        a[50] = Some(40.0);
        for i in 100..110 {
            a[i] = None;
        }
        for i in 150..200 {
            a[i] = None;
            b[i] = None;
        }
        let s = series(&[(Channel::Sonar, a), (Channel::Stage, b)]);
        let cfg = PreprocessConfig {
            impute: ImputeSpec { max_gap: 24, ..Default::default() },
            ..Default::default()
        };
        let out = clean(&s, &cfg, Exec::Sequential).unwrap();
        assert_eq!(out.report.segments, vec![0..150, 200..300]);
        let sonar = out.series.channel(Channel::Sonar).unwrap();
        assert_eq!(sonar.len(), n);
        assert!(sonar[..150].iter().all(Option::is_some));
        assert!(sonar[150..200].iter().all(Option::is_none));
        assert!(sonar[50].unwrap().abs() < 2.0);
        let rep = &out.report.channels[0];
        assert_eq!(rep.channel, Channel::Sonar);
        assert_eq!(rep.imputed, 10);
        assert!(rep.outliers_replaced >= 1);
        assert!(out.imputed[&Channel::Sonar][105]);
        let par = clean(&s, &cfg, Exec::Parallel).unwrap();
        assert_eq!(par.series, out.series);
    }
}
