use std::collections::BTreeMap;
use std::ops::Range;

use crate::ingest::{Channel, UniformSeries};
use crate::{Error, Result};

/// Per-channel mean and standard deviation, fitted on the training split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormStats {
    stats: BTreeMap<Channel, (f64, f64)>,
}

impl NormStats {
    /// Fit on the present samples of `range` only, so later splits never
    /// leak into the statistics.
    pub fn fit(series: &UniformSeries, range: Range<usize>) -> Result<NormStats> {
        let mut stats = BTreeMap::new();
        for (ch, values) in series.iter() {
            let xs: Vec<f64> = values[range.clone()].iter().flatten().copied().collect();
            if xs.len() < 2 {
                return Err(Error::InsufficientLength { required: 2, actual: xs.len() });
            }
            let mean = crate::stats::mean(&xs);
            let std = crate::stats::std_dev(&xs);
            if std <= 0.0 {
                return Err(Error::ZeroStd { channel: ch.to_string() });
            }
            stats.insert(ch, (mean, std));
        }
        Ok(NormStats { stats })
    }

    pub fn from_values(values: impl IntoIterator<Item = (Channel, f64, f64)>) -> Result<NormStats> {
        let mut stats = BTreeMap::new();
        for (ch, mean, std) in values {
            if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
                return Err(Error::ZeroStd { channel: ch.to_string() });
            }
            stats.insert(ch, (mean, std));
        }
        Ok(NormStats { stats })
    }

    pub fn get(&self, ch: Channel) -> Result<(f64, f64)> {
        self.stats
            .get(&ch)
            .copied()
            .ok_or_else(|| Error::param(format!("no normalization statistics for {ch}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, f64, f64)> + '_ {
        self.stats.iter().map(|(c, (m, s))| (*c, *m, *s))
    }

    pub fn normalize_value(&self, ch: Channel, x: f64) -> Result<f64> {
        let (m, s) = self.get(ch)?;
        Ok((x - m) / s)
    }

    pub fn denormalize_value(&self, ch: Channel, z: f64) -> Result<f64> {
        let (m, s) = self.get(ch)?;
        Ok(z * s + m)
    }

    pub fn normalize(&self, series: &UniformSeries) -> Result<UniformSeries> {
        self.map(series, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, series: &UniformSeries) -> Result<UniformSeries> {
        self.map(series, |z, m, s| z * s + m)
    }

    fn map(&self, series: &UniformSeries, f: impl Fn(f64, f64, f64) -> f64) -> Result<UniformSeries> {
        let mut out = UniformSeries::new(series.origin(), series.len());
        for (ch, values) in series.iter() {
            let (m, s) = self.get(ch)?;
            out.set_channel(ch, values.iter().map(|v| v.map(|x| f(x, m, s))).collect())?;
        }
        Ok(out)
    }
}
