//! Outlier removal and denoising filters over gap-annotated channels.

use crate::{Error, Result};

/// Sliding median over present samples. Windows are truncated at the series
/// edges and skip gaps; an even number of present samples takes the lower
/// median. Gap positions stay gaps.
pub fn median_filter(channel: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::param(format!("median window must be odd and >= 3, got {window}")));
    }
    let half = window / 2;
    let n = channel.len();
    let mut buf = Vec::with_capacity(window);
    Ok((0..n)
        .map(|i| {
            channel[i]?;
            buf.clear();
            buf.extend(channel[i.saturating_sub(half)..(i + half + 1).min(n)].iter().flatten());
            buf.sort_by(f64::total_cmp);
            Some(buf[(buf.len() - 1) / 2])
        })
        .collect())
}

/// Centered moving average over present samples. For even windows the extra
/// sample is taken from the future side. Gap positions stay gaps.
pub fn moving_average(channel: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window == 0 {
        return Err(Error::param("moving-average window must be >= 1"));
    }
    let back = (window - 1) / 2;
    let fwd = window / 2;
    let n = channel.len();
    Ok((0..n)
        .map(|i| {
            channel[i]?;
            let (sum, count) = channel[i.saturating_sub(back)..(i + fwd + 1).min(n)]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            Some(sum / count as f64)
        })
        .collect())
}

/// Second-order section in transposed direct form II, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// State that makes a constant input `x0` produce the output `x0`.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let s2 = (self.b[2] - self.a[1]) * x0;
        let s1 = (self.b[1] - self.a[0]) * x0 + s2;
        [s1, s2]
    }

    fn run(&self, x: &mut [f64], mut s: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s[0];
            s[0] = b1 * xin - a1 * y + s[1];
            s[1] = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth low-pass as a cascade of second-order sections, each
/// with unit DC gain. `cutoff` is in cycles per sample.
pub fn butterworth_lowpass(cutoff: f64, order: usize) -> Result<Vec<Biquad>> {
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::param(format!("low-pass cutoff must lie in (0, 0.5) cycles/sample, got {cutoff}")));
    }
    if order == 0 {
        return Err(Error::param("low-pass order must be >= 1"));
    }
    // bilinear transform with prewarping
    let k = (std::f64::consts::PI * cutoff).tan();
    let mut sections = Vec::new();
    let pairs = order / 2;
    for m in 0..pairs {
        // pole angle measured from the negative real axis
        let theta = if order % 2 == 0 {
            std::f64::consts::PI * (2 * m + 1) as f64 / (2 * order) as f64
        } else {
            std::f64::consts::PI * (m + 1) as f64 / order as f64
        };
        let q = 1.0 / (2.0 * theta.cos());
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Biquad { b: [b0, b0, 0.0], a: [(k - 1.0) / (k + 1.0), 0.0] });
    }
    Ok(sections)
}

fn cascade(sections: &[Biquad], x: &mut [f64]) {
    let x0 = x[0];
    for s in sections {
        s.run(x, s.steady_state(x0));
    }
}

/// Zero-phase filtering of a gap-free signal: odd-reflection padding, a
/// forward pass and a backward pass with steady-state initial conditions.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::GapInSegment { index: i });
    }
    let n = x.len();
    if n < 2 {
        return Ok(x.to_vec());
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    cascade(sections, &mut ext);
    ext.reverse();
    cascade(sections, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Maximal runs of present samples as `(start, end)` index pairs.
pub fn present_runs(channel: &[Option<f64>]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, v) in channel.iter().enumerate() {
        match (v.is_some(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, channel.len()));
    }
    runs
}

/// Zero-phase Butterworth low-pass applied to each maximal gap-free segment
/// independently.
pub fn lowpass_filter(channel: &[Option<f64>], cutoff: f64, order: usize) -> Result<Vec<Option<f64>>> {
    let sections = butterworth_lowpass(cutoff, order)?;
    let mut out = channel.to_vec();
    for (s, e) in present_runs(channel) {
        let seg: Vec<f64> = channel[s..e].iter().map(|v| v.unwrap()).collect();
        for (o, v) in out[s..e].iter_mut().zip(filtfilt(&sections, &seg)?) {
            *o = Some(v);
        }
    }
    Ok(out)
}
