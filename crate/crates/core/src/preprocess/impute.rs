//! Gap imputation: least-squares polynomials for short gaps, a windowed
//! Gaussian-process posterior mean for long ones.

use crate::linalg::Cholesky;
use crate::{Error, Result};

const GP_JITTER: f64 = 1e-8;

/// Squared-exponential covariance parameters (length scale in samples).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeKernel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl SeKernel {
    pub fn cov(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.length_scale;
        self.signal_variance * (-0.5 * d * d).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeSpec {
    /// Gaps up to this many samples use the polynomial fit.
    pub short_gap_max: usize,
    pub poly_degree: usize,
    pub kernel: SeKernel,
    /// Present samples taken on each side of a gap for the GP.
    pub gp_context: usize,
    /// Longer gaps are an error.
    pub max_gap: usize,
}

impl Default for ImputeSpec {
    fn default() -> Self {
        ImputeSpec {
            short_gap_max: 6,
            poly_degree: 3,
            kernel: SeKernel { length_scale: 48.0, signal_variance: 1.0, noise_variance: 1e-4 },
            gp_context: 72,
            max_gap: 60 * 24,
        }
    }
}

impl ImputeSpec {
    pub fn validate(&self) -> Result<()> {
        let k = &self.kernel;
        if self.short_gap_max < 1 {
            return Err(Error::param("short_gap_max must be >= 1"));
        }
        if self.poly_degree < 1 {
            return Err(Error::param("poly_degree must be >= 1"));
        }
        if !(k.length_scale > 0.0 && k.signal_variance > 0.0 && k.noise_variance > 0.0) {
            return Err(Error::param("GP length scale and variances must be positive"));
        }
        if self.gp_context < 1 {
            return Err(Error::param("gp_context must be >= 1"));
        }
        if self.max_gap < self.short_gap_max {
            return Err(Error::param("max_gap must be >= short_gap_max"));
        }
        Ok(())
    }
}

/// Gap-free channel covering `[start, start + values.len())` of the input;
/// leading and trailing gaps are trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub start: usize,
    pub values: Vec<f64>,
    /// `true` where the value was filled in.
    pub imputed: Vec<bool>,
}

impl Imputed {
    pub fn trimmed(&self, input_len: usize) -> usize {
        input_len - self.values.len()
    }

    pub fn imputed_count(&self) -> usize {
        self.imputed.iter().filter(|&&m| m).count()
    }
}

/// Fill every interior gap of `channel`.
pub fn impute(channel: &[Option<f64>], spec: &ImputeSpec) -> Result<Imputed> {
    spec.validate()?;
    let Some(first) = channel.iter().position(Option::is_some) else {
        return Ok(Imputed { start: channel.len(), values: Vec::new(), imputed: Vec::new() });
    };
    let last = channel.iter().rposition(Option::is_some).unwrap();
    let body = &channel[first..=last];
    let mut values: Vec<f64> = body.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let imputed: Vec<bool> = body.iter().map(Option::is_none).collect();

    let mut i = 0;
    while i < body.len() {
        if body[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while body[i].is_none() {
            i += 1;
        }
        let len = i - gap_start;
        if len > spec.max_gap {
            return Err(Error::GapTooLong { start: first + gap_start, len, cap: spec.max_gap });
        }
        let fill = if len <= spec.short_gap_max {
            let ctx = context(body, gap_start, i, spec.poly_degree + 1);
            poly_fill(&ctx, gap_start, i, spec.poly_degree)
        } else {
            let ctx = context(body, gap_start, i, spec.gp_context);
            gp_fill(&ctx, gap_start, i, &spec.kernel)?
        };
        values[gap_start..i].copy_from_slice(&fill);
    }
    Ok(Imputed { start: first, values, imputed })
}

/// Up to `per_side` nearest present samples on each side of `[lo, hi)`, as
/// `(index, value)` pairs.
fn context(body: &[Option<f64>], lo: usize, hi: usize, per_side: usize) -> Vec<(f64, f64)> {
    let left = body[..lo]
        .iter()
        .enumerate()
        .rev()
        .filter_map(|(j, v)| v.map(|x| (j as f64, x)))
        .take(per_side);
    let right = body[hi..]
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|x| ((hi + j) as f64, x)))
        .take(per_side);
    left.chain(right).collect()
}

/// Least-squares polynomial through the context, evaluated on `[lo, hi)`.
/// The degree drops when there are too few context points.
fn poly_fill(ctx: &[(f64, f64)], lo: usize, hi: usize, degree: usize) -> Vec<f64> {
    let degree = degree.min(ctx.len() - 1);
    let center = 0.5 * (lo + hi - 1) as f64;
    let scale = ctx
        .iter()
        .map(|(t, _)| (t - center).abs())
        .fold(1.0f64, f64::max);
    let m = degree + 1;
    let mut ata = vec![0.0; m * m];
    let mut aty = vec![0.0; m];
    for &(t, y) in ctx {
        let u = (t - center) / scale;
        let powers: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for r in 0..m {
            aty[r] += powers[r] * y;
            for c in 0..m {
                ata[r * m + c] += powers[r] * powers[c];
            }
        }
    }
    let coef = match Cholesky::factor(&ata, m) {
        Ok(ch) => ch.solve(&aty),
        // degenerate design: fall back to the mean of the context
        Err(_) => {
            let mean = ctx.iter().map(|(_, y)| y).sum::<f64>() / ctx.len() as f64;
            let mut c = vec![0.0; m];
            c[0] = mean;
            c
        }
    };
    (lo..hi)
        .map(|t| {
            let u = (t as f64 - center) / scale;
            coef.iter().rev().fold(0.0, |acc, c| acc * u + c)
        })
        .collect()
}

/// Posterior mean of a constant-mean GP conditioned on the context.
fn gp_fill(ctx: &[(f64, f64)], lo: usize, hi: usize, kernel: &SeKernel) -> Result<Vec<f64>> {
    let n = ctx.len();
    let mean = ctx.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = kernel.cov(ctx[i].0, ctx[j].0);
        }
        k[i * n + i] += kernel.noise_variance + GP_JITTER;
    }
    let resid: Vec<f64> = ctx.iter().map(|(_, y)| y - mean).collect();
    let alpha = Cholesky::factor(&k, n)?.solve(&resid);
    Ok((lo..hi)
        .map(|t| {
            mean + ctx
                .iter()
                .zip(&alpha)
                .map(|((ti, _), a)| kernel.cov(t as f64, *ti) * a)
                .sum::<f64>()
        })
        .collect())
}
