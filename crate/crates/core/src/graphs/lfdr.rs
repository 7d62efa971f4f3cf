//! Two-component local false discovery rate fit for partial correlations.

use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

const KAPPA_MIN: f64 = 3.0;
const KAPPA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LfdrOptions {
    /// Fraction of the smallest `|r|` treated as null-dominated.
    pub central_fraction: f64,
    /// Use this null degrees-of-freedom parameter instead of estimating it.
    pub kappa: Option<f64>,
}

impl Default for LfdrOptions {
    fn default() -> Self {
        LfdrOptions { central_fraction: 0.5, kappa: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfdrFit {
    /// Null proportion.
    pub eta0: f64,
    /// Null parameter: `r² ~ Beta(1/2, (κ−1)/2)` under the null.
    pub kappa: f64,
    /// Local false discovery rate per input value.
    pub lfdr: Vec<f64>,
    /// Kernel bandwidth used for the marginal density.
    pub bandwidth: f64,
    /// Set when the fit found little signal to separate from the null.
    pub flat: bool,
}

/// Null density `(1−r²)^{(κ−3)/2} / B(1/2, (κ−1)/2)` on `[−1, 1]`.
pub fn null_density(r: f64, kappa: f64) -> f64 {
    ln_null_density(r, kappa).exp()
}

fn ln_null_density(r: f64, kappa: f64) -> f64 {
    if r.abs() >= 1.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (kappa - 3.0) * (1.0 - r * r).ln() - ln_beta(0.5, 0.5 * (kappa - 1.0))
}

/// `P(|R| ≤ c)` under the null.
fn null_central_mass(c: f64, kappa: f64) -> f64 {
    if c >= 1.0 {
        1.0
    } else {
        beta_reg(0.5, 0.5 * (kappa - 1.0), c * c)
    }
}

fn censored_loglik(central: &[f64], c: f64, kappa: f64) -> f64 {
    let sum: f64 = central.iter().map(|&r| ln_null_density(r, kappa)).sum();
    sum - central.len() as f64 * null_central_mass(c, kappa).ln()
}

/// Maximizes a unimodal function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-8 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaussian kernel density on `[−1, 1]` with reflection at both ends.
fn reflected_density(values: &[f64], sorted: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 8.0 * h;
    let kernel = |d: f64| (-0.5 * (d / h).powi(2)).exp();
    values
        .iter()
        .map(|&r| {
            let lo = sorted.partition_point(|&x| x < r - reach);
            let hi = sorted.partition_point(|&x| x <= r + reach);
            let direct: f64 = sorted[lo..hi].iter().map(|&x| kernel(r - x)).sum();
            // reflections of points near the edges
            let upper: f64 = sorted[sorted.partition_point(|&x| x < 2.0 - r - reach)..].iter().map(|&x| kernel(r - (2.0 - x))).sum();
            let lower: f64 =
                sorted[..sorted.partition_point(|&x| x <= -2.0 - r + reach)].iter().map(|&x| kernel(r - (-2.0 - x))).sum();
            norm * (direct + upper + lower)
        })
        .collect()
}

/// Fits the null/alternative mixture to values in `[−1, 1]`.
///
/// `κ` is estimated by maximum likelihood on the central `|r| ≤ c` values,
/// censored at `c`, the `central_fraction` quantile of `|r|`. The null
/// proportion is the observed central mass over its null expectation, and the
/// marginal density is a reflected Gaussian kernel estimate with Silverman's
/// bandwidth.
pub fn lfdr_fit(values: &[f64], options: &LfdrOptions) -> Result<LfdrFit> {
    if values.len() < 10 {
        return Err(Error::input(format!("lFDR fitting needs at least 10 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::input("values must be finite and lie in [-1, 1]"));
    }
    if !(options.central_fraction > 0.0 && options.central_fraction < 1.0) {
        return Err(Error::input("central fraction must lie in (0, 1)"));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Ok(LfdrFit { eta0: 1.0, kappa: KAPPA_MAX, lfdr: vec![1.0; values.len()], bandwidth: 0.0, flat: true });
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::Fit("all values are identical".into()));
    }

    let mut magnitudes: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(f64::total_cmp);
    let c = quantile(&magnitudes, options.central_fraction);
    if c <= 0.0 {
        return Err(Error::Fit("the central region is degenerate (too many zero values)".into()));
    }
    let central: Vec<f64> = values.iter().copied().filter(|r| r.abs() <= c).collect();
    let kappa = match options.kappa {
        Some(k) if k > KAPPA_MIN => k,
        Some(k) => return Err(Error::input(format!("kappa must exceed 3, got {k}"))),
        None => golden_max(|t| censored_loglik(&central, c, t.exp()), (KAPPA_MIN + 1e-6).ln(), KAPPA_MAX.ln()).exp(),
    };
    let n = values.len() as f64;
    let eta0 = ((central.len() as f64 / n) / null_central_mass(c, kappa)).clamp(0.0, 1.0);

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * n.powf(-0.2);
    let marginal = reflected_density(values, &sorted, bandwidth);
    let lfdr = values
        .iter()
        .zip(&marginal)
        .map(|(&r, &f)| if f > 0.0 { (eta0 * null_density(r, kappa) / f).clamp(0.0, 1.0) } else { 1.0 })
        .collect();
    Ok(LfdrFit { eta0, kappa, lfdr, bandwidth, flat: kappa < 10.0 || eta0 > 0.99 })
}
