//! Goodness-of-fit tests for validating simulator output.

use crate::error::{Error, Result};

/// One-sample Kolmogorov–Smirnov statistic against a CDF given as a closure.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Precondition("KS test needs at least one sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

/// Asymptotic p-value of the KS statistic `d` for `n` samples.
///
/// Kolmogorov series with the Stephens small-sample correction; accurate
/// enough for the n >= 50 pooled samples used here.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 1e-9 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// KS test of `samples` against the Exponential(rate) law.
pub fn ks_test_exponential(samples: &[f64], rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Precondition("exponential rate must be positive".into()));
    }
    let d = ks_statistic(samples, |x| {
        if x <= 0.0 {
            0.0
        } else {
            1.0 - (-rate * x).exp()
        }
    })?;
    Ok(ks_pvalue(d, samples.len()))
}

/// Chi-square goodness-of-fit of `samples` against Exponential(rate), using
/// `n_bins` equiprobable quantile bins.
pub fn chi_square_exponential(samples: &[f64], rate: f64, n_bins: usize) -> Result<f64> {
    if samples.len() < 5 * n_bins {
        return Err(Error::Precondition(format!(
            "chi-square with {n_bins} bins needs at least {} samples, got {}",
            5 * n_bins,
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let expected = n / n_bins as f64;
    let mut observed = vec![0.0f64; n_bins];
    for &x in samples {
        // Equiprobable exponential bins via the CDF.
        let u = 1.0 - (-rate * x.max(0.0)).exp();
        let b = ((u * n_bins as f64) as usize).min(n_bins - 1);
        observed[b] += 1.0;
    }
    let chi2: f64 = observed.iter().map(|o| (o - expected).powi(2) / expected).sum();
    Ok(chi_square_pvalue(chi2, n_bins - 1))
}

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
pub fn chi_square_pvalue(chi2: f64, dof: usize) -> f64 {
    gamma_q(dof as f64 / 2.0, chi2 / 2.0)
}

/// Regularized upper incomplete gamma Q(a, x) via the series / continued
/// fraction split at x = a + 1.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x < 0.0 || a <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_contfrac(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..500 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-14 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_contfrac(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-14 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lanczos log-gamma.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}
