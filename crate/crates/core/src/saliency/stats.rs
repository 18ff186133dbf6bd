use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};

/// Shift target for the digamma/trigamma recurrences before the
/// asymptotic series is accurate to machine precision.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Digamma ψ(x) for x > 0; NaN elsewhere.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { f64::INFINITY } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (5.0 / 660.0)))));
    acc + x.ln() - 0.5 / x - series
}

/// Trigamma ψ'(x) for x > 0; NaN elsewhere.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { 0.0 } else { f64::NAN };
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0))));
    acc + 1.0 / x + 0.5 * r + series * r / x
}

/// Closed-form starting point for the Gamma shape given
/// `s = ln(mean) - mean(ln x)`.
pub fn gamma_shape_initial(s: f64) -> f64 {
    (0.25 + 0.5 * (1.0 + 3.0 * s).sqrt()) / s
}

/// Maximum-likelihood Gamma shape: the root of `ln k - ψ(k) = s`.
///
/// Newton from [`gamma_shape_initial`]; bisection if an iterate leaves
/// `(0, ∞)` or Newton stalls.
pub fn estimate_gamma_shape(s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Argument(format!("gamma shape needs s > 0, got {s}")));
    }
    const TOL: f64 = 1e-10;
    let f = |k: f64| k.ln() - digamma(k) - s;
    let mut k = gamma_shape_initial(s);
    for _ in 0..100 {
        let fk = f(k);
        if fk.abs() < TOL {
            return Ok(k);
        }
        let next = k - fk / (1.0 / k - trigamma(k));
        if !(next > 0.0) || !next.is_finite() {
            break;
        }
        if next == k {
            return Ok(k);
        }
        k = next;
    }
    // ln k - ψ(k) falls from +∞ to 0, so f is decreasing.
    let (mut lo, mut hi) = (k.min(1.0), k.max(1.0));
    while f(lo) < 0.0 {
        lo *= 0.5;
    }
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < TOL || hi - lo <= f64::EPSILON * mid {
            return Ok(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Kolmogorov survival function `Q(λ) = P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // Theta-function form; the alternating series converges slowly here.
        let a = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=100u32 {
            let m = (2 * k - 1) as f64;
            let term = (-a * m * m).exp();
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100u32 {
            let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
            sum += sign * term;
            if term < 1e-17 * sum.abs() {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    q.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sample Kolmogorov–Smirnov test on class ids. The asymptotic p-value
/// uses the effective size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[u8], b: &[u8]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument(format!(
            "KS test needs two non-empty samples (sizes {} and {})",
            a.len(),
            b.len()
        )));
    }
    let mut count_a = [0usize; 256];
    let mut count_b = [0usize; 256];
    for &x in a {
        count_a[x as usize] += 1;
    }
    for &x in b {
        count_b[x as usize] += 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut ca, mut cb, mut d) = (0usize, 0usize, 0.0f64);
    for v in 0..256 {
        ca += count_a[v];
        cb += count_b[v];
        d = d.max((ca as f64 / na - cb as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(ne.sqrt() * d),
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// One-sample KS statistic of `values` against a continuous CDF, with the
/// asymptotic p-value.
pub fn ks_one_sample(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Argument("KS test on an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok((d, kolmogorov_q(n.sqrt() * d)))
}

/// Outcome of testing each depth column of activation maps against its
/// fitted Gamma distribution, Bonferroni-corrected over all columns.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GammaFitDiagnostic {
    pub alpha: f64,
    /// Columns tested; constant columns cannot be fitted and are skipped.
    pub tested: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub min_p_value: f64,
}

impl GammaFitDiagnostic {
    pub fn rejects(&self) -> bool {
        self.rejected > 0
    }
}

/// Fits a Gamma distribution (shape from [`estimate_gamma_shape`], scale
/// `mean / k`) to every depth column and runs a one-sample KS test.
///
/// `maps` holds `(depth, values)` with values laid out `[depth][position]`;
/// values are floored like in the saliency statistic.
pub fn gamma_fit_diagnostic(maps: &[(usize, Vec<f64>)], alpha: f64) -> Result<GammaFitDiagnostic> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut p_values = Vec::new();
    let mut skipped = 0;
    for (depth, values) in maps {
        let depth = *depth;
        if depth < 2 || values.len() % depth != 0 {
            return Err(Error::Contract(format!("{} values do not form {depth} rows", values.len())));
        }
        let len = values.len() / depth;
        for i in 0..len {
            let col: Vec<f64> = (0..depth).map(|j| values[j * len + i].max(super::EPS)).collect();
            let mean = col.iter().sum::<f64>() / depth as f64;
            let s = mean.ln() - col.iter().map(|x| x.ln()).sum::<f64>() / depth as f64;
            if !(s > 1e-12) {
                skipped += 1;
                continue;
            }
            let k = estimate_gamma_shape(s)?;
            let dist = Gamma::new(k, k / mean).map_err(|e| Error::Argument(e.to_string()))?;
            p_values.push(ks_one_sample(&col, |x| dist.cdf(x))?.1);
        }
    }
    let tested = p_values.len();
    let threshold = alpha / tested.max(1) as f64;
    Ok(GammaFitDiagnostic {
        alpha,
        tested,
        skipped,
        rejected: p_values.iter().filter(|&&p| p < threshold).count(),
        min_p_value: p_values.iter().copied().fold(1.0, f64::min),
    })
}
