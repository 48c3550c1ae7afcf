//! Small numerical helpers shared by the solvers and checks.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::fft;

/// Root of `f` on `[lo, hi]` by bisection; `f(lo)` and `f(hi)` must differ
/// in sign. Returns the final bracket midpoint once its width is below `tol`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if !(flo.is_finite() && fhi.is_finite()) {
        return Err(Error::Domain("bisection endpoints are not finite".into()));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * mid.abs().max(1e-300) || mid == lo || mid == hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grows `hi` geometrically from `lo` until `f` changes sign, then bisects.
pub fn bracket_and_bisect(f: impl Fn(f64) -> f64, lo: f64, first_hi: f64, tol: f64) -> Result<f64> {
    let flo = f(lo);
    let mut hi = first_hi;
    while hi.is_finite() {
        let fh = f(hi);
        if fh.is_finite() && (fh == 0.0 || fh.signum() != flo.signum()) {
            return bisect(&f, lo, hi, tol);
        }
        hi *= 2.0;
    }
    Err(Error::Domain("no sign change below f64::MAX".into()))
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::LengthMismatch { expected: x.len(), actual: y.len() });
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Angular frequency of the strongest non-DC DFT line of a uniformly
/// sampled series, and the bin width `2 pi / (n dt)`.
pub fn dominant_angular_frequency(series: &[f64], dt: f64) -> Result<(f64, f64)> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Domain("series too short for a spectrum".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut data: Vec<Complex64> = series.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    fft(&mut data);
    let (mut best, mut power) = (1, 0.0);
    for (q, c) in data.iter().enumerate().take(n / 2 + 1).skip(1) {
        if c.norm_sqr() > power {
            power = c.norm_sqr();
            best = q;
        }
    }
    let bin = 2.0 * PI / (n as f64 * dt);
    Ok((best as f64 * bin, bin))
}

/// Mean of a periodic function over one period by the rectangle rule
/// (spectrally accurate for smooth periodic integrands).
pub fn periodic_mean(f: impl Fn(f64) -> f64, period: f64, samples: usize) -> f64 {
    let h = period / samples as f64;
    (0..samples).map(|i| f(i as f64 * h)).sum::<f64>() / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
        let r = bracket_and_bisect(|x| x - 1000.0, 0.0, 1.0, 1e-14).unwrap();
        assert!((r - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_power_law() {
        let x: Vec<f64> = (1..20).map(|i| i as f64 * 1.7).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-1.3)).collect();
        let (s, c) = log_log_fit(&x, &y).unwrap();
        assert!((s + 1.3).abs() < 1e-12);
        assert!((c - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spectrum_peak() {
        let dt = 0.01;
        let s: Vec<f64> = (0..4096).map(|i| 1.0 + (3.0 * i as f64 * dt).cos()).collect();
        let (w, bin) = dominant_angular_frequency(&s, dt).unwrap();
        assert!((w - 3.0).abs() <= bin);
    }

    #[test]
    fn periodic_mean_of_cosine() {
        assert!((periodic_mean(|t| 2.0 + t.cos(), 2.0 * PI, 64) - 2.0).abs() < 1e-15);
    }
}
