//! Error metrics and log-log slope fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

pub fn l2_error(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(a.sub(b)?.norm())
}

/// `||a - b|| / ||b||`.
pub fn relative_l2_error(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    let nb = b.norm();
    if nb == 0.0 {
        return Err(Error::Degenerate("relative error against a zero function".into()));
    }
    Ok(l2_error(a, b)? / nb)
}

/// Smooth bump `exp(-1/(1 - tau^2))`, `tau = (t - center)/half_width`,
/// supported on `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub half_width: f64,
}

impl Bump {
    pub fn value(&self, t: f64) -> f64 {
        let tau = (t - self.center) / self.half_width;
        if tau.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - tau * tau)).exp()
        }
    }

    /// A zero weight function, for degenerate checks.
    pub fn zero() -> Self {
        Self { center: 0.0, half_width: 0.0 }
    }
}

/// Composite Simpson weights on a uniform grid with an even number of
/// intervals.
pub fn simpson_weights(times: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidParameter("Simpson's rule needs an odd number (>= 3) of times".into()));
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    for (i, t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * h)).abs() > 1e-9 * h.abs().max(1.0) {
            return Err(Error::InvalidParameter("Simpson's rule needs a uniform time grid".into()));
        }
    }
    Ok((0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

/// `|| int chi(t) (a(t) - b(t)) dt ||` with composite Simpson in `t`.
pub fn time_averaged_error(a: &[GridFunction], b: &[GridFunction], chi: &Bump, times: &[f64]) -> Result<f64> {
    if a.len() != times.len() || b.len() != times.len() {
        return Err(Error::InvalidParameter("runs and time grid differ in length".into()));
    }
    if chi.half_width == 0.0 {
        return Ok(0.0);
    }
    let (t_lo, t_hi) = (times[0].min(times[times.len() - 1]), times[0].max(times[times.len() - 1]));
    if chi.center - chi.half_width < t_lo - 1e-12 || chi.center + chi.half_width > t_hi + 1e-12 {
        return Err(Error::InvalidParameter("bump support escapes the time window".into()));
    }
    let w = simpson_weights(times)?;
    let mut acc = a[0].sub(&b[0])?;
    acc.scale((w[0] * chi.value(times[0])).into());
    for i in 1..times.len() {
        let c = w[i] * chi.value(times[i]);
        if c == 0.0 {
            continue;
        }
        let mut d = a[i].sub(&b[i])?;
        d.scale(c.into());
        acc.add_assign(&d)?;
    }
    Ok(acc.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
    /// 95% confidence interval for the slope.
    pub confidence: (f64, f64),
    pub target: Option<(f64, f64)>,
    pub pass: Option<bool>,
}

impl ConvergenceReport {
    pub fn with_target(mut self, lo: f64, hi: f64) -> Self {
        self.target = Some((lo, hi));
        self.pass = Some(self.slope >= lo && self.slope <= hi);
        self
    }
}

/// Least-squares slope of `log error` against `log eps`.
pub fn fit_slope(eps: &[f64], errors: &[f64]) -> Result<ConvergenceReport> {
    if eps.len() != errors.len() || eps.len() < 3 {
        return Err(Error::InvalidParameter("slope fit needs at least three (eps, error) pairs".into()));
    }
    if eps.iter().chain(errors).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("slope fit needs positive finite data".into()));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct eps values".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = n - 2.0;
    let std_error = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidParameter(e.to_string()))?.inverse_cdf(0.975);
    Ok(ConvergenceReport {
        eps: eps.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept,
        std_error,
        confidence: (slope - t * std_error, slope + t * std_error),
        target: None,
        pass: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use num_complex::Complex64;

    #[test]
    fn exact_power_laws() {
        let eps = [0.1, 0.05, 0.025];
        let lin: Vec<f64> = eps.iter().map(|e| 3.0 * e).collect();
        let r = fit_slope(&eps, &lin).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-12);
        assert!(r.std_error < 1e-12);
        let half: Vec<f64> = eps.iter().map(|e: &f64| 0.2 * e.sqrt()).collect();
        let r = fit_slope(&eps, &half).unwrap().with_target(0.4, 0.6);
        assert!((r.slope - 0.5).abs() < 1e-12);
        assert_eq!(r.pass, Some(true));
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_slope(&[0.1, 0.05], &[1.0, 0.5]).is_err());
        assert!(fit_slope(&[0.1, 0.05, 0.02], &[1.0, 0.0, 0.5]).is_err());
    }

    #[test]
    fn confidence_interval_uses_student_t() {
        let r = fit_slope(&[1.0, 2.0, 4.0, 8.0], &[1.0, 2.2, 3.9, 8.5]).unwrap();
        assert!(r.confidence.0 < r.slope && r.slope < r.confidence.1);
        // t_{0.975, 2} = 4.302653
        assert!(((r.confidence.1 - r.slope) / r.std_error - 4.302653).abs() < 1e-5);
    }

    fn gf(grid: Grid1D, c: f64) -> GridFunction {
        GridFunction::from_fn(grid, 0.1, |x| Complex64::new(c * (-x * x).exp(), 0.0))
    }

    #[test]
    fn l2_error_identities() {
        let g = Grid1D::new(-5.0, 5.0, 128).unwrap();
        let a = gf(g, 1.0);
        assert_eq!(l2_error(&a, &a).unwrap(), 0.0);
        assert!((l2_error(&a, &gf(g, 0.0)).unwrap() - a.norm()).abs() < 1e-15);
        assert!(l2_error(&a, &gf(Grid1D::new(-5.0, 5.0, 64).unwrap(), 0.0)).is_err());
    }

    #[test]
    fn time_average_of_constant_difference() {
        let g = Grid1D::new(-5.0, 5.0, 128).unwrap();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let a: Vec<GridFunction> = times.iter().map(|_| gf(g, 1.0)).collect();
        let b: Vec<GridFunction> = times.iter().map(|_| gf(g, 0.0)).collect();
        let chi = Bump { center: 1.0, half_width: 1.0 };
        // int exp(-1/(1-t^2)) dt over (-1, 1) = 0.443993816...
        let got = time_averaged_error(&a, &b, &chi, &times).unwrap();
        assert!((got / a[0].norm() - 0.443_993_816).abs() < 1e-4);
        assert_eq!(time_averaged_error(&a, &a, &chi, &times).unwrap(), 0.0);
        assert_eq!(time_averaged_error(&a, &b, &Bump::zero(), &times).unwrap(), 0.0);
        let wide = Bump { center: 1.0, half_width: 2.0 };
        assert!(time_averaged_error(&a, &b, &wide, &times).is_err());
    }
}
