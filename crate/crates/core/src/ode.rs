//! Adaptive Dormand–Prince 5(4) integrator for real state vectors.
//!
//! Output times are hit exactly: the step is clipped so that every
//! requested time is a step boundary. Complex systems are integrated by
//! packing real and imaginary parts into the state.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step the controller may take; `None` leaves it unbounded.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: None,
            max_steps: 50_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol * 1e-2,
            ..Self::default()
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` and returns the state at every
/// time in `outputs` (which must be monotone in the direction of travel).
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], outputs: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut out = Vec::with_capacity(outputs.len());
    if outputs.is_empty() {
        return Ok(out);
    }
    let direction = {
        let last = outputs[outputs.len() - 1];
        if last >= t0 {
            1.0
        } else {
            -1.0
        }
    };
    for w in outputs.windows(2) {
        if (w[1] - w[0]) * direction < 0.0 {
            return Err(Error::InvalidParameter("output times must be monotone".into()));
        }
    }
    if (outputs[0] - t0) * direction < 0.0 {
        return Err(Error::InvalidParameter("first output time precedes t0".into()));
    }

    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut t = t0;
    rhs(t, &y, &mut ws.k[0])?;

    let span = (outputs[outputs.len() - 1] - t0).abs();
    let mut h = initial_step(&y, &ws.k[0], opts, span);
    if let Some(hmax) = opts.max_step {
        h = h.min(hmax);
    }
    let mut steps = 0usize;

    for &target in outputs {
        while (target - t) * direction > 0.0 {
            let remaining = (target - t).abs();
            let mut last = false;
            let mut step = h;
            if step >= remaining {
                step = remaining;
                last = true;
            }
            let hs = step * direction;
            dp_step(&mut rhs, t, &y, hs, &mut ws)?;
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::TooManySteps { t });
            }
            let scale_err = error_norm(&y, &ws.y_new, &ws.tmp, opts);
            if !scale_err.is_finite() {
                // shrink hard and retry; give up only below the underflow floor
                h = step * 0.1;
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::NonFinite { t });
                }
                continue;
            }
            if scale_err <= 1.0 {
                t = if last { target } else { t + hs };
                std::mem::swap(&mut y, &mut ws.y_new);
                // first-same-as-last: k7 is the derivative at the new point
                ws.k.swap(0, 6);
                let factor = if scale_err == 0.0 {
                    5.0
                } else {
                    (0.9 * scale_err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !last {
                    h = step * factor;
                } else {
                    // keep the controller's proposal, not the clipped step
                    h = h.max(step * factor);
                }
                if let Some(hmax) = opts.max_step {
                    h = h.min(hmax);
                }
            } else {
                let factor = (0.9 * scale_err.powf(-0.25)).clamp(0.1, 1.0);
                h = step * factor;
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], f0: &[f64], opts: &OdeOptions, span: f64) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for (yi, fi) in y.iter().zip(f0) {
        let sc = opts.atol + opts.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let n = y.len().max(1) as f64;
    let d0 = (d0 / n).sqrt();
    let d1 = (d1 / n).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h = h.min(span.max(1e-12));
    h.max(1e-12)
}

/// One Dormand–Prince step; fills `ws.y_new`, `ws.k[6]` (derivative at the
/// new point) and `ws.tmp` (the local error estimate).
fn dp_step<F>(rhs: &mut F, t: f64, y: &[f64], h: f64, ws: &mut Workspace) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let Workspace { k, tmp, y_new } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    rhs(t + C2 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    rhs(t + C3 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    rhs(t + C4 * h, tmp, k4)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    rhs(t + C5 * h, tmp, k5)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    rhs(t + h, tmp, k6)?;
    for i in 0..n {
        y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    rhs(t + h, y_new, k7)?;
    for i in 0..n {
        tmp[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    Ok(())
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / y.len().max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_hits_output_times() {
        let outs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.3).collect();
        let ys = integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &outs,
            &OdeOptions::with_tolerance(1e-12),
        )
        .unwrap();
        for (t, y) in outs.iter().zip(&ys) {
            assert!((y[0] - (-t).exp()).abs() < 1e-11, "t={t}");
        }
    }

    #[test]
    fn oscillator_backward_in_time() {
        let outs = [0.0, -1.0, -2.5];
        let ys = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            &outs,
            &OdeOptions::with_tolerance(1e-11),
        )
        .unwrap();
        for (t, y) in outs.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-9);
            assert!((y[1] + t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn non_monotone_outputs_rejected() {
        let r = integrate(|_, _, _| Ok(()), 0.0, &[0.0], &[1.0, 0.5], &OdeOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn rhs_errors_propagate() {
        let r = integrate(
            |t, _, _| if t > 0.5 { Err(Error::NonFinite { t }) } else { Ok(()) },
            0.0,
            &[0.0],
            &[1.0],
            &OdeOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
