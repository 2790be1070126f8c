//! Uniform periodic 1-D grids, grid functions with one or two components,
//! spectral helpers and CSV/JSON serialization.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid1D {
    /// Periodic grid with `n` nodes `x_min + j dx`, `dx = (x_max - x_min)/n`.
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_max > x_min) || n < 2 {
            return Err(Error::InvalidParameter(format!("bad grid [{x_min}, {x_max}] with {n} points")));
        }
        Ok(Self { x_min, x_max, n })
    }

    /// Grid covering `[center - half_width, center + half_width]` with at
    /// least `min_points`, rounded up to a power of two.
    pub fn covering(center: f64, half_width: f64, min_points: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, min_points.max(2).next_power_of_two())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// FFT wavenumbers in standard order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let dk = 2.0 * PI / self.length();
        (0..n).map(|j| if j < (n + 1) / 2 { j } else { j - n } as f64 * dk).collect()
    }

    /// Index range `[lo, hi)` of nodes with `|x - c| <= r`.
    pub fn window(&self, c: f64, r: f64) -> (usize, usize) {
        let dx = self.dx();
        let lo = (((c - r) - self.x_min) / dx).ceil().max(0.0) as usize;
        let hi = ((((c + r) - self.x_min) / dx).floor() + 1.0).clamp(0.0, self.n as f64) as usize;
        (lo.min(self.n), hi.max(lo.min(self.n)))
    }
}

/// Complex values on a grid, one vector per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub eps: f64,
    pub values: Vec<Vec<C64>>,
}

impl GridFunction {
    pub fn zeros(grid: Grid1D, eps: f64, levels: usize) -> Self {
        Self { grid, eps, values: vec![vec![C64::new(0.0, 0.0); grid.n]; levels] }
    }

    pub fn from_fn(grid: Grid1D, eps: f64, f: impl Fn(f64) -> C64) -> Self {
        Self { grid, eps, values: vec![grid.points().into_iter().map(f).collect()] }
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn norm_squared(&self) -> f64 {
        let dx = self.grid.dx();
        self.values.iter().flat_map(|v| v.iter()).map(|c| c.norm_sqr()).sum::<f64>() * dx
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn component_norm(&self, level: usize) -> f64 {
        (self.values[level].iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dx()).sqrt()
    }

    /// `<self, other>`, antilinear in `self`.
    pub fn inner(&self, other: &GridFunction) -> Result<C64> {
        self.check_compatible(other)?;
        let dx = self.grid.dx();
        let s: C64 = self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.conj() * y))
            .sum();
        Ok(s * dx)
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        if self.levels() != other.levels() {
            return Err(Error::GridMismatch(format!("{} vs {} components", self.levels(), other.levels())));
        }
        if self.eps != other.eps {
            return Err(Error::EpsMismatch(self.eps, other.eps));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &GridFunction) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x -= y;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: C64) {
        for v in self.values.iter_mut().flat_map(|v| v.iter_mut()) {
            *v *= s;
        }
    }

    /// Single-component view of one level.
    pub fn component(&self, level: usize) -> GridFunction {
        GridFunction { grid: self.grid, eps: self.eps, values: vec![self.values[level].clone()] }
    }

    /// Fraction of the squared norm carried by the outer `fraction` of
    /// nodes on either side.
    pub fn edge_mass(&self, fraction: f64) -> f64 {
        let n = self.grid.n;
        let m = ((n as f64 * fraction).ceil() as usize).max(1).min(n / 2);
        let total = self.norm_squared();
        if total == 0.0 {
            return 0.0;
        }
        let dx = self.grid.dx();
        let edge: f64 = self
            .values
            .iter()
            .map(|v| v[..m].iter().chain(&v[n - m..]).map(|c| c.norm_sqr()).sum::<f64>())
            .sum();
        edge * dx / total
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let mut header = String::from("x");
        for l in 0..self.levels() {
            header.push_str(&format!(",re{l},im{l}"));
        }
        writeln!(w, "{header}")?;
        for j in 0..self.grid.n {
            let mut line = format!("{:.17e}", self.grid.x(j));
            for v in &self.values {
                line.push_str(&format!(",{:.17e},{:.17e}", v[j].re, v[j].im));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        let meta = GridMetadata { grid: self.grid, eps: self.eps, levels: self.levels() };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a grid function written by [`GridFunction::write_csv`] (the
    /// JSON sidecar carries the grid and `eps`).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta: GridMetadata = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        let mut out = GridFunction::zeros(meta.grid, meta.eps, meta.levels);
        let reader = BufReader::new(std::fs::File::open(path)?);
        for (j, line) in reader.lines().skip(1).enumerate() {
            let line = line?;
            if j >= meta.grid.n {
                return Err(Error::GridMismatch("more rows than grid points".into()));
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if cols.len() != 1 + 2 * meta.levels {
                return Err(Error::GridMismatch(format!("row {j} has {} columns", cols.len())));
            }
            for l in 0..meta.levels {
                out.values[l][j] = C64::new(cols[1 + 2 * l], cols[2 + 2 * l]);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMetadata {
    pub grid: Grid1D,
    pub eps: f64,
    pub levels: usize,
}

/// Forward/inverse FFT pair for one grid size, with unitary scaling left to
/// the caller.
#[derive(Clone)]
pub struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    pub k: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: &Grid1D) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(grid.n), inverse: planner.plan_fft_inverse(grid.n), k: grid.wavenumbers() }
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.forward.process(data);
    }

    /// Inverse transform including the `1/n` factor.
    pub fn inverse(&self, data: &mut [C64]) {
        self.inverse.process(data);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// Multiplies the spectrum of `data` by `symbol(k)` in place.
    pub fn apply_multiplier(&self, data: &mut [C64], symbol: impl Fn(f64) -> C64) {
        self.forward(data);
        for (v, &k) in data.iter_mut().zip(&self.k) {
            *v *= symbol(k);
        }
        self.inverse(data);
    }

    /// `f(x) -> f(x - shift)` by a spectral phase.
    pub fn shift(&self, data: &mut [C64], shift: f64) {
        self.apply_multiplier(data, |k| C64::from_polar(1.0, -k * shift));
    }

    /// `(eps d/dx)^order f`.
    pub fn derivative(&self, data: &mut [C64], eps: f64, order: i32) {
        self.apply_multiplier(data, |k| C64::new(0.0, eps * k).powi(order));
    }
}
