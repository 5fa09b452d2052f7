//! Smoothed projected Landweber (SPL) reconstruction.
//!
//! Measurements are handled in "row mode": for column-axis sampling every
//! array is transposed on the way in and out, so the block operator always
//! acts down the first axis.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sampler::{self, SampledImage, SamplingAxis, SamplingSpec};
use crate::transforms::{self, Basis};

/// Row-normalised counterpart of a front-end sampling matrix.
///
/// Each back-end row is the front-end row (times any per-pixel gain) divided
/// by its Euclidean norm; measurements are divided by the same norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    block: Array2<f64>,
    norms: Vec<f64>,
    /// Row-mode per-pixel gains with their per-measurement norms.
    gains: Option<(Array2<f64>, Array2<f64>)>,
    axis: SamplingAxis,
}

/// Builds the back-end operator for `spec`.
pub fn backend_of(spec: &SamplingSpec) -> Result<Backend> {
    let block = spec.block().mapv(f64::from);
    let norms = spec.normalization();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::invalid(format!("sampling block row {i} is all zero")));
    }
    let rm = sampler::row_mode_spec(spec);
    let gains = rm.pixel_weights().map(|pw| {
        let scale = f64::from(1u32 << pw.frac_bits());
        let g = pw.weights().mapv(|w| f64::from(w) / scale);
        let (m, b) = block.dim();
        let (h, w) = g.dim();
        let groups = h / b;
        let n = Array2::from_shape_fn((groups * m, w), |(r, c)| {
            let (grp, i) = (r / m, r % m);
            (0..b)
                .map(|t| (block[[i, t]] * g[[grp * b + t, c]]).powi(2))
                .sum::<f64>()
                .sqrt()
        });
        (g, n)
    });
    let backend = Backend {
        block,
        norms,
        gains,
        axis: spec.axis(),
    };
    if !is_disjoint(&backend.block) {
        log::warn!("sampling block rows overlap; unit-step Landweber may not converge");
    }
    Ok(backend)
}

fn is_disjoint(block: &Array2<f64>) -> bool {
    (0..block.ncols()).all(|t| block.column(t).iter().filter(|v| **v != 0.0).count() <= 1)
}

impl Backend {
    /// The normalised `m x b` block (ignores any per-pixel gains).
    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.block.dim(), |(i, t)| self.block[[i, t]] / self.norms[i])
    }

    pub fn axis(&self) -> SamplingAxis {
        self.axis
    }

    fn m(&self) -> usize {
        self.block.nrows()
    }

    fn b(&self) -> usize {
        self.block.ncols()
    }

    /// Coefficient of row-mode pixel `(group*b + t, c)` in measurement `(group*m + i, c)`.
    fn coef(&self, group: usize, i: usize, t: usize, c: usize) -> f64 {
        let raw = self.block[[i, t]];
        match &self.gains {
            None => raw / self.norms[i],
            Some((g, n)) => raw * g[[group * self.b() + t, c]] / n[[group * self.m() + i, c]],
        }
    }

    fn to_row_mode(&self, a: &Array2<f64>) -> Array2<f64> {
        match self.axis {
            SamplingAxis::Rows => a.clone(),
            SamplingAxis::Columns => a.t().as_standard_layout().to_owned(),
        }
    }

    fn check_gain_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if let Some((g, _)) = &self.gains {
            if g.dim() != (rows, cols) {
                return Err(Error::DimensionMismatch(format!(
                    "pixel weights are {:?}, image is {:?}",
                    g.dim(),
                    (rows, cols)
                )));
            }
        }
        Ok(())
    }

    /// Measurement-domain shape for a source of `(rows, cols)`, image orientation.
    pub fn measurement_shape(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (m, b) = (self.m(), self.b());
        match self.axis {
            SamplingAxis::Rows if rows % b == 0 => Ok((rows / b * m, cols)),
            SamplingAxis::Columns if cols % b == 0 => Ok((rows, cols / b * m)),
            _ => Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} not divisible by block width {b} along the sampling axis"
            ))),
        }
    }

    /// `Φ x` for an image-shaped grid.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.measurement_shape(x.nrows(), x.ncols())?;
        let xr = self.to_row_mode(x);
        let (h, w) = xr.dim();
        self.check_gain_shape(h, w)?;
        let (m, b) = (self.m(), self.b());
        let groups = h / b;
        let mut y = Array2::zeros((groups * m, w));
        for g in 0..groups {
            for i in 0..m {
                for c in 0..w {
                    let mut acc = 0.0;
                    for t in 0..b {
                        acc += self.coef(g, i, t, c) * xr[[g * b + t, c]];
                    }
                    y[[g * m + i, c]] = acc;
                }
            }
        }
        Ok(self.to_row_mode(&y))
    }

    /// `Φᵀ y`, returning an image-shaped grid.
    pub fn adjoint(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        let yr = self.to_row_mode(y);
        let (hm, w) = yr.dim();
        let (m, b) = (self.m(), self.b());
        if hm % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{hm} measurement rows not a multiple of {m}"
            )));
        }
        let groups = hm / m;
        self.check_gain_shape(groups * b, w)?;
        let mut x = Array2::zeros((groups * b, w));
        for g in 0..groups {
            for t in 0..b {
                for c in 0..w {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += self.coef(g, i, t, c) * yr[[g * m + i, c]];
                    }
                    x[[g * b + t, c]] = acc;
                }
            }
        }
        Ok(self.to_row_mode(&x))
    }

    /// Divides front-end measurements by their row norms.
    pub fn rescale(&self, front_end: &Array2<f64>) -> Result<Array2<f64>> {
        let mut yr = self.to_row_mode(front_end);
        let m = self.m();
        if yr.nrows() % m != 0 {
            return Err(Error::DimensionMismatch(
                "measurement rows not a multiple of block height".into(),
            ));
        }
        match &self.gains {
            None => {
                for (r, mut row) in yr.rows_mut().into_iter().enumerate() {
                    row /= self.norms[r % m];
                }
            }
            Some((_, n)) => {
                if n.dim() != yr.dim() {
                    return Err(Error::DimensionMismatch(
                        "pixel weights do not match measurements".into(),
                    ));
                }
                yr /= n;
            }
        }
        Ok(self.to_row_mode(&yr))
    }
}

/// Front-end measurement values, with truncated LSBs re-centred to the
/// middle of the lost interval (`v·2^k + 2^(k-1)`).
pub fn dequantize(y: &SampledImage) -> Array2<f64> {
    let k = y.truncated_bits();
    let (scale, half) = if k == 0 {
        (1.0, 0.0)
    } else {
        (f64::from(1u32 << k), f64::from(1u32 << (k - 1)))
    };
    y.image().to_real().mapv(|v| v * scale + half)
}

/// Back-end measurements ready for reconstruction.
pub fn measurements(y: &SampledImage, backend: &Backend) -> Result<Array2<f64>> {
    backend.rescale(&dequantize(y))
}

/// `x⁰ = Φᵀy`.
pub fn initialize(y: &Array2<f64>, backend: &Backend) -> Result<Array2<f64>> {
    backend.adjoint(y)
}

/// `x + Φᵀ(y − Φx)`.
pub fn landweber_step(x: &Array2<f64>, y: &Array2<f64>, backend: &Backend) -> Result<Array2<f64>> {
    let phi_x = backend.apply(x)?;
    if phi_x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measurements are {:?}, expected {:?}",
            y.dim(),
            phi_x.dim()
        )));
    }
    Ok(x + &backend.adjoint(&(y - &phi_x))?)
}

fn mirror(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i - 1) as usize
    } else if i as usize >= n {
        2 * n - 1 - i as usize
    } else {
        i as usize
    }
}

/// Adaptive 3x3 Wiener filter with symmetric border extension.
pub fn wiener3x3(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return img.clone();
    }
    let mut mean = Array2::zeros((h, w));
    let mut var = Array2::zeros((h, w));
    let mut win = [0.0; 9];
    for r in 0..h {
        for c in 0..w {
            let mut k = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    win[k] = img[[mirror(r as isize + dr, h), mirror(c as isize + dc, w)]];
                    k += 1;
                }
            }
            let mu = win.iter().sum::<f64>() / 9.0;
            mean[[r, c]] = mu;
            var[[r, c]] = win.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 9.0;
        }
    }
    let noise = var.mean().unwrap_or(0.0);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (mu, s2) = (mean[[r, c]], var[[r, c]]);
        let denom = s2.max(noise);
        if denom == 0.0 {
            mu
        } else {
            mu + (s2 - noise).max(0.0) / denom * (img[[r, c]] - mu)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplConfig {
    /// Threshold multiplier: `τ = lambda · σ̂`.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when successive D values differ by less than this.
    pub epsilon: f64,
    /// Number of consecutive iterations the epsilon test must pass. D is not
    /// monotone under hard thresholding, so a single pass is often a coincidence.
    pub patience: usize,
    pub basis: Basis,
    /// Decomposition depth; `None` picks [`transforms::default_levels`].
    pub levels: Option<usize>,
}

impl Default for SplConfig {
    fn default() -> Self {
        SplConfig {
            lambda: 6.0,
            max_iters: 200,
            epsilon: 1e-4,
            patience: 3,
            basis: Basis::Ddwt,
            levels: None,
        }
    }
}

impl SplConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.levels == Some(0) {
            return Err(Error::invalid("levels must be at least 1"));
        }
        Ok(())
    }
}

/// Loop state between iterations.
#[derive(Debug, Clone)]
pub struct SplState {
    pub x_current: Array2<f64>,
    pub d_current: Option<f64>,
    pub d_previous: Option<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// `‖x^i − x^(i−1)‖ / √N`.
    pub d: f64,
    /// `‖y − Φx^i‖ / ‖y‖` (0 when `y` is zero).
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplTrace {
    pub rows: Vec<TraceRow>,
    /// False when the loop stopped at `max_iters`.
    pub converged: bool,
    /// Relative residual of the initial estimate.
    pub initial_residual: f64,
}

impl SplTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["iteration", "D", "residual"])
            .map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.write_record([row.iteration.to_string(), row.d.to_string(), row.residual.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn relative_residual(y: &Array2<f64>, x: &Array2<f64>, backend: &Backend, y_norm: f64) -> Result<f64> {
    if y_norm == 0.0 {
        return Ok(0.0);
    }
    Ok(norm(&(y - &backend.apply(x)?)) / y_norm)
}

/// One SPL iteration: Wiener, Landweber, threshold in the basis, Landweber.
pub fn spl_iteration(
    x: &Array2<f64>,
    y: &Array2<f64>,
    backend: &Backend,
    cfg: &SplConfig,
    levels: usize,
) -> Result<Array2<f64>> {
    let smoothed = landweber_step(&wiener3x3(x), y, backend)?;
    let mut coeffs = cfg.basis.forward(&smoothed, levels)?;
    let tau = cfg.lambda * transforms::estimate_sigma(&coeffs)?;
    transforms::hard_threshold_in_place(&mut coeffs, &[tau])?;
    let projected = cfg.basis.inverse(&coeffs)?;
    landweber_step(&projected, y, backend)
}

/// Runs SPL on back-end measurements `y` for an image of shape `shape`.
pub fn spl_solve(
    y: &Array2<f64>,
    backend: &Backend,
    shape: (usize, usize),
    cfg: &SplConfig,
) -> Result<(Array2<f64>, SplTrace)> {
    cfg.validate()?;
    if backend.measurement_shape(shape.0, shape.1)? != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measurements {:?} inconsistent with a {}x{} image",
            y.dim(),
            shape.0,
            shape.1
        )));
    }
    let levels = cfg
        .levels
        .unwrap_or_else(|| transforms::default_levels(shape.0, shape.1));
    let n = (shape.0 * shape.1) as f64;
    let y_norm = norm(y);
    let mut state = SplState {
        x_current: initialize(y, backend)?,
        d_current: None,
        d_previous: None,
        iteration: 0,
    };
    let mut calm = 0;
    let mut trace = SplTrace {
        initial_residual: relative_residual(y, &state.x_current, backend, y_norm)?,
        ..SplTrace::default()
    };
    while state.iteration < cfg.max_iters {
        let next = spl_iteration(&state.x_current, y, backend, cfg, levels)?;
        let d = norm(&(&next - &state.x_current)) / n.sqrt();
        state.iteration += 1;
        state.d_previous = state.d_current;
        state.d_current = Some(d);
        state.x_current = next;
        trace.rows.push(TraceRow {
            iteration: state.iteration,
            d,
            residual: relative_residual(y, &state.x_current, backend, y_norm)?,
        });
        match state.d_previous {
            Some(prev) if (d - prev).abs() < cfg.epsilon => calm += 1,
            _ => calm = 0,
        }
        // an unchanged iterate is a fixed point; waiting cannot help
        if calm >= cfg.patience || d == 0.0 {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("SPL stopped at max_iters = {} without meeting epsilon", cfg.max_iters);
    }
    Ok((state.x_current, trace))
}

/// Reconstructs an 8-bit image from sampled (possibly truncated) data.
pub fn spl_reconstruct(y: &SampledImage, cfg: &SplConfig) -> Result<(Image, SplTrace)> {
    let backend = backend_of(y.spec())?;
    let meas = measurements(y, &backend)?;
    let (x, trace) = spl_solve(&meas, &backend, (y.source_height(), y.source_width()), cfg)?;
    Ok((Image::from_real(&x, 8)?, trace))
}

#[cfg(test)]
mod tests;
