//! Front-end compressed sampling as performed on the sensor.
//!
//! A sampling block of shape `m x b` is applied independently to every group
//! of `b` consecutive rows (or columns), column by column. Because the blocks
//! sit on the diagonal of the full measurement matrix, the image never has to
//! be vectorised: each output row is an integer weighted sum of source rows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{self, bits_for, Image};

/// Block applied by the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplingKind {
    /// `[[1,1,0,0],[0,0,1,1]]`: plain addition of adjacent pixels.
    Binary,
    /// `[[9,7,0,0],[0,0,9,7]]`: weighted addition.
    NonBinary,
    Custom,
}

impl fmt::Display for SamplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingKind::Binary => "binary",
            SamplingKind::NonBinary => "non_binary",
            SamplingKind::Custom => "custom",
        })
    }
}

impl std::str::FromStr for SamplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(SamplingKind::Binary),
            "non_binary" | "non-binary" | "nonbinary" => Ok(SamplingKind::NonBinary),
            "custom" => Ok(SamplingKind::Custom),
            other => Err(Error::invalid(format!("unknown sampling kind {other:?}"))),
        }
    }
}

/// Direction along which neighbouring pixels are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingAxis {
    /// Groups of adjacent rows are combined; the image height shrinks.
    #[default]
    Rows,
    /// Same math on the transposed image.
    Columns,
}

/// Per-pixel integer multipliers in fixed point (`value / 2^frac_bits`).
///
/// Used to fold measured gain mismatch into the sampling matrix. The grid is
/// indexed in source-image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights {
    frac_bits: u8,
    weights: Array2<u32>,
}

impl PixelWeights {
    pub fn new(frac_bits: u8, weights: Array2<u32>) -> Result<Self> {
        if frac_bits > 16 {
            return Err(Error::invalid("pixel weight precision above 16 fractional bits"));
        }
        if weights.iter().any(|&w| w == 0) {
            return Err(Error::invalid("pixel weights must be positive"));
        }
        Ok(PixelWeights { frac_bits, weights })
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn weights(&self) -> &Array2<u32> {
        &self.weights
    }

    /// Real-valued gain of one pixel.
    pub fn gain(&self, row: usize, col: usize) -> f64 {
        f64::from(self.weights[[row, col]]) / f64::from(1u32 << self.frac_bits)
    }
}

/// Everything needed to reproduce (and invert) a front-end sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    kind: SamplingKind,
    block: Array2<u32>,
    pixel_weights: Option<PixelWeights>,
    axis: SamplingAxis,
}

impl SamplingSpec {
    pub fn binary() -> Self {
        SamplingSpec {
            kind: SamplingKind::Binary,
            block: ndarray::array![[1, 1, 0, 0], [0, 0, 1, 1]],
            pixel_weights: None,
            axis: SamplingAxis::Rows,
        }
    }

    pub fn non_binary() -> Self {
        SamplingSpec {
            kind: SamplingKind::NonBinary,
            block: ndarray::array![[9, 7, 0, 0], [0, 0, 9, 7]],
            pixel_weights: None,
            axis: SamplingAxis::Rows,
        }
    }

    pub fn of_kind(kind: SamplingKind) -> Result<Self> {
        match kind {
            SamplingKind::Binary => Ok(Self::binary()),
            SamplingKind::NonBinary => Ok(Self::non_binary()),
            SamplingKind::Custom => Err(Error::invalid("custom specs need an explicit block")),
        }
    }

    /// An arbitrary non-negative integer block. Every row needs a non-zero entry.
    pub fn custom(block: Array2<u32>) -> Result<Self> {
        let (m, b) = block.dim();
        if m == 0 || b == 0 || m > b {
            return Err(Error::invalid(format!(
                "block shape {m}x{b} is not a compressing block"
            )));
        }
        if block.rows().into_iter().any(|r| r.iter().all(|&v| v == 0)) {
            return Err(Error::invalid("block has an all-zero row"));
        }
        Ok(SamplingSpec {
            kind: SamplingKind::Custom,
            block,
            pixel_weights: None,
            axis: SamplingAxis::Rows,
        })
    }

    /// Attaches per-pixel weights; the result is always of kind `Custom`.
    pub fn with_pixel_weights(mut self, weights: PixelWeights) -> Self {
        self.kind = SamplingKind::Custom;
        self.pixel_weights = Some(weights);
        self
    }

    pub fn with_axis(mut self, axis: SamplingAxis) -> Self {
        self.axis = axis;
        self
    }

    pub fn kind(&self) -> SamplingKind {
        self.kind
    }

    pub fn block(&self) -> &Array2<u32> {
        &self.block
    }

    pub fn pixel_weights(&self) -> Option<&PixelWeights> {
        self.pixel_weights.as_ref()
    }

    pub fn axis(&self) -> SamplingAxis {
        self.axis
    }

    /// Measurements produced per group (`m`).
    pub fn block_rows(&self) -> usize {
        self.block.nrows()
    }

    /// Source lines consumed per group (`b`).
    pub fn block_cols(&self) -> usize {
        self.block.ncols()
    }

    /// Euclidean norm of each block row, the constant that maps the
    /// front-end block to its unit-norm back-end counterpart.
    pub fn normalization(&self) -> Vec<f64> {
        self.block
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    /// Front-end block with every row divided by its norm.
    pub fn backend_block(&self) -> Array2<f64> {
        let norms = self.normalization();
        Array2::from_shape_fn(self.block.dim(), |(i, j)| f64::from(self.block[[i, j]]) / norms[i])
    }

    /// Bits needed for the largest sum an all-white `source_depth` image can produce.
    pub fn native_bit_depth(&self, source_depth: u8) -> u8 {
        let white = u64::from(image::max_sample(source_depth));
        match &self.pixel_weights {
            None => {
                let max_row = self
                    .block
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|&v| u64::from(v)).sum::<u64>())
                    .max()
                    .unwrap_or(0);
                bits_for(max_row * white)
            }
            Some(_) => {
                let rows = row_mode_spec(self);
                let dim = rows.pixel_weights.as_ref().map_or((0, 0), |p| p.weights.dim());
                let white = Array2::from_elem(dim, white as i64);
                let max = front_end_rows(&rows, &white).iter().copied().max().unwrap_or(0);
                bits_for(max.max(0) as u64)
            }
        }
    }
}

/// Applies the front-end block along rows of an integer grid.
///
/// With pixel weights the weighted sum is rescaled by `2^-frac_bits` with
/// round-half-up, the way a fixed-point datapath would.
pub(crate) fn front_end_rows(spec: &SamplingSpec, grid: &Array2<i64>) -> Array2<i64> {
    let (m, b) = spec.block.dim();
    let (h, w) = grid.dim();
    let groups = h / b;
    let mut out = Array2::<i64>::zeros((groups * m, w));
    for g in 0..groups {
        for i in 0..m {
            for c in 0..w {
                let mut acc = 0i64;
                for j in 0..b {
                    let coef = i64::from(spec.block[[i, j]]);
                    if coef == 0 {
                        continue;
                    }
                    let r = g * b + j;
                    let pw = spec.pixel_weights.as_ref().map_or(1, |p| i64::from(p.weights[[r, c]]));
                    acc += coef * pw * grid[[r, c]];
                }
                if let Some(p) = &spec.pixel_weights {
                    let shift = p.frac_bits;
                    if shift > 0 {
                        acc = (acc + (1 << (shift - 1))) >> shift;
                    }
                }
                out[[g * m + i, c]] = acc;
            }
        }
    }
    out
}

/// The measurement `Y`, stored as an integer image plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledImage {
    image: Image,
    truncated_bits: u8,
    spec: SamplingSpec,
    source_width: usize,
    source_height: usize,
}

impl SampledImage {
    pub fn new(
        image: Image,
        truncated_bits: u8,
        spec: SamplingSpec,
        source_width: usize,
        source_height: usize,
    ) -> Result<Self> {
        let (m, b) = spec.block.dim();
        let (exp_w, exp_h) = match spec.axis {
            SamplingAxis::Rows => (source_width, source_height * m / b),
            SamplingAxis::Columns => (source_width * m / b, source_height),
        };
        if image.width() != exp_w || image.height() != exp_h {
            return Err(Error::DimensionMismatch(format!(
                "measurement is {}x{}, spec implies {exp_w}x{exp_h}",
                image.width(),
                image.height()
            )));
        }
        Ok(SampledImage {
            image,
            truncated_bits,
            spec,
            source_width,
            source_height,
        })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn bit_depth(&self) -> u8 {
        self.image.bit_depth()
    }

    pub fn truncated_bits(&self) -> u8 {
        self.truncated_bits
    }

    pub fn spec(&self) -> &SamplingSpec {
        &self.spec
    }

    pub fn source_width(&self) -> usize {
        self.source_width
    }

    pub fn source_height(&self) -> usize {
        self.source_height
    }

    /// Drops `k` more least significant bits.
    pub fn truncate(&self, k: u8) -> Result<SampledImage> {
        Ok(SampledImage {
            image: image::truncate_lsbs(&self.image, k)?,
            truncated_bits: self.truncated_bits + k,
            ..self.clone()
        })
    }

    /// Replaces the measurement samples, e.g. with a decoded copy.
    pub fn with_image(&self, image: Image) -> Result<SampledImage> {
        SampledImage::new(
            image,
            self.truncated_bits,
            self.spec.clone(),
            self.source_width,
            self.source_height,
        )
    }
}

/// Samples an 8-bit image with the front-end block.
pub fn sample(img: &Image, spec: &SamplingSpec) -> Result<SampledImage> {
    if img.bit_depth() != 8 {
        return Err(Error::invalid(format!(
            "sensor input must be 8-bit, got {} bits",
            img.bit_depth()
        )));
    }
    let b = spec.block_cols();
    let grid = img.to_real().mapv(|v| v as i64);
    let grid = match spec.axis {
        SamplingAxis::Rows => grid,
        SamplingAxis::Columns => grid.reversed_axes().as_standard_layout().to_owned(),
    };
    let lines = grid.nrows();
    if lines % b != 0 {
        return Err(Error::invalid(format!(
            "{} source lines are not divisible by the block width {b}",
            lines
        )));
    }
    if let Some(pw) = &spec.pixel_weights {
        if pw.weights.dim() != (img.height(), img.width()) {
            return Err(Error::DimensionMismatch("pixel weights vs image".into()));
        }
    }
    let out = front_end_rows(&row_mode_spec(spec), &grid);
    let out = match spec.axis {
        SamplingAxis::Rows => out,
        SamplingAxis::Columns => out.reversed_axes().as_standard_layout().to_owned(),
    };
    let depth = spec.native_bit_depth(8);
    let (h, w) = out.dim();
    let samples = out.iter().map(|&v| v as u16).collect();
    let image = Image::new(w, h, depth, samples)?;
    SampledImage::new(image, 0, spec.clone(), img.width(), img.height())
}

/// Row-mode equivalent of a spec (column-mode pixel weights transposed).
pub(crate) fn row_mode_spec(spec: &SamplingSpec) -> SamplingSpec {
    let mut s = spec.clone();
    if s.axis == SamplingAxis::Columns {
        s.axis = SamplingAxis::Rows;
        if let Some(pw) = &mut s.pixel_weights {
            pw.weights = pw.weights.t().as_standard_layout().to_owned();
        }
    }
    s
}

/// Full block-diagonal matrix for `n_rows` source rows.
pub fn expand_block_diagonal(block: &Array2<u32>, n_rows: usize) -> Result<Array2<u32>> {
    let (m, b) = block.dim();
    if b == 0 || n_rows % b != 0 {
        return Err(Error::invalid(format!(
            "{n_rows} rows not divisible by block width {b}"
        )));
    }
    let groups = n_rows / b;
    let mut full = Array2::zeros((groups * m, n_rows));
    for g in 0..groups {
        full.slice_mut(ndarray::s![g * m..(g + 1) * m, g * b..(g + 1) * b])
            .assign(block);
    }
    Ok(full)
}

/// Raw-data reduction relative to reading out two 8-bit pixels (16 bits).
pub fn onchip_compression(bit_depth: u8) -> Result<f64> {
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::invalid(format!("bit depth {bit_depth} outside [1, 16]")));
    }
    Ok(f64::from(16 - bit_depth) / 16.0 * 100.0)
}

/// Splits a block into a point downsampler `R` and a circulant low-pass `Lp`
/// such that `R * Lp` equals the block.
///
/// Only blocks whose rows are shifts of the first row by `b/m` are supported.
pub fn factorize_lowpass(block: &Array2<u32>) -> Result<(Array2<u32>, Array2<u32>)> {
    let (m, b) = block.dim();
    if m == 0 || b % m != 0 {
        return Err(Error::invalid("block shape does not decimate evenly"));
    }
    let step = b / m;
    let first = block.row(0);
    let circulant = Array2::from_shape_fn((b, b), |(i, j)| first[(j + b - i) % b]);
    let decimator = Array2::from_shape_fn((m, b), |(i, j)| u32::from(j == i * step));
    if decimator.dot(&circulant) != *block {
        return Err(Error::invalid("block rows are not shifted copies of a single filter"));
    }
    Ok((decimator, circulant))
}

/// Mutual coherence `sqrt(N) * max |<phi_k, psi_j>|` between the rows of a
/// sampling matrix and the columns of an orthonormal basis.
pub fn coherence(phi: &Array2<f64>, psi: &Array2<f64>) -> Result<f64> {
    let n = psi.nrows();
    if psi.ncols() != n || phi.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "phi {:?} vs psi {:?}",
            phi.dim(),
            psi.dim()
        )));
    }
    let gram = psi.t().dot(psi);
    let off = gram
        .indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if off > 1e-8 {
        return Err(Error::invalid(format!("basis is not orthonormal (deviation {off:e})")));
    }
    let inner = phi.dot(psi);
    let max = inner.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((n as f64).sqrt() * max)
}

/// Serialises a measurement as raw + sidecar, recording how it was produced.
pub fn save_sampled(sampled: &SampledImage, path: &Path) -> Result<()> {
    let spec = &sampled.spec;
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), spec.kind.to_string());
    meta.insert("truncated_bits".into(), sampled.truncated_bits.to_string());
    meta.insert("source_width".into(), sampled.source_width.to_string());
    meta.insert("source_height".into(), sampled.source_height.to_string());
    meta.insert(
        "axis".into(),
        match spec.axis {
            SamplingAxis::Rows => "rows",
            SamplingAxis::Columns => "columns",
        }
        .into(),
    );
    let rows: Vec<String> = spec
        .block
        .rows()
        .into_iter()
        .map(|r| r.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
        .collect();
    meta.insert("block".into(), rows.join(";"));
    if let Some(pw) = &spec.pixel_weights {
        let (h, w) = pw.weights.dim();
        let max = pw.weights.iter().copied().max().unwrap_or(1);
        if max > u32::from(u16::MAX) {
            return Err(Error::invalid("pixel weights exceed 16 bits"));
        }
        let samples = pw.weights.iter().map(|&v| v as u16).collect();
        let wimg = Image::new(w, h, 16, samples)?;
        let wpath = weights_path(path);
        image::save_raw(&wimg, &wpath, &BTreeMap::new())?;
        meta.insert("pixel_weight_frac_bits".into(), pw.frac_bits.to_string());
    }
    image::save_raw(&sampled.image, path, &meta)
}

fn weights_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".weights");
    name.into()
}

/// Reads a measurement written by [`save_sampled`].
pub fn load_sampled(path: &Path) -> Result<SampledImage> {
    let (img, meta) = image::load_raw(path)?;
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::MalformedHeader(format!("sidecar missing {k}")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("sidecar {k} is not an integer")))
    };
    let kind: SamplingKind = get("kind")?.parse()?;
    let mut rows = Vec::new();
    for row in get("block")?.split(';') {
        let vals: std::result::Result<Vec<u32>, _> = row.split(',').map(str::parse).collect();
        rows.push(vals.map_err(|_| Error::MalformedHeader("block entries".into()))?);
    }
    let (m, b) = (rows.len(), rows.first().map_or(0, Vec::len));
    if rows.iter().any(|r| r.len() != b) {
        return Err(Error::MalformedHeader("ragged block".into()));
    }
    let block =
        Array2::from_shape_vec((m, b), rows.concat()).map_err(|_| Error::MalformedHeader("block shape".into()))?;
    let mut spec = match kind {
        SamplingKind::Custom => SamplingSpec::custom(block)?,
        k => {
            let s = SamplingSpec::of_kind(k)?;
            if s.block != block {
                return Err(Error::MalformedHeader(format!("block does not match kind {k}")));
            }
            s
        }
    };
    if let Some(bits) = meta.get("pixel_weight_frac_bits") {
        let bits: u8 = bits
            .parse()
            .map_err(|_| Error::MalformedHeader("pixel_weight_frac_bits".into()))?;
        let (wimg, _) = image::load_raw(&weights_path(path))?;
        let weights = wimg.to_real().mapv(|v| v as u32);
        spec = spec.with_pixel_weights(PixelWeights::new(bits, weights)?);
    }
    if meta.get("axis").map(String::as_str) == Some("columns") {
        spec = spec.with_axis(SamplingAxis::Columns);
    }
    let truncated: u8 = parse_usize("truncated_bits")? as u8;
    SampledImage::new(
        img,
        truncated,
        spec,
        parse_usize("source_width")?,
        parse_usize("source_height")?,
    )
}

/// Dense oracle helper: the `(rows·m/b) x rows` matrix applied to every column.
#[doc(hidden)]
pub fn dense_sample(block: &Array2<u32>, grid: &Array2<i64>) -> Result<Array2<i64>> {
    let full = expand_block_diagonal(block, grid.nrows())?.mapv(i64::from);
    Ok(full.dot(grid))
}
