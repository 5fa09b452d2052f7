//! Sparsity bases: separable DWT (CDF 9/7 or Daubechies-4) and the 2-D
//! dual-tree DWT, plus hard thresholding and a robust noise estimate.
//!
//! The CDF 9/7 path uses whole-point symmetric extension. The orthogonal
//! banks (Daubechies-4 and the dual-tree filters) use periodic extension,
//! which keeps them exactly orthonormal so their inverse is the adjoint.

mod filters;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{self, Image};
use filters::{analyze_axis, synthesize_axis, FilterBank, Kernel};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Which transform produced a [`SubbandSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Cdf97,
    Daubechies4,
    DualTree,
}

/// Filter family for the separable DWT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DwtFilter {
    #[default]
    Cdf97,
    /// Orthogonal, so coefficient energy equals image energy.
    Daubechies4,
}

/// Orientation tag of a detail subband.
///
/// The separable tags name the vertical filter first: `LowHigh` is lowpass
/// down the columns and highpass along the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    LowHigh,
    HighLow,
    HighHigh,
    /// Dominant line direction in degrees, counter-clockwise from the
    /// horizontal with the row axis pointing down.
    Degrees(i16),
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::LowHigh => f.write_str("LH"),
            Orientation::HighLow => f.write_str("HL"),
            Orientation::HighHigh => f.write_str("HH"),
            Orientation::Degrees(d) => write!(f, "{d:+}deg"),
        }
    }
}

/// Tree tag: separable transforms have a single tree, dual-tree subbands are
/// the real or imaginary part of a complex subband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tree {
    Single,
    Real,
    Imag,
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tree::Single => "single",
            Tree::Real => "real",
            Tree::Imag => "imag",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    /// 1 is the finest scale.
    pub level: usize,
    pub orientation: Orientation,
    pub tree: Tree,
    pub data: Array2<f64>,
}

/// Wavelet coefficients of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    kind: TransformKind,
    rows: usize,
    cols: usize,
    levels: usize,
    approx: Vec<Array2<f64>>,
    details: Vec<Subband>,
}

impl SubbandSet {
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Shape `(rows, cols)` of the transformed image.
    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Coarsest lowpass band(s); one per tree combination for the dual tree.
    pub fn approx(&self) -> &[Array2<f64>] {
        &self.approx
    }

    pub fn details(&self) -> &[Subband] {
        &self.details
    }

    pub fn details_mut(&mut self) -> &mut [Subband] {
        &mut self.details
    }

    pub fn details_at(&self, level: usize) -> impl Iterator<Item = &Subband> {
        self.details.iter().filter(move |b| b.level == level)
    }

    pub fn coefficient_count(&self) -> usize {
        self.approx.iter().map(|a| a.len()).sum::<usize>() + self.details.iter().map(|b| b.data.len()).sum::<usize>()
    }

    /// Coefficients per pixel: 1 for the DWT, 4 for the 2-D dual tree.
    pub fn redundancy(&self) -> usize {
        self.coefficient_count() / (self.rows * self.cols)
    }

    pub fn energy(&self) -> f64 {
        self.approx
            .iter()
            .flat_map(|a| a.iter())
            .chain(self.details.iter().flat_map(|b| b.data.iter()))
            .map(|v| v * v)
            .sum()
    }

    /// All coefficients, approximation bands first, in storage order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.approx
            .iter()
            .flat_map(|a| a.iter().copied())
            .chain(self.details.iter().flat_map(|b| b.data.iter().copied()))
            .collect()
    }
}

fn check_levels(rows: usize, cols: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("decomposition depth must be at least 1"));
    }
    let step = 1usize
        .checked_shl(levels as u32)
        .filter(|s| *s <= rows && *s <= cols)
        .ok_or_else(|| Error::DimensionMismatch(format!("{rows}x{cols} too small for {levels} levels")))?;
    if rows % step != 0 || cols % step != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{rows}x{cols} not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

/// Default depth: `log2(min dimension) - 4`, at least 1 and no deeper than
/// the dimensions allow.
pub fn default_levels(rows: usize, cols: usize) -> usize {
    let m = rows.min(cols).max(1);
    let by_size = (m.ilog2() as usize).saturating_sub(4).max(1);
    let by_div = rows.trailing_zeros().min(cols.trailing_zeros()) as usize;
    by_size.min(by_div).max(1)
}

/// One 2-D analysis stage: vertical kernel first, then horizontal.
/// Returns `(LL, [LH, HL, HH])`.
fn analyze_2d(x: &Array2<f64>, vert: Kernel, horiz: Kernel) -> (Array2<f64>, [Array2<f64>; 3]) {
    let (l, h) = analyze_axis(x, Axis(0), vert);
    let (ll, lh) = analyze_axis(&l, Axis(1), horiz);
    let (hl, hh) = analyze_axis(&h, Axis(1), horiz);
    (ll, [lh, hl, hh])
}

fn synthesize_2d(ll: &Array2<f64>, d: [&Array2<f64>; 3], vert: Kernel, horiz: Kernel) -> Array2<f64> {
    let l = synthesize_axis(ll, d[0], Axis(1), horiz);
    let h = synthesize_axis(d[1], d[2], Axis(1), horiz);
    synthesize_axis(&l, &h, Axis(0), vert)
}

const SEPARABLE: [Orientation; 3] = [Orientation::LowHigh, Orientation::HighLow, Orientation::HighHigh];

/// Separable DWT with the default CDF 9/7 filters.
pub fn dwt_forward(img: &Array2<f64>, levels: usize) -> Result<SubbandSet> {
    dwt_forward_with(img, levels, DwtFilter::Cdf97)
}

pub fn dwt_forward_with(img: &Array2<f64>, levels: usize, filter: DwtFilter) -> Result<SubbandSet> {
    let (rows, cols) = img.dim();
    check_levels(rows, cols, levels)?;
    let (kernel, kind) = match filter {
        DwtFilter::Cdf97 => (Kernel::Cdf97, TransformKind::Cdf97),
        DwtFilter::Daubechies4 => (Kernel::Bank(filters::daubechies4()), TransformKind::Daubechies4),
    };
    let mut lo = img.clone();
    let mut details = Vec::with_capacity(3 * levels);
    for level in 1..=levels {
        let (ll, bands) = analyze_2d(&lo, kernel, kernel);
        for (data, orientation) in bands.into_iter().zip(SEPARABLE) {
            details.push(Subband {
                level,
                orientation,
                tree: Tree::Single,
                data,
            });
        }
        lo = ll;
    }
    Ok(SubbandSet {
        kind,
        rows,
        cols,
        levels,
        approx: vec![lo],
        details,
    })
}

fn check_layout(set: &SubbandSet, per_level: usize, approx: usize) -> Result<()> {
    if set.details.len() != per_level * set.levels || set.approx.len() != approx {
        return Err(Error::DimensionMismatch(
            "subband layout does not match transform".into(),
        ));
    }
    Ok(())
}

pub fn dwt_inverse(set: &SubbandSet) -> Result<Array2<f64>> {
    let kernel = match set.kind {
        TransformKind::Cdf97 => Kernel::Cdf97,
        TransformKind::Daubechies4 => Kernel::Bank(filters::daubechies4()),
        TransformKind::DualTree => return Err(Error::invalid("dual-tree coefficients passed to dwt_inverse")),
    };
    check_layout(set, 3, 1)?;
    let mut lo = set.approx[0].clone();
    for level in (1..=set.levels).rev() {
        let b = &set.details[3 * (level - 1)..3 * level];
        lo = synthesize_2d(&lo, [&b[0].data, &b[1].data, &b[2].data], kernel, kernel);
    }
    Ok(lo)
}

/// Tree combinations `(vertical tree, horizontal tree)` in storage order.
const TREE_PAIRS: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

/// Labels of the dual-tree bands in storage order: for each separable
/// position (LH, HL, HH) the sum and difference of trees (a,a)/(b,b) (real
/// parts) then of (a,b)/(b,a) (imaginary parts). Angles were measured with
/// oriented gratings (see the orientation tests).
const DUAL_TREE_LABELS: [[(i16, Tree); 4]; 3] = [
    [(75, Tree::Real), (-75, Tree::Real), (-75, Tree::Imag), (75, Tree::Imag)],
    [(15, Tree::Real), (-15, Tree::Real), (-15, Tree::Imag), (15, Tree::Imag)],
    [(-45, Tree::Real), (45, Tree::Real), (45, Tree::Imag), (-45, Tree::Imag)],
];
fn tree_banks(level: usize) -> &'static [FilterBank; 2] {
    if level == 1 {
        filters::first_stage()
    } else {
        filters::qshift()
    }
}

/// 2-D dual-tree DWT: four separable trees combined into six oriented
/// subbands per level, each with a real and an imaginary part.
pub fn ddwt_forward(img: &Array2<f64>, levels: usize) -> Result<SubbandSet> {
    let (rows, cols) = img.dim();
    check_levels(rows, cols, levels)?;
    let x = img * 0.5;
    let trees: Vec<(Array2<f64>, Vec<[Array2<f64>; 3]>)> = TREE_PAIRS
        .par_iter()
        .map(|&(ti, tj)| {
            let mut lo = x.clone();
            let mut per_level = Vec::with_capacity(levels);
            for level in 1..=levels {
                let banks = tree_banks(level);
                let (ll, d) = analyze_2d(&lo, Kernel::Bank(&banks[ti]), Kernel::Bank(&banks[tj]));
                per_level.push(d);
                lo = ll;
            }
            (lo, per_level)
        })
        .collect();
    let mut details = Vec::with_capacity(12 * levels);
    for level in 1..=levels {
        for (d, labels) in DUAL_TREE_LABELS.iter().enumerate() {
            let t = |k: usize| &trees[k].1[level - 1][d];
            let bands = [
                (t(0) + t(1)) * FRAC_1_SQRT_2,
                (t(0) - t(1)) * FRAC_1_SQRT_2,
                (t(2) + t(3)) * FRAC_1_SQRT_2,
                (t(2) - t(3)) * FRAC_1_SQRT_2,
            ];
            for (data, &(deg, tree)) in bands.into_iter().zip(labels) {
                details.push(Subband {
                    level,
                    orientation: Orientation::Degrees(deg),
                    tree,
                    data,
                });
            }
        }
    }
    Ok(SubbandSet {
        kind: TransformKind::DualTree,
        rows,
        cols,
        levels,
        approx: trees.into_iter().map(|t| t.0).collect(),
        details,
    })
}

pub fn ddwt_inverse(set: &SubbandSet) -> Result<Array2<f64>> {
    if set.kind != TransformKind::DualTree {
        return Err(Error::invalid("separable coefficients passed to ddwt_inverse"));
    }
    check_layout(set, 12, 4)?;
    // undo the sum/difference rotation, which is its own inverse
    let mut per_tree: Vec<Vec<[Array2<f64>; 3]>> = vec![Vec::with_capacity(set.levels); 4];
    for level in 1..=set.levels {
        let base = 12 * (level - 1);
        let mut split: [Vec<Array2<f64>>; 4] = Default::default();
        for d in 0..3 {
            let b = |c: usize| &set.details[base + 4 * d + c].data;
            split[0].push((b(0) + b(1)) * FRAC_1_SQRT_2);
            split[1].push((b(0) - b(1)) * FRAC_1_SQRT_2);
            split[2].push((b(2) + b(3)) * FRAC_1_SQRT_2);
            split[3].push((b(2) - b(3)) * FRAC_1_SQRT_2);
        }
        for (dst, bands) in per_tree.iter_mut().zip(split) {
            let [lh, hl, hh]: [Array2<f64>; 3] = bands.try_into().expect("three bands");
            dst.push([lh, hl, hh]);
        }
    }
    let parts: Vec<Array2<f64>> = TREE_PAIRS
        .par_iter()
        .enumerate()
        .map(|(k, &(ti, tj))| {
            let mut lo = set.approx[k].clone();
            for level in (1..=set.levels).rev() {
                let banks = tree_banks(level);
                let d = &per_tree[k][level - 1];
                lo = synthesize_2d(
                    &lo,
                    [&d[0], &d[1], &d[2]],
                    Kernel::Bank(&banks[ti]),
                    Kernel::Bank(&banks[tj]),
                );
            }
            lo
        })
        .collect();
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out += p;
    }
    out *= 0.5;
    Ok(out)
}

/// Sparsity basis used by reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Basis {
    Dwt,
    #[default]
    Ddwt,
}

impl Basis {
    pub fn forward(self, img: &Array2<f64>, levels: usize) -> Result<SubbandSet> {
        match self {
            Basis::Dwt => dwt_forward(img, levels),
            Basis::Ddwt => ddwt_forward(img, levels),
        }
    }

    pub fn inverse(self, set: &SubbandSet) -> Result<Array2<f64>> {
        match self {
            Basis::Dwt => dwt_inverse(set),
            Basis::Ddwt => ddwt_inverse(set),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Dwt => "dwt",
            Basis::Ddwt => "ddwt",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dwt" => Ok(Basis::Dwt),
            "ddwt" => Ok(Basis::Ddwt),
            _ => Err(Error::invalid(format!("unknown basis {s:?} (expected dwt or ddwt)"))),
        }
    }
}

fn level_threshold(tau: &[f64], level: usize) -> f64 {
    if tau.len() == 1 {
        tau[0]
    } else {
        tau[level - 1]
    }
}

fn check_tau(set: &SubbandSet, tau: &[f64]) -> Result<()> {
    if tau.len() != 1 && tau.len() != set.levels {
        return Err(Error::invalid(format!(
            "expected 1 or {} thresholds, got {}",
            set.levels,
            tau.len()
        )));
    }
    if tau.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::invalid("thresholds must be non-negative"));
    }
    Ok(())
}

/// Zeroes detail coefficients with `|c| < tau[level - 1]`. A single-entry
/// `tau` applies to every level. The approximation bands are left alone.
pub fn hard_threshold(coeffs: &SubbandSet, tau: &[f64]) -> Result<SubbandSet> {
    let mut out = coeffs.clone();
    hard_threshold_in_place(&mut out, tau)?;
    Ok(out)
}

pub fn hard_threshold_in_place(coeffs: &mut SubbandSet, tau: &[f64]) -> Result<()> {
    check_tau(coeffs, tau)?;
    for band in &mut coeffs.details {
        let t = level_threshold(tau, band.level);
        band.data.mapv_inplace(|c| if c.abs() < t { 0.0 } else { c });
    }
    Ok(())
}

/// Median absolute deviation estimate of the noise scale from the finest
/// detail subbands: `median(|c|) / 0.6745`.
pub fn estimate_sigma(coeffs: &SubbandSet) -> Result<f64> {
    let mut mags: Vec<f64> = coeffs
        .details_at(1)
        .flat_map(|b| b.data.iter().map(|v| v.abs()))
        .collect();
    if mags.is_empty() {
        return Err(Error::invalid("no finest-level detail coefficients"));
    }
    let mid = mags.len() / 2;
    let (_, upper, _) = mags.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if mags.len() % 2 == 1 {
        upper
    } else {
        let lower = mags[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(median / 0.6745)
}

/// Writes every band as a 16-bit raw image with a sidecar carrying the tag
/// and the affine map back to coefficient values (`value = offset + scale * sample`).
pub fn dump_subbands(coeffs: &SubbandSet, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let tagged = coeffs
        .approx
        .iter()
        .enumerate()
        .map(|(k, a)| {
            (
                format!("approx{k}"),
                coeffs.levels,
                "approx".to_string(),
                "-".to_string(),
                a,
            )
        })
        .chain(coeffs.details.iter().enumerate().map(|(k, b)| {
            (
                format!("band{k:03}"),
                b.level,
                b.orientation.to_string(),
                b.tree.to_string(),
                &b.data,
            )
        }));
    for (name, level, orientation, tree, data) in tagged {
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
        let img = Image::from_fn(data.ncols(), data.nrows(), 16, |r, c| {
            ((data[[r, c]] - lo) / scale).round() as u16
        })?;
        let extras = BTreeMap::from([
            ("level".to_string(), level.to_string()),
            ("orientation".to_string(), orientation),
            ("tree".to_string(), tree),
            ("offset".to_string(), lo.to_string()),
            ("scale".to_string(), scale.to_string()),
        ]);
        let path = dir.join(format!("{name}.raw"));
        image::save_raw(&img, &path, &extras)?;
        written.push(path);
    }
    Ok(written)
}
