//! Behavioural model of the weighted-addition pixel.
//!
//! Covers the photodiode junction capacitance, the fitted quadratic response
//! of the two-photodiode pixel, recovery of the effective weight by least
//! squares, fixed-pattern-noise injection and correlated double sampling.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{self, Image};
use crate::sampler::{PixelWeights, SamplingSpec};

/// Photocurrent range (fA) over which the response fit is valid.
pub const FIT_RANGE_FA: (f64, f64) = (0.0, 1000.0);

/// Fractional bits used when gains are folded into the sampling matrix.
pub const CALIBRATION_FRAC_BITS: u8 = 8;

/// Junction parameters of an n+/p-sub photodiode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotodiodeParams {
    /// Zero-bias bottom capacitance density, mF/m².
    pub c_j0: f64,
    /// Zero-bias sidewall capacitance per length, F/m.
    pub c_j0sw: f64,
    /// Bottom built-in potential, V.
    pub v_j: f64,
    /// Sidewall built-in potential, V.
    pub v_jsw: f64,
    pub m: f64,
    pub m_jsw: f64,
    /// Reverse-bias magnitude, V.
    pub v_d: f64,
    /// Area, µm².
    pub a_d: f64,
    /// Perimeter, µm.
    pub p_d: f64,
}

impl PhotodiodeParams {
    /// The 200 nm n+/p-sub diode used for the pixel design.
    pub fn reference_design() -> Self {
        PhotodiodeParams {
            c_j0: 1.067,
            c_j0sw: 1.6e-10,
            v_j: 0.8,
            v_jsw: 0.65,
            m: 0.41,
            m_jsw: 0.35,
            v_d: 1.8,
            a_d: 45.76,
            p_d: 27.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("C_j0", self.c_j0),
            ("C_j0sw", self.c_j0sw),
            ("v_j", self.v_j),
            ("v_jsw", self.v_jsw),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("m", self.m), ("m_jsw", self.m_jsw)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("grading coefficient {name}={v} outside (0,1)")));
            }
        }
        for (name, v) in [("V_d", self.v_d), ("A_D", self.a_d), ("P_D", self.p_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines named after the parameter table columns
    /// (`C_j0 C_j0sw v_j v_jsw m m_jsw V_d A_D P_D`). `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{} is not a number", v.trim())))?;
            if map.insert(k.trim().to_string(), v).is_some() {
                return Err(Error::Config(format!("duplicate key {}", k.trim())));
            }
        }
        let mut take = |k: &str| {
            map.remove(k)
                .ok_or_else(|| Error::Config(format!("missing photodiode parameter {k}")))
        };
        let params = PhotodiodeParams {
            c_j0: take("C_j0")?,
            c_j0sw: take("C_j0sw")?,
            v_j: take("v_j")?,
            v_jsw: take("v_jsw")?,
            m: take("m")?,
            m_jsw: take("m_jsw")?,
            v_d: take("V_d")?,
            a_d: take("A_D")?,
            p_d: take("P_D")?,
        };
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(format!("unknown photodiode parameter {k}")));
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}

/// Depletion capacitance in fF, bottom plus sidewall.
///
/// `v_d` is a reverse-bias magnitude, so both grading denominators are
/// `(1 + v_d / v_built_in)^grading`.
pub fn junction_capacitance(params: &PhotodiodeParams) -> Result<f64> {
    params.validate()?;
    let area_m2 = params.a_d * 1e-12;
    let perimeter_m = params.p_d * 1e-6;
    let bottom = params.c_j0 * 1e-3 * area_m2 / (1.0 + params.v_d / params.v_j).powf(params.m);
    let sidewall = params.c_j0sw * perimeter_m / (1.0 + params.v_d / params.v_jsw).powf(params.m_jsw);
    Ok((bottom + sidewall) * 1e15)
}

/// Quadratic output-voltage surface over two photocurrents.
///
/// Coefficient order: `[1, p1, p2, p1², p1·p2, p2²]`, photocurrents in fA,
/// output in V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResponseModel {
    coeffs: [f64; 6],
}

impl PixelResponseModel {
    pub fn new(coeffs: [f64; 6]) -> Result<Self> {
        if coeffs[0] <= 0.0 {
            return Err(Error::invalid("response offset must be positive"));
        }
        if coeffs[1] >= 0.0 || coeffs[2] >= 0.0 {
            return Err(Error::invalid("output must drop with photocurrent"));
        }
        Ok(PixelResponseModel { coeffs })
    }

    /// Curve fit of the simulated weighted-addition pixel.
    pub fn fitted() -> Self {
        PixelResponseModel {
            coeffs: [1.037, -4.065e-5, -3.324e-5, -2.564e-9, -3.88e-9, -1.678e-9],
        }
    }

    pub fn coeffs(&self) -> [f64; 6] {
        self.coeffs
    }
}

fn monomials(p1: f64, p2: f64) -> [f64; 6] {
    [1.0, p1, p2, p1 * p1, p1 * p2, p2 * p2]
}

/// Output voltage for photocurrents `p1`, `p2` (fA).
pub fn pixel_response(p1: f64, p2: f64, model: &PixelResponseModel) -> f64 {
    let (lo, hi) = FIT_RANGE_FA;
    if !(lo..=hi).contains(&p1) || !(lo..=hi).contains(&p2) {
        log::warn!("photocurrents ({p1}, {p2}) fA outside the fitted range; extrapolating");
    }
    monomials(p1, p2).iter().zip(&model.coeffs).map(|(x, c)| x * c).sum()
}

/// One point of the photocurrent sweep, with the dark offset removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSample {
    pub p1: f64,
    pub p2: f64,
    /// Output drop below the dark level, V (positive).
    pub drop: f64,
}

/// 10 x 10 sweep of both photocurrents over 100..=1000 fA in 100 fA steps.
pub fn simulate_weight_grid(model: &PixelResponseModel) -> Vec<WeightSample> {
    let dark = pixel_response(0.0, 0.0, model);
    let steps: Vec<f64> = (1..=10).map(|k| f64::from(k) * 100.0).collect();
    let mut out = Vec::with_capacity(100);
    for &p1 in &steps {
        for &p2 in &steps {
            out.push(WeightSample {
                p1,
                p2,
                drop: dark - pixel_response(p1, p2, model),
            });
        }
    }
    out
}

/// Result of [`fit_weight`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFit {
    /// Quadratic coefficients of the drop surface, same order as [`PixelResponseModel`].
    pub coeffs: [f64; 6],
    /// Ratio of the linear sensitivities, `|c_p1| / |c_p2|`.
    pub weight: f64,
}

/// Least-squares fit of the six-term quadratic to sweep samples.
pub fn fit_weight(samples: &[WeightSample]) -> Result<WeightFit> {
    if samples.len() < 6 {
        return Err(Error::RankDeficient {
            rank: samples.len(),
            needed: 6,
        });
    }
    // scale currents to O(1) so the normal matrix stays well conditioned
    let scale = samples
        .iter()
        .map(|s| s.p1.abs().max(s.p2.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let a = DMatrix::from_fn(samples.len(), 6, |i, j| {
        monomials(samples[i].p1 / scale, samples[i].p2 / scale)[j]
    });
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.drop));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 6 {
        return Err(Error::RankDeficient { rank, needed: 6 });
    }
    let x = svd
        .solve(&b, tol)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    let powers = [0, 1, 1, 2, 2, 2];
    let mut coeffs = [0.0; 6];
    for (k, c) in coeffs.iter_mut().enumerate() {
        *c = x[k] / scale.powi(powers[k]);
    }
    if coeffs[2] == 0.0 {
        return Err(Error::invalid("second photodiode shows no linear response"));
    }
    Ok(WeightFit {
        coeffs,
        weight: coeffs[1].abs() / coeffs[2].abs(),
    })
}

/// Fixed-pattern-noise injection settings. All zero means no noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpnConfig {
    /// Per-column additive offset, in digital numbers.
    pub column_offset_sigma: f64,
    /// Per-pixel relative gain deviation.
    pub pixel_gain_sigma: f64,
    pub seed: u64,
}

impl Default for FpnConfig {
    fn default() -> Self {
        FpnConfig {
            column_offset_sigma: 0.0,
            pixel_gain_sigma: 0.0,
            seed: 0,
        }
    }
}

impl FpnConfig {
    pub fn is_active(&self) -> bool {
        self.column_offset_sigma > 0.0 || self.pixel_gain_sigma > 0.0
    }
}

fn normal(mean: f64, sigma: f64, what: &str) -> Result<Normal<f64>> {
    Normal::new(mean, sigma).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// Applies Gaussian pixel gain and column offset mismatch.
///
/// Returns the noisy image and the `height x width` gain map. Gains are drawn
/// row-major first, then one offset per column.
pub fn apply_fpn(img: &Image, cfg: &FpnConfig) -> Result<(Image, Array2<f64>)> {
    if !(cfg.column_offset_sigma >= 0.0 && cfg.pixel_gain_sigma >= 0.0) {
        return Err(Error::invalid("FPN sigmas must be non-negative"));
    }
    let (h, w) = (img.height(), img.width());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gain_dist = normal(1.0, cfg.pixel_gain_sigma, "pixel gain")?;
    let offset_dist = normal(0.0, cfg.column_offset_sigma, "column offset")?;
    let gains = Array2::from_shape_simple_fn((h, w), || {
        if cfg.pixel_gain_sigma > 0.0 {
            gain_dist.sample(&mut rng)
        } else {
            1.0
        }
    });
    let offsets: Vec<f64> = (0..w)
        .map(|_| {
            if cfg.column_offset_sigma > 0.0 {
                offset_dist.sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let max = f64::from(image::max_sample(img.bit_depth()));
    let noisy = Image::from_fn(w, h, img.bit_depth(), |r, c| {
        let v = gains[[r, c]] * f64::from(img.get(r, c)) + offsets[c];
        v.round().clamp(0.0, max) as u16
    })?;
    Ok((noisy, gains))
}

/// Folds a measured gain map into the sampling matrix.
///
/// The back-end rows of the result are proportional to `block ⊙ gain` and
/// renormalised to unit length during reconstruction.
pub fn calibrated_spec(base: &SamplingSpec, gains: &Array2<f64>) -> Result<SamplingSpec> {
    let one = f64::from(1u32 << CALIBRATION_FRAC_BITS);
    let mut weights = Array2::<u32>::zeros(gains.dim());
    for (dst, &g) in weights.iter_mut().zip(gains.iter()) {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::invalid(format!("gain {g} is not positive")));
        }
        let q = (g * one).round();
        if q < 1.0 || q > f64::from(u16::MAX) {
            return Err(Error::invalid(format!(
                "gain {g} not representable in Q{CALIBRATION_FRAC_BITS}"
            )));
        }
        *dst = q as u32;
    }
    let block = base.block().clone();
    let spec = SamplingSpec::custom(block)?.with_axis(base.axis());
    Ok(spec.with_pixel_weights(PixelWeights::new(CALIBRATION_FRAC_BITS, weights)?))
}

/// Correlated double sampling: `reset - signal`, clamped at zero.
pub fn cds(reset_frame: &Image, signal_frame: &Image) -> Result<Image> {
    if reset_frame.width() != signal_frame.width() || reset_frame.height() != signal_frame.height() {
        return Err(Error::DimensionMismatch("reset and signal frames differ".into()));
    }
    let samples = reset_frame
        .samples()
        .iter()
        .zip(signal_frame.samples())
        .map(|(&r, &s)| r.saturating_sub(s))
        .collect();
    Image::new(
        reset_frame.width(),
        reset_frame.height(),
        reset_frame.bit_depth().max(signal_frame.bit_depth()),
        samples,
    )
}
