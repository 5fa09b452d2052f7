//! Python bindings for the on-sensor compressed sampling simulator.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use onsensor_cs::codec::{self, CodecMode, CodedImage};
use onsensor_cs::image::{self as img, Format, Psnr};
use onsensor_cs::pipeline::{self, PipelineConfig, PowerModel, RunReport};
use onsensor_cs::pixel::{self, PhotodiodeParams, PixelResponseModel};
use onsensor_cs::reconstruct::{spl_reconstruct, SplConfig};
use onsensor_cs::sampler::{self, SamplingKind, SamplingSpec};
use onsensor_cs::transforms::Basis;

create_exception!(onsensor_cs, OnsensorError, PyException);

fn err(e: onsensor_cs::Error) -> PyErr {
    match e {
        onsensor_cs::Error::InvalidArgument(_) | onsensor_cs::Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => OnsensorError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("invalid {what}: {s:?}")))
}

fn psnr_value(p: Psnr) -> f64 {
    p.db().unwrap_or(f64::INFINITY)
}

/// Grayscale image with an explicit bit depth.
#[pyclass(name = "Image", module = "onsensor_cs", skip_from_py_object)]
#[derive(Clone)]
struct PyImage(img::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, bit_depth: u8, samples: Vec<u16>) -> PyResult<Self> {
        img::Image::new(width, height, bit_depth, samples)
            .map(PyImage)
            .map_err(err)
    }

    /// Loads an 8-bit PGM, or a raw file with its sidecar.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let format = Format::from_path(&path).unwrap_or(Format::Pgm8);
        img::load_image(&path, format).map(PyImage).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let format = Format::from_path(&path).unwrap_or(Format::Pgm8);
        img::save_image(&self.0, &path, format).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn bit_depth(&self) -> u8 {
        self.0.bit_depth()
    }

    /// Row-major samples.
    fn samples(&self) -> Vec<u16> {
        self.0.samples().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<u16> {
        if row >= self.0.height() || col >= self.0.width() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.0.get(row, col))
    }

    fn truncate_lsbs(&self, k: u8) -> PyResult<Self> {
        img::truncate_lsbs(&self.0, k).map(PyImage).map_err(err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}, {}-bit)",
            self.0.width(),
            self.0.height(),
            self.0.bit_depth()
        )
    }
}

/// Sensor output: measurements plus the sampling spec that produced them.
#[pyclass(name = "SampledImage", module = "onsensor_cs", skip_from_py_object)]
#[derive(Clone)]
struct PySampled(sampler::SampledImage);

#[pymethods]
impl PySampled {
    #[getter]
    fn image(&self) -> PyImage {
        PyImage(self.0.image().clone())
    }

    #[getter]
    fn bit_depth(&self) -> u8 {
        self.0.bit_depth()
    }

    #[getter]
    fn truncated_bits(&self) -> u8 {
        self.0.truncated_bits()
    }

    #[getter]
    fn kind(&self) -> String {
        self.0.spec().kind().to_string()
    }

    /// Drops `k` more LSBs.
    fn truncate(&self, k: u8) -> PyResult<Self> {
        self.0.truncate(k).map(PySampled).map_err(err)
    }

    /// Same sampling metadata with the measurement image replaced, e.g. by a decoded one.
    fn with_image(&self, image: &PyImage) -> PyResult<Self> {
        self.0.with_image(image.0.clone()).map(PySampled).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        sampler::save_sampled(&self.0, &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        sampler::load_sampled(&path).map(PySampled).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "SampledImage({}, {}x{}, {}-bit)",
            self.0.spec().kind(),
            self.0.width(),
            self.0.height(),
            self.0.bit_depth()
        )
    }
}

/// Samples an 8-bit image with `kind` = "binary" or "non_binary".
#[pyfunction]
#[pyo3(signature = (image, kind = "non_binary", truncated_bits = 0))]
fn sample(image: &PyImage, kind: &str, truncated_bits: u8) -> PyResult<PySampled> {
    let spec = SamplingSpec::of_kind(parse::<SamplingKind>("sampling kind", kind)?).map_err(err)?;
    sampler::sample(&image.0, &spec)
        .and_then(|y| y.truncate(truncated_bits))
        .map(PySampled)
        .map_err(err)
}

#[pyfunction]
fn onchip_compression(bit_depth: u8) -> PyResult<f64> {
    sampler::onchip_compression(bit_depth).map_err(err)
}

fn codec_mode(quality: Option<u8>) -> PyResult<CodecMode> {
    match quality {
        None => Ok(CodecMode::Lossless),
        Some(q) if (1..=100).contains(&q) => Ok(CodecMode::Quality(q)),
        Some(q) => Err(PyValueError::new_err(format!("quality {q} outside 1..=100"))),
    }
}

/// Encodes to the container format; `quality=None` selects the lossless path.
#[pyfunction]
#[pyo3(signature = (image, quality = None))]
fn encode<'py>(py: Python<'py>, image: &PyImage, quality: Option<u8>) -> PyResult<Bound<'py, PyBytes>> {
    let coded = codec::encode(&image.0, codec_mode(quality)?).map_err(err)?;
    Ok(PyBytes::new(py, &coded.to_bytes()))
}

#[pyfunction]
fn decode(data: &[u8]) -> PyResult<PyImage> {
    let coded = CodedImage::from_bytes(data).map_err(err)?;
    codec::decode(&coded).map(PyImage).map_err(err)
}

/// PSNR in dB against an 8-bit reference; `inf` for identical images.
#[pyfunction]
fn psnr(reference: &PyImage, candidate: &PyImage) -> PyResult<f64> {
    img::psnr(&reference.0, &candidate.0).map(psnr_value).map_err(err)
}

fn spl_config(
    lambda_: Option<f64>,
    max_iters: Option<usize>,
    epsilon: Option<f64>,
    patience: Option<usize>,
    basis: Option<&str>,
    levels: Option<usize>,
) -> PyResult<SplConfig> {
    let mut cfg = SplConfig::default();
    if let Some(v) = lambda_ {
        cfg.lambda = v;
    }
    if let Some(v) = max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = patience {
        cfg.patience = v;
    }
    if let Some(v) = basis {
        cfg.basis = parse::<Basis>("basis", v)?;
    }
    cfg.levels = levels.or(cfg.levels);
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Reconstructs an 8-bit image with SPL. Returns `(image, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (sampled, *, lambda_ = None, max_iters = None, epsilon = None, patience = None, basis = None, levels = None))]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    py: Python<'_>,
    sampled: &PySampled,
    lambda_: Option<f64>,
    max_iters: Option<usize>,
    epsilon: Option<f64>,
    patience: Option<usize>,
    basis: Option<&str>,
    levels: Option<usize>,
) -> PyResult<(PyImage, usize, bool)> {
    let cfg = spl_config(lambda_, max_iters, epsilon, patience, basis, levels)?;
    let y = sampled.0.clone();
    let (x, trace) = py.detach(|| spl_reconstruct(&y, &cfg)).map_err(err)?;
    Ok((PyImage(x), trace.iterations(), trace.converged))
}

/// Junction capacitance in fF of the reference photodiode, or of a key=value parameter file.
#[pyfunction]
#[pyo3(signature = (params = None))]
fn junction_capacitance(params: Option<PathBuf>) -> PyResult<f64> {
    let p = match params {
        Some(path) => PhotodiodeParams::load(&path).map_err(err)?,
        None => PhotodiodeParams::reference_design(),
    };
    pixel::junction_capacitance(&p).map_err(err)
}

/// Pixel output in volts for two photocurrents in fA.
#[pyfunction]
fn pixel_response(p1: f64, p2: f64) -> f64 {
    pixel::pixel_response(p1, p2, &PixelResponseModel::fitted())
}

/// Fits the quadratic response over the 10 x 10 sweep; returns `(weight, coefficients)`.
#[pyfunction]
fn fit_weight() -> PyResult<(f64, Vec<f64>)> {
    let fit = pixel::fit_weight(&pixel::simulate_weight_grid(&PixelResponseModel::fitted())).map_err(err)?;
    Ok((fit.weight, fit.coeffs.to_vec()))
}

/// Readout power breakdown in mW for `design` = "design1" or "design2".
#[pyfunction]
#[pyo3(signature = (compression_ratio, design = "design1"))]
fn estimate_power<'py>(py: Python<'py>, compression_ratio: f64, design: &str) -> PyResult<Bound<'py, PyDict>> {
    let model = match design {
        "design1" => PowerModel::design1(),
        "design2" => PowerModel::design2(),
        other => return Err(PyValueError::new_err(format!("unknown design {other:?}"))),
    };
    let b = pipeline::estimate_power(&model, compression_ratio).map_err(err)?;
    let d = PyDict::new(py);
    for (c, mw) in &b.categories {
        d.set_item(c.to_string(), mw)?;
    }
    d.set_item("total", b.total)?;
    d.set_item("baseline_total", b.baseline_total)?;
    d.set_item("savings_pct", b.savings_pct)?;
    Ok(d)
}

/// Pipeline configuration; keys match the config-file format.
#[pyclass(name = "PipelineConfig", module = "onsensor_cs", skip_from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig(PipelineConfig);

#[pymethods]
impl PyPipelineConfig {
    /// Keyword arguments are applied as `key = value` settings.
    #[new]
    #[pyo3(signature = (**settings))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyPipelineConfig(PipelineConfig::default());
        if let Some(s) = settings {
            for (k, v) in s.iter() {
                let value = match v.extract::<Vec<String>>() {
                    Ok(list) if !v.is_instance_of::<pyo3::types::PyString>() => list.join(","),
                    _ => v.str()?.to_string(),
                };
                cfg.set(&k.extract::<String>()?, &value)?;
            }
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PipelineConfig::load(&path).map(PyPipelineConfig).map_err(err)
    }

    /// Relative paths resolve against the working directory.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.0
            .set(key, value, &std::env::current_dir().unwrap_or_default())
            .map_err(err)
    }

    fn to_kv_string(&self) -> String {
        self.0.to_kv_string()
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig({:?})", self.0.to_kv_string())
    }
}

fn report_rows<'py>(py: Python<'py>, report: &RunReport) -> PyResult<Vec<Bound<'py, PyDict>>> {
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("image", &r.image)?;
            d.set_item("kind", r.kind.to_string())?;
            d.set_item("quality", r.quality.to_string())?;
            d.set_item("bitdepth", r.bitdepth)?;
            d.set_item("normalized_size", r.normalized_size)?;
            d.set_item("psnr_db", psnr_value(r.psnr))?;
            d.set_item("onchip_compression_pct", r.onchip_compression)?;
            d.set_item("coded_bytes", r.coded_bytes)?;
            d.set_item("baseline_bytes", r.baseline_bytes)?;
            d.set_item("iterations", r.iterations)?;
            d.set_item("converged", r.converged)?;
            Ok(d)
        })
        .collect()
}

/// Runs the full chain; returns one dict per image (or colour plane).
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyPipelineConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.0.clone();
    let report = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    report_rows(py, &report)
}

/// Runs a quality x bit depth x kind grid. Returns the per-image rows of all
/// successful cells; infeasible cells are skipped.
#[pyfunction]
#[pyo3(signature = (config, qualities, bitdepths, kinds = vec!["binary".to_string(), "non_binary".to_string()]))]
fn sweep<'py>(
    py: Python<'py>,
    config: &PyPipelineConfig,
    qualities: Vec<String>,
    bitdepths: Vec<u8>,
    kinds: Vec<String>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let grid = pipeline::SweepGrid {
        qualities: qualities
            .iter()
            .map(|q| parse::<CodecMode>("quality", q))
            .collect::<PyResult<_>>()?,
        bitdepths,
        kinds: kinds
            .iter()
            .map(|k| parse::<SamplingKind>("sampling kind", k))
            .collect::<PyResult<_>>()?,
    };
    let cfg = config.0.clone();
    let out = py.detach(|| pipeline::sweep(&cfg, &grid)).map_err(err)?;
    let mut rows = Vec::new();
    for r in &out.reports {
        rows.extend(report_rows(py, r)?);
    }
    Ok(rows)
}

#[pymodule]
#[pyo3(name = "onsensor_cs")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OnsensorError", m.py().get_type::<OnsensorError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PySampled>()?;
    m.add_class::<PyPipelineConfig>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(onchip_compression, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(junction_capacitance, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_response, m)?)?;
    m.add_function(wrap_pyfunction!(fit_weight, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_power, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
