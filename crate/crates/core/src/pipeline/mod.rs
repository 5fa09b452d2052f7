//! End-to-end acquisition chain and parameter sweeps.
//!
//! For every input plane: optional FPN injection, on-sensor sampling, LSB
//! truncation, encode, decode, SPL reconstruction, and PSNR against the clean
//! 8-bit scene. Colour inputs are processed one plane at a time. The size
//! baseline is the 8-bit scene itself coded at quality 75.

mod config;
mod power;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::codec::{self, CodecMode, CodedImage};
use crate::error::{Error, Result};
use crate::image::{self, Format, Image};
use crate::pixel::{apply_fpn, calibrated_spec};
use crate::reconstruct::{spl_reconstruct, SplConfig};
use crate::sampler::{self, onchip_compression, SampledImage, SamplingKind, SamplingSpec};

pub use config::PipelineConfig;
pub use power::{compression_ratio_for, estimate_power, PowerBreakdown, PowerCategory, PowerModel};
pub use report::{emit_report, ReportFormat, ReportRow, RunReport, REPORT_HEADER};

/// Quality of the per-image size reference.
pub const BASELINE_QUALITY: u8 = 75;

/// One grayscale plane of an input, with its baseline coded size.
#[derive(Debug, Clone)]
struct Plane {
    name: String,
    image: Image,
    baseline_bytes: usize,
}

/// Everything produced for one plane in one configuration.
struct PlaneResult {
    row: ReportRow,
    coded: CodedImage,
    reconstruction: Image,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_planes(path: &Path) -> Result<Vec<(String, Image)>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let name = stem(path);
    let planes = match ext.as_str() {
        "ppm" => {
            let rgb = image::load_rgb(path)?;
            let [r, g, b] = image::split_planes(&rgb);
            vec![
                (format!("{name}/red"), r),
                (format!("{name}/green"), g),
                (format!("{name}/blue"), b),
            ]
        }
        "pgm" => vec![(name, image::load_image(path, Format::Pgm8)?)],
        "raw" => vec![(name, image::load_image(path, Format::Raw)?)],
        _ => {
            return Err(Error::invalid(format!(
                "{}: expected .pgm, .ppm or .raw",
                path.display()
            )))
        }
    };
    for (_, img) in &planes {
        if img.bit_depth() != 8 {
            return Err(Error::DepthFormatMismatch {
                bit_depth: img.bit_depth(),
                format: "8-bit scene",
            });
        }
    }
    Ok(planes)
}

fn prepare(inputs: &[PathBuf]) -> Result<Vec<Plane>> {
    let loaded: Vec<Vec<(String, Image)>> = inputs
        .iter()
        .map(|p| load_planes(p).map_err(|e| e.context(p.display().to_string())))
        .collect::<Result<_>>()?;
    loaded
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, image)| {
            let baseline =
                codec::encode(&image, CodecMode::Quality(BASELINE_QUALITY)).map_err(|e| e.context(name.clone()))?;
            Ok(Plane {
                name,
                image,
                baseline_bytes: baseline.size_bytes(),
            })
        })
        .collect()
}

/// FPN plus sampling. The FPN pattern belongs to the sensor, so every plane
/// sees the same seeded pattern.
fn acquire(plane: &Plane, spec: &SamplingSpec, cfg: &PipelineConfig) -> Result<SampledImage> {
    if !cfg.fpn.is_active() {
        return sampler::sample(&plane.image, spec);
    }
    let (noisy, gains) = apply_fpn(&plane.image, &cfg.fpn)?;
    let y = sampler::sample(&noisy, spec)?;
    if !cfg.fpn_calibrate {
        return Ok(y);
    }
    let calibrated = calibrated_spec(spec, &gains)?;
    SampledImage::new(y.image().clone(), 0, calibrated, y.source_width(), y.source_height())
}

fn process(
    plane: &Plane,
    acquired: &SampledImage,
    kind: SamplingKind,
    truncated_bits: u8,
    mode: CodecMode,
    spl: &SplConfig,
) -> Result<PlaneResult> {
    let y = acquired.truncate(truncated_bits)?;
    let coded = codec::encode(y.image(), mode)?;
    let decoded = y.with_image(codec::decode(&coded)?)?;
    let (reconstruction, trace) = spl_reconstruct(&decoded, spl)?;
    let bitdepth = y.bit_depth();
    let row = ReportRow {
        image: plane.name.clone(),
        kind,
        quality: mode,
        bitdepth,
        normalized_size: codec::normalized_percent(coded.size_bytes(), plane.baseline_bytes)?,
        psnr: image::psnr(&plane.image, &reconstruction)?,
        onchip_compression: onchip_compression(bitdepth)?,
        coded_bytes: coded.size_bytes(),
        baseline_bytes: plane.baseline_bytes,
        iterations: trace.iterations(),
        converged: trace.converged,
    };
    Ok(PlaneResult {
        row,
        coded,
        reconstruction,
    })
}

fn report_from(cfg: &PipelineConfig, rows: Vec<ReportRow>) -> Result<RunReport> {
    let bitdepth = cfg.bit_depth()?;
    Ok(RunReport {
        kind: cfg.kind,
        quality: cfg.codec,
        bitdepth,
        onchip_compression: onchip_compression(bitdepth)?,
        rows,
    })
}

fn artifact_name(name: &str) -> String {
    name.replace(['/', '\\'], "_")
}

/// Runs the full chain for every input and writes artifacts when
/// `output_dir` is set: `<image>.oscj`, `<image>_recon.pgm` and the CSV report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let planes = prepare(&cfg.inputs)?;
    let spec = cfg.spec()?;
    let results: Vec<PlaneResult> = planes
        .par_iter()
        .map(|p| {
            {
                let y = acquire(p, &spec, cfg)?;
                process(p, &y, cfg.kind, cfg.truncated_bits, cfg.codec, &cfg.spl)
            }
            .map_err(|e| e.context(p.name.clone()))
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &results {
            let base = artifact_name(&r.row.image);
            r.coded.save(&dir.join(format!("{base}.oscj")))?;
            image::save_image(&r.reconstruction, &dir.join(format!("{base}_recon.pgm")), Format::Pgm8)?;
        }
    }
    let report = report_from(cfg, results.into_iter().map(|r| r.row).collect())?;
    if let Some(dir) = &cfg.output_dir {
        emit_report(std::slice::from_ref(&report), ReportFormat::Csv, dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_kv_string()).map_err(|e| Error::io(dir, e))?;
    }
    Ok(report)
}

/// Cross product of settings explored by [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub qualities: Vec<CodecMode>,
    /// Stored measurement depths; each kind is truncated down from its native depth.
    pub bitdepths: Vec<u8>,
    pub kinds: Vec<SamplingKind>,
}

impl SweepGrid {
    fn cells(&self) -> Vec<(SamplingKind, u8, CodecMode)> {
        let mut cells = Vec::new();
        for &k in &self.kinds {
            for &d in &self.bitdepths {
                for &q in &self.qualities {
                    cells.push((k, d, q));
                }
            }
        }
        cells.sort_by_key(|&(k, d, q)| report::cell_order(k, q, d));
        cells.dedup();
        cells
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub kind: SamplingKind,
    pub quality: CodecMode,
    pub bitdepth: u8,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Successful cells in table order.
    pub reports: Vec<RunReport>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn get(&self, kind: SamplingKind, quality: CodecMode, bitdepth: u8) -> Option<&RunReport> {
        self.reports
            .iter()
            .find(|r| r.kind == kind && r.quality == quality && r.bitdepth == bitdepth)
    }
}

/// Runs every grid cell over `base.inputs`; the other fields of `base`
/// (SPL, FPN) apply to all cells. A failing cell is recorded and skipped.
/// Aggregate outputs go to `base.output_dir` when set.
pub fn sweep(base: &PipelineConfig, grid: &SweepGrid) -> Result<SweepOutcome> {
    if grid.qualities.is_empty() || grid.bitdepths.is_empty() || grid.kinds.is_empty() {
        return Err(Error::Config("sweep grid has an empty axis".into()));
    }
    let mut probe = base.clone();
    probe.truncated_bits = 0;
    probe.validate()?;
    let planes = prepare(&base.inputs)?;

    let mut kinds = grid.kinds.clone();
    kinds.sort();
    kinds.dedup();
    // sampling is shared by every cell of a kind
    let mut acquired = Vec::new();
    for &kind in &kinds {
        let spec = SamplingSpec::of_kind(kind)?;
        let ys: Vec<Result<SampledImage>> = planes.par_iter().map(|p| acquire(p, &spec, base)).collect();
        acquired.push((kind, spec.native_bit_depth(8), ys));
    }

    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..planes.len()).map(move |p| (c, p)))
        .collect();
    let results: Vec<Result<ReportRow>> = jobs
        .par_iter()
        .map(|&(c, p)| {
            let (kind, depth, mode) = cells[c];
            let (_, native, ys) = acquired.iter().find(|a| a.0 == kind).expect("kind sampled");
            if depth > *native || depth == 0 {
                return Err(Error::Config(format!("{kind} sampling has no {depth}-bit setting")));
            }
            let y = ys[p].as_ref().map_err(|e| Error::invalid(e.to_string()))?;
            process(&planes[p], y, kind, native - depth, mode, &base.spl).map(|r| r.row)
        })
        .collect();

    let mut outcome = SweepOutcome {
        reports: Vec::new(),
        failures: Vec::new(),
    };
    let mut results = results.into_iter();
    for &(kind, bitdepth, quality) in &cells {
        let mut rows = Vec::with_capacity(planes.len());
        let mut error = None;
        for (p, r) in planes.iter().zip(results.by_ref().take(planes.len())) {
            match r {
                Ok(row) => rows.push(row),
                Err(e) if error.is_none() => error = Some(format!("{}: {e}", p.name)),
                Err(_) => {}
            }
        }
        match error {
            None => outcome.reports.push(RunReport {
                kind,
                quality,
                bitdepth,
                onchip_compression: onchip_compression(bitdepth)?,
                rows,
            }),
            Some(error) => {
                log::warn!("sweep cell {kind} q={quality} {bitdepth}-bit failed: {error}");
                outcome.failures.push(CellFailure {
                    kind,
                    quality,
                    bitdepth,
                    error,
                })
            }
        }
    }
    debug_assert!(outcome.reports.windows(2).all(|w| w[0].sort_key() <= w[1].sort_key()));
    if let Some(dir) = &base.output_dir {
        if !outcome.reports.is_empty() {
            emit_report(&outcome.reports, ReportFormat::Csv, dir)?;
            emit_report(&outcome.reports, ReportFormat::SvgLineplot, dir)?;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests;
