//! Per-cell results and their CSV / SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::codec::CodecMode;
use crate::error::{Error, Result};
use crate::image::Psnr;
use crate::reconstruct::csv_error;
use crate::sampler::SamplingKind;

/// Header of the aggregate table, one row per (kind, quality, bitdepth) cell.
pub const REPORT_HEADER: [&str; 5] = [
    "quality",
    "bitdepth",
    "normalized_size",
    "psnr_db",
    "onchip_compression_pct",
];

const IMAGE_HEADER: [&str; 11] = [
    "image",
    "kind",
    "quality",
    "bitdepth",
    "normalized_size",
    "psnr_db",
    "onchip_compression_pct",
    "coded_bytes",
    "baseline_bytes",
    "iterations",
    "converged",
];

/// Result for one image (or one colour plane).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// File stem, with `/red`, `/green` or `/blue` appended for colour planes.
    pub image: String,
    pub kind: SamplingKind,
    pub quality: CodecMode,
    pub bitdepth: u8,
    /// Coded size as a percentage of the 8-bit quality-75 baseline.
    pub normalized_size: f64,
    pub psnr: Psnr,
    pub onchip_compression: f64,
    pub coded_bytes: usize,
    pub baseline_bytes: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// All images processed with one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub kind: SamplingKind,
    pub quality: CodecMode,
    pub bitdepth: u8,
    pub onchip_compression: f64,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn mean_normalized_size(&self) -> f64 {
        self.rows.iter().map(|r| r.normalized_size).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean PSNR in dB; infinite if any row is.
    pub fn mean_psnr(&self) -> Psnr {
        let mut sum = 0.0;
        for r in &self.rows {
            match r.psnr {
                Psnr::Finite(v) => sum += v,
                Psnr::Infinite => return Psnr::Infinite,
            }
        }
        Psnr::Finite(sum / self.rows.len() as f64)
    }

    pub fn row(&self, image: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.image == image)
    }

    pub(crate) fn sort_key(&self) -> (SamplingKind, u8, u8) {
        cell_order(self.kind, self.quality, self.bitdepth)
    }
}

/// Tables list lossless first, then quality descending, then bit depth descending.
pub(crate) fn cell_order(kind: SamplingKind, quality: CodecMode, bitdepth: u8) -> (SamplingKind, u8, u8) {
    let q = match quality {
        CodecMode::Lossless => 0,
        CodecMode::Quality(q) => 101 - q,
    };
    (kind, q, u8::MAX - bitdepth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `report.csv` (one row per cell) and `images.csv` (one row per image).
    /// With several sampling kinds the cell table is split into
    /// `report_<kind>.csv`, since its columns do not name the kind.
    Csv,
    /// `size_vs_quality.svg` and `psnr_vs_quality.svg`, one polyline per kind and bit depth.
    SvgLineplot,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.4}")
}

fn check_nonempty(reports: &[RunReport]) -> Result<()> {
    if reports.is_empty() || reports.iter().any(|r| r.rows.is_empty()) {
        return Err(Error::invalid("cannot emit an empty report"));
    }
    Ok(())
}

/// Writes `reports` into `dir` and returns the created files.
pub fn emit_report(reports: &[RunReport], format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    check_nonempty(reports)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Csv => {
            let mut kinds: Vec<SamplingKind> = reports.iter().map(|r| r.kind).collect();
            kinds.sort();
            kinds.dedup();
            let mut written = Vec::new();
            if let [_] = kinds.as_slice() {
                let agg = dir.join("report.csv");
                write_aggregate(reports, &agg)?;
                written.push(agg);
            } else {
                for kind in kinds {
                    let agg = dir.join(format!("report_{kind}.csv"));
                    let subset: Vec<&RunReport> = reports.iter().filter(|r| r.kind == kind).collect();
                    write_aggregate(subset, &agg)?;
                    written.push(agg);
                }
            }
            let per_image = dir.join("images.csv");
            write_images(reports, &per_image)?;
            written.push(per_image);
            Ok(written)
        }
        ReportFormat::SvgLineplot => {
            let size = dir.join("size_vs_quality.svg");
            write_file(
                &size,
                &lineplot(reports, "Normalized size (%)", |r| Some(r.mean_normalized_size())),
            )?;
            let psnr = dir.join("psnr_vs_quality.svg");
            write_file(&psnr, &lineplot(reports, "PSNR (dB)", |r| r.mean_psnr().db()))?;
            Ok(vec![size, psnr])
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_aggregate<'a>(reports: impl IntoIterator<Item = &'a RunReport>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(REPORT_HEADER).map_err(|e| csv_error(path, e))?;
    for r in reports {
        w.write_record([
            r.quality.to_string(),
            r.bitdepth.to_string(),
            fmt_f(r.mean_normalized_size()),
            r.mean_psnr().to_string(),
            r.onchip_compression.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_images(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(IMAGE_HEADER).map_err(|e| csv_error(path, e))?;
    for row in reports.iter().flat_map(|r| &r.rows) {
        w.write_record([
            row.image.clone(),
            row.kind.to_string(),
            row.quality.to_string(),
            row.bitdepth.to_string(),
            fmt_f(row.normalized_size),
            row.psnr.to_string(),
            row.onchip_compression.to_string(),
            row.coded_bytes.to_string(),
            row.baseline_bytes.to_string(),
            row.iterations.to_string(),
            row.converged.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Lossy cells only; lossless has no position on a quality axis.
fn lineplot(reports: &[RunReport], y_label: &str, value: impl Fn(&RunReport) -> Option<f64>) -> String {
    let mut series: BTreeMap<(SamplingKind, std::cmp::Reverse<u8>), Vec<(f64, f64)>> = BTreeMap::new();
    for r in reports {
        if let (CodecMode::Quality(q), Some(v)) = (r.quality, value(r)) {
            series
                .entry((r.kind, std::cmp::Reverse(r.bitdepth)))
                .or_default()
                .push((f64::from(q), v));
        }
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let ys: Vec<f64> = series.values().flatten().map(|p| p.1).collect();
    let (mut lo, mut hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |q: f64| MARGIN + (q / 100.0) * (W - 2.0 * MARGIN);
    let py = |v: f64| H - MARGIN - (v - lo) / (hi - lo) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} V{y0} H{x1}" fill="none" stroke="black"/>"#);
    for q in (0..=100).step_by(20) {
        let x = px(f64::from(q));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{q}</text>"#,
            y0 + 18.0
        );
    }
    for i in 0..=4 {
        let v = lo + (hi - lo) * f64::from(i) / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">JPEG quality</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, ((kind, depth), pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let label = format!("{kind} {}-bit", depth.0);
        let points: Vec<String> = pts.iter().map(|&(q, v)| format!("{:.1},{:.1}", px(q), py(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{label}</title></polyline>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            x1 - 120.0,
            x1 - 100.0,
            x1 - 95.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
