use super::*;
use crate::image::{save_image, save_rgb, Psnr, RgbImage};
use crate::transforms::Basis;
use proptest::prelude::*;

fn scene(w: usize, h: usize, phase: f64) -> Image {
    Image::from_fn(w, h, 8, |r, c| {
        let (x, y) = (c as f64 / w as f64, r as f64 / h as f64);
        let v = 128.0 + 60.0 * (6.0 * x + phase).sin() * (4.0 * y).cos() + if x > 0.5 { 30.0 } else { -20.0 };
        v.round().clamp(0.0, 255.0) as u16
    })
    .unwrap()
}

fn write_scenes(dir: &Path, n: usize) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let p = dir.join(format!("scene{i}.pgm"));
            save_image(&scene(32, 32, i as f64), &p, Format::Pgm8).unwrap();
            p
        })
        .collect()
}

fn config(inputs: Vec<PathBuf>) -> PipelineConfig {
    PipelineConfig {
        inputs,
        spl: SplConfig {
            max_iters: 60,
            ..SplConfig::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn config_parses_every_key() {
    let text = "\
# comment
inputs = a.pgm, /abs/b.ppm
kind = binary
truncated_bits = 2
codec = 85
lambda = 4.5
max_iters = 50
epsilon = 1e-3
basis = dwt
levels = 3
fpn_column_offset_sigma = 0.5
fpn_pixel_gain_sigma = 0.01
fpn_seed = 9
fpn_calibrate = true
output_dir = out
";
    let cfg = PipelineConfig::from_kv_str(text, Path::new("/base")).unwrap();
    assert_eq!(
        cfg.inputs,
        vec![PathBuf::from("/base/a.pgm"), PathBuf::from("/abs/b.ppm")]
    );
    assert_eq!(cfg.kind, SamplingKind::Binary);
    assert_eq!(cfg.bit_depth().unwrap(), 7);
    assert_eq!(cfg.codec, CodecMode::Quality(85));
    assert_eq!(cfg.spl.basis, Basis::Dwt);
    assert_eq!(cfg.spl.levels, Some(3));
    assert_eq!(cfg.fpn.seed, 9);
    assert!(cfg.fpn_calibrate);
    assert_eq!(cfg.output_dir, Some(PathBuf::from("/base/out")));
    let again = PipelineConfig::from_kv_str(&cfg.to_kv_string(), Path::new("/elsewhere")).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn config_rejects_bad_input() {
    let base = Path::new(".");
    for text in [
        "inputs = a.pgm\ncolour = red\n",
        "inputs = a.pgm\ninputs = b.pgm\n",
        "inputs = a.pgm\nkind = binary\ntruncated_bits = 9\n",
        "inputs = a.pgm\ncodec = 0\n",
        "inputs = a.pgm\nlambda = -1\n",
        "inputs = a.pgm\nno equals sign\n",
        "kind = binary\n",
        "inputs = a.pgm\nkind = custom\n",
    ] {
        let err = PipelineConfig::from_kv_str(text, base).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text:?}: {err}");
    }
    // 12-bit non-binary data may lose up to 11 bits
    let ok = PipelineConfig::from_kv_str("inputs = a.pgm\ntruncated_bits = 11\n", base).unwrap();
    assert_eq!(ok.bit_depth().unwrap(), 1);
}

#[test]
fn power_design1_quarter() {
    let b = estimate_power(&PowerModel::design1(), 0.25).unwrap();
    assert!((b.get(PowerCategory::Io) - 20.25).abs() < 1e-12);
    assert!((b.get(PowerCategory::Adc) - 45.0).abs() < 1e-12);
    assert_eq!(b.get(PowerCategory::Pixel), 1.8);
    assert!((b.total - 81.135).abs() < 1e-9);
    assert!((b.savings_pct - 23.59).abs() < 0.01);
}

#[test]
fn power_without_compression_is_baseline() {
    for m in [PowerModel::design1(), PowerModel::design2()] {
        let b = estimate_power(&m, 0.0).unwrap();
        assert_eq!(b.total, m.total());
        assert_eq!(b.savings_pct, 0.0);
    }
    assert!((PowerModel::design1().total() - 106.18).abs() < 1e-9);
    assert!((PowerModel::design2().total() - 708.3).abs() < 1e-9);
}

#[test]
fn power_rejects_bad_input() {
    assert!(estimate_power(&PowerModel::design1(), 1.0).is_err());
    assert!(estimate_power(&PowerModel::design1(), -0.1).is_err());
    assert!(estimate_power(&PowerModel::design1(), f64::NAN).is_err());
    assert!(PowerModel::new(1.0, -2.0, 0.0, 0.0, 0.0).is_err());
    assert_eq!(compression_ratio_for(9).unwrap(), 0.4375);
}

fn manual_report(rows: Vec<(f64, Psnr)>) -> RunReport {
    RunReport {
        kind: SamplingKind::Binary,
        quality: CodecMode::Quality(75),
        bitdepth: 9,
        onchip_compression: 43.75,
        rows: rows
            .into_iter()
            .enumerate()
            .map(|(i, (size, psnr))| ReportRow {
                image: format!("img{i}"),
                kind: SamplingKind::Binary,
                quality: CodecMode::Quality(75),
                bitdepth: 9,
                normalized_size: size,
                psnr,
                onchip_compression: 43.75,
                coded_bytes: 10,
                baseline_bytes: 10,
                iterations: 1,
                converged: true,
            })
            .collect(),
    }
}

#[test]
fn report_means() {
    let r = manual_report(vec![(50.0, Psnr::Finite(30.0)), (70.0, Psnr::Finite(32.0))]);
    assert_eq!(r.mean_normalized_size(), 60.0);
    assert_eq!(r.mean_psnr(), Psnr::Finite(31.0));
    let r = manual_report(vec![(50.0, Psnr::Finite(30.0)), (70.0, Psnr::Infinite)]);
    assert!(r.mean_psnr().is_infinite());
}

#[test]
fn csv_header_and_infinite_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let r = manual_report(vec![(100.0, Psnr::Infinite)]);
    let files = emit_report(&[r], ReportFormat::Csv, dir.path()).unwrap();
    let text = std::fs::read_to_string(&files[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("quality,bitdepth,normalized_size,psnr_db,onchip_compression_pct")
    );
    assert_eq!(lines.next(), Some("75,9,100.0000,inf,43.75"));
    assert!(std::fs::read_to_string(&files[1]).unwrap().contains("img0,binary,75,9"));
}

#[test]
fn empty_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&[], ReportFormat::Csv, dir.path()).is_err());
    assert!(emit_report(&[manual_report(vec![])], ReportFormat::SvgLineplot, dir.path()).is_err());
}

#[test]
fn svg_has_one_polyline_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for kind in [SamplingKind::Binary, SamplingKind::NonBinary] {
        for q in [50, 75, 100] {
            let mut r = manual_report(vec![(f64::from(q), Psnr::Finite(30.0 + f64::from(q) / 50.0))]);
            r.kind = kind;
            r.quality = CodecMode::Quality(q);
            reports.push(r);
        }
    }
    let files = emit_report(&reports, ReportFormat::SvgLineplot, dir.path()).unwrap();
    for f in files {
        let svg = std::fs::read_to_string(f).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("binary 9-bit") && svg.contains("non_binary 9-bit"));
    }
}

#[test]
fn binary_lossless_full_depth() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 1));
    cfg.kind = SamplingKind::Binary;
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.bitdepth, 9);
    let row = &report.rows[0];
    assert_eq!(row.onchip_compression, 43.75);
    assert_eq!(row.image, "scene0");
    assert!(row.psnr.db().unwrap() > 25.0);
}

#[test]
fn lossy_truncated_is_worse_than_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 1));
    let lossless = run_pipeline(&cfg).unwrap();
    cfg.codec = CodecMode::Quality(75);
    cfg.truncated_bits = 3;
    let lossy = run_pipeline(&cfg).unwrap();
    assert_eq!(lossy.rows[0].bitdepth, 9);
    assert_eq!(lossy.rows[0].onchip_compression, 43.75);
    assert!(lossy.rows[0].psnr < lossless.rows[0].psnr);
    assert!(lossy.rows[0].normalized_size < lossless.rows[0].normalized_size);
}

#[test]
fn constant_tile_completes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.pgm");
    save_image(&Image::filled(8, 8, 8, 90).unwrap(), &p, Format::Pgm8).unwrap();
    let mut cfg = config(vec![p]);
    cfg.output_dir = Some(dir.path().join("out"));
    let report = run_pipeline(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let field = csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().to_string();
    match report.rows[0].psnr {
        Psnr::Infinite => assert_eq!(field, "inf"),
        Psnr::Finite(v) => assert!((field.parse::<f64>().unwrap() - v).abs() < 1e-4),
    }
    assert!(dir.path().join("out/flat.oscj").exists());
    assert!(dir.path().join("out/flat_recon.pgm").exists());
}

#[test]
fn colour_input_is_split_into_planes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgb.ppm");
    let rgb = RgbImage::new(scene(16, 16, 0.0), scene(16, 16, 1.0), scene(16, 16, 2.0)).unwrap();
    save_rgb(&rgb, &p).unwrap();
    let report = run_pipeline(&config(vec![p])).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.image.as_str()).collect();
    assert_eq!(names, ["rgb/red", "rgb/green", "rgb/blue"]);
}

#[test]
fn missing_input_names_the_file() {
    let err = run_pipeline(&config(vec![PathBuf::from("/nonexistent/x.pgm")])).unwrap_err();
    assert!(err.to_string().contains("x.pgm"));
    assert!(err.is_data_error());
}

#[test]
fn single_cell_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 2));
    cfg.codec = CodecMode::Quality(60);
    cfg.truncated_bits = 2;
    let run = run_pipeline(&cfg).unwrap();
    let grid = SweepGrid {
        qualities: vec![CodecMode::Quality(60)],
        bitdepths: vec![10],
        kinds: vec![SamplingKind::NonBinary],
    };
    let out = sweep(&cfg, &grid).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.reports, vec![run]);
}

#[test]
fn sweep_records_infeasible_cells_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(write_scenes(dir.path(), 1));
    let grid = SweepGrid {
        qualities: vec![CodecMode::Lossless],
        bitdepths: vec![12, 9],
        kinds: vec![SamplingKind::Binary, SamplingKind::NonBinary],
    };
    let out = sweep(&cfg, &grid).unwrap();
    assert_eq!(out.reports.len(), 3);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(
        (out.failures[0].kind, out.failures[0].bitdepth),
        (SamplingKind::Binary, 12)
    );
    for r in &out.reports {
        assert_eq!(r.onchip_compression, onchip_compression(r.bitdepth).unwrap());
    }
}

#[test]
fn sweep_is_ordered_reproducible_and_monotone_in_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 2));
    let grid = SweepGrid {
        qualities: vec![CodecMode::Quality(50), CodecMode::Lossless, CodecMode::Quality(90)],
        bitdepths: vec![7, 9],
        kinds: vec![SamplingKind::Binary],
    };
    let mut csvs = Vec::new();
    for run in 0..2 {
        cfg.output_dir = Some(dir.path().join(format!("sweep{run}")));
        let out = sweep(&cfg, &grid).unwrap();
        let order: Vec<(String, u8)> = out
            .reports
            .iter()
            .map(|r| (r.quality.to_string(), r.bitdepth))
            .collect();
        assert_eq!(
            order,
            [
                ("lossless", 9),
                ("lossless", 7),
                ("90", 9),
                ("90", 7),
                ("50", 9),
                ("50", 7)
            ]
            .map(|(q, d)| (q.to_string(), d))
        );
        for pair in out.reports.chunks(2) {
            assert!(
                pair[1].mean_normalized_size() <= pair[0].mean_normalized_size(),
                "{:?}",
                out.reports
                    .iter()
                    .map(|r| (
                        r.quality,
                        r.bitdepth,
                        r.rows.iter().map(|x| x.coded_bytes).collect::<Vec<_>>()
                    ))
                    .collect::<Vec<_>>()
            );
        }
        csvs.push(std::fs::read(dir.path().join(format!("sweep{run}/report.csv"))).unwrap());
        assert!(dir.path().join(format!("sweep{run}/psnr_vs_quality.svg")).exists());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn calibration_tracks_fpn_gains() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 1));
    cfg.kind = SamplingKind::Binary;
    cfg.fpn = crate::pixel::FpnConfig {
        column_offset_sigma: 0.0,
        pixel_gain_sigma: 0.08,
        seed: 3,
    };
    let plain = run_pipeline(&cfg).unwrap();
    cfg.fpn_calibrate = true;
    let calibrated = run_pipeline(&cfg).unwrap();
    assert!(calibrated.rows[0].psnr > plain.rows[0].psnr);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_is_affine_in_ratio(a in 0.0f64..0.99, b in 0.0f64..0.99, t in 0.0f64..1.0) {
        let m = PowerModel::design2();
        let mix = t * a + (1.0 - t) * b;
        let pa = estimate_power(&m, a).unwrap();
        let pb = estimate_power(&m, b).unwrap();
        let pm = estimate_power(&m, mix).unwrap();
        for c in PowerCategory::ALL {
            let want = t * pa.get(c) + (1.0 - t) * pb.get(c);
            prop_assert!((pm.get(c) - want).abs() < 1e-9);
        }
        prop_assert!(pm.total <= m.total() + 1e-9);
    }

    #[test]
    fn config_round_trips(
        trunc in 0u8..12,
        q in prop::option::of(1u8..=100),
        binary in any::<bool>(),
        seed in any::<u64>(),
        calibrate in any::<bool>(),
    ) {
        let kind = if binary { SamplingKind::Binary } else { SamplingKind::NonBinary };
        let native = SamplingSpec::of_kind(kind).unwrap().native_bit_depth(8);
        prop_assume!(trunc < native);
        let mut cfg = PipelineConfig { inputs: vec![PathBuf::from("/x/a.pgm")], kind, truncated_bits: trunc, ..PipelineConfig::default() };
        cfg.codec = q.map_or(CodecMode::Lossless, CodecMode::Quality);
        cfg.fpn.seed = seed;
        cfg.fpn_calibrate = calibrate;
        let back = PipelineConfig::from_kv_str(&cfg.to_kv_string(), Path::new("/")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn mixed_kinds_split_the_cell_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_scenes(dir.path(), 1));
    cfg.output_dir = Some(dir.path().join("mixed"));
    let grid = SweepGrid {
        qualities: vec![CodecMode::Quality(75)],
        bitdepths: vec![8],
        kinds: vec![SamplingKind::NonBinary, SamplingKind::Binary],
    };
    sweep(&cfg, &grid).unwrap();
    let out = dir.path().join("mixed");
    assert!(!out.join("report.csv").exists());
    for kind in ["binary", "non_binary"] {
        let text = std::fs::read_to_string(out.join(format!("report_{kind}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
    }
}
