use super::*;
use crate::image::Image;
use crate::sampler::{sample, PixelWeights};
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rows: usize, cols: usize, seed: u64, max: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..max))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn binary_backend_rows() {
    let b = backend_of(&SamplingSpec::binary()).unwrap().matrix();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let want = array![[r, r, 0.0, 0.0], [0.0, 0.0, r, r]];
    assert!(max_abs_diff(&b, &want) < 1e-15);
    assert!((b[[0, 0]] - 0.70711).abs() < 1e-5);
}

#[test]
fn non_binary_backend_rows() {
    let b = backend_of(&SamplingSpec::non_binary()).unwrap().matrix();
    assert!((b[[0, 0]] - 0.7894).abs() < 1e-4);
    assert!((b[[0, 1]] - 0.6139).abs() < 1e-4);
    assert_eq!(b[[1, 2]], b[[0, 0]]);
    assert_eq!(b[[1, 3]], b[[0, 1]]);
}

#[test]
fn unit_row_backend_unchanged() {
    let spec = SamplingSpec::custom(array![[1, 0, 0, 0]]).unwrap();
    assert_eq!(backend_of(&spec).unwrap().matrix(), array![[1.0, 0.0, 0.0, 0.0]]);
}

#[test]
fn rescaled_measurements_match_backend_sampling() {
    let img = Image::from_fn(8, 8, 8, |r, c| ((r * 37 + c * 11) % 256) as u16).unwrap();
    for spec in [SamplingSpec::binary(), SamplingSpec::non_binary()] {
        let backend = backend_of(&spec).unwrap();
        let y = measurements(&sample(&img, &spec).unwrap(), &backend).unwrap();
        let direct = backend.apply(&img.to_real()).unwrap();
        assert!(max_abs_diff(&y, &direct) < 1e-9);
    }
}

#[test]
fn zero_measurements_initialize_to_zero() {
    let backend = backend_of(&SamplingSpec::binary()).unwrap();
    let x = initialize(&Array2::zeros((4, 5)), &backend).unwrap();
    assert_eq!(x.dim(), (8, 5));
    assert!(x.iter().all(|&v| v == 0.0));
}

#[test]
fn single_measurement_spreads_to_two_rows() {
    let backend = backend_of(&SamplingSpec::binary()).unwrap();
    let mut y = Array2::zeros((2, 3));
    y.row_mut(1).assign(&ndarray::arr1(&[2.0, 4.0, 6.0]));
    let x = initialize(&y, &backend).unwrap();
    let s = std::f64::consts::SQRT_2;
    for c in 0..3 {
        let v = y[[1, c]] / s;
        assert_eq!([x[[0, c]], x[[1, c]]], [0.0, 0.0]);
        assert!((x[[2, c]] - v).abs() < 1e-12 && (x[[3, c]] - v).abs() < 1e-12);
    }
}

#[test]
fn backend_rows_are_orthonormal() {
    for spec in [
        SamplingSpec::binary(),
        SamplingSpec::non_binary(),
        SamplingSpec::non_binary().with_axis(SamplingAxis::Columns),
    ] {
        let backend = backend_of(&spec).unwrap();
        let shape = match spec.axis() {
            SamplingAxis::Rows => (4, 8),
            SamplingAxis::Columns => (8, 4),
        };
        let y = random_grid(shape.0, shape.1, 3, 100.0);
        let round = backend.apply(&backend.adjoint(&y).unwrap()).unwrap();
        assert!(max_abs_diff(&round, &y) < 1e-12);
    }
}

/// Dense back-end matrix over the column-major flattening of a row-axis image,
/// built directly from the block definition.
fn dense_phi(block: &Array2<u32>, gains: Option<&Array2<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    let (m, b) = block.dim();
    let groups = rows / b;
    let mut phi = DMatrix::zeros(groups * m * cols, rows * cols);
    for c in 0..cols {
        for g in 0..groups {
            for i in 0..m {
                let row: Vec<f64> = (0..b)
                    .map(|t| f64::from(block[[i, t]]) * gains.map_or(1.0, |gm| gm[[g * b + t, c]]))
                    .collect();
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                for t in 0..b {
                    phi[(c * groups * m + g * m + i, c * rows + g * b + t)] = row[t] / n;
                }
            }
        }
    }
    phi
}

fn flatten(a: &Array2<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.t().iter().copied())
}

fn landweber_oracle_check(spec: &SamplingSpec, gains: Option<&Array2<f64>>, seed: u64) {
    let (rows, cols) = (16, 16);
    let backend = backend_of(spec).unwrap();
    let x = random_grid(rows, cols, seed, 255.0);
    let y = random_grid(rows / spec.block_cols() * spec.block_rows(), cols, seed + 1, 400.0);
    let got = landweber_step(&x, &y, &backend).unwrap();
    let phi = dense_phi(spec.block(), gains, rows, cols);
    let (xv, yv) = (flatten(&x), flatten(&y));
    let want = &xv + phi.transpose() * (&yv - &phi * &xv);
    let got = flatten(&got);
    let err = (got - want).amax();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn landweber_matches_dense_oracle() {
    landweber_oracle_check(&SamplingSpec::binary(), None, 10);
    landweber_oracle_check(&SamplingSpec::non_binary(), None, 20);
    landweber_oracle_check(
        &SamplingSpec::custom(array![[3, 1, 2, 0], [0, 0, 0, 5]]).unwrap(),
        None,
        30,
    );
}

#[test]
fn landweber_with_pixel_weights_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let w = Array2::from_shape_simple_fn((16, 16), || rng.random_range(200u32..320));
    let gains = w.mapv(|v| f64::from(v) / 256.0);
    let spec = SamplingSpec::binary().with_pixel_weights(PixelWeights::new(8, w).unwrap());
    landweber_oracle_check(&spec, Some(&gains), 41);
}

#[test]
fn column_axis_is_transposed_row_axis() {
    let x = random_grid(8, 12, 50, 255.0);
    let y = random_grid(8, 6, 51, 255.0);
    let cols = backend_of(&SamplingSpec::non_binary().with_axis(SamplingAxis::Columns)).unwrap();
    let rows = backend_of(&SamplingSpec::non_binary()).unwrap();
    let a = landweber_step(&x, &y, &cols).unwrap();
    let b = landweber_step(&x.t().to_owned(), &y.t().to_owned(), &rows).unwrap();
    assert!(max_abs_diff(&a, &b.t().to_owned()) < 1e-12);
}

#[test]
fn landweber_fixed_point_and_zero_start() {
    let backend = backend_of(&SamplingSpec::non_binary()).unwrap();
    let x = random_grid(8, 8, 60, 255.0);
    let y = backend.apply(&x).unwrap();
    assert!(max_abs_diff(&landweber_step(&x, &y, &backend).unwrap(), &x) < 1e-12);
    let from_zero = landweber_step(&Array2::zeros((8, 8)), &y, &backend).unwrap();
    assert!(max_abs_diff(&from_zero, &initialize(&y, &backend).unwrap()) < 1e-12);
    assert!(landweber_step(&Array2::zeros((8, 8)), &Array2::zeros((3, 8)), &backend).is_err());
}

#[test]
fn dequantize_recentres() {
    let img = Image::from_fn(4, 8, 8, |r, c| (r * 30 + c) as u16).unwrap();
    let s = sample(&img, &SamplingSpec::binary()).unwrap();
    let t = s.truncate(3).unwrap();
    let dq = dequantize(&t);
    for (v, &raw) in dq.iter().zip(t.image().samples()) {
        assert_eq!(*v, f64::from(raw) * 8.0 + 4.0);
    }
    assert_eq!(dequantize(&s), s.image().to_real());
}

#[test]
fn wiener_keeps_constant() {
    let x = Array2::from_elem((7, 9), 42.5);
    assert_eq!(wiener3x3(&x), x);
}

/// Direct evaluation of the filter formula at one pixel.
fn wiener_at(x: &Array2<f64>, r: usize, c: usize) -> f64 {
    let (h, w) = x.dim();
    let at = |r: isize, c: isize| {
        // one-pixel symmetric extension repeats the edge sample
        let rr = r.clamp(0, h as isize - 1) as usize;
        let cc = c.clamp(0, w as isize - 1) as usize;
        x[[rr, cc]]
    };
    let stats = |r: usize, c: usize| {
        let v: Vec<f64> = (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
            .map(|(dr, dc)| at(r as isize + dr, c as isize + dc))
            .collect();
        let mu = v.iter().sum::<f64>() / 9.0;
        (mu, v.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / 9.0)
    };
    let nu = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| stats(r, c).1)
        .sum::<f64>()
        / (h * w) as f64;
    let (mu, s2) = stats(r, c);
    mu + (s2 - nu).max(0.0) / s2.max(nu) * (x[[r, c]] - mu)
}

#[test]
fn wiener_reduces_impulse() {
    let mut x = Array2::from_shape_fn((9, 9), |(r, c)| 10.0 + 2.0 * r as f64 + c as f64);
    let base = x[[4, 4]];
    x[[4, 4]] += 100.0;
    let y = wiener3x3(&x);
    assert!((y[[4, 4]] - wiener_at(&x, 4, 4)).abs() < 1e-9);
    assert!((y[[0, 8]] - wiener_at(&x, 0, 8)).abs() < 1e-9);
    assert!((y[[4, 4]] - base).abs() < 100.0);
}

#[test]
fn config_validation() {
    assert!(SplConfig::default().validate().is_ok());
    for bad in [
        SplConfig {
            lambda: 0.0,
            ..SplConfig::default()
        },
        SplConfig {
            max_iters: 0,
            ..SplConfig::default()
        },
        SplConfig {
            epsilon: 0.0,
            ..SplConfig::default()
        },
        SplConfig {
            levels: Some(0),
            ..SplConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn zero_measurements_reconstruct_zero() {
    let img = Image::filled(16, 16, 8, 0).unwrap();
    let y = sample(&img, &SamplingSpec::binary()).unwrap();
    let (out, trace) = spl_reconstruct(&y, &SplConfig::default()).unwrap();
    assert!(out.samples().iter().all(|&v| v == 0));
    assert!(trace.iterations() <= 2);
    assert!(trace.converged);
}

fn phantom() -> Image {
    Image::from_fn(16, 16, 8, |r, c| {
        if (3..11).contains(&r) && (4..12).contains(&c) {
            200
        } else if r >= 13 {
            120
        } else {
            50
        }
    })
    .unwrap()
}

fn mse_real(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[test]
fn spl_beats_least_norm_estimate_on_phantom() {
    let truth = phantom();
    for basis in [Basis::Ddwt, Basis::Dwt] {
        for spec in [SamplingSpec::binary(), SamplingSpec::non_binary()] {
            let y = sample(&truth, &spec).unwrap();
            let backend = backend_of(&spec).unwrap();
            let meas = measurements(&y, &backend).unwrap();
            let init = initialize(&meas, &backend).unwrap();
            let cfg = SplConfig {
                basis,
                ..SplConfig::default()
            };
            let (x, trace) = spl_solve(&meas, &backend, (16, 16), &cfg).unwrap();
            let (e_spl, e_init) = (mse_real(&x, &truth.to_real()), mse_real(&init, &truth.to_real()));
            assert!(e_spl < e_init, "{basis} {:?}: {e_spl} vs {e_init}", spec.kind());
            assert!(trace.rows.last().unwrap().residual <= trace.initial_residual + 1e-12);
        }
    }
}

#[test]
fn reconstruction_is_deterministic() {
    let img = Image::from_fn(32, 32, 8, |r, c| ((r * r + 3 * c) % 256) as u16).unwrap();
    let y = sample(&img, &SamplingSpec::non_binary()).unwrap().truncate(2).unwrap();
    let cfg = SplConfig {
        max_iters: 20,
        ..SplConfig::default()
    };
    let a = spl_reconstruct(&y, &cfg).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(|| spl_reconstruct(&y, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn max_iters_reports_non_convergence() {
    let img = Image::from_fn(32, 32, 8, |r, c| ((r * 13 + c * 7) % 256) as u16).unwrap();
    let y = sample(&img, &SamplingSpec::binary()).unwrap();
    let cfg = SplConfig {
        max_iters: 1,
        ..SplConfig::default()
    };
    let (_, trace) = spl_reconstruct(&y, &cfg).unwrap();
    assert_eq!(trace.iterations(), 1);
    assert!(!trace.converged);
}

#[test]
fn trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let trace = SplTrace {
        rows: vec![TraceRow {
            iteration: 1,
            d: 0.5,
            residual: 0.25,
        }],
        converged: false,
        initial_residual: 1.0,
    };
    trace.write_csv(&path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "iteration,D,residual\n1,0.5,0.25\n"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wiener_commutes_with_offset(seed in any::<u64>(), c in -100.0f64..100.0) {
        let x = random_grid(6, 7, seed, 255.0);
        let a = wiener3x3(&(&x + c));
        let b = wiener3x3(&x) + c;
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn spl_halts_and_never_worsens_residual(seed in any::<u64>(), k in 0u8..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(16, 16, 8, |_, _| rng.random_range(0..256)).unwrap();
        let y = sample(&img, &SamplingSpec::non_binary()).unwrap().truncate(k).unwrap();
        let cfg = SplConfig { max_iters: 30, ..SplConfig::default() };
        let (_, trace) = spl_reconstruct(&y, &cfg).unwrap();
        prop_assert!(trace.iterations() >= 1 && trace.iterations() <= 30);
        prop_assert!(trace.rows.last().unwrap().residual <= trace.initial_residual + 1e-12);
        prop_assert!(trace.rows.iter().all(|r| r.d >= 0.0));
    }
}

#[test]
fn patience_requires_consecutive_calm_iterations() {
    let y = sample(&phantom(), &SamplingSpec::binary()).unwrap();
    let mut lengths = Vec::new();
    for patience in [1, 3] {
        let cfg = SplConfig {
            patience,
            ..SplConfig::default()
        };
        let (_, trace) = spl_reconstruct(&y, &cfg).unwrap();
        if trace.converged {
            let d: Vec<f64> = trace.rows.iter().map(|r| r.d).collect();
            let tail = &d[d.len() - patience - 1..];
            assert!(tail.windows(2).all(|w| (w[1] - w[0]).abs() < cfg.epsilon) || *d.last().unwrap() == 0.0);
        }
        lengths.push(trace.iterations());
    }
    assert!(lengths[0] <= lengths[1], "{lengths:?}");
    assert!(SplConfig {
        patience: 0,
        ..SplConfig::default()
    }
    .validate()
    .is_err());
}
