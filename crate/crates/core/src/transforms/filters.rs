//! One-dimensional analysis/synthesis kernels and the filter coefficients.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis, Zip};

/// Orthonormal two-channel filter bank applied with periodic extension.
///
/// Analysis is `lo[k] = Σ_n h[n] x[(2k + n) mod N]`; synthesis is its adjoint,
/// which is also its inverse because the filters are orthonormal.
#[derive(Debug, Clone)]
pub(crate) struct FilterBank {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FilterBank {
    /// Builds the bank from a lowpass filter; the highpass is the alternating
    /// flip `sign · (-1)^n h[L-1-n]`.
    fn from_lowpass(lo: Vec<f64>, sign: f64) -> Self {
        let len = lo.len();
        let hi = (0..len)
            .map(|n| {
                let alt = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * alt * lo[len - 1 - n]
            })
            .collect();
        FilterBank { lo, hi }
    }

    fn reversed(&self, sign: f64) -> Self {
        let mut lo = self.lo.clone();
        lo.reverse();
        Self::from_lowpass(lo, sign)
    }

    pub fn analyze(&self, x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let n = x.len();
        for k in 0..n / 2 {
            let (mut a, mut d) = (0.0, 0.0);
            for (t, (&hl, &hh)) in self.lo.iter().zip(&self.hi).enumerate() {
                let v = x[(2 * k + t) % n];
                a += hl * v;
                d += hh * v;
            }
            lo[k] = a;
            hi[k] = d;
        }
    }

    pub fn synthesize(&self, lo: &[f64], hi: &[f64], x: &mut [f64]) {
        let n = x.len();
        x.fill(0.0);
        for k in 0..n / 2 {
            for (t, (&hl, &hh)) in self.lo.iter().zip(&self.hi).enumerate() {
                x[(2 * k + t) % n] += hl * lo[k] + hh * hi[k];
            }
        }
    }
}

/// Daubechies 4-tap orthogonal wavelet.
pub(crate) fn daubechies4() -> &'static FilterBank {
    static BANK: OnceLock<FilterBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let s3 = 3f64.sqrt();
        let d = 4.0 * 2f64.sqrt();
        FilterBank::from_lowpass(
            vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d],
            1.0,
        )
    })
}

/// First-stage dual-tree pair: Farras near-symmetric filters, tree `b` one
/// sample behind tree `a`.
pub(crate) fn first_stage() -> &'static [FilterBank; 2] {
    static BANKS: OnceLock<[FilterBank; 2]> = OnceLock::new();
    BANKS.get_or_init(|| {
        let a = 0.088_388_347_648_32;
        let b = 0.695_879_989_034_00;
        let c = 0.011_226_792_152_54;
        let tree_a = vec![0.0, -a, a, b, b, a, -a, c, c, 0.0];
        let tree_b = vec![c, c, -a, a, b, b, a, -a, 0.0, 0.0];
        [
            FilterBank::from_lowpass(project_orthonormal(&tree_a), 1.0),
            FilterBank::from_lowpass(project_orthonormal(&tree_b), 1.0),
        ]
    })
}

/// Later-stage dual-tree pair: Kingsbury 10-tap q-shift filters, tree `b`
/// the time reverse of tree `a`.
pub(crate) fn qshift() -> &'static [FilterBank; 2] {
    static BANKS: OnceLock<[FilterBank; 2]> = OnceLock::new();
    BANKS.get_or_init(|| {
        let h0a = vec![
            0.035_163_84,
            0.0,
            -0.088_329_42,
            0.233_890_32,
            0.760_272_37,
            0.587_518_30,
            0.0,
            -0.114_301_84,
            0.0,
            0.0,
        ];
        let a = FilterBank::from_lowpass(project_orthonormal(&h0a), 1.0);
        let b = a.reversed(-1.0);
        [a, b]
    })
}

/// Nudges published (rounded) coefficients onto the nearest lowpass filter
/// satisfying `Σ h[n]h[n+2k] = δ_k`, `Σ h = √2` and `Σ (-1)^n h[n] = 0`.
/// Zero taps stay zero.
fn project_orthonormal(h: &[f64]) -> Vec<f64> {
    let support: Vec<usize> = (0..h.len()).filter(|&i| h[i] != 0.0).collect();
    let shifts = h.len() / 2;
    let mut x: Vec<f64> = h.to_vec();
    for _ in 0..20 {
        let mut residual = Vec::with_capacity(shifts + 1);
        let mut jac = Vec::with_capacity(shifts + 1);
        for k in 0..shifts {
            let mut r = -if k == 0 { 1.0 } else { 0.0 };
            let mut grad = vec![0.0; support.len()];
            for n in 0..x.len() {
                if n + 2 * k < x.len() {
                    r += x[n] * x[n + 2 * k];
                }
            }
            for (j, &i) in support.iter().enumerate() {
                if i + 2 * k < x.len() {
                    grad[j] += x[i + 2 * k];
                }
                if i >= 2 * k {
                    grad[j] += x[i - 2 * k];
                }
            }
            residual.push(r);
            jac.push(grad);
        }
        residual.push(x.iter().sum::<f64>() - 2f64.sqrt());
        jac.push(vec![1.0; support.len()]);
        // H(π) = 0 follows from the above only to within √eps, so pin it
        let alt = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
        residual.push(x.iter().enumerate().map(|(i, v)| alt(i) * v).sum());
        jac.push(support.iter().map(|&i| alt(i)).collect());
        if residual.iter().all(|r| r.abs() < 1e-15) {
            break;
        }
        // drop identically-zero constraints (shifts beyond the support)
        let rows: Vec<usize> = (0..jac.len()).filter(|&r| jac[r].iter().any(|g| *g != 0.0)).collect();
        let j = DMatrix::from_fn(rows.len(), support.len(), |r, c| jac[rows[r]][c]);
        let res = DVector::from_iterator(rows.len(), rows.iter().map(|&r| residual[r]));
        let svd = j.svd(true, true);
        let Ok(step) = svd.solve(&res, 1e-12) else {
            break;
        };
        for (jdx, &i) in support.iter().enumerate() {
            x[i] -= step[jdx];
        }
    }
    x
}

/// CDF 9/7 lifting with whole-point symmetric extension; lowpass DC gain √2.
pub(crate) mod cdf97 {
    const ALPHA: f64 = -1.586_134_342_059_924;
    const BETA: f64 = -0.052_980_118_572_961;
    const GAMMA: f64 = 0.882_911_075_530_934;
    const DELTA: f64 = 0.443_506_852_043_971;
    const K: f64 = 1.230_174_104_914_001;

    fn predict(s: &[f64], d: &mut [f64], c: f64) {
        let h = s.len();
        for i in 0..h {
            d[i] += c * (s[i] + s[(i + 1).min(h - 1)]);
        }
    }

    fn update(d: &[f64], s: &mut [f64], c: f64) {
        for i in 0..s.len() {
            s[i] += c * (d[i.saturating_sub(1)] + d[i]);
        }
    }

    pub fn analyze(x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let h = x.len() / 2;
        for i in 0..h {
            lo[i] = x[2 * i];
            hi[i] = x[2 * i + 1];
        }
        predict(lo, hi, ALPHA);
        update(hi, lo, BETA);
        predict(lo, hi, GAMMA);
        update(hi, lo, DELTA);
        let (ls, hs) = (std::f64::consts::SQRT_2 / K, K / std::f64::consts::SQRT_2);
        lo.iter_mut().for_each(|v| *v *= ls);
        hi.iter_mut().for_each(|v| *v *= hs);
    }

    pub fn synthesize(lo: &[f64], hi: &[f64], x: &mut [f64]) {
        let (ls, hs) = (K / std::f64::consts::SQRT_2, std::f64::consts::SQRT_2 / K);
        let mut s: Vec<f64> = lo.iter().map(|v| v * ls).collect();
        let mut d: Vec<f64> = hi.iter().map(|v| v * hs).collect();
        update(&d, &mut s, -DELTA);
        predict(&s, &mut d, -GAMMA);
        update(&d, &mut s, -BETA);
        predict(&s, &mut d, -ALPHA);
        for i in 0..s.len() {
            x[2 * i] = s[i];
            x[2 * i + 1] = d[i];
        }
    }
}

/// A 1-D two-channel transform stage.
#[derive(Clone, Copy)]
pub(crate) enum Kernel<'a> {
    Bank(&'a FilterBank),
    Cdf97,
}

impl Kernel<'_> {
    fn analyze(&self, x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        match self {
            Kernel::Bank(b) => b.analyze(x, lo, hi),
            Kernel::Cdf97 => cdf97::analyze(x, lo, hi),
        }
    }

    fn synthesize(&self, lo: &[f64], hi: &[f64], x: &mut [f64]) {
        match self {
            Kernel::Bank(b) => b.synthesize(lo, hi, x),
            Kernel::Cdf97 => cdf97::synthesize(lo, hi, x),
        }
    }
}

/// Splits `x` along `axis` into (low, high) halves.
pub(crate) fn analyze_axis(x: &Array2<f64>, axis: Axis, k: Kernel) -> (Array2<f64>, Array2<f64>) {
    let mut shape = [x.nrows(), x.ncols()];
    let n = shape[axis.index()];
    shape[axis.index()] = n / 2;
    let mut lo = Array2::zeros(shape);
    let mut hi = Array2::zeros(shape);
    let mut buf = vec![0.0; n];
    let mut lbuf = vec![0.0; n / 2];
    let mut hbuf = vec![0.0; n / 2];
    Zip::from(x.lanes(axis))
        .and(lo.lanes_mut(axis))
        .and(hi.lanes_mut(axis))
        .for_each(|src, mut l, mut h| {
            buf.iter_mut().zip(src.iter()).for_each(|(b, &v)| *b = v);
            k.analyze(&buf, &mut lbuf, &mut hbuf);
            l.iter_mut().zip(&lbuf).for_each(|(d, &v)| *d = v);
            h.iter_mut().zip(&hbuf).for_each(|(d, &v)| *d = v);
        });
    (lo, hi)
}

/// Inverse of [`analyze_axis`].
pub(crate) fn synthesize_axis(lo: &Array2<f64>, hi: &Array2<f64>, axis: Axis, k: Kernel) -> Array2<f64> {
    let mut shape = [lo.nrows(), lo.ncols()];
    let half = shape[axis.index()];
    shape[axis.index()] = 2 * half;
    let mut out = Array2::zeros(shape);
    let mut buf = vec![0.0; 2 * half];
    let mut lbuf = vec![0.0; half];
    let mut hbuf = vec![0.0; half];
    Zip::from(out.lanes_mut(axis))
        .and(lo.lanes(axis))
        .and(hi.lanes(axis))
        .for_each(|mut dst, l, h| {
            lbuf.iter_mut().zip(l.iter()).for_each(|(b, &v)| *b = v);
            hbuf.iter_mut().zip(h.iter()).for_each(|(b, &v)| *b = v);
            k.synthesize(&lbuf, &hbuf, &mut buf);
            dst.iter_mut().zip(&buf).for_each(|(d, &v)| *d = v);
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_orthonormal(h: &[f64]) {
        for k in 0..h.len() / 2 {
            let s: f64 = (0..h.len() - 2 * k).map(|n| h[n] * h[n + 2 * k]).sum();
            let want = if k == 0 { 1.0 } else { 0.0 };
            assert!((s - want).abs() < 1e-14, "shift {k}: {s}");
        }
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn banks_are_orthonormal() {
        check_orthonormal(&daubechies4().lo);
        for bank in first_stage().iter().chain(qshift().iter()) {
            check_orthonormal(&bank.lo);
            let hi_sum: f64 = bank.hi.iter().sum();
            assert!(hi_sum.abs() < 1e-14);
        }
    }

    #[test]
    fn projection_only_touches_rounding_digits() {
        let q = &qshift()[0].lo;
        assert!((q[4] - 0.760_272_37).abs() < 1e-7);
        assert_eq!(q[1], 0.0);
        assert!((first_stage()[0].lo[3] - 0.695_879_989_034).abs() < 1e-11);
    }

    #[test]
    fn qshift_trees_are_time_reversed() {
        let [a, b] = qshift();
        let mut r = a.lo.clone();
        r.reverse();
        assert_eq!(r, b.lo);
    }

    #[test]
    fn periodic_bank_round_trip() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7919) % 23) as f64 - 11.0).collect();
        for bank in [daubechies4(), &qshift()[1], &first_stage()[0]] {
            let (mut lo, mut hi) = (vec![0.0; 8], vec![0.0; 8]);
            bank.analyze(&x, &mut lo, &mut hi);
            let mut y = vec![0.0; 16];
            bank.synthesize(&lo, &hi, &mut y);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cdf97_round_trip_and_constant() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin() * 50.0).collect();
        let (mut lo, mut hi) = (vec![0.0; 6], vec![0.0; 6]);
        cdf97::analyze(&x, &mut lo, &mut hi);
        let mut y = vec![0.0; 12];
        cdf97::synthesize(&lo, &hi, &mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        cdf97::analyze(&[3.0; 8], &mut lo[..4], &mut hi[..4]);
        assert!(hi[..4].iter().all(|v| v.abs() < 1e-12));
        assert!(lo[..4].iter().all(|v| (v - 3.0 * 2f64.sqrt()).abs() < 1e-12));
    }
}
