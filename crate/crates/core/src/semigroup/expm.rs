//! Dense matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Padé(13, 13) numerator coefficients for `exp`.
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled Padé(13) approximant is accurate
/// to double precision.
const THETA_13: f64 = 5.371_920_351_148_152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if n == 1 {
        let v = a[(0, 0)].exp();
        return finite(DMatrix::from_element(1, 1, v));
    }

    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::NumericalRange("matrix exponential input".into()));
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * B13[13] + &a4 * B13[11] + &a2 * B13[9];
    let u_poly = &a6 * &u_inner + &a6 * B13[7] + &a4 * B13[5] + &a2 * B13[3] + &ident * B13[1];
    let u = &scaled * u_poly;

    let v_inner = &a6 * B13[12] + &a4 * B13[10] + &a2 * B13[8];
    let v = &a6 * &v_inner + &a6 * B13[6] + &a4 * B13[4] + &a2 * B13[2] + &ident * B13[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or(Error::NumericalSingularity)?;
    for _ in 0..s {
        r = &r * &r;
    }
    finite(r)
}

fn finite(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NumericalRange("matrix exponential overflow".into()))
    }
}
