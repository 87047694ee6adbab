//! Standard-normal density and distribution function.
//!
//! The standard library has no `erf`; the CDF here is the classical Cody
//! rational-approximation evaluation of `erf`/`erfc` (double precision,
//! relative error < 1e-16 in the erf regions), which keeps the heavy
//! numerical paths dependency-free. Values are pinned against an external
//! statistics library in the test suite.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

/// Standard normal density φ(x).
#[inline]
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / TAU.sqrt()
}

/// Standard normal CDF Φ(x) = P[N(0,1) ≤ x].
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail Φ̄(x) = P[N(0,1) > x], accurate far into the tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_9e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_6e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_5e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// `exp(-y²)` with the argument split to avoid cancellation, as in Cody's
/// original evaluation (y ≥ 0.46875 here).
#[inline]
fn exp_neg_ysq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut xnum = ERF_A[4] * z;
        let mut xden = z;
        for i in 0..3 {
            xnum = (xnum + ERF_A[i]) * z;
            xden = (xden + ERF_B[i]) * z;
        }
        x * (xnum + ERF_A[3]) / (xden + ERF_B[3])
    } else {
        let e = erfc_positive(y);
        if x >= 0.0 {
            1.0 - e
        } else {
            e - 1.0
        }
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < -0.46875 {
        2.0 - erfc_positive(-x)
    } else if x <= 0.46875 {
        1.0 - erf(x)
    } else {
        erfc_positive(x)
    }
}

/// erfc(y) for y > 0.46875.
fn erfc_positive(y: f64) -> f64 {
    if y <= 4.0 {
        let mut xnum = ERFC_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + ERFC_C[i]) * y;
            xden = (xden + ERFC_D[i]) * y;
        }
        exp_neg_ysq(y) * (xnum + ERFC_C[7]) / (xden + ERFC_D[7])
    } else if y < 26.6 {
        let z = 1.0 / (y * y);
        let mut xnum = ERFC_P[5] * z;
        let mut xden = z;
        for i in 0..4 {
            xnum = (xnum + ERFC_P[i]) * z;
            xden = (xden + ERFC_Q[i]) * z;
        }
        let r = z * (xnum + ERFC_P[4]) / (xden + ERFC_Q[4]);
        exp_neg_ysq(y) / y * (1.0 / PI.sqrt() - r)
    } else {
        0.0
    }
}
