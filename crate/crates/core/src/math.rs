//! Scalar special functions shared by the samplers and the likelihood code.

use libm::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(sum(exp(xs)))`, max-shifted. Returns `-inf` for an empty slice or all
/// `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `log sum_{l != k} exp(xs[l])`.
pub fn log_sum_exp_except(xs: &[f64], k: usize) -> f64 {
    let m = xs
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, &x)| (x - m).exp())
        .sum();
    m + s.ln()
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log Phi(x)`, accurate deep into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        if x > 5.0 {
            // Phi(x) = 1 - tiny
            (-0.5 * erfc(x / std::f64::consts::SQRT_2)).ln_1p()
        } else {
            norm_cdf(x).ln()
        }
    } else {
        // Mills-ratio asymptotic series
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2 * (1.0 - 9.0 * z2))));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `log(1 - Phi(x)) = log Phi(-x)`.
pub fn log_norm_sf(x: f64) -> f64 {
    log_norm_cdf(-x)
}

/// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative).
pub fn norm_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
                + 6.726_577_092_700_870_1e4)
                * r
                + 4.592_195_393_154_987_1e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545_4e3 * r + 2.872_908_573_572_194_3e4) * r
                + 3.930_789_580_009_271e4)
                * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { u } else { 1.0 - u };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_7e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal log density.
pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log(x (x+1) ... (x+n-1)) = lgamma(x+n) - lgamma(x)`.
///
/// Summed term by term for short runs, which avoids cancellation between two
/// large log-gamma values.
pub fn ln_rising(x: f64, n: u32) -> f64 {
    match n {
        0 => 0.0,
        1 => x.ln(),
        2..=32 => {
            let mut prod = 1.0f64;
            let mut acc = 0.0;
            for m in 0..n {
                prod *= x + m as f64;
                if prod > 1e280 {
                    acc += prod.ln();
                    prod = 1.0;
                }
            }
            acc + prod.ln()
        }
        _ => lgamma(x + n as f64) - lgamma(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_overflow_safe() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_sum_exp_except_two_terms() {
        assert!((log_sum_exp_except(&[0.3, -1.2], 0) + 1.2).abs() < 1e-15);
    }

    #[test]
    fn norm_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn log_norm_cdf_is_continuous_across_branches() {
        for &x in &[-30.0f64, 5.0] {
            let a = log_norm_cdf(x - 1e-9);
            let b = log_norm_cdf(x + 1e-9);
            assert!((a - b).abs() < 1e-6 * a.abs().max(1e-12), "{x}: {a} vs {b}");
        }
        // Phi(-40) ~ 3.6e-350 underflows, its log does not
        assert!((log_norm_cdf(-40.0) + 804.608_442_013_754).abs() < 1e-8);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &u in &[1e-10, 0.01, 0.3, 0.5, 0.9, 0.999_999] {
            assert!((norm_cdf(norm_quantile(u)) - u).abs() < 1e-12 * u.max(1e-3));
        }
    }

    #[test]
    fn ln_rising_matches_lgamma_difference() {
        for &x in &[0.1, 1.5, 37.2, 1000.0] {
            for n in [0u32, 1, 2, 7, 33, 80] {
                let direct = lgamma(x + n as f64) - lgamma(x);
                assert!((ln_rising(x, n) - direct).abs() < 1e-9 * direct.abs().max(1.0));
            }
        }
    }
}
