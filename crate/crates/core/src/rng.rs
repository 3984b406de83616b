//! Seeded random streams and the five sampling kernels used by the sweep:
//! Polya-Gamma, truncated normal, Dirichlet, multivariate normal and
//! categorical.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{PctmError, Result};
use crate::math::{log_norm_cdf, norm_cdf, norm_quantile};

/// Deterministic random stream. Identical seeds and call sequences give
/// identical draws on every platform (ChaCha20 core).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream_id` of a parent seed:
/// `splitmix64(seed ^ splitmix64(stream_id))`.
pub fn split_seed(seed: u64, stream_id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream_id))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed (not its position).
    pub fn child(&self, stream_id: u64) -> RngStream {
        RngStream::new(split_seed(self.seed, stream_id))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.std_normal()
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

// ---------------------------------------------------------------------------
// Polya-Gamma

/// How PG(b, c) is drawn for integer `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgMethod {
    /// Sum of `b` exact PG(1, c) draws.
    #[default]
    Exact,
    /// Moment-matched normal when `b` exceeds the threshold, exact otherwise.
    NormalAbove(u32),
}

const PG_TRUNC: f64 = 0.64;
const PI2_OVER_8: f64 = std::f64::consts::PI * std::f64::consts::PI / 8.0;

/// Mean of PG(b, c).
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0 * (1.0 - c * c / 12.0)
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// Variance of PG(b, c).
pub fn polya_gamma_var(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        b * (1.0 / 24.0 - c * c / 60.0)
    } else {
        let sech_half = 1.0 / (0.5 * c).cosh();
        if c > 700.0 {
            b * 0.25 * (1.0 / (c * c * c) * 2.0 - sech_half * sech_half / (c * c))
        } else {
            b * 0.25 / (c * c * c) * (c.sinh() - c) * sech_half * sech_half
        }
    }
}

/// Alternating-series coefficient `a_n(x)` of the Jacobi density.
fn jacobi_coef(n: u32, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    let pi = std::f64::consts::PI;
    if x > PG_TRUNC {
        pi * k * (-0.5 * k * k * pi * pi * x).exp()
    } else {
        (2.0 / (pi * x)).powf(1.5) * pi * k * (-2.0 * k * k / x).exp()
    }
}

/// Probability of proposing from the exponential (right) piece.
fn pg_right_mass(z: f64) -> f64 {
    let t = PG_TRUNC;
    let fz = PI2_OVER_8 + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let qdivp = 4.0 / std::f64::consts::PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse Gaussian with mean `1/z`, shape 1, truncated to `(0, PG_TRUNC)`.
fn truncated_inv_gauss(rng: &mut RngStream, z: f64) -> f64 {
    let r = PG_TRUNC;
    let mu = 1.0 / z;
    if mu > r {
        loop {
            let mut x;
            loop {
                let mut e1 = rng.exp1();
                let mut e2 = rng.exp1();
                while e1 * e1 > 2.0 * e2 / r {
                    e1 = rng.exp1();
                    e2 = rng.exp1();
                }
                x = r / ((1.0 + r * e1) * (1.0 + r * e1));
                if x < r {
                    break;
                }
            }
            let alpha = (-0.5 * z * z * x).exp();
            if rng.uniform() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let y = rng.std_normal();
            let y = y * y;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            let mut x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.uniform() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < r {
                return x;
            }
        }
    }
}

/// One exact PG(1, c) draw (Devroye-type alternating-series sampler).
fn polya_gamma_one(rng: &mut RngStream, c: f64) -> f64 {
    let z = 0.5 * c.abs();
    let fz = PI2_OVER_8 + 0.5 * z * z;
    let right_mass = pg_right_mass(z);
    loop {
        let x = if rng.uniform() < right_mass {
            PG_TRUNC + rng.exp1() / fz
        } else {
            truncated_inv_gauss(rng, z)
        };
        let mut s = jacobi_coef(0, x);
        let y = rng.uniform() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= jacobi_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += jacobi_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Draw from PG(b, c) for a positive integer `b`.
pub fn sample_polya_gamma(rng: &mut RngStream, b: f64, c: f64) -> Result<f64> {
    sample_polya_gamma_with(rng, b, c, PgMethod::Exact)
}

pub fn sample_polya_gamma_with(rng: &mut RngStream, b: f64, c: f64, method: PgMethod) -> Result<f64> {
    if !(b > 0.0) || b.fract() != 0.0 || !c.is_finite() {
        return Err(PctmError::Domain(format!(
            "PG(b, c) requires a positive integer b and finite c, got b = {b}, c = {c}"
        )));
    }
    let n = b as u64;
    if let PgMethod::NormalAbove(threshold) = method {
        if n > threshold as u64 {
            let m = polya_gamma_mean(b, c);
            let sd = polya_gamma_var(b, c).sqrt();
            // the normal approximation can stray below zero for tiny variances
            return Ok(rng.normal(m, sd).max(f64::MIN_POSITIVE));
        }
    }
    Ok((0..n).map(|_| polya_gamma_one(rng, c)).sum())
}

// ---------------------------------------------------------------------------
// Truncated normal

const TN_TAIL: f64 = 3.0;

/// Standard normal restricted to `[a, b]` with `a >= TN_TAIL`.
fn std_normal_right_tail(rng: &mut RngStream, a: f64, b: f64) -> f64 {
    if b.is_finite() && b - a < 1.0 / a {
        // short interval: uniform proposal
        loop {
            let z = a + (b - a) * rng.uniform();
            if rng.uniform_open().ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a + rng.exp1() / alpha;
        if z > b {
            continue;
        }
        let d = z - alpha;
        if rng.uniform() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Inverse-CDF draw on `[a, b]` with `a <= 0` so the lower CDF value keeps
/// full relative precision.
fn std_normal_inverse_cdf(rng: &mut RngStream, a: f64, b: f64) -> f64 {
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    let u = pa + rng.uniform() * (pb - pa);
    norm_quantile(u).clamp(a, b)
}

fn std_truncated_normal(rng: &mut RngStream, a: f64, b: f64) -> f64 {
    if a >= TN_TAIL {
        std_normal_right_tail(rng, a, b)
    } else if b <= -TN_TAIL {
        -std_normal_right_tail(rng, -b, -a)
    } else if a > 0.0 {
        -std_normal_inverse_cdf(rng, -b, -a)
    } else {
        std_normal_inverse_cdf(rng, a, b)
    }
}

/// Draw from N(mean, sd^2) restricted to `[lower, upper)`.
pub fn sample_truncated_normal(rng: &mut RngStream, mean: f64, sd: f64, lower: f64, upper: f64) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(PctmError::Domain(format!("truncated normal sd must be positive, got {sd}")));
    }
    if !(lower < upper) || !mean.is_finite() {
        return Err(PctmError::Domain(format!(
            "truncated normal needs lower < upper and finite mean, got [{lower}, {upper}) with mean {mean}"
        )));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = std_truncated_normal(rng, a, b);
    let mut x = mean + sd * z;
    if x < lower {
        x = lower;
    }
    if x >= upper {
        x = upper.next_down();
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Dirichlet, multivariate normal, categorical

/// Log of a Gamma(shape, 1) draw; stays finite for small shapes.
fn log_gamma_draw(rng: &mut RngStream, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + rng.uniform_open().ln() / shape
    } else {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    }
}

pub fn sample_dirichlet(rng: &mut RngStream, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(PctmError::Domain("Dirichlet parameters must be positive and finite".into()));
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_draw(rng, a)).collect();
    Ok(crate::math::softmax(&logs))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(PctmError::NotSpd(format!("{}x{} is not square", cov.nrows(), cov.ncols())));
    }
    let n = cov.nrows();
    for r in 0..n {
        for c in 0..r {
            let (x, y) = (cov[(r, c)], cov[(c, r)]);
            if (x - y).abs() > 1e-10 * (1.0 + x.abs().max(y.abs())) {
                return Err(PctmError::NotSpd(format!("asymmetric at ({r}, {c})")));
            }
        }
    }
    cov.clone()
        .cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| PctmError::NotSpd("Cholesky factorization failed".into()))
}

/// Draw `mean + L z` for a lower Cholesky factor `L`.
pub fn sample_mvn_chol(rng: &mut RngStream, mean: &[f64], chol: &DMatrix<f64>) -> Vec<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.std_normal()));
    let lz = chol * z;
    mean.iter().zip(lz.iter()).map(|(m, d)| m + d).collect()
}

pub fn sample_mvn(rng: &mut RngStream, mean: &[f64], cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    if cov.nrows() != mean.len() {
        return Err(PctmError::Dimension(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let l = cholesky(cov)?;
    Ok(sample_mvn_chol(rng, mean, &l))
}

/// Draw an index with probability proportional to `weights`, or to
/// `exp(weights)` when `log_space` is set.
pub fn sample_categorical(rng: &mut RngStream, weights: &[f64], log_space: bool) -> Result<usize> {
    let probs: Vec<f64> = if log_space {
        if weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(PctmError::Domain("log-weights must not be NaN or +inf".into()));
        }
        let m = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(PctmError::Domain("all log-weights are -inf".into()));
        }
        weights.iter().map(|&w| (w - m).exp()).collect()
    } else {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(PctmError::Domain("weights must be finite and nonnegative".into()));
        }
        weights.to_vec()
    };
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(PctmError::Domain("all weights are zero".into()));
    }
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = k;
            if target < acc {
                return Ok(k);
            }
        }
    }
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(11);
        let mut b = RngStream::new(11);
        for _ in 0..100 {
            assert_eq!(a.std_normal().to_bits(), b.std_normal().to_bits());
        }
        assert_ne!(split_seed(11, 0), split_seed(11, 1));
    }

    #[test]
    fn pg_mean_at_zero_tilt() {
        let mut rng = RngStream::new(1);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_polya_gamma(&mut rng, 1.0, 0.0).unwrap()).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.25).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn pg_mean_at_tilt_two() {
        let mut rng = RngStream::new(2);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_polya_gamma(&mut rng, 1.0, 2.0).unwrap()).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.190_398_538_988_941_2).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn pg_is_additive_in_shape() {
        for seed in 0..3u64 {
            let mut rng = RngStream::new(100 + seed);
            let c = 0.7 + seed as f64;
            let one: Vec<f64> = (0..20_000).map(|_| sample_polya_gamma(&mut rng, 1.0, c).unwrap()).collect();
            let three: Vec<f64> = (0..20_000).map(|_| sample_polya_gamma(&mut rng, 3.0, c).unwrap()).collect();
            let (m1, se1) = mean_se(&one);
            let (m3, se3) = mean_se(&three);
            let se = (9.0 * se1 * se1 + se3 * se3).sqrt();
            assert!((m3 - 3.0 * m1).abs() < 4.0 * se);
        }
    }

    #[test]
    fn pg_rejects_nonpositive_shape() {
        let mut rng = RngStream::new(0);
        assert!(sample_polya_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_polya_gamma(&mut rng, -2.0, 1.0).is_err());
    }

    #[test]
    fn pg_normal_approximation_matches_moments() {
        let mut rng = RngStream::new(5);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| sample_polya_gamma_with(&mut rng, 200.0, 1.5, PgMethod::NormalAbove(50)).unwrap())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - polya_gamma_mean(200.0, 1.5)).abs() < 4.0 * se);
    }

    #[test]
    fn half_normal_means() {
        let mut rng = RngStream::new(3);
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let pos: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&mut rng, 0.0, 1.0, 0.0, f64::INFINITY).unwrap())
            .collect();
        let neg: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&mut rng, 0.0, 1.0, f64::NEG_INFINITY, 0.0).unwrap())
            .collect();
        assert!(pos.iter().all(|&x| x >= 0.0));
        assert!(neg.iter().all(|&x| x < 0.0));
        let (m, se) = mean_se(&pos);
        assert!((m - target).abs() < 3.0 * se);
        let (m, se) = mean_se(&neg);
        assert!((m + target).abs() < 3.0 * se);
    }

    #[test]
    fn extreme_truncation_terminates() {
        let mut rng = RngStream::new(4);
        for _ in 0..10_000 {
            let x = sample_truncated_normal(&mut rng, -8.0, 1.0, 0.0, f64::INFINITY).unwrap();
            assert!(x.is_finite() && x >= 0.0);
            let y = sample_truncated_normal(&mut rng, 40.0, 1.0, f64::NEG_INFINITY, 0.0).unwrap();
            assert!(y.is_finite() && y < 0.0);
            let z = sample_truncated_normal(&mut rng, 0.0, 2.0, 9.0, 9.01).unwrap();
            assert!((9.0..9.01).contains(&z));
        }
    }

    #[test]
    fn truncated_normal_rejects_bad_arguments() {
        let mut rng = RngStream::new(0);
        assert!(sample_truncated_normal(&mut rng, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(sample_truncated_normal(&mut rng, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn dirichlet_concentrated_and_degenerate() {
        let mut rng = RngStream::new(6);
        let d = sample_dirichlet(&mut rng, &[1e6, 1e6]).unwrap();
        assert!((d[0] - 0.5).abs() < 0.01 && (d[1] - 0.5).abs() < 0.01);
        assert_eq!(sample_dirichlet(&mut rng, &[1.0]).unwrap(), vec![1.0]);
        assert!(sample_dirichlet(&mut rng, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dirichlet_mean_and_normalization() {
        let mut rng = RngStream::new(7);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| sample_dirichlet(&mut rng, &[2.0, 1.0, 1.0]).unwrap()).collect();
        for d in &draws {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x > 0.0));
        }
        for (k, want) in [0.5, 0.25, 0.25].into_iter().enumerate() {
            let xs: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - want).abs() < 3.0 * se, "component {k}: {m}");
        }
        // tiny concentration stays strictly positive
        let d = sample_dirichlet(&mut rng, &vec![0.1; 500]).unwrap();
        assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn mvn_identity_covariance() {
        let mut rng = RngStream::new(8);
        let n = 100_000;
        let cov = DMatrix::identity(3, 3);
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_mvn(&mut rng, &[0.0; 3], &cov).unwrap()).collect();
        for a in 0..3 {
            for b in 0..3 {
                let c = draws.iter().map(|d| d[a] * d[b]).sum::<f64>() / n as f64;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 0.02, "({a},{b}) {c}");
            }
        }
    }

    #[test]
    fn mvn_one_dimensional_and_degenerate() {
        let mut rng = RngStream::new(9);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let xs: Vec<f64> = (0..50_000).map(|_| sample_mvn(&mut rng, &[1.0], &cov).unwrap()[0]).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 4.0 * se);
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var - 4.0).abs() < 0.1);

        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-12, 1e-12]));
        let d = sample_mvn(&mut rng, &[5.0, -5.0], &tiny).unwrap();
        assert!((d[0] - 5.0).abs() < 1e-4 && (d[1] + 5.0).abs() < 1e-4);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(sample_mvn(&mut rng, &[0.0, 0.0], &bad), Err(PctmError::NotSpd(_))));
    }

    #[test]
    fn categorical_cases() {
        let mut rng = RngStream::new(10);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&mut rng, &[0.0, 1.0, 0.0], false).unwrap(), 1);
        }
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&mut rng, &[1000.0, 1000.0], true).unwrap() == 1)
            .count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());

        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&mut rng, &[1.0, 3.0], false).unwrap() == 1)
            .count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.75).abs() < 3.0 * (0.75 * 0.25 / n as f64).sqrt());

        assert!(sample_categorical(&mut rng, &[0.0, 0.0], false).is_err());
        assert!(sample_categorical(&mut rng, &[f64::NEG_INFINITY; 2], true).is_err());
    }
}
