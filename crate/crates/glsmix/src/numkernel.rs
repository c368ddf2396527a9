//! Scalar special functions and Gaussian density kernels.
//!
//! Everything here is pure and reentrant. Cdf values saturate to
//! `[CDF_FLOOR, CDF_CEIL]` so that downstream logarithms stay finite.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma;

/// Lower saturation bound for cdf values.
pub const CDF_FLOOR: f64 = 1e-300;
/// Upper saturation bound for cdf values.
pub const CDF_CEIL: f64 = 1.0 - 1e-16;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(CDF_FLOOR, CDF_CEIL)
}

/// Complementary error function via Cody's rational approximations
/// (relative accuracy around 1e-15 on the whole line).
pub fn erfc(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_5e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_1e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_170_6e3,
    ];
    const C: [f64; 9] = [
        5.641_884_969_886_700_9e-1,
        8.883_149_794_388_376e0,
        6.611_919_063_714_163e1,
        2.986_351_381_974_001_3e2,
        8.819_522_212_417_691e2,
        1.712_047_612_634_070_6e3,
        2.051_078_377_826_071_5e3,
        1.230_339_354_797_997_2e3,
        2.153_115_354_744_038_5e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_5e1,
        1.176_939_508_913_125e2,
        5.371_811_018_620_098e2,
        1.621_389_574_566_690_2e3,
        3.290_799_235_733_459_7e3,
        4.362_619_090_143_247e3,
        3.439_367_674_143_721_6e3,
        1.230_339_354_803_749_4e3,
    ];
    const P: [f64; 6] = [
        3.053_266_349_612_323_4e-1,
        3.603_448_999_498_044_4e-1,
        1.257_817_261_112_292_45e-1,
        1.608_378_514_874_227_7e-2,
        6.587_491_615_298_378e-4,
        1.631_538_713_730_209_8e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_4e0,
        1.872_952_849_923_460_5e0,
        5.279_051_029_514_284e-1,
        6.051_834_131_244_132e-2,
        2.335_204_976_268_691_8e-3,
    ];
    let y = x.abs();
    let result = if y <= 0.46875 {
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        let erf = x * (num + A[3]) / (den + B[3]);
        return 1.0 - erf;
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.6 {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let mut r = ysq * (num + P[4]) / (den + Q[4]);
        const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_563e-1;
        r = (FRAC_1_SQRT_PI - r) / y;
        let yt = (y * 16.0).trunc() / 16.0;
        let del = (y - yt) * (y + yt);
        (-yt * yt).exp() * (-del).exp() * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard Gaussian cdf.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    clamp_prob(0.5 * erfc(-x / std::f64::consts::SQRT_2))
}

/// Standard Gaussian density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard Gaussian quantile (Acklam's rational approximation refined by one
/// Newton step).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
        return Err(Error::InvalidArgument(format!(
            "quantile requires p in (0,1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Newton polish; the pdf is well away from zero wherever the
    // approximation error matters.
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    Ok(x - e / std_normal_pdf(x))
}

/// Student t cdf with `nu` degrees of freedom, via the regularized incomplete
/// beta function.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    if nu <= 0.0 || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "degrees of freedom must be positive, got {nu}"
        )));
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    let ib = beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    let p = if x > 0.0 { 1.0 - 0.5 * ib } else { 0.5 * ib };
    Ok(clamp_prob(p))
}

/// Modified Bessel function of the second kind `K_eta(x)` for real order
/// `eta > 0` and argument `x > 0`.
///
/// Temme's series for small arguments, Steed's continued fraction CF2 for
/// large ones, followed by the upward order recurrence. Switch point x = 2.
pub fn bessel_k(eta: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "bessel_k requires x > 0, got {x}"
        )));
    }
    let order = eta.abs(); // K_{-eta} = K_eta
    if !order.is_finite() {
        return Err(Error::InvalidParameter("non-finite order".into()));
    }
    let nl = (order + 0.5).floor() as usize;
    let mu = order - nl as f64; // |mu| <= 0.5

    let (mut k_mu, mut k_mu1) = if x <= 2.0 {
        bessel_k_temme(mu, x)
    } else {
        bessel_k_cf2(mu, x)
    };
    // Upward recurrence K_{nu+1} = (2 nu / x) K_nu + K_{nu-1}.
    let mut cur = mu;
    for _ in 0..nl {
        cur += 1.0;
        let next = 2.0 * cur / x * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    Ok(k_mu)
}

/// Temme coefficients: gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu),
/// gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2, plus the reciprocals.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam2 = 0.5 * (gammi + gampl);
    let gam1 = if mu.abs() < 1e-6 {
        // Taylor series around mu = 0 avoids cancellation:
        // 1/Gamma(1+-mu) = 1 +- g*mu + c2*mu^2 +- c3*mu^3 + ...
        const EULER: f64 = 0.577_215_664_901_532_9;
        const C3: f64 = -0.042_002_635_034_095_24;
        -(EULER + C3 * mu * mu)
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    (gam1, gam2, gampl, gammi)
}

/// Returns (K_mu(x), K_{mu+1}(x)) for |mu| <= 1/2 and x <= 2.
fn bessel_k_temme(mu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;

    let x1 = 0.5 * x;
    let pimu = std::f64::consts::PI * mu;
    let fact = if pimu.abs() < EPS {
        1.0
    } else {
        pimu / pimu.sin()
    };
    let d = -x1.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let e = e.exp();
    let mut p = 0.5 * e / gampl;
    let mut q = 0.5 / (e * gammi);
    let mut c = 1.0;
    let d2 = x1 * x1;
    let mut sum1 = p;
    for i in 1..=MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu * mu);
        c *= d2 / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

/// Returns (K_mu(x), K_{mu+1}(x)) for |mu| <= 1/2 and x > 2 via Steed's CF2.
fn bessel_k_cf2(mu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;

    let a1 = 0.25 - mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = delh;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..=MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    let h = a1 * h;
    let k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
    (k_mu, k_mu1)
}

/// Log-density of N(0, Sigma) at `z` given the lower Cholesky factor of Sigma.
pub fn mvn_logpdf(z: &DVector<f64>, chol_lower: &DMatrix<f64>) -> Result<f64> {
    let m = chol_lower.nrows();
    if chol_lower.ncols() != m || z.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "z has length {}, Cholesky factor is {}x{}",
            z.len(),
            m,
            chol_lower.ncols()
        )));
    }
    // Forward substitution L y = z.
    let mut y = z.clone();
    let mut log_det = 0.0;
    for i in 0..m {
        let mut acc = y[i];
        for j in 0..i {
            acc -= chol_lower[(i, j)] * y[j];
        }
        let lii = chol_lower[(i, i)];
        y[i] = acc / lii;
        log_det += lii.ln();
    }
    Ok(-0.5 * m as f64 * LN_2PI - log_det - 0.5 * y.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Complementary-error-function series oracle: erfc via its Taylor series
    /// for |x| < 3 (enough terms for 1e-12), independent of statrs.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            let nf = n as f64;
            term *= -x * x / nf;
            sum += term / (2.0 * nf + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn normal_cdf_oracle(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn normal_cdf_at_zero() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
    }

    #[test]
    fn normal_cdf_derived_values() {
        assert!((std_normal_cdf(-0.70711) - normal_cdf_oracle(-0.70711)).abs() < 1e-12);
        assert!((std_normal_cdf(-0.70711) - 0.23975).abs() < 1e-5);
        assert!((std_normal_cdf(1.96) - normal_cdf_oracle(1.96)).abs() < 1e-12);
        assert!((std_normal_cdf(1.96) - 0.97500).abs() < 1e-5);
    }

    #[test]
    fn normal_cdf_symmetry() {
        for &x in &[0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 7.0] {
            assert!(
                (std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() <= 1e-14,
                "symmetry violated at {x}"
            );
        }
    }

    #[test]
    fn normal_cdf_quantile_roundtrip() {
        let mut p = 1e-10;
        while p < 1.0 - 1e-10 {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-8 * p.max(1e-3), "p={p}");
            p *= 3.7;
            if p > 0.5 && p < 1.0 - 1e-9 {
                p = 1.0 - (1.0 - p) / 3.7;
            }
        }
    }

    /// Incomplete-beta quadrature oracle: T_nu(x) for x<0 as
    /// 0.5 * I_{nu/(nu+x^2)}(nu/2, 1/2) with the beta integral evaluated by
    /// Simpson quadrature on a fine grid.
    fn student_cdf_oracle_neg(x: f64, nu: f64) -> f64 {
        assert!(x < 0.0);
        let z = nu / (nu + x * x);
        let f = |t: f64| t.powf(0.5 * nu - 1.0) * (1.0 - t).powf(-0.5);
        // Integrand is singular at t=1 but z < 1 here; plain Simpson suffices.
        let n = 400_000;
        let h = z / n as f64;
        let mut acc = f(1e-300) + f(z);
        for i in 1..n {
            let t = i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        let integral = acc * h / 3.0;
        let beta = gamma(0.5 * nu) * gamma(0.5) / gamma(0.5 * nu + 0.5);
        0.5 * integral / beta
    }

    #[test]
    fn student_cdf_values() {
        assert_eq!(student_t_cdf(0.0, 3.7).unwrap(), 0.5);
        // Cauchy: 1/2 + atan(1)/pi = 0.75
        assert!((student_t_cdf(1.0, 1.0).unwrap() - 0.75).abs() < 1e-14);
        let oracle = student_cdf_oracle_neg(-1.0, 3.0);
        assert!((student_t_cdf(-1.0, 3.0).unwrap() - oracle).abs() < 1e-6);
        assert!((student_t_cdf(-1.0, 3.0).unwrap() - 0.19550).abs() < 1e-5);
    }

    #[test]
    fn student_cdf_symmetry_and_errors() {
        for &x in &[0.3, 1.7, 4.0] {
            let a = student_t_cdf(-x, 2.5).unwrap();
            let b = student_t_cdf(x, 2.5).unwrap();
            assert!((a - (1.0 - b)).abs() < 1e-14);
        }
        assert!(student_t_cdf(1.0, 0.0).is_err());
        assert!(student_t_cdf(1.0, -2.0).is_err());
    }

    #[test]
    fn student_cdf_gaussian_limit() {
        let mut x = -5.0;
        while x <= 5.0 {
            let t = student_t_cdf(x, 1e4).unwrap();
            assert!((t - std_normal_cdf(x)).abs() < 1e-3, "x={x}");
            x += 0.25;
        }
    }

    #[test]
    fn bessel_half_integer_closed_form() {
        // K_{1/2}(x) = sqrt(pi/(2x)) exp(-x)
        let k = bessel_k(0.5, 1.0).unwrap();
        let closed = (std::f64::consts::PI / 2.0).sqrt() * (-1.0f64).exp();
        assert!((k - closed).abs() < 1e-12);
        assert!((k - 0.46107).abs() < 1e-5);
    }

    #[test]
    fn bessel_half_integer_identity_over_range() {
        let mut x = 0.01;
        while x <= 50.0 {
            let k = bessel_k(0.5, x).unwrap();
            let val = k * x.exp() * (2.0 * x / std::f64::consts::PI).sqrt();
            assert!((val - 1.0).abs() < 1e-12, "x={x}: {val}");
            x *= 1.17;
        }
    }

    /// Series/asymptotic reference oracle for K_1 from the integer-order
    /// ascending series K_1(x) = ... (Abramowitz & Stegun 9.6.11), summed in
    /// extended precision via Kahan accumulation.
    fn bessel_k1_series(x: f64) -> f64 {
        const EULER: f64 = 0.577_215_664_901_532_9;
        // K_1(x) = ln(x/2) I_1(x) + 1/x
        //          - (x/4) sum_{k>=0} (psi(k+1)+psi(k+2)) (x^2/4)^k /(k!(k+1)!)
        let x2 = 0.25 * x * x;
        let mut i1 = 0.0f64;
        let mut term = 0.5 * x; // (x/2) (x^2/4)^k / (k! (k+1)!)
        let mut fact_term = 1.0f64; // (x^2/4)^k / (k! (k+1)!)
        let mut sum = 0.0f64;
        for k in 0..60 {
            let kf = k as f64;
            if k > 0 {
                term *= x2 / (kf * (kf + 1.0));
                fact_term *= x2 / (kf * (kf + 1.0));
            }
            i1 += term;
            // psi(k+1) + psi(k+2) with psi(1) = -gamma
            let psi1 = -EULER + (1..=k).map(|j| 1.0 / j as f64).sum::<f64>();
            let psi2 = psi1 + 1.0 / (kf + 1.0);
            sum += (psi1 + psi2) * fact_term;
        }
        (0.5 * x).ln() * i1 + 1.0 / x - 0.25 * x * sum
    }

    #[test]
    fn bessel_order_one() {
        let k = bessel_k(1.0, 1.0).unwrap();
        assert!((k - bessel_k1_series(1.0)).abs() < 1e-8);
        assert!((k - 0.60191).abs() < 1e-5);
        let k2 = bessel_k(1.0, 3.0).unwrap();
        assert!((k2 - bessel_k1_series(3.0)).abs() < 1e-8);
    }

    #[test]
    fn bessel_order_symmetry_and_errors() {
        let a = bessel_k(0.5, 2.3).unwrap();
        let b = bessel_k(-0.5, 2.3).unwrap();
        assert_eq!(a, b);
        assert!(bessel_k(0.5, 0.0).is_err());
        assert!(bessel_k(0.5, -1.0).is_err());
    }

    #[test]
    fn bessel_monotone_in_x() {
        for &eta in &[0.3, 0.5, 1.0, 1.7, 3.2] {
            let mut prev = f64::INFINITY;
            let mut x = 0.05;
            while x < 20.0 {
                let k = bessel_k(eta, x).unwrap();
                assert!(k > 0.0 && k < prev, "eta={eta} x={x}");
                prev = k;
                x += 0.35;
            }
        }
    }

    #[test]
    fn mvn_logpdf_values() {
        let chol1 = DMatrix::from_element(1, 1, 1.0);
        let v = mvn_logpdf(&DVector::from_vec(vec![0.0]), &chol1).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);

        let chol2 = DMatrix::identity(2, 2);
        let v = mvn_logpdf(&DVector::from_vec(vec![0.0, 0.0]), &chol2).unwrap();
        assert!((v + LN_2PI).abs() < 1e-12);

        // rho = 0.5: -log(2 pi) - 0.5 log(0.75)
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let chol = sigma.cholesky().unwrap().l();
        let v = mvn_logpdf(&DVector::from_vec(vec![0.0, 0.0]), &chol).unwrap();
        assert!((v - (-LN_2PI - 0.5 * 0.75f64.ln())).abs() < 1e-12);
        assert!((v - (-1.69404)).abs() < 1e-5);
    }

    #[test]
    fn mvn_logpdf_dimension_mismatch() {
        let chol = DMatrix::identity(2, 2);
        assert!(mvn_logpdf(&DVector::from_vec(vec![0.0]), &chol).is_err());
    }

    #[test]
    fn mvn_logpdf_integrates_to_one() {
        // m = 1
        let chol1 = DMatrix::from_element(1, 1, 1.0);
        let mut acc = 0.0;
        let n = 4000;
        let (a, b) = (-10.0, 10.0);
        let h = (b - a) / n as f64;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * mvn_logpdf(&DVector::from_vec(vec![x]), &chol1).unwrap().exp();
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-4);

        // m = 2 with correlation
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let chol = sigma.cholesky().unwrap().l();
        let n = 400;
        let h = (b - a) / n as f64;
        let mut acc2 = 0.0;
        for i in 0..=n {
            let wi = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            for j in 0..=n {
                let wj = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let z = DVector::from_vec(vec![a + i as f64 * h, a + j as f64 * h]);
                acc2 += wi * wj * mvn_logpdf(&z, &chol).unwrap().exp();
            }
        }
        assert!((acc2 * h * h / 9.0 - 1.0).abs() < 1e-4);
    }
}

