//! Special functions and distribution CDFs used for p-values: ln-gamma,
//! regularized incomplete beta, Student-t and F CDFs, and the normal CDF.

use crate::error::{Error, Result};

/// ln Γ(z) for z > 0 via the Lanczos approximation.
pub fn ln_gamma(z: f64) -> f64 {
    // Numerical Recipes coefficients (g = 5, n = 6).
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in COEF.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    let tmp = (z + 0.5) * tmp.ln() - tmp;
    tmp + (2.5066282746310005 * sum / z).ln()
}

fn lentz_step(value: f64, d: &mut f64, c: &mut f64) -> f64 {
    const TINY: f64 = 1e-30;
    *d = 1.0 + value * *d;
    if d.abs() < TINY {
        *d = TINY;
    }
    *d = 1.0 / *d;
    *c = 1.0 + value / *c;
    if c.abs() < TINY {
        *c = TINY;
    }
    *c * *d
}

/// Regularized incomplete beta function I_x(a, b), evaluated with the
/// continued fraction of Lentz's method; the symmetry relation keeps the
/// fraction in its fast-converging region.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - inc_beta(1.0 - x, b, a);
    }

    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();

    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 500;
    let mut f = 1.0;
    let mut c = 1.0;
    let mut d = 0.0;

    for m in 0..MAX_ITER {
        let mf = m as f64;

        let odd = -(a + mf) * (a + b + mf) * x / ((a + 2.0 * mf) * (a + 2.0 * mf + 1.0));
        let delta = lentz_step(odd, &mut d, &mut c);
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }

        let even = (mf + 1.0) * (b - mf - 1.0) * x / ((a + 2.0 * mf + 1.0) * (a + 2.0 * mf + 2.0));
        let delta = lentz_step(even, &mut d, &mut c);
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }

    front / (f * a)
}

/// Distribution selector for `dist_cdf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistKind {
    F { df1: f64, df2: f64 },
    StudentT { df: f64 },
}

/// CDF of the F or Student-t distribution via the regularized incomplete
/// beta function.
pub fn dist_cdf(kind: DistKind, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite quantile {x}")));
    }
    match kind {
        DistKind::F { df1, df2 } => {
            if df1 <= 0.0 || df2 <= 0.0 || !df1.is_finite() || !df2.is_finite() {
                return Err(Error::Domain(format!("invalid F degrees of freedom ({df1}, {df2})")));
            }
            Ok(f_cdf(x, df1, df2))
        }
        DistKind::StudentT { df } => {
            if df <= 0.0 || !df.is_finite() {
                return Err(Error::Domain(format!("invalid t degrees of freedom {df}")));
            }
            Ok(t_cdf(x, df))
        }
    }
}

pub(crate) fn f_cdf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let z = df1 * x / (df1 * x + df2);
    inc_beta(z, df1 / 2.0, df2 / 2.0)
}

pub(crate) fn t_cdf(x: f64, df: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let tail = 0.5 * inc_beta(df / (df + x * x), df / 2.0, 0.5);
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    (2.0 * (1.0 - t_cdf(t.abs(), df))).clamp(0.0, 1.0)
}

/// Upper-tail p-value for an F statistic.
pub fn f_upper_p(f: f64, df1: f64, df2: f64) -> f64 {
    (1.0 - f_cdf(f, df1, df2)).clamp(0.0, 1.0)
}

/// Standard normal CDF via a complementary error function approximation
/// (absolute error below 1.2e-7; used only for Wald p-values).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-10);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn inc_beta_boundaries_and_symmetry() {
        assert_eq!(inc_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(inc_beta(1.0, 2.0, 3.0), 1.0);
        let x = 0.37;
        let (a, b) = (1.7, 4.2);
        assert!((inc_beta(x, a, b) - (1.0 - inc_beta(1.0 - x, b, a))).abs() < 1e-12);
    }

    #[test]
    fn inc_beta_uniform_case() {
        // I_x(1, 1) = x.
        for &x in &[0.1, 0.25, 0.5, 0.9] {
            assert!((inc_beta(x, 1.0, 1.0) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn f_cdf_at_zero_and_known_point() {
        assert_eq!(dist_cdf(DistKind::F { df1: 1.0, df2: 10.0 }, 0.0).unwrap(), 0.0);
        // F(1,10) upper 5% critical value is ~4.9646.
        let p = dist_cdf(DistKind::F { df1: 1.0, df2: 10.0 }, 4.9646).unwrap();
        assert!((p - 0.95).abs() < 1e-3, "got {p}");
    }

    #[test]
    fn t_cdf_known_point() {
        // t(2) at 2.828: one-sided CDF ~0.947 (t^2 = 8 = F(1,2) at p=0.894 two-sided).
        let p = dist_cdf(DistKind::StudentT { df: 2.0 }, 2.828).unwrap();
        assert!((p - 0.947).abs() < 1e-3, "got {p}");
        assert_eq!(dist_cdf(DistKind::StudentT { df: 5.0 }, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn f_and_t_identity() {
        // F(1, nu) CDF at t^2 equals 2*T(nu)(|t|) - 1.
        for &nu in &[1.0, 2.0, 7.0, 30.0] {
            for &t in &[0.3, 1.1, 2.5, 4.0] {
                let lhs = f_cdf(t * t, 1.0, nu);
                let rhs = 2.0 * t_cdf(t, nu) - 1.0;
                assert!((lhs - rhs).abs() < 1e-9, "nu={nu} t={t}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn invalid_dfs_are_domain_errors() {
        assert!(dist_cdf(DistKind::F { df1: 0.0, df2: 2.0 }, 1.0).is_err());
        assert!(dist_cdf(DistKind::StudentT { df: -1.0 }, 1.0).is_err());
    }

    #[test]
    fn normal_cdf_sanity() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-4);
        assert!((normal_cdf(-1.96) - 0.025).abs() < 1e-4);
    }
}
