//! Clear-side p-values and critical values for the revealed statistics.

mod special;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use special::{ln_beta, ln_gamma, reg_inc_beta, reg_inc_gamma, reg_inc_gamma_upper};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PValueError {
    #[error("argument outside the domain: {0}")]
    Domain(&'static str),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("degrees of freedom must be at least 1")]
    DegreesOfFreedom,
    #[error("significance level must lie strictly between 0 and 1")]
    Alpha,
    #[error("could not bracket the critical value")]
    Bracket,
}

/// Reference distribution of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Distribution {
    StudentT { df: u64 },
    ChiSquared { df: u64 },
    FisherF { d1: u64, d2: u64 },
}

/// Which tail counts as extreme. Chi-squared and F statistics only have an
/// upper tail; for them every variant means "upper".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    Greater,
    Less,
}

fn f<T: Float>(x: u64) -> T {
    T::from(x).expect("degrees of freedom representable")
}

impl Distribution {
    pub fn validate(&self) -> Result<(), PValueError> {
        let ok = match *self {
            Distribution::StudentT { df } | Distribution::ChiSquared { df } => df >= 1,
            Distribution::FisherF { d1, d2 } => d1 >= 1 && d2 >= 1,
        };
        ok.then_some(()).ok_or(PValueError::DegreesOfFreedom)
    }

    fn is_symmetric(&self) -> bool {
        matches!(self, Distribution::StudentT { .. })
    }

    /// `P(X > x)`.
    pub fn survival<T: Float>(&self, x: T) -> Result<T, PValueError> {
        self.validate()?;
        if x.is_nan() {
            return Err(PValueError::Domain("statistic is NaN"));
        }
        let one = T::one();
        let half = T::from(0.5).unwrap();
        match *self {
            Distribution::StudentT { df } => {
                if x.is_infinite() {
                    return Ok(if x > T::zero() { T::zero() } else { one });
                }
                let v: T = f(df);
                let tail = half * reg_inc_beta(v * half, half, v / (v + x * x))?;
                Ok(if x > T::zero() { tail } else { one - tail })
            }
            Distribution::ChiSquared { df } => {
                if x <= T::zero() {
                    return Ok(one);
                }
                reg_inc_gamma_upper(f::<T>(df) * half, x * half)
            }
            Distribution::FisherF { d1, d2 } => {
                if x <= T::zero() {
                    return Ok(one);
                }
                if x.is_infinite() {
                    return Ok(T::zero());
                }
                let (a, b): (T, T) = (f(d1), f(d2));
                reg_inc_beta(b * half, a * half, b / (b + a * x))
            }
        }
    }

    /// `P(X <= x)`.
    pub fn cdf<T: Float>(&self, x: T) -> Result<T, PValueError> {
        Ok(T::one() - self.survival(x)?)
    }
}

/// p-value of `stat` under `dist`.
pub fn p_from_statistic<T: Float>(stat: T, dist: Distribution, side: Sidedness) -> Result<T, PValueError> {
    if stat.is_nan() {
        return Err(PValueError::Domain("statistic is NaN"));
    }
    let p = if dist.is_symmetric() {
        match side {
            Sidedness::TwoSided => {
                let Distribution::StudentT { df } = dist else { unreachable!() };
                dist.validate()?;
                if stat.is_infinite() {
                    T::zero()
                } else {
                    let v: T = f(df);
                    let half = T::from(0.5).unwrap();
                    reg_inc_beta(v * half, half, v / (v + stat * stat))?
                }
            }
            Sidedness::Greater => dist.survival(stat)?,
            Sidedness::Less => dist.survival(-stat)?,
        }
    } else {
        dist.survival(stat)?
    };
    Ok(p.max(T::zero()).min(T::one()))
}

/// Pearson's r as a t statistic with `n - 2` degrees of freedom.
pub fn pearson_to_t<T: Float>(r: T, n: u64) -> T {
    let df: T = f(n.saturating_sub(2));
    let denom = T::one() - r * r;
    if denom <= T::zero() {
        return if r > T::zero() { T::infinity() } else { T::neg_infinity() };
    }
    r * (df / denom).sqrt()
}

/// Two-sided (or one-sided) p-value for a sample correlation over `n` rows.
pub fn p_from_correlation<T: Float>(r: T, n: u64, side: Sidedness) -> Result<T, PValueError> {
    if n < 3 {
        return Err(PValueError::DegreesOfFreedom);
    }
    p_from_statistic(pearson_to_t(r, n), Distribution::StudentT { df: n - 2 }, side)
}

/// The statistic `c` with `p_from_statistic(c) = alpha`.
///
/// For a symmetric distribution tested two-sided the returned value is the
/// non-negative threshold on `|stat|`; for `Less` it is the (usually
/// negative) lower threshold.
pub fn critical_value<T: Float>(dist: Distribution, alpha: T, side: Sidedness) -> Result<T, PValueError> {
    dist.validate()?;
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(PValueError::Alpha);
    }
    if dist.is_symmetric() {
        match side {
            Sidedness::Less => return critical_value(dist, alpha, Sidedness::Greater).map(|c| -c),
            Sidedness::Greater if alpha > T::from(0.5).unwrap() => {
                return critical_value(dist, T::one() - alpha, Sidedness::Greater).map(|c| -c)
            }
            _ => {}
        }
    }
    let p = |x: T| p_from_statistic(x, dist, side);
    let two = T::from(2.0).unwrap();
    let mut lo = T::zero();
    if p(lo)? <= alpha {
        return Ok(lo);
    }
    let mut hi = T::one();
    let mut grown = 0;
    while p(hi)? > alpha {
        lo = hi;
        hi = hi * two;
        grown += 1;
        if grown > 1100 || hi.is_infinite() {
            return Err(PValueError::Bracket);
        }
    }
    // p is nonincreasing on [lo, hi], p(lo) > alpha >= p(hi)
    loop {
        let mid = lo + (hi - lo) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if p(mid)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (plo, phi) = (p(lo)?, p(hi)?);
    Ok(if (plo - alpha).abs() < (phi - alpha).abs() { lo } else { hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn centers_give_one() {
        let t = Distribution::StudentT { df: 7 };
        assert_eq!(p_from_statistic(0.0f64, t, Sidedness::TwoSided).unwrap(), 1.0);
        let chi = Distribution::ChiSquared { df: 3 };
        assert_eq!(p_from_statistic(0.0f64, chi, Sidedness::TwoSided).unwrap(), 1.0);
        let ff = Distribution::FisherF { d1: 2, d2: 9 };
        assert_eq!(p_from_statistic(0.0f64, ff, Sidedness::TwoSided).unwrap(), 1.0);
        assert!((p_from_statistic(0.0f64, t, Sidedness::Greater).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_five_percent_point() {
        let p = p_from_statistic(3.841459f64, Distribution::ChiSquared { df: 1 }, Sidedness::TwoSided).unwrap();
        assert!((p - 0.05).abs() < 1e-4, "{p}");
    }

    #[test]
    fn student_t_ten_dof_critical_value() {
        let c = critical_value(Distribution::StudentT { df: 10 }, 0.05f64, Sidedness::TwoSided).unwrap();
        // oracle: bisection on a quadrature of the t density
        let df = 10.0f64;
        let norm = (ln_gamma((df + 1.0) / 2.0).unwrap() - ln_gamma(df / 2.0).unwrap()).exp() / (df * std::f64::consts::PI).sqrt();
        let density = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let two_sided = |x: f64| 1.0 - 2.0 * simpson(density, 0.0, x, 4000);
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if two_sided(mid) > 0.05 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((c - lo).abs() < 1e-8, "{c} vs {lo}");
        assert!((c - 2.228).abs() < 1e-3);
    }

    #[test]
    fn median_is_zero() {
        let c = critical_value(Distribution::StudentT { df: 4 }, 0.5f64, Sidedness::Greater).unwrap();
        assert!(c.abs() < 1e-12);
        let c = critical_value(Distribution::StudentT { df: 4 }, 1.0 - 1e-16f64, Sidedness::TwoSided);
        assert!(c.unwrap().abs() < 1e-6);
    }

    #[test]
    fn one_sided_tails() {
        let t = Distribution::StudentT { df: 12 };
        let g = p_from_statistic(1.7f64, t, Sidedness::Greater).unwrap();
        let l = p_from_statistic(1.7f64, t, Sidedness::Less).unwrap();
        let two = p_from_statistic(1.7f64, t, Sidedness::TwoSided).unwrap();
        assert!((g + l - 1.0).abs() < 1e-14);
        assert!((2.0 * g - two).abs() < 1e-14);
        let c = critical_value(t, 0.05f64, Sidedness::Less).unwrap();
        assert!(c < 0.0);
        assert!((p_from_statistic(c, t, Sidedness::Less).unwrap() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn f_against_closed_form() {
        // F(2, d2): survival = (1 + 2x/d2)^(-d2/2)
        for &x in &[0.1, 1.0, 3.375, 10.0] {
            let d2 = 6.0f64;
            let got = Distribution::FisherF { d1: 2, d2: 6 }.survival(x).unwrap();
            assert!((got - (1.0 + 2.0 * x / d2).powf(-d2 / 2.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn correlation_mapping() {
        assert!(pearson_to_t(1.0f64, 10).is_infinite());
        assert_eq!(p_from_correlation(1.0f64, 10, Sidedness::TwoSided).unwrap(), 0.0);
        assert_eq!(p_from_correlation(0.0f64, 10, Sidedness::TwoSided).unwrap(), 1.0);
        let r = 0.5f64;
        let t = r * (8.0f64 / 0.75).sqrt();
        let p = p_from_statistic(t, Distribution::StudentT { df: 8 }, Sidedness::TwoSided).unwrap();
        assert_eq!(p_from_correlation(r, 10, Sidedness::TwoSided).unwrap(), p);
        assert!(p_from_correlation(0.5f64, 2, Sidedness::TwoSided).is_err());
    }

    #[test]
    fn monotone_on_grids() {
        let dists = [
            Distribution::StudentT { df: 1 },
            Distribution::StudentT { df: 30 },
            Distribution::ChiSquared { df: 1 },
            Distribution::ChiSquared { df: 63 },
            Distribution::FisherF { d1: 3, d2: 396 },
            Distribution::FisherF { d1: 1, d2: 1 },
        ];
        for d in dists {
            let mut last = 1.0f64;
            for i in 0..2000 {
                let p = p_from_statistic(i as f64 * 0.05, d, Sidedness::TwoSided).unwrap();
                assert!((0.0..=1.0).contains(&p));
                assert!(p <= last + 1e-15, "{d:?} at {i}");
                last = p;
            }
        }
    }

    #[test]
    fn round_trips() {
        let dists = [
            Distribution::StudentT { df: 3 },
            Distribution::StudentT { df: 198 },
            Distribution::ChiSquared { df: 1 },
            Distribution::ChiSquared { df: 9 },
            Distribution::FisherF { d1: 3, d2: 396 },
        ];
        for d in dists {
            for &alpha in &[1e-6, 0.001, 0.01, 0.0361446, 0.05, 0.2, 0.7] {
                let c = critical_value(d, alpha, Sidedness::TwoSided).unwrap();
                let p = p_from_statistic(c, d, Sidedness::TwoSided).unwrap();
                assert!((p - alpha).abs() <= 1e-9, "{d:?} alpha={alpha}: p={p}");
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(critical_value(Distribution::ChiSquared { df: 1 }, 0.0f64, Sidedness::TwoSided).is_err());
        assert!(critical_value(Distribution::ChiSquared { df: 1 }, 1.0f64, Sidedness::TwoSided).is_err());
        assert!(p_from_statistic(1.0f64, Distribution::ChiSquared { df: 0 }, Sidedness::TwoSided).is_err());
        assert!(p_from_statistic(f64::NAN, Distribution::StudentT { df: 3 }, Sidedness::TwoSided).is_err());
    }
}
