//! The α-investing wealth machine.
//!
//! Test `j` gets level `α_j = min(α, W(j-1)(1-β) / (1 + W(j-1)(1-β)))`.
//! A rejection (`p_j <= α_j`) earns `γ`; an acceptance costs
//! `α_j / (1 - α_j)`. Generic over [`Scalar`] so the simulator can run in
//! `f64` while the auditor replays the log exactly over rationals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{parse_decimal, Rational, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlphaError {
    #[error("alpha must lie strictly between 0 and 1")]
    Alpha,
    #[error("beta must lie strictly between 0 and 1")]
    Beta,
    #[error("gamma must satisfy 0 < gamma <= alpha")]
    Gamma,
    #[error("p-value must lie in [0, 1]")]
    PValue,
    #[error("wealth is exhausted")]
    Exhausted,
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    /// The null hypothesis is rejected: a discovery.
    Reject,
    Accept,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Reject => "reject",
            Decision::Accept => "accept",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reject" => Some(Decision::Reject),
            "accept" => Some(Decision::Accept),
            _ => None,
        }
    }

    /// The rejection rule, boundary included.
    pub fn from_p<T: Scalar>(p: &T, alpha_j: &T) -> Self {
        if p <= alpha_j {
            Decision::Reject
        } else {
            Decision::Accept
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaParams<T> {
    /// Initial wealth `W(0)`, also the cap on every `α_j`.
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Scalar> AlphaParams<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Result<Self, AlphaError> {
        let (zero, one) = (T::zero(), T::one());
        if !(alpha > zero && alpha < one) {
            return Err(AlphaError::Alpha);
        }
        if !(beta > zero && beta < one) {
            return Err(AlphaError::Beta);
        }
        if !(gamma > zero && gamma <= alpha) {
            return Err(AlphaError::Gamma);
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn convert<U: Scalar>(&self) -> Option<AlphaParams<U>> {
        Some(AlphaParams {
            alpha: U::from_rational(&self.alpha.to_rational()?),
            beta: U::from_rational(&self.beta.to_rational()?),
            gamma: U::from_rational(&self.gamma.to_rational()?),
        })
    }
}

impl AlphaParams<Rational> {
    /// Parses exact decimal literals such as `"0.0125"`.
    pub fn from_decimals(alpha: &str, beta: &str, gamma: &str) -> Result<Self, AlphaError> {
        let p = |s: &str| parse_decimal(s).map_err(|e| AlphaError::Parse(e.to_string()));
        Self::new(p(alpha)?, p(beta)?, p(gamma)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaState<T> {
    /// `W(j)`
    pub wealth: T,
    /// `j`, the number of tests already charged.
    pub index: u64,
}

/// Outcome of charging one test.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub alpha_j: T,
    pub decision: Decision,
    pub next: AlphaState<T>,
}

impl<T: Scalar> AlphaState<T> {
    pub fn initial(params: &AlphaParams<T>) -> Self {
        Self { wealth: params.alpha.clone(), index: 0 }
    }

    /// Level for the next test.
    pub fn next_alpha(&self, params: &AlphaParams<T>) -> T {
        let x = self.wealth.clone() * (T::one() - params.beta.clone());
        let uncapped = x.clone() / (T::one() + x);
        T::min_of(params.alpha.clone(), uncapped)
    }

    /// Wealth update for a test run at level `alpha_j` with decision `d`.
    pub fn apply(&self, alpha_j: &T, decision: Decision, params: &AlphaParams<T>) -> Self {
        let wealth = match decision {
            Decision::Reject => self.wealth.clone() + params.gamma.clone(),
            Decision::Accept => {
                self.wealth.clone() - alpha_j.clone() / (T::one() - alpha_j.clone())
            }
        };
        Self { wealth, index: self.index + 1 }
    }

    pub fn update_wealth(&self, p: &T, alpha_j: &T, params: &AlphaParams<T>) -> Result<Self, AlphaError> {
        if !(*p >= T::zero() && *p <= T::one()) {
            return Err(AlphaError::PValue);
        }
        Ok(self.apply(alpha_j, Decision::from_p(p, alpha_j), params))
    }

    /// `next_alpha` followed by `update_wealth`.
    pub fn step(&self, p: &T, params: &AlphaParams<T>) -> Result<Step<T>, AlphaError> {
        if !(self.wealth > T::zero()) {
            return Err(AlphaError::Exhausted);
        }
        let alpha_j = self.next_alpha(params);
        let next = self.update_wealth(p, &alpha_j, params)?;
        let decision = Decision::from_p(p, &alpha_j);
        Ok(Step { alpha_j, decision, next })
    }
}

/// Runs a whole p-value sequence and returns every step.
pub fn replay<T: Scalar>(params: &AlphaParams<T>, ps: &[T]) -> Result<Vec<Step<T>>, AlphaError> {
    let mut state = AlphaState::initial(params);
    let mut out = Vec::with_capacity(ps.len());
    for p in ps {
        let step = state.step(p, params)?;
        state = step.next.clone();
        out.push(step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn first_levels() {
        let params = AlphaParams::new(0.05f64, 0.25, 0.0125).unwrap();
        let s = AlphaState::initial(&params);
        assert!((s.next_alpha(&params) - 0.0375 / 1.0375).abs() < 1e-15);
        let s = AlphaState { wealth: 0.0625, index: 1 };
        let a2 = s.next_alpha(&params);
        assert!((a2 - 0.046875 / 1.046875).abs() < 1e-15);
        assert!((a2 - 0.0447761).abs() < 1e-7);
        let rich = AlphaState { wealth: 1e9, index: 0 };
        assert_eq!(rich.next_alpha(&params), 0.05);
    }

    #[test]
    fn worked_example_exact() {
        let params = AlphaParams::from_decimals("0.05", "0.25", "0.0125").unwrap();
        let ps = [q(12, 10_000), q(2331, 10_000), q(49, 10_000)];
        let steps = replay(&params, &ps).unwrap();
        let decisions: Vec<Decision> = steps.iter().map(|s| s.decision).collect();
        assert_eq!(decisions, [Decision::Reject, Decision::Accept, Decision::Reject]);
        assert_eq!(steps[0].next.wealth, q(625, 10_000));
        assert_eq!(steps[1].next.wealth, q(15_625, 1_000_000));
        assert_eq!(steps[2].next.wealth, q(28_125, 1_000_000));
    }

    #[test]
    fn accept_branch_cost() {
        let params = AlphaParams::new(0.05f64, 0.5, 0.0125).unwrap();
        let s = AlphaState { wealth: 1e-6, index: 40 };
        let a = s.next_alpha(&params);
        let next = s.update_wealth(&1.0, &a, &params).unwrap();
        assert!((s.wealth - next.wealth - a / (1.0 - a)).abs() < 1e-20);
        assert_eq!(next.index, 41);
        // uncapped acceptance leaves exactly W·β
        let r = AlphaParams::from_decimals("0.05", "0.5", "0.0125").unwrap();
        let w = q(1, 1000);
        let st = AlphaState { wealth: w.clone(), index: 0 };
        let step = st.step(&Rational::from_integer(1.into()), &r).unwrap();
        assert_eq!(step.next.wealth, w * q(1, 2));
    }

    #[test]
    fn boundary_counts_as_rejection() {
        let params = AlphaParams::from_decimals("0.05", "0.25", "0.0125").unwrap();
        let s = AlphaState::initial(&params);
        let a = s.next_alpha(&params);
        let step = s.step(&a, &params).unwrap();
        assert_eq!(step.decision, Decision::Reject);
    }

    #[test]
    fn parameter_validation() {
        assert_eq!(AlphaParams::new(0.0, 0.5, 0.0), Err(AlphaError::Alpha));
        assert_eq!(AlphaParams::new(0.05, 1.0, 0.01), Err(AlphaError::Beta));
        assert_eq!(AlphaParams::new(0.05, 0.5, 0.06), Err(AlphaError::Gamma));
        assert_eq!(AlphaParams::new(0.05, 0.5, 0.0), Err(AlphaError::Gamma));
        let params = AlphaParams::new(0.05f32, 0.5, 0.0125).unwrap();
        assert!(AlphaState::initial(&params).update_wealth(&1.5, &0.01, &params).is_err());
    }

    #[test]
    fn float_and_exact_agree() {
        let exact = AlphaParams::from_decimals("0.05", "0.5", "0.0125").unwrap();
        let approx: AlphaParams<f64> = exact.convert().unwrap();
        let ps = [0.001, 0.9, 0.3, 0.0001, 0.02, 0.7, 0.5];
        let exact_ps: Vec<Rational> = ps.iter().map(|p| p.to_rational().unwrap()).collect();
        let a = replay(&approx, &ps).unwrap();
        let b = replay(&exact, &exact_ps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.decision, y.decision);
            assert!((x.next.wealth - f64::from_rational(&y.next.wealth)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn wealth_stays_positive(
            ps in proptest::collection::vec(0.0f64..=1.0, 1..100),
            beta in 0.05f64..0.99,
            alpha in 0.001f64..0.5,
            gamma_frac in 0.01f64..=1.0,
        ) {
            let params = AlphaParams::new(alpha, beta, alpha * gamma_frac).unwrap();
            for step in replay(&params, &ps).unwrap() {
                prop_assert!(step.next.wealth > 0.0);
                prop_assert!(step.alpha_j <= alpha);
            }
        }
    }
}
