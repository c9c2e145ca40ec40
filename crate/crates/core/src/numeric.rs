//! Fixed-point encoding, the centered embedding into `Z_N`, and magnitude
//! budgets.
//!
//! Every wire in the system carries an integer `raw` together with a public
//! scale exponent `e`, representing `raw / 2^e`. Scale exponents never enter
//! the ring: they travel as plaintext metadata next to the shares, so a
//! division by a public constant can always be folded into the other side of
//! a numerator/denominator pair instead of being evaluated inside the MPC.
//!
//! A [`MagnitudeBudget`] is a proven upper bound on `|raw|`. As long as it
//! stays below `N/2`, the centered representative of the ring result equals
//! the exact integer result, which is what makes decoding unambiguous.

use std::fmt::Debug;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number used wherever bit-exact arithmetic matters.
pub type Rational = BigRational;

/// Default fixed-point precision in bits.
pub const DEFAULT_PHI: u32 = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericError {
    #[error("value is not finite")]
    NonFinite,
    #[error("magnitude {bits} bits does not fit below N/2 ({modulus_bits}-bit modulus)")]
    Overflow { bits: u64, modulus_bits: u64 },
    #[error("ring element is not reduced modulo N")]
    NotReduced,
    #[error("scale mismatch: {left} vs {right}")]
    ScaleMismatch { left: u32, right: u32 },
    #[error("malformed decimal literal {0:?}")]
    BadDecimal(String),
}

/// A real scalar type the generic numeric code can run over.
///
/// Implemented for `f32`, `f64` and [`Rational`]. The rational
/// implementation is exact, which the audit replay relies on.
pub trait Scalar:
    Num + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync
{
    /// Exact value, or `None` for non-finite floats.
    fn to_rational(&self) -> Option<Rational>;

    /// Nearest representable value.
    fn from_rational(r: &Rational) -> Self;

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn to_rational(&self) -> Option<Rational> {
        Rational::from_float(*self)
    }

    fn from_rational(r: &Rational) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn to_rational(&self) -> Option<Rational> {
        Rational::from_float(*self)
    }

    fn from_rational(r: &Rational) -> Self {
        r.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for Rational {
    fn to_rational(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
}

/// `2^e` as a big integer.
pub fn pow2(e: u32) -> BigInt {
    BigInt::one() << e as usize
}

/// A real number represented as `raw / 2^scale_exp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FixedPointValue {
    pub raw: BigInt,
    pub scale_exp: u32,
}

impl FixedPointValue {
    pub fn new(raw: BigInt, scale_exp: u32) -> Self {
        Self { raw, scale_exp }
    }

    /// Encodes `x` as `round(x * 2^e)`, rounding halves away from zero so that
    /// `encode(-x) == -encode(x)`.
    pub fn encode<T: Scalar>(x: &T, scale_exp: u32) -> Result<Self, NumericError> {
        let exact = x.to_rational().ok_or(NumericError::NonFinite)?;
        let scaled = exact * Rational::from_integer(pow2(scale_exp));
        Ok(Self {
            raw: scaled.round().to_integer(),
            scale_exp,
        })
    }

    pub fn decode<T: Scalar>(&self) -> T {
        T::from_rational(&self.exact())
    }

    /// The represented value as an exact rational.
    pub fn exact(&self) -> Rational {
        Rational::new(self.raw.clone(), pow2(self.scale_exp))
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, NumericError> {
        if self.scale_exp != other.scale_exp {
            return Err(NumericError::ScaleMismatch {
                left: self.scale_exp,
                right: other.scale_exp,
            });
        }
        Ok(Self::new(&self.raw + &other.raw, self.scale_exp))
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(&self.raw * &other.raw, self.scale_exp + other.scale_exp)
    }

    /// Lifts to a larger scale exponent without loss.
    pub fn upscale(&self, scale_exp: u32) -> Self {
        assert!(scale_exp >= self.scale_exp, "upscale cannot reduce precision");
        Self::new(
            &self.raw << (scale_exp - self.scale_exp) as usize,
            scale_exp,
        )
    }
}

/// Proven upper bound on the magnitude of a wire's integer value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MagnitudeBudget {
    pub bound: BigUint,
}

impl MagnitudeBudget {
    pub fn new(bound: BigUint) -> Self {
        Self { bound }
    }

    pub fn from_u64(bound: u64) -> Self {
        Self::new(BigUint::from(bound))
    }

    /// Budget covering `|z|` exactly.
    pub fn of(z: &BigInt) -> Self {
        Self::new(z.magnitude().clone())
    }

    pub fn pow2(bits: u32) -> Self {
        Self::new(BigUint::one() << bits as usize)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(&self.bound + &other.bound)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(&self.bound * &other.bound)
    }

    pub fn scale(&self, constant: &BigInt) -> Self {
        Self::new(&self.bound * constant.magnitude())
    }

    pub fn bits(&self) -> u64 {
        self.bound.bits()
    }

    /// True iff every value within the budget embeds into `Z_N` unambiguously.
    pub fn fits(&self, modulus: &BigUint) -> bool {
        (&self.bound << 1usize) < *modulus
    }

    pub fn check(&self, modulus: &BigUint) -> Result<(), NumericError> {
        if self.fits(modulus) {
            Ok(())
        } else {
            Err(NumericError::Overflow {
                bits: self.bits(),
                modulus_bits: modulus.bits(),
            })
        }
    }
}

/// Reduces any signed integer into `[0, N)` without bound checks.
pub fn reduce(z: &BigInt, modulus: &BigUint) -> BigUint {
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    z.mod_floor(&m)
        .to_biguint()
        .expect("mod_floor of a positive modulus is non-negative")
}

/// Embeds a signed integer with `|z| < N/2` into `Z_N`.
pub fn to_ring(z: &BigInt, modulus: &BigUint) -> Result<BigUint, NumericError> {
    MagnitudeBudget::of(z).check(modulus)?;
    Ok(reduce(z, modulus))
}

/// Centered representative of `w`: the unique value in `[-N/2, N/2)`
/// congruent to `w`.
pub fn from_ring(w: &BigUint, modulus: &BigUint) -> Result<BigInt, NumericError> {
    if w >= modulus {
        return Err(NumericError::NotReduced);
    }
    let doubled: BigUint = w << 1usize;
    if doubled < *modulus {
        Ok(BigInt::from(w.clone()))
    } else {
        Ok(BigInt::from(w.clone()) - BigInt::from(modulus.clone()))
    }
}

/// Formats with exactly 12 decimals, the precision used on the public log.
pub fn format_decimal12(x: f64) -> String {
    let s = format!("{x:.12}");
    // "-0.000000000000" and "0.000000000000" must hash identically
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Parses a plain decimal literal (`-12.5`, `0.000100000000`) exactly.
pub fn parse_decimal(s: &str) -> Result<Rational, NumericError> {
    let bad = || NumericError::BadDecimal(s.to_string());
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty()
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
        || (body.contains('.') && frac_part.is_empty())
    {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer = BigInt::from_str_radix(&digits, 10).map_err(|_| bad())?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    let value = Rational::new(numer, denom);
    Ok(if negative { -value } else { value })
}

/// Rational to a short decimal string, for reports only.
pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else if r.is_zero() {
            0.0
        } else {
            f64::INFINITY
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    #[test]
    fn encode_examples() {
        assert_eq!(FixedPointValue::encode(&1.5f64, 2).unwrap().raw, big(6));
        assert_eq!(FixedPointValue::encode(&0.0f64, 40).unwrap().raw, big(0));
        assert_eq!(FixedPointValue::encode(&-0.3f64, 4).unwrap().raw, big(-5));
        // halves go away from zero in both directions
        assert_eq!(FixedPointValue::encode(&2.5f64, 0).unwrap().raw, big(3));
        assert_eq!(FixedPointValue::encode(&-2.5f64, 0).unwrap().raw, big(-3));
    }

    #[test]
    fn encode_rejects_non_finite() {
        assert_eq!(
            FixedPointValue::encode(&f64::NAN, 4),
            Err(NumericError::NonFinite)
        );
        assert_eq!(
            FixedPointValue::encode(&f32::INFINITY, 4),
            Err(NumericError::NonFinite)
        );
    }

    #[test]
    fn decode_examples() {
        assert_eq!(FixedPointValue::new(big(6), 2).decode::<f64>(), 1.5);
        assert_eq!(FixedPointValue::new(big(0), 40).decode::<f64>(), 0.0);
        assert_eq!(FixedPointValue::new(big(-5), 4).decode::<f64>(), -0.3125);
        assert_eq!(
            FixedPointValue::new(big(-5), 4).decode::<Rational>(),
            Rational::new(big(-5), big(16))
        );
    }

    #[test]
    fn scale_rules() {
        let a = FixedPointValue::new(big(3), 4);
        let b = FixedPointValue::new(big(5), 4);
        assert_eq!(a.checked_add(&b).unwrap().scale_exp, 4);
        assert_eq!(a.mul(&b).scale_exp, 8);
        assert!(a.checked_add(&FixedPointValue::new(big(1), 3)).is_err());
        assert_eq!(a.upscale(6).raw, big(12));
    }

    #[test]
    fn ring_examples() {
        let n = BigUint::from(11u32);
        assert_eq!(to_ring(&big(-1), &n).unwrap(), BigUint::from(10u32));
        assert_eq!(from_ring(&BigUint::from(10u32), &n).unwrap(), big(-1));
        assert_eq!(to_ring(&big(5), &n).unwrap(), BigUint::from(5u32));
        assert!(matches!(
            to_ring(&big(6), &n),
            Err(NumericError::Overflow { .. })
        ));
        assert_eq!(
            from_ring(&BigUint::from(11u32), &n),
            Err(NumericError::NotReduced)
        );
    }

    #[test]
    fn centered_embedding_is_a_bijection_for_odd_moduli() {
        for n in [3u32, 11, 101, 1081] {
            let modulus = BigUint::from(n);
            let half = (n as i64 - 1) / 2;
            let mut seen = vec![false; n as usize];
            for z in -half..=half {
                let w = to_ring(&big(z), &modulus).unwrap();
                let idx = w.to_usize().unwrap();
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(from_ring(&w, &modulus).unwrap(), big(z));
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn decimal_round_trip() {
        assert_eq!(format_decimal12(0.0012), "0.001200000000");
        assert_eq!(format_decimal12(-0.0), "0.000000000000");
        assert_eq!(format_decimal12(-1e-14), "0.000000000000");
        assert_eq!(
            parse_decimal("0.001200000000").unwrap(),
            Rational::new(big(12), big(10_000))
        );
        assert_eq!(
            parse_decimal("-1.5").unwrap(),
            Rational::new(big(-3), big(2))
        );
        assert_eq!(parse_decimal("7").unwrap(), Rational::from_integer(big(7)));
        for bad in ["", "-", ".5", "1.", "1e3", "+1", "1.2.3", "0x1", " 1"] {
            assert!(parse_decimal(bad).is_err(), "{bad:?}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_half_ulp(x in -2147483648.0f64..=2147483648.0f64) {
            let v = FixedPointValue::encode(&x, 40).unwrap();
            let err = (v.decode::<f64>() - x).abs();
            prop_assert!(err <= 2f64.powi(-41));
            let exact_err = (v.exact() - x.to_rational().unwrap()).abs();
            prop_assert!(exact_err <= Rational::new(big(1), pow2(41)));
        }

        #[test]
        fn encoding_is_odd(x in -1.0e9f64..1.0e9f64, e in 0u32..60) {
            let pos = FixedPointValue::encode(&x, e).unwrap();
            let neg = FixedPointValue::encode(&-x, e).unwrap();
            prop_assert_eq!(pos.raw, -neg.raw);
        }

        #[test]
        fn f32_round_trip(x in -1.0e6f32..1.0e6f32) {
            let v = FixedPointValue::encode(&x, 30).unwrap();
            let back: f32 = v.decode();
            prop_assert!((back - x).abs() <= 2f32.powi(-20));
        }

        #[test]
        fn ring_round_trip(z in any::<i64>(), extra in 1u64..u64::MAX) {
            let modulus = BigUint::from(z.unsigned_abs()) * 2u32 + extra;
            let w = to_ring(&big(z), &modulus).unwrap();
            prop_assert!(w < modulus);
            prop_assert_eq!(from_ring(&w, &modulus).unwrap(), big(z));
        }
    }

    /// Random expression trees evaluated both exactly and in `Z_N` with
    /// tracked budgets: whenever the budget admits the result, the centered
    /// ring value equals the exact integer.
    #[derive(Debug, Clone)]
    enum Expr {
        Leaf(i64),
        Add(Box<Expr>, Box<Expr>),
        Sub(Box<Expr>, Box<Expr>),
        Mul(Box<Expr>, Box<Expr>),
        Const(i64, Box<Expr>),
    }

    fn expr_strategy() -> impl Strategy<Value = Expr> {
        let leaf = (-1000i64..1000).prop_map(Expr::Leaf);
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (-50i64..50, inner).prop_map(|(c, a)| Expr::Const(c, Box::new(a))),
            ]
        })
    }

    fn exact(e: &Expr) -> BigInt {
        match e {
            Expr::Leaf(v) => big(*v),
            Expr::Add(a, b) => exact(a) + exact(b),
            Expr::Sub(a, b) => exact(a) - exact(b),
            Expr::Mul(a, b) => exact(a) * exact(b),
            Expr::Const(c, a) => big(*c) * exact(a),
        }
    }

    /// Returns `None` as soon as a budget would be violated.
    fn in_ring(e: &Expr, n: &BigUint) -> Option<(BigUint, MagnitudeBudget)> {
        let (w, b) = match e {
            Expr::Leaf(v) => (to_ring(&big(*v), n).ok()?, MagnitudeBudget::of(&big(*v))),
            Expr::Add(a, b) => {
                let (wa, ba) = in_ring(a, n)?;
                let (wb, bb) = in_ring(b, n)?;
                ((wa + wb) % n, ba.add(&bb))
            }
            Expr::Sub(a, b) => {
                let (wa, ba) = in_ring(a, n)?;
                let (wb, bb) = in_ring(b, n)?;
                ((wa + n - wb) % n, ba.add(&bb))
            }
            Expr::Mul(a, b) => {
                let (wa, ba) = in_ring(a, n)?;
                let (wb, bb) = in_ring(b, n)?;
                ((wa * wb) % n, ba.mul(&bb))
            }
            Expr::Const(c, a) => {
                let (wa, ba) = in_ring(a, n)?;
                ((wa * reduce(&big(*c), n)) % n, ba.scale(&big(*c)))
            }
        };
        b.check(n).ok()?;
        Some((w, b))
    }

    proptest! {
        #[test]
        fn budget_soundness(e in expr_strategy(), bits in 20u64..120) {
            let n = (BigUint::one() << bits as usize) + 1u32;
            if let Some((w, budget)) = in_ring(&e, &n) {
                let value = exact(&e);
                prop_assert!(value.magnitude() <= &budget.bound);
                prop_assert_eq!(from_ring(&w, &n).unwrap(), value);
            }
        }
    }
}
