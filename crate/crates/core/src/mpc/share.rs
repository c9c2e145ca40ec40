//! Additive shares over `Z_N` and Beaver triples.

use num_bigint::{BigInt, BigUint};
use num_traits::Zero;

use crate::numeric::{reduce, MagnitudeBudget, NumericError};

/// One party's share of a wire. The shares of all parties sum to the
/// wire's plaintext modulo `N`; `scale_exp` and `budget` are public and
/// identical at every party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditiveShare {
    pub party: u16,
    pub value: BigUint,
    pub scale_exp: u32,
    pub budget: MagnitudeBudget,
}

impl AdditiveShare {
    pub fn new(party: u16, value: BigUint, scale_exp: u32, budget: MagnitudeBudget) -> Self {
        Self { party, value, scale_exp, budget }
    }

    /// Share of a public constant: the value sits at party 1.
    pub fn public(party: u16, c: &BigInt, scale_exp: u32, n: &BigUint) -> Self {
        let value = if party == 1 { reduce(c, n) } else { BigUint::zero() };
        Self { party, value, scale_exp, budget: MagnitudeBudget::of(c) }
    }

    fn same_scale(&self, other: &Self) -> Result<(), NumericError> {
        if self.scale_exp != other.scale_exp {
            return Err(NumericError::ScaleMismatch { left: self.scale_exp, right: other.scale_exp });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self, n: &BigUint) -> Result<Self, NumericError> {
        self.same_scale(other)?;
        let budget = self.budget.add(&other.budget);
        budget.check(n)?;
        Ok(Self { party: self.party, value: (&self.value + &other.value) % n, scale_exp: self.scale_exp, budget })
    }

    pub fn sub(&self, other: &Self, n: &BigUint) -> Result<Self, NumericError> {
        self.same_scale(other)?;
        let budget = self.budget.add(&other.budget);
        budget.check(n)?;
        let value = (&self.value + n - &other.value) % n;
        Ok(Self { party: self.party, value, scale_exp: self.scale_exp, budget })
    }

    /// Multiplication by a public integer; the scale is unchanged.
    pub fn const_mult(&self, c: &BigInt, n: &BigUint) -> Result<Self, NumericError> {
        let budget = self.budget.scale(c);
        budget.check(n)?;
        let value = (&self.value * reduce(c, n)) % n;
        Ok(Self { party: self.party, value, scale_exp: self.scale_exp, budget })
    }

    /// Multiplication by a public fixed-point constant `raw / 2^e`: the
    /// scale grows by `e`.
    pub fn fixed_mult(&self, raw: &BigInt, e: u32, n: &BigUint) -> Result<Self, NumericError> {
        let mut out = self.const_mult(raw, n)?;
        out.scale_exp += e;
        Ok(out)
    }

    /// Adds a public integer (already at this wire's scale) at party 1.
    pub fn const_add(&self, c: &BigInt, n: &BigUint) -> Result<Self, NumericError> {
        let budget = self.budget.add(&MagnitudeBudget::of(c));
        budget.check(n)?;
        let value = if self.party == 1 { (&self.value + reduce(c, n)) % n } else { self.value.clone() };
        Ok(Self { party: self.party, value, scale_exp: self.scale_exp, budget })
    }

    /// Re-expresses the wire at a larger scale by multiplying by a power of two.
    pub fn upscale(&self, scale_exp: u32, n: &BigUint) -> Result<Self, NumericError> {
        assert!(scale_exp >= self.scale_exp, "upscale cannot lower the scale");
        let mut out = self.const_mult(&crate::numeric::pow2(scale_exp - self.scale_exp), n)?;
        out.scale_exp = scale_exp;
        Ok(out)
    }

    pub fn neg(&self, n: &BigUint) -> Self {
        let value = if self.value.is_zero() { BigUint::zero() } else { n - &self.value };
        Self { party: self.party, value, scale_exp: self.scale_exp, budget: self.budget.clone() }
    }
}

/// Sum of many shares with a common scale.
pub fn sum_shares<'a>(shares: impl IntoIterator<Item = &'a AdditiveShare>, n: &BigUint) -> Result<AdditiveShare, NumericError> {
    let mut it = shares.into_iter();
    let first = it.next().expect("at least one share").clone();
    it.try_fold(first, |acc, s| acc.add(s, n))
}

/// One party's shares of a Beaver triple `(a, b, c = ab mod N)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaverTriple {
    pub id: u64,
    pub a: BigUint,
    pub b: BigUint,
    pub c: BigUint,
}
