//! The four test statistics as numerator/denominator circuits over shares.
//!
//! Every division by a public quantity is cleared by multiplying through,
//! so each circuit ends in a pair `(num, den)` whose quotient is the
//! statistic (or its square). Only that quotient is ever opened.

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{canonical_json, sha256};
use crate::mpc::{sum_shares, AdditiveShare, MpcError, Party, Transport};
use crate::numeric::{pow2, MagnitudeBudget, Rational};
use crate::paillier::Ciphertext;
use crate::pvalue::{critical_value, p_from_correlation, p_from_statistic, Distribution, PValueError, Sidedness};

/// Triples kept back for the final reveal: two for the masked pair and one
/// for a sign.
pub const REVEAL_TRIPLES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid test spec: {0}")]
    Spec(String),
    #[error("degenerate statistic: {0}")]
    Degenerate(&'static str),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    PValue(#[from] PValueError),
}

impl From<crate::numeric::NumericError> for CircuitError {
    fn from(e: crate::numeric::NumericError) -> Self {
        CircuitError::Mpc(MpcError::Numeric(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "TTEST")]
    TTest,
    #[serde(rename = "PEARSON")]
    Pearson,
    #[serde(rename = "CHISQ")]
    ChiSquared,
    #[serde(rename = "FTEST")]
    FTest,
}

impl TestKind {
    pub fn tag(self) -> u8 {
        match self {
            TestKind::TTest => 1,
            TestKind::Pearson => 2,
            TestKind::ChiSquared => 3,
            TestKind::FTest => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestKind::TTest => "TTEST",
            TestKind::Pearson => "PEARSON",
            TestKind::ChiSquared => "CHISQ",
            TestKind::FTest => "FTEST",
        }
    }

    /// Whether the circuit reveals the squared statistic plus a sign.
    pub fn squared(self) -> bool {
        matches!(self, TestKind::TTest | TestKind::Pearson)
    }
}

/// A researcher's request: which test, over which attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub test: TestKind,
    pub columns: Vec<String>,
    /// Null category probabilities, chi-squared only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub sidedness: Sidedness,
}

impl TestSpec {
    pub fn new(test: TestKind, columns: &[&str]) -> Self {
        Self { test, columns: columns.iter().map(|c| c.to_string()).collect(), eta: None, sidedness: Sidedness::TwoSided }
    }

    pub fn chi_squared(column: &str, eta: Vec<f64>) -> Self {
        Self { eta: Some(eta), ..Self::new(TestKind::ChiSquared, &[column]) }
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate_shape(&self) -> Result<(), CircuitError> {
        let bad = |m: &str| Err(CircuitError::Spec(m.to_string()));
        let mut seen = std::collections::HashSet::new();
        if !self.columns.iter().all(|c| seen.insert(c)) {
            return bad("columns must be distinct");
        }
        match self.test {
            TestKind::TTest | TestKind::Pearson if self.columns.len() != 2 => return bad("needs exactly two columns"),
            TestKind::FTest if self.columns.len() < 2 => return bad("needs at least two groups"),
            TestKind::ChiSquared if self.columns.len() != 1 => return bad("needs exactly one categorical column"),
            _ => {}
        }
        match (&self.eta, self.test) {
            (Some(eta), TestKind::ChiSquared) => {
                if eta.len() < 2 {
                    return bad("needs at least two categories");
                }
                if !eta.iter().all(|p| p.is_finite() && *p > 0.0) {
                    return bad("null probabilities must be positive");
                }
                if (eta.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("null probabilities must sum to 1");
                }
            }
            (None, TestKind::ChiSquared) => return bad("chi-squared needs null probabilities"),
            (Some(_), _) => return bad("null probabilities only apply to chi-squared"),
            (None, _) => {}
        }
        if !self.test.squared() && self.sidedness != Sidedness::TwoSided {
            return bad("chi-squared and F tests are upper-tailed; leave sidedness at its default");
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(self).expect("spec serializes")
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        sha256(self.canonical_json().as_bytes())
    }

    /// Ledger form of σ: the test tag byte followed by the spec hash.
    pub fn sigma(&self) -> String {
        let mut bytes = vec![self.test.tag()];
        bytes.extend_from_slice(&self.spec_hash());
        hex::encode(bytes)
    }
}

/// Sample shape the degrees of freedom depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleShape {
    /// Rows per column (per group for F).
    pub n: u64,
    /// Categories for chi-squared, groups for F.
    pub k: u64,
}

pub fn distribution(kind: TestKind, shape: SampleShape) -> Distribution {
    let SampleShape { n, k } = shape;
    match kind {
        TestKind::TTest => Distribution::StudentT { df: 2 * n - 2 },
        TestKind::Pearson => Distribution::StudentT { df: n - 2 },
        TestKind::ChiSquared => Distribution::ChiSquared { df: k - 1 },
        TestKind::FTest => Distribution::FisherF { d1: k - 1, d2: n * k - k },
    }
}

/// Statistic after the reveal. For t and r, `quotient` is the square and
/// `sign` carries the sign.
#[derive(Debug, Clone, PartialEq)]
pub struct RevealedStatistic {
    pub kind: TestKind,
    pub quotient: Rational,
    pub sign: i8,
}

impl RevealedStatistic {
    pub fn value(&self) -> f64 {
        let q = crate::numeric::rational_to_f64(&self.quotient);
        if self.kind.squared() {
            f64::from(self.sign) * q.max(0.0).sqrt()
        } else {
            q
        }
    }
}

pub fn p_value(stat: f64, kind: TestKind, shape: SampleShape, side: Sidedness) -> Result<f64, PValueError> {
    match kind {
        TestKind::Pearson => p_from_correlation(stat, shape.n, side),
        _ => p_from_statistic(stat, distribution(kind, shape), side),
    }
}

/// Two-sided rejection threshold at level `alpha`, in the space of the
/// revealed quotient (`t²`, `r²`, `χ²` or `F`).
pub fn critical_quotient(kind: TestKind, shape: SampleShape, alpha: f64) -> Result<f64, PValueError> {
    let c = critical_value(distribution(kind, shape), alpha, Sidedness::TwoSided)?;
    Ok(match kind {
        TestKind::TTest => c * c,
        TestKind::Pearson => {
            let df = (shape.n - 2) as f64;
            c * c / (c * c + df)
        }
        TestKind::ChiSquared | TestKind::FTest => c,
    })
}

/// An encrypted column together with this party's shares of it.
#[derive(Debug, Clone)]
pub struct SharedColumn {
    pub cts: Vec<Ciphertext>,
    pub shares: Vec<AdditiveShare>,
}

impl SharedColumn {
    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn budget(&self) -> MagnitudeBudget {
        self.shares.first().map(|s| s.budget.clone()).unwrap_or_else(|| MagnitudeBudget::from_u64(0))
    }

    pub fn scale_exp(&self) -> u32 {
        self.shares.first().map(|s| s.scale_exp).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub enum Denominator {
    Shared(AdditiveShare),
    /// Public positive integer, already at the numerator's scale.
    Public(BigInt),
}

#[derive(Debug, Clone)]
pub struct TestStatisticPair {
    pub kind: TestKind,
    pub num: AdditiveShare,
    pub den: Denominator,
    pub sign_wire: Option<AdditiveShare>,
    pub squared: bool,
    pub scale_exp: u32,
}

impl TestStatisticPair {
    fn shared(kind: TestKind, num: AdditiveShare, den: AdditiveShare, sign_wire: Option<AdditiveShare>) -> Self {
        assert_eq!(num.scale_exp, den.scale_exp, "numerator and denominator scales differ");
        let scale_exp = num.scale_exp;
        Self { kind, num, den: Denominator::Shared(den), sign_wire, squared: kind.squared(), scale_exp }
    }
}

/// How elementwise products inside sums are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MulStrategy {
    /// `Π E(x_i)^[y_i]` per party, then one conversion per sum.
    #[default]
    InnerProduct,
    /// One Beaver triple per element.
    Beaver,
}

/// Converts encrypted columns to shares, packing several values per
/// decryption. `bound` limits every raw encoded value.
pub fn load_columns<T: Transport>(
    party: &mut Party<T>,
    columns: &[&[Ciphertext]],
    bound: &BigUint,
    scale_exp: u32,
) -> Result<Vec<SharedColumn>, CircuitError> {
    let flat: Vec<Ciphertext> = columns.iter().flat_map(|c| c.iter().cloned()).collect();
    let mut shares = party.ct_to_shares_packed(&flat, bound, scale_exp)?.into_iter();
    Ok(columns
        .iter()
        .map(|c| SharedColumn { cts: c.to_vec(), shares: shares.by_ref().take(c.len()).collect() })
        .collect())
}

/// Tops the triple pool up to `count`.
pub fn ensure_triples<T: Transport>(party: &mut Party<T>, count: usize) -> Result<(), MpcError> {
    let have = party.triples_available();
    if have < count {
        party.triple_gen(count - have)?;
    }
    Ok(())
}

fn dot_triples(strategy: MulStrategy, pairs: &[(&SharedColumn, &SharedColumn)]) -> usize {
    match strategy {
        MulStrategy::InnerProduct => 0,
        MulStrategy::Beaver => pairs.iter().map(|(x, _)| x.len()).sum(),
    }
}

/// `Σ_i x_i·y_i` for each pair, as shares at scale `sx + sy`.
pub fn dot_products<T: Transport>(
    party: &mut Party<T>,
    pairs: &[(&SharedColumn, &SharedColumn)],
    strategy: MulStrategy,
) -> Result<Vec<AdditiveShare>, CircuitError> {
    for (x, y) in pairs {
        if x.len() != y.len() || x.is_empty() {
            return Err(CircuitError::Spec("columns must have equal, nonzero length".into()));
        }
    }
    match strategy {
        MulStrategy::InnerProduct => {
            let inputs: Vec<(&[Ciphertext], &[AdditiveShare])> =
                pairs.iter().map(|(x, y)| (x.cts.as_slice(), y.shares.as_slice())).collect();
            let cts = party.encrypted_inner_products(&inputs)?;
            let mut out = Vec::with_capacity(pairs.len());
            // Sums of different shapes need different budgets, so convert one by one.
            for ((x, y), ct) in pairs.iter().zip(cts) {
                let budget = x.budget().mul(&y.budget()).scale(&BigInt::from(x.len()));
                let scale = x.scale_exp() + y.scale_exp();
                out.push(party.ct_to_shares(&[ct], scale, &budget)?.remove(0));
            }
            Ok(out)
        }
        MulStrategy::Beaver => {
            let elems: Vec<(&AdditiveShare, &AdditiveShare)> =
                pairs.iter().flat_map(|(x, y)| x.shares.iter().zip(y.shares.iter())).collect();
            ensure_triples(party, elems.len())?;
            let prods = party.mul_many(&elems)?;
            let n = party.n().clone();
            let mut it = prods.iter();
            pairs
                .iter()
                .map(|(x, _)| Ok(sum_shares(it.by_ref().take(x.len()), &n)?))
                .collect()
        }
    }
}

fn column_sum(col: &SharedColumn, n: &BigUint) -> Result<AdditiveShare, CircuitError> {
    Ok(sum_shares(&col.shares, n)?)
}

/// Two-sample t statistic, squared, with the sign of `Sx - Sy`.
pub fn ttest_circuit<T: Transport>(
    party: &mut Party<T>,
    x: &SharedColumn,
    y: &SharedColumn,
    strategy: MulStrategy,
) -> Result<TestStatisticPair, CircuitError> {
    let rows = x.len();
    if rows != y.len() || rows < 2 {
        return Err(CircuitError::Spec("t-test needs two columns of equal length >= 2".into()));
    }
    let n = party.n().clone();
    let big_n = BigInt::from(rows);
    ensure_triples(party, 3 + REVEAL_TRIPLES + dot_triples(strategy, &[(x, x), (y, y)]))?;
    let sx = column_sum(x, &n)?;
    let sy = column_sum(y, &n)?;
    let q = dot_products(party, &[(x, x), (y, y)], strategy)?;
    let d = party.sub(&sx, &sy)?;
    let sq = party.mul_many(&[(&d, &d), (&sx, &sx), (&sy, &sy)])?;
    let num = party.const_mult(&sq[0], &BigInt::from(rows - 1))?;
    let nq = party.add(&party.const_mult(&q[0], &big_n)?, &party.const_mult(&q[1], &big_n)?)?;
    let den = party.sub(&party.sub(&nq, &sq[1])?, &sq[2])?;
    Ok(TestStatisticPair::shared(TestKind::TTest, num, den, Some(d)))
}

/// Pearson correlation, squared, with the sign of the co-moment.
pub fn pearson_circuit<T: Transport>(
    party: &mut Party<T>,
    x: &SharedColumn,
    y: &SharedColumn,
    strategy: MulStrategy,
) -> Result<TestStatisticPair, CircuitError> {
    let rows = x.len();
    if rows != y.len() || rows < 3 {
        return Err(CircuitError::Spec("Pearson needs two columns of equal length >= 3".into()));
    }
    let n = party.n().clone();
    let big_n = BigInt::from(rows);
    let pairs = [(x, y), (x, x), (y, y)];
    ensure_triples(party, 6 + REVEAL_TRIPLES + dot_triples(strategy, &pairs))?;
    let sx = column_sum(x, &n)?;
    let sy = column_sum(y, &n)?;
    let dots = dot_products(party, &pairs, strategy)?;
    let m = party.mul_many(&[(&sx, &sy), (&sx, &sx), (&sy, &sy)])?;
    let c = party.sub(&party.const_mult(&dots[0], &big_n)?, &m[0])?;
    let vx = party.sub(&party.const_mult(&dots[1], &big_n)?, &m[1])?;
    let vy = party.sub(&party.const_mult(&dots[2], &big_n)?, &m[2])?;
    let m2 = party.mul_many(&[(&c, &c), (&vx, &vy)])?;
    let mut it = m2.into_iter();
    let (num, den) = (it.next().unwrap(), it.next().unwrap());
    Ok(TestStatisticPair::shared(TestKind::Pearson, num, den, Some(c)))
}

/// Goodness of fit from shared category counts at scale 0. The public
/// weights `1/e_i` make the numerator scale `4φ`; the denominator is public.
pub fn chisq_circuit<T: Transport>(
    party: &mut Party<T>,
    counts: &[AdditiveShare],
    eta: &[f64],
    rows: u64,
    phi: u32,
) -> Result<TestStatisticPair, CircuitError> {
    if counts.len() != eta.len() || counts.len() < 2 {
        return Err(CircuitError::Spec("one null probability per category, at least two".into()));
    }
    let n = party.n().clone();
    ensure_triples(party, counts.len() + REVEAL_TRIPLES)?;
    let mut diffs = Vec::with_capacity(counts.len());
    let mut weights = Vec::with_capacity(counts.len());
    for (count, &p) in counts.iter().zip(eta) {
        let e = rows as f64 * p;
        if !(e > 0.0) {
            return Err(CircuitError::Spec("expected counts must be positive".into()));
        }
        let expected = encode_f64(e, phi);
        let scaled = count.fixed_mult(&pow2(phi), phi, &n)?;
        diffs.push(party.const_add(&scaled, &-expected)?);
        weights.push(encode_f64(1.0 / e, 2 * phi));
    }
    let pairs: Vec<_> = diffs.iter().map(|d| (d, d)).collect();
    let squares = party.mul_many(&pairs)?;
    let terms: Vec<AdditiveShare> = squares
        .iter()
        .zip(&weights)
        .map(|(s, w)| s.fixed_mult(w, 2 * phi, &n))
        .collect::<Result<_, _>>()?;
    let num = sum_shares(&terms, &n)?;
    let scale_exp = num.scale_exp;
    Ok(TestStatisticPair {
        kind: TestKind::ChiSquared,
        num,
        den: Denominator::Public(pow2(scale_exp)),
        sign_wire: None,
        squared: false,
        scale_exp,
    })
}

/// One-way F statistic over `k` equal-length groups, with the within-group
/// divisor `n - k`.
pub fn ftest_circuit<T: Transport>(
    party: &mut Party<T>,
    groups: &[SharedColumn],
    strategy: MulStrategy,
) -> Result<TestStatisticPair, CircuitError> {
    let k = groups.len();
    let rows = groups.first().map(SharedColumn::len).unwrap_or(0);
    if k < 2 || rows < 2 || groups.iter().any(|g| g.len() != rows) {
        return Err(CircuitError::Spec("F test needs at least two groups of equal length >= 2".into()));
    }
    if rows <= k {
        return Err(CircuitError::Degenerate("F test needs more rows per group than groups"));
    }
    let n = party.n().clone();
    let pairs: Vec<(&SharedColumn, &SharedColumn)> = groups.iter().map(|g| (g, g)).collect();
    ensure_triples(party, 2 * k + REVEAL_TRIPLES + dot_triples(strategy, &pairs))?;
    let sums: Vec<AdditiveShare> = groups.iter().map(|g| column_sum(g, &n)).collect::<Result<_, _>>()?;
    let total = sum_shares(&sums, &n)?;
    let dots = dot_products(party, &pairs, strategy)?;
    let q = sum_shares(&dots, &n)?;
    let devs: Vec<AdditiveShare> = sums
        .iter()
        .map(|s| party.sub(&party.const_mult(s, &BigInt::from(k))?, &total))
        .collect::<Result<_, _>>()?;
    let mut prods: Vec<(&AdditiveShare, &AdditiveShare)> = devs.iter().map(|d| (d, d)).collect();
    prods.extend(sums.iter().map(|s| (s, s)));
    let sq = party.mul_many(&prods)?;
    let between = sum_shares(&sq[..k], &n)?;
    let sum_s2 = sum_shares(&sq[k..], &n)?;
    let num = party.const_mult(&between, &BigInt::from(rows - k))?;
    let within = party.sub(&party.const_mult(&q, &BigInt::from(rows))?, &sum_s2)?;
    let kk = (k * k * (k - 1)) as u64;
    let den = party.const_mult(&within, &BigInt::from(kk))?;
    Ok(TestStatisticPair::shared(TestKind::FTest, num, den, None))
}

/// Nearest integer to `x·2^e`.
pub fn encode_f64(x: f64, e: u32) -> BigInt {
    let r = Rational::from_float(x).expect("finite constant") * Rational::from_integer(pow2(e));
    r.round().to_integer()
}

/// Opens the statistic: a masked pair for shared denominators, a plain
/// reveal for public ones, and the sign wire if there is one.
pub fn reveal_statistic<T: Transport>(
    party: &mut Party<T>,
    pair: &TestStatisticPair,
) -> Result<RevealedStatistic, CircuitError> {
    let quotient = match &pair.den {
        Denominator::Shared(den) => {
            let (a, b) = party.masked_pair_reveal(&pair.num, den).map_err(|e| match e {
                MpcError::DivisionByZero => CircuitError::Degenerate("zero denominator"),
                e => e.into(),
            })?;
            if b.is_negative() {
                return Err(CircuitError::Degenerate("negative denominator"));
            }
            Rational::new(a, b)
        }
        Denominator::Public(d) => {
            let v = party.reveal(&pair.num)?;
            Rational::new(v, d.clone())
        }
    };
    let sign = match &pair.sign_wire {
        Some(w) if !quotient.is_zero() => party.sign_reveal(w)?,
        _ => 1,
    };
    Ok(RevealedStatistic { kind: pair.kind, quotient, sign })
}

/// Opens one bit: whether the revealed quotient would exceed `threshold`.
pub fn significance_circuit<T: Transport>(
    party: &mut Party<T>,
    pair: &TestStatisticPair,
    threshold: f64,
    phi: u32,
) -> Result<bool, CircuitError> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(CircuitError::Spec("threshold must be finite and nonnegative".into()));
    }
    let n = party.n().clone();
    let diff = match &pair.den {
        Denominator::Shared(den) => {
            let lhs = pair.num.fixed_mult(&pow2(phi), phi, &n)?;
            let rhs = den.fixed_mult(&encode_f64(threshold, phi), phi, &n)?;
            party.sub(&lhs, &rhs)?
        }
        Denominator::Public(d) => {
            let c = Rational::from_float(threshold).expect("finite") * Rational::from_integer(d.clone());
            party.const_add(&pair.num, &-c.round().to_integer())?
        }
    };
    Ok(party.sign_reveal(&diff)? > 0)
}

/// Upper bound on `|x|` of raw values with domain bound `domain` at scale
/// `phi`.
pub fn raw_bound(domain: u64, phi: u32) -> BigUint {
    BigUint::from(domain) << phi as usize
}

/// Category totals from one-hot indicator columns: homomorphic sums, one
/// ciphertext per category.
pub fn category_totals(pk: &crate::paillier::PublicKey, onehot: &[&[Ciphertext]]) -> Vec<Ciphertext> {
    onehot.iter().map(|col| pk.sum(col.iter())).collect()
}

/// Converts category totals to shares at scale 0.
pub fn load_counts<T: Transport>(
    party: &mut Party<T>,
    totals: &[Ciphertext],
    rows: u64,
) -> Result<Vec<AdditiveShare>, CircuitError> {
    Ok(party.ct_to_shares_packed(totals, &BigUint::from(rows), 0)?)
}
