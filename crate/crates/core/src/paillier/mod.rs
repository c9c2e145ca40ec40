//! Threshold Paillier with a trusted dealer.
//!
//! Key generation shares the decryption exponent `d` (with `d = 1 mod N`
//! and `d = 0 mod M`, `M = p'q'`) through a degree `t - 1` polynomial over
//! `Z_{NM}`. Party `i` decrypts by publishing `c^(2 Δ s_i)` together with
//! a Fiat-Shamir proof that the same exponent links `c^4 -> c_i^2` and
//! `v -> v_i`; any `t` verified shares combine through integer Lagrange
//! coefficients scaled by `Δ = n!`.

mod primes;

use std::fmt;
use std::time::Duration;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, hex_biguint, hex_biguint_vec};

pub use primes::{is_probable_prime, is_safe_prime, random_safe_prime, MILLER_RABIN_ROUNDS};

/// Statistical parameter for the decryption-share proofs; challenges are
/// `2 * PROOF_KAPPA` bits.
pub const PROOF_KAPPA: u32 = 40;

const SHARE_PROOF_DOMAIN: &[u8] = b"star/paillier/share-proof/v1";
const BATCH_WEIGHT_DOMAIN: &[u8] = b"star/paillier/batch-weights/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("safe-prime search for {bits} bits gave up after {elapsed:?}")]
    PrimeSearchTimeout { bits: u64, elapsed: Duration },
    #[error("primes are not usable: {0}")]
    DegeneratePrimes(String),
    #[error("plaintext is outside [0, N)")]
    PlaintextOutOfRange,
    #[error("ciphertext is not a unit below N^2")]
    InvalidCiphertext,
    #[error("need {need} decryption shares, got {got}")]
    WrongShareCount { need: usize, got: usize },
    #[error("duplicate decryption share from party {0}")]
    DuplicateShare(u16),
    #[error("decryption share from party {0} belongs to a different ciphertext")]
    ForeignShare(u16),
    #[error("no such party {0}")]
    UnknownParty(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaillierParams {
    /// Bit length of the public modulus `N`.
    pub modulus_bits: u64,
    pub n_parties: u16,
    pub threshold: u16,
}

impl PaillierParams {
    pub fn new(modulus_bits: u64, n_parties: u16, threshold: u16) -> Result<Self, PaillierError> {
        let params = Self { modulus_bits, n_parties, threshold };
        params.validate()?;
        Ok(params)
    }

    /// Structural constraints only; the modulus size is checked by
    /// [`keygen`], which is the only place it matters.
    pub fn validate(&self) -> Result<(), PaillierError> {
        if self.n_parties < 2 {
            return Err(PaillierError::InvalidParams("at least two parties are required".into()));
        }
        if self.threshold < 1 {
            return Err(PaillierError::InvalidParams("threshold must be at least 1".into()));
        }
        if 2 * self.threshold as u32 - 1 > self.n_parties as u32 {
            return Err(PaillierError::InvalidParams(format!(
                "2t - 1 = {} exceeds the number of parties {}",
                2 * self.threshold as u32 - 1,
                self.n_parties
            )));
        }
        Ok(())
    }

    /// `Δ = n!`
    pub fn delta(&self) -> BigUint {
        (1..=self.n_parties as u32).fold(BigUint::one(), |acc, i| acc * i)
    }
}

/// Public material: the modulus, the proof generator `v` and one
/// verification key per party.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PublicKeyFile", into = "PublicKeyFile")]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    v: BigUint,
    verification_keys: Vec<BigUint>,
    params: PaillierParams,
    delta: BigUint,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PublicKeyFile {
    #[serde(with = "hex_biguint")]
    n: BigUint,
    #[serde(with = "hex_biguint")]
    v: BigUint,
    #[serde(with = "hex_biguint_vec")]
    verification_keys: Vec<BigUint>,
    n_parties: u16,
    threshold: u16,
}

impl TryFrom<PublicKeyFile> for PublicKey {
    type Error = PaillierError;

    fn try_from(f: PublicKeyFile) -> Result<Self, Self::Error> {
        let params = PaillierParams {
            modulus_bits: f.n.bits(),
            n_parties: f.n_parties,
            threshold: f.threshold,
        };
        params.validate()?;
        if f.verification_keys.len() != f.n_parties as usize {
            return Err(PaillierError::InvalidParams("one verification key per party".into()));
        }
        Ok(PublicKey::from_parts(f.n, f.v, f.verification_keys, params))
    }
}

impl From<PublicKey> for PublicKeyFile {
    fn from(pk: PublicKey) -> Self {
        PublicKeyFile {
            n: pk.n,
            v: pk.v,
            verification_keys: pk.verification_keys,
            n_parties: pk.params.n_parties,
            threshold: pk.params.threshold,
        }
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("modulus_bits", &self.n.bits())
            .field("n_parties", &self.params.n_parties)
            .field("threshold", &self.params.threshold)
            .finish()
    }
}

/// Party `index`'s share `s_i = f(i)` of the decryption exponent.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyShare {
    pub index: u16,
    #[serde(with = "hex_biguint")]
    pub secret: BigUint,
}

impl fmt::Debug for KeyShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyShare").field("index", &self.index).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ciphertext(#[serde(with = "hex_biguint")] pub BigUint);

/// Fiat-Shamir transcript `(e, z)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareProof {
    #[serde(with = "hex_biguint")]
    pub e: BigUint,
    #[serde(with = "hex_biguint")]
    pub z: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecryptionShare {
    pub index: u16,
    #[serde(with = "hex_biguint")]
    pub ci: BigUint,
    pub proof: ShareProof,
}

/// One party's shares for a batch of ciphertexts under a single proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchDecryptionShare {
    pub index: u16,
    #[serde(with = "hex_biguint_vec")]
    pub shares: Vec<BigUint>,
    pub proof: ShareProof,
}

/// A decryption share whose proof has been checked against a specific
/// ciphertext. Only the verification functions construct these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedShare {
    index: u16,
    ci: BigUint,
    ciphertext: BigUint,
}

impl VerifiedShare {
    pub fn index(&self) -> u16 {
        self.index
    }
}

/// Dealer output for a fixed pair of safe primes.
pub fn keygen_with_primes<R: RngCore + CryptoRng>(
    params: &PaillierParams,
    p: &BigUint,
    q: &BigUint,
    rng: &mut R,
) -> Result<(PublicKey, Vec<KeyShare>), PaillierError> {
    params.validate()?;
    if p == q {
        return Err(PaillierError::DegeneratePrimes("p and q must differ".into()));
    }
    for prime in [p, q] {
        if !is_safe_prime(prime, rng) {
            return Err(PaillierError::DegeneratePrimes(format!("{prime} is not a safe prime")));
        }
    }
    let n = p * q;
    let n_squared = &n * &n;
    let m = (p >> 1usize) * (q >> 1usize);
    if !n.gcd(&m).is_one() {
        return Err(PaillierError::DegeneratePrimes(
            "N and M share a factor, so d cannot be chosen by CRT".into(),
        ));
    }
    if BigUint::from(params.n_parties) >= *p.min(q) {
        return Err(PaillierError::DegeneratePrimes("party count must stay below both primes".into()));
    }

    // d = 1 mod N, d = 0 mod M; c^4 and v have order dividing NM
    let m_inv = m.modinv(&n).expect("gcd checked above");
    let modulus = &n * &m;
    let d = (&m * m_inv) % &modulus;

    let mut coefficients = vec![d];
    for _ in 1..params.threshold {
        coefficients.push(rng.gen_biguint_below(&modulus));
    }
    let shares: Vec<KeyShare> = (1..=params.n_parties)
        .map(|i| {
            let x = BigUint::from(i);
            let secret = coefficients
                .iter()
                .rev()
                .fold(BigUint::zero(), |acc, a| (acc * &x + a) % &modulus);
            KeyShare { index: i, secret }
        })
        .collect();

    let r = random_unit(&n, &n_squared, rng);
    let v = (&r * &r) % &n_squared;
    let delta = params.delta();
    let verification_keys = shares
        .iter()
        .map(|s| v.modpow(&(&s.secret * &delta), &n_squared))
        .collect();
    let params = PaillierParams { modulus_bits: n.bits(), ..*params };
    Ok((PublicKey::from_parts(n, v, verification_keys, params), shares))
}

/// Fresh safe primes of `modulus_bits / 2` bits each, then
/// [`keygen_with_primes`].
pub fn keygen<R: RngCore + CryptoRng>(
    params: &PaillierParams,
    rng: &mut R,
    timeout: Option<Duration>,
) -> Result<(PublicKey, Vec<KeyShare>), PaillierError> {
    params.validate()?;
    if params.modulus_bits < 512 || params.modulus_bits % 2 != 0 {
        return Err(PaillierError::InvalidParams(format!(
            "modulus must be an even number of bits, at least 512 (got {})",
            params.modulus_bits
        )));
    }
    let half = params.modulus_bits / 2;
    let p = random_safe_prime(half, rng, timeout)?;
    let q = loop {
        let q = random_safe_prime(half, rng, timeout)?;
        if q != p {
            break q;
        }
    };
    keygen_with_primes(params, &p, &q, rng)
}

/// The 512-bit safe-prime pair shipped for fast deterministic tests and
/// demos. Never use it for real data.
pub fn fixture_primes_512() -> (BigUint, BigUint) {
    #[derive(Deserialize)]
    struct Fixture {
        #[serde(with = "hex_biguint")]
        p: BigUint,
        #[serde(with = "hex_biguint")]
        q: BigUint,
    }
    let f: Fixture = serde_json::from_str(include_str!("../../fixtures/paillier-512.json"))
        .expect("bundled fixture parses");
    (f.p, f.q)
}

fn random_unit<R: RngCore + ?Sized>(n: &BigUint, bound: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let r = rng.gen_biguint_range(&BigUint::one(), bound);
        if r.gcd(n).is_one() {
            return r;
        }
    }
}

fn lagrange_at_zero(delta: &BigUint, indices: &[u16], i: u16) -> BigInt {
    let mut numer = BigInt::from(delta.clone());
    let mut denom = BigInt::one();
    for &j in indices.iter().filter(|&&j| j != i) {
        numer *= j as i64;
        denom *= j as i64 - i as i64;
    }
    debug_assert!((&numer % &denom).is_zero());
    numer / denom
}

impl PublicKey {
    fn from_parts(n: BigUint, v: BigUint, verification_keys: Vec<BigUint>, params: PaillierParams) -> Self {
        let delta = params.delta();
        Self {
            n_squared: &n * &n,
            n,
            v,
            verification_keys,
            params,
            delta,
        }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn v(&self) -> &BigUint {
        &self.v
    }

    pub fn params(&self) -> &PaillierParams {
        &self.params
    }

    pub fn threshold(&self) -> usize {
        self.params.threshold as usize
    }

    pub fn n_parties(&self) -> usize {
        self.params.n_parties as usize
    }

    pub fn delta(&self) -> &BigUint {
        &self.delta
    }

    pub fn verification_key(&self, index: u16) -> Option<&BigUint> {
        index
            .checked_sub(1)
            .and_then(|i| self.verification_keys.get(i as usize))
    }

    pub fn verification_keys(&self) -> &[BigUint] {
        &self.verification_keys
    }

    /// Copy with one verification key replaced; used to exercise the
    /// verifier against tampered public material.
    pub fn with_verification_key(&self, index: u16, key: BigUint) -> Result<Self, PaillierError> {
        let mut out = self.clone();
        let slot = index
            .checked_sub(1)
            .and_then(|i| out.verification_keys.get_mut(i as usize))
            .ok_or(PaillierError::UnknownParty(index))?;
        *slot = key;
        Ok(out)
    }

    pub fn is_valid_ciphertext(&self, c: &Ciphertext) -> bool {
        !c.0.is_zero() && c.0 < self.n_squared && c.0.gcd(&self.n).is_one()
    }

    fn check(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if self.is_valid_ciphertext(c) {
            Ok(())
        } else {
            Err(PaillierError::InvalidCiphertext)
        }
    }

    /// `r^(N^2) mod N^2` for a fresh unit `r`.
    pub fn randomizer<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        let r = random_unit(&self.n, &self.n_squared, rng);
        r.modpow(&self.n_squared, &self.n_squared)
    }

    /// `(N+1)^m mod N^2 = 1 + mN`, i.e. an encryption with trivial randomness.
    pub fn encode_plaintext(&self, m: &BigUint) -> Result<BigUint, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        Ok((BigUint::one() + m * &self.n) % &self.n_squared)
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext, PaillierError> {
        let g_m = self.encode_plaintext(m)?;
        Ok(Ciphertext((g_m * self.randomizer(rng)) % &self.n_squared))
    }

    /// Encrypts a signed value through its residue mod `N`.
    pub fn encrypt_signed<R: RngCore + ?Sized>(&self, m: &BigInt, rng: &mut R) -> Ciphertext {
        let residue = crate::numeric::reduce(m, &self.n);
        self.encrypt(&residue, rng).expect("reduced residue is in range")
    }

    /// Deterministic encryption of a public constant (randomizer 1).
    pub fn trivial_encryption(&self, m: &BigInt) -> Ciphertext {
        let residue = crate::numeric::reduce(m, &self.n);
        Ciphertext(self.encode_plaintext(&residue).expect("reduced residue is in range"))
    }

    pub fn rerandomize<R: RngCore + ?Sized>(&self, c: &Ciphertext, rng: &mut R) -> Ciphertext {
        Ciphertext((&c.0 * self.randomizer(rng)) % &self.n_squared)
    }

    /// Homomorphic addition without re-randomization.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
        Ciphertext((&c1.0 * &c2.0) % &self.n_squared)
    }

    pub fn add_rerandomized<R: RngCore + ?Sized>(&self, c1: &Ciphertext, c2: &Ciphertext, rng: &mut R) -> Ciphertext {
        self.rerandomize(&self.add(c1, c2), rng)
    }

    /// Sum of many ciphertexts.
    pub fn sum<'a>(&self, cts: impl IntoIterator<Item = &'a Ciphertext>) -> Ciphertext {
        let acc = cts
            .into_iter()
            .fold(BigUint::one(), |acc, c| (acc * &c.0) % &self.n_squared);
        Ciphertext(acc)
    }

    /// Multiplication by a public integer. Negative constants exponentiate
    /// the inverse ciphertext, which decrypts to the same residue as
    /// exponentiating by `s mod N`.
    pub fn cmult(&self, c: &Ciphertext, s: &BigInt) -> Ciphertext {
        let base = if s.is_negative() {
            c.0.modinv(&self.n_squared).expect("ciphertexts are units")
        } else {
            c.0.clone()
        };
        Ciphertext(base.modpow(s.magnitude(), &self.n_squared))
    }

    pub fn cmult_rerandomized<R: RngCore + ?Sized>(&self, c: &Ciphertext, s: &BigInt, rng: &mut R) -> Ciphertext {
        self.rerandomize(&self.cmult(c, s), rng)
    }

    /// Nonce length: the share modulus `NM < N^2`, times `Δ`, times the
    /// `2κ`-bit challenge, plus `κ` bits of statistical slack.
    fn nonce_bits(&self) -> u64 {
        2 * self.n.bits() + self.delta.bits() + 3 * PROOF_KAPPA as u64
    }

    fn challenge(&self, base: &BigUint, vk: &BigUint, ci2: &BigUint, a: &BigUint, b: &BigUint) -> BigUint {
        let digest = codec::hash_biguints(SHARE_PROOF_DOMAIN, [base, &self.v, ci2, vk, a, b]);
        codec::truncate_digest(&digest, 2 * PROOF_KAPPA)
    }

    /// Proves `log_base(target) = log_v(vk) = Δ s_i`.
    fn prove_dleq<R: RngCore + ?Sized>(
        &self,
        share: &KeyShare,
        base: &BigUint,
        target: &BigUint,
        vk: &BigUint,
        rng: &mut R,
    ) -> ShareProof {
        let w = rng.gen_biguint(self.nonce_bits());
        let a = base.modpow(&w, &self.n_squared);
        let b = self.v.modpow(&w, &self.n_squared);
        let e = self.challenge(base, vk, target, &a, &b);
        let z = w + &e * &self.delta * &share.secret;
        ShareProof { e, z }
    }

    fn verify_dleq(&self, base: &BigUint, target: &BigUint, vk: &BigUint, proof: &ShareProof) -> bool {
        let nn = &self.n_squared;
        if proof.e.bits() > 2 * PROOF_KAPPA as u64 || proof.z.bits() > self.nonce_bits() + 1 {
            return false;
        }
        if !target.gcd(&self.n).is_one() || target.is_zero() || target >= nn || !vk.gcd(&self.n).is_one() {
            return false;
        }
        let (Some(target_inv), Some(vk_inv)) = (target.modinv(nn), vk.modinv(nn)) else {
            return false;
        };
        // a = base^z * target^-e, b = v^z * vk^-e
        let a = (base.modpow(&proof.z, nn) * target_inv.modpow(&proof.e, nn)) % nn;
        let b = (self.v.modpow(&proof.z, nn) * vk_inv.modpow(&proof.e, nn)) % nn;
        self.challenge(base, vk, target, &a, &b) == proof.e
    }

    /// `c_i = c^(2 Δ s_i)` with a proof that `log_{c^4}(c_i^2) = log_v(v_i)`.
    pub fn decryption_share<R: RngCore + ?Sized>(
        &self,
        share: &KeyShare,
        c: &Ciphertext,
        rng: &mut R,
    ) -> Result<DecryptionShare, PaillierError> {
        self.check(c)?;
        let vk = self
            .verification_key(share.index)
            .ok_or(PaillierError::UnknownParty(share.index))?;
        let nn = &self.n_squared;
        let exponent = BigUint::from(2u32) * &self.delta * &share.secret;
        let ci = c.0.modpow(&exponent, nn);
        let c4 = c.0.modpow(&BigUint::from(4u32), nn);
        let ci2 = (&ci * &ci) % nn;
        let proof = self.prove_dleq(share, &c4, &ci2, vk, rng);
        Ok(DecryptionShare { index: share.index, ci, proof })
    }

    /// Checks a decryption share; malformed input yields `false`.
    pub fn verify_share(&self, c: &Ciphertext, share: &DecryptionShare) -> bool {
        self.verified(c, share).is_some()
    }

    /// Checks a decryption share and, on success, returns it in the form
    /// [`Self::combine`] accepts.
    pub fn verified(&self, c: &Ciphertext, share: &DecryptionShare) -> Option<VerifiedShare> {
        if !self.is_valid_ciphertext(c) {
            return None;
        }
        let vk = self.verification_key(share.index)?;
        let nn = &self.n_squared;
        let c4 = c.0.modpow(&BigUint::from(4u32), nn);
        let ci2 = (&share.ci * &share.ci) % nn;
        self.verify_dleq(&c4, &ci2, vk, &share.proof).then(|| VerifiedShare {
            index: share.index,
            ci: share.ci.clone(),
            ciphertext: c.0.clone(),
        })
    }

    fn batch_weights(&self, vk: &BigUint, c4s: &[BigUint], ci2s: &[BigUint]) -> Vec<BigUint> {
        let seed = codec::hash_biguints(
            BATCH_WEIGHT_DOMAIN,
            [&self.v, vk].into_iter().chain(c4s.iter()).chain(ci2s.iter()),
        );
        let seed = BigUint::from_bytes_be(&seed);
        (0..c4s.len())
            .map(|j| {
                let digest = codec::hash_biguints(BATCH_WEIGHT_DOMAIN, [&seed, &BigUint::from(j)]);
                codec::truncate_digest(&digest, PROOF_KAPPA)
            })
            .collect()
    }

    /// Folds the per-ciphertext statements into one with random small
    /// weights: `C = Π (c_j^4)^ρ_j`, `D = Π (c_ij^2)^ρ_j`.
    fn fold_batch(&self, vk: &BigUint, cts: &[Ciphertext], shares: &[BigUint]) -> (BigUint, BigUint) {
        let nn = &self.n_squared;
        let four = BigUint::from(4u32);
        let c4s: Vec<BigUint> = cts.iter().map(|c| c.0.modpow(&four, nn)).collect();
        let ci2s: Vec<BigUint> = shares.iter().map(|s| (s * s) % nn).collect();
        let weights = self.batch_weights(vk, &c4s, &ci2s);
        let mut big_c = BigUint::one();
        let mut big_d = BigUint::one();
        for ((c4, ci2), rho) in c4s.iter().zip(&ci2s).zip(&weights) {
            big_c = (big_c * c4.modpow(rho, nn)) % nn;
            big_d = (big_d * ci2.modpow(rho, nn)) % nn;
        }
        (big_c, big_d)
    }

    /// Decryption shares for many ciphertexts at once, under one proof over
    /// the randomly weighted product of the individual statements.
    pub fn batch_decryption_share<R: RngCore + ?Sized>(
        &self,
        share: &KeyShare,
        cts: &[Ciphertext],
        rng: &mut R,
    ) -> Result<BatchDecryptionShare, PaillierError> {
        let vk = self
            .verification_key(share.index)
            .ok_or(PaillierError::UnknownParty(share.index))?;
        let exponent = BigUint::from(2u32) * &self.delta * &share.secret;
        let mut shares = Vec::with_capacity(cts.len());
        for c in cts {
            self.check(c)?;
            shares.push(c.0.modpow(&exponent, &self.n_squared));
        }
        let (big_c, big_d) = self.fold_batch(vk, cts, &shares);
        let proof = self.prove_dleq(share, &big_c, &big_d, vk, rng);
        Ok(BatchDecryptionShare { index: share.index, shares, proof })
    }

    /// Like [`Self::batch_decryption_share`], also returning the shares in
    /// combinable form. They come from our own key, so there is nothing to
    /// verify.
    pub fn own_batch_decryption_share<R: RngCore + ?Sized>(
        &self,
        share: &KeyShare,
        cts: &[Ciphertext],
        rng: &mut R,
    ) -> Result<(BatchDecryptionShare, Vec<VerifiedShare>), PaillierError> {
        let batch = self.batch_decryption_share(share, cts, rng)?;
        let own = cts
            .iter()
            .zip(&batch.shares)
            .map(|(c, ci)| VerifiedShare { index: share.index, ci: ci.clone(), ciphertext: c.0.clone() })
            .collect();
        Ok((batch, own))
    }

    pub fn verify_batch(&self, cts: &[Ciphertext], batch: &BatchDecryptionShare) -> Option<Vec<VerifiedShare>> {
        if batch.shares.len() != cts.len() || !cts.iter().all(|c| self.is_valid_ciphertext(c)) {
            return None;
        }
        let vk = self.verification_key(batch.index)?;
        let nn = &self.n_squared;
        if batch.shares.iter().any(|s| s.is_zero() || s >= nn || !s.gcd(&self.n).is_one()) {
            return None;
        }
        let (big_c, big_d) = self.fold_batch(vk, cts, &batch.shares);
        if !self.verify_dleq(&big_c, &big_d, vk, &batch.proof) {
            return None;
        }
        Some(
            cts.iter()
                .zip(&batch.shares)
                .map(|(c, ci)| VerifiedShare {
                    index: batch.index,
                    ci: ci.clone(),
                    ciphertext: c.0.clone(),
                })
                .collect(),
        )
    }

    /// Combines exactly `t` verified shares of `c`.
    pub fn combine(&self, c: &Ciphertext, shares: &[VerifiedShare]) -> Result<BigUint, PaillierError> {
        let t = self.threshold();
        if shares.len() != t {
            return Err(PaillierError::WrongShareCount { need: t, got: shares.len() });
        }
        let mut indices: Vec<u16> = Vec::with_capacity(t);
        for s in shares {
            if s.ciphertext != c.0 {
                return Err(PaillierError::ForeignShare(s.index));
            }
            if indices.contains(&s.index) {
                return Err(PaillierError::DuplicateShare(s.index));
            }
            indices.push(s.index);
        }
        let nn = &self.n_squared;
        let mut acc = BigUint::one();
        for s in shares {
            let lambda = lagrange_at_zero(&self.delta, &indices, s.index) * BigInt::from(2);
            let base = if lambda.is_negative() {
                s.ci.modinv(nn).ok_or(PaillierError::InvalidCiphertext)?
            } else {
                s.ci.clone()
            };
            acc = (acc * base.modpow(lambda.magnitude(), nn)) % nn;
        }
        // acc = (1 + N)^(4 Δ^2 m)
        let l = (acc - 1u32) / &self.n;
        let four_delta_sq = (BigUint::from(4u32) * &self.delta * &self.delta) % &self.n;
        let inv = four_delta_sq
            .modinv(&self.n)
            .ok_or_else(|| PaillierError::DegeneratePrimes("4Δ^2 is not invertible mod N".into()))?;
        Ok((l * inv) % &self.n)
    }

    /// Full threshold decryption with the first `t` of the supplied key
    /// shares. Intended for the dealer and for tests.
    pub fn decrypt_with<R: RngCore + ?Sized>(
        &self,
        key_shares: &[KeyShare],
        c: &Ciphertext,
        rng: &mut R,
    ) -> Result<BigUint, PaillierError> {
        let t = self.threshold();
        if key_shares.len() < t {
            return Err(PaillierError::WrongShareCount { need: t, got: key_shares.len() });
        }
        let verified = key_shares[..t]
            .iter()
            .map(|ks| {
                let share = self.decryption_share(ks, c, rng)?;
                self.verified(c, &share).ok_or(PaillierError::InvalidCiphertext)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.combine(c, &verified)
    }

    /// Centered plaintext, for values known to be small signed integers.
    pub fn decrypt_signed_with<R: RngCore + ?Sized>(
        &self,
        key_shares: &[KeyShare],
        c: &Ciphertext,
        rng: &mut R,
    ) -> Result<BigInt, PaillierError> {
        let m = self.decrypt_with(key_shares, c, rng)?;
        Ok(crate::numeric::from_ring(&m, &self.n).expect("plaintext is reduced"))
    }
}

/// Keeps the sign explicit for callers that hand in `BigUint` plaintexts.
pub fn to_signed(v: &BigUint) -> BigInt {
    BigInt::from_biguint(Sign::Plus, v.clone())
}
