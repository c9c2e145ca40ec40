//! One party's half of the online protocol.
//!
//! Every method is called by all parties with the same public arguments and
//! in the same order; the methods communicate through lockstep broadcast
//! rounds of the party's [`Transport`].

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::net::{NetError, Tag, Transport};
use super::share::{AdditiveShare, BeaverTriple};
use crate::numeric::{from_ring, MagnitudeBudget, NumericError};
use crate::paillier::{
    BatchDecryptionShare, Ciphertext, KeyShare, PaillierError, PublicKey, ShareProof, VerifiedShare,
};

/// Default statistical masking parameter.
pub const DEFAULT_KAPPA: u32 = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MpcError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("party {party} misbehaved: {what}")]
    Misbehaving { party: u16, what: String },
    #[error("party {0} did not supply its share")]
    MissingShare(u16),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("masked denominator revealed as zero")]
    DivisionByZero,
    #[error("Beaver triple {0} was already consumed")]
    TripleReuse(u64),
    #[error("no preprocessed Beaver triples left")]
    NoTriples,
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub struct Party<T: Transport> {
    net: T,
    pk: Arc<PublicKey>,
    key: KeyShare,
    rng: ChaCha20Rng,
    kappa: u32,
    triples: VecDeque<BeaverTriple>,
    used_triples: HashSet<u64>,
    next_triple_id: u64,
}

fn to_bytes(v: &BigUint) -> Vec<u8> {
    v.to_bytes_be()
}

fn from_bytes(b: &[u8]) -> BigUint {
    BigUint::from_bytes_be(b)
}

impl<T: Transport> Party<T> {
    pub fn new(net: T, pk: Arc<PublicKey>, key: KeyShare, rng: ChaCha20Rng, kappa: u32) -> Self {
        assert_eq!(net.party(), key.index, "key share belongs to another party");
        Self {
            net,
            pk,
            key,
            rng,
            kappa,
            triples: VecDeque::new(),
            used_triples: HashSet::new(),
            next_triple_id: 0,
        }
    }

    /// Seeds the party's randomness from `seed` and its id, for
    /// reproducible runs.
    pub fn seeded(net: T, pk: Arc<PublicKey>, key: KeyShare, seed: u64, kappa: u32) -> Self {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_le_bytes());
        s[8..10].copy_from_slice(&key.index.to_le_bytes());
        Self::new(net, pk, key, ChaCha20Rng::from_seed(s), kappa)
    }

    pub fn id(&self) -> u16 {
        self.net.party()
    }

    pub fn n_parties(&self) -> u16 {
        self.net.n_parties()
    }

    pub fn pk(&self) -> &PublicKey {
        &self.pk
    }

    pub fn n(&self) -> &BigUint {
        self.pk.n()
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn net(&mut self) -> &mut T {
        &mut self.net
    }

    pub fn transcript_digest(&self) -> [u8; 32] {
        self.net.transcript_digest()
    }

    pub fn triples_available(&self) -> usize {
        self.triples.len()
    }

    /// Raw broadcast round of byte strings.
    pub fn exchange(&mut self, tag: Tag, items: Vec<Vec<u8>>) -> Result<Vec<Vec<Vec<u8>>>, MpcError> {
        Ok(self.net.exchange(tag, items)?)
    }

    /// Broadcast round of integers; every party must send `expect` items.
    fn exchange_ints(&mut self, tag: Tag, items: &[BigUint], expect: usize) -> Result<Vec<Vec<BigUint>>, MpcError> {
        let all = self.net.exchange(tag, items.iter().map(to_bytes).collect())?;
        all.into_iter()
            .enumerate()
            .map(|(i, msg)| {
                if msg.len() != expect {
                    return Err(MpcError::MissingShare(i as u16 + 1));
                }
                Ok(msg.iter().map(|b| from_bytes(b)).collect())
            })
            .collect()
    }

    pub fn abort(&mut self, reason: &str) {
        self.net.abort(reason);
    }

    /// Threshold decryption of public ciphertexts. Parties `1..=t` publish
    /// batched decryption shares; every party checks every proof.
    pub fn threshold_decrypt(&mut self, cts: &[Ciphertext]) -> Result<Vec<BigUint>, MpcError> {
        if cts.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.pk.threshold() as u16;
        let me = self.id();
        let mut own = None;
        let mine = if me <= t {
            let (batch, verified) = self.pk.own_batch_decryption_share(&self.key, cts, &mut self.rng)?;
            own = Some(verified);
            let mut items: Vec<Vec<u8>> = batch.shares.iter().map(to_bytes).collect();
            items.push(to_bytes(&batch.proof.e));
            items.push(to_bytes(&batch.proof.z));
            items
        } else {
            Vec::new()
        };
        let all = self.net.exchange(Tag::DecShares, mine)?;
        let mut per_ct: Vec<Vec<VerifiedShare>> = vec![Vec::with_capacity(t as usize); cts.len()];
        for j in 1..=t {
            let verified = if j == me {
                own.take().expect("decryptor computed its own batch")
            } else {
                let msg = &all[j as usize - 1];
                if msg.len() != cts.len() + 2 {
                    return Err(MpcError::MissingShare(j));
                }
                let batch = BatchDecryptionShare {
                    index: j,
                    shares: msg[..cts.len()].iter().map(|b| from_bytes(b)).collect(),
                    proof: ShareProof { e: from_bytes(&msg[cts.len()]), z: from_bytes(&msg[cts.len() + 1]) },
                };
                self.pk.verify_batch(cts, &batch).ok_or_else(|| MpcError::Misbehaving {
                    party: j,
                    what: "decryption share proof does not verify".into(),
                })?
            };
            for (slot, v) in per_ct.iter_mut().zip(verified) {
                slot.push(v);
            }
        }
        cts.iter()
            .zip(&per_ct)
            .map(|(c, shares)| Ok(self.pk.combine(c, shares)?))
            .collect()
    }

    /// Converts ciphertexts into additive shares with uniform masks: each
    /// party publishes `E(r_i)`, the masked ciphertext is decrypted to `w`,
    /// party 1 keeps `w - r_1` and every other party `-r_i`.
    pub fn ct_to_shares(
        &mut self,
        cts: &[Ciphertext],
        scale_exp: u32,
        budget: &MagnitudeBudget,
    ) -> Result<Vec<AdditiveShare>, MpcError> {
        let n = self.pk.n().clone();
        let masks: Vec<BigUint> = cts.iter().map(|_| self.rng.gen_biguint_below(&n)).collect();
        let enc: Vec<BigUint> = masks
            .iter()
            .map(|r| Ok(self.pk.encrypt(r, &mut self.rng)?.0))
            .collect::<Result<_, MpcError>>()?;
        let all = self.exchange_ints(Tag::Masks, &enc, cts.len())?;
        let masked: Vec<Ciphertext> = cts
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let mut acc = c.clone();
                for (p, party_masks) in all.iter().enumerate() {
                    let m = Ciphertext(party_masks[j].clone());
                    if !self.pk.is_valid_ciphertext(&m) {
                        return Err(MpcError::Misbehaving { party: p as u16 + 1, what: "invalid mask ciphertext".into() });
                    }
                    acc = self.pk.add(&acc, &m);
                }
                Ok(acc)
            })
            .collect::<Result<_, MpcError>>()?;
        let opened = self.threshold_decrypt(&masked)?;
        let me = self.id();
        Ok(opened
            .iter()
            .zip(&masks)
            .map(|(w, r)| {
                let value = if me == 1 { (w + &n - r) % &n } else { (&n - r) % &n };
                AdditiveShare::new(me, value, scale_exp, budget.clone())
            })
            .collect())
    }

    /// Conversion for wires with `|x| <= bound`: several values share one
    /// ciphertext in `L`-bit slots. Each slot holds `x + bound` plus one
    /// `(bits(2·bound) + κ)`-bit mask per party, so the decrypted slots hide
    /// the values statistically and never carry into their neighbours.
    pub fn ct_to_shares_packed(
        &mut self,
        cts: &[Ciphertext],
        bound: &BigUint,
        scale_exp: u32,
    ) -> Result<Vec<AdditiveShare>, MpcError> {
        let k = self.n_parties() as u64;
        let value_bits = (bound * 2u32).bits().max(1);
        let mask_bits = value_bits + self.kappa as u64;
        let slot_bits = mask_bits + (64 - k.leading_zeros()) as u64 + 2;
        let slots = ((self.pk.n().bits() - 2) / slot_bits) as usize;
        let budget = MagnitudeBudget::new(bound.clone());
        budget.check(self.pk.n())?;
        if slots < 2 {
            return self.ct_to_shares(cts, scale_exp, &budget);
        }
        let n = self.pk.n().clone();
        let offset = self.pk.trivial_encryption(&BigInt::from(bound.clone()));
        let shift = BigInt::one() << slot_bits as usize;
        let packed: Vec<Ciphertext> = cts
            .chunks(slots)
            .map(|chunk| {
                let mut acc = self.pk.add(chunk.last().expect("non-empty chunk"), &offset);
                for c in chunk.iter().rev().skip(1) {
                    acc = self.pk.add(&self.pk.add(&self.pk.cmult(&acc, &shift), c), &offset);
                }
                acc
            })
            .collect();
        let masks: Vec<Vec<BigUint>> = cts
            .chunks(slots)
            .map(|chunk| chunk.iter().map(|_| self.rng.gen_biguint(mask_bits)).collect())
            .collect();
        let enc: Vec<BigUint> = masks
            .iter()
            .map(|ms| {
                let m = ms.iter().rev().fold(BigUint::zero(), |acc, r| (acc << slot_bits as usize) + r);
                Ok(self.pk.encrypt(&m, &mut self.rng)?.0)
            })
            .collect::<Result<_, MpcError>>()?;
        let all = self.exchange_ints(Tag::Masks, &enc, packed.len())?;
        let masked: Vec<Ciphertext> = packed
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let mut acc = c.clone();
                for (p, party_masks) in all.iter().enumerate() {
                    let m = Ciphertext(party_masks[j].clone());
                    if !self.pk.is_valid_ciphertext(&m) {
                        return Err(MpcError::Misbehaving { party: p as u16 + 1, what: "invalid mask ciphertext".into() });
                    }
                    acc = self.pk.add(&acc, &m);
                }
                Ok(acc)
            })
            .collect::<Result<_, MpcError>>()?;
        let opened = self.threshold_decrypt(&masked)?;
        let me = self.id();
        let slot_mask = (BigUint::one() << slot_bits as usize) - 1u32;
        let mut out = Vec::with_capacity(cts.len());
        for (w, ms) in opened.iter().zip(&masks) {
            for (j, r) in ms.iter().enumerate() {
                let value = if me == 1 {
                    let slot = (w >> (j as u64 * slot_bits) as usize) & &slot_mask;
                    // slot - bound - r_1, reduced mod N
                    (slot + &n + &n - bound - r) % &n
                } else {
                    (&n - r) % &n
                };
                out.push(AdditiveShare::new(me, value, scale_exp, budget.clone()));
            }
        }
        Ok(out)
    }

    /// `E(Σ_i x_i · y_i)` for encrypted `x` and shared `y`: every party
    /// publishes a re-randomized `Π E(x_i)^(y_i share)` and the results are
    /// multiplied together.
    pub fn encrypted_inner_products(
        &mut self,
        pairs: &[(&[Ciphertext], &[AdditiveShare])],
    ) -> Result<Vec<Ciphertext>, MpcError> {
        let mut mine = Vec::with_capacity(pairs.len());
        for (xs, ys) in pairs {
            if xs.len() != ys.len() {
                return Err(MpcError::Protocol("inner product of unequal lengths".into()));
            }
            let nn = self.pk.n_squared();
            let n = self.pk.n();
            // Shares from the packed conversion are short once centered, so
            // exponentiating by the signed representative is much cheaper.
            // Negative exponents are collected separately so only one
            // inversion is needed per product.
            let (mut pos, mut neg) = (BigUint::one(), BigUint::one());
            for (x, y) in xs.iter().zip(ys.iter()) {
                let e = from_ring(&y.value, n).expect("reduced share");
                let term = x.0.modpow(e.magnitude(), nn);
                if e.is_negative() {
                    neg = (neg * term) % nn;
                } else {
                    pos = (pos * term) % nn;
                }
            }
            let neg_inv = neg.modinv(nn).ok_or(MpcError::Paillier(PaillierError::InvalidCiphertext))?;
            let acc = (pos * neg_inv) % nn;
            mine.push(self.pk.rerandomize(&Ciphertext(acc), &mut self.rng).0);
        }
        let all = self.exchange_ints(Tag::Products, &mine, pairs.len())?;
        (0..pairs.len())
            .map(|j| {
                let mut acc = Ciphertext(BigUint::one());
                for (p, msg) in all.iter().enumerate() {
                    let c = Ciphertext(msg[j].clone());
                    if !self.pk.is_valid_ciphertext(&c) {
                        return Err(MpcError::Misbehaving { party: p as u16 + 1, what: "invalid product ciphertext".into() });
                    }
                    acc = self.pk.add(&acc, &c);
                }
                Ok(acc)
            })
            .collect()
    }

    /// Generates `count` Beaver triples: parties publish `E(a_i)`, then
    /// re-randomized `E(a)^(b_i)`, and the product ciphertext `E(ab)` is
    /// converted to shares.
    pub fn triple_gen(&mut self, count: usize) -> Result<(), MpcError> {
        if count == 0 {
            return Ok(());
        }
        let n = self.pk.n().clone();
        let a: Vec<BigUint> = (0..count).map(|_| self.rng.gen_biguint_below(&n)).collect();
        let b: Vec<BigUint> = (0..count).map(|_| self.rng.gen_biguint_below(&n)).collect();
        let enc_a: Vec<BigUint> = a
            .iter()
            .map(|v| Ok(self.pk.encrypt(v, &mut self.rng)?.0))
            .collect::<Result<_, MpcError>>()?;
        let all_a = self.exchange_ints(Tag::Triple, &enc_a, count)?;
        let sums: Vec<Ciphertext> = (0..count)
            .map(|j| {
                let mut acc = Ciphertext(BigUint::one());
                for (p, msg) in all_a.iter().enumerate() {
                    let c = Ciphertext(msg[j].clone());
                    if !self.pk.is_valid_ciphertext(&c) {
                        return Err(MpcError::Misbehaving { party: p as u16 + 1, what: "invalid triple ciphertext".into() });
                    }
                    acc = self.pk.add(&acc, &c);
                }
                Ok(acc)
            })
            .collect::<Result<_, MpcError>>()?;
        let prods: Vec<BigUint> = sums
            .iter()
            .zip(&b)
            .map(|(ea, bi)| self.pk.cmult_rerandomized(ea, &BigInt::from(bi.clone()), &mut self.rng).0)
            .collect();
        let all_p = self.exchange_ints(Tag::Triple, &prods, count)?;
        let cts: Vec<Ciphertext> = (0..count)
            .map(|j| {
                let mut acc = Ciphertext(BigUint::one());
                for (p, msg) in all_p.iter().enumerate() {
                    let c = Ciphertext(msg[j].clone());
                    if !self.pk.is_valid_ciphertext(&c) {
                        return Err(MpcError::Misbehaving { party: p as u16 + 1, what: "invalid triple ciphertext".into() });
                    }
                    acc = self.pk.add(&acc, &c);
                }
                Ok(acc)
            })
            .collect::<Result<_, MpcError>>()?;
        let c_shares = self.ct_to_shares(&cts, 0, &MagnitudeBudget::new(n.clone()))?;
        for ((a, b), c) in a.into_iter().zip(b).zip(c_shares) {
            let id = self.next_triple_id;
            self.next_triple_id += 1;
            self.triples.push_back(BeaverTriple { id, a, b, c: c.value });
        }
        Ok(())
    }

    fn take_triple(&mut self) -> Result<BeaverTriple, MpcError> {
        self.triples.pop_front().ok_or(MpcError::NoTriples)
    }

    fn claim_triple(&mut self, t: &BeaverTriple) -> Result<(), MpcError> {
        if !self.used_triples.insert(t.id) {
            return Err(MpcError::TripleReuse(t.id));
        }
        Ok(())
    }

    /// Removes the next preprocessed triple from the pool, for callers that
    /// want to pass triples explicitly.
    pub fn pop_triple(&mut self) -> Option<BeaverTriple> {
        self.triples.pop_front()
    }

    pub fn add(&self, x: &AdditiveShare, y: &AdditiveShare) -> Result<AdditiveShare, MpcError> {
        Ok(x.add(y, self.n())?)
    }

    pub fn sub(&self, x: &AdditiveShare, y: &AdditiveShare) -> Result<AdditiveShare, MpcError> {
        Ok(x.sub(y, self.n())?)
    }

    pub fn const_mult(&self, x: &AdditiveShare, c: &BigInt) -> Result<AdditiveShare, MpcError> {
        Ok(x.const_mult(c, self.n())?)
    }

    pub fn const_add(&self, x: &AdditiveShare, c: &BigInt) -> Result<AdditiveShare, MpcError> {
        Ok(x.const_add(c, self.n())?)
    }

    /// Share of a public constant.
    pub fn constant(&self, c: &BigInt, scale_exp: u32) -> AdditiveShare {
        AdditiveShare::public(self.id(), c, scale_exp, self.n())
    }

    /// Share of a value this party alone knows; the others call it with
    /// `None` and the same public bound.
    pub fn input(&self, value: Option<&BigInt>, scale_exp: u32, bound: MagnitudeBudget) -> AdditiveShare {
        let v = value.map(|v| crate::numeric::reduce(v, self.n())).unwrap_or_default();
        AdditiveShare::new(self.id(), v, scale_exp, bound)
    }

    /// Multiplies pairs of wires with one Beaver triple each, opening all
    /// `d = x - a` and `e = y - b` in a single round.
    pub fn mul_many(&mut self, pairs: &[(&AdditiveShare, &AdditiveShare)]) -> Result<Vec<AdditiveShare>, MpcError> {
        if self.triples.len() < pairs.len() {
            return Err(MpcError::NoTriples);
        }
        let triples: Vec<BeaverTriple> = (0..pairs.len()).map(|_| self.take_triple()).collect::<Result<_, _>>()?;
        self.mul_with_triples(pairs, triples)
    }

    pub fn mul(&mut self, x: &AdditiveShare, y: &AdditiveShare) -> Result<AdditiveShare, MpcError> {
        Ok(self.mul_many(&[(x, y)])?.remove(0))
    }

    /// Beaver multiplication with explicitly supplied triples.
    pub fn mul_with_triples(
        &mut self,
        pairs: &[(&AdditiveShare, &AdditiveShare)],
        triples: Vec<BeaverTriple>,
    ) -> Result<Vec<AdditiveShare>, MpcError> {
        if pairs.len() != triples.len() {
            return Err(MpcError::Protocol("one triple per product".into()));
        }
        let n = self.n().clone();
        for (x, y) in pairs {
            x.budget.mul(&y.budget).check(&n)?;
        }
        for t in &triples {
            self.claim_triple(t)?;
        }
        let mut opens = Vec::with_capacity(2 * pairs.len());
        for ((x, y), t) in pairs.iter().zip(&triples) {
            opens.push((&x.value + &n - &t.a) % &n);
            opens.push((&y.value + &n - &t.b) % &n);
        }
        let all = self.exchange_ints(Tag::Open, &opens, opens.len())?;
        let me = self.id();
        Ok(pairs
            .iter()
            .zip(&triples)
            .enumerate()
            .map(|(j, ((x, y), t))| {
                let d = all.iter().fold(BigUint::zero(), |acc, m| (acc + &m[2 * j]) % &n);
                let e = all.iter().fold(BigUint::zero(), |acc, m| (acc + &m[2 * j + 1]) % &n);
                let mut z = (&t.c + &d * &t.b + &e * &t.a) % &n;
                if me == 1 {
                    z = (z + &d * &e) % &n;
                }
                AdditiveShare::new(me, z, x.scale_exp + y.scale_exp, x.budget.mul(&y.budget))
            })
            .collect())
    }

    /// Opens wires to every party as centered integers.
    pub fn reveal_many(&mut self, xs: &[&AdditiveShare]) -> Result<Vec<BigInt>, MpcError> {
        let n = self.n().clone();
        for x in xs {
            x.budget.check(&n)?;
        }
        let mine: Vec<BigUint> = xs.iter().map(|x| x.value.clone()).collect();
        let all = self.exchange_ints(Tag::Reveal, &mine, xs.len())?;
        Ok((0..xs.len())
            .map(|j| {
                let sum = all.iter().fold(BigUint::zero(), |acc, m| (acc + &m[j]) % &n);
                from_ring(&sum, &n).expect("reduced")
            })
            .collect())
    }

    pub fn reveal(&mut self, x: &AdditiveShare) -> Result<BigInt, MpcError> {
        Ok(self.reveal_many(&[x])?.remove(0))
    }

    /// This party's share of a fresh positive mask `r = Σ r_i`, with each
    /// `r_i` uniform in `[1, 2^κ]`.
    pub fn random_mask(&mut self) -> AdditiveShare {
        let r = self.rng.gen_biguint(self.kappa as u64) + 1u32;
        let bound = MagnitudeBudget::new(BigUint::from(self.n_parties()) << self.kappa as usize);
        AdditiveShare::new(self.id(), r, 0, bound)
    }

    /// Reveals `(r·num, r·den)` for a shared positive mask `r`; the quotient
    /// equals `num/den` exactly.
    pub fn masked_pair_reveal(
        &mut self,
        num: &AdditiveShare,
        den: &AdditiveShare,
    ) -> Result<(BigInt, BigInt), MpcError> {
        let r = self.random_mask();
        let prods = self.mul_many(&[(&r, num), (&r, den)])?;
        let opened = self.reveal_many(&[&prods[0], &prods[1]])?;
        if opened[1].is_zero() {
            return Err(MpcError::DivisionByZero);
        }
        Ok((opened[0].clone(), opened[1].clone()))
    }

    /// Sign of a wire, revealed as the sign of `r·x` for a shared positive
    /// mask `r`.
    pub fn sign_reveal(&mut self, x: &AdditiveShare) -> Result<i8, MpcError> {
        let r = self.random_mask();
        let p = self.mul(&r, x)?;
        let v = self.reveal(&p)?;
        Ok(if v.is_positive() {
            1
        } else if v.is_negative() {
            -1
        } else {
            0
        })
    }
}
