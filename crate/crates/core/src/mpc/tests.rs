use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::numeric::{from_ring, MagnitudeBudget};
use crate::paillier::{fixture_primes_512, keygen_with_primes, Ciphertext, PaillierParams};

fn fixture(n: u16, t: u16) -> (Arc<PublicKey>, Vec<KeyShare>) {
    let (p, q) = fixture_primes_512();
    let params = PaillierParams::new(512, n, t).unwrap();
    let (pk, shares) = keygen_with_primes(&params, &p, &q, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
    (Arc::new(pk), shares)
}

fn encrypt_all(pk: &PublicKey, xs: &[i64]) -> Vec<Ciphertext> {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    xs.iter().map(|x| pk.encrypt_signed(&BigInt::from(*x), &mut rng)).collect()
}

/// Recombines per-party share vectors into centered integers.
fn recombine(pk: &PublicKey, per_party: &[Vec<AdditiveShare>]) -> Vec<BigInt> {
    let n = pk.n();
    (0..per_party[0].len())
        .map(|j| {
            let sum = per_party.iter().fold(BigUint::zero(), |acc, s| (acc + &s[j].value) % n);
            from_ring(&sum, n).unwrap()
        })
        .collect()
}

fn unwrap_all<R>(out: Vec<Result<R, MpcError>>) -> Vec<R> {
    out.into_iter().map(|r| r.unwrap()).collect()
}

#[test]
fn threshold_decrypt_agrees_everywhere() {
    let (pk, keys) = fixture(3, 2);
    let cts = encrypt_all(&pk, &[0, 5, 123456789]);
    let out = unwrap_all(run_parties(&pk, &keys, 1, |p| p.threshold_decrypt(&cts)));
    for got in out {
        assert_eq!(got, vec![BigUint::zero(), BigUint::from(5u32), BigUint::from(123456789u32)]);
    }
}

#[test]
fn exact_conversion_sums_to_plaintext() {
    let (pk, keys) = fixture(3, 2);
    let xs = [-17i64, 0, 1 << 40, -(1 << 50)];
    let cts = encrypt_all(&pk, &xs);
    let budget = MagnitudeBudget::pow2(51);
    let out = unwrap_all(run_parties(&pk, &keys, 2, |p| p.ct_to_shares(&cts, 0, &budget)));
    let want: Vec<BigInt> = xs.iter().map(|x| BigInt::from(*x)).collect();
    assert_eq!(recombine(&pk, &out), want);
}

#[test]
fn packed_conversion_handles_bounds_and_partial_chunks() {
    let (pk, keys) = fixture(3, 2);
    let bound = BigUint::one() << 40u32;
    let b = (1i64 << 40) as i64;
    let xs: Vec<i64> = vec![b, -b, 0, 1, -1, 12345, b - 1, -b + 1, 42];
    let cts = encrypt_all(&pk, &xs);
    let out = unwrap_all(run_parties(&pk, &keys, 3, |p| p.ct_to_shares_packed(&cts, &bound, 7)));
    let want: Vec<BigInt> = xs.iter().map(|x| BigInt::from(*x)).collect();
    assert_eq!(recombine(&pk, &out), want);
    assert!(out.iter().flatten().all(|s| s.scale_exp == 7));
}

#[test]
fn packed_conversion_falls_back_for_wide_wires() {
    let (pk, keys) = fixture(3, 2);
    let bound = BigUint::one() << 300u32;
    let xs = [-(1i64 << 62), 3];
    let cts = encrypt_all(&pk, &xs);
    let out = unwrap_all(run_parties(&pk, &keys, 4, |p| p.ct_to_shares_packed(&cts, &bound, 0)));
    assert_eq!(recombine(&pk, &out), vec![BigInt::from(xs[0]), BigInt::from(3)]);
}

#[test]
fn triples_and_products_are_correct() {
    let (pk, keys) = fixture(3, 2);
    let n = pk.n().clone();
    let out = unwrap_all(run_parties(&pk, &keys, 5, |p| {
        p.triple_gen(4)?;
        let mut triples = Vec::new();
        while let Some(t) = p.pop_triple() {
            triples.push(t);
        }
        Ok(triples)
    }));
    for j in 0..4 {
        let a = out.iter().fold(BigUint::zero(), |acc, t| (acc + &t[j].a) % &n);
        let b = out.iter().fold(BigUint::zero(), |acc, t| (acc + &t[j].b) % &n);
        let c = out.iter().fold(BigUint::zero(), |acc, t| (acc + &t[j].c) % &n);
        assert_eq!(c, (a * b) % &n);
    }
}

#[test]
fn beaver_multiplication_of_signed_inputs() {
    let (pk, keys) = fixture(3, 2);
    let out = unwrap_all(run_parties(&pk, &keys, 6, |p| {
        p.triple_gen(2)?;
        let bound = MagnitudeBudget::pow2(40);
        let x = p.input((p.id() == 1).then(|| BigInt::from(-300)).as_ref(), 0, bound.clone());
        let y = p.input((p.id() == 2).then(|| BigInt::from(7)).as_ref(), 0, bound.clone());
        let z = p.input((p.id() == 3).then(|| BigInt::from(-2)).as_ref(), 0, bound);
        let xy = p.mul(&x, &y)?;
        let xyz = p.mul(&xy, &z)?;
        p.reveal_many(&[&xy, &xyz])
    }));
    for got in out {
        assert_eq!(got, vec![BigInt::from(-2100), BigInt::from(4200)]);
    }
}

#[test]
fn masked_pair_preserves_quotient_and_hides_scale() {
    let (pk, keys) = fixture(3, 2);
    let out = unwrap_all(run_parties(&pk, &keys, 7, |p| {
        p.triple_gen(2)?;
        let num = p.constant(&BigInt::from(72), 0);
        let den = p.constant(&BigInt::from(30), 0);
        p.masked_pair_reveal(&num, &den)
    }));
    let (rn, rd) = &out[0];
    assert!(out.iter().all(|o| o == &out[0]));
    assert_eq!(rn * BigInt::from(30), rd * BigInt::from(72));
    assert_ne!(rd, &BigInt::from(30), "mask of one is vanishingly unlikely");
}

#[test]
fn zero_denominator_is_reported() {
    let (pk, keys) = fixture(3, 2);
    let out = run_parties(&pk, &keys, 8, |p| {
        p.triple_gen(2)?;
        let num = p.constant(&BigInt::from(1), 0);
        let den = p.constant(&BigInt::zero(), 0);
        p.masked_pair_reveal(&num, &den)
    });
    for r in out {
        assert_eq!(r.unwrap_err(), MpcError::DivisionByZero);
    }
}

#[test]
fn sign_reveal_matches_sign() {
    let (pk, keys) = fixture(3, 2);
    let out = unwrap_all(run_parties(&pk, &keys, 9, |p| {
        p.triple_gen(3)?;
        let mut signs = Vec::new();
        for v in [-5i64, 0, 9] {
            let x = p.constant(&BigInt::from(v), 0);
            signs.push(p.sign_reveal(&x)?);
        }
        Ok(signs)
    }));
    for got in out {
        assert_eq!(got, vec![-1, 0, 1]);
    }
}

#[test]
fn encrypted_inner_product_matches_plain() {
    let (pk, keys) = fixture(3, 2);
    let xs = [3i64, -4, 10];
    let cts = encrypt_all(&pk, &xs);
    let out = unwrap_all(run_parties(&pk, &keys, 10, |p| {
        let bound = MagnitudeBudget::pow2(10);
        let ys: Vec<AdditiveShare> = [2i64, 5, -1]
            .iter()
            .map(|y| p.input((p.id() == 2).then(|| BigInt::from(*y)).as_ref(), 0, bound.clone()))
            .collect();
        let prod = p.encrypted_inner_products(&[(&cts, &ys)])?;
        p.threshold_decrypt(&prod)
    }));
    let n = pk.n();
    for got in out {
        assert_eq!(from_ring(&got[0], n).unwrap(), BigInt::from(6 - 20 - 10));
    }
}

#[test]
fn triple_reuse_is_rejected() {
    let (pk, keys) = fixture(3, 2);
    let out = run_parties(&pk, &keys, 11, |p| {
        p.triple_gen(1)?;
        let t = p.pop_triple().unwrap();
        let x = p.constant(&BigInt::from(2), 0);
        p.mul_with_triples(&[(&x, &x)], vec![t.clone()])?;
        p.mul_with_triples(&[(&x, &x)], vec![t])
    });
    for r in out {
        assert_eq!(r.unwrap_err(), MpcError::TripleReuse(0));
    }
}

#[test]
fn running_out_of_triples_is_an_error() {
    let (pk, keys) = fixture(3, 2);
    let out = run_parties(&pk, &keys, 12, |p| {
        let x = p.constant(&BigInt::from(2), 0);
        p.mul(&x, &x)
    });
    for r in out {
        assert_eq!(r.unwrap_err(), MpcError::NoTriples);
    }
}

#[test]
fn budget_overflow_is_caught_before_revealing() {
    let (pk, keys) = fixture(3, 2);
    let out = run_parties(&pk, &keys, 13, |p| {
        p.triple_gen(1)?;
        let x = p.input(None, 0, MagnitudeBudget::pow2(300));
        p.mul(&x, &x)
    });
    for r in out {
        assert!(matches!(r.unwrap_err(), MpcError::Numeric(_)));
    }
}

#[test]
fn same_seed_same_transcript() {
    let (pk, keys) = fixture(3, 2);
    let cts = encrypt_all(&pk, &[11, -11]);
    let run = |seed| {
        unwrap_all(run_parties(&pk, &keys, seed, |p| {
            p.ct_to_shares(&cts, 0, &MagnitudeBudget::pow2(8))?;
            Ok(p.transcript_digest())
        }))
    };
    let a = run(21);
    assert!(a.iter().all(|d| d == &a[0]), "all parties see one transcript");
    assert_eq!(a, run(21));
    assert_ne!(a, run(22));
}

/// Corrupts every decryption share party 2 sends.
struct Corrupting(LocalEndpoint);

impl Transport for Corrupting {
    fn party(&self) -> u16 {
        self.0.party()
    }
    fn n_parties(&self) -> u16 {
        self.0.n_parties()
    }
    fn exchange(&mut self, tag: Tag, mut items: Vec<Vec<u8>>) -> Result<Vec<Vec<Vec<u8>>>, NetError> {
        if tag == Tag::DecShares && self.party() == 2 && !items.is_empty() {
            let last = items[0].len() - 1;
            items[0][last] ^= 1;
        }
        self.0.exchange(tag, items)
    }
    fn abort(&mut self, reason: &str) {
        self.0.abort(reason)
    }
    fn transcript_digest(&self) -> [u8; 32] {
        self.0.transcript_digest()
    }
}

#[test]
fn bad_decryption_share_names_the_culprit() {
    let (pk, keys) = fixture(3, 2);
    let cts = encrypt_all(&pk, &[1, 2]);
    let out: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = local_bus(3)
            .into_iter()
            .zip(&keys)
            .map(|(net, key)| {
                let pk = Arc::clone(&pk);
                let cts = &cts;
                s.spawn(move || {
                    let mut p = Party::seeded(Corrupting(net), pk, key.clone(), 1, DEFAULT_KAPPA);
                    p.threshold_decrypt(cts)
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    // party 2 combines with its own untampered shares; the others catch it
    assert_eq!(out[1].as_ref().unwrap(), &vec![BigUint::from(1u32), BigUint::from(2u32)]);
    for r in [&out[0], &out[2]] {
        assert!(matches!(r.as_ref().unwrap_err(), MpcError::Misbehaving { party: 2, .. }));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn packed_shares_reconstruct(xs in prop::collection::vec(-(1i64 << 40)..=(1i64 << 40), 1..14), seed in any::<u64>()) {
        let (pk, keys) = fixture(3, 2);
        let cts = encrypt_all(&pk, &xs);
        let bound = BigUint::one() << 40u32;
        let out = unwrap_all(run_parties(&pk, &keys, seed, |p| p.ct_to_shares_packed(&cts, &bound, 0)));
        let want: Vec<BigInt> = xs.iter().map(|x| BigInt::from(*x)).collect();
        prop_assert_eq!(recombine(&pk, &out), want);
    }

    #[test]
    fn masked_quotient_is_invariant(num in -(1i64 << 40)..(1i64 << 40), den in 1i64..(1i64 << 40), seed in any::<u64>()) {
        let (pk, keys) = fixture(3, 2);
        let out = unwrap_all(run_parties(&pk, &keys, seed, |p| {
            p.triple_gen(2)?;
            let budget = MagnitudeBudget::pow2(41);
            let a = p.input((p.id() == 1).then(|| BigInt::from(num)).as_ref(), 0, budget.clone());
            let b = p.input((p.id() == 3).then(|| BigInt::from(den)).as_ref(), 0, budget);
            p.masked_pair_reveal(&a, &b)
        }));
        let (rn, rd) = &out[0];
        prop_assert_eq!(rn * BigInt::from(den), rd * BigInt::from(num));
        prop_assert!(rd > &BigInt::zero());
    }
}
