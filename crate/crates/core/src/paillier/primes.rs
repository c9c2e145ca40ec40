//! Safe-prime search: random candidates, a small-prime sieve on both `p'`
//! and `p = 2p' + 1`, then Miller-Rabin.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};

use super::PaillierError;

pub const MILLER_RABIN_ROUNDS: usize = 64;

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        const LIMIT: usize = 4096;
        let mut composite = vec![false; LIMIT];
        let mut out = Vec::new();
        for i in 2..LIMIT {
            if !composite[i] {
                out.push(i as u32);
                for j in (i * i..LIMIT).step_by(i) {
                    composite[j] = true;
                }
            }
        }
        out
    })
}

fn miller_rabin_round(n: &BigUint, d: &BigUint, s: u64, base: &BigUint, n_minus_one: &BigUint) -> bool {
    let mut x = base.modpow(d, n);
    if x.is_one() || &x == n_minus_one {
        return true;
    }
    for _ in 1..s {
        x = (&x * &x) % n;
        if &x == n_minus_one {
            return true;
        }
        if x.is_one() {
            return false;
        }
    }
    false
}

/// Miller-Rabin with `rounds` random bases, after trial division.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if n < &BigUint::from(2u32) {
        return false;
    }
    for &p in small_primes() {
        let p_big = BigUint::from(p);
        if n == &p_big {
            return true;
        }
        if (n % p).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s as usize;
    let two = BigUint::from(2u32);
    if !miller_rabin_round(n, &d, s, &two, &n_minus_one) {
        return false;
    }
    let upper = n - 2u32;
    (1..rounds).all(|_| {
        let base = rng.gen_biguint_range(&two, &upper);
        miller_rabin_round(n, &d, s, &base, &n_minus_one)
    })
}

/// True iff `p` is prime and `(p - 1) / 2` is prime.
pub fn is_safe_prime<R: RngCore + ?Sized>(p: &BigUint, rng: &mut R) -> bool {
    if p < &BigUint::from(5u32) || p.is_even() {
        return false;
    }
    let sophie = p >> 1usize;
    is_probable_prime(&sophie, MILLER_RABIN_ROUNDS, rng) && is_probable_prime(p, MILLER_RABIN_ROUNDS, rng)
}

/// Random safe prime of exactly `bits` bits whose top two bits are set, so the
/// product of two such primes has exactly `2 * bits` bits.
pub fn random_safe_prime<R: RngCore + CryptoRng>(
    bits: u64,
    rng: &mut R,
    timeout: Option<Duration>,
) -> Result<BigUint, PaillierError> {
    if bits < 16 {
        return Err(PaillierError::InvalidParams(format!(
            "safe primes below 16 bits are not searched for ({bits} requested)"
        )));
    }
    let start = Instant::now();
    let sophie_bits = bits - 1;
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        if attempts % 256 == 0 {
            if let Some(limit) = timeout {
                if start.elapsed() > limit {
                    return Err(PaillierError::PrimeSearchTimeout { bits, elapsed: start.elapsed() });
                }
            }
        }
        let mut q = rng.gen_biguint(sophie_bits);
        q.set_bit(sophie_bits - 1, true);
        q.set_bit(sophie_bits - 2, true);
        q.set_bit(0, true);
        // q and 2q+1 both survive trial division iff q mod s is neither 0 nor (s-1)/2
        let sieved = small_primes()[1..].iter().all(|&s| {
            let r = (&q % s).to_u32().expect("remainder below u32");
            r != 0 && r != (s - 1) / 2
        });
        if !sieved {
            continue;
        }
        let p: BigUint = (&q << 1usize) + 1u32;
        // cheap base-2 screens before the full test
        let two = BigUint::from(2u32);
        if two.modpow(&(&q - 1u32), &q) != BigUint::one() {
            continue;
        }
        if two.modpow(&(&p - 1u32), &p) != BigUint::one() {
            continue;
        }
        if is_probable_prime(&q, MILLER_RABIN_ROUNDS, rng) && is_probable_prime(&p, MILLER_RABIN_ROUNDS, rng) {
            return Ok(p);
        }
    }
}
