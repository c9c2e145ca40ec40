//! Shared fixtures and plaintext oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use star_core::circuits::{
    load_columns, raw_bound, reveal_statistic, CircuitError, MulStrategy, RevealedStatistic, SharedColumn,
    TestStatisticPair,
};
use star_core::mpc::{run_parties, LocalEndpoint, MpcError, Party};
use star_core::numeric::FixedPointValue;
use star_core::paillier::{fixture_primes_512, keygen_with_primes, Ciphertext, KeyShare, PaillierParams, PublicKey};

pub const PHI: u32 = 40;

pub fn fixture_key() -> (Arc<PublicKey>, Vec<KeyShare>) {
    let (p, q) = fixture_primes_512();
    let params = PaillierParams::new(512, 3, 2).unwrap();
    let (pk, shares) = keygen_with_primes(&params, &p, &q, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    (Arc::new(pk), shares)
}

pub fn encrypt_column(pk: &PublicKey, xs: &[f64], phi: u32, rng: &mut ChaCha20Rng) -> Vec<Ciphertext> {
    xs.iter().map(|x| pk.encrypt_signed(&FixedPointValue::encode(x, phi).unwrap().raw, rng)).collect()
}

pub fn encrypt_ints(pk: &PublicKey, xs: &[i64], rng: &mut ChaCha20Rng) -> Vec<Ciphertext> {
    xs.iter().map(|x| pk.encrypt_signed(&BigInt::from(*x), rng)).collect()
}

/// Loads encrypted columns into shares and runs `circuit` plus `finish`
/// at every party; returns party 1's result after checking all agree.
pub fn run_on_columns<R, C, F>(
    pk: &Arc<PublicKey>,
    keys: &[KeyShare],
    cols: &[Vec<Ciphertext>],
    domain: u64,
    seed: u64,
    circuit: C,
    finish: F,
) -> Result<R, MpcError>
where
    R: Send + PartialEq + std::fmt::Debug,
    C: Fn(&mut Party<LocalEndpoint>, &[SharedColumn]) -> Result<TestStatisticPair, CircuitError> + Sync,
    F: Fn(&mut Party<LocalEndpoint>, &TestStatisticPair) -> Result<R, CircuitError> + Sync,
{
    let refs: Vec<&[Ciphertext]> = cols.iter().map(|c| c.as_slice()).collect();
    let out = run_parties(pk, keys, seed, |p| {
        let mut run = || -> Result<R, CircuitError> {
            let shared = load_columns(p, &refs, &raw_bound(domain, PHI), PHI)?;
            let pair = circuit(p, &shared)?;
            finish(p, &pair)
        };
        run().map_err(|e| match e {
            CircuitError::Mpc(e) => e,
            other => MpcError::Protocol(other.to_string()),
        })
    });
    let mut it = out.into_iter();
    let first = it.next().unwrap()?;
    for other in it {
        assert_eq!(other.as_ref().ok(), Some(&first), "parties disagree");
    }
    Ok(first)
}

pub fn reveal(p: &mut Party<LocalEndpoint>, pair: &TestStatisticPair) -> Result<RevealedStatistic, CircuitError> {
    reveal_statistic(p, pair)
}

pub fn strategy_default() -> MulStrategy {
    MulStrategy::default()
}

// ---- textbook oracles, written from the usual definitions ----

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var_unbiased(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Student's two-sample t with pooled variance, equal sizes.
pub fn oracle_t(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sp2 = (var_unbiased(x) + var_unbiased(y)) / 2.0;
    (mean(x) - mean(y)) / (sp2 * 2.0 / n).sqrt()
}

pub fn oracle_r(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn oracle_chisq(counts: &[u64], eta: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(eta)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// One-way F with the within-group mean square divided by `n - k`, where
/// `n` is the size of each group.
pub fn oracle_f(groups: &[Vec<f64>]) -> f64 {
    let k = groups.len() as f64;
    let n = groups[0].len() as f64;
    let grand = groups.iter().map(|g| mean(g)).sum::<f64>() / k;
    let msb = groups.iter().map(|g| n * (mean(g) - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let ssw: f64 = groups.iter().map(|g| g.iter().map(|v| (v - mean(g)).powi(2)).sum::<f64>()).sum();
    msb / (ssw / (n - k))
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}
