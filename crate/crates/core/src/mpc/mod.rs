//! Secure computation over additive shares modulo the Paillier modulus.

pub mod engine;
pub mod net;
pub mod share;
pub mod tcp;

use std::sync::Arc;
use std::thread;

pub use engine::{MpcError, Party, DEFAULT_KAPPA};
pub use net::{local_bus, local_bus_with_timeout, LocalEndpoint, NetError, Tag, Transport};
pub use share::{sum_shares, AdditiveShare, BeaverTriple};
pub use tcp::{localhost_listeners, TcpTransport};

use crate::paillier::{KeyShare, PublicKey};

/// Runs `f` once per party over an in-process bus, one thread each, and
/// returns the results in party order. A party whose closure fails sends
/// an abort so its peers stop waiting.
pub fn run_parties<R, F>(pk: &Arc<PublicKey>, shares: &[KeyShare], seed: u64, f: F) -> Vec<Result<R, MpcError>>
where
    R: Send,
    F: Fn(&mut Party<LocalEndpoint>) -> Result<R, MpcError> + Sync,
{
    let bus = local_bus(shares.len() as u16);
    thread::scope(|s| {
        let handles: Vec<_> = bus
            .into_iter()
            .zip(shares)
            .map(|(net, key)| {
                let f = &f;
                let pk = Arc::clone(pk);
                s.spawn(move || {
                    let mut party = Party::seeded(net, pk, key.clone(), seed, DEFAULT_KAPPA);
                    let out = f(&mut party);
                    if let Err(e) = &out {
                        party.abort(&e.to_string());
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests;
