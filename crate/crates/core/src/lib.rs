//! Auditable statistical testing over an encrypted holdout dataset.
//!
//! A data owner encrypts the validation split under threshold Paillier and
//! deals key shares to `k` servers. Researchers submit test requests; the
//! servers evaluate the test jointly on secret shares, reveal only the
//! statistic (or one significance bit), and append a quorum-signed
//! certificate to a hash-chained log. α-investing over the logged p-values
//! bounds the false discovery rate, and anyone can replay the log to audit
//! a certificate.

pub mod circuits;
pub mod codec;
pub mod ledger;
pub mod mpc;
pub mod numeric;
pub mod paillier;
pub mod protocol;
pub mod pvalue;

pub use numeric::{Rational, Scalar};

pub type AlphaParamsF32 = ledger::AlphaParams<f32>;
pub type AlphaParamsF64 = ledger::AlphaParams<f64>;
pub type AlphaParamsExact = ledger::AlphaParams<Rational>;
pub type AlphaStateF32 = ledger::AlphaState<f32>;
pub type AlphaStateF64 = ledger::AlphaState<f64>;
pub type AlphaStateExact = ledger::AlphaState<Rational>;
pub type StepF64 = ledger::Step<f64>;
pub type StepExact = ledger::Step<Rational>;
