//! One server's side of a test request.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use num_bigint::BigUint;
use thiserror::Error;

use super::dataset::{AttributeKind, EncryptedDataset};
use super::request::TestRequest;
use crate::circuits::{
    category_totals, chisq_circuit, critical_quotient, ftest_circuit, load_columns, load_counts, p_value,
    pearson_circuit, raw_bound, reveal_statistic, significance_circuit, ttest_circuit, CircuitError, MulStrategy,
    SampleShape, TestKind, TestSpec, TestStatisticPair,
};
use crate::ledger::{
    format_timestamp, replay_entries, AlphaParams, AlphaState, Certificate, Decision, EntrySignature, GenesisConfig,
    KeyPair, LedgerError, LogEntry, RevealMode, BIT,
};
use crate::mpc::{MpcError, Party, Tag, Transport};
use crate::numeric::{format_decimal12, parse_decimal, rational_to_f64, Rational};
use crate::paillier::KeyShare;
use crate::pvalue::Sidedness;

/// How far a server's clock may be from the timestamp party 1 proposes.
pub const CLOCK_SKEW_SECS: i64 = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("request signature does not verify")]
    Signature,
    #[error("daily quota exhausted: {used} of {limit} requests used today")]
    QuotaExceeded { used: u32, limit: u32 },
    #[error("test spec rejected: {0}")]
    Spec(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("servers disagree: {0}")]
    Disagreement(String),
}

impl From<MpcError> for RequestError {
    fn from(e: MpcError) -> Self {
        RequestError::Circuit(CircuitError::Mpc(e))
    }
}

impl From<LedgerError> for RequestError {
    fn from(e: LedgerError) -> Self {
        RequestError::Ledger(e.to_string())
    }
}

impl RequestError {
    /// True for errors that only echo a peer's abort.
    pub fn is_echo(&self) -> bool {
        matches!(self, RequestError::Circuit(CircuitError::Mpc(MpcError::Net(crate::mpc::NetError::Aborted { .. }))))
    }
}

/// Everything a server holds.
#[derive(Debug, Clone)]
pub struct ServerContext {
    pub id: u16,
    pub key_share: KeyShare,
    pub signing_key: KeyPair,
    pub dataset: Arc<EncryptedDataset>,
    pub strategy: MulStrategy,
}

/// Checks a spec against the dataset and returns its sample shape.
pub fn validate_spec(spec: &TestSpec, dataset: &EncryptedDataset) -> Result<SampleShape, RequestError> {
    spec.validate_shape().map_err(|e| RequestError::Spec(e.to_string()))?;
    let meta = &dataset.header.metadata;
    let n = dataset.n_rows() as u64;
    let mut k = spec.columns.len() as u64;
    for name in &spec.columns {
        let attr = meta.attribute(name).ok_or_else(|| RequestError::Spec(format!("no attribute named {name:?}")))?;
        match (&attr.kind, spec.test) {
            (AttributeKind::Categorical { categories }, TestKind::ChiSquared) => {
                let eta = spec.eta.as_ref().expect("shape checked");
                if eta.len() != categories.len() {
                    return Err(RequestError::Spec(format!(
                        "{name:?} has {} categories but {} null probabilities were given",
                        categories.len(),
                        eta.len()
                    )));
                }
                k = categories.len() as u64;
            }
            (AttributeKind::Continuous, TestKind::ChiSquared) => {
                return Err(RequestError::Spec(format!("{name:?} is not categorical")))
            }
            (AttributeKind::Categorical { .. }, _) => {
                return Err(RequestError::Spec(format!("{name:?} is categorical; the test needs numbers")))
            }
            (AttributeKind::Continuous, _) => {}
        }
    }
    let min_rows = match spec.test {
        TestKind::Pearson => 3,
        TestKind::FTest => k + 1,
        _ => 2,
    };
    if n < min_rows {
        return Err(RequestError::Spec(format!("needs at least {min_rows} rows, dataset has {n}")));
    }
    if dataset.header.mode == RevealMode::SignificanceBit && spec.sidedness != Sidedness::TwoSided {
        return Err(RequestError::Spec("significance-bit mode only answers two-sided tests".into()));
    }
    Ok(SampleShape { n, k })
}

/// Wealth state after the last entry of `entries`.
pub fn alpha_state(entries: &[LogEntry]) -> Result<(AlphaParams<Rational>, AlphaState<Rational>), LedgerError> {
    let config = entries
        .first()
        .and_then(|e| e.genesis.as_ref())
        .ok_or_else(|| LedgerError::Genesis("configuration missing".into()))?;
    let params = config.alpha_params()?;
    let steps = replay_entries(entries, entries.len() - 1)?;
    let state = match steps.last() {
        Some(s) => AlphaState { wealth: s.wealth_after.clone(), index: steps.len() as u64 },
        None => AlphaState::initial(&params),
    };
    Ok((params, state))
}

/// Builds the circuit the spec asks for.
pub fn build_circuit<T: Transport>(
    party: &mut Party<T>,
    spec: &TestSpec,
    dataset: &EncryptedDataset,
    strategy: MulStrategy,
) -> Result<TestStatisticPair, CircuitError> {
    let meta = &dataset.header.metadata;
    let phi = dataset.header.phi;
    let rows = dataset.n_rows() as u64;
    if spec.test == TestKind::ChiSquared {
        let onehot = dataset.attribute_columns(&spec.columns[0]);
        let totals = category_totals(dataset.public_key(), &onehot);
        let counts = load_counts(party, &totals, rows)?;
        return chisq_circuit(party, &counts, spec.eta.as_ref().expect("validated"), rows, phi);
    }
    let cols: Vec<&[crate::paillier::Ciphertext]> =
        spec.columns.iter().map(|c| dataset.attribute_columns(c)[0]).collect();
    let domain = spec
        .columns
        .iter()
        .map(|c| meta.attribute(c).map(|a| a.bound).unwrap_or(1))
        .max()
        .unwrap_or(1);
    let bound: BigUint = raw_bound(domain, phi);
    let shared = load_columns(party, &cols, &bound, phi)?;
    match spec.test {
        TestKind::TTest => ttest_circuit(party, &shared[0], &shared[1], strategy),
        TestKind::Pearson => pearson_circuit(party, &shared[0], &shared[1], strategy),
        TestKind::FTest => ftest_circuit(party, &shared, strategy),
        TestKind::ChiSquared => unreachable!(),
    }
}

/// What a request produced before it is signed.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub tau: String,
    pub p: String,
    pub decision: Decision,
    pub alpha_j: Rational,
}

/// Runs the circuit and applies the reveal policy.
pub fn evaluate<T: Transport>(
    party: &mut Party<T>,
    spec: &TestSpec,
    shape: SampleShape,
    dataset: &EncryptedDataset,
    strategy: MulStrategy,
    alpha_j: &Rational,
) -> Result<TestResult, RequestError> {
    let pair = build_circuit(party, spec, dataset, strategy)?;
    match dataset.header.mode {
        RevealMode::FullStatistic => {
            let stat = reveal_statistic(party, &pair)?;
            let value = stat.value();
            let p = p_value(value, spec.test, shape, spec.sidedness).map_err(CircuitError::from)?;
            let tau = format_decimal12(value);
            let p_str = format_decimal12(p);
            let exact = parse_decimal(&p_str).expect("formatted decimal parses");
            let decision = Decision::from_p(&exact, alpha_j);
            Ok(TestResult { tau, p: p_str, decision, alpha_j: alpha_j.clone() })
        }
        RevealMode::SignificanceBit => {
            let alpha = rational_to_f64(alpha_j);
            let threshold = critical_quotient(spec.test, shape, alpha).map_err(CircuitError::from)?;
            let bit = significance_circuit(party, &pair, threshold, dataset.header.phi)?;
            let decision = if bit { Decision::Reject } else { Decision::Accept };
            Ok(TestResult { tau: BIT.into(), p: BIT.into(), decision, alpha_j: alpha_j.clone() })
        }
    }
}

/// Party 1 proposes a timestamp with the request digest; everyone checks
/// both.
fn agree<T: Transport>(
    party: &mut Party<T>,
    request: &TestRequest,
    now: DateTime<Utc>,
) -> Result<DateTime<Utc>, RequestError> {
    let digest = request.digest().to_vec();
    let mine = if party.id() == 1 {
        vec![digest.clone(), format_timestamp(now).into_bytes()]
    } else {
        vec![digest.clone()]
    };
    let all = party.exchange(Tag::Request, mine)?;
    for (i, msg) in all.iter().enumerate() {
        if msg.first() != Some(&digest) {
            return Err(RequestError::Disagreement(format!("server {} is working on a different request", i + 1)));
        }
    }
    let proposed = all[0]
        .get(1)
        .and_then(|b| std::str::from_utf8(b).ok())
        .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
        .map(|t| t.with_timezone(&Utc))
        .ok_or_else(|| RequestError::Disagreement("server 1 sent no timestamp".into()))?;
    if (proposed - now).num_seconds().abs() > CLOCK_SKEW_SECS {
        return Err(RequestError::Disagreement(format!(
            "timestamp {} is more than {CLOCK_SKEW_SECS}s from this server's clock",
            format_timestamp(proposed)
        )));
    }
    Ok(proposed)
}

/// Gathers signatures on `entry` from every server; at least a quorum must
/// verify.
fn collect_signatures<T: Transport>(
    party: &mut Party<T>,
    ctx: &ServerContext,
    config: &GenesisConfig,
    mut entry: LogEntry,
) -> Result<LogEntry, RequestError> {
    let mine = entry.sign_with(ctx.id, &ctx.signing_key);
    let all = party.exchange(Tag::Signature, vec![mine.signature.into_bytes()])?;
    let msg = entry.signing_bytes();
    for (i, items) in all.iter().enumerate() {
        let signer = i as u16 + 1;
        let Some(sig) = items.first().and_then(|b| String::from_utf8(b.clone()).ok()) else {
            continue;
        };
        let ok = config.servers.get(i).map(|s| s.identity().verify(&msg, &sig)).unwrap_or(false);
        if ok {
            entry.signatures.push(EntrySignature { signer, signature: sig });
        }
    }
    if entry.signatures.len() < config.quorum() {
        return Err(RequestError::Ledger(format!(
            "only {} valid signatures, quorum is {}",
            entry.signatures.len(),
            config.quorum()
        )));
    }
    Ok(entry)
}

/// Handles one request end to end on this server and returns the signed
/// entry that extends `log`.
pub fn serve_request<T: Transport>(
    party: &mut Party<T>,
    ctx: &ServerContext,
    log: &[LogEntry],
    request: &TestRequest,
    now: DateTime<Utc>,
) -> Result<LogEntry, RequestError> {
    if !request.verify() {
        return Err(RequestError::Signature);
    }
    let shape = validate_spec(&request.spec, &ctx.dataset)?;
    let config = log
        .first()
        .and_then(|e| e.genesis.clone())
        .ok_or_else(|| RequestError::Ledger("log has no genesis".into()))?;
    let timestamp = agree(party, request, now)?;
    let (params, state) = alpha_state(log)?;
    let alpha_j = state.next_alpha(&params);
    let result = evaluate(party, &request.spec, shape, &ctx.dataset, ctx.strategy, &alpha_j)?;
    let prev = log.last().expect("genesis present");
    let certificate = Certificate {
        rho: prev.rho() + 1,
        sigma: request.spec.sigma(),
        tau: result.tau,
        p: result.p,
        decision: result.decision.as_str().into(),
        researcher_key: request.researcher_key.clone(),
        timestamp: format_timestamp(timestamp),
    };
    let entry = LogEntry::seal(certificate, prev.entry_hash.clone());
    collect_signatures(party, ctx, &config, entry)
}
