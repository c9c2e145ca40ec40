//! Offline audit of a single certificate: verify the chain up to it, replay
//! the wealth machine exactly over the logged p-values, and compare.

use thiserror::Error;

use super::alpha::{AlphaState, Decision};
use super::log::{verify_log, LedgerError, LogEntry};
use crate::numeric::Rational;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("rho {rho} is not on the log (last rho is {last})")]
    NotFound { rho: u64, last: u64 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditStep {
    pub rho: u64,
    pub wealth_before: Rational,
    pub alpha_j: Rational,
    /// `None` for significance-bit entries.
    pub p: Option<Rational>,
    pub recorded: Decision,
    /// The decision implied by `p` and `alpha_j`, when `p` is known.
    pub recomputed: Option<Decision>,
    pub wealth_after: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(String),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub rho: u64,
    /// One step per entry `1..=rho`.
    pub trajectory: Vec<AuditStep>,
    pub verdict: Verdict,
    /// False when the entry only records a significance bit, so the
    /// decision itself cannot be recomputed from public data.
    pub decision_checked: bool,
}

impl AuditReport {
    pub fn target(&self) -> Option<&AuditStep> {
        self.trajectory.last()
    }
}

/// Replays entries `1..=upto` and returns every step. Earlier entries are
/// charged with the decision their p-value implies; significance-bit entries
/// with their recorded decision.
pub fn replay_entries(entries: &[LogEntry], upto: usize) -> Result<Vec<AuditStep>, LedgerError> {
    let config = entries
        .first()
        .and_then(|e| e.genesis.as_ref())
        .ok_or_else(|| LedgerError::Genesis("configuration missing".into()))?;
    let params = config.alpha_params()?;
    let mut state = AlphaState::initial(&params);
    let mut out = Vec::with_capacity(upto);
    for entry in &entries[1..=upto] {
        let cert = &entry.certificate;
        let rho = cert.rho;
        let recorded = cert.decision().ok_or(LedgerError::Malformed { rho, field: "decision" })?;
        let alpha_j = state.next_alpha(&params);
        let p = cert.p_exact();
        let recomputed = p.as_ref().map(|p| Decision::from_p(p, &alpha_j));
        let next = state.apply(&alpha_j, recomputed.unwrap_or(recorded), &params);
        out.push(AuditStep {
            rho,
            wealth_before: state.wealth.clone(),
            alpha_j,
            p,
            recorded,
            recomputed,
            wealth_after: next.wealth.clone(),
        });
        state = next;
    }
    Ok(out)
}

/// Audits certificate `rho`. A broken chain or signature yields an
/// `Invalid` verdict with the reason; only unreadable logs are errors.
pub fn perform_audit(entries: &[LogEntry], rho: u64) -> Result<AuditReport, AuditError> {
    let last = entries.last().ok_or(LedgerError::Empty)?.rho();
    let idx = entries
        .iter()
        .position(|e| e.rho() == rho)
        .ok_or(AuditError::NotFound { rho, last })?;
    if let Err((i, e)) = verify_log(&entries[..=idx]) {
        return Ok(AuditReport {
            rho,
            trajectory: Vec::new(),
            verdict: Verdict::Invalid(format!("chain verification failed at entry {i}: {e}")),
            decision_checked: false,
        });
    }
    if idx == 0 {
        return Ok(AuditReport { rho, trajectory: Vec::new(), verdict: Verdict::Valid, decision_checked: false });
    }
    let trajectory = replay_entries(entries, idx)?;
    let step = trajectory.last().expect("idx >= 1");
    let (verdict, decision_checked) = match step.recomputed {
        Some(d) if d == step.recorded => (Verdict::Valid, true),
        Some(d) => (
            Verdict::Invalid(format!(
                "recorded decision {} but p = {} against alpha = {} implies {}",
                step.recorded.as_str(),
                entries[idx].certificate.p,
                crate::numeric::rational_to_f64(&step.alpha_j),
                d.as_str()
            )),
            true,
        ),
        None => (Verdict::Valid, false),
    };
    Ok(AuditReport { rho, trajectory, verdict, decision_checked })
}
