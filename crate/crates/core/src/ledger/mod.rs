//! The public test log, the α-investing wealth machine and offline audits.

pub mod alpha;
pub mod audit;
pub mod log;
pub mod sign;

pub use alpha::{replay, AlphaError, AlphaParams, AlphaState, Decision, Step};
pub use audit::{perform_audit, replay_entries, AuditError, AuditReport, AuditStep, Verdict};
pub use log::{
    format_timestamp, genesis_entry, parse_log, quorum, serialize_log, verify_log, Certificate, EntrySignature,
    GenesisConfig, LedgerError, LogEntry, RevealMode, ServerIdentity, TestLog, BIT, BOT, OWNER_SIGNER, read_jsonl, append_jsonl,
};
pub use sign::{verify_ed25519, KeyPair, PublicIdentity, SCHEME_ED25519};
