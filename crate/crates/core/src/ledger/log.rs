//! The test log: hash-chained certificates with quorum signatures, stored
//! as JSON Lines.
//!
//! Every entry hashes `rho|sigma|tau|p|decision|researcher_key|timestamp|prev_hash`.
//! The genesis entry `(0, BOT, BOT)` carries the deployment configuration;
//! its `prev_hash` is the SHA-256 of that configuration's canonical JSON, so
//! the parameters are bound into the chain without changing the entry bytes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::alpha::{AlphaParams, Decision};
use super::sign::{KeyPair, PublicIdentity};
use crate::codec::{canonical_json, decode_hex, is_lower_hex, sha256};
use crate::numeric::{parse_decimal, Rational};

/// Placeholder for the empty fields of the genesis entry.
pub const BOT: &str = "BOT";
/// Placeholder for `tau` and `p` when only the significance bit is revealed.
pub const BIT: &str = "BIT";
/// Signer id of the data owner; servers are `1..=k`.
pub const OWNER_SIGNER: u16 = 0;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("expected rho {expected}, got {got}")]
    Gap { expected: u64, got: u64 },
    #[error("rho {0} is already on the log")]
    Duplicate(u64),
    #[error("entry {rho} carries {have} valid server signatures, {need} required")]
    Quorum { rho: u64, have: usize, need: usize },
    #[error("entry {rho}: signature by signer {signer} does not verify")]
    BadSignature { rho: u64, signer: u16 },
    #[error("entry {rho}: unknown or repeated signer {signer}")]
    UnknownSigner { rho: u64, signer: u16 },
    #[error("entry {rho}: entry_hash does not match its contents")]
    HashMismatch { rho: u64 },
    #[error("entry {rho}: prev_hash does not link to the previous entry")]
    LinkMismatch { rho: u64 },
    #[error("entry {rho}: malformed field {field}")]
    Malformed { rho: u64, field: &'static str },
    #[error("genesis: {0}")]
    Genesis(String),
    #[error("line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("log is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LedgerError {
    /// Parse and I/O problems, as opposed to a well-formed log that fails
    /// verification.
    pub fn is_corruption(&self) -> bool {
        matches!(self, LedgerError::Corrupt { .. } | LedgerError::Io(_) | LedgerError::Empty)
    }
}

/// What the servers reveal for each test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevealMode {
    FullStatistic,
    SignificanceBit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerIdentity {
    pub id: u16,
    pub scheme: String,
    pub key: String,
}

impl ServerIdentity {
    pub fn identity(&self) -> PublicIdentity {
        PublicIdentity { scheme: self.scheme.clone(), key: self.key.clone() }
    }
}

/// Deployment parameters fixed at setup. Decimal strings keep the
/// α-investing parameters exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisConfig {
    pub alpha: String,
    pub beta: String,
    pub gamma: String,
    pub mode: RevealMode,
    pub daily_quota: u32,
    pub owner: PublicIdentity,
    pub servers: Vec<ServerIdentity>,
    /// SHA-256 over the encrypted dataset header and columns.
    pub dataset_digest: String,
    pub phi: u32,
    pub kappa: u32,
}

impl GenesisConfig {
    pub fn alpha_params(&self) -> Result<AlphaParams<Rational>, LedgerError> {
        AlphaParams::from_decimals(&self.alpha, &self.beta, &self.gamma)
            .map_err(|e| LedgerError::Genesis(e.to_string()))
    }

    pub fn quorum(&self) -> usize {
        quorum(self.servers.len())
    }

    pub fn digest(&self) -> String {
        let json = canonical_json(self).expect("config serializes");
        hex::encode(sha256(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        self.alpha_params()?;
        if self.servers.len() < 2 {
            return Err(LedgerError::Genesis("at least two servers".into()));
        }
        for (i, s) in self.servers.iter().enumerate() {
            if s.id as usize != i + 1 {
                return Err(LedgerError::Genesis("server ids must be 1..=k in order".into()));
            }
        }
        if !is_hash_hex(&self.dataset_digest) {
            return Err(LedgerError::Genesis("dataset_digest must be a SHA-256 hex digest".into()));
        }
        Ok(())
    }

    fn signer(&self, id: u16) -> Option<PublicIdentity> {
        if id == OWNER_SIGNER {
            Some(self.owner.clone())
        } else {
            self.servers.get(id as usize - 1).map(ServerIdentity::identity)
        }
    }
}

/// Simple majority `⌈(k + 1) / 2⌉`.
pub fn quorum(k: usize) -> usize {
    (k + 2) / 2
}

/// The signed tuple `(ρ, σ, τ)` plus the fields needed to audit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub rho: u64,
    /// Hex of the test tag byte followed by the spec hash.
    pub sigma: String,
    pub tau: String,
    pub p: String,
    pub decision: String,
    pub researcher_key: String,
    /// RFC 3339, UTC, second precision.
    pub timestamp: String,
}

impl Certificate {
    pub fn genesis(timestamp: DateTime<Utc>) -> Self {
        Certificate {
            rho: 0,
            sigma: BOT.into(),
            tau: BOT.into(),
            p: BOT.into(),
            decision: BOT.into(),
            researcher_key: BOT.into(),
            timestamp: format_timestamp(timestamp),
        }
    }

    pub fn canonical_bytes(&self, prev_hash: &str) -> Vec<u8> {
        [
            self.rho.to_string().as_str(),
            &self.sigma,
            &self.tau,
            &self.p,
            &self.decision,
            &self.researcher_key,
            &self.timestamp,
            prev_hash,
        ]
        .join("|")
        .into_bytes()
    }

    pub fn decision(&self) -> Option<Decision> {
        Decision::parse(&self.decision)
    }

    /// Exact p-value, or `None` in significance-bit mode.
    pub fn p_exact(&self) -> Option<Rational> {
        if self.p == BIT {
            None
        } else {
            parse_decimal(&self.p).ok()
        }
    }

    pub fn parsed_timestamp(&self) -> Option<DateTime<Utc>> {
        let t = DateTime::parse_from_rfc3339(&self.timestamp).ok()?.with_timezone(&Utc);
        (format_timestamp(t) == self.timestamp).then_some(t)
    }

    fn check_fields(&self) -> Result<(), LedgerError> {
        let rho = self.rho;
        let bad = |field| Err(LedgerError::Malformed { rho, field });
        if self.parsed_timestamp().is_none() {
            return bad("timestamp");
        }
        if rho == 0 {
            for (field, v) in [
                ("sigma", &self.sigma),
                ("tau", &self.tau),
                ("p", &self.p),
                ("decision", &self.decision),
                ("researcher_key", &self.researcher_key),
            ] {
                if v != BOT {
                    return bad(field);
                }
            }
            return Ok(());
        }
        if !is_lower_hex(&self.sigma) || self.sigma.len() != 66 {
            return bad("sigma");
        }
        if !(is_lower_hex(&self.researcher_key) && self.researcher_key.len() == 64) {
            return bad("researcher_key");
        }
        if self.decision().is_none() {
            return bad("decision");
        }
        let bit_mode = self.tau == BIT;
        if bit_mode != (self.p == BIT) {
            return bad("p");
        }
        if !bit_mode {
            if !is_decimal12(&self.tau) {
                return bad("tau");
            }
            if !is_decimal12(&self.p) || self.p.starts_with('-') {
                return bad("p");
            }
            let p = self.p_exact().expect("checked");
            if p > Rational::from_integer(1.into()) {
                return bad("p");
            }
        }
        Ok(())
    }
}

fn is_hash_hex(s: &str) -> bool {
    s.len() == 64 && is_lower_hex(s)
}

fn is_decimal12(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let Some((int, frac)) = body.split_once('.') else {
        return false;
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && (int == "0" || !int.starts_with('0'))
        && frac.len() == 12
        && frac.bytes().all(|b| b.is_ascii_digit())
        && !(s.starts_with('-') && body.bytes().all(|b| b == b'0' || b == b'.'))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySignature {
    pub signer: u16,
    pub signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub certificate: Certificate,
    pub prev_hash: String,
    pub entry_hash: String,
    pub signatures: Vec<EntrySignature>,
    /// Present on the genesis entry only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genesis: Option<GenesisConfig>,
}

impl LogEntry {
    /// An entry with its hash computed and no signatures yet.
    pub fn seal(certificate: Certificate, prev_hash: String) -> Self {
        let entry_hash = hex::encode(sha256(&certificate.canonical_bytes(&prev_hash)));
        LogEntry { certificate, prev_hash, entry_hash, signatures: Vec::new(), genesis: None }
    }

    pub fn rho(&self) -> u64 {
        self.certificate.rho
    }

    /// The bytes every signer signs: the raw 32-byte entry hash.
    pub fn signing_bytes(&self) -> Vec<u8> {
        decode_hex(&self.entry_hash).unwrap_or_default()
    }

    pub fn sign_with(&self, signer: u16, key: &KeyPair) -> EntrySignature {
        EntrySignature { signer, signature: key.sign(&self.signing_bytes()) }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("entry serializes")
    }

    fn check_hash(&self) -> Result<(), LedgerError> {
        let rho = self.rho();
        if !is_hash_hex(&self.prev_hash) {
            return Err(LedgerError::Malformed { rho, field: "prev_hash" });
        }
        let expected = hex::encode(sha256(&self.certificate.canonical_bytes(&self.prev_hash)));
        if self.entry_hash != expected {
            return Err(LedgerError::HashMismatch { rho });
        }
        Ok(())
    }

    /// Counts valid server signatures; any bad, unknown or repeated
    /// signature is an error rather than being ignored.
    fn check_signatures(&self, config: &GenesisConfig) -> Result<(), LedgerError> {
        let rho = self.rho();
        let msg = self.signing_bytes();
        let mut seen = Vec::new();
        let mut servers = 0;
        let mut owner = false;
        for s in &self.signatures {
            if seen.contains(&s.signer) || (s.signer == OWNER_SIGNER && rho != 0) {
                return Err(LedgerError::UnknownSigner { rho, signer: s.signer });
            }
            let id = config
                .signer(s.signer)
                .ok_or(LedgerError::UnknownSigner { rho, signer: s.signer })?;
            if !id.verify(&msg, &s.signature) {
                return Err(LedgerError::BadSignature { rho, signer: s.signer });
            }
            seen.push(s.signer);
            if s.signer == OWNER_SIGNER {
                owner = true;
            } else {
                servers += 1;
            }
        }
        if rho == 0 && !owner {
            return Err(LedgerError::Genesis("missing the data owner's signature".into()));
        }
        let need = config.quorum();
        if servers < need {
            return Err(LedgerError::Quorum { rho, have: servers, need });
        }
        Ok(())
    }
}

/// Builds and signs the genesis entry.
pub fn genesis_entry(
    config: GenesisConfig,
    timestamp: DateTime<Utc>,
    owner: &KeyPair,
    servers: &[KeyPair],
) -> Result<LogEntry, LedgerError> {
    config.validate()?;
    if owner.public() != config.owner {
        return Err(LedgerError::Genesis("owner key does not match the configuration".into()));
    }
    let mut entry = LogEntry::seal(Certificate::genesis(timestamp), config.digest());
    entry.signatures.push(entry.sign_with(OWNER_SIGNER, owner));
    for (i, key) in servers.iter().enumerate() {
        entry.signatures.push(entry.sign_with(i as u16 + 1, key));
    }
    entry.genesis = Some(config);
    verify_genesis(&entry)?;
    Ok(entry)
}

fn verify_genesis(entry: &LogEntry) -> Result<&GenesisConfig, LedgerError> {
    if entry.rho() != 0 {
        return Err(LedgerError::Gap { expected: 0, got: entry.rho() });
    }
    let config = entry
        .genesis
        .as_ref()
        .ok_or_else(|| LedgerError::Genesis("configuration missing".into()))?;
    config.validate()?;
    entry.certificate.check_fields()?;
    entry.check_hash()?;
    if entry.prev_hash != config.digest() {
        return Err(LedgerError::Genesis("prev_hash does not commit to the configuration".into()));
    }
    entry.check_signatures(config)?;
    Ok(config)
}

/// Checks `next` as the successor of `prev` under `config`.
pub fn verify_successor(prev: &LogEntry, next: &LogEntry, config: &GenesisConfig) -> Result<(), LedgerError> {
    let expected = prev.rho() + 1;
    if next.rho() != expected {
        return Err(if next.rho() <= prev.rho() {
            LedgerError::Duplicate(next.rho())
        } else {
            LedgerError::Gap { expected, got: next.rho() }
        });
    }
    if next.genesis.is_some() {
        return Err(LedgerError::Malformed { rho: next.rho(), field: "genesis" });
    }
    next.certificate.check_fields()?;
    next.check_hash()?;
    if next.prev_hash != prev.entry_hash {
        return Err(LedgerError::LinkMismatch { rho: next.rho() });
    }
    next.check_signatures(config)
}

/// Verifies a whole log. On failure returns the index of the first bad
/// entry with the reason.
pub fn verify_log(entries: &[LogEntry]) -> Result<(), (usize, LedgerError)> {
    let first = entries.first().ok_or((0, LedgerError::Empty))?;
    let config = verify_genesis(first).map_err(|e| (0, e))?;
    for (i, pair) in entries.windows(2).enumerate() {
        verify_successor(&pair[0], &pair[1], config).map_err(|e| (i + 1, e))?;
    }
    Ok(())
}

/// Parses JSON Lines strictly: every line, including the last, ends with
/// `\n`, and nothing else is allowed between entries.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<LogEntry>, LedgerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LedgerError::Corrupt { line: 0, msg: e.to_string() })?;
    if text.is_empty() {
        return Err(LedgerError::Empty);
    }
    let Some(body) = text.strip_suffix('\n') else {
        return Err(LedgerError::Corrupt { line: text.lines().count(), msg: "missing final newline".into() });
    };
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let entry: LogEntry =
                serde_json::from_str(line).map_err(|e| LedgerError::Corrupt { line: i + 1, msg: e.to_string() })?;
            if entry.to_line() != line {
                return Err(LedgerError::Corrupt { line: i + 1, msg: "not in canonical form".into() });
            }
            Ok(entry)
        })
        .collect()
}

pub fn serialize_log(entries: &[LogEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend_from_slice(e.to_line().as_bytes());
        out.push(b'\n');
    }
    out
}

/// An in-memory replica of the log, optionally mirrored to a file.
#[derive(Debug, Clone)]
pub struct TestLog {
    entries: Vec<LogEntry>,
    config: GenesisConfig,
    path: Option<PathBuf>,
}

impl TestLog {
    pub fn from_entries(entries: Vec<LogEntry>) -> Result<Self, LedgerError> {
        verify_log(&entries).map_err(|(_, e)| e)?;
        let config = entries[0].genesis.clone().expect("verified genesis");
        Ok(Self { entries, config, path: None })
    }

    /// Writes a new log file holding only the genesis entry.
    pub fn create(path: &Path, genesis: LogEntry) -> Result<Self, LedgerError> {
        let mut log = Self::from_entries(vec![genesis])?;
        let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
        f.write_all(&serialize_log(&log.entries))?;
        f.sync_all()?;
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let bytes = std::fs::read(path)?;
        let mut log = Self::from_entries(parse_log(&bytes)?)?;
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn config(&self) -> &GenesisConfig {
        &self.config
    }

    pub fn last(&self) -> &LogEntry {
        self.entries.last().expect("genesis is always present")
    }

    pub fn next_rho(&self) -> u64 {
        self.last().rho() + 1
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Detaches the replica from its file.
    pub fn in_memory(mut self) -> Self {
        self.path = None;
        self
    }

    /// Verifies `entry` against the tip and appends it; when backed by a
    /// file the line is flushed to disk before returning.
    pub fn append(&mut self, entry: LogEntry) -> Result<(), LedgerError> {
        verify_successor(self.last(), &entry, &self.config)?;
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path)?;
            let mut line = entry.to_line();
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_all()?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Reads a JSON Lines file of arbitrary records, skipping nothing.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LedgerError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| LedgerError::Corrupt { line: i + 1, msg: e.to_string() })
        })
        .collect()
}

/// Appends one record to a JSON Lines file and syncs it.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<(), LedgerError> {
    let mut f = OpenOptions::new().append(true).create(true).open(path)?;
    let mut line = serde_json::to_string(record).map_err(|e| LedgerError::Corrupt { line: 0, msg: e.to_string() })?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_all()?;
    Ok(())
}
