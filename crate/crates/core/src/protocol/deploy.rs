//! All servers of a deployment hosted in one process, one thread each.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, NaiveDate, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{DatasetError, EncryptedDataset};
use super::request::TestRequest;
use super::server::{serve_request, RequestError, ServerContext};
use super::setup::{Layout, SetupOutput};
use crate::circuits::MulStrategy;
use crate::ledger::{append_jsonl, format_timestamp, read_jsonl, KeyPair, LedgerError, LogEntry, TestLog};
use crate::mpc::{local_bus, Party, Transport};
use crate::paillier::KeyShare;

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{path}: {reason}")]
    Keys { path: String, reason: String },
    #[error("dataset digest does not match the genesis entry")]
    DatasetDigest,
}

/// A request that did not produce a certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptRecord {
    pub researcher_key: String,
    pub timestamp: String,
    pub sigma: String,
    pub error: String,
}

/// Requests `researcher` has used on `day`: certificates plus failed
/// attempts.
pub fn quota_used(entries: &[LogEntry], attempts: &[AttemptRecord], researcher: &str, day: NaiveDate) -> u32 {
    let same_day = |ts: &str| {
        DateTime::parse_from_rfc3339(ts).map(|t| t.with_timezone(&Utc).date_naive() == day).unwrap_or(false)
    };
    let certs = entries
        .iter()
        .skip(1)
        .filter(|e| e.certificate.researcher_key == researcher && same_day(&e.certificate.timestamp))
        .count();
    let failed = attempts.iter().filter(|a| a.researcher_key == researcher && same_day(&a.timestamp)).count();
    (certs + failed) as u32
}

pub struct LocalDeployment {
    pub dataset: Arc<EncryptedDataset>,
    pub servers: Vec<ServerContext>,
    pub log: TestLog,
    pub attempts: Vec<AttemptRecord>,
    attempts_path: Option<PathBuf>,
    seed: Option<u64>,
    requests: u64,
}

impl LocalDeployment {
    /// In-memory deployment straight from setup output.
    pub fn from_setup(setup: &SetupOutput) -> Result<Self, DeployError> {
        let log = TestLog::from_entries(vec![setup.genesis.clone()])?;
        Self::assemble(setup.dataset.clone(), setup.key_shares.clone(), setup.server_keys.clone(), log, None)
    }

    /// Opens a deployment directory written by setup. Key shares and
    /// signing keys come from `key_dir`.
    pub fn open(dir: &Path, key_dir: &Path) -> Result<Self, DeployError> {
        let dataset = EncryptedDataset::read_dir(&dir.join(Layout::DATASET))?;
        let log = TestLog::open(&dir.join(Layout::LEDGER))?;
        let k = log.config().servers.len() as u16;
        let mut shares = Vec::with_capacity(k as usize);
        let mut keys = Vec::with_capacity(k as usize);
        for i in 1..=k {
            shares.push(read_json::<KeyShare>(&key_dir.join(Layout::share(i)))?);
            keys.push(read_json::<KeyPair>(&key_dir.join(Layout::server_key(i)))?);
        }
        let attempts_path = dir.join(Layout::ATTEMPTS);
        let mut dep = Self::assemble(dataset, shares, keys, log, Some(attempts_path.clone()))?;
        dep.attempts = read_jsonl(&attempts_path)?;
        Ok(dep)
    }

    fn assemble(
        dataset: EncryptedDataset,
        shares: Vec<KeyShare>,
        keys: Vec<KeyPair>,
        log: TestLog,
        attempts_path: Option<PathBuf>,
    ) -> Result<Self, DeployError> {
        if dataset.digest() != log.config().dataset_digest {
            return Err(DeployError::DatasetDigest);
        }
        for (i, k) in keys.iter().enumerate() {
            if log.config().servers.get(i).map(|s| s.key.as_str()) != Some(k.public_hex().as_str()) {
                return Err(DeployError::Keys {
                    path: Layout::server_key(i as u16 + 1),
                    reason: "signing key does not match the genesis entry".into(),
                });
            }
        }
        let dataset = Arc::new(dataset);
        let servers = shares
            .into_iter()
            .zip(keys)
            .enumerate()
            .map(|(i, (key_share, signing_key))| ServerContext {
                id: i as u16 + 1,
                key_share,
                signing_key,
                dataset: Arc::clone(&dataset),
                strategy: MulStrategy::default(),
            })
            .collect();
        Ok(Self { dataset, servers, log, attempts: Vec::new(), attempts_path, seed: None, requests: 0 })
    }

    /// Makes every party's randomness a function of `seed` and the request
    /// count, for reproducible tests.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_strategy(mut self, strategy: MulStrategy) -> Self {
        for s in &mut self.servers {
            s.strategy = strategy;
        }
        self
    }

    pub fn submit(&mut self, request: &TestRequest) -> Result<LogEntry, RequestError> {
        self.submit_at(request, Utc::now())
    }

    /// Runs `request` on all servers as of `now`. On success the entry is on
    /// the log; on failure an attempt is recorded and no index is used.
    pub fn submit_at(&mut self, request: &TestRequest, now: DateTime<Utc>) -> Result<LogEntry, RequestError> {
        let out = self.run(request, now);
        match out {
            Ok(entry) => Ok(entry),
            // Unsigned requests must not burn someone else's quota, and a
            // refused request did no work.
            Err(e @ (RequestError::Signature | RequestError::QuotaExceeded { .. })) => Err(e),
            Err(e) => {
                let record = AttemptRecord {
                    researcher_key: request.researcher_key.clone(),
                    timestamp: format_timestamp(now),
                    sigma: request.spec.sigma(),
                    error: e.to_string(),
                };
                if let Some(path) = &self.attempts_path {
                    append_jsonl(path, &record).map_err(RequestError::from)?;
                }
                self.attempts.push(record);
                Err(e)
            }
        }
    }

    fn run(&mut self, request: &TestRequest, now: DateTime<Utc>) -> Result<LogEntry, RequestError> {
        if !request.verify() {
            return Err(RequestError::Signature);
        }
        let limit = self.log.config().daily_quota;
        let used = quota_used(self.log.entries(), &self.attempts, &request.researcher_key, now.date_naive());
        if used >= limit {
            return Err(RequestError::QuotaExceeded { used, limit });
        }
        self.requests += 1;
        let pk = Arc::new(self.dataset.public_key().clone());
        let kappa = self.log.config().kappa;
        let entries = self.log.entries();
        let seed = self.seed.map(|s| s ^ self.requests.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let results: Vec<Result<LogEntry, RequestError>> = thread::scope(|s| {
            let handles: Vec<_> = local_bus(self.servers.len() as u16)
                .into_iter()
                .zip(&self.servers)
                .map(|(net, ctx)| {
                    let pk = Arc::clone(&pk);
                    s.spawn(move || {
                        let mut party = match seed {
                            Some(seed) => Party::seeded(net, pk, ctx.key_share.clone(), seed, kappa),
                            None => Party::new(net, pk, ctx.key_share.clone(), ChaCha20Rng::from_entropy(), kappa),
                        };
                        let out = serve_request(&mut party, ctx, entries, request, now);
                        if let Err(e) = &out {
                            party.abort(&e.to_string());
                        }
                        out
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("server thread panicked")).collect()
        });
        let mut entries_out = Vec::with_capacity(results.len());
        let mut first_err = None;
        for r in results {
            match r {
                Ok(e) => entries_out.push(e),
                Err(e) if e.is_echo() => {
                    first_err.get_or_insert(e);
                }
                Err(e) => {
                    // a root cause beats an echoed abort
                    if first_err.as_ref().map(RequestError::is_echo).unwrap_or(true) {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let entry = entries_out.swap_remove(0);
        if entries_out.iter().any(|e| e != &entry) {
            return Err(RequestError::Disagreement("servers produced different entries".into()));
        }
        self.log.append(entry.clone())?;
        Ok(entry)
    }
}

/// One server of a networked deployment. It holds only its own key share
/// and signing key, and a replica of the log and the attempts file.
pub struct ServerNode {
    pub ctx: ServerContext,
    pub log: TestLog,
    pub attempts: Vec<AttemptRecord>,
    attempts_path: PathBuf,
    kappa: u32,
}

impl ServerNode {
    pub fn open(dir: &Path, key_dir: &Path, id: u16) -> Result<Self, DeployError> {
        let dataset = EncryptedDataset::read_dir(&dir.join(Layout::DATASET))?;
        let log = TestLog::open(&dir.join(Layout::LEDGER))?;
        if dataset.digest() != log.config().dataset_digest {
            return Err(DeployError::DatasetDigest);
        }
        let key_share: KeyShare = read_json(&key_dir.join(Layout::share(id)))?;
        let signing_key: KeyPair = read_json(&key_dir.join(Layout::server_key(id)))?;
        let listed = log.config().servers.iter().find(|s| s.id == id).map(|s| s.key.clone());
        if listed.as_deref() != Some(signing_key.public_hex().as_str()) || key_share.index != id {
            return Err(DeployError::Keys {
                path: key_dir.display().to_string(),
                reason: format!("keys do not belong to server {id} of this deployment"),
            });
        }
        let attempts_path = dir.join(Layout::ATTEMPTS);
        let attempts = read_jsonl(&attempts_path)?;
        let kappa = log.config().kappa;
        let ctx = ServerContext { id, key_share, signing_key, dataset: Arc::new(dataset), strategy: MulStrategy::default() };
        Ok(Self { ctx, log, attempts, attempts_path, kappa })
    }

    /// Serves one request with the peers reachable through `net`. Every
    /// server must call this with the same request.
    pub fn handle<T: Transport>(
        &mut self,
        net: T,
        request: &TestRequest,
        now: DateTime<Utc>,
    ) -> Result<LogEntry, RequestError> {
        if !request.verify() {
            return Err(RequestError::Signature);
        }
        let limit = self.log.config().daily_quota;
        let used = quota_used(self.log.entries(), &self.attempts, &request.researcher_key, now.date_naive());
        if used >= limit {
            return Err(RequestError::QuotaExceeded { used, limit });
        }
        let pk = Arc::new(self.ctx.dataset.public_key().clone());
        let mut party = Party::new(net, pk, self.ctx.key_share.clone(), ChaCha20Rng::from_entropy(), self.kappa);
        match serve_request(&mut party, &self.ctx, self.log.entries(), request, now) {
            Ok(entry) => {
                self.log.append(entry.clone())?;
                Ok(entry)
            }
            Err(e) => {
                party.abort(&e.to_string());
                let record = AttemptRecord {
                    researcher_key: request.researcher_key.clone(),
                    timestamp: format_timestamp(now),
                    sigma: request.spec.sigma(),
                    error: e.to_string(),
                };
                append_jsonl(&self.attempts_path, &record)?;
                self.attempts.push(record);
                Err(e)
            }
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DeployError> {
    let text = fs::read_to_string(path)
        .map_err(|e| DeployError::Keys { path: path.display().to_string(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| DeployError::Keys { path: path.display().to_string(), reason: e.to_string() })
}
