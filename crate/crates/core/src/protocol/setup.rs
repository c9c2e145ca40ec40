//! Data-owner setup: split, encrypt, deal keys, write the genesis entry.

use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{parse_csv, split_rows, DatasetError, DatasetMetadata, EncryptedDataset, Table};
use crate::ledger::{genesis_entry, GenesisConfig, KeyPair, LedgerError, LogEntry, RevealMode, ServerIdentity, TestLog};
use crate::mpc::DEFAULT_KAPPA;
use crate::numeric::DEFAULT_PHI;
use crate::paillier::{fixture_primes_512, keygen, keygen_with_primes, KeyShare, PaillierError, PaillierParams, PublicKey};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid setup parameters: {0}")]
    Params(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn d_modulus_bits() -> u64 {
    1024
}
fn d_servers() -> u16 {
    3
}
fn d_threshold() -> u16 {
    2
}
fn d_alpha() -> String {
    "0.05".into()
}
fn d_beta() -> String {
    "0.5".into()
}
fn d_gamma() -> String {
    "0.0125".into()
}
fn d_phi() -> u32 {
    DEFAULT_PHI
}
fn d_kappa() -> u32 {
    DEFAULT_KAPPA
}
fn d_mode() -> RevealMode {
    RevealMode::FullStatistic
}
fn d_quota() -> u32 {
    20
}
fn d_split() -> f64 {
    0.75
}
fn d_timeout() -> u64 {
    600
}

/// Owner configuration, read from JSON; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupParams {
    #[serde(default = "d_modulus_bits")]
    pub modulus_bits: u64,
    #[serde(default = "d_servers")]
    pub servers: u16,
    #[serde(default = "d_threshold")]
    pub threshold: u16,
    #[serde(default = "d_alpha")]
    pub alpha: String,
    #[serde(default = "d_beta")]
    pub beta: String,
    #[serde(default = "d_gamma")]
    pub gamma: String,
    #[serde(default = "d_phi")]
    pub phi: u32,
    #[serde(default = "d_kappa")]
    pub kappa: u32,
    #[serde(default = "d_mode")]
    pub mode: RevealMode,
    #[serde(default = "d_quota")]
    pub daily_quota: u32,
    /// Fraction of rows released as the exploration split.
    #[serde(default = "d_split")]
    pub split: f64,
    /// Seeds the row shuffle only.
    #[serde(default)]
    pub seed: u64,
    /// Use the built-in 512-bit test primes instead of fresh ones. Anyone
    /// can decrypt such a dataset; for demos and tests only.
    #[serde(default)]
    pub insecure_fixture_key: bool,
    #[serde(default = "d_timeout")]
    pub prime_timeout_secs: u64,
}

impl Default for SetupParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SetupParams {
    pub fn paillier(&self) -> Result<PaillierParams, SetupError> {
        Ok(PaillierParams::new(self.modulus_bits, self.servers, self.threshold)?)
    }
}

pub struct SetupOutput {
    pub exploration: Table,
    pub dataset: EncryptedDataset,
    pub key_shares: Vec<KeyShare>,
    pub server_keys: Vec<KeyPair>,
    pub owner_key: KeyPair,
    pub genesis: LogEntry,
}

impl SetupOutput {
    pub fn config(&self) -> &GenesisConfig {
        self.genesis.genesis.as_ref().expect("genesis entry carries the config")
    }
}

fn generate_key<R: RngCore + CryptoRng>(params: &SetupParams, rng: &mut R) -> Result<(PublicKey, Vec<KeyShare>), SetupError> {
    let pp = params.paillier()?;
    if params.insecure_fixture_key {
        if params.modulus_bits != 512 {
            return Err(SetupError::Params("the fixture key has a 512-bit modulus".into()));
        }
        let (p, q) = fixture_primes_512();
        return Ok(keygen_with_primes(&pp, &p, &q, rng)?);
    }
    Ok(keygen(&pp, rng, Some(Duration::from_secs(params.prime_timeout_secs)))?)
}

/// Runs the owner's setup on CSV text. `rng` supplies all key material;
/// the row split uses `params.seed`.
pub fn owner_setup<R: RngCore + CryptoRng>(
    csv_text: &str,
    metadata: DatasetMetadata,
    params: &SetupParams,
    now: DateTime<Utc>,
    rng: &mut R,
) -> Result<SetupOutput, SetupError> {
    if params.phi == 0 || params.phi > 64 {
        return Err(SetupError::Params("phi must lie in 1..=64".into()));
    }
    if params.kappa < 16 {
        return Err(SetupError::Params("kappa below 16 bits gives no masking".into()));
    }
    let table = parse_csv(csv_text, &metadata)?;
    let mut split_rng = ChaCha20Rng::seed_from_u64(params.seed);
    let (exploration, validation) = split_rows(&table, params.split, &mut split_rng)?;
    let (pk, key_shares) = generate_key(params, rng)?;
    let mut metadata = metadata;
    metadata.n_rows = table.len() as u64;
    metadata.exploration_rows = exploration.len() as u64;
    metadata.validation_rows = validation.len() as u64;
    let dataset = EncryptedDataset::encrypt(&validation, metadata, &pk, params.phi, params.mode, rng)?;
    let owner_key = KeyPair::generate(rng);
    let server_keys: Vec<KeyPair> = (0..params.servers).map(|_| KeyPair::generate(rng)).collect();
    let config = GenesisConfig {
        alpha: params.alpha.clone(),
        beta: params.beta.clone(),
        gamma: params.gamma.clone(),
        mode: params.mode,
        daily_quota: params.daily_quota,
        owner: owner_key.public(),
        servers: server_keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let id = k.public();
                ServerIdentity { id: i as u16 + 1, scheme: id.scheme, key: id.key }
            })
            .collect(),
        dataset_digest: dataset.digest(),
        phi: params.phi,
        kappa: params.kappa,
    };
    let genesis = genesis_entry(config, now, &owner_key, &server_keys)?;
    Ok(SetupOutput { exploration, dataset, key_shares, server_keys, owner_key, genesis })
}

#[cfg(unix)]
fn write_private(path: &Path, contents: &str) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create_new(true).mode(0o600).open(path)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()
}

#[cfg(not(unix))]
fn write_private(path: &Path, contents: &str) -> std::io::Result<()> {
    fs::write(path, contents)
}

/// Paths inside a deployment directory.
pub struct Layout;

impl Layout {
    pub const EXPLORATION: &'static str = "exploration.csv";
    pub const DATASET: &'static str = "dataset";
    pub const KEYS: &'static str = "keys";
    pub const LEDGER: &'static str = "ledger.jsonl";
    pub const ATTEMPTS: &'static str = "attempts.jsonl";

    pub fn share(i: u16) -> String {
        format!("share-{i}.json")
    }

    pub fn server_key(i: u16) -> String {
        format!("server-{i}.sign.json")
    }
}

/// Writes the setup output under `dir`, which must not already hold a
/// ledger. Secret files are created with mode 0600.
pub fn write_setup(dir: &Path, out: &SetupOutput) -> Result<(), SetupError> {
    fs::create_dir_all(dir)?;
    let ledger = dir.join(Layout::LEDGER);
    if ledger.exists() {
        return Err(SetupError::Params(format!("{} already exists", ledger.display())));
    }
    fs::write(dir.join(Layout::EXPLORATION), out.exploration.to_csv()?)?;
    out.dataset.write_dir(&dir.join(Layout::DATASET))?;
    let keys = dir.join(Layout::KEYS);
    fs::create_dir_all(&keys)?;
    fs::write(keys.join("public.json"), serde_json::to_string_pretty(out.dataset.public_key())? + "\n")?;
    for share in &out.key_shares {
        write_private(&keys.join(Layout::share(share.index)), &serde_json::to_string(share)?)?;
    }
    for (i, k) in out.server_keys.iter().enumerate() {
        write_private(&keys.join(Layout::server_key(i as u16 + 1)), &serde_json::to_string(k)?)?;
    }
    write_private(&keys.join("owner.sign.json"), &serde_json::to_string(&out.owner_key)?)?;
    TestLog::create(&ledger, out.genesis.clone())?;
    fs::write(dir.join(Layout::ATTEMPTS), "")?;
    Ok(())
}
