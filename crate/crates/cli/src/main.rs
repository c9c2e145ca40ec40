//! `star`: data-owner setup, researcher requests, servers and auditors.
//!
//! Exit status is 0 on success, 1 when a request is refused or a log or
//! certificate does not verify, and 2 on any other error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use star_core::circuits::TestSpec;
use star_core::ledger::{parse_log, perform_audit, verify_log, AuditError, KeyPair, LogEntry, Verdict};
use star_core::mpc::TcpTransport;
use star_core::numeric::rational_to_f64;
use star_core::protocol::{
    fdr_sim, owner_setup, write_setup, DatasetMetadata, FdrConfig, Layout, LocalDeployment, RequestError, ServerNode,
    SetupParams, TestRequest,
};

#[derive(Parser)]
#[command(name = "star", version, about = "Auditable statistical tests over threshold-encrypted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split and encrypt a CSV, deal key shares and write the genesis entry.
    Setup {
        #[arg(long)]
        csv: PathBuf,
        /// Attribute schema as JSON.
        #[arg(long)]
        metadata: PathBuf,
        /// Setup parameters as JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Deployment directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Create a researcher signing key.
    ResearcherKeygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign a test spec into a request file for `serve`.
    SignRequest {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value = "")]
        nonce: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one test with every server hosted in this process.
    Test {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Researcher signing key.
        #[arg(long)]
        key: PathBuf,
        /// Defaults to the current time.
        #[arg(long, default_value = "")]
        nonce: String,
        /// Directory holding the server key shares.
        #[arg(long, env = "STAR_KEY_SHARES")]
        key_shares: Option<PathBuf>,
    },
    /// Act as one server for one signed request over TCP.
    Serve {
        /// This server's own copy of the deployment directory.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        party: u16,
        /// Listening addresses of all servers, in party order.
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<SocketAddr>,
        #[arg(long)]
        request: PathBuf,
        #[arg(long, env = "STAR_KEY_SHARES")]
        key_shares: Option<PathBuf>,
        /// Seconds to wait for peers, per connection and per round.
        #[arg(long, default_value_t = 120)]
        timeout: u64,
    },
    /// Audit certificate `rho`: replay the wealth machine and check the decision.
    Audit {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        rho: u64,
    },
    /// Check every hash link and signature of a ledger.
    VerifyLog {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Plaintext false-discovery simulation.
    FdrSim {
        /// Simulation config as JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Non-error outcomes that still exit 1.
enum Outcome {
    Ok,
    Refused,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_new(path: &Path, contents: &str) -> Result<()> {
    use std::io::Write;
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn key_dir(dir: &Path, override_dir: Option<PathBuf>) -> PathBuf {
    override_dir.unwrap_or_else(|| dir.join(Layout::KEYS))
}

fn print_entry(entry: &LogEntry) {
    let c = &entry.certificate;
    println!("rho       {}", c.rho);
    println!("sigma     {}", c.sigma);
    println!("tau       {}", c.tau);
    println!("p         {}", c.p);
    println!("decision  {}", c.decision);
    println!("timestamp {}", c.timestamp);
    println!("entry     {}", entry.entry_hash);
}

fn refused(e: &RequestError) -> Outcome {
    eprintln!("request refused: {e}");
    Outcome::Refused
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Setup { csv, metadata, config, out } => {
            let text = fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let meta: DatasetMetadata = read_json(&metadata)?;
            let params: SetupParams = match config {
                Some(p) => read_json(&p)?,
                None => SetupParams::default(),
            };
            let mut rng = rand::rngs::OsRng;
            let setup = owner_setup(&text, meta, &params, chrono::Utc::now(), &mut rng)?;
            write_setup(&out, &setup)?;
            let m = &setup.dataset.header.metadata;
            println!(
                "wrote {}: {} exploration rows, {} encrypted validation rows, {} servers (threshold {})",
                out.display(),
                m.exploration_rows,
                m.validation_rows,
                params.servers,
                params.threshold
            );
            if params.insecure_fixture_key {
                eprintln!("warning: the fixture key is public; this dataset is not confidential");
            }
            Ok(Outcome::Ok)
        }
        Command::ResearcherKeygen { out } => {
            let key = KeyPair::generate(&mut rand::rngs::OsRng);
            write_new(&out, &serde_json::to_string(&key)?)?;
            println!("{}", key.public_hex());
            Ok(Outcome::Ok)
        }
        Command::SignRequest { spec, key, nonce, out } => {
            let spec: TestSpec = read_json(&spec)?;
            let key: KeyPair = read_json(&key)?;
            let req = TestRequest::sign(spec, &key, &nonce);
            fs::write(&out, serde_json::to_string_pretty(&req)? + "\n")?;
            Ok(Outcome::Ok)
        }
        Command::Test { dir, spec, key, nonce, key_shares } => {
            let spec: TestSpec = read_json(&spec)?;
            let key: KeyPair = read_json(&key)?;
            let mut dep = LocalDeployment::open(&dir, &key_dir(&dir, key_shares))?;
            let nonce = if nonce.is_empty() { chrono::Utc::now().to_rfc3339() } else { nonce };
            match dep.submit(&TestRequest::sign(spec, &key, &nonce)) {
                Ok(entry) => {
                    print_entry(&entry);
                    Ok(Outcome::Ok)
                }
                Err(e) => Ok(refused(&e)),
            }
        }
        Command::Serve { dir, party, peers, request, key_shares, timeout } => {
            let req: TestRequest = read_json(&request)?;
            let mut node = ServerNode::open(&dir, &key_dir(&dir, key_shares), party)?;
            let Some(addr) = peers.get(party as usize - 1).filter(|_| party >= 1) else {
                bail!("party {party} has no entry in --peers");
            };
            let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let wait = Duration::from_secs(timeout);
            let net = TcpTransport::connect(party, listener, &peers, wait, wait)?;
            match node.handle(net, &req, chrono::Utc::now()) {
                Ok(entry) => {
                    print_entry(&entry);
                    Ok(Outcome::Ok)
                }
                Err(e) => Ok(refused(&e)),
            }
        }
        Command::Audit { ledger, rho } => {
            let bytes = fs::read(&ledger).with_context(|| format!("reading {}", ledger.display()))?;
            let entries = parse_log(&bytes).context("ledger is unreadable")?;
            let report = match perform_audit(&entries, rho) {
                Ok(r) => r,
                Err(e @ AuditError::NotFound { .. }) => bail!("{e}"),
                Err(e) => return Err(e).context("ledger is unreadable"),
            };
            println!("{:>5}  {:>14}  {:>14}  {:>14}  {:<8}  {:<8}", "rho", "wealth_before", "alpha_j", "p", "recorded", "replayed");
            for s in &report.trajectory {
                let p = s.p.as_ref().map(|p| format!("{:.12}", rational_to_f64(p))).unwrap_or_else(|| "BIT".into());
                let re = s.recomputed.map(|d| d.as_str()).unwrap_or("-");
                println!(
                    "{:>5}  {:>14.10}  {:>14.10}  {:>14}  {:<8}  {:<8}",
                    s.rho,
                    rational_to_f64(&s.wealth_before),
                    rational_to_f64(&s.alpha_j),
                    p,
                    s.recorded.as_str(),
                    re
                );
            }
            if let Some(step) = report.target() {
                println!("alpha_{} = {}", report.rho, step.alpha_j);
                println!("decision = {}", step.recorded.as_str());
            }
            if report.verdict.is_valid() && !report.decision_checked && report.rho > 0 {
                println!("note: significance-bit entry; chain and signatures checked, decision taken as recorded");
            }
            match report.verdict {
                Verdict::Valid => {
                    println!("verdict: VALID");
                    Ok(Outcome::Ok)
                }
                Verdict::Invalid(reason) => {
                    println!("verdict: INVALID ({reason})");
                    Ok(Outcome::Refused)
                }
            }
        }
        Command::VerifyLog { ledger } => {
            let bytes = fs::read(&ledger).with_context(|| format!("reading {}", ledger.display()))?;
            let entries = match parse_log(&bytes) {
                Ok(e) => e,
                Err(e) => {
                    println!("INVALID: {e}");
                    return Ok(Outcome::Refused);
                }
            };
            match verify_log(&entries) {
                Ok(()) => {
                    println!("VALID: {} entries", entries.len());
                    Ok(Outcome::Ok)
                }
                Err((i, e)) => {
                    println!("INVALID at entry {i}: {e}");
                    Ok(Outcome::Refused)
                }
            }
        }
        Command::FdrSim { config, json } => {
            let config: FdrConfig = match config {
                Some(p) => read_json(&p)?,
                None => FdrConfig::default(),
            };
            let report = fdr_sim(&config)?;
            print!("{}", report.to_text());
            if let Some(path) = json {
                fs::write(&path, serde_json::to_string(&report)? + "\n")?;
            }
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Refused) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
