use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dipa_core::fhir::fixtures::DEMO_CLIENT_ID;
use dipa_core::ledger::{export_heads, parse_heads};
use dipa_core::presentation::QrMode;
use dipa_wallet::commands::{reason_code, HeadsSource, PresentMode, PresentOptions, Verdict};
use dipa_wallet::{exit, Wallet, WalletConfig, WalletError, DEFAULT_SERVER, DEFAULT_STORE};
use serde::Serialize;

/// Digital immunity passport wallet.
#[derive(Debug, Parser)]
#[command(name = "wallet", version)]
struct Cli {
    /// TOML file with `server` and `store` defaults.
    #[arg(long, env = "DIPA_WALLET_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Server base URL.
    #[arg(long, env = "DIPA_SERVER", global = true)]
    server: Option<String>,
    /// Encrypted wallet file.
    #[arg(long, env = "DIPA_WALLET_STORE", global = true)]
    store: Option<PathBuf>,
    #[arg(long, env = "DIPA_WALLET_PASSPHRASE", hide_env_values = true, global = true)]
    passphrase: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Identified,
    Anonymous,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Vet an identity document and store the identity credential.
    Onboard {
        /// Text file with the two MRZ lines.
        #[arg(long)]
        mrz: PathBuf,
        /// Document portrait image.
        #[arg(long)]
        document: PathBuf,
        #[arg(long)]
        selfie: PathBuf,
    },
    /// Log in to the health record portal and link it to the wallet.
    LinkEhr {
        #[arg(long)]
        username: String,
        #[arg(long, env = "DIPA_EHR_PASSWORD", hide_env_values = true)]
        password: String,
        #[arg(long, default_value = DEMO_CLIENT_ID)]
        client_id: String,
    },
    /// Fetch health records and store a credential for each new one.
    Fetch,
    /// List stored credentials.
    Show,
    /// Mint a QR payload for a stored credential.
    Present {
        #[arg(long, value_enum, default_value = "anonymous")]
        mode: Mode,
        /// Claims to reveal, comma separated; default is every claim the mode allows.
        #[arg(long, value_delimiter = ',')]
        claims: Vec<String>,
        /// Index from `show`, credential id, or type (identity, test-result, vaccination).
        #[arg(long)]
        credential: Option<String>,
        /// Long-lived payload instead of the rotating one.
        #[arg(long = "static")]
        static_qr: bool,
        /// Write the payload here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a QR payload; exit 0 on accept, 5 on reject.
    Verify {
        /// Payload file, or `-` for stdin.
        payload: PathBuf,
        /// Ledger heads file from `heads-pull`.
        #[arg(long, conflicts_with = "offline")]
        heads: Option<PathBuf>,
        /// Skip the ledger check.
        #[arg(long)]
        offline: bool,
        /// Verification time (unix seconds).
        #[arg(long)]
        at: Option<i64>,
        /// Verifier type for the policy decision.
        #[arg(long)]
        verifier: Option<String>,
    },
    /// Download the ledger head history.
    HeadsPull {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, WalletError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|source| WalletError::Io { path: path.into(), source })?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|source| WalletError::Io { path: path.into(), source })
}

fn read_text(path: &Path) -> Result<String, WalletError> {
    String::from_utf8(read(path)?).map_err(|_| WalletError::Usage(format!("{} is not UTF-8", path.display())))
}

fn write(path: &Path, data: &[u8]) -> Result<(), WalletError> {
    std::fs::write(path, data).map_err(|source| WalletError::Io { path: path.into(), source })
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
    } else {
        print!("{}", text());
    }
}

fn run(cli: Cli) -> Result<u8, WalletError> {
    let config = match &cli.config {
        Some(p) => WalletConfig::load(p)?,
        None => WalletConfig::default(),
    };
    let server = cli.server.or(config.server).unwrap_or_else(|| DEFAULT_SERVER.into());
    let store = cli.store.or(config.store).unwrap_or_else(|| DEFAULT_STORE.into());
    let wallet = Wallet::new(&server, store, cli.passphrase);
    let json = cli.json;

    match cli.command {
        Command::Onboard { mrz, document, selfie } => {
            let out = wallet.onboard(&read_text(&mrz)?, &read(&document)?, &read(&selfie)?)?;
            emit(json, &out, || format!("onboarded {}\nidentity credential {} (ledger #{})\n", out.did, out.credential_id, out.ledger_seq));
        }
        Command::LinkEhr { username, password, client_id } => {
            let out = wallet.link_ehr(&username, &password, &client_id)?;
            emit(json, &out, || format!("linked patient {} until {}\n", out.patient_ref, out.expires_at));
        }
        Command::Fetch => {
            let out = wallet.fetch()?;
            emit(json, &out, || {
                format!(
                    "fetched {} observations ({} rejected), stored {} new credentials, {} total\n",
                    out.observations, out.rejected, out.issued, out.total
                )
            });
        }
        Command::Show => {
            let out = wallet.show()?;
            emit(json, &out, || out.iter().map(ToString::to_string).collect());
        }
        Command::Present { mode, claims, credential, static_qr, out } => {
            let opts = PresentOptions {
                mode: match mode {
                    Mode::Identified => PresentMode::Identified,
                    Mode::Anonymous => PresentMode::Anonymous,
                },
                claims,
                credential,
                qr: if static_qr { QrMode::Static } else { QrMode::Dynamic },
            };
            let minted = wallet.present(&opts)?;
            match &out {
                Some(path) => {
                    write(path, minted.payload.as_bytes())?;
                    emit(json, &minted, || format!("wrote {} byte payload to {} (expires {})\n", minted.size, path.display(), minted.exp));
                }
                None => emit(json, &minted, || format!("{}\n", minted.payload)),
            }
        }
        Command::Verify { payload, heads, offline, at, verifier } => {
            let source = match (heads, offline) {
                (_, true) => HeadsSource::Offline,
                (Some(p), false) => HeadsSource::Supplied(parse_heads(&read_text(&p)?).map_err(|e| WalletError::Usage(format!("{}: {e}", p.display())))?),
                (None, false) => HeadsSource::Server,
            };
            let verified = wallet.verify(&read_text(&payload)?, source, at, verifier)?;
            emit(json, &verified, || Verdict(&verified).to_string());
            if !verified.status.is_accept() {
                if !json {
                    eprintln!("rejected: {}", verified.status.reason.as_ref().map(reason_code).unwrap_or("unknown"));
                }
                return Ok(exit::VERIFY_REJECTED);
            }
        }
        Command::HeadsPull { out } => {
            let heads = wallet.heads_pull()?;
            let text = export_heads(&heads);
            match &out {
                Some(path) => {
                    write(path, text.as_bytes())?;
                    let hex: Vec<String> = heads.iter().map(|h| hex_head(&h.head)).collect();
                    emit(json, &serde_json::json!({ "heads": hex, "file": path }), || format!("wrote {} heads to {}\n", heads.len(), path.display()));
                }
                None => {
                    let hex: Vec<String> = heads.iter().map(|h| hex_head(&h.head)).collect();
                    emit(json, &serde_json::json!({ "heads": hex }), || text.clone());
                }
            }
        }
    }
    Ok(exit::OK)
}

fn hex_head(h: &[u8; 32]) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::FAILURE } else { exit::OK });
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if json {
                let body = serde_json::json!({ "error": e.code(), "detail": e.to_string(), "reasons": e.reasons() });
                eprintln!("{body}");
            } else {
                eprintln!("error: {}: {e}", e.code());
                if !e.reasons().is_empty() {
                    eprintln!("reasons: {}", e.reasons().join(", "));
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
