#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dipa_orchestrator::{ServerConfig, ServerHandle};

pub const PASS: &str = "correct horse battery staple";
pub const ORIGIN: &str = "https://dipa.test";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct Server {
    pub handle: ServerHandle,
    pub data: PathBuf,
    pub secrets: PathBuf,
    dirs: Vec<tempfile::TempDir>,
}

impl Server {
    pub fn start_with(adjust: impl FnOnce(&mut ServerConfig)) -> Self {
        let data = tempfile::tempdir().unwrap();
        let secrets = tempfile::tempdir().unwrap();
        let external = tempfile::tempdir().unwrap();
        let authority = external.path().join("authority.txt");
        std::fs::write(&authority, "L898902C3 confirmed\n").unwrap();
        let policy = external.path().join("policy.txt");
        std::fs::write(&policy, "allow verifier=stadium credential=TestResult result=negative max_age=30d\ndeny verifier=stadium\n").unwrap();
        let mut c = ServerConfig::default();
        c.bind = "127.0.0.1:0".into();
        c.data_dir = data.path().into();
        c.secrets_dir = secrets.path().into();
        c.authority_file = Some(authority);
        c.policy_file = Some(policy);
        c.origin = ORIGIN.into();
        c.ledger.max_age_ms = 100;
        adjust(&mut c);
        let handle = dipa_orchestrator::spawn(c).unwrap();
        Self { handle, data: data.path().into(), secrets: secrets.path().into(), dirs: vec![data, secrets, external] }
    }

    pub fn start() -> Self {
        Self::start_with(|_| {})
    }

    pub fn url(&self) -> String {
        self.handle.url()
    }

    /// Stops the server and hands back its directories.
    pub fn stop(self) -> Vec<tempfile::TempDir> {
        self.handle.shutdown();
        self.dirs
    }
}

/// A wallet binary bound to one store file and server.
pub struct Cli {
    pub store: PathBuf,
    pub server: String,
    pub dir: tempfile::TempDir,
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    fn from(o: Output) -> Self {
        Self {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into(),
            stderr: String::from_utf8_lossy(&o.stderr).into(),
        }
    }

    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout: {}\nstderr: {}", self.stdout, self.stderr);
        self
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

impl Cli {
    pub fn new(server: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        Self { store: dir.path().join("wallet.dipa"), server: server.into(), dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn command(&self, passphrase: Option<&str>, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_wallet"));
        cmd.env_clear()
            .env("DIPA_SERVER", &self.server)
            .env("DIPA_WALLET_STORE", &self.store)
            .args(args);
        if let Some(p) = passphrase {
            cmd.env("DIPA_WALLET_PASSPHRASE", p);
        }
        cmd
    }

    pub fn run_as(&self, passphrase: Option<&str>, args: &[&str]) -> Run {
        Run::from(self.command(passphrase, args).output().unwrap())
    }

    pub fn run(&self, args: &[&str]) -> Run {
        self.run_as(Some(PASS), args)
    }

    pub fn onboard(&self, mrz: &str, selfie: &str) -> Run {
        let (m, d, s) = (fixture(mrz), fixture("portrait.png"), fixture(selfie));
        self.run(&["onboard", "--mrz", m.to_str().unwrap(), "--document", d.to_str().unwrap(), "--selfie", s.to_str().unwrap()])
    }

    pub fn link(&self) -> Run {
        self.run(&["link-ehr", "--username", "anna.eriksson", "--password", "portal-pass-4821"])
    }
}

/// Every file under `dir`, recursively.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}
