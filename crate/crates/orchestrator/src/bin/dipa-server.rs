use std::path::PathBuf;

use clap::Parser;
use dipa_orchestrator::ServerConfig;

/// Digital immunity passport workflow server.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML configuration file; `DIPA_*` variables override it.
    #[arg(short, long, env = "DIPA_CONFIG")]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let config = ServerConfig::load(args.config.as_deref())?;
    if args.print_config {
        println!("{}", toml::to_string_pretty(&config)?);
        return Ok(());
    }
    dipa_orchestrator::server::serve(config).await?;
    Ok(())
}
