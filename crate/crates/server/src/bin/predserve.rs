use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use predserve_core::sim::SyntheticModelSpec;
use predserve_core::InputType;
use predserve_server::container::{serve_forever, ContainerModel, ContainerOptions, LinearThreshold, NoopModel, SyntheticModel};
use predserve_server::{start, ServerOptions};

#[derive(Parser)]
#[command(name = "predserve", version, about = "Low-latency prediction serving")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the serving core.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a reference model container.
    Container {
        #[command(subcommand)]
        cmd: ContainerCmd,
    },
}

#[derive(Subcommand)]
enum ContainerCmd {
    Serve(ContainerArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Noop,
    Linear,
    Synthetic,
}

#[derive(clap::Args)]
struct ContainerArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Address of the core's container port, host:port.
    #[arg(long)]
    core: String,
    #[arg(long)]
    name: String,
    #[arg(long, default_value = "bytes")]
    input_type: InputType,
    #[arg(long, default_value_t = 1)]
    version: u32,
    /// JSON file: a synthetic model spec, or `{"weights": [...], "bias": b}` for `linear`.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
struct LinearSpec {
    weights: Vec<f64>,
    #[serde(default)]
    bias: f64,
}

fn read_spec<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>, String> {
    let Some(p) = path else { return Ok(None) };
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map(Some).map_err(|e| format!("{}: {e}", p.display()))
}

fn container(args: ContainerArgs) -> Result<(), String> {
    let core_addr: SocketAddr = args
        .core
        .to_socket_addrs()
        .map_err(|e| format!("--core {}: {e}", args.core))?
        .next()
        .ok_or_else(|| format!("--core {} resolves to nothing", args.core))?;
    let model: Box<dyn ContainerModel> = match args.model {
        ModelKind::Noop => Box::new(NoopModel),
        ModelKind::Linear => {
            let s: LinearSpec = read_spec(&args.spec)?.ok_or("--model linear needs --spec")?;
            Box::new(LinearThreshold { weights: s.weights, bias: s.bias })
        }
        ModelKind::Synthetic => {
            let s: SyntheticModelSpec = read_spec(&args.spec)?.unwrap_or_default();
            s.validate().map_err(|e| e.to_string())?;
            Box::new(SyntheticModel::new(s))
        }
    };
    let opts = ContainerOptions { core_addr, name: args.name, version: args.version, input_type: args.input_type };
    serve_forever(model, &opts);
    Ok(())
}

async fn serve(config: PathBuf) -> Result<(), String> {
    let opts = ServerOptions::from_file(&config).map_err(|e| e.to_string())?;
    let server = start(opts).await.map_err(|e| e.to_string())?;
    println!("http on {}, containers on {}", server.http_addr, server.container_addr);
    tokio::signal::ctrl_c().await.map_err(|e| e.to_string())?;
    server.shutdown().await;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve { config } => tokio::runtime::Runtime::new().map_err(|e| e.to_string()).and_then(|rt| rt.block_on(serve(config))),
        Cmd::Container { cmd: ContainerCmd::Serve(args) } => container(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
