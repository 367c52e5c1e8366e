mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Layer;

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "pdegnn", version, about = "PDE-inspired graph neural networks: train, sweep depths, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and append results to <out>/results.csv.
    Train(RunArgs),
    /// Train at every depth (default 2,4,8,16,32,64) and write a depth table.
    SweepDepth(RunArgs),
    /// Run the numerical verification suite; exits 1 on any failure.
    Verify(VerifyArgs),
    /// Validate a bundle and print its statistics.
    InspectBundle(InspectArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundle directory, or a name under $PDEGNN_DATA.
    #[arg(long)]
    dataset: Option<String>,
    /// gcn, advection, burgers, diffusion, wave, mix_ad or mix_aw.
    #[arg(long)]
    block: Option<String>,
    /// Depth or comma-separated depths.
    #[arg(long, value_name = "D[,D...]")]
    depth: Option<String>,
    /// Seed or comma-separated seeds.
    #[arg(long, value_name = "S[,S...]")]
    seed: Option<String>,
    /// Parallel training runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train in 64-bit floating point.
    #[arg(long)]
    f64: bool,
    /// Any other config key, e.g. --set lr=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn layer(&self) -> anyhow::Result<Layer> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
                Layer::parse(&text).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?
            }
            None => Layer::default(),
        };
        let mut cli = Layer::default();
        let flags = [
            ("dataset", self.dataset.clone()),
            ("block", self.block.clone()),
            ("depths", self.depth.clone()),
            ("seeds", self.seed.clone()),
            ("jobs", self.jobs.map(|j| j.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("f64", self.f64.then(|| "true".to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cli.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cli.set(k.trim(), v.trim()).map_err(|e| UsageError(format!("--set {kv}: {e}")))?;
        }
        Ok(file.merged(&cli))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    /// Flip the sign of h in advection steps.
    NegateAdvection,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Reduced trial counts.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a known defect; the suite is expected to fail.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Bundle directory, or a name under $PDEGNN_DATA.
    #[arg(long)]
    dataset: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run::train(&args),
        Command::SweepDepth(args) => run::sweep_depth(&args),
        Command::Verify(args) => run::verify(
            args.quick,
            args.seed,
            args.inject_fault.map(|f| match f {
                FaultArg::NegateAdvection => pdegnn_core::oracle::Fault::NegateAdvectionStep,
            }),
        ),
        Command::InspectBundle(args) => run::inspect(args.dataset.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<config::ConfigError>().is_some();
            ExitCode::from(if usage { EXIT_USAGE } else { 1 })
        }
    }
}
