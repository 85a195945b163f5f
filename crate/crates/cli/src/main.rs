use std::path::PathBuf;
use std::process::ExitCode;

use biasbench_cli::config::{Layout, RunConfig};
use biasbench_cli::{pipeline, report, CliError};
use biasbench_core::attrib::Method;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biasbench", version, about = "Measure data bias in image classifiers with attribution maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the biased dataset and its unbiased reference.
    Synth(Args),
    /// Train networks on both datasets.
    Train(Args),
    /// Compute attribution maps for correctly predicted evaluation images.
    Attribute(Args),
    /// Score the maps and write the result tables.
    Evaluate(Args),
    /// Compare biased and unbiased networks and write the report.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Root for artifact directories not set in the config.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Comma-separated subset of gradcam, scorecam, ig, lrp.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(names) = &args.methods {
        let methods = names
            .iter()
            .map(|n| n.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.into()))?;
        cfg.aopc_methods = cfg.aopc_methods.map(|a| a.into_iter().filter(|m| methods.contains(m)).collect());
        cfg.methods = methods;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: &Command) -> Result<(), CliError> {
    let (Command::Synth(args)
    | Command::Train(args)
    | Command::Attribute(args)
    | Command::Evaluate(args)
    | Command::Report(args)) = command;
    let cfg = load(args)?;
    let layout = Layout::new(&cfg, &args.out);
    match command {
        Command::Synth(_) => pipeline::synth(&cfg, &layout)?,
        Command::Train(_) => pipeline::train(&cfg, &layout)?,
        Command::Attribute(_) => {
            let m = pipeline::attribute(&cfg, &layout)?;
            eprintln!("wrote {} maps", m.entries.len());
        }
        Command::Evaluate(_) => {
            let e = pipeline::evaluate(&cfg, &layout)?;
            if !e.summary.zero_mass_maps.is_empty() {
                eprintln!("{} maps had zero relevance and were skipped", e.summary.zero_mass_maps.len());
            }
        }
        Command::Report(_) => {
            let r = report::report(&cfg, &layout.results)?;
            let rejected = r.ttests.iter().filter(|t| t.reject).count();
            eprintln!("{rejected} of {} cells differ at alpha {}", r.ttests.len(), r.alpha);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
