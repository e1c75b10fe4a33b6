use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcsim::adversary::Fault;
use pcsim::harness::{self, Overrides};
use pcsim::protocols::ProtocolKind;
use pcsim::Error;

/// Privacy-preserving consensus simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// |lambda2|, left eigenvector and minimum bit budget of a network.
    Spectral {
        /// Network or experiment file.
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One protocol run with the eavesdropper analysis.
    Run {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// BICC over a list of bit widths.
    SweepBits {
        #[command(flatten)]
        exp: Experiment,
        /// Comma-separated bit widths.
        #[arg(long, value_delimiter = ',', required = true)]
        bits: Vec<u32>,
    },
    /// Built-in invariant checks on canned instances.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct Experiment {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    protocol: Option<ProtocolKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Experiment {
    fn load(&self, bits: Option<u32>) -> pcsim::Result<harness::LoadedConfig> {
        let mut loaded = harness::load_config(&self.config)?;
        Overrides {
            protocol: self.protocol,
            bits,
            gamma: self.gamma,
            horizon: self.horizon,
            trials: self.trials,
            seed: self.seed,
            out: self.out.clone(),
        }
        .apply(&mut loaded.config);
        Ok(loaded)
    }
}

fn execute(cmd: Command) -> pcsim::Result<u8> {
    match cmd {
        Command::Spectral { config, out } => {
            let loaded = harness::load_config(&config)?;
            let summary = harness::cmd_spectral(&loaded.network)?;
            let text = serde_json::to_string_pretty(&summary).expect("plain data serializes");
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(0)
        }
        Command::Run { exp, bits } => {
            let loaded = exp.load(bits)?;
            let outcome = harness::cmd_run(&loaded)?;
            outcome.write_to(&loaded.config.out)?;
            for b in &outcome.breaches {
                eprintln!("invariant breach: {b}");
            }
            Ok(u8::from(!outcome.breaches.is_empty()))
        }
        Command::SweepBits { exp, bits } => {
            let loaded = exp.load(None)?;
            let outcome = harness::cmd_sweep_bits(&loaded, &bits)?;
            outcome.write_to(&loaded.config.out)?;
            let failed = outcome.rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} of {} bit widths failed, see sweep.csv", outcome.rows.len());
            }
            Ok(0)
        }
        Command::Verify { inject_fault } => {
            let fault = if inject_fault { Fault::FlipCrossTerm } else { Fault::None };
            let checks = harness::cmd_verify(fault)?;
            print!("{}", harness::format_checks(&checks));
            Ok(u8::from(!checks.iter().all(|c| c.passed)))
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("PCSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("PCSIM_THREADS must be a positive integer, got \"{v}\"")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| execute(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
