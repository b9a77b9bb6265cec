//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{random_tap_profile, save_tap_trace, synth_tap_profile, test_tap_specs, train_tap_specs, ChannelError};
use crate::harness::{run_f_sweep, run_regimes, run_sweep, selftest, write_results_csv, write_sweep_csv, ExperimentConfig, HarnessError, Regime};

#[derive(Parser, Debug)]
#[command(name = "metarx", version, about = "Online-adaptive deep receiver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One trial per configured regime at a single SNR and seed.
    Run(RunArgs),
    /// Final BER over every configured SNR and seed.
    Sweep(CommonArgs),
    /// Final BER of the meta regime over meta-update frequencies.
    Fsweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated meta-update periods in blocks.
        #[arg(long = "f", value_delimiter = ',', required = true)]
        frequencies: Vec<usize>,
    },
    /// Write a synthetic tap trace as CSV.
    GenTaps {
        /// Number of taps.
        #[arg(long = "L")]
        memory: usize,
        /// Number of blocks.
        #[arg(long = "J")]
        blocks: usize,
        #[arg(long)]
        out: PathBuf,
        /// Oscillating profile used for pilots rather than data.
        #[arg(long, conflicts_with = "random")]
        train: bool,
        /// Independent uniform taps per block.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tap trace for the trace scenarios.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    snr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Comma-separated regimes (joint, online, meta, modular_meta).
    #[arg(long, value_delimiter = ',')]
    regimes: Vec<String>,
    #[arg(long)]
    pilot_blocks: Option<usize>,
    #[arg(long)]
    data_blocks: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ChannelError> for Failure {
    fn from(e: ChannelError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::read(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &args.trace {
        cfg.trace = Some(t.clone());
    }
    if !args.snr.is_empty() {
        cfg.snr_db = args.snr.clone();
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if !args.regimes.is_empty() {
        cfg.regimes = args
            .regimes
            .iter()
            .map(|r| Regime::parse(r).ok_or_else(|| Failure::Config(format!("unknown regime {r:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(n) = args.pilot_blocks {
        cfg.pilot_blocks = n;
    }
    if let Some(n) = args.data_blocks {
        cfg.data_blocks = n;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => {
            let cfg = load_config(&args.common)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let outcomes = run_regimes(&cfg, cfg.snr_db[0], seed)?;
            write_results_csv(output(args.common.out.as_deref())?, &outcomes)?;
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            let rows = run_sweep(&cfg)?;
            write_sweep_csv(output(args.out.as_deref())?, &rows)?;
        }
        Command::Fsweep { common, frequencies } => {
            let cfg = load_config(&common)?;
            let rows = run_f_sweep(&cfg, &frequencies)?;
            write_sweep_csv(output(common.out.as_deref())?, &rows)?;
        }
        Command::GenTaps {
            memory,
            blocks,
            out,
            train,
            random,
            seed,
        } => {
            if memory == 0 || blocks == 0 {
                return Err(Failure::Config("--L and --J must be positive".into()));
            }
            let profile = if random {
                random_tap_profile(memory, blocks, &mut ChaCha8Rng::seed_from_u64(seed))?
            } else if train {
                synth_tap_profile(&train_tap_specs(memory), blocks)?
            } else {
                synth_tap_profile(&test_tap_specs(memory), blocks)?
            };
            save_tap_trace(&profile, &out)?;
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(Failure::Runtime("self-test failed".into()));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}
