//! Command-line front end for the `vmclass` pipeline.
//!
//! Subcommands cover the full workflow: `synthgen` and `ingest` produce
//! datasets, `balance` rebalances them, `train` runs the multi-seed
//! training protocol, `evaluate` scores a saved checkpoint, `select`
//! ranks migration candidates per host, and `report` rebuilds the
//! cross-run summary from per-run metrics.
//!
//! Option precedence, lowest to highest: built-in defaults, `--config`
//! file, the `VMCLASS_OUTPUT_DIR` environment variable (output root
//! only), command-line flags. Boolean flags only turn behavior on; to
//! keep a flag off, leave it out of both the file and the command line.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, OUTPUT_ENV};
use vmclass::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "vmclass",
    version,
    about = "Classify VM workloads and rank migration candidates"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic VM trace CSV
    Synthgen(SynthgenArgs),
    /// Parse, clean and encode a trace into datasets
    Ingest(IngestArgs),
    /// Rebalance class counts in an encoded dataset
    Balance(BalanceArgs),
    /// Prepare data, train across seeds and write reports
    Train(TrainArgs),
    /// Score a saved checkpoint on one split of a dataset
    Evaluate(EvaluateArgs),
    /// Rank migration candidates per host under a policy
    Select(SelectArgs),
    /// Rebuild the cross-run summary from per-run metrics
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Configuration file: key=value lines under [section] headers
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root; overrides $VMCLASS_OUTPUT_DIR and the config file
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let env = std::env::var(OUTPUT_ENV).ok();
        let mut cfg = RunConfig::from_sources(self.config.as_deref(), env.as_deref())?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn set<T>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

#[derive(Args, Debug)]
struct SynthgenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Rows to generate (default 2000)
    #[arg(long)]
    n: Option<usize>,
    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of Interactive rows, exclusive (0, 1)
    #[arg(long)]
    ratio: Option<f64>,
    /// Probability of flipping a row's category label
    #[arg(long)]
    noise: Option<f64>,
}

impl SynthgenArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.load()?;
        set(&mut cfg.synthetic_n, self.n.map(Some));
        set(&mut cfg.synthetic_seed, self.seed);
        set(&mut cfg.synthetic_ratio, self.ratio);
        set(&mut cfg.synthetic_noise, self.noise);
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trace CSV to ingest; omitted: generate a synthetic trace
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Drop malformed rows instead of aborting
    #[arg(long)]
    skip_bad_rows: bool,
    /// Synthetic trace size when --input is omitted
    #[arg(long)]
    synthetic_n: Option<usize>,
    /// Synthetic trace seed
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Synthetic Interactive fraction, exclusive (0, 1)
    #[arg(long)]
    synthetic_ratio: Option<f64>,
    /// Synthetic label-flip probability
    #[arg(long)]
    synthetic_noise: Option<f64>,
}

impl IngestArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.load()?;
        set(&mut cfg.input, self.input.clone().map(Some));
        if self.skip_bad_rows {
            cfg.skip_bad_rows = true;
        }
        set(&mut cfg.synthetic_n, self.synthetic_n.map(Some));
        set(&mut cfg.synthetic_seed, self.synthetic_seed);
        set(&mut cfg.synthetic_ratio, self.synthetic_ratio);
        set(&mut cfg.synthetic_noise, self.synthetic_noise);
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct BalanceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Encoded dataset CSV (default <output>/ingest/encoded.csv)
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Balance method: none, smote, rus, ros
    #[arg(long)]
    method: Option<String>,
    /// SMOTE neighbor count
    #[arg(long)]
    smote_k: Option<usize>,
    /// Balance seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Encoded dataset CSV (default <output>/ingest/encoded.csv)
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Balance method: none, smote, rus, ros
    #[arg(long)]
    method: Option<String>,
    /// SMOTE neighbor count
    #[arg(long)]
    smote_k: Option<usize>,
    /// Balance seed
    #[arg(long)]
    balance_seed: Option<u64>,
    /// Train fraction
    #[arg(long)]
    train_frac: Option<f64>,
    /// Validation fraction
    #[arg(long)]
    val_frac: Option<f64>,
    /// Test fraction
    #[arg(long)]
    test_frac: Option<f64>,
    /// Split shuffle seed
    #[arg(long)]
    split_seed: Option<u64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Dropout rate in [0, 1)
    #[arg(long)]
    dropout: Option<f64>,
    /// Number of seeded runs
    #[arg(long)]
    n_runs: Option<usize>,
    /// First run seed; run i uses base_seed + i
    #[arg(long)]
    base_seed: Option<u64>,
    /// Drop the encoded id columns before training
    #[arg(long)]
    drop_id_features: bool,
    /// Fit normalization statistics on the train split only
    #[arg(long)]
    train_only_normalization: bool,
    /// Balance only the train split, after splitting
    #[arg(long)]
    train_only_smote: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.load()?;
        set(&mut cfg.balance, self.method.clone());
        set(&mut cfg.smote_k, self.smote_k);
        set(&mut cfg.balance_seed, self.balance_seed);
        set(&mut cfg.train_frac, self.train_frac);
        set(&mut cfg.val_frac, self.val_frac);
        set(&mut cfg.test_frac, self.test_frac);
        set(&mut cfg.split_seed, self.split_seed);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.lr, self.lr);
        set(&mut cfg.dropout, self.dropout);
        set(&mut cfg.n_runs, self.n_runs);
        set(&mut cfg.base_seed, self.base_seed);
        if self.drop_id_features {
            cfg.drop_id_features = true;
        }
        if self.train_only_normalization {
            cfg.train_only_normalization = true;
        }
        if self.train_only_smote {
            cfg.train_only_smote = true;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to score (default <output>/train/runs/run-<base_seed>/checkpoint.bin)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Processed dataset CSV (default <output>/train/processed.csv)
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Split to score: train, val or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Seed naming the default checkpoint's run directory
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Host snapshot CSV
    #[arg(value_name = "HOSTS_CSV")]
    hosts: PathBuf,
    /// Selection policy (see `select --help` for the list)
    #[arg(long)]
    policy: Option<String>,
    /// Seed for the random policy
    #[arg(long)]
    seed: Option<u64>,
    /// Correlation target: others_sum or host_total
    #[arg(long)]
    correlation_target: Option<String>,
    /// Checkpoint for classifier_first (default <output>/train/runs/run-<base_seed>/checkpoint.bin)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Seed naming the default checkpoint's run directory
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of run-<seed> outputs (default <output>/train/runs)
    #[arg(long, value_name = "DIR")]
    runs_dir: Option<PathBuf>,
}

/// Parse `argv` and run the selected subcommand. Help and version requests
/// print and succeed; any other parse failure is a configuration error.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    match cli.cmd {
        Cmd::Synthgen(args) => commands::cmd_synthgen(&args.config()?),
        Cmd::Ingest(args) => commands::cmd_ingest(&args.config()?),
        Cmd::Balance(args) => {
            let mut cfg = args.common.load()?;
            set(&mut cfg.balance, args.method.clone());
            set(&mut cfg.smote_k, args.smote_k);
            set(&mut cfg.balance_seed, args.seed);
            commands::cmd_balance(&cfg, args.input.as_deref())
        }
        Cmd::Train(args) => commands::cmd_train(&args.config()?, args.input.as_deref()),
        Cmd::Evaluate(args) => {
            let mut cfg = args.common.load()?;
            set(&mut cfg.base_seed, args.base_seed);
            commands::cmd_evaluate(
                &cfg,
                args.checkpoint.as_deref(),
                args.dataset.as_deref(),
                &args.split,
            )
        }
        Cmd::Select(args) => {
            let mut cfg = args.common.load()?;
            set(&mut cfg.policy, args.policy.clone());
            set(&mut cfg.select_seed, args.seed);
            set(&mut cfg.correlation_target, args.correlation_target.clone());
            set(&mut cfg.base_seed, args.base_seed);
            commands::cmd_select(&cfg, &args.hosts, args.checkpoint.as_deref())
        }
        Cmd::Report(args) => {
            let cfg = args.common.load()?;
            commands::cmd_report(&cfg, args.runs_dir.as_deref())
        }
    }
}
