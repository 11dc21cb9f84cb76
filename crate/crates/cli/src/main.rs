use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlsmooth_cli::{
    cmd_compare, cmd_eval, cmd_gen, cmd_partition, cmd_smooth, cmd_train, load_config, metrics_table, CliError,
    PartitionArgs, RunConfig, SmoothArgs,
};

/// Language-aware label smoothing toolkit.
///
/// Exit codes: 0 success, 2 usage, config or data error, 3 diverged training.
#[derive(Parser)]
#[command(name = "mlsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify joint-vocabulary tokens as source-only, common or target-only.
    Partition {
        /// Joint vocabulary, one token per line.
        #[arg(long)]
        joint: PathBuf,
        /// Source-side vocabulary.
        #[arg(long)]
        src: PathBuf,
        /// Target-side vocabulary.
        #[arg(long)]
        tgt: PathBuf,
        /// Comma-separated special tokens [default: <pad>,<bos>,<eos>,<unk>].
        #[arg(long)]
        special: Option<String>,
        /// Output partition TSV.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing output with different contents.
        #[arg(long)]
        force: bool,
    },
    /// Print the smoothed target distribution for one gold token.
    Smooth {
        /// Partition TSV.
        #[arg(long)]
        partition: PathBuf,
        /// Gold token.
        #[arg(long)]
        correct: String,
        /// Smoothing mass.
        #[arg(long)]
        alpha: f64,
        /// onehot, uniform, weighted or masked.
        #[arg(long)]
        mode: String,
        /// Weighted-mode class shares `target,common,source`; fractions like 1/3 are accepted.
        #[arg(long)]
        betas: Option<String>,
    },
    /// Print the default run config.
    Config,
    /// Generate the synthetic corpus into <out_dir>/data.
    Gen(RunArgs),
    /// Generate data if needed, train one model and write its report.
    Train(RunArgs),
    /// Evaluate the model of a trained run directory on dev and test.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Overwrite an existing report with different contents.
        #[arg(long)]
        force: bool,
    },
    /// Train every (spec, seed) cell of `compare_specs` x `compare_seeds`.
    Compare(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (TOML). Missing keys take defaults; see `mlsmooth config`.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs with different contents.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        load_config(&self.config, self.out.as_deref())
    }
}

fn summary(dir: &Path, r: &mlsmooth_toynmt::RunReport) -> String {
    format!("{} seed {} -> {}\n{}", r.label, r.seed, dir.display(), metrics_table(&r.dev))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Partition { joint, src, tgt, special, out, force } => cmd_partition(&PartitionArgs {
            joint: &joint,
            src: &src,
            tgt: &tgt,
            special: special.as_deref(),
            out: &out,
            force,
        }),
        Command::Smooth { partition, correct, alpha, mode, betas } => cmd_smooth(&SmoothArgs {
            partition: &partition,
            correct: &correct,
            alpha,
            mode: &mode,
            betas: betas.as_deref(),
        }),
        Command::Config => Ok(RunConfig::default().to_toml()),
        Command::Gen(args) => cmd_gen(&args.load()?, args.force),
        Command::Train(args) => {
            let cfg = args.load()?;
            let report = cmd_train(&cfg, args.force)?;
            Ok(summary(&cfg.out_dir, &report))
        }
        Command::Eval { run, force } => {
            let r = cmd_eval(&run, force)?;
            Ok(format!(
                "{} seed {}\n[dev]\n{}\n[test]\n{}",
                r.label,
                r.seed,
                metrics_table(&r.dev),
                metrics_table(&r.test)
            ))
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let report = cmd_compare(&cfg, args.force)?;
            let mut out = format!("spec\t{}", mlsmooth_toynmt::EvalMetrics::NAMES.join("\t"));
            for s in &report.summary {
                out.push_str(&format!("\n{}", s.label));
                for n in mlsmooth_toynmt::EvalMetrics::NAMES {
                    out.push_str(&format!("\t{:.4}", s.mean[n]));
                }
            }
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
