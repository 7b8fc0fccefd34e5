use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tslab::diagnostics::{alignment_report, read_matrix, residual_acf, AlignmentOptions, DEFAULT_K, DEFAULT_MAX_LAG};
use tslab::harness::{compare_variants, residual_diagnostics, run_experiment, tally_dir, ExperimentConfig};
use tslab::zoo::{pretrain_checkpoint, PretrainConfig, VariantKind};

#[derive(Parser)]
#[command(name = "tslab", version, about = "Ablate language-model backbones on time-series tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, test and diagnose one configuration
    Run {
        config: PathBuf,
        /// Print the result JSON instead of the table
        #[arg(long)]
        json: bool,
    },
    /// Run several variants on the same data and tally wins
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "llm,random,linear,att,trans,nollm")]
        variants: Vec<String>,
    },
    /// Durbin-Watson and ACF of residual columns
    Diagnose {
        #[arg(long)]
        residuals: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
        max_lag: usize,
    },
    /// Alignment metrics between series and text token clouds
    Align {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        alt: Option<PathBuf>,
        #[arg(short, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Win counts over every result.json under a directory
    Tally { dir: PathBuf },
    /// Pretrain a small checkpoint for the llm variant
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 128)]
        positions: usize,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.apply_env()?;
    Ok(cfg)
}

fn diagnose(residuals: &Path, max_lag: usize) -> Result<String> {
    let m = read_matrix(residuals)?;
    if m.ncols() == 0 {
        bail!("{} has no residual columns", residuals.display());
    }
    // one sequence per column
    let report = if m.ncols() == 1 {
        residual_acf(&m.column(0).to_vec(), max_lag)?
    } else {
        residual_diagnostics(&m.t().to_owned(), m.ncols(), 1, max_lag)?
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, json } => {
            let cfg = load_config(&config)?;
            let r = run_experiment(&cfg)?;
            if json {
                println!("{}", r.to_json());
            } else {
                print!("{}", r.render());
            }
            eprintln!("wrote {}", cfg.output_dir.join(tslab::harness::RESULT_FILE).display());
        }
        Command::Compare { config, variants } => {
            let cfg = load_config(&config)?;
            let kinds = variants
                .iter()
                .map(|v| VariantKind::parse(v.trim()))
                .collect::<tslab::Result<Vec<_>>>()?;
            print!("{}", compare_variants(&cfg, &kinds)?.render());
        }
        Command::Diagnose { residuals, max_lag } => println!("{}", diagnose(&residuals, max_lag)?),
        Command::Align { pre, post, text, alt, k, seed } => {
            let alt = alt.map(|p| read_matrix(&p)).transpose()?;
            let opts = AlignmentOptions {
                k,
                seed,
                ..Default::default()
            };
            let report = alignment_report(&read_matrix(&pre)?, &read_matrix(&post)?, &read_matrix(&text)?, alt.as_ref(), opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Tally { dir } => print!("{}", tally_dir(&dir)?.render()),
        Command::Pretrain {
            out,
            width,
            depth,
            heads,
            positions,
            steps,
            seed,
        } => {
            let cfg = PretrainConfig {
                width,
                depth,
                heads,
                positions,
                steps,
                seed,
                seq_len: positions.min(PretrainConfig::default().seq_len),
                ..Default::default()
            };
            let report = pretrain_checkpoint(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
