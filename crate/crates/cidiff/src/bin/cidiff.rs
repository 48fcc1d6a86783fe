//! Command-line front end: seeded paired experiments, checkpoint
//! evaluation, one-off sampling, plot-data export, and the invariant suite.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration error, 3 runtime or
//! numeric failure, 4 invariant-suite failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cidiff::cli::{
    evaluate_checkpoint, export_plot_data, run_experiment, run_invariant_checks, CliError,
    RunConfig, SampleMethod,
};
use cidiff::diffusion::{cosine_alpha_bar, ScoreNet};
use cidiff::evaluation::MetricsReport;
use cidiff::numkit::Prng;
use cidiff::sampling::{ddim_sample, ddim_sample_clipped, SampleCond};
use cidiff::world::ConditionVector;

#[derive(Parser)]
#[command(
    name = "cidiff",
    version,
    about = "Paired diffusion experiments with an independence-regularized arm"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train baseline and regularized arms, sample both, and evaluate.
    Run {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one checkpoint (of this run or another) under a config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to load; cross-run checkpoints are flagged, not refused.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write eval.csv and eval_report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one conditional cloud from a checkpoint.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Attribute value codes, comma separated (e.g. "1,1").
        #[arg(long)]
        tuple: String,
        /// Compose the tuple from single-attribute conditions instead of
        /// conditioning on it directly.
        #[arg(long)]
        composed: bool,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export plot-ready CSV panels from a completed run directory.
    ExportPlots {
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
    },
    /// Run the fast numerical invariant suite.
    Check,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = seed {
        cfg.trainer.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let artifacts = run_experiment(&cfg)?;
            println!("run complete: {}", artifacts.dir.display());
            println!("{}", MetricsReport::csv_header());
            println!("{}", artifacts.vanilla.csv_row("vanilla"));
            println!("{}", artifacts.coind.csv_row("coind"));
            Ok(())
        }
        Cmd::Eval {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed, None)?;
            let eval = evaluate_checkpoint(&cfg, &checkpoint, out.as_deref())?;
            println!("{}", MetricsReport::csv_header());
            println!("{}", eval.report.csv_row("eval"));
            println!(
                "checkpoint {} the evaluating config",
                if eval.hash_match {
                    "matches"
                } else {
                    "was trained under a different config than"
                }
            );
            Ok(())
        }
        Cmd::Sample {
            config,
            checkpoint,
            tuple,
            composed,
            n,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed, None)?;
            sample_to_csv(&cfg, &checkpoint, &tuple, composed, n, &out)
        }
        Cmd::ExportPlots { run_dir } => {
            let written = export_plot_data(&run_dir)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Cmd::Check => {
            let reports = run_invariant_checks();
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{} {} — {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                if !r.passed {
                    failed.push(r.name);
                }
            }
            if failed.is_empty() {
                println!("all {} checks passed", reports.len());
                Ok(())
            } else {
                Err(CliError::Acceptance(failed.join(", ")))
            }
        }
    }
}

fn parse_tuple(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|e| {
                CliError::Config(format!("bad tuple component {s:?}: {e}"))
            })
        })
        .collect()
}

fn sample_to_csv(
    cfg: &RunConfig,
    checkpoint: &PathBuf,
    tuple_text: &str,
    composed: bool,
    n: usize,
    out: &PathBuf,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("need at least one sample".into()));
    }
    let tuple = parse_tuple(tuple_text)?;
    let (_, _, full_space) = cfg.world.build()?;
    if tuple.len() != full_space.n_attrs() {
        return Err(CliError::Config(format!(
            "tuple has {} components, the space has {} attributes",
            tuple.len(),
            full_space.n_attrs()
        )));
    }
    for (attr, &code) in tuple.iter().enumerate() {
        if code >= full_space.cardinality(attr) {
            return Err(CliError::Config(format!(
                "code {code} is out of range for attribute {attr}"
            )));
        }
    }
    let (net, _, _) = ScoreNet::load(checkpoint)?;
    let schedule = cosine_alpha_bar(net.t_max())?;
    let cond = if composed {
        let parts = tuple
            .iter()
            .enumerate()
            .map(|(attr, &code)| ConditionVector::single(tuple.len(), attr, code))
            .collect();
        SampleCond::ComposedAnd {
            parts,
            gamma: cfg.sampler.gamma,
        }
    } else {
        SampleCond::Plain(ConditionVector::from_tuple(&tuple))
    };
    if cfg.sampler.method == SampleMethod::Langevin {
        eprintln!("note: one-off sampling always uses the deterministic denoiser");
    }
    let steps = cfg.sampler.steps.min(net.t_max());
    let mut rng = Prng::seed(cfg.trainer.seed).derive(21);
    let cloud = match cfg.sampler.clip {
        Some(clip) => ddim_sample_clipped(&net, &cond, &schedule, steps, n, clip, &mut rng)?,
        None => ddim_sample(&net, &cond, &schedule, steps, n, &mut rng)?,
    };
    let mut f = File::create(out).map(BufWriter::new)?;
    let header: Vec<String> = (0..cloud.ncols()).map(|c| format!("x{c}")).collect();
    writeln!(f, "{}", header.join(","))?;
    for row in cloud.rows() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}
