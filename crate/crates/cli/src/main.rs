use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastmap::harness::{
    emit_curves, evaluate_probe, run_experiment_with, run_oracle, ExperimentConfig, HarnessError, OracleTask, Probe, ProbeSpec,
};

#[derive(Parser)]
#[command(name = "fastmap", version, about = "Train and probe fast-mapping agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, or only `--seed`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Print a progress line every this many updates (0 = never).
        #[arg(long, default_value_t = 50)]
        progress: u64,
    },
    /// Evaluate a checkpoint on a probe with frozen weights.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, object-count:N, novel-objects, category-extension, k:K,
        /// capacity:M, fast-put or corridor.
        #[arg(long)]
        probe: String,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Sample actions instead of taking the most likely one.
        #[arg(long)]
        stochastic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate the metrics of every run below a directory.
    Curves {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the scripted oracle on a named task or a config file.
    Oracle {
        /// room, corridor, fast-put, slow-learning, slow-put,
        /// category-extension, or a path to a config file.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        /// Pick a uniformly random object instead of the named one.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::parse(&std::fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed, progress } => {
            let config = load_config(&config)?;
            let seeds = match seed {
                Some(s) => vec![s],
                None => config.seeds.clone(),
            };
            for s in seeds {
                let summary = run_experiment_with(&config, s, |m| {
                    if progress > 0 && m.step % progress == 0 {
                        let acc = m.accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
                        eprintln!("seed={s} step={} env_steps={} accuracy={acc} recon={:.3}", m.step, m.env_steps, m.loss.recon);
                    }
                })?;
                let acc = summary.final_accuracy.map(|a| a.to_string()).unwrap_or_default();
                println!(
                    "seed={s} dir={} env_steps={} updates={} final_accuracy={acc} checkpoint={}",
                    summary.dir.display(),
                    summary.env_steps,
                    summary.updates,
                    summary.final_checkpoint.display()
                );
            }
        }
        Command::Probe { checkpoint, probe, episodes, stochastic, seed } => {
            let probe: Probe = probe.parse()?;
            let ps = ProbeSpec { probe, episodes, greedy: !stochastic, seed };
            let e = evaluate_probe(&checkpoint, &ps)?;
            println!("probe={probe} accuracy={} se={} successes={} episodes={}", e.accuracy, e.se, e.successes, e.episodes);
        }
        Command::Curves { dir } => {
            let out = emit_curves(&dir)?;
            println!("curves={}", out.display());
        }
        Command::Oracle { task, episodes, random, seed } => {
            let config = match task.parse::<OracleTask>() {
                Ok(t) => t.config(),
                Err(e) if !Path::new(&task).is_file() => return Err(e),
                Err(_) => load_config(Path::new(&task))?,
            };
            let e = run_oracle(&config, episodes, seed, random)?;
            let policy = if random { "random-selection" } else { "oracle" };
            println!("task={task} policy={policy} accuracy={} se={} successes={} episodes={}", e.accuracy, e.se, e.successes, e.episodes);
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
