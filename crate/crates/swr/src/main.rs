use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use swr_core::suites::{self, Fault, Scope};

use swr::config::{parse_seeds, resolve, Overrides, PartialRunConfig};
use swr::datagen::{write_synth, SynthJob};
use swr::harness::{load_run_report, threads_from_env, train_eval, RunOptions};
use swr::report::render_table;
use swr::{Error, Result};

#[derive(Parser)]
#[command(name = "swr", version, about = "Surgical workflow recognition benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one model over several seeds.
    TrainEval {
        /// TOML run config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// frame-mlp, clip-conv, gru or mstcn.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Comma-separated, default 0,1,2.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_overwrite: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Bundled config name (internal-7, external-10) or a TOML file.
        #[arg(long, default_value = "internal-7")]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_overwrite: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// ops, losses, models or all.
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Render a comparison table from finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainEval {
            config,
            manifest,
            model,
            epochs,
            lr,
            seeds,
            out,
            no_overwrite,
        } => {
            let file = match &config {
                Some(p) => PartialRunConfig::load(p)?,
                None => PartialRunConfig::default(),
            };
            let cfg = resolve(
                file,
                Overrides {
                    model,
                    manifest,
                    seeds: seeds.map(|s| parse_seeds(&s)).transpose().map_err(|e| Error::Invalid(vec![e]))?,
                    out,
                    epochs,
                    lr,
                },
            )?;
            let opts = RunOptions {
                no_overwrite,
                threads: threads_from_env()?,
                verbose: true,
            };
            let report = train_eval(&cfg, &opts)?;
            print!("{}", render_table(std::slice::from_ref(&report)));
            Ok(())
        }
        Command::Synth {
            config,
            out,
            seed,
            no_overwrite,
        } => {
            let mut job = SynthJob::load(&config)?;
            if let Some(s) = seed {
                job.dataset.seed = s;
            }
            let s = write_synth(&job, &out, no_overwrite)?;
            println!(
                "{} videos ({} train, {} test, test frame fraction {:.4}) written to {}",
                s.videos,
                s.train_videos,
                s.test_videos,
                s.test_frame_fraction,
                out.display()
            );
            if let Some(b) = s.bound {
                println!("frame-wise bound: all {:.6}, train {:.6}, test {:.6}", b.all, b.train, b.test);
            }
            Ok(())
        }
        Command::Gradcheck { scope, inject_fault } => {
            let scope: Scope = scope.parse()?;
            let fault = inject_fault.map(|f| f.parse::<Fault>()).transpose()?;
            let mut failed = Vec::new();
            for unit in suites::units(scope) {
                let start = Instant::now();
                let r = suites::run_unit(unit, fault)?;
                let status = if r.pass { "ok".to_string() } else { "FAILED".to_string() };
                let at = match (&r.worst, r.pass) {
                    (Some((seed, c)), false) => format!(" at seed {seed}, {}[{}]", c.param, c.index),
                    _ => String::new(),
                };
                println!(
                    "{:<14} max rel err {:.3e} (tol {:.0e}, {} checks, {:.2}s) {status}{at}",
                    r.unit,
                    r.max_rel_err,
                    r.tolerance,
                    r.checks,
                    start.elapsed().as_secs_f64()
                );
                if !r.pass {
                    failed.push(format!("{}{at}", r.unit));
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Verification(format!("gradient check failed for {}", failed.join("; "))))
            }
        }
        Command::Report { runs } => {
            let reports = runs.iter().map(|r| load_run_report(r)).collect::<Result<Vec<_>>>()?;
            print!("{}", render_table(&reports));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
