use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predserve_bench::{run_experiment, BenchConfig, EXPERIMENTS};

#[derive(Parser)]
#[command(name = "bench", about = "Prediction-server experiments, written as CSV")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment, or `all`.
    Run {
        experiment: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// TOML overriding experiment parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List experiments.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::List => {
            for (name, about) in EXPERIMENTS {
                println!("{name:<22} {about}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Run { experiment, seed, out, config } => {
            let cfg = match config.as_deref().map(BenchConfig::load).transpose() {
                Ok(c) => c.unwrap_or_default(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let names: Vec<&str> =
                if experiment == "all" { EXPERIMENTS.iter().map(|(n, _)| *n).collect() } else { vec![experiment.as_str()] };
            let mut ok = true;
            for name in names {
                let report = match run_experiment(name, &cfg, seed) {
                    Ok(r) => r,
                    Err(e) => {
                        eprintln!("error: {name}: {e}");
                        return ExitCode::from(2);
                    }
                };
                match report.write_csv(&out) {
                    Ok(files) => {
                        for f in files {
                            println!("wrote {}", f.display());
                        }
                    }
                    Err(e) => {
                        eprintln!("error: writing {}: {e}", out.display());
                        return ExitCode::from(2);
                    }
                }
                for c in &report.checks {
                    let verdict = if c.pass { "PASS" } else { "FAIL" };
                    println!("{verdict} {name} {}: {:.4} (want {})", c.name, c.value, c.bound);
                }
                ok &= report.passed();
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
