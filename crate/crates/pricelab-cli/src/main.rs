use clap::{Parser, Subcommand};
use pricelab::experiments::{exit_code, list_experiments, load_config, run_with_threads, EXIT_CONFIG};
use pricelab::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pricelab", version, about = "Config-driven pricing and error-budget experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment config and write <name>.csv and <name>.json
    Run {
        config: PathBuf,
        /// Override the seed in the config
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results do not depend on this)
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (default: the config's `output`, else ./out)
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the experiment registry as JSON
    List,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::List => {
            println!("{}", serde_json_pretty(&list_experiments()));
            ExitCode::SUCCESS
        }
        Cmd::Run { config, seed, threads, out_dir } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
            let res = run_with_threads(&cfg, threads);
            let code = exit_code(&res);
            match &res {
                Ok(out) => {
                    let dir = out_dir.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
                    if let Err(e) = out.write(&cfg, &dir) {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_CONFIG as u8);
                    }
                    for c in &out.checks {
                        println!("{} {}: {} (target {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.target);
                    }
                    println!("wrote {}", dir.join(format!("{}.{{csv,json}}", cfg.name)).display());
                }
                Err(e @ Error::Infeasible { .. }) => eprintln!("infeasible: {e}"),
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(code as u8)
        }
    }
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}
