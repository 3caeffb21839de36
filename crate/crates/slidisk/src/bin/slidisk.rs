//! Command-line front end.
//!
//! `slidisk <subcommand> --config <path> --out <dir> [--seed N] [--threads N]`
//!
//! Exit codes: 0 success, 2 config/validation error, 3 numerical failure
//! (diagnostics written to `<out>/diagnostics.txt`). The `SLIDISK_THREADS`
//! environment variable overrides the thread count; results are
//! byte-identical at any thread count.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use slidisk::config::RunConfig;
use slidisk::run::{execute, RunError, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "slidisk",
    about = "Langevin sliding-disk simulations, statistics, and controllability checks"
)]
struct Args {
    /// simulate | msd | gibbs-check | control | jacobian | noise-sample | tube
    subcommand: String,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores; also SLIDISK_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();

    let sub = match Subcommand::parse(&args.subcommand) {
        Some(s) => s,
        None => {
            eprintln!(
                "unknown subcommand `{}` (expected simulate, msd, gibbs-check, control, \
                 jacobian, noise-sample, or tube)",
                args.subcommand
            );
            return ExitCode::from(2);
        }
    };

    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match RunConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed.master_seed = seed;
    }

    let threads = args.threads.or_else(|| {
        std::env::var("SLIDISK_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n.max(1));
        }
        match builder.build() {
            Ok(p) => p,
            Err(e) => {
                eprintln!("cannot build thread pool: {e}");
                return ExitCode::from(2);
            }
        }
    };

    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("cannot create output dir {}: {e}", args.out.display());
        return ExitCode::from(2);
    }

    match pool.install(|| execute(sub, &cfg)) {
        Ok(out) => {
            for (name, bytes) in &out.artifacts {
                let path = args.out.join(name);
                if let Err(e) = fs::write(&path, bytes) {
                    eprintln!("cannot write {}: {e}", path.display());
                    return ExitCode::from(3);
                }
            }
            println!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            if matches!(e, RunError::Numerical(_)) {
                let _ = fs::write(args.out.join("diagnostics.txt"), format!("{e}\n"));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
