//! `qsource <study> --config <file> [--out <dir>] [--threads N]`
//!
//! Exit status: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 numerical abort, 4 inconclusive analysis.

mod config;
mod output;
mod studies;

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use config::{Config, Study};
use output::{plot_script, write_atomic, DirLock};

#[derive(Parser, Debug)]
#[command(name = "qsource", version, about = "Rank-one quantum particle source studies")]
struct Cli {
    /// Study to run.
    #[arg(value_enum)]
    study: Study,
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<NonZeroUsize>,
}

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

fn exit_code(e: &qsource_core::Error) -> u8 {
    use qsource_core::Error::*;
    if e.is_inconclusive() {
        EXIT_INCONCLUSIVE
    } else if matches!(e, Contract(_) | GridMismatch(_) | Empty(_)) {
        EXIT_INVALID
    } else {
        EXIT_NUMERICAL
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let src = match std::fs::read_to_string(&cli.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("qsource: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let out = cli.out.as_ref().map(|p| p.to_string_lossy().into_owned());
    let cfg = match config::load(&src, cli.study, out.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("qsource: {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.get()).build_global() {
            eprintln!("qsource: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_IO);
        }
    }
    match execute(&cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qsource: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn execute(cfg: &Config) -> std::io::Result<u8> {
    let dir = Path::new(&cfg.output.dir);
    std::fs::create_dir_all(dir)?;
    let _lock = DirLock::acquire(dir)?;
    let start = Instant::now();
    let outcome = studies::run(cfg);
    let wall = start.elapsed().as_secs_f64();

    let mut written = Vec::new();
    let (code, status, message) = match &outcome {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("qsource: warning: {w}");
            }
            for (name, body) in &report.files {
                write_atomic(dir, name, body)?;
                written.push(name.clone());
            }
            if cfg.output.plot && !report.files.is_empty() {
                write_atomic(dir, "plot.gp", &plot_script(cfg.study))?;
                written.push("plot.gp".to_string());
            }
            match &report.inconclusive {
                Some(msg) => {
                    eprintln!("qsource: inconclusive: {msg}");
                    (EXIT_INCONCLUSIVE, "inconclusive", Some(msg.clone()))
                }
                None => (0, "ok", None),
            }
        }
        Err(e) => {
            eprintln!("qsource: {e}");
            let code = exit_code(e);
            let status = match code {
                EXIT_INCONCLUSIVE => "inconclusive",
                EXIT_INVALID => "invalid",
                _ => "numerical_abort",
            };
            (code, status, Some(e.to_string()))
        }
    };
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "study": cfg.study,
        "status": status,
        "exit_code": code,
        "message": message,
        "files": written,
        "threads": rayon::current_num_threads(),
        "wall_time_seconds": wall,
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(std::io::Error::other)? + "\n";
    write_atomic(dir, "run.json", &text)?;
    Ok(code)
}
