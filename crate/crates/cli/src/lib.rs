//! Reproducible command-line runs over the reference model, the quantized
//! engine and the accelerator simulator. Every run emits a [`RunManifest`].

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod render;

use std::io::Write;
use std::time::Instant;

pub use args::{Cli, Command};
pub use commands::{Outcome, Run};
pub use error::{CliError, Result};
pub use manifest::RunManifest;

/// Runs one parsed command, printing its output. Returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    match dispatch(&cli.command) {
        Ok(mut run) => {
            run.manifest.wall_time_s = start.elapsed().as_secs_f64();
            let dest = cli.manifest.clone().or(run.manifest_path.take());
            let written = match dest {
                Some(path) => run.manifest.write(&path),
                None => {
                    let line = serde_json::to_string(&run.manifest).expect("manifest serializes");
                    eprintln!("{line}");
                    Ok(())
                }
            };
            match written {
                Ok(()) => run.outcome.exit_code(),
                Err(e) => report_error(&e),
            }
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CliError) -> i32 {
    eprintln!("{}", e.to_json());
    1
}

fn dispatch(cmd: &Command) -> Result<Run> {
    let mut out = std::io::stdout().lock();
    let print = |out: &mut std::io::StdoutLock<'_>, s: &str| {
        // A closed pipe is not worth failing the run over.
        let _ = out.write_all(s.as_bytes());
    };
    match cmd {
        Command::Init(a) => commands::init(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Eval(a) => {
            let (run, metrics) = commands::eval(a)?;
            let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
            print(&mut out, &(json + "\n"));
            Ok(run)
        }
        Command::CheckEquivalence(a) => {
            let (run, eq) = commands::check_equivalence(a)?;
            print(&mut out, &eq.text);
            Ok(run)
        }
        Command::Simulate(a) => {
            let (run, sim) = commands::simulate_cmd(a)?;
            print(&mut out, &sim.stdout);
            eprint!("{}", sim.stderr);
            Ok(run)
        }
    }
}
