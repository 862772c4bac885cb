use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use femforge::driver;
use femforge::mesh::{generate_grid, save_mesh};
use femforge::verify;
use femforge::FemError;

#[derive(Parser)]
#[command(name = "femforge", version, about = "2D multiphysics FE batch runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a simulation config end to end.
    Run {
        config: PathBuf,
        /// Override the output directory named in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Suppress per-step progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Run a named verification suite ("all" for every suite).
    Verify { suite: String },
    /// Write a structured rectangular mesh as JSON.
    MeshGen {
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn exit_for(err: &FemError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        FemError::Solver(_) => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn print_criteria(suite: &str, criteria: &[verify::Criterion]) -> bool {
    let mut ok = true;
    for c in criteria {
        let rel = if c.lower_bound { ">=" } else { "<=" };
        println!(
            "[{}] {suite:>14} | {:<36} {:>12.4e} {rel} {:<9.1e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold,
        );
        ok &= c.pass;
    }
    ok
}

fn main() -> ExitCode {
    // worker cap honored for forward compatibility; assembly is sequential
    if let Ok(v) = std::env::var("FEMFORGE_THREADS") {
        if v.parse::<usize>().map(|n| n == 0).unwrap_or(true) {
            eprintln!("error: FEMFORGE_THREADS must be a positive integer");
            return ExitCode::from(2);
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output_dir,
            quiet,
        } => match driver::run(&config, output_dir.as_deref(), quiet) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
        Command::Verify { suite } => {
            let suites = if suite == "all" {
                match verify::run_all() {
                    Ok(s) => s,
                    Err(e) => return exit_for(&e),
                }
            } else {
                match verify::run_suite(&suite) {
                    Ok(c) => vec![(suite, c)],
                    Err(e) => return exit_for(&e),
                }
            };
            let mut ok = true;
            for (name, criteria) in &suites {
                ok &= print_criteria(name, criteria);
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::MeshGen {
            nx,
            ny,
            lx,
            ly,
            output,
        } => {
            let result = generate_grid(nx, ny, lx, ly).and_then(|m| save_mesh(&m, &output));
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => exit_for(&e),
            }
        }
    }
}
