use std::process::ExitCode;

use clap::Parser;

use iic_cli::{exit_code, init_workers, run, Cli, EXIT_FAIL, EXIT_PASS};

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers();
    match run(&cli.command) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            if let Some(m) = &report.manifest {
                println!("manifest: {}", m.display());
            }
            ExitCode::from(if report.passed { EXIT_PASS } else { EXIT_FAIL } as u8)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
