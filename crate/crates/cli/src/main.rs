use std::process::ExitCode;

use causal_pvar_cli::{run, Cell, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(tables) => {
            for t in &tables {
                if t.name == "verify_summary" {
                    for row in &t.rows {
                        if let (Cell::Str(name), Some(Cell::Bool(pass))) = (&row[0], row.last()) {
                            eprintln!("{name}: {}", if *pass { "pass" } else { "FAIL" });
                        }
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
