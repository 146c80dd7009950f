use std::process::ExitCode;

use clap::Parser;
use feedcap_cli::{run, Cli};
use serde_json::json;

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = fail("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.summary);
            match report.failure {
                Some(e) => fail(e.kind(), e.to_string()),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
