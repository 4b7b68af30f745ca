use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dides_cli::output::write_error;
use dides_cli::{run, Cli, Settings};
use serde_json::json;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            let files: Vec<&str> = summary.files.iter().map(|f| f.file.as_str()).collect();
            let report = json!({
                "status": "ok",
                "command": summary.command.name(),
                "out_dir": summary.out_dir,
                "files": files,
            });
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let out = Settings::resolve(&cli.flags)
                .map(|s| s.out_dir)
                .unwrap_or_else(|_| cli.flags.out.clone().unwrap_or_else(|| PathBuf::from("out")));
            write_error(&out, &err);
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
