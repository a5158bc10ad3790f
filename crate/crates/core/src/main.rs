use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use eplb::study::{resolve_output_root, run_study, StudyConfig, StudyKind};

/// Run an Euler–Poisson study from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "eplb", version)]
struct Cli {
    /// burgers-check, poisson-check, decay-study, epsilon-sweep,
    /// truncation-study or self-convergence
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Output root; the study writes into <out>/<kind>. Overrides EPLB_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = || -> eplb::error::Result<i32> {
        let kind: StudyKind = cli.kind.parse()?;
        let config = StudyConfig::load(&cli.config)?;
        let env = std::env::var_os("EPLB_OUT");
        let root = resolve_output_root(cli.out.as_deref(), env.as_deref(), &config);
        let report = run_study(kind, &config, &root, cli.threads)?;
        if let Some(criteria) = report.summary["criteria"].as_array() {
            for c in criteria {
                let verdict = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                println!("{verdict} {} measured={} ({})", c["name"].as_str().unwrap_or(""), c["measured"], c["threshold"].as_str().unwrap_or(""));
            }
        }
        if let Some(e) = report.summary["error"].as_str() {
            eprintln!("error: {e}");
        }
        println!("summary: {}", report.dir.join("summary.json").display());
        Ok(report.exit_code)
    };
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
