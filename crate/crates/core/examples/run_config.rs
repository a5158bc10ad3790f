//! Runs a study from a JSON config, as the `eplb` binary does.
//!
//! ```text
//! cargo run --release --example run_config -- configs/poisson_check.json poisson-check /tmp/eplb
//! ```

use std::path::PathBuf;

use eplb::study::{run_study, StudyConfig, StudyKind};

fn main() -> eplb::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/poisson_check.json").into());
    let kind: StudyKind = args.next().as_deref().unwrap_or("poisson-check").parse()?;
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("eplb-example"));

    let report = run_study(kind, &StudyConfig::load(config)?, &root, None)?;
    for c in report.summary["criteria"].as_array().into_iter().flatten() {
        println!("{} {}: {}", if c["passed"] == true { "PASS" } else { "FAIL" }, c["name"], c["measured"]);
    }
    println!("artifacts in {}", report.dir.display());
    std::process::exit(report.exit_code);
}
