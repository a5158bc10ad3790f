//! Bipolar runs at decreasing ε against the electron limit, in memory.

use eplb::grid::GridSpec;
use eplb::study::{epsilon_sweep, ArtifactSink, StudyConfig};

fn main() -> eplb::error::Result<()> {
    let text = include_str!("../configs/epsilon_sweep.json");
    let mut cfg = StudyConfig::from_json(text)?;
    cfg.grid = GridSpec::new(2.0, 24)?;
    cfg.t_final = Some(0.3);
    let out = epsilon_sweep(&cfg, &ArtifactSink::default())?;
    for table in &out.tables {
        print!("{}", table.to_csv());
    }
    for (k, v) in &out.fits {
        println!("{k}: slope {}", v["slope"]);
    }
    Ok(())
}
