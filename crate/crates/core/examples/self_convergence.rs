//! Grid and step refinement on small grids, printed as CSV.

use eplb::study::{self_convergence, ArtifactSink, StudyConfig};

fn main() -> eplb::error::Result<()> {
    let mut cfg = StudyConfig::from_json(include_str!("../configs/self_convergence.json"))?;
    cfg.grids = vec![24, 32, 40];
    if let Some(d) = cfg.density.as_mut() {
        d.ion.width = 1.1;
        d.electron.width = 1.0;
    }
    cfg.t_final = Some(0.25);
    let out = self_convergence(&cfg, &ArtifactSink::default())?;
    for table in &out.tables {
        print!("{}", table.to_csv());
    }
    if let Some(e) = &out.error {
        println!("run failed: {e}");
    }
    for c in &out.criteria {
        println!("{}: {:.3} ({})", c.name, c.measured, c.threshold);
    }
    Ok(())
}
