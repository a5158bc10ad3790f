//! Gap between the truncated and the full reference-flow gradient as N grows.

use eplb::burgers::BurgersInitial;
use eplb::study::truncation_gradient_gap;

fn main() -> eplb::error::Result<()> {
    let u0 = BurgersInitial::linear([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]], [0.2, -0.1, 0.05]);
    for t in [0.0, 1.0, 4.0] {
        let gaps: Vec<String> = [4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|&n| truncation_gradient_gap(&u0, t, n, 20).map(|g| format!("{g:.6}")))
            .collect::<Result<_, _>>()?;
        println!("t = {t}: {}", gaps.join("  "));
    }
    Ok(())
}
