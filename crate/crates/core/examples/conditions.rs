//! Samples the Hamiltonization conditions for every builtin with a known multiplier.

use nhk::geometry::Geometry;
use nhk::hamiltonize::{check, SampleOptions};
use nhk::multiplier::MultiplierCandidate;

fn main() -> nhk::Result<()> {
    for entry in nhk::systems::all() {
        let Some(f) = &entry.multiplier else {
            println!("{:<18} no multiplier on the full system", entry.name);
            continue;
        };
        let g = Geometry::new(&entry.def)?;
        let cand = MultiplierCandidate::for_system(f, &entry.def)?;
        let report = check(&g, &cand, SampleOptions::default())?;
        println!(
            "{:<18} f = {:<18} {} max {:.2e}",
            entry.name, f.to_string(), report.condition_family, report.max_residual
        );
    }
    Ok(())
}
