//! Invariant measure densities and the sleigh's missing measure.

use nhk::geometry::Geometry;
use nhk::hamiltonize::{divergence_sampled, measure_density, SampleOptions};
use nhk::multiplier::MultiplierCandidate;

fn main() -> nhk::Result<()> {
    for name in ["free_particle", "iliyev", "chaplygin_sleigh"] {
        let entry = nhk::systems::get(name)?;
        let g = Geometry::new(&entry.def)?;
        let f = entry.multiplier.clone().expect("known multiplier");
        let density = measure_density(&f, g.m());
        let cand = MultiplierCandidate::for_system(&density, &entry.def)?;
        let report = divergence_sampled(&g, &cand, SampleOptions::default().with_tol(1e-6))?;
        println!("{name:<18} N = {density:<14} max |div| {:.2e} {:?}", report.max_residual, report.verdict);
    }
    Ok(())
}
