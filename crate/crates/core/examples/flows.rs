//! Integrates the nonholonomic and Hamiltonized flows of the free particle and compares them.

use nhk::dynamics::{compare, energy_monitor, integrate, state_names, HamiltonizedFlow, LdaFlow, StateMap};
use nhk::geometry::Geometry;
use nhk::multiplier::{Multiplier, MultiplierCandidate};

fn main() -> nhk::Result<()> {
    let entry = nhk::systems::free_particle();
    let g = Geometry::new(&entry.def)?;
    let f = MultiplierCandidate::parse("(1+x^2)^(-1/2)", &entry.def)?;
    let x0 = [0.5, 0.0, 1.0, 0.5];
    let lda = LdaFlow::new(&g);
    let a = integrate(&lda, state_names(&g, "p"), &x0, 0.0, 10.0, 1e-3, None)?.ensure_complete()?;
    let hf = HamiltonizedFlow::new(&g, &f)?;
    let rate = |x: &[f64]| f.value(&x[..2]);
    let b = integrate(&hf, state_names(&g, "P"), &hf.from_original(&x0)?, 0.0, 10.0, 1e-3, Some(&rate))?
        .ensure_complete()?;
    let map = StateMap::MomentaScaleByF { f: &f, m: 2, group: hf.group.clone() };
    println!("energy drift      {:.2e}", energy_monitor(&a, &|x| lda.energy(x))?);
    println!("max deviation     {:.2e}", compare(&a, &b, &map)?);
    println!("tau at t = 10     {:.6}", b.tau.as_ref().map_or(f64::NAN, |t| t[t.len() - 1]));
    let mut csv = Vec::new();
    b.write_csv(&mut csv).expect("writing to memory");
    for line in String::from_utf8_lossy(&csv).lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
