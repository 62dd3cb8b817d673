//! Jacobiators of the free particle's bracket before and after the multiplier.

use nhk::brackets::{max_jacobiator, NonholonomicBracket, TransformedBracket};
use nhk::geometry::Geometry;
use nhk::multiplier::MultiplierCandidate;

fn main() -> nhk::Result<()> {
    let entry = nhk::systems::free_particle();
    let g = Geometry::new(&entry.def)?;
    let f = MultiplierCandidate::parse("(1+x^2)^(-1/2)", &entry.def)?;
    let nh = NonholonomicBracket { geom: &g, group: vec![0.0] };
    let tb = TransformedBracket { geom: &g, f: &f, group: vec![0.0], poisson_only: true };
    for x in [0.0, 0.5, 1.0, 2.0] {
        let state = [x, 0.3, 0.7, -0.4];
        println!(
            "x = {x:<4} nonholonomic {:.6}  hamiltonized {:.2e}",
            max_jacobiator(&nh, &state)?,
            max_jacobiator(&tb, &state)?
        );
    }
    Ok(())
}
