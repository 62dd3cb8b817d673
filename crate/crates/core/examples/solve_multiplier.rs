//! Solves for the multiplier of a two-dimensional Chaplygin system.

use std::sync::Arc;

use nhk::geometry::Geometry;
use nhk::hamiltonize::{solve_2dof, Solve2DofOptions};

fn main() -> nhk::Result<()> {
    let g = Arc::new(Geometry::new(&nhk::systems::free_particle().def)?);
    let sol = solve_2dof(g, Solve2DofOptions::default())?;
    println!("compatibility defect {:.2e}", sol.compatibility);
    match &sol.symbolic {
        Some(e) => println!("f proportional to {e}"),
        None => println!("no closed form; tabulated"),
    }
    let f = sol.multiplier();
    for x in [-1.0, 0.0, 1.0] {
        println!("f({x}, 0) = {:.10}", f.value(&[x, 0.0])?);
    }
    Ok(())
}
