//! Reduces the snakeboard by its cyclic angle and Hamiltonizes the result.

use std::sync::Arc;

use nhk::geometry::Geometry;
use nhk::hamiltonize::{solve_2dof, SampleOptions, Solve2DofOptions};
use nhk::routh::{detect_cyclic, reduce, reduced_hamiltonize, Pb2Bracket};

fn main() -> nhk::Result<()> {
    let g = Arc::new(Geometry::new(&nhk::systems::snakeboard().def)?);
    let split = detect_cyclic(&g)?;
    println!("cyclic {:?}, excluded {:?}", split.names, split.excluded);
    let lambda = 0.5;
    let rs = Arc::new(reduce(g, split, &[lambda])?);
    let sol = solve_2dof(rs.clone(), Solve2DofOptions::default())?;
    println!("f = {}", sol.symbolic.as_ref().map(|e| e.to_string()).unwrap_or_default());
    let f = sol.multiplier();
    let pb = Pb2Bracket { rsys: &rs, f: f.as_ref() };
    for phi in [0.3, 0.8, 1.2] {
        let term = pb.table(&[0.0, phi])?.pp_shape[(0, 1)];
        println!("phi {phi}: {{P1, P2}} = {term:.10}, sec^2(phi) lambda = {:.10}", lambda / phi.cos().powi(2));
    }
    let h = reduced_hamiltonize(&rs, f.as_ref(), SampleOptions::default())?;
    println!("reduced verdict {:?}, Jacobiator {:.2e}", h.report.verdict, h.jacobiator);
    Ok(())
}
