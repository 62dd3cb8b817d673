//! Fits log f as a combination of basis terms.

use nhk::expr::parse;
use nhk::geometry::Geometry;
use nhk::hamiltonize::{fit_ansatz, SampleOptions};

fn main() -> nhk::Result<()> {
    let g = Geometry::new(&nhk::systems::iliyev().def)?;
    let basis = [parse("log(cos(q1))")?, parse("q1^2")?, parse("q2")?];
    let fit = fit_ansatz(&g, &basis, SampleOptions::default())?;
    for (b, c) in basis.iter().zip(&fit.coefficients) {
        println!("{c:+.6} * {b}");
    }
    println!("f = {}", fit.multiplier.expr);
    println!("verdict {:?}", fit.report.verdict);
    Ok(())
}
