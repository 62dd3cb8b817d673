//! Parses, differentiates and compiles an expression.

use nhk::expr::{equivalent, parse};

fn main() -> nhk::Result<()> {
    let e = parse("(1 + x^2)^(-1/2) * sin(y)")?;
    let dx = e.diff("x");
    println!("f      = {e}");
    println!("df/dx  = {dx}");
    let want = parse("-x*sin(y)*(1 + x^2)^(-3/2)")?;
    println!("closed form agrees: {}", equivalent(&dx, &want));
    let compiled = dx.compile(&["x", "y"])?;
    println!("df/dx(0.5, 1) = {:.12}", compiled.eval(&[0.5, 1.0])?);
    Ok(())
}
