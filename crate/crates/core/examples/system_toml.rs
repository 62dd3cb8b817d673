//! Prints a builtin system as a TOML definition.
//!
//! cargo run --example system_toml -- snakeboard

fn main() -> nhk::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "free_particle".into());
    let entry = nhk::systems::get(&name)?;
    print!("{}", entry.def.to_toml());
    Ok(())
}
