//! Builds the variational Lagrangian of the vertical disk and checks its flow.

use nhk::condvar::{build_variational, constraint_conservation, AlmostElFlow};
use nhk::dynamics::integrate;
use nhk::multiplier::MultiplierCandidate;

fn main() -> nhk::Result<()> {
    let def = nhk::systems::vertical_disk().def;
    let lv = build_variational(&def, &MultiplierCandidate::constant(1.0, &def))?;
    println!("L_V = {}", nhk::expr::Canonical::of(&lv.lv).to_expr());
    let n = lv.n();
    let mut x0 = vec![0.0; 2 * n];
    x0[n..n + 2].copy_from_slice(&[0.7, -0.4]);
    let (x0, moved) = lv.project(&x0)?;
    println!("initial data moved by {moved:.3} onto the constraints");
    let traj = integrate(&AlmostElFlow { lv: &lv }, lv.state_names(), &x0, 0.0, 10.0, 1e-3, None)?.ensure_complete()?;
    println!("constraint drift over t = 10: {:.2e}", constraint_conservation(&lv, &traj)?);
    Ok(())
}
