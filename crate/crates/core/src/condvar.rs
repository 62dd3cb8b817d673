//! The variational Lagrangian of an abelian Chaplygin system and its almost Euler-Lagrange flow.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{LdaFlow, Trajectory, VectorField};
use crate::expr::{Compiled, Expr};
use crate::geometry::{checked_inverse, Geometry};
use crate::multiplier::{nonzero, Multiplier, MultiplierCandidate};
use crate::system::{ExprMatrix, Kind, SystemDef};
use crate::{Error, Result};

/// Name of the quasivelocity conjugate to `coord`.
pub fn omega_name(coord: &str) -> String {
    format!("w_{coord}")
}

/// L_V(q, ω) together with its compiled derivatives.
pub struct VariationalLagrangian {
    pub coords: Vec<String>,
    pub omegas: Vec<String>,
    /// 𝓛(q, ω) = L(q, f ω)
    pub scaled: Expr,
    /// φ^a(q, ω) = f (ω_a + A^a_α ω^α)
    pub constraints: Vec<Expr>,
    pub lv: Expr,
    pub f: MultiplierCandidate,
    m: usize,
    f_c: Compiled,
    phi_c: Vec<Compiled>,
    lv_c: Compiled,
    dq: Vec<Compiled>,
    hess: Vec<Vec<Compiled>>,
    mixed: Vec<Vec<Compiled>>,
}

fn quad_form(g: &ExprMatrix, u: &[Expr], v: &[Expr]) -> Expr {
    let mut terms = Vec::new();
    for i in 0..g.rows {
        for j in 0..g.cols {
            let e = g.get(i, j);
            if !e.is_zero() {
                terms.push(e.clone().mul(u[i].clone()).mul(v[j].clone()));
            }
        }
    }
    Expr::sum(terms)
}

/// Builds L_V = 𝓛 − (1/f)(∂𝓛/∂ω^a) φ^a.
pub fn build_variational(sys: &SystemDef, f: &MultiplierCandidate) -> Result<VariationalLagrangian> {
    if sys.kind != Kind::Chaplygin || !sys.structure.is_abelian() {
        return Err(Error::Config("the variational Lagrangian needs an abelian Chaplygin system".into()));
    }
    if f.depends_on_group() {
        return Err(Error::Config("the multiplier must not depend on the group".into()));
    }
    let (m, k) = (sys.m(), sys.k());
    let bind = |mat: &ExprMatrix| mat.map(|e| sys.bind_parameters(e));
    let (g_rr, g_ar, g_aa, conn) = (bind(&sys.g_shape), bind(&sys.g_mixed), bind(&sys.g_group), bind(&sys.connection));
    let coords: Vec<String> = sys.coordinate_names().iter().map(|s| s.to_string()).collect();
    let omegas: Vec<String> = coords.iter().map(|c| omega_name(c)).collect();
    let fe = f.expr.clone();
    let vel: Vec<Expr> = omegas.iter().map(|w| fe.clone().mul(Expr::var(w))).collect();
    let (vr, va) = vel.split_at(m);
    let kinetic = Expr::sum([
        quad_form(&g_rr, vr, vr).scale(0.5),
        quad_form(&g_ar, va, vr),
        quad_form(&g_aa, va, va).scale(0.5),
    ]);
    let scaled = kinetic.sub(sys.bind_parameters(&sys.potential));
    let constraints: Vec<Expr> = (0..k)
        .map(|a| {
            let shape = Expr::sum((0..m).map(|al| conn.get(a, al).clone().mul(Expr::var(&omegas[al]))));
            fe.clone().mul(Expr::var(&omegas[m + a]).add(shape))
        })
        .collect();
    let correction = Expr::sum((0..k).map(|a| scaled.diff(&omegas[m + a]).mul(constraints[a].clone())));
    let lv = scaled.clone().sub(correction.div(fe.clone()));

    let mut names: Vec<&str> = coords.iter().map(String::as_str).collect();
    names.extend(omegas.iter().map(String::as_str));
    let n = coords.len();
    let dq = coords.iter().map(|c| lv.diff(c).compile(&names)).collect::<Result<_>>()?;
    let dw: Vec<Expr> = omegas.iter().map(|w| lv.diff(w)).collect();
    let hess = (0..n)
        .map(|i| omegas.iter().map(|w| dw[i].diff(w).compile(&names)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mixed = (0..n)
        .map(|i| coords.iter().map(|c| dw[i].diff(c).compile(&names)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let lvf = VariationalLagrangian {
        f_c: fe.compile(&names)?,
        phi_c: constraints.iter().map(|c| c.compile(&names)).collect::<Result<_>>()?,
        lv_c: lv.compile(&names)?,
        coords,
        omegas,
        scaled,
        constraints,
        lv,
        f: f.clone(),
        m,
        dq,
        hess,
        mixed,
    };
    lvf.check_group_hessian(sys)?;
    Ok(lvf)
}

impl VariationalLagrangian {
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// g̃_{ab} = ∂²𝓛/∂ω^a∂ω^b must be invertible on the sampled configurations.
    fn check_group_hessian(&self, sys: &SystemDef) -> Result<()> {
        let n = self.n();
        let k = n - self.m;
        let mut names: Vec<&str> = self.coords.iter().map(String::as_str).collect();
        names.extend(self.omegas.iter().map(String::as_str));
        let g: Vec<Vec<Compiled>> = (0..k)
            .map(|a| {
                let da = self.scaled.diff(&self.omegas[self.m + a]);
                (0..k)
                    .map(|b| da.diff(&self.omegas[self.m + b]).compile(&names))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let bx = crate::hamiltonize::config_box(sys);
        for q in bx.halton(50, 0) {
            let mut x = q.clone();
            x.extend(vec![0.0; n]);
            let mat = DMatrix::from_fn(k, k, |a, b| g[a][b].eval(&x).unwrap_or(f64::NAN));
            if checked_inverse(&mat, "g~").is_err() {
                return Err(Error::NotConditionallyVariational(format!("g~_ab is singular at {q:?}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.lv_c.eval(x)
    }

    /// φ^a at (q, ω).
    pub fn constraint_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.phi_c.iter().map(|c| c.eval(x)).collect()
    }

    /// Sets the group quasivelocities so that φ = 0; returns the state and the size of the change.
    pub fn project(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.n();
        let mut out = x.to_vec();
        let fv = self.f_c.eval(x)?;
        let phi = self.constraint_values(x)?;
        let mut moved: f64 = 0.0;
        for (a, p) in phi.iter().enumerate() {
            let d = p / fv;
            out[n + self.m + a] -= d;
            moved = moved.max(d.abs());
        }
        Ok((out, moved))
    }

    /// f φ^a at (q, ω).
    pub fn conserved(&self, x: &[f64]) -> Result<Vec<f64>> {
        let fv = self.f_c.eval(x)?;
        Ok(self.constraint_values(x)?.iter().map(|p| fv * p).collect())
    }

    pub fn state_names(&self) -> Vec<String> {
        self.coords.iter().chain(&self.omegas).cloned().collect()
    }
}

/// q̇ = f ω with d/dt(∂L_V/∂ω) = f ∂L_V/∂q solved for ω̇.
pub struct AlmostElFlow<'a> {
    pub lv: &'a VariationalLagrangian,
}

impl VectorField for AlmostElFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.lv.n()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lv = self.lv;
        let n = lv.n();
        let fv = lv.f_c.eval(x)?;
        if fv == 0.0 {
            return Err(Error::MultiplierVanishes(x[..n].to_vec()));
        }
        let h = DMatrix::from_fn(n, n, |i, j| lv.hess[i][j].eval(x).unwrap_or(f64::NAN));
        let (hinv, _) = checked_inverse(&h, "omega Hessian of L_V")?;
        let qdot: Vec<f64> = x[n..].iter().map(|w| fv * w).collect();
        let rhs = DVector::from_fn(n, |i, _| {
            let dq = lv.dq[i].eval(x).unwrap_or(f64::NAN);
            let mix: f64 = (0..n).map(|j| lv.mixed[i][j].eval(x).unwrap_or(f64::NAN) * qdot[j]).sum();
            fv * dq - mix
        });
        let wdot = hinv * rhs;
        let mut out = qdot;
        out.extend(wdot.iter());
        Ok(out)
    }
}

/// Max over the trajectory of |f φ^a − (f φ^a)(0)|.
pub fn constraint_conservation(lv: &VariationalLagrangian, traj: &Trajectory) -> Result<f64> {
    let c0 = lv.conserved(&traj.states[0])?;
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        for (a, c) in lv.conserved(s)?.iter().enumerate() {
            worst = worst.max((c - c0[a]).abs());
        }
    }
    Ok(worst)
}

/// Nonholonomic flow of an abelian Chaplygin system on (r, g, p̃) with ġ = −A ṙ.
pub struct ConfigurationFlow<'a> {
    pub geom: &'a Geometry,
}

impl VectorField for ConfigurationFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.geom.m() + self.geom.k()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (m, k) = (self.geom.m(), self.geom.k());
        let lda = LdaFlow {
            geom: self.geom,
            group: x[m..m + k].to_vec(),
        };
        let mut red = x[..m].to_vec();
        red.extend_from_slice(&x[m + k..]);
        let d = lda.eval(&red)?;
        let a = self.geom.blocks(&x[..m + k])?.a;
        let mut out = d[..m].to_vec();
        out.extend((0..k).map(|i| -(0..m).map(|al| a[(i, al)] * d[al]).sum::<f64>()));
        out.extend_from_slice(&d[m..]);
        Ok(out)
    }
}

/// (q, q̇) from a configuration-flow state (r, g, p̃).
pub fn configuration_velocities(geom: &Geometry, x: &[f64]) -> Result<Vec<f64>> {
    let (m, k) = (geom.m(), geom.k());
    let q = &x[..m + k];
    let b = geom.blocks(q)?;
    let (inv, _) = checked_inverse(&geom.kinetic(q)?.full, "kinetic")?;
    let rdot = inv * DVector::from_column_slice(&x[m + k..]);
    let mut out = q.to_vec();
    out.extend(rdot.iter());
    out.extend((0..k).map(|i| -(0..m).map(|al| b.a[(i, al)] * rdot[al]).sum::<f64>()));
    Ok(out)
}

/// Configuration-flow state from (q, q̇) satisfying the constraints.
pub fn configuration_state(geom: &Geometry, qv: &[f64]) -> Result<Vec<f64>> {
    let (m, k) = (geom.m(), geom.k());
    let q = &qv[..m + k];
    let p = geom.kinetic(q)?.full * DVector::from_column_slice(&qv[m + k..m + k + m]);
    let mut out = q.to_vec();
    out.extend(p.iter());
    Ok(out)
}

/// (q, ω) ↦ (q, f ω).
pub fn velocities_from_quasi(f: &dyn Multiplier, n: usize, x: &[f64]) -> Result<Vec<f64>> {
    let (fv, _) = nonzero(f, &x[..n])?;
    Ok(x.iter().enumerate().map(|(i, v)| if i < n { *v } else { fv * v }).collect())
}
