//! Flows, fixed-step integration and trajectory comparison.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use crate::brackets::ReducedState;
use crate::brackets::{bracket_from, transformed_components, BracketKind};
use crate::geometry::{checked_inverse, Geometry};
use crate::multiplier::{nonzero, Multiplier};
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-3;

/// An autonomous vector field.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F> VectorField for (usize, F)
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.1)(x)
    }
}

/// h(r, p̃) = ½ p̃ᵀ𝔾⁻¹p̃ + V with gradient (∂h/∂r, ∂h/∂p̃).
pub fn hamiltonian(geom: &Geometry, q: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (_, inv, dk, dv, v) = geom.kinetic_with_partials(q)?;
    let pv = DVector::from_column_slice(p);
    let vel = &inv * &pv;
    let h = 0.5 * pv.dot(&vel) + v;
    let dr = dk
        .iter()
        .zip(&dv)
        .map(|(d, dvc)| -0.5 * vel.dot(&(d * &vel)) + dvc)
        .collect();
    Ok((h, dr, vel.as_slice().to_vec()))
}

/// Lagrange-d'Alembert flow ẋ = Π∇h on (r, p̃_α, p̃_i).
pub struct LdaFlow<'a> {
    pub geom: &'a Geometry,
    pub group: Vec<f64>,
}

impl<'a> LdaFlow<'a> {
    pub fn new(geom: &'a Geometry) -> LdaFlow<'a> {
        LdaFlow {
            geom,
            group: vec![0.0; geom.k()],
        }
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        let m = self.geom.m();
        let q = self.geom.point(&x[..m], &self.group);
        Ok(hamiltonian(self.geom, &q, &x[m..])?.0)
    }
}

impl VectorField for LdaFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.geom.m() + self.geom.s()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.geom.m();
        let q = self.geom.point(&x[..m], &self.group);
        let at = self.geom.derived(&q, None)?;
        let (_, dr, vel) = hamiltonian(self.geom, &q, &x[m..])?;
        let table = bracket_from(&at, &x[m..], BracketKind::Hpd);
        let mut grad = dr;
        grad.extend(vel);
        Ok((table.structure() * DVector::from_vec(grad)).as_slice().to_vec())
    }
}

/// Hamiltonized flow Ẋ = f Π^P ∇H on (r, P̃) with H = h(r, P̃/f).
pub struct HamiltonizedFlow<'a> {
    pub geom: &'a Geometry,
    pub f: &'a dyn Multiplier,
    pub group: Vec<f64>,
}

impl<'a> HamiltonizedFlow<'a> {
    pub fn new(geom: &'a Geometry, f: &'a dyn Multiplier) -> Result<HamiltonizedFlow<'a>> {
        if f.depends_on_group() {
            return Err(Error::Config(
                "flows on the reduced space need a multiplier independent of the group".into(),
            ));
        }
        Ok(HamiltonizedFlow {
            geom,
            f,
            group: vec![0.0; geom.k()],
        })
    }

    /// p̃ = P̃/f for a Hamiltonized state.
    pub fn to_original(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.geom.m();
        let q = self.geom.point(&x[..m], &self.group);
        let (f, _) = nonzero(self.f, &q)?;
        Ok(x.iter().enumerate().map(|(i, v)| if i < m { *v } else { v / f }).collect())
    }

    /// P̃ = f p̃ for an original state.
    pub fn from_original(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.geom.m();
        let q = self.geom.point(&x[..m], &self.group);
        let (f, _) = nonzero(self.f, &q)?;
        Ok(x.iter().enumerate().map(|(i, v)| if i < m { *v } else { v * f }).collect())
    }
}

impl VectorField for HamiltonizedFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.geom.m() + self.geom.s()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.geom.m();
        let q = self.geom.point(&x[..m], &self.group);
        let (f, df) = nonzero(self.f, &q)?;
        let big_p = &x[m..];
        let p: Vec<f64> = big_p.iter().map(|v| v / f).collect();
        let (_, dr, vel) = hamiltonian(self.geom, &q, &p)?;
        let pv: f64 = vel.iter().zip(big_p).map(|(a, b)| a * b).sum();
        let mut grad: Vec<f64> = (0..m).map(|g| dr[g] - pv * df[g] / (f * f)).collect();
        grad.extend(vel.iter().map(|v| v / f));
        let comps = transformed_components(self.geom, self.f, &q)?;
        let pi = comps.table(big_p, true).structure();
        Ok((pi * DVector::from_vec(grad)).iter().map(|v| f * v).collect())
    }
}

/// Integration metadata.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub step: f64,
    pub seed: Option<u64>,
    /// Set when the field failed mid-run: (time, message).
    pub truncated: Option<(f64, String)>,
}

/// Samples (t, state) with an optional reparameterized time τ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub t: Vec<f64>,
    pub tau: Option<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }

    /// Fails if the integration stopped early.
    pub fn ensure_complete(self) -> Result<Trajectory> {
        match &self.meta.truncated {
            Some((t, msg)) => Err(Error::Integration {
                t: *t,
                msg: msg.clone(),
            }),
            None => Ok(self),
        }
    }

    /// Applies a pointwise state map.
    pub fn map_states(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Trajectory> {
        Ok(Trajectory {
            states: self.states.iter().map(|s| f(s)).collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    /// True when τ exists and strictly increases.
    pub fn tau_monotone(&self) -> bool {
        self.tau.as_ref().is_some_and(|t| t.windows(2).all(|w| w[1] > w[0]))
    }

    /// Writes CSV: header, then t, τ (if any) and the state with 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        if self.tau.is_some() {
            header.push("tau".into());
        }
        header.extend(self.names.iter().cloned());
        writeln!(out, "{}", header.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![format!("{:.16e}", self.t[i])];
            if let Some(tau) = &self.tau {
                row.push(format!("{:.16e}", tau[i]));
            }
            row.extend(s.iter().map(|v| format!("{v:.16e}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn rk4_step(field: &dyn Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(x, k)| x + c * k).collect() };
    let k1 = field(x)?;
    let k2 = field(&axpy(x, &k1, 0.5 * h))?;
    let k3 = field(&axpy(x, &k2, 0.5 * h))?;
    let k4 = field(&axpy(x, &k3, h))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Fixed-step RK4 from t0 to t1; `rate` adds τ with dτ/dt = rate(x).
///
/// The step is shrunk so that an integer number of steps lands on t1. A field
/// failure truncates the trajectory and records the failure in its metadata.
pub fn integrate(
    field: &dyn VectorField,
    names: Vec<String>,
    x0: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
    rate: Option<&dyn Fn(&[f64]) -> Result<f64>>,
) -> Result<Trajectory> {
    if !(h > 0.0) || !(t1 >= t0) || !h.is_finite() {
        return Err(Error::Config(format!("invalid integration span [{t0}, {t1}] with step {h}")));
    }
    if x0.len() != field.dim() {
        return Err(Error::Config(format!(
            "initial state has {} components, field has {}",
            x0.len(),
            field.dim()
        )));
    }
    let n = (((t1 - t0) / h) - 1e-9).ceil().max(0.0) as usize;
    let step = if n == 0 { 0.0 } else { (t1 - t0) / n as f64 };
    let d = x0.len();
    let aug = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = field.eval(&x[..d])?;
        if let Some(r) = rate {
            out.push(r(&x[..d])?);
        }
        Ok(out)
    };
    let mut x = x0.to_vec();
    if rate.is_some() {
        x.push(0.0);
    }
    let mut traj = Trajectory {
        names,
        t: vec![t0],
        tau: rate.map(|_| vec![0.0]),
        states: vec![x0.to_vec()],
        meta: TrajectoryMeta {
            integrator: "rk4".into(),
            step,
            seed: None,
            truncated: None,
        },
    };
    for i in 0..n {
        let t = t0 + i as f64 * step;
        match rk4_step(&aug, &x, step) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
            Ok(_) => {
                traj.meta.truncated = Some((t, "state is not finite".into()));
                break;
            }
            Err(e) => {
                traj.meta.truncated = Some((t, e.to_string()));
                break;
            }
        }
        traj.t.push(if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * step });
        traj.states.push(x[..d].to_vec());
        if let Some(tau) = traj.tau.as_mut() {
            tau.push(x[d]);
        }
    }
    Ok(traj)
}

/// Cubic Lagrange interpolation of a trajectory at time `t`.
fn interpolate(traj: &Trajectory, t: f64) -> Vec<f64> {
    let ts = &traj.t;
    let n = ts.len();
    if n == 1 {
        return traj.states[0].clone();
    }
    let hi = ts.partition_point(|&x| x < t).clamp(1, n - 1);
    let start = hi.saturating_sub(2).min(n.saturating_sub(4));
    let idx: Vec<usize> = (start..(start + 4).min(n)).collect();
    let d = traj.states[0].len();
    let mut out = vec![0.0; d];
    for &i in &idx {
        let mut w = 1.0;
        for &j in &idx {
            if j != i {
                w *= (t - ts[j]) / (ts[i] - ts[j]);
            }
        }
        for (o, v) in out.iter_mut().zip(&traj.states[i]) {
            *o += w * v;
        }
    }
    out
}

/// Named state maps applied to the second trajectory before comparison.
pub enum StateMap<'a> {
    Identity,
    /// (r, P̃) ↦ (r, P̃/f(r)) on states with `m` shape coordinates.
    MomentaScaleByF { f: &'a dyn Multiplier, m: usize, group: Vec<f64> },
    /// (q, ω) ↦ (q, f(q) ω) on states with `n` coordinates.
    VelocityScaleByF { f: &'a dyn Multiplier, n: usize },
}

impl StateMap<'_> {
    pub const NAMES: [&'static str; 3] = ["identity", "momenta-scale-by-f", "velocity-scale-by-f"];

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            StateMap::Identity => Ok(x.to_vec()),
            StateMap::MomentaScaleByF { f, m, group } => {
                let mut q = x[..*m].to_vec();
                q.extend_from_slice(group);
                let (fv, _) = nonzero(*f, &q)?;
                Ok(x.iter().enumerate().map(|(i, v)| if i < *m { *v } else { v / fv }).collect())
            }
            StateMap::VelocityScaleByF { f, n } => {
                let (fv, _) = nonzero(*f, &x[..*n])?;
                Ok(x.iter().enumerate().map(|(i, v)| if i < *n { *v } else { v * fv }).collect())
            }
        }
    }
}

/// Relative-scaled sup-norm deviation after mapping `b` into `a`'s coordinates.
///
/// Component i is scaled by max(1, sup_t |a_i|). `b` is resampled onto `a`'s
/// grid by cubic interpolation when the grids differ.
pub fn compare(a: &Trajectory, b: &Trajectory, map: &StateMap) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("cannot compare empty trajectories".into()));
    }
    let span_tol = 1e-9 * (1.0 + a.t.last().unwrap().abs());
    if (a.t[0] - b.t[0]).abs() > span_tol || (a.t.last().unwrap() - b.t.last().unwrap()).abs() > span_tol {
        return Err(Error::Config("trajectories cover different time spans".into()));
    }
    let same_grid = a.t.len() == b.t.len() && a.t.iter().zip(&b.t).all(|(x, y)| (x - y).abs() <= span_tol);
    let d = a.states[0].len();
    let mut scale = vec![1.0f64; d];
    for s in &a.states {
        for (c, v) in scale.iter_mut().zip(s) {
            *c = c.max(v.abs());
        }
    }
    let mut worst: f64 = 0.0;
    for (i, sa) in a.states.iter().enumerate() {
        let raw = if same_grid { b.states[i].clone() } else { interpolate(b, a.t[i]) };
        let sb = map.apply(&raw)?;
        if sb.len() != d {
            return Err(Error::Config("mapped state dimension differs".into()));
        }
        for c in 0..d {
            worst = worst.max((sa[c] - sb[c]).abs() / scale[c]);
        }
    }
    Ok(worst)
}

/// max_t |E(t) − E(0)|.
pub fn energy_monitor(traj: &Trajectory, energy: &dyn Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let e0 = energy(&traj.states[0])?;
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        worst = worst.max((energy(s)? - e0).abs());
    }
    Ok(worst)
}

/// Names of the reduced-state components of a system.
pub fn state_names(geom: &Geometry, momentum_prefix: &str) -> Vec<String> {
    let sys = &geom.sys;
    let mut names = sys.shape.clone();
    names.extend(sys.shape.iter().map(|r| format!("{momentum_prefix}_{r}")));
    names.extend((1..=sys.s).map(|i| format!("{momentum_prefix}_{i}")));
    names
}

/// Momenta from shape velocities and quasivelocities: p̃ = 𝔾 (ṙ, Ω).
pub fn momenta_from_velocities(geom: &Geometry, q: &[f64], vel: &[f64]) -> Result<Vec<f64>> {
    let k = geom.kinetic(q)?;
    Ok((k.full * DVector::from_column_slice(vel)).as_slice().to_vec())
}

/// Velocities (ṙ, Ω) from momenta.
pub fn velocities_from_momenta(geom: &Geometry, q: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let k = geom.kinetic(q)?;
    let (inv, _) = checked_inverse(&k.full, "kinetic")?;
    Ok((inv * DVector::from_column_slice(p)).as_slice().to_vec())
}

/// Numerical divergence Σ_l ∂_l(N X^l) by central differences.
pub fn divergence(field: &dyn VectorField, density: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<f64> {
    let mut div = 0.0;
    for l in 0..x.len() {
        let h = 1e-5 * (1.0 + x[l].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += h;
        xm[l] -= h;
        let fp = density(&xp)? * field.eval(&xp)?[l];
        let fm = density(&xm)? * field.eval(&xm)?[l];
        div += (fp - fm) / (2.0 * h);
    }
    Ok(div)
}

/// Jacobian of a field by central differences.
pub fn jacobian(field: &dyn VectorField, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    for l in 0..n {
        let h = 1e-6 * (1.0 + x[l].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += h;
        xm[l] -= h;
        let d: Vec<f64> = field.eval(&xp)?.iter().zip(field.eval(&xm)?).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        for r in 0..n {
            j[(r, l)] = d[r];
        }
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::MultiplierCandidate;
    use crate::systems;

    fn harmonic() -> (usize, impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) {
        (2, |x: &[f64]| Ok(vec![x[1], -x[0]]))
    }

    #[test]
    fn constant_field_is_constant() {
        let f = (2, |_: &[f64]| Ok(vec![0.0, 0.0]));
        let tr = integrate(&f, vec!["a".into(), "b".into()], &[1.0, 2.0], 0.0, 1.0, 0.1, None).unwrap();
        assert!(tr.states.iter().all(|s| s == &vec![1.0, 2.0]));
        assert_eq!(*tr.t.last().unwrap(), 1.0);
    }

    #[test]
    fn harmonic_energy_drift() {
        let f = harmonic();
        let tr = integrate(&f, vec!["x".into(), "v".into()], &[1.0, 0.0], 0.0, 10.0, 1e-3, None).unwrap();
        let drift = energy_monitor(&tr, &|s| Ok(0.5 * (s[0] * s[0] + s[1] * s[1]))).unwrap();
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn tau_accumulates_rate() {
        let f = harmonic();
        let rate = |_: &[f64]| Ok(2.0);
        let tr = integrate(&f, vec!["x".into(), "v".into()], &[1.0, 0.0], 0.0, 1.0, 0.01, Some(&rate)).unwrap();
        assert!((tr.tau.as_ref().unwrap().last().unwrap() - 2.0).abs() < 1e-12);
        assert!(tr.tau_monotone());
    }

    #[test]
    fn singular_field_truncates() {
        let f = (1, |x: &[f64]| if x[0] > 0.5 { Err(Error::Singularity("wall".into())) } else { Ok(vec![1.0]) });
        let tr = integrate(&f, vec!["x".into()], &[0.0], 0.0, 1.0, 0.01, None).unwrap();
        assert!(tr.meta.truncated.is_some());
        assert!(matches!(tr.ensure_complete(), Err(Error::Integration { .. })));
    }

    #[test]
    fn compare_resamples_and_detects_difference() {
        let f = harmonic();
        let a = integrate(&f, vec!["x".into(), "v".into()], &[1.0, 0.0], 0.0, 2.0, 1e-3, None).unwrap();
        let b = integrate(&f, vec!["x".into(), "v".into()], &[1.0, 0.0], 0.0, 2.0, 2e-3, None).unwrap();
        assert_eq!(compare(&a, &a, &StateMap::Identity).unwrap(), 0.0);
        assert!(compare(&a, &b, &StateMap::Identity).unwrap() < 1e-9);
        let c = integrate(&f, vec!["x".into(), "v".into()], &[1.1, 0.0], 0.0, 2.0, 1e-3, None).unwrap();
        assert!(compare(&a, &c, &StateMap::Identity).unwrap() > 0.05);
    }

    #[test]
    fn csv_has_header_and_precision() {
        let f = harmonic();
        let tr = integrate(&f, vec!["x".into(), "v".into()], &[1.0, 0.0], 0.0, 0.1, 0.1, None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x,v");
        assert_eq!(lines.next().unwrap(), "0.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0");
    }

    #[test]
    fn disk_momenta_are_constant() {
        let e = systems::vertical_disk();
        let g = Geometry::new(&e.def).unwrap();
        let flow = LdaFlow::new(&g);
        let d = flow.eval(&[0.3, 0.7, 0.4, -1.1]).unwrap();
        assert_eq!(&d[2..], &[0.0, 0.0]);
    }

    #[test]
    fn snakeboard_matches_known_equations() {
        let e = systems::snakeboard();
        let g = Geometry::new(&e.def).unwrap();
        let flow = LdaFlow::new(&g);
        let (th, phi, psi) = (0.2, 0.6, 0.1);
        let (pt, pp, ps) = (0.7, -0.3, 0.4);
        let d = flow.eval(&[th, phi, psi, pt, pp, ps]).unwrap();
        let (s, c) = (phi.sin(), phi.cos());
        assert!((d[0] - (s / c).powi(2) * (pt - ps)).abs() < 1e-12);
        assert!((d[1] - 0.5 * pp).abs() < 1e-12);
        assert!((d[2] - (ps - s * s * pt) / (c * c)).abs() < 1e-12);
        assert!((d[3] + 0.5 / (c * s) * (pt - ps) * pp).abs() < 1e-12);
        assert!(d[4].abs() < 1e-12 && d[5].abs() < 1e-12);
    }

    #[test]
    fn unit_multiplier_reproduces_lda_flow() {
        let e = systems::vertical_disk();
        let g = Geometry::new(&e.def).unwrap();
        let one = MultiplierCandidate::constant(1.0, &e.def);
        let a = LdaFlow::new(&g).eval(&[0.3, 0.7, 0.4, -1.1]).unwrap();
        let b = HamiltonizedFlow::new(&g, &one).unwrap().eval(&[0.3, 0.7, 0.4, -1.1]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
