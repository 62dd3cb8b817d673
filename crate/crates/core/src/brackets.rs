//! Almost-Poisson brackets on the reduced constrained phase space.
//!
//! States are flat vectors `x = (r^α, p̃_α, p̃_i)` of length `2m + s`; the
//! bracket structure matrix Π satisfies `{F, G} = ∇Fᵀ Π ∇G`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::geometry::{Geometry, GeometryAtPoint, Tensor3};
use crate::multiplier::Multiplier;
use crate::system::Kind;
use crate::{Error, Result};

/// Phase-space point in (r, p̃_α, p̃_i).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedState {
    pub r: Vec<f64>,
    pub p_shape: Vec<f64>,
    pub p_sym: Vec<f64>,
}

impl ReducedState {
    pub fn new(r: Vec<f64>, p_shape: Vec<f64>, p_sym: Vec<f64>) -> ReducedState {
        ReducedState { r, p_shape, p_sym }
    }

    pub fn from_flat(m: usize, s: usize, x: &[f64]) -> Result<ReducedState> {
        if x.len() != 2 * m + s {
            return Err(Error::Config(format!(
                "state has {} components, expected {}",
                x.len(),
                2 * m + s
            )));
        }
        Ok(ReducedState {
            r: x[..m].to_vec(),
            p_shape: x[m..2 * m].to_vec(),
            p_sym: x[2 * m..].to_vec(),
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut x = self.r.clone();
        x.extend_from_slice(&self.p_shape);
        x.extend_from_slice(&self.p_sym);
        x
    }

    /// Momenta (p̃_α, p̃_i) as one vector.
    pub fn momenta(&self) -> Vec<f64> {
        let mut p = self.p_shape.clone();
        p.extend_from_slice(&self.p_sym);
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketKind {
    Hpd,
    Chaplygin,
    Eps,
    Transformed,
    Reduced,
    Canonical,
}

/// Numeric bracket components at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketTable {
    pub kind: BracketKind,
    pub m: usize,
    pub s: usize,
    /// {r^α, p_β}
    pub r_p: DMatrix<f64>,
    /// {p_α, p_β}
    pub pp_shape: DMatrix<f64>,
    /// {p_i, p_α}, s×m
    pub pi_pa: DMatrix<f64>,
    /// {p_i, p_j}
    pub pp_sym: DMatrix<f64>,
}

impl BracketTable {
    pub fn canonical(m: usize) -> BracketTable {
        BracketTable {
            kind: BracketKind::Canonical,
            m,
            s: 0,
            r_p: DMatrix::identity(m, m),
            pp_shape: DMatrix::zeros(m, m),
            pi_pa: DMatrix::zeros(0, m),
            pp_sym: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.m + self.s
    }

    /// Full structure matrix Π in the ordering (r, p̃_α, p̃_i).
    pub fn structure(&self) -> DMatrix<f64> {
        let (m, s) = (self.m, self.s);
        let mut pi = DMatrix::zeros(2 * m + s, 2 * m + s);
        pi.view_mut((0, m), (m, m)).copy_from(&self.r_p);
        pi.view_mut((m, 0), (m, m)).copy_from(&(-self.r_p.transpose()));
        pi.view_mut((m, m), (m, m)).copy_from(&self.pp_shape);
        pi.view_mut((2 * m, m), (s, m)).copy_from(&self.pi_pa);
        pi.view_mut((m, 2 * m), (m, s)).copy_from(&(-self.pi_pa.transpose()));
        pi.view_mut((2 * m, 2 * m), (s, s)).copy_from(&self.pp_sym);
        pi
    }

    /// Largest |Π + Πᵀ| entry.
    pub fn antisymmetry_defect(&self) -> f64 {
        let p = self.structure();
        (&p + p.transpose()).amax()
    }
}

fn kind_tag(kind: Kind) -> BracketKind {
    match kind {
        Kind::General => BracketKind::Hpd,
        Kind::Chaplygin => BracketKind::Chaplygin,
        Kind::Eps => BracketKind::Eps,
    }
}

/// The nonholonomic bracket from derived tensors and momenta `p = (p̃_α, p̃_i)`.
pub fn bracket_from(at: &GeometryAtPoint, p: &[f64], kind: BracketKind) -> BracketTable {
    let (m, s, k) = (at.m, at.s, at.k);
    let mu = at.locked_momentum(p);
    let pp_shape = at.curvature.contract_first(&mu).map(|v| -v);
    let pi_pa = at.f_coeff.contract_first(&mu);
    let pp_sym = at.cee.contract_first(&mu).map(|v| -v);
    let _ = k;
    BracketTable {
        kind,
        m,
        s,
        r_p: DMatrix::identity(m, m),
        pp_shape,
        pi_pa,
        pp_sym,
    }
}

/// The nonholonomic bracket at a reduced state and group point.
pub fn bracket_at(geom: &Geometry, state: &ReducedState, group: &[f64]) -> Result<BracketTable> {
    let q = geom.point(&state.r, group);
    let at = geom.derived(&q, None)?;
    Ok(bracket_from(&at, &state.momenta(), kind_tag(geom.sys.kind)))
}

/// The six component tensors of the f-transformed bracket.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedComponents {
    pub f: f64,
    /// Â^k_{ij}, [k][i][j]
    pub a_hat: Tensor3,
    /// B̂^γ_{ij}, [γ][i][j]
    pub b_hat: Tensor3,
    /// Ĉ^k_{iβ}, [k][i][β]
    pub c_hat: Tensor3,
    /// D̂^β_{iα}, [β][i][α]
    pub d_hat: Tensor3,
    /// Ê^k_{αβ}, [k][α][β]
    pub e_hat: Tensor3,
    /// F̂^γ_{αβ}, [γ][α][β]
    pub f_hat: Tensor3,
}

impl TransformedComponents {
    /// Computes all six tensors; `at` must carry multiplier data.
    pub fn from_geometry(at: &GeometryAtPoint) -> Result<TransformedComponents> {
        let (m, s, k) = (at.m, at.s, at.k);
        let mp = at
            .multiplier
            .as_ref()
            .ok_or_else(|| Error::Config("transformed components need a multiplier".into()))?;
        let f = mp.value;
        let phi_a: Vec<f64> = (0..m)
            .map(|b| (0..k).map(|d| mp.phi[d] * at.connection[(d, b)]).sum())
            .collect();
        let phi_e: Vec<f64> = (0..s)
            .map(|i| (0..k).map(|d| mp.phi[d] * at.basis[(d, i)]).sum())
            .collect();
        // horizontal derivative of f along each shape direction
        let hf: Vec<f64> = (0..m).map(|b| mp.grad[b] - phi_a[b]).collect();

        let mut a_hat = Tensor3::zeros(s, s, s);
        let mut b_hat = Tensor3::zeros(m, s, s);
        for i in 0..s {
            for j in 0..s {
                for kk in 0..s {
                    let w: f64 = (0..k).map(|a| at.cee.get(a, i, j) * at.w(a, kk)).sum();
                    a_hat.set(kk, i, j, mp.c_bar.get(kk, i, j) - f * w);
                }
                for g in 0..m {
                    let u: f64 = (0..k).map(|a| at.cee.get(a, i, j) * at.u(a, g)).sum();
                    b_hat.set(g, i, j, -f * u);
                }
            }
        }
        let mut c_hat = Tensor3::zeros(s, s, m);
        let mut d_hat = Tensor3::zeros(m, s, m);
        for i in 0..s {
            for be in 0..m {
                for kk in 0..s {
                    let w: f64 = (0..k).map(|a| at.f_coeff.get(a, i, be) * at.w(a, kk)).sum();
                    let delta = if kk == i { hf[be] } else { 0.0 };
                    c_hat.set(kk, i, be, delta + f * w);
                }
                for g in 0..m {
                    let u: f64 = (0..k).map(|a| at.f_coeff.get(a, i, be) * at.u(a, g)).sum();
                    let delta = if g == be { phi_e[i] } else { 0.0 };
                    d_hat.set(g, i, be, f * u - delta);
                }
            }
        }
        let mut e_hat = Tensor3::zeros(s, m, m);
        let mut f_hat = Tensor3::zeros(m, m, m);
        for al in 0..m {
            for be in 0..m {
                for kk in 0..s {
                    let w: f64 = (0..k).map(|a| at.curvature.get(a, al, be) * at.w(a, kk)).sum();
                    e_hat.set(kk, al, be, -f * w);
                }
                for g in 0..m {
                    let u: f64 = (0..k).map(|a| at.curvature.get(a, al, be) * at.u(a, g)).sum();
                    let mut v = -f * u;
                    if g == al {
                        v += hf[be];
                    }
                    if g == be {
                        v -= hf[al];
                    }
                    f_hat.set(g, al, be, v);
                }
            }
        }
        Ok(TransformedComponents {
            f,
            a_hat,
            b_hat,
            c_hat,
            d_hat,
            e_hat,
            f_hat,
        })
    }

    /// The transformed bracket at momenta `P = (P̃_α, P̃_i)`.
    ///
    /// With `poisson_only` the B̂, D̂ and F̂ terms are dropped.
    pub fn table(&self, p: &[f64], poisson_only: bool) -> BracketTable {
        let m = self.f_hat.dims[0];
        let s = self.a_hat.dims[0];
        let (ps, pi) = p.split_at(m);
        let keep = if poisson_only { 0.0 } else { 1.0 };
        let inv = 1.0 / self.f;
        let pp_shape = DMatrix::from_fn(m, m, |a, b| {
            let e: f64 = (0..s).map(|k| self.e_hat.get(k, a, b) * pi[k]).sum();
            let f: f64 = (0..m).map(|g| self.f_hat.get(g, a, b) * ps[g]).sum();
            inv * (e + keep * f)
        });
        let pi_pa = DMatrix::from_fn(s, m, |i, b| {
            let c: f64 = (0..s).map(|k| self.c_hat.get(k, i, b) * pi[k]).sum();
            let d: f64 = (0..m).map(|g| self.d_hat.get(g, i, b) * ps[g]).sum();
            inv * (c + keep * d)
        });
        let pp_sym = DMatrix::from_fn(s, s, |i, j| {
            let a: f64 = (0..s).map(|k| self.a_hat.get(k, i, j) * pi[k]).sum();
            let b: f64 = (0..m).map(|g| self.b_hat.get(g, i, j) * ps[g]).sum();
            inv * (a + keep * b)
        });
        BracketTable {
            kind: BracketKind::Transformed,
            m,
            s,
            r_p: DMatrix::identity(m, m),
            pp_shape,
            pi_pa,
            pp_sym,
        }
    }

    /// Largest entry of the tensors that must vanish for a Poisson bracket.
    pub fn non_poisson_part(&self) -> f64 {
        self.b_hat.max_abs().max(self.d_hat.max_abs()).max(self.f_hat.max_abs())
    }
}

/// Transformed components at a configuration for multiplier `f`.
pub fn transformed_components(geom: &Geometry, f: &dyn Multiplier, q: &[f64]) -> Result<TransformedComponents> {
    TransformedComponents::from_geometry(&geom.derived(q, Some(f))?)
}

/// (1/f)·j*{f p̃_I, f p̃_J} evaluated from the untransformed bracket.
///
/// Uses the Leibniz rule with {f, p̃_β} = ∂_β f − φ_d A^d_β and {f, p̃_i} = φ_d e^d_i,
/// φ_d = ∂f/∂g^σ g^σ_d. `p` holds the transformed momenta P̃.
pub fn pullback_table(at: &GeometryAtPoint, p: &[f64]) -> Result<BracketTable> {
    let (m, s, k) = (at.m, at.s, at.k);
    let mp = at
        .multiplier
        .as_ref()
        .ok_or_else(|| Error::Config("pullback needs a multiplier".into()))?;
    let f = mp.value;
    let pt: Vec<f64> = p.iter().map(|v| v / f).collect();
    let base = bracket_from(at, &pt, BracketKind::Transformed);
    let mut fp = vec![0.0; m + s];
    for b in 0..m {
        fp[b] = mp.grad[b] - (0..k).map(|d| mp.phi[d] * at.connection[(d, b)]).sum::<f64>();
    }
    for i in 0..s {
        fp[m + i] = (0..k).map(|d| mp.phi[d] * at.basis[(d, i)]).sum();
    }
    // (1/f)[f²{p_I,p_J} + f p_I {f,p_J} − f p_J {f,p_I}] = f{p_I,p_J} + p_I fp_J − p_J fp_I
    let pull = |bij: f64, i: usize, j: usize| f * bij + pt[i] * fp[j] - pt[j] * fp[i];
    Ok(BracketTable {
        kind: BracketKind::Transformed,
        m,
        s,
        r_p: DMatrix::identity(m, m),
        pp_shape: DMatrix::from_fn(m, m, |a, b| pull(base.pp_shape[(a, b)], a, b)),
        pi_pa: DMatrix::from_fn(s, m, |i, b| pull(base.pi_pa[(i, b)], m + i, b)),
        pp_sym: DMatrix::from_fn(s, s, |i, j| pull(base.pp_sym[(i, j)], m + i, m + j)),
    })
}

/// A bracket given as a state-dependent structure matrix.
pub trait BracketField: Sync {
    fn dim(&self) -> usize;
    fn structure(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

/// The canonical bracket on T*R^m.
pub struct CanonicalBracket(pub usize);

impl BracketField for CanonicalBracket {
    fn dim(&self) -> usize {
        2 * self.0
    }

    fn structure(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(BracketTable::canonical(self.0).structure())
    }
}

/// The untransformed nonholonomic bracket of a system.
pub struct NonholonomicBracket<'a> {
    pub geom: &'a Geometry,
    pub group: Vec<f64>,
}

impl BracketField for NonholonomicBracket<'_> {
    fn dim(&self) -> usize {
        2 * self.geom.m() + self.geom.s()
    }

    fn structure(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let st = ReducedState::from_flat(self.geom.m(), self.geom.s(), x)?;
        Ok(bracket_at(self.geom, &st, &self.group)?.structure())
    }
}

/// The f-transformed bracket in (r, P̃).
pub struct TransformedBracket<'a> {
    pub geom: &'a Geometry,
    pub f: &'a dyn Multiplier,
    pub group: Vec<f64>,
    pub poisson_only: bool,
}

impl BracketField for TransformedBracket<'_> {
    fn dim(&self) -> usize {
        2 * self.geom.m() + self.geom.s()
    }

    fn structure(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (m, s) = (self.geom.m(), self.geom.s());
        let st = ReducedState::from_flat(m, s, x)?;
        let q = self.geom.point(&st.r, &self.group);
        let comps = transformed_components(self.geom, self.f, &q)?;
        Ok(comps.table(&st.momenta(), self.poisson_only).structure())
    }
}

/// Central-difference step for component `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// All Jacobiator components J^{IJK} = Σ_l Π^{Il}∂_lΠ^{JK} + cyclic.
pub fn jacobiator_tensor(field: &dyn BracketField, x: &[f64]) -> Result<Tensor3> {
    let n = field.dim();
    let pi = field.structure(x)?;
    let mut dpi = Vec::with_capacity(n);
    for l in 0..n {
        let h = fd_step(x[l]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += h;
        xm[l] -= h;
        dpi.push((field.structure(&xp)? - field.structure(&xm)?) / (2.0 * h));
    }
    let mut out = Tensor3::zeros(n, n, n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for (l, d) in dpi.iter().enumerate() {
                    v += pi[(i, l)] * d[(j, k)] + pi[(j, l)] * d[(k, i)] + pi[(k, l)] * d[(i, j)];
                }
                out.set(i, j, k, v);
            }
        }
    }
    Ok(out)
}

/// The Jacobiator {x^I,{x^J,x^K}} + cyclic for one coordinate triple.
pub fn jacobiator(field: &dyn BracketField, x: &[f64], triple: (usize, usize, usize)) -> Result<f64> {
    let n = field.dim();
    let (i, j, k) = triple;
    if i >= n || j >= n || k >= n {
        return Err(Error::Config(format!("coordinate index out of range 0..{n}")));
    }
    Ok(jacobiator_tensor(field, x)?.get(i, j, k))
}

/// Max |J^{IJK}| over all triples.
pub fn max_jacobiator(field: &dyn BracketField, x: &[f64]) -> Result<f64> {
    Ok(jacobiator_tensor(field, x)?.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::MultiplierCandidate;
    use crate::system::{ExprMatrix, SystemDef};

    fn particle() -> SystemDef {
        let mut d = SystemDef::new("p", Kind::Chaplygin, &["x", "y"], &["z"], 0);
        d.connection = ExprMatrix::from_strs(&[&["0", "x"]]);
        d
    }

    #[test]
    fn free_particle_lambda() {
        let g = Geometry::new(&particle()).unwrap();
        let st = ReducedState::new(vec![1.0, 0.3], vec![0.7, 1.3], vec![]);
        let t = bracket_at(&g, &st, &[0.0]).unwrap();
        assert_eq!(t.kind, BracketKind::Chaplygin);
        assert!((t.pp_shape[(0, 1)] + 1.3 / 2.0).abs() < 1e-15);
        assert_eq!(t.antisymmetry_defect(), 0.0);
    }

    #[test]
    fn flat_abelian_is_canonical() {
        let d = SystemDef::new("flat", Kind::Chaplygin, &["x", "y"], &["z"], 0);
        let g = Geometry::new(&d).unwrap();
        let st = ReducedState::new(vec![0.1, 0.2], vec![0.3, 0.4], vec![]);
        let t = bracket_at(&g, &st, &[0.0]).unwrap();
        assert_eq!(t.structure(), BracketTable::canonical(2).structure());
    }

    #[test]
    fn known_multiplier_makes_free_particle_canonical() {
        let d = particle();
        let g = Geometry::new(&d).unwrap();
        let f = MultiplierCandidate::parse("(1+x^2)^(-1/2)", &d).unwrap();
        let c = transformed_components(&g, &f, &[0.7, -0.2, 0.0]).unwrap();
        assert!(c.f_hat.max_abs() < 1e-15);
        assert!(c.f_hat.antisymmetry_defect() < 1e-15);
    }

    #[test]
    fn transformed_table_matches_pullback() {
        let mut d = SystemDef::new("h", Kind::General, &["x", "y"], &["a", "b", "c"], 2);
        d.g_shape = ExprMatrix::from_strs(&[&["2+sin(x)", "0.1*y"], &["0.1*y", "3"]]);
        d.g_mixed = ExprMatrix::from_strs(&[&["0.2*x", "0"], &["0", "0.1"], &["0.3", "y"]]);
        d.g_group = ExprMatrix::from_strs(&[&["2", "0.1", "0"], &["0.1", "3", "0.2"], &["0", "0.2", "1.5"]]);
        d.connection = ExprMatrix::from_strs(&[&["cos(y)", "x"], &["0", "x*y"], &["0.5", "sin(x)"]]);
        d.body_basis = ExprMatrix::from_strs(&[&["1", "0"], &["x", "1"], &["0", "y"]]);
        d.structure.set_pair(0, 1, 2, 1.0);
        d.structure.set_pair(1, 2, 0, 1.0);
        d.structure.set_pair(2, 0, 1, 1.0);
        d.group_frame = ExprMatrix::from_strs(&[&["cos(c)", "-sin(c)", "0"], &["sin(c)", "cos(c)", "0"], &["0", "0", "1"]]);
        let g = Geometry::new(&d).unwrap();
        let f = MultiplierCandidate::parse("exp(0.3*x - 0.2*y + 0.1*a*c)", &d).unwrap();
        let q = [0.4, -0.3, 0.2, 0.1, 0.5];
        let at = g.derived(&q, Some(&f)).unwrap();
        let comps = TransformedComponents::from_geometry(&at).unwrap();
        let p = [0.3, -0.8, 1.1, 0.6];
        let a = comps.table(&p, false).structure();
        let b = pullback_table(&at, &p).unwrap().structure();
        assert!((a - b).amax() < 1e-12);
        assert!(comps.a_hat.antisymmetry_defect() < 1e-14);
        assert!(comps.f_hat.antisymmetry_defect() < 1e-14);
        assert!(comps.e_hat.antisymmetry_defect() < 1e-14);
    }

    #[test]
    fn canonical_jacobiator_vanishes() {
        let j = max_jacobiator(&CanonicalBracket(2), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn free_particle_bracket_violates_jacobi() {
        let g = Geometry::new(&particle()).unwrap();
        let field = NonholonomicBracket {
            geom: &g,
            group: vec![0.0],
        };
        let j = max_jacobiator(&field, &[1.0, 0.3, 0.7, 1.3]).unwrap();
        assert!(j > 1e-3, "{j}");
    }
}
