//! Compiled system geometry and the tensors derived from it at a point.
//!
//! Points are full configurations `q = (r^1..r^m, g^1..g^k)`. The kinetic
//! matrix of the constrained reduced Lagrangian in the velocities (ṙ, Ω) is
//!
//! ```text
//! 𝔾 = [ G_{αβ}  N_{αj} ]     G_{αβ} = g_{αβ} − g_{aα}A^a_β − g_{aβ}A^a_α + A^a_α g_{ab} A^b_β
//!     [ N_{iβ}  G_{ij} ]     N_{αj} = M_{aα} e^a_j,  M_{aα} = g_{aα} − g_{ab}A^b_α
//! ```
//!
//! and the constrained locked momentum is `μ_a = [M | g e] 𝔾⁻¹ p̃`.

use nalgebra::DMatrix;

use crate::expr::Compiled;
use crate::multiplier::{nonzero, Multiplier};
use crate::system::{ExprMatrix, StructureConstants, SystemDef};
use crate::{Error, Result};

/// Condition number beyond which a metric block is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Dense rank-3 array, row-major in its three indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Tensor3 {
        Tensor3 {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.dims[1] + b) * self.dims[2] + c
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.idx(a, b, c)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.idx(a, b, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let i = self.idx(a, b, c);
        self.data[i] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contracts the first index: Σ_a w_a T^a_{bc}.
    pub fn contract_first(&self, w: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dims[1], self.dims[2], |b, c| {
            (0..self.dims[0]).map(|a| w[a] * self.get(a, b, c)).sum()
        })
    }

    /// Largest |T_{abc} + T_{acb}|: zero when antisymmetric in the last pair.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.dims[0] {
            for b in 0..self.dims[1] {
                for c in 0..self.dims[2].min(self.dims[1]) {
                    worst = worst.max((self.get(a, b, c) + self.get(a, c, b)).abs());
                }
            }
        }
        worst
    }
}

/// Condition number by singular values; 1 for empty matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverts a symmetric metric block after a condition-number check.
pub fn checked_inverse(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    if m.is_empty() {
        return Ok((m.clone(), 1.0));
    }
    let cond = condition_number(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::DegenerateMetric {
            what: what.to_string(),
            cond,
        });
    }
    let inv = m.clone().try_inverse().ok_or_else(|| Error::DegenerateMetric {
        what: what.to_string(),
        cond,
    })?;
    Ok((inv, cond))
}

#[derive(Clone, Debug)]
struct Block {
    rows: usize,
    cols: usize,
    value: Vec<Compiled>,
    partial: Vec<Vec<Compiled>>,
}

impl Block {
    fn new(mat: &ExprMatrix, sys: &SystemDef, names: &[&str]) -> Result<Block> {
        let bound = mat.map(|e| sys.bind_parameters(e));
        let value = bound.iter().map(|e| e.compile(names)).collect::<Result<_>>()?;
        let partial = sys
            .shape
            .iter()
            .map(|r| bound.iter().map(|e| e.diff(r).compile(names)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(Block {
            rows: mat.rows,
            cols: mat.cols,
            value,
            partial,
        })
    }

    fn eval(cs: &[Compiled], rows: usize, cols: usize, q: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = cs[i * cols + j].eval(q)?;
            }
        }
        Ok(out)
    }

    fn at(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Block::eval(&self.value, self.rows, self.cols, q)
    }

    fn d(&self, gamma: usize, q: &[f64]) -> Result<DMatrix<f64>> {
        Block::eval(&self.partial[gamma], self.rows, self.cols, q)
    }
}

/// Raw metric, connection and basis blocks at a point.
#[derive(Clone, Debug)]
pub struct Blocks {
    /// g_{αβ}
    pub g_rr: DMatrix<f64>,
    /// g_{aα}
    pub g_ar: DMatrix<f64>,
    /// g_{ab}
    pub g_aa: DMatrix<f64>,
    /// A^a_α
    pub a: DMatrix<f64>,
    /// e^a_i
    pub e: DMatrix<f64>,
    pub v: f64,
}

/// 𝔾 and the pieces it is assembled from.
#[derive(Clone, Debug)]
pub struct Kinetic {
    pub g_shape: DMatrix<f64>,
    pub m_mat: DMatrix<f64>,
    pub mixed: DMatrix<f64>,
    pub g_sym: DMatrix<f64>,
    pub full: DMatrix<f64>,
}

impl Kinetic {
    fn assemble(b: &Blocks) -> Kinetic {
        let at_gar = b.a.transpose() * &b.g_ar;
        let g_shape = &b.g_rr - &at_gar - at_gar.transpose() + b.a.transpose() * &b.g_aa * &b.a;
        let m_mat = &b.g_ar - &b.g_aa * &b.a;
        let mixed = m_mat.transpose() * &b.e;
        let g_sym = b.e.transpose() * &b.g_aa * &b.e;
        let full = stack(&g_shape, &mixed, &g_sym);
        Kinetic {
            g_shape,
            m_mat,
            mixed,
            g_sym,
            full,
        }
    }

    /// Derivative of 𝔾 given blocks and their derivative.
    fn derivative(b: &Blocks, d: &Blocks) -> DMatrix<f64> {
        let at = b.a.transpose();
        let dat = d.a.transpose();
        let x = &dat * &b.g_ar + &at * &d.g_ar;
        let dg_shape = &d.g_rr - &x - x.transpose()
            + &dat * &b.g_aa * &b.a
            + &at * &d.g_aa * &b.a
            + &at * &b.g_aa * &d.a;
        let m_mat = &b.g_ar - &b.g_aa * &b.a;
        let dm = &d.g_ar - &d.g_aa * &b.a - &b.g_aa * &d.a;
        let dmixed = dm.transpose() * &b.e + m_mat.transpose() * &d.e;
        let y = d.e.transpose() * &b.g_aa * &b.e;
        let dsym = &y + y.transpose() + b.e.transpose() * &d.g_aa * &b.e;
        stack(&dg_shape, &dmixed, &dsym)
    }
}

fn stack(a: &DMatrix<f64>, n: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = (a.nrows(), s.nrows());
    let mut out = DMatrix::zeros(m + k, m + k);
    out.view_mut((0, 0), (m, m)).copy_from(a);
    out.view_mut((0, m), (m, k)).copy_from(n);
    out.view_mut((m, 0), (k, m)).copy_from(&n.transpose());
    out.view_mut((m, m), (k, k)).copy_from(s);
    out
}

/// A system definition compiled for repeated numeric evaluation.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub sys: SystemDef,
    g_rr: Block,
    g_ar: Block,
    g_aa: Block,
    conn: Block,
    basis: Block,
    frame: Vec<Compiled>,
    potential: Compiled,
    dpotential: Vec<Compiled>,
}

impl Geometry {
    pub fn new(sys: &SystemDef) -> Result<Geometry> {
        sys.validate()?;
        let names = sys.coordinate_names();
        let pot = sys.bind_parameters(&sys.potential);
        Ok(Geometry {
            sys: sys.clone(),
            g_rr: Block::new(&sys.g_shape, sys, &names)?,
            g_ar: Block::new(&sys.g_mixed, sys, &names)?,
            g_aa: Block::new(&sys.g_group, sys, &names)?,
            conn: Block::new(&sys.connection, sys, &names)?,
            basis: Block::new(&sys.body_basis, sys, &names)?,
            frame: sys
                .group_frame
                .iter()
                .map(|e| sys.bind_parameters(e).compile(&names))
                .collect::<Result<_>>()?,
            potential: pot.compile(&names)?,
            dpotential: sys
                .shape
                .iter()
                .map(|r| pot.diff(r).compile(&names))
                .collect::<Result<_>>()?,
        })
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn k(&self) -> usize {
        self.sys.k()
    }

    pub fn s(&self) -> usize {
        self.sys.s
    }

    /// Joins shape values with a group point into a full configuration.
    pub fn point(&self, r: &[f64], g: &[f64]) -> Vec<f64> {
        let mut q = r.to_vec();
        q.extend_from_slice(g);
        q
    }

    pub fn blocks(&self, q: &[f64]) -> Result<Blocks> {
        Ok(Blocks {
            g_rr: self.g_rr.at(q)?,
            g_ar: self.g_ar.at(q)?,
            g_aa: self.g_aa.at(q)?,
            a: self.conn.at(q)?,
            e: self.basis.at(q)?,
            v: self.potential.eval(q)?,
        })
    }

    /// ∂/∂r^γ of every block, one entry per shape coordinate.
    pub fn block_partials(&self, q: &[f64]) -> Result<Vec<Blocks>> {
        (0..self.m())
            .map(|c| {
                Ok(Blocks {
                    g_rr: self.g_rr.d(c, q)?,
                    g_ar: self.g_ar.d(c, q)?,
                    g_aa: self.g_aa.d(c, q)?,
                    a: self.conn.d(c, q)?,
                    e: self.basis.d(c, q)?,
                    v: self.dpotential[c].eval(q)?,
                })
            })
            .collect()
    }

    pub fn kinetic(&self, q: &[f64]) -> Result<Kinetic> {
        Ok(Kinetic::assemble(&self.blocks(q)?))
    }

    /// 𝔾, 𝔾⁻¹, the partials ∂𝔾/∂r^γ and ∂V/∂r^γ.
    pub fn kinetic_with_partials(
        &self,
        q: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>, Vec<f64>, f64)> {
        let b = self.blocks(q)?;
        let kin = Kinetic::assemble(&b);
        let (inv, _) = checked_inverse(&kin.full, "kinetic")?;
        let db = self.block_partials(q)?;
        let dk = db.iter().map(|d| Kinetic::derivative(&b, d)).collect();
        let dv = db.iter().map(|d| d.v).collect();
        Ok((kin.full, inv, dk, dv, b.v))
    }

    /// g^σ_d at a point (k×k).
    pub fn group_frame(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Block::eval(&self.frame, self.k(), self.k(), q)
    }

    pub fn structure(&self) -> &StructureConstants {
        &self.sys.structure
    }

    /// B^a_{αβ}, stored [a][α][β].
    pub fn curvature(&self, q: &[f64]) -> Result<Tensor3> {
        let a = self.conn.at(q)?;
        let da: Vec<_> = (0..self.m()).map(|c| self.conn.d(c, q)).collect::<Result<_>>()?;
        Ok(curvature_from(&a, &da, self.structure()))
    }

    /// F^a_{iβ}, stored [a][i][β].
    pub fn f_coefficients(&self, q: &[f64]) -> Result<Tensor3> {
        let a = self.conn.at(q)?;
        let e = self.basis.at(q)?;
        let de: Vec<_> = (0..self.m()).map(|c| self.basis.d(c, q)).collect::<Result<_>>()?;
        Ok(f_from(&a, &e, &de, self.structure()))
    }

    /// Every derived tensor at `q`; C-terms only when `f` is given.
    pub fn derived(&self, q: &[f64], f: Option<&dyn Multiplier>) -> Result<GeometryAtPoint> {
        let (m, k, s) = (self.m(), self.k(), self.s());
        let b = self.blocks(q)?;
        let kin = Kinetic::assemble(&b);
        let (g_shape_inv, cond_shape) = checked_inverse(&kin.g_shape, "G_{alpha beta}")?;
        let (g_sym_inv, cond_sym) = checked_inverse(&kin.g_sym, "G_{ij}")?;
        let (full_inv, cond_kinetic) = checked_inverse(&kin.full, "kinetic")?;
        let gamma = &b.e * &g_sym_inv;
        let g_i_alpha = gamma.transpose() * &kin.m_mat;

        let mut lhs = DMatrix::zeros(k, m + s);
        lhs.view_mut((0, 0), (k, m)).copy_from(&kin.m_mat);
        lhs.view_mut((0, m), (k, s)).copy_from(&(&b.g_aa * &b.e));
        let momentum_map = lhs * &full_inv;

        let da: Vec<_> = (0..m).map(|c| self.conn.d(c, q)).collect::<Result<_>>()?;
        let de: Vec<_> = (0..m).map(|c| self.basis.d(c, q)).collect::<Result<_>>()?;
        let cs = self.structure();
        let curvature = curvature_from(&b.a, &da, cs);
        let f_coeff = f_from(&b.a, &b.e, &de, cs);

        let mut k_shape = Tensor3::zeros(m, m, m);
        for g in 0..m {
            for be in 0..m {
                for al in 0..m {
                    let v: f64 = (0..k).map(|a| momentum_map[(a, g)] * curvature.get(a, be, al)).sum();
                    k_shape.set(g, be, al, v);
                }
            }
        }
        let cee = cee_tensor(&b.e, cs);
        let mut k_sym = Tensor3::zeros(s, s, s);
        let g_gamma = &b.g_aa * &gamma;
        for kk in 0..s {
            for j in 0..s {
                for i in 0..s {
                    // K^k_{ji} = g_{ab} C^a_{cd} e^c_i e^d_j Γ^{bk}
                    let v: f64 = (0..k).map(|a| cee.get(a, i, j) * g_gamma[(a, kk)]).sum();
                    k_sym.set(kk, j, i, v);
                }
            }
        }

        let multiplier = match f {
            Some(f) => {
                let (fv, grad) = nonzero(f, q)?;
                let frame = self.group_frame(q)?;
                let phi: Vec<f64> = (0..k)
                    .map(|d| (0..k).map(|sg| grad[m + sg] * frame[(sg, d)]).sum())
                    .collect();
                let mut c_shape = Tensor3::zeros(m, m, m);
                for g in 0..m {
                    for al in 0..m {
                        for be in 0..m {
                            let mut v = 0.0;
                            if g == be {
                                v += grad[al];
                            }
                            if g == al {
                                v -= grad[be];
                            }
                            c_shape.set(g, al, be, v);
                        }
                    }
                }
                let phi_e: Vec<f64> = (0..s).map(|i| (0..k).map(|d| phi[d] * b.e[(d, i)]).sum()).collect();
                let mut c_bar = Tensor3::zeros(s, s, s);
                for kk in 0..s {
                    for i in 0..s {
                        for j in 0..s {
                            let mut v = 0.0;
                            if kk == i {
                                v += phi_e[j];
                            }
                            if kk == j {
                                v -= phi_e[i];
                            }
                            c_bar.set(kk, i, j, v);
                        }
                    }
                }
                Some(MultiplierAtPoint {
                    value: fv,
                    grad,
                    phi,
                    c_shape,
                    c_bar,
                })
            }
            None => None,
        };

        Ok(GeometryAtPoint {
            m,
            k,
            s,
            g_shape: kin.g_shape,
            g_shape_inv,
            g_sym: kin.g_sym,
            g_sym_inv,
            gamma,
            g_i_alpha,
            m_mat: kin.m_mat,
            mixed: kin.mixed,
            kinetic: kin.full,
            kinetic_inv: full_inv,
            momentum_map,
            g_group: b.g_aa,
            connection: b.a,
            basis: b.e,
            curvature,
            f_coeff,
            cee,
            k_shape,
            k_sym,
            multiplier,
            cond_shape,
            cond_sym,
            cond_kinetic,
            potential: b.v,
        })
    }
}

fn curvature_from(a: &DMatrix<f64>, da: &[DMatrix<f64>], cs: &StructureConstants) -> Tensor3 {
    let (k, m) = a.shape();
    let mut out = Tensor3::zeros(k, m, m);
    for x in 0..k {
        for al in 0..m {
            for be in 0..m {
                let mut v = da[be][(x, al)] - da[al][(x, be)];
                if !cs.is_abelian() {
                    for y in 0..k {
                        for z in 0..k {
                            v += cs.get(x, y, z) * a[(y, al)] * a[(z, be)];
                        }
                    }
                }
                out.set(x, al, be, v);
            }
        }
    }
    out
}

fn f_from(a: &DMatrix<f64>, e: &DMatrix<f64>, de: &[DMatrix<f64>], cs: &StructureConstants) -> Tensor3 {
    let (k, m) = a.shape();
    let s = e.ncols();
    let mut out = Tensor3::zeros(k, s, m);
    for x in 0..k {
        for i in 0..s {
            for be in 0..m {
                let mut v = de[be][(x, i)];
                for y in 0..k {
                    for z in 0..k {
                        v += cs.get(x, y, z) * e[(y, i)] * a[(z, be)];
                    }
                }
                out.set(x, i, be, v);
            }
        }
    }
    out
}

/// C^a_{bd} e^b_i e^d_j, stored [a][i][j].
fn cee_tensor(e: &DMatrix<f64>, cs: &StructureConstants) -> Tensor3 {
    let (k, s) = e.shape();
    let mut out = Tensor3::zeros(k, s, s);
    for a in 0..k {
        for i in 0..s {
            for j in 0..s {
                let mut v = 0.0;
                for b in 0..k {
                    for d in 0..k {
                        v += cs.get(a, b, d) * e[(b, i)] * e[(d, j)];
                    }
                }
                out.set(a, i, j, v);
            }
        }
    }
    out
}

/// Multiplier data at a point.
#[derive(Clone, Debug)]
pub struct MultiplierAtPoint {
    pub value: f64,
    /// ∂f over shape then group coordinates.
    pub grad: Vec<f64>,
    /// φ_d = ∂f/∂g^σ g^σ_d.
    pub phi: Vec<f64>,
    /// C^γ_{αβ} = δ^γ_β ∂_α f − δ^γ_α ∂_β f, stored [γ][α][β].
    pub c_shape: Tensor3,
    /// C̄^k_{ij} = φ_d (e^d_j δ^k_i − e^d_i δ^k_j), stored [k][i][j].
    pub c_bar: Tensor3,
}

/// Derived tensors at one configuration.
#[derive(Clone, Debug)]
pub struct GeometryAtPoint {
    pub m: usize,
    pub k: usize,
    pub s: usize,
    /// G_{αβ}
    pub g_shape: DMatrix<f64>,
    pub g_shape_inv: DMatrix<f64>,
    /// G_{ij} = g_{ab} e^a_i e^b_j
    pub g_sym: DMatrix<f64>,
    pub g_sym_inv: DMatrix<f64>,
    /// Γ^{ai} = e^a_j G^{ji}, k×s.
    pub gamma: DMatrix<f64>,
    /// G^i_α = M_{bα} Γ^{bi}, stored s×m.
    pub g_i_alpha: DMatrix<f64>,
    /// M_{aα}, k×m.
    pub m_mat: DMatrix<f64>,
    /// N_{αj} = M_{aα} e^a_j, m×s.
    pub mixed: DMatrix<f64>,
    /// 𝔾, (m+s)×(m+s).
    pub kinetic: DMatrix<f64>,
    pub kinetic_inv: DMatrix<f64>,
    /// ∂μ_a/∂(p̃_α, p̃_i), k×(m+s): U in the first m columns, W in the rest.
    pub momentum_map: DMatrix<f64>,
    pub g_group: DMatrix<f64>,
    pub connection: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    /// B^a_{αβ}, [a][α][β].
    pub curvature: Tensor3,
    /// F^a_{iβ}, [a][i][β].
    pub f_coeff: Tensor3,
    /// C^a_{bd} e^b_i e^d_j, [a][i][j].
    pub cee: Tensor3,
    /// K^γ_{βα}, [γ][β][α].
    pub k_shape: Tensor3,
    /// K^k_{ji}, [k][j][i].
    pub k_sym: Tensor3,
    pub multiplier: Option<MultiplierAtPoint>,
    pub cond_shape: f64,
    pub cond_sym: f64,
    pub cond_kinetic: f64,
    pub potential: f64,
}

impl GeometryAtPoint {
    /// U_a^γ = ∂μ_a/∂p̃_γ.
    pub fn u(&self, a: usize, gamma: usize) -> f64 {
        self.momentum_map[(a, gamma)]
    }

    /// W_a^k = ∂μ_a/∂p̃_k.
    pub fn w(&self, a: usize, k: usize) -> f64 {
        self.momentum_map[(a, self.m + k)]
    }

    /// Locked momentum (μ_a)_c for momenta `p = (p̃_α, p̃_i)`.
    pub fn locked_momentum(&self, p: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|a| (0..self.m + self.s).map(|c| self.momentum_map[(a, c)] * p[c]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::MultiplierCandidate;
    use crate::system::Kind;

    fn particle() -> SystemDef {
        let mut d = SystemDef::new("p", Kind::Chaplygin, &["x", "y"], &["z"], 0);
        d.connection = ExprMatrix::from_strs(&[&["0", "x"]]);
        d
    }

    #[test]
    fn free_particle_tensors() {
        let g = Geometry::new(&particle()).unwrap();
        let d = g.derived(&[1.0, 0.2, 0.0], None).unwrap();
        assert_eq!(d.g_shape, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert_eq!(d.curvature.get(0, 0, 1), -1.0);
        assert!((d.k_shape.get(1, 0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(d.k_shape.get(0, 0, 1), 0.0);
        assert_eq!(d.curvature.antisymmetry_defect(), 0.0);
        assert!((&d.g_shape * &d.g_shape_inv - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn flat_system_has_identity_blocks() {
        let d = SystemDef::new("flat", Kind::Chaplygin, &["x"], &["z"], 0);
        let at = Geometry::new(&d).unwrap().derived(&[0.3, 0.1], None).unwrap();
        assert_eq!(at.g_shape, DMatrix::identity(1, 1));
        assert_eq!(at.curvature.max_abs(), 0.0);
        assert_eq!(at.k_shape.max_abs(), 0.0);
        assert!(at.f_coeff.is_empty());
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let mut d = particle();
        d.g_shape = ExprMatrix::from_strs(&[&["x", "0"], &["0", "1"]]);
        let g = Geometry::new(&d).unwrap();
        assert!(matches!(g.derived(&[0.0, 0.0, 0.0], None), Err(Error::DegenerateMetric { .. })));
    }

    #[test]
    fn c_terms_follow_multiplier_gradient() {
        let d = particle();
        let g = Geometry::new(&d).unwrap();
        let f = MultiplierCandidate::parse("(1+x^2)^(-1/2)", &d).unwrap();
        let at = g.derived(&[1.0, 0.0, 0.0], Some(&f)).unwrap();
        let mp = at.multiplier.unwrap();
        let dfx = -1.0 / 8f64.sqrt();
        assert!((mp.c_shape.get(1, 0, 1) - dfx).abs() < 1e-15);
        assert!((mp.c_shape.get(0, 0, 1) + 0.0).abs() < 1e-15);
        assert_eq!(mp.c_shape.antisymmetry_defect(), 0.0);
    }

    #[test]
    fn kinetic_partials_match_finite_differences() {
        let mut d = SystemDef::new("s", Kind::General, &["x", "y"], &["a", "b"], 1);
        d.g_shape = ExprMatrix::from_strs(&[&["2+sin(x)", "0.1*y"], &["0.1*y", "3"]]);
        d.g_mixed = ExprMatrix::from_strs(&[&["0.2*x", "0"], &["0", "0.1"]]);
        d.connection = ExprMatrix::from_strs(&[&["cos(y)", "x"], &["0", "x*y"]]);
        d.body_basis = ExprMatrix::from_strs(&[&["1"], &["x"]]);
        let g = Geometry::new(&d).unwrap();
        let q = [0.3, -0.4, 0.0, 0.0];
        let (_, _, dk, _, _) = g.kinetic_with_partials(&q).unwrap();
        for c in 0..2 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            let fd = (g.kinetic(&qp).unwrap().full - g.kinetic(&qm).unwrap().full) / (2.0 * h);
            assert!((fd - &dk[c]).amax() < 1e-8, "coordinate {c}");
        }
    }
}
