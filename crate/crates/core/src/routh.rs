//! Nonholonomic cyclic variables, the constrained Routhian and second reduction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::brackets::{max_jacobiator, BracketField, BracketTable};
use crate::dynamics::{hamiltonian, VectorField};
use crate::expr::Expr;
use crate::geometry::{checked_inverse, Geometry, Tensor3};
use crate::hamiltonize::{residuals_chaplygin, ChaplyginLike, SampleOptions};
use crate::multiplier::{nonzero, Multiplier};
use crate::report::ResidualReport;
use crate::sampling::SampleBox;
use crate::system::Kind;
use crate::{Error, Result};

const CYCLIC_SAMPLES: usize = 100;
const CYCLIC_TOL: f64 = 1e-10;

/// Outcome of the cyclic-variable search.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicSplit {
    /// Shape indices of the cyclic coordinates v^i.
    pub cyclic: Vec<usize>,
    pub names: Vec<String>,
    /// Candidates on which l_c does not depend but whose momentum is not conserved.
    pub excluded: Vec<String>,
    /// Whether Λ_{α'i} vanishes identically, not only along motions.
    pub strict: bool,
}

fn metric_free_of(geom: &Geometry, v: usize, points: &[Vec<f64>]) -> Result<bool> {
    let sys = &geom.sys;
    let name = &sys.shape[v];
    let blocks = [&sys.g_shape, &sys.g_mixed, &sys.g_group, &sys.connection];
    let symbolic = blocks.iter().all(|b| b.iter().all(|e| !sys.bind_parameters(e).contains_var(name)))
        && !sys.bind_parameters(&sys.potential).contains_var(name);
    if symbolic {
        return Ok(true);
    }
    for q in points {
        let (full, _, dk, dv, _) = geom.kinetic_with_partials(q)?;
        let scale = 1.0 + full.amax();
        if dk[v].amax() > CYCLIC_TOL * scale || dv[v].abs() > CYCLIC_TOL * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Max over samples of the symmetric part of K^γ_{βi}G_{γε}, and of K^γ_{α'i} over α' ≠ i.
fn momentum_defects(geom: &Geometry, i: usize, points: &[Vec<f64>]) -> Result<(f64, f64)> {
    let m = geom.m();
    let rows: Vec<(f64, f64)> = points
        .par_iter()
        .map(|q| -> Result<(f64, f64)> {
            let at = geom.derived(q, None)?;
            let g = &at.g_shape;
            let t = DMatrix::from_fn(m, m, |b, e| (0..m).map(|c| at.k_shape.get(c, b, i) * g[(c, e)]).sum::<f64>());
            let sym = (&t + t.transpose()).amax() / (2.0 * g.amax());
            let mut strict: f64 = 0.0;
            for c in 0..m {
                for a in (0..m).filter(|a| *a != i) {
                    strict = strict.max(at.k_shape.get(c, a, i).abs());
                }
            }
            Ok((sym, strict))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(*x), b.max(*y))))
}

/// Finds the maximal set of nonholonomic cyclic shape coordinates.
pub fn detect_cyclic(geom: &Geometry) -> Result<CyclicSplit> {
    if geom.sys.kind != Kind::Chaplygin {
        return Err(Error::Config("cyclic detection needs a Chaplygin system".into()));
    }
    let points = crate::hamiltonize::config_box(&geom.sys).halton(CYCLIC_SAMPLES, 0);
    let mut split = CyclicSplit {
        cyclic: Vec::new(),
        names: Vec::new(),
        excluded: Vec::new(),
        strict: true,
    };
    for v in 0..geom.m() {
        if !metric_free_of(geom, v, &points)? {
            continue;
        }
        let (sym, strict) = momentum_defects(geom, v, &points)?;
        if sym <= CYCLIC_TOL {
            split.cyclic.push(v);
            split.names.push(geom.sys.shape[v].clone());
            split.strict &= strict <= CYCLIC_TOL;
        } else {
            split.excluded.push(geom.sys.shape[v].clone());
        }
    }
    if split.cyclic.len() == geom.m() {
        return Err(Error::Reduction("every shape coordinate is cyclic; nothing remains to reduce to".into()));
    }
    Ok(split)
}

/// Reduced tensors at one point w.
#[derive(Clone, Debug)]
pub struct ReducedTensors {
    /// G̃ = G_ww − G_wv Ḡ⁻¹ G_vw
    pub g_tilde: DMatrix<f64>,
    /// c = G_wv Ḡ⁻¹ λ
    pub c: DVector<f64>,
    /// V_R = V + ½ λ Ḡ⁻¹ λ
    pub v_r: f64,
    /// Reduced K^{ε'}_{α'β'}, [ε'][α'][β'].
    pub k_red: Tensor3,
    /// Gyroscopic coefficients K^i_{α'β'}, [i][α'][β'].
    pub k_gyro: Tensor3,
}

/// A Chaplygin system with its cyclic momenta fixed at λ.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub geom: Arc<Geometry>,
    pub split: CyclicSplit,
    /// Shape indices of w^{α'}.
    pub kept: Vec<usize>,
    pub lambda: Vec<f64>,
    /// Values of the cyclic coordinates used for evaluation.
    pub v0: Vec<f64>,
}

/// Builds the reduced system for a cyclic split and momentum values.
pub fn reduce(geom: Arc<Geometry>, split: CyclicSplit, lambda: &[f64]) -> Result<ReducedSystem> {
    if lambda.len() != split.cyclic.len() {
        return Err(Error::Config(format!(
            "{} cyclic coordinates need {} momentum values, got {}",
            split.cyclic.len(),
            split.cyclic.len(),
            lambda.len()
        )));
    }
    if split.cyclic.is_empty() {
        return Err(Error::Reduction(format!("{} has no cyclic coordinate", geom.sys.name)));
    }
    let kept = (0..geom.m()).filter(|a| !split.cyclic.contains(a)).collect();
    let rs = ReducedSystem {
        v0: vec![0.0; split.cyclic.len()],
        geom,
        split,
        kept,
        lambda: lambda.to_vec(),
    };
    for w in rs.shape_box().halton(20, 0) {
        rs.tensors(&w)?;
    }
    Ok(rs)
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    /// Full shape point from w.
    pub fn full_shape(&self, w: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.geom.m()];
        for (a, &k) in self.kept.iter().enumerate() {
            r[k] = w[a];
        }
        for (i, &v) in self.split.cyclic.iter().enumerate() {
            r[v] = self.v0[i];
        }
        r
    }

    pub fn full_point(&self, w: &[f64]) -> Vec<f64> {
        self.geom.point(&self.full_shape(w), &vec![0.0; self.geom.k()])
    }

    /// Full momenta from (p_w, λ).
    pub fn full_momenta(&self, pw: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.geom.m()];
        for (a, &k) in self.kept.iter().enumerate() {
            p[k] = pw[a];
        }
        for (i, &v) in self.split.cyclic.iter().enumerate() {
            p[v] = self.lambda[i];
        }
        p
    }

    /// Full state (r, p) from a reduced state (w, p_w).
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = self.full_shape(&x[..d]);
        out.extend(self.full_momenta(&x[d..]));
        out
    }

    /// Reduced state (w, p_w) from a full state (r, p); v and p_v are dropped.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let m = self.geom.m();
        let mut out: Vec<f64> = self.kept.iter().map(|&k| x[k]).collect();
        out.extend(self.kept.iter().map(|&k| x[m + k]));
        out
    }

    pub fn tensors(&self, w: &[f64]) -> Result<ReducedTensors> {
        let m = self.geom.m();
        let (kept, cyc) = (&self.kept, &self.split.cyclic);
        let at = self.geom.derived(&self.full_point(w), None)?;
        let g = &at.g_shape;
        let ginv = &at.g_shape_inv;
        let gvv = DMatrix::from_fn(cyc.len(), cyc.len(), |i, j| g[(cyc[i], cyc[j])]);
        let (gvv_inv, _) = checked_inverse(&gvv, "cyclic block of G").map_err(|e| Error::Reduction(e.to_string()))?;
        let gwv = DMatrix::from_fn(kept.len(), cyc.len(), |a, i| g[(kept[a], cyc[i])]);
        let gww = DMatrix::from_fn(kept.len(), kept.len(), |a, b| g[(kept[a], kept[b])]);
        let g_tilde = &gww - &gwv * &gvv_inv * gwv.transpose();
        let lam = DVector::from_column_slice(&self.lambda);
        let c = &gwv * (&gvv_inv * &lam);
        let v_r = at.potential + 0.5 * lam.dot(&(&gvv_inv * &lam));
        let kred = |e: usize, a: usize, b: usize| -> f64 {
            let q: f64 = cyc
                .iter()
                .map(|&i| {
                    let qi: f64 = -(0..m).map(|gm| at.k_shape.get(gm, a, i) * g[(gm, b)]).sum::<f64>();
                    qi * ginv[(i, e)]
                })
                .sum();
            at.k_shape.get(e, a, b) - q
        };
        let n = kept.len();
        let mut k_red = Tensor3::zeros(n, n, n);
        let mut k_gyro = Tensor3::zeros(cyc.len(), n, n);
        for a in 0..n {
            for b in 0..n {
                for (e, &ke) in kept.iter().enumerate() {
                    k_red.set(e, a, b, kred(ke, kept[a], kept[b]));
                }
                for (i, &ci) in cyc.iter().enumerate() {
                    k_gyro.set(i, a, b, kred(ci, kept[a], kept[b]));
                }
            }
        }
        Ok(ReducedTensors {
            g_tilde,
            c,
            v_r,
            k_red,
            k_gyro,
        })
    }

    /// Reduced Routhian R_c(w, ẇ) = ½ẇᵀG̃ẇ + cᵀẇ − V_R.
    pub fn routhian(&self, w: &[f64], wdot: &[f64]) -> Result<f64> {
        let t = self.tensors(w)?;
        let v = DVector::from_column_slice(wdot);
        Ok(0.5 * v.dot(&(&t.g_tilde * &v)) + t.c.dot(&v) - t.v_r)
    }

    /// Reduced energy H_R(w, p_w) = h(r, (p_w, λ)).
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        Ok(hamiltonian(&self.geom, &self.full_point(&x[..d]), &self.full_momenta(&x[d..]))?.0)
    }

    /// S̄_{α'β'} = −f K^i_{α'β'} λ_i.
    pub fn gyroscopic(&self, w: &[f64], f: f64) -> Result<DMatrix<f64>> {
        let t = self.tensors(w)?;
        let n = self.dim();
        Ok(DMatrix::from_fn(n, n, |a, b| {
            -f * (0..self.lambda.len()).map(|i| t.k_gyro.get(i, a, b) * self.lambda[i]).sum::<f64>()
        }))
    }

    pub fn state_names(&self) -> Vec<String> {
        let names = self.shape_names();
        let mut out = names.clone();
        out.extend(names.iter().map(|n| format!("p_{n}")));
        out
    }
}

impl ChaplyginLike for ReducedSystem {
    fn shape_names(&self) -> Vec<String> {
        self.kept.iter().map(|&k| self.geom.sys.shape[k].clone()).collect()
    }

    fn coords(&self) -> Vec<String> {
        self.shape_names()
    }

    fn point(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }

    fn shape_box(&self) -> SampleBox {
        SampleBox::new(&self.shape_names().iter().map(|n| self.geom.sys.interval(n)).collect::<Vec<_>>())
    }

    fn shape_tensors(&self, r: &[f64]) -> Result<(Tensor3, DMatrix<f64>)> {
        let t = self.tensors(r)?;
        Ok((t.k_red, t.g_tilde))
    }

    fn bind(&self, e: &Expr) -> Expr {
        self.geom.sys.bind_parameters(e)
    }
}

/// Lagrange-d'Alembert flow of the full system restricted to p_v = λ, on (w, p_w).
pub struct ReducedFlow<'a> {
    pub rsys: &'a ReducedSystem,
}

impl VectorField for ReducedFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.rsys.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let flow = crate::dynamics::LdaFlow::new(&self.rsys.geom);
        let full = flow.eval(&self.rsys.lift(x))?;
        Ok(self.rsys.project(&full))
    }
}

/// The reduced almost-Poisson bracket in (w, P') with {P'_α', P'_β'} = S̄_{α'β'}.
pub struct Pb2Bracket<'a> {
    pub rsys: &'a ReducedSystem,
    pub f: &'a dyn Multiplier,
}

impl Pb2Bracket<'_> {
    pub fn table(&self, w: &[f64]) -> Result<BracketTable> {
        let (fv, _) = nonzero(self.f, w)?;
        let mut t = BracketTable::canonical(self.rsys.dim());
        t.pp_shape = self.rsys.gyroscopic(w, fv)?;
        Ok(t)
    }
}

impl BracketField for Pb2Bracket<'_> {
    fn dim(&self) -> usize {
        2 * self.rsys.dim()
    }

    fn structure(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.table(&x[..self.rsys.dim()])?.structure())
    }
}

/// Gradient of H(w, P') = H_R(w, P'/f).
fn hamiltonized_gradient(rsys: &ReducedSystem, f: &dyn Multiplier, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = rsys.dim();
    let w = &x[..d];
    let (fv, df) = nonzero(f, w)?;
    let big_p = &x[d..];
    let p: Vec<f64> = big_p.iter().map(|v| v / fv).collect();
    let (_, dr, vel) = hamiltonian(&rsys.geom, &rsys.full_point(w), &rsys.full_momenta(&p))?;
    let vw: Vec<f64> = rsys.kept.iter().map(|&k| vel[k]).collect();
    let pv: f64 = vw.iter().zip(big_p).map(|(a, b)| a * b).sum();
    let mut grad: Vec<f64> = rsys.kept.iter().enumerate().map(|(a, &k)| dr[k] - pv * df[a] / (fv * fv)).collect();
    grad.extend(vw.iter().map(|v| v / fv));
    Ok((fv, grad))
}

/// Hamiltonized reduced flow Ẋ = f Π^{PB2} ∇H on (w, P' = f p_w).
pub struct Pb2Flow<'a> {
    pub bracket: Pb2Bracket<'a>,
}

impl VectorField for Pb2Flow<'_> {
    fn dim(&self) -> usize {
        2 * self.bracket.rsys.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (fv, grad) = hamiltonized_gradient(self.bracket.rsys, self.bracket.f, x)?;
        let pi = self.bracket.structure(x)?;
        Ok((pi * DVector::from_vec(grad)).iter().map(|v| fv * v).collect())
    }
}

/// Result of Hamiltonizing the reduced system.
pub struct ReducedHamiltonization {
    pub report: ResidualReport,
    /// Max Jacobiator of the reduced bracket over the sampled states.
    pub jacobiator: f64,
}

/// Samples the reduced Hamiltonization condition and the reduced bracket's Jacobiator.
pub fn reduced_hamiltonize(rsys: &ReducedSystem, f: &dyn Multiplier, opts: SampleOptions) -> Result<ReducedHamiltonization> {
    let report = residuals_chaplygin(rsys, f, opts)?;
    let bracket = Pb2Bracket { rsys, f };
    let d = rsys.dim();
    let states = rsys.shape_box().join(&SampleBox::new(&vec![(-1.0, 1.0); d])).halton(opts.samples.min(20), opts.seed);
    let mut jacobiator: f64 = 0.0;
    for x in &states {
        jacobiator = jacobiator.max(max_jacobiator(&bracket, x)?);
    }
    Ok(ReducedHamiltonization { report, jacobiator })
}

/// Primitive one-form W with dW = S̄ in two dimensions.
///
/// W_1 = 0 and W_2(w) = −∫ S̄_{12}(s, w²) ds from the base w¹; W is fixed up to
/// the gradient of a function of w² by this gauge.
pub struct GyroscopicForm<'a> {
    pub rsys: &'a ReducedSystem,
    pub f: &'a dyn Multiplier,
    pub base: f64,
    pub panel: f64,
}

const GAUSS4: [(f64, f64); 2] = [(0.339_981_043_584_856_3, 0.652_145_154_862_546_1), (0.861_136_311_594_052_6, 0.347_854_845_137_453_9)];

impl<'a> GyroscopicForm<'a> {
    pub fn new(rsys: &'a ReducedSystem, f: &'a dyn Multiplier, base: f64) -> Result<GyroscopicForm<'a>> {
        if rsys.dim() != 2 {
            return Err(Error::Reduction(format!(
                "the gyroscopic form is built for two reduced dimensions, got {}",
                rsys.dim()
            )));
        }
        Ok(GyroscopicForm {
            rsys,
            f,
            base,
            panel: 0.05,
        })
    }

    pub fn s_bar(&self, w: &[f64]) -> Result<f64> {
        let (fv, _) = nonzero(self.f, w)?;
        Ok(self.rsys.gyroscopic(w, fv)?[(0, 1)])
    }

    /// W_2 at w; W_1 = 0.
    pub fn w2(&self, w: &[f64]) -> Result<f64> {
        let len = w[0] - self.base;
        if len == 0.0 {
            return Ok(0.0);
        }
        let n = (len.abs() / self.panel).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let mid = self.base + (i as f64 + 0.5) * h;
            for (x, wt) in GAUSS4 {
                for sign in [-1.0, 1.0] {
                    acc += 0.5 * h * wt * self.s_bar(&[mid + sign * 0.5 * h * x, w[1]])?;
                }
            }
        }
        Ok(-acc)
    }

    /// ∂W_2/∂w¹ exactly and ∂W_2/∂w² by central differences.
    fn w2_gradient(&self, w: &[f64]) -> Result<[f64; 2]> {
        let h = 1e-5 * (1.0 + w[1].abs());
        let d2 = (self.w2(&[w[0], w[1] + h])? - self.w2(&[w[0], w[1] - h])?) / (2.0 * h);
        Ok([-self.s_bar(w)?, d2])
    }

    /// Canonical momenta Π = P' − W(w) from a Hamiltonized state.
    pub fn to_canonical(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[0], x[1], x[2], x[3] - self.w2(&x[..2])?])
    }

    pub fn from_canonical(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[0], x[1], x[2], x[3] + self.w2(&x[..2])?])
    }
}

/// Canonical flow of K(w, Π) = H(w, Π + W) in τ, rescaled to t: the R_W dynamics.
pub struct RwFlow<'a> {
    pub form: GyroscopicForm<'a>,
}

impl VectorField for RwFlow<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let big = self.form.from_canonical(x)?;
        let (fv, grad) = hamiltonized_gradient(self.form.rsys, self.form.f, &big)?;
        let dw = self.form.w2_gradient(&x[..2])?;
        let dk = [grad[0] + grad[3] * dw[0], grad[1] + grad[3] * dw[1]];
        Ok(vec![fv * grad[2], fv * grad[3], -fv * dk[0], -fv * dk[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{compare, integrate, StateMap};
    use crate::hamiltonize::{solve_2dof, Solve2DofOptions};
    use crate::multiplier::MultiplierCandidate;
    use crate::systems;

    fn geom(name: &str) -> Arc<Geometry> {
        Arc::new(Geometry::new(&systems::get(name).unwrap().def).unwrap())
    }

    fn snake(lambda: f64) -> ReducedSystem {
        let g = geom("snakeboard");
        let split = detect_cyclic(&g).unwrap();
        reduce(g, split, &[lambda]).unwrap()
    }

    fn tan_phi(rs: &ReducedSystem) -> MultiplierCandidate {
        assert_eq!(rs.shape_names(), vec!["theta", "phi"]);
        MultiplierCandidate::with_coords(crate::expr::parse("tan(phi)").unwrap(), &["theta", "phi"], 2).unwrap()
    }

    #[test]
    fn cyclic_detection() {
        let s = detect_cyclic(&geom("snakeboard")).unwrap();
        assert_eq!(s.names, vec!["psi"]);
        assert!(s.strict);
        let sp = detect_cyclic(&geom("chaplygin_sphere")).unwrap();
        assert_eq!(sp.names, vec!["psi"]);
        assert!(!sp.strict);
        assert!(detect_cyclic(&geom("free_particle")).unwrap().cyclic.is_empty());
    }

    #[test]
    fn snakeboard_gyroscopic_term() {
        let rs = snake(0.5);
        let f = tan_phi(&rs);
        let pb = Pb2Bracket { rsys: &rs, f: &f };
        for phi in [0.2, 0.7, 1.3] {
            let t = pb.table(&[0.4, phi]).unwrap();
            let want = 0.5 / phi.cos().powi(2);
            assert!((t.pp_shape[(0, 1)] - want).abs() < 1e-12, "{} vs {want}", t.pp_shape[(0, 1)]);
        }
        let h = reduced_hamiltonize(&rs, &f, SampleOptions::default().with_tol(1e-10)).unwrap();
        assert!(h.report.passed());
        assert!(h.jacobiator <= 1e-9);
    }

    #[test]
    fn zero_momentum_has_no_gyroscopic_term() {
        let rs = snake(0.0);
        let f = tan_phi(&rs);
        assert_eq!(rs.gyroscopic(&[0.1, 0.5], 2.0).unwrap().amax(), 0.0);
        let form = GyroscopicForm::new(&rs, &f, 0.0).unwrap();
        assert_eq!(form.w2(&[0.7, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn snakeboard_solve_on_reduced_space() {
        let rs: Arc<dyn ChaplyginLike> = Arc::new(snake(0.5));
        let sol = solve_2dof(rs, Solve2DofOptions::default()).unwrap();
        let sym = sol.symbolic.unwrap();
        assert!(crate::expr::equivalent(&sym, &crate::expr::parse("tan(phi)").unwrap()), "{sym}");
    }

    #[test]
    fn reduction_commutes_with_flow() {
        let g = geom("snakeboard");
        let rs = snake(0.5);
        let full0 = rs.lift(&[0.2, 0.6, 0.3, -0.2]);
        let lda = crate::dynamics::LdaFlow::new(&g);
        let a = integrate(&lda, vec![], &full0, 0.0, 5.0, 1e-3, None).unwrap();
        let b = integrate(&ReducedFlow { rsys: &rs }, vec![], &rs.project(&full0), 0.0, 5.0, 1e-3, None).unwrap();
        let a = a.map_states(|s| Ok(rs.project(s))).unwrap();
        assert!(compare(&a, &b, &StateMap::Identity).unwrap() < 1e-6);
    }

    #[test]
    fn pb2_and_rw_flows_match_reduced_flow() {
        let rs = snake(0.5);
        let f = tan_phi(&rs);
        let x0 = [0.2, 0.6, 0.3, -0.2];
        let red = integrate(&ReducedFlow { rsys: &rs }, vec![], &x0, 0.0, 5.0, 1e-3, None).unwrap();
        let pb2 = Pb2Flow {
            bracket: Pb2Bracket { rsys: &rs, f: &f },
        };
        let fx = f.value(&x0[..2]).unwrap();
        let big0 = [x0[0], x0[1], fx * x0[2], fx * x0[3]];
        let hz = integrate(&pb2, vec![], &big0, 0.0, 5.0, 1e-3, None).unwrap();
        let map = StateMap::MomentaScaleByF { f: &f, m: 2, group: vec![] };
        assert!(compare(&red, &hz, &map).unwrap() < 1e-8);
        let form = GyroscopicForm::new(&rs, &f, x0[0]).unwrap();
        let rw = RwFlow { form: GyroscopicForm::new(&rs, &f, x0[0]).unwrap() };
        let c0 = form.to_canonical(&big0).unwrap();
        let tr = integrate(&rw, vec![], &c0, 0.0, 5.0, 1e-3, None).unwrap();
        let back = tr.map_states(|s| form.from_canonical(s)).unwrap();
        let dev = compare(&hz, &back, &StateMap::Identity).unwrap();
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn sphere_reduced_bracket_matches_closed_form() {
        let e = systems::chaplygin_sphere();
        let g = geom("chaplygin_sphere");
        let rs = Arc::new(reduce(g.clone(), detect_cyclic(&g).unwrap(), &[1.0]).unwrap());
        let sol = solve_2dof(rs.clone(), Solve2DofOptions::default()).unwrap();
        assert!(sol.symbolic.is_none());
        let density = e.reduction.unwrap().reference_density.unwrap();
        let dens = MultiplierCandidate::with_coords(g.sys.bind_parameters(&density), &["theta", "phi"], 2).unwrap();
        let mut quad = Arc::try_unwrap(sol.quadrature).ok().unwrap();
        let base = quad.base();
        quad.normalize_at(&base, dens.value(&base).unwrap()).unwrap();
        let pb = Pb2Bracket { rsys: &rs, f: &quad };
        let (i1, i2, i3) = (1.0, 2.0, 3.0);
        let mut worst: f64 = 0.0;
        for w in rs.shape_box().halton(25, 3) {
            let f = quad.value(&w).unwrap();
            assert!((f / dens.value(&w).unwrap() - 1.0).abs() < 1e-9);
            let (th, ph) = (w[0], w[1]);
            let want = -(i3 + 1.0) * f.powi(3) * th.sin() * (i1 * ph.cos().powi(2) + i2 * ph.sin().powi(2) + 1.0);
            worst = worst.max((pb.table(&w).unwrap().pp_shape[(0, 1)] - want).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }
}
