//! Hamiltonization conditions, 2-DOF multipliers, ansatz fits and invariant measures.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::brackets::{bracket_from, BracketKind, TransformedComponents};
use crate::dynamics::{divergence, LdaFlow};
use crate::expr::{Compiled, Expr, UnaryOp};
use crate::geometry::{Geometry, Tensor3};
use crate::multiplier::{nonzero, Multiplier, MultiplierCandidate};
use crate::report::ResidualReport;
use crate::sampling::{SampleBox, DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::system::{Kind, SystemDef};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Sample count, seed and tolerance of a residual check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for SampleOptions {
    fn default() -> SampleOptions {
        SampleOptions {
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            tol: DEFAULT_TOL,
        }
    }
}

impl SampleOptions {
    pub fn with_tol(self, tol: f64) -> SampleOptions {
        SampleOptions { tol, ..self }
    }
}

/// A system whose shape dynamics is governed by K^γ_{βα} and G_{αβ} alone.
pub trait ChaplyginLike: Send + Sync {
    fn shape_names(&self) -> Vec<String>;

    fn shape_dim(&self) -> usize {
        self.shape_names().len()
    }

    /// Coordinates a multiplier on this system is written in; shape names come first.
    fn coords(&self) -> Vec<String>;

    /// Multiplier coordinates at shape point `r`.
    fn point(&self, r: &[f64]) -> Vec<f64>;

    fn shape_box(&self) -> SampleBox;

    /// K^γ_{βα} stored [γ][β][α], and G_{αβ}.
    fn shape_tensors(&self, r: &[f64]) -> Result<(Tensor3, DMatrix<f64>)>;

    /// Binds system parameters inside a user expression.
    fn bind(&self, e: &Expr) -> Expr {
        e.clone()
    }
}

fn require_chaplygin(geom: &Geometry) -> Result<()> {
    if geom.s() != 0 {
        return Err(Error::Config(format!(
            "{} has {} symmetric directions; this operation needs a Chaplygin system",
            geom.sys.name,
            geom.s()
        )));
    }
    Ok(())
}

impl ChaplyginLike for Geometry {
    fn shape_names(&self) -> Vec<String> {
        self.sys.shape.clone()
    }

    fn coords(&self) -> Vec<String> {
        self.sys.coordinate_names().iter().map(|s| s.to_string()).collect()
    }

    fn point(&self, r: &[f64]) -> Vec<f64> {
        Geometry::point(self, r, &vec![0.0; self.k()])
    }

    fn shape_box(&self) -> SampleBox {
        box_of(&self.sys, &self.sys.shape)
    }

    fn shape_tensors(&self, r: &[f64]) -> Result<(Tensor3, DMatrix<f64>)> {
        require_chaplygin(self)?;
        let at = self.derived(&ChaplyginLike::point(self, r), None)?;
        Ok((at.k_shape, at.g_shape))
    }

    fn bind(&self, e: &Expr) -> Expr {
        self.sys.bind_parameters(e)
    }
}

fn box_of(sys: &SystemDef, names: &[String]) -> SampleBox {
    SampleBox::new(&names.iter().map(|n| sys.interval(n)).collect::<Vec<_>>())
}

/// Sampling box over all configuration coordinates.
pub fn config_box(sys: &SystemDef) -> SampleBox {
    let names: Vec<String> = sys.coordinate_names().iter().map(|s| s.to_string()).collect();
    box_of(sys, &names)
}

/// Sampling box over (r, p̃) with momenta in [−1, 1].
pub fn phase_box(geom: &Geometry) -> SampleBox {
    let mom = SampleBox::new(&vec![(-1.0, 1.0); geom.m() + geom.s()]);
    box_of(&geom.sys, &geom.sys.shape).join(&mom)
}

fn par_residuals<F>(points: &[Vec<f64>], f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    points.par_iter().map(|p| f(p)).collect()
}

fn par_families<F>(points: &[Vec<f64>], n: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let rows: Vec<Vec<f64>> = points.par_iter().map(|p| f(p)).collect::<Result<_>>()?;
    Ok((0..n).map(|c| rows.iter().map(|r| r[c]).collect()).collect())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// The five families of the Poisson condition for the transformed bracket at one point.
pub fn hpd_residuals_at(t: &TransformedComponents) -> [f64; 5] {
    let s = t.a_hat.dims[0];
    let m = t.f_hat.dims[0];
    let (a, c, e) = (&t.a_hat, &t.c_hat, &t.e_hat);
    let c1 = t.non_poisson_part();
    let mut c2: f64 = 0.0;
    for mm in 0..s {
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    let v: f64 = (0..s)
                        .map(|l| {
                            a.get(mm, i, l) * a.get(l, j, k)
                                + a.get(mm, k, l) * a.get(l, i, j)
                                + a.get(mm, j, l) * a.get(l, k, i)
                        })
                        .sum();
                    c2 = c2.max(v.abs());
                }
            }
        }
    }
    let (mut c3, mut c4, mut c5): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..s {
        for al in 0..m {
            for be in 0..m {
                for g in 0..m {
                    let v: f64 = (0..s)
                        .map(|j| c.get(i, j, g) * e.get(j, al, be) + c.get(i, j, be) * e.get(j, g, al) + c.get(i, j, al) * e.get(j, be, g))
                        .sum();
                    c3 = c3.max(v.abs());
                }
                for k in 0..s {
                    let v: f64 = (0..s)
                        .map(|l| a.get(i, k, l) * e.get(l, al, be) + c.get(i, l, al) * c.get(l, k, be) - c.get(i, l, be) * c.get(l, k, al))
                        .sum();
                    c4 = c4.max(v.abs());
                }
            }
            for j in 0..s {
                for l in 0..s {
                    let v: f64 = (0..s)
                        .map(|k| a.get(l, i, k) * c.get(k, j, al) - c.get(l, k, al) * a.get(k, i, j) - a.get(l, j, k) * c.get(k, i, al))
                        .sum();
                    c5 = c5.max(v.abs());
                }
            }
        }
    }
    [c1, c2, c3, c4, c5]
}

pub const HPD_FAMILIES: [&str; 5] = ["c1", "c2", "c3", "c4", "c5"];

/// Samples the Poisson conditions of a general system over its configuration box.
pub fn residuals_hpd(geom: &Geometry, f: &dyn Multiplier, opts: SampleOptions) -> Result<ResidualReport> {
    let points = config_box(&geom.sys).halton(opts.samples, opts.seed);
    residuals_hpd_at(geom, f, &points, opts)
}

pub fn residuals_hpd_at(geom: &Geometry, f: &dyn Multiplier, points: &[Vec<f64>], opts: SampleOptions) -> Result<ResidualReport> {
    let cols = par_families(points, 5, |q| {
        let t = TransformedComponents::from_geometry(&geom.derived(q, Some(f))?)?;
        Ok(hpd_residuals_at(&t).to_vec())
    })?;
    let fams: Vec<(&str, Vec<f64>)> = HPD_FAMILIES.iter().copied().zip(cols).collect();
    Ok(ResidualReport::from_samples(&fams, opts.seed, opts.tol).with_note("c2 is read as a cyclic sum equal to zero"))
}

/// Condition residual at `r`, scaled by max |G|.
pub fn condhdf_at(sys: &dyn ChaplyginLike, f: &dyn Multiplier, r: &[f64]) -> Result<f64> {
    let m = sys.shape_dim();
    let (k, g) = sys.shape_tensors(r)?;
    let (fv, grad) = nonzero(f, &sys.point(r))?;
    let mut worst: f64 = 0.0;
    for al in 0..m {
        for de in 0..m {
            for nu in de..m {
                let kk: f64 = (0..m)
                    .map(|mu| k.get(mu, al, de) * g[(mu, nu)] + k.get(mu, al, nu) * g[(mu, de)])
                    .sum();
                let v = grad[de] * g[(al, nu)] + grad[nu] * g[(al, de)] - 2.0 * grad[al] * g[(de, nu)] - fv * kk;
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst / max_abs(&g))
}

/// Samples the Chaplygin Hamiltonization condition over the shape box.
pub fn residuals_chaplygin(sys: &dyn ChaplyginLike, f: &dyn Multiplier, opts: SampleOptions) -> Result<ResidualReport> {
    let points = sys.shape_box().halton(opts.samples, opts.seed);
    residuals_chaplygin_at(sys, f, &points, opts)
}

pub fn residuals_chaplygin_at(
    sys: &dyn ChaplyginLike,
    f: &dyn Multiplier,
    points: &[Vec<f64>],
    opts: SampleOptions,
) -> Result<ResidualReport> {
    let vals = par_residuals(points, |r| condhdf_at(sys, f, r))?;
    Ok(ResidualReport::from_samples(&[("condhdf", vals)], opts.seed, opts.tol))
}

/// Jacobi-like cyclic sum of S^l_{km} = −(K^l_{mk} − C̄^l_{km}) at `q`.
pub fn epslocal_at(geom: &Geometry, f: &dyn Multiplier, q: &[f64]) -> Result<f64> {
    let at = geom.derived(q, Some(f))?;
    let s = at.s;
    let cb = &at.multiplier.as_ref().expect("multiplier data").c_bar;
    let mut st = Tensor3::zeros(s, s, s);
    for l in 0..s {
        for k in 0..s {
            for mm in 0..s {
                st.set(l, k, mm, -(at.k_sym.get(l, mm, k) - cb.get(l, k, mm)));
            }
        }
    }
    let mut worst: f64 = 0.0;
    for l in 0..s {
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    let v: f64 = (0..s)
                        .map(|mm| st.get(l, i, mm) * st.get(mm, j, k) + st.get(l, j, mm) * st.get(mm, k, i) + st.get(l, k, mm) * st.get(mm, i, j))
                        .sum();
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Samples the EPS condition over the group box.
pub fn residuals_eps(geom: &Geometry, f: &dyn Multiplier, opts: SampleOptions) -> Result<ResidualReport> {
    if geom.m() != 0 {
        return Err(Error::Config(format!("{} has shape coordinates; not an EPS system", geom.sys.name)));
    }
    let points = config_box(&geom.sys).halton(opts.samples, opts.seed);
    let vals = par_residuals(&points, |q| epslocal_at(geom, f, q))?;
    Ok(ResidualReport::from_samples(&[("epslocal", vals)], opts.seed, opts.tol))
}

/// Runs the condition family matching the system kind.
pub fn check(geom: &Geometry, f: &dyn Multiplier, opts: SampleOptions) -> Result<ResidualReport> {
    match geom.sys.kind {
        Kind::Chaplygin => residuals_chaplygin(geom, f, opts),
        Kind::Eps => residuals_eps(geom, f, opts),
        Kind::General => residuals_hpd(geom, f, opts),
    }
}

/// Measure density f^{m−1}.
pub fn measure_density(f: &Expr, m: usize) -> Expr {
    match m {
        0 | 1 => Expr::one(),
        2 => f.clone(),
        _ => f.clone().powf((m - 1) as f64),
    }
}

/// Samples div(N X_nh) of the Lagrange-d'Alembert field over `states` in (r, p̃).
pub fn divergence_test(
    geom: &Geometry,
    density: &dyn Multiplier,
    states: &[Vec<f64>],
    opts: SampleOptions,
) -> Result<ResidualReport> {
    if geom.sys.kind == Kind::General {
        return Err(Error::Config("divergence test needs a Chaplygin or EPS system".into()));
    }
    let flow = LdaFlow::new(geom);
    let m = geom.m();
    let dens = |x: &[f64]| -> Result<f64> { Ok(nonzero(density, &geom.point(&x[..m], &flow.group))?.0) };
    let vals = par_residuals(states, |x| divergence(&flow, &dens, x))?;
    Ok(ResidualReport::from_samples(&[("divergence", vals)], opts.seed, opts.tol))
}

/// `divergence_test` over quasi-random phase states.
pub fn divergence_sampled(geom: &Geometry, density: &dyn Multiplier, opts: SampleOptions) -> Result<ResidualReport> {
    let states = phase_box(geom).halton(opts.samples, opts.seed);
    divergence_test(geom, density, &states, opts)
}

/// Residual of Λ_{βα} − (1/f)(∂_β f p_α − ∂_α f p_β) over phase states.
pub fn lambda_f_relation(
    geom: &Geometry,
    f: &dyn Multiplier,
    states: &[Vec<f64>],
    opts: SampleOptions,
) -> Result<ResidualReport> {
    require_chaplygin(geom)?;
    let m = geom.m();
    let vals = par_residuals(states, |x| {
        let q = ChaplyginLike::point(geom, &x[..m]);
        let at = geom.derived(&q, None)?;
        let (fv, grad) = nonzero(f, &q)?;
        let p = &x[m..];
        let lam = bracket_from(&at, p, BracketKind::Chaplygin).pp_shape;
        let mut worst: f64 = 0.0;
        for be in 0..m {
            for al in 0..m {
                let v = lam[(be, al)] - (grad[be] * p[al] - grad[al] * p[be]) / fv;
                worst = worst.max(v.abs());
            }
        }
        Ok(worst)
    })?;
    Ok(ResidualReport::from_samples(&[("lambda_f", vals)], opts.seed, opts.tol))
}

/// Multiplier-free necessary condition at `r`, scaled by max |G|.
pub fn converse_at(sys: &dyn ChaplyginLike, r: &[f64]) -> Result<f64> {
    let m = sys.shape_dim();
    let (k, g) = sys.shape_tensors(r)?;
    let trace: Vec<f64> = (0..m).map(|a| (0..m).map(|b| k.get(b, a, b)).sum()).collect();
    let mut worst: f64 = 0.0;
    for al in 0..m {
        for de in 0..m {
            for nu in de..m {
                let kk: f64 = (0..m)
                    .map(|mu| k.get(mu, al, de) * g[(mu, nu)] + k.get(mu, al, nu) * g[(mu, de)])
                    .sum();
                let v = 2.0 * g[(de, nu)] * trace[al]
                    - (g[(al, nu)] * trace[de] + g[(al, de)] * trace[nu])
                    - (m as f64 - 1.0) * kk;
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst / max_abs(&g))
}

/// Samples the multiplier-free necessary condition; vacuous for two shape dimensions.
pub fn converse_check(sys: &dyn ChaplyginLike, opts: SampleOptions) -> Result<ResidualReport> {
    if sys.shape_dim() <= 2 {
        return Ok(ResidualReport::vacuous(
            "converse",
            opts.seed,
            opts.tol,
            "vacuous for two shape dimensions",
        ));
    }
    let points = sys.shape_box().halton(opts.samples, opts.seed);
    let vals = par_residuals(&points, |r| converse_at(sys, r))?;
    Ok(ResidualReport::from_samples(&[("converse", vals)], opts.seed, opts.tol))
}

/// Values of log f on grid nodes along one axis, extended on demand in both directions.
#[derive(Debug, Default)]
struct Chain {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Chain {
    fn new(v0: f64) -> Chain {
        Chain {
            pos: vec![v0],
            neg: vec![v0],
        }
    }

    /// Node `idx`; `cell(i, dir)` integrates from node i to node i + dir.
    fn get(&mut self, idx: i64, mut cell: impl FnMut(i64, i64) -> Result<f64>) -> Result<f64> {
        let (vals, dir) = if idx >= 0 { (&mut self.pos, 1) } else { (&mut self.neg, -1) };
        let n = idx.unsigned_abs() as usize;
        while vals.len() <= n {
            let i = (vals.len() as i64 - 1) * dir;
            let next = vals.last().unwrap() + cell(i, dir)?;
            vals.push(next);
        }
        Ok(vals[n])
    }
}

/// Positive abscissae and weights of the 8-point Gauss-Legendre rule on [−1, 1].
const GAUSS8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Lazily tabulated solution of d log f = −K²_{12} dr¹ + K¹_{12} dr².
///
/// Node values come from axis-aligned quadrature from the base point:
/// first along r¹, then along r². Off-node values use a short path from the
/// nearest node; the gradient is exact.
pub struct QuadratureMultiplier {
    sys: Arc<dyn ChaplyginLike>,
    base: [f64; 2],
    base_log: f64,
    spacing: f64,
    step: f64,
    ncoords: usize,
    row: Mutex<Chain>,
    cols: Mutex<HashMap<i64, Chain>>,
}

impl QuadratureMultiplier {
    pub fn new(sys: Arc<dyn ChaplyginLike>, base: [f64; 2], spacing: f64, step: f64) -> QuadratureMultiplier {
        let ncoords = sys.coords().len();
        QuadratureMultiplier {
            sys,
            base,
            base_log: 0.0,
            spacing,
            step,
            ncoords,
            row: Mutex::new(Chain::new(0.0)),
            cols: Mutex::new(HashMap::new()),
        }
    }

    /// Rescales so that f(r) = value.
    pub fn normalize_at(&mut self, r: &[f64], value: f64) -> Result<()> {
        if !(value > 0.0) {
            return Err(Error::Config("normalization value must be positive".into()));
        }
        let cur = self.log_f(r)?;
        self.base_log += value.ln() - cur;
        Ok(())
    }

    pub fn base(&self) -> [f64; 2] {
        self.base
    }

    /// (d log f/dr¹, d log f/dr²) = (−K²_{12}, K¹_{12}).
    pub fn log_gradient(&self, r: &[f64]) -> Result<[f64; 2]> {
        let (k, _) = self.sys.shape_tensors(r)?;
        Ok([-k.get(1, 0, 1), k.get(0, 0, 1)])
    }

    /// ∫ d log f along axis `axis` from `r` to coordinate `to`, by Gauss-Legendre panels.
    fn line(&self, r: [f64; 2], axis: usize, to: f64) -> Result<f64> {
        let len = to - r[axis];
        if len == 0.0 {
            return Ok(0.0);
        }
        let n = (len.abs() / self.step).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let mid = r[axis] + (i as f64 + 0.5) * h;
            for (x, w) in GAUSS8 {
                for sign in [-1.0, 1.0] {
                    let mut p = r;
                    p[axis] = mid + sign * 0.5 * h * x;
                    acc += 0.5 * h * w * self.log_gradient(&p)?[axis];
                }
            }
        }
        Ok(acc)
    }

    fn node(&self, i: i64, j: i64) -> Result<f64> {
        let (b, d) = (self.base, self.spacing);
        let x = |i: i64| b[0] + i as f64 * d;
        let y = |j: i64| b[1] + j as f64 * d;
        let root = self.row.lock().unwrap().get(i, |c, dir| self.line([x(c), b[1]], 0, x(c + dir)))?;
        let mut cols = self.cols.lock().unwrap();
        let chain = cols.entry(i).or_insert_with(|| Chain::new(root));
        chain.get(j, |c, dir| self.line([x(i), y(c)], 1, y(c + dir)))
    }

    /// log f at `r` (relative to the base normalization).
    pub fn log_f(&self, r: &[f64]) -> Result<f64> {
        let (b, d) = (self.base, self.spacing);
        let i = ((r[0] - b[0]) / d).round() as i64;
        let j = ((r[1] - b[1]) / d).round() as i64;
        let (x, y) = (b[0] + i as f64 * d, b[1] + j as f64 * d);
        let mut l = self.node(i, j)?;
        l += self.line([x, y], 0, r[0])?;
        l += self.line([r[0], y], 1, r[1])?;
        Ok(self.base_log + l)
    }

    /// log f at `r` integrated along r² first, then r¹, straight from the base.
    pub fn log_f_transposed(&self, r: &[f64]) -> Result<f64> {
        let b = self.base;
        let l = self.line(b, 1, r[1])? + self.line([b[0], r[1]], 0, r[0])?;
        Ok(self.base_log + l)
    }
}

impl Multiplier for QuadratureMultiplier {
    fn eval_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.log_f(&q[..2])?.exp();
        let g = self.log_gradient(&q[..2])?;
        let mut grad = vec![0.0; self.ncoords];
        grad[0] = f * g[0];
        grad[1] = f * g[1];
        Ok((f, grad))
    }

    fn depends_on_group(&self) -> bool {
        false
    }

    fn label(&self) -> String {
        "quadrature".into()
    }
}

/// Outcome of the two-dimensional multiplier solve.
pub struct Solve2Dof {
    pub quadrature: Arc<QuadratureMultiplier>,
    /// Closed form up to a constant factor, when a pattern matched.
    pub symbolic: Option<Expr>,
    /// Multiplier with the closed form scaled to match the quadrature.
    pub candidate: Option<MultiplierCandidate>,
    /// Largest compatibility defect found on the check grid.
    pub compatibility: f64,
    /// Largest difference between the two path orders at the check points.
    pub path_defect: f64,
}

impl Solve2Dof {
    /// The closed form when found, the quadrature otherwise.
    pub fn multiplier(&self) -> Arc<dyn Multiplier> {
        match &self.candidate {
            Some(c) => Arc::new(c.clone()),
            None => self.quadrature.clone(),
        }
    }
}

/// Options of the two-dimensional solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solve2DofOptions {
    pub grid: usize,
    pub spacing: f64,
    pub step: f64,
    pub compat_tol: f64,
}

impl Default for Solve2DofOptions {
    fn default() -> Solve2DofOptions {
        Solve2DofOptions {
            grid: 9,
            spacing: 0.05,
            step: 0.05,
            compat_tol: 1e-6,
        }
    }
}

fn grid_points(b: &SampleBox, n: usize) -> Vec<Vec<f64>> {
    let at = |d: usize, i: usize| b.lo[d] + (b.hi[d] - b.lo[d]) * (i as f64 + 0.5) / n as f64;
    (0..n).flat_map(|i| (0..n).map(move |j| vec![at(0, i), at(1, j)])).collect()
}

/// Compatibility defect ∂₁K¹_{12} + ∂₂K²_{12} at `r`, relative to the terms' size.
pub fn compatibility_at(sys: &dyn ChaplyginLike, r: &[f64]) -> Result<f64> {
    let k12 = |p: &[f64]| -> Result<(f64, f64)> {
        let (k, _) = sys.shape_tensors(p)?;
        Ok((k.get(0, 0, 1), k.get(1, 0, 1)))
    };
    let h0 = 1e-4 * (1.0 + r[0].abs());
    let h1 = 1e-4 * (1.0 + r[1].abs());
    let (a_p, _) = k12(&[r[0] + h0, r[1]])?;
    let (a_m, _) = k12(&[r[0] - h0, r[1]])?;
    let (_, b_p) = k12(&[r[0], r[1] + h1])?;
    let (_, b_m) = k12(&[r[0], r[1] - h1])?;
    let d1 = (a_p - a_m) / (2.0 * h0);
    let d2 = (b_p - b_m) / (2.0 * h1);
    Ok((d1 + d2).abs() / (1.0 + d1.abs() + d2.abs()))
}

/// Solves for the multiplier of a two-dimensional Chaplygin system.
pub fn solve_2dof(sys: Arc<dyn ChaplyginLike>, opts: Solve2DofOptions) -> Result<Solve2Dof> {
    if sys.shape_dim() != 2 {
        return Err(Error::Config(format!("solve2dof needs two shape coordinates, got {}", sys.shape_dim())));
    }
    let bx = sys.shape_box();
    let grid = grid_points(&bx, opts.grid);
    let defects = par_residuals(&grid, |r| compatibility_at(sys.as_ref(), r))?;
    let (worst_i, compatibility) = defects
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if *v > bv || v.is_nan() { (i, *v) } else { (bi, bv) });
    if !(compatibility <= opts.compat_tol) {
        return Err(Error::Incompatible {
            msg: format!("compatibility defect {compatibility:.3e}"),
            point: grid[worst_i].clone(),
        });
    }
    let base = [0.5 * (bx.lo[0] + bx.hi[0]), 0.5 * (bx.lo[1] + bx.hi[1])];
    let quad = QuadratureMultiplier::new(sys.clone(), base, opts.spacing, opts.step);
    let mut path_defect: f64 = 0.0;
    for r in grid_points(&bx, 2) {
        path_defect = path_defect.max((quad.log_f(&r)? - quad.log_f_transposed(&r)?).abs());
    }
    let quad = Arc::new(quad);
    let symbolic = match_pattern(sys.as_ref(), &quad)?;
    let candidate = match &symbolic {
        Some(expr) => {
            let coords = sys.coords();
            let names: Vec<&str> = coords.iter().map(String::as_str).collect();
            let c = MultiplierCandidate::with_coords(expr.clone(), &names, 2)?;
            let at = sys.point(&base);
            let scale = quad.value(&at)? / c.value(&at)?;
            Some(MultiplierCandidate::with_coords(expr.clone().scale(scale), &names, 2)?)
        }
        None => None,
    };
    Ok(Solve2Dof {
        quadrature: quad,
        symbolic,
        candidate,
        compatibility,
        path_defect,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pattern {
    Exp,
    OnePlusSquare,
    Power,
    Cos,
    Sin,
    Tan,
}

const PATTERNS: [Pattern; 6] = [Pattern::Exp, Pattern::OnePlusSquare, Pattern::Power, Pattern::Cos, Pattern::Sin, Pattern::Tan];

impl Pattern {
    /// The function whose log is the basis term.
    fn base(self, x: f64) -> f64 {
        match self {
            Pattern::Exp => x.exp(),
            Pattern::OnePlusSquare => 1.0 + x * x,
            Pattern::Power => x,
            Pattern::Cos => x.cos(),
            Pattern::Sin => x.sin(),
            Pattern::Tan => x.tan(),
        }
    }

    fn expr(self, name: &str, c: f64) -> Expr {
        let x = Expr::var(name);
        let b = match self {
            Pattern::Exp => return x.scale(c).apply(UnaryOp::Exp),
            Pattern::OnePlusSquare => Expr::one().add(x.powf(2.0)),
            Pattern::Power => x,
            Pattern::Cos => x.apply(UnaryOp::Cos),
            Pattern::Sin => x.apply(UnaryOp::Sin),
            Pattern::Tan => x.apply(UnaryOp::Tan),
        };
        if c == 1.0 {
            b
        } else {
            b.powf(c)
        }
    }
}

fn snap(c: f64) -> Option<f64> {
    let q = (c * 12.0).round() / 12.0;
    ((c - q).abs() < 1e-6).then_some(q)
}

/// Looks for log f = c₁ b₁(r¹) + c₂ b₂(r²) with b from a small table.
fn match_pattern(sys: &dyn ChaplyginLike, quad: &QuadratureMultiplier) -> Result<Option<Expr>> {
    let bx = sys.shape_box();
    let shrink = SampleBox {
        lo: (0..2).map(|d| bx.lo[d] + 0.1 * (bx.hi[d] - bx.lo[d])).collect(),
        hi: (0..2).map(|d| bx.hi[d] - 0.1 * (bx.hi[d] - bx.lo[d])).collect(),
    };
    let mut pts = shrink.halton(24, 1);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let base = quad.base();
    let logs: Vec<f64> = pts.iter().map(|p| quad.log_f(p)).collect::<Result<_>>()?;
    let l0 = quad.log_f(&base)?;
    let rhs = DVector::from_iterator(pts.len(), logs.iter().map(|l| l - l0));
    let scale = 1.0 + rhs.amax();
    if rhs.amax() < 1e-9 {
        return Ok(Some(Expr::one()));
    }
    let names = sys.shape_names();
    let mut choices: Vec<Vec<(usize, Pattern)>> = Vec::new();
    for d in 0..2 {
        for p in PATTERNS {
            choices.push(vec![(d, p)]);
        }
    }
    for p in PATTERNS {
        for p2 in PATTERNS {
            choices.push(vec![(0, p), (1, p2)]);
        }
    }
    'choice: for choice in choices {
        let mut cols = Vec::new();
        for &(d, p) in &choice {
            let b0 = p.base(base[d]);
            let mut col = Vec::with_capacity(pts.len());
            for x in &pts {
                let b = p.base(x[d]);
                if !(b > 0.0 && b0 > 0.0) || !b.is_finite() {
                    continue 'choice;
                }
                col.push(b.ln() - b0.ln());
            }
            cols.push(col);
        }
        let a = DMatrix::from_fn(pts.len(), cols.len(), |i, j| cols[j][i]);
        let svd = a.clone().svd(true, true);
        if svd.singular_values.min() < 1e-8 * svd.singular_values.max() {
            continue;
        }
        let c = svd.solve(&rhs, 1e-12).map_err(|e| Error::Config(e.to_string()))?;
        if (&a * &c - &rhs).amax() > 1e-8 * scale {
            continue;
        }
        let snapped: Option<Vec<f64>> = c.iter().map(|v| snap(*v)).collect();
        let Some(snapped) = snapped else { continue };
        let mut expr = Expr::one();
        for (&(d, p), c) in choice.iter().zip(snapped) {
            if c != 0.0 {
                expr = expr.mul(p.expr(&names[d], c));
            }
        }
        return Ok(Some(expr));
    }
    Ok(None)
}

/// Result of a log-linear ansatz fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub multiplier: MultiplierCandidate,
    pub report: ResidualReport,
}

/// Fits log f = Σ c_b basis_b to the Chaplygin condition by least squares.
pub fn fit_ansatz(sys: &dyn ChaplyginLike, basis: &[Expr], opts: SampleOptions) -> Result<FitResult> {
    if basis.is_empty() {
        return Err(Error::Config("ansatz basis is empty".into()));
    }
    let m = sys.shape_dim();
    let coords = sys.coords();
    let names: Vec<&str> = coords.iter().map(String::as_str).collect();
    let shape = sys.shape_names();
    let bound: Vec<Expr> = basis.iter().map(|b| sys.bind(b)).collect();
    for b in &bound {
        if let Some(v) = b.free_vars().into_iter().find(|v| !shape.contains(v)) {
            return Err(Error::Config(format!("ansatz terms may only use shape coordinates, found {v}")));
        }
    }
    let partials: Vec<Vec<Compiled>> = bound
        .iter()
        .map(|b| shape.iter().map(|s| b.diff(s).compile(&names)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let points = sys.shape_box().halton(opts.samples, opts.seed);
    let blocks: Vec<(Vec<Vec<f64>>, Vec<f64>)> = points
        .par_iter()
        .map(|r| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
            let (k, g) = sys.shape_tensors(r)?;
            let q = sys.point(r);
            let db: Vec<Vec<f64>> = partials
                .iter()
                .map(|ps| ps.iter().map(|c| c.eval(&q)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let gm = max_abs(&g);
            let (mut rows, mut rhs) = (Vec::new(), Vec::new());
            for al in 0..m {
                for de in 0..m {
                    for nu in de..m {
                        rows.push(
                            db.iter()
                                .map(|d| (d[de] * g[(al, nu)] + d[nu] * g[(al, de)] - 2.0 * d[al] * g[(de, nu)]) / gm)
                                .collect(),
                        );
                        let kk: f64 = (0..m)
                            .map(|mu| k.get(mu, al, de) * g[(mu, nu)] + k.get(mu, al, nu) * g[(mu, de)])
                            .sum();
                        rhs.push(kk / gm);
                    }
                }
            }
            Ok((rows, rhs))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<&Vec<f64>> = blocks.iter().flat_map(|b| &b.0).collect();
    let rhs: Vec<f64> = blocks.iter().flat_map(|b| b.1.iter().copied()).collect();
    let cols = basis.len();
    let a = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax.max(1e-300)).count();
    if rank < cols {
        return Err(Error::AmbiguousAnsatz { rank, cols });
    }
    let c = svd
        .solve(&DVector::from_vec(rhs), 1e-14)
        .map_err(|e| Error::Config(e.to_string()))?;
    let coefficients: Vec<f64> = c.iter().copied().collect();
    let log_f = Expr::sum(bound.iter().zip(&coefficients).map(|(b, c)| b.clone().scale(*c)));
    let multiplier = MultiplierCandidate::with_coords(log_f.apply(UnaryOp::Exp), &names, m)?;
    let check = SampleOptions {
        seed: opts.seed.wrapping_add(1),
        ..opts
    };
    let report = residuals_chaplygin(sys, &multiplier, check)?;
    Ok(FitResult {
        coefficients,
        multiplier,
        report,
    })
}
