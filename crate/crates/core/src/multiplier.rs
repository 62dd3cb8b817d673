//! Reducing-multiplier fields f(r, g).

use crate::expr::{parse_with_vars, Compiled, Expr};
use crate::system::SystemDef;
use crate::{Error, Result};

/// A scalar field with gradient over a coordinate list (shape first, then group).
pub trait Multiplier: Send + Sync {
    /// f(q) and ∂f/∂q.
    fn eval_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(self.eval_grad(q)?.0)
    }

    /// True when f depends on some group coordinate.
    fn depends_on_group(&self) -> bool;

    /// Closed form, when one is known.
    fn expr(&self) -> Option<Expr> {
        None
    }

    fn label(&self) -> String;
}

/// Evaluates f and rejects points where it vanishes.
pub fn nonzero(f: &dyn Multiplier, q: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (v, g) = f.eval_grad(q)?;
    if v == 0.0 || v.abs() < 1e-300 {
        return Err(Error::MultiplierVanishes(q.to_vec()));
    }
    Ok((v, g))
}

/// A symbolic multiplier with exact partial derivatives.
#[derive(Clone, Debug)]
pub struct MultiplierCandidate {
    pub expr: Expr,
    pub partials: Vec<Expr>,
    pub coords: Vec<String>,
    shape_dim: usize,
    value: Compiled,
    grad: Vec<Compiled>,
}

impl MultiplierCandidate {
    /// Builds f over `coords`, whose first `shape_dim` entries are shape coordinates.
    pub fn with_coords(expr: Expr, coords: &[&str], shape_dim: usize) -> Result<MultiplierCandidate> {
        if let Some(v) = expr.free_vars().into_iter().find(|v| !coords.contains(&v.as_str())) {
            return Err(Error::UnknownIdentifier(v));
        }
        let partials: Vec<Expr> = coords.iter().map(|c| expr.diff(c)).collect();
        let value = expr.compile(coords)?;
        let grad = partials.iter().map(|p| p.compile(coords)).collect::<Result<_>>()?;
        Ok(MultiplierCandidate {
            expr,
            partials,
            coords: coords.iter().map(|c| c.to_string()).collect(),
            shape_dim,
            value,
            grad,
        })
    }

    /// Builds f over a system's coordinates, with its parameters bound.
    pub fn for_system(expr: &Expr, sys: &SystemDef) -> Result<MultiplierCandidate> {
        let bound = sys.bind_parameters(expr);
        MultiplierCandidate::with_coords(bound, &sys.coordinate_names(), sys.m())
    }

    pub fn parse(text: &str, sys: &SystemDef) -> Result<MultiplierCandidate> {
        let mut vars = sys.coordinate_names();
        vars.extend(sys.parameters.keys().map(String::as_str));
        let e = parse_with_vars(text, &vars)?;
        MultiplierCandidate::for_system(&e, sys)
    }

    pub fn constant(c: f64, sys: &SystemDef) -> MultiplierCandidate {
        MultiplierCandidate::for_system(&Expr::Const(c), sys).expect("constants compile")
    }
}

impl Multiplier for MultiplierCandidate {
    fn eval_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.value.eval(q)?;
        let g = self.grad.iter().map(|c| c.eval(q)).collect::<Result<_>>()?;
        Ok((v, g))
    }

    fn depends_on_group(&self) -> bool {
        self.partials[self.shape_dim..].iter().any(|p| !p.is_zero())
    }

    fn expr(&self) -> Option<Expr> {
        Some(self.expr.clone())
    }

    fn label(&self) -> String {
        self.expr.to_string()
    }
}
