use std::collections::HashMap;

use super::{BinaryOp, Expr, UnaryOp};
use crate::{Error, Result};

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Singularity(format!("{what} is not finite")))
    }
}

pub(crate) fn apply_unary(op: UnaryOp, a: f64) -> Result<f64> {
    let v = match op {
        UnaryOp::Neg => -a,
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Tan => {
            if a.cos() == 0.0 {
                return Err(Error::Singularity(format!("tan({a})")));
            }
            a.tan()
        }
        UnaryOp::Sec => {
            let c = a.cos();
            if c == 0.0 {
                return Err(Error::Singularity(format!("sec({a})")));
            }
            1.0 / c
        }
        UnaryOp::Csc => {
            let s = a.sin();
            if s == 0.0 {
                return Err(Error::Singularity(format!("csc({a})")));
            }
            1.0 / s
        }
        UnaryOp::Cot => {
            let s = a.sin();
            if s == 0.0 {
                return Err(Error::Singularity(format!("cot({a})")));
            }
            a.cos() / s
        }
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => {
            if a <= 0.0 {
                return Err(Error::Singularity(format!("log of nonpositive {a}")));
            }
            a.ln()
        }
        UnaryOp::Sqrt => {
            if a < 0.0 {
                return Err(Error::Singularity(format!("sqrt of negative {a}")));
            }
            a.sqrt()
        }
    };
    finite(v, op.name())
}

pub(crate) fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64> {
    let v = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(Error::Singularity("division by zero".into()));
            }
            a / b
        }
        BinaryOp::Pow => {
            if a == 0.0 && b < 0.0 {
                return Err(Error::Singularity("zero to a negative power".into()));
            }
            if a < 0.0 && b.fract() != 0.0 {
                return Err(Error::Singularity(format!("{a} to the non-integer power {b}")));
            }
            if b.fract() == 0.0 && b.abs() <= 64.0 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
    };
    finite(v, "result")
}

/// Evaluates `e` with variables looked up in `env`.
pub fn evaluate(e: &Expr, env: &HashMap<String, f64>) -> Result<f64> {
    e.eval_with(&|name| env.get(name).copied())
}

impl Expr {
    /// Evaluates with an arbitrary variable lookup.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => lookup(v).ok_or_else(|| Error::Unbound(v.to_string())),
            Expr::Unary(op, a) => apply_unary(*op, a.eval_with(lookup)?),
            Expr::Binary(op, a, b) => apply_binary(*op, a.eval_with(lookup)?, b.eval_with(lookup)?),
        }
    }

    /// Evaluates with variables bound positionally to `names`.
    pub fn eval_at(&self, names: &[&str], values: &[f64]) -> Result<f64> {
        self.eval_with(&|n| names.iter().position(|m| *m == n).map(|i| values[i]))
    }

    /// Compiles to a postfix program over the given variable ordering.
    pub fn compile(&self, names: &[&str]) -> Result<Compiled> {
        let mut ops = Vec::with_capacity(self.size());
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        self.emit(names, &mut ops, &mut depth, &mut max_depth)?;
        Ok(Compiled { ops, stack: max_depth })
    }

    fn emit(
        &self,
        names: &[&str],
        ops: &mut Vec<Op>,
        depth: &mut usize,
        max_depth: &mut usize,
    ) -> Result<()> {
        match self {
            Expr::Const(c) => {
                ops.push(Op::Const(*c));
                *depth += 1;
            }
            Expr::Var(v) => {
                let i = names
                    .iter()
                    .position(|n| **n == **v)
                    .ok_or_else(|| Error::Unbound(v.to_string()))?;
                ops.push(Op::Var(i));
                *depth += 1;
            }
            Expr::Unary(op, a) => {
                a.emit(names, ops, depth, max_depth)?;
                ops.push(Op::Unary(*op));
            }
            Expr::Binary(op, a, b) => {
                a.emit(names, ops, depth, max_depth)?;
                b.emit(names, ops, depth, max_depth)?;
                ops.push(Op::Binary(*op));
                *depth -= 1;
            }
        }
        *max_depth = (*max_depth).max(*depth);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// An expression compiled against a fixed variable ordering.
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
    stack: usize,
}

impl Compiled {
    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        if let [Op::Const(c)] = self.ops.as_slice() {
            return Ok(*c);
        }
        let mut stack: Vec<f64> = Vec::with_capacity(self.stack);
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(i) => stack.push(vars[i]),
                Op::Unary(u) => {
                    let a = stack.pop().expect("stack underflow");
                    stack.push(apply_unary(u, a)?);
                }
                Op::Binary(b) => {
                    let y = stack.pop().expect("stack underflow");
                    let x = stack.pop().expect("stack underflow");
                    stack.push(apply_binary(b, x, y)?);
                }
            }
        }
        Ok(stack[0])
    }

    pub fn is_const(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(_)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn builtin_expressions_evaluate() {
        let e = parse("cos(q1)").unwrap();
        assert_eq!(evaluate(&e, &env(&[("q1", 0.0)])).unwrap(), 1.0);
        let t = parse("tan(phi)").unwrap();
        let v = evaluate(&t, &env(&[("phi", std::f64::consts::FRAC_PI_4)])).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let r = parse("1/x").unwrap();
        assert!(matches!(evaluate(&r, &env(&[("x", 0.0)])), Err(Error::Singularity(_))));
        let f = parse("(1+x^2)^(-1/2)").unwrap();
        assert_eq!(evaluate(&f, &env(&[("x", 0.0)])).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors() {
        let cases = ["log(x)", "sqrt(x - 1)", "x^0.5", "cot(x)", "csc(x)"];
        for c in cases {
            let e = parse(c).unwrap();
            let x = if c == "x^0.5" { -1.0 } else { 0.0 };
            assert!(matches!(evaluate(&e, &env(&[("x", x)])), Err(Error::Singularity(_))), "{c}");
        }
        let e = parse("exp(x)").unwrap();
        assert!(evaluate(&e, &env(&[("x", 1000.0)])).is_err());
        assert_eq!(evaluate(&e, &env(&[])), Err(Error::Unbound("x".into())));
    }

    #[test]
    fn compiled_matches_tree() {
        let e = parse("sin(x)*y^2 - exp(-x/y) + sqrt(1 + x^2)").unwrap();
        let c = e.compile(&["x", "y"]).unwrap();
        for (x, y) in [(0.3, 1.2), (-1.0, 0.7), (2.0, -3.0)] {
            let a = c.eval(&[x, y]).unwrap();
            let b = evaluate(&e, &env(&[("x", x), ("y", y)])).unwrap();
            assert_eq!(a, b);
        }
        assert!(e.compile(&["x"]).is_err());
    }
}
