//! Scalar field expressions.
//!
//! Every coordinate-dependent coefficient of a system (metric entries, connection
//! components, body frames, multipliers) is an [`Expr`]. Expressions are immutable
//! trees with shared children, so cloning and differentiating are cheap.
//!
//! Grammar accepted by [`parse`]:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?
//! atom    := number | ident | func "(" expr ")" | "(" expr ")"
//! number  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
//! func    := sin | cos | tan | sec | csc | cot | exp | log | sqrt
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-x^2` is
//! `-(x^2)`. The identifier `pi` denotes the constant.

mod canon;
mod diff;
mod eval;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use canon::{equivalent, Canonical};
pub use eval::{evaluate, Compiled};
pub use parse::{parse, parse_with_vars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Sec,
    Csc,
    Cot,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Sec => "sec",
            UnaryOp::Csc => "csc",
            UnaryOp::Cot => "cot",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "sec" => UnaryOp::Sec,
            "csc" => UnaryOp::Csc,
            "cot" => UnaryOp::Cot,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Arc<str>),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(Arc::from(name))
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Unary node without folding, as produced by the parser.
    pub fn raw_unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Arc::new(a))
    }

    /// Binary node without folding, as produced by the parser.
    pub fn raw_binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Arc::new(a), Arc::new(b))
    }

    /// Unary node with constant folding.
    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if let Expr::Const(c) = a {
            if let Ok(v) = eval::apply_unary(op, c) {
                return Expr::Const(v);
            }
        }
        if op == UnaryOp::Neg {
            if let Expr::Unary(UnaryOp::Neg, inner) = &a {
                return (**inner).clone();
            }
        }
        Expr::raw_unary(op, a)
    }

    /// Binary node with the light folding rules: constant arithmetic and the
    /// identities `0 + x`, `x - 0`, `0 - x`, `0 * x`, `1 * x`, `x / 1`, `x ^ 1`, `x ^ 0`.
    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
            if let Ok(v) = eval::apply_binary(op, *x, *y) {
                return Expr::Const(v);
            }
        }
        match op {
            BinaryOp::Add => {
                if a.is_zero() {
                    return b;
                }
                if b.is_zero() {
                    return a;
                }
            }
            BinaryOp::Sub => {
                if b.is_zero() {
                    return a;
                }
                if a.is_zero() {
                    return Expr::unary(UnaryOp::Neg, b);
                }
            }
            BinaryOp::Mul => {
                if a.is_zero() || b.is_zero() {
                    return Expr::zero();
                }
                if a.is_one() {
                    return b;
                }
                if b.is_one() {
                    return a;
                }
                if a.as_const() == Some(-1.0) {
                    return Expr::unary(UnaryOp::Neg, b);
                }
                if b.as_const() == Some(-1.0) {
                    return Expr::unary(UnaryOp::Neg, a);
                }
            }
            BinaryOp::Div => {
                if b.is_one() {
                    return a;
                }
                if a.is_zero() {
                    return Expr::zero();
                }
            }
            BinaryOp::Pow => {
                if b.is_one() {
                    return a;
                }
                if b.is_zero() {
                    return Expr::one();
                }
            }
        }
        Expr::raw_binary(op, a, b)
    }

    pub fn add(self, other: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, self, other)
    }

    pub fn sub(self, other: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, self, other)
    }

    pub fn mul(self, other: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, self, other)
    }

    pub fn div(self, other: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, self, other)
    }

    pub fn pow(self, other: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, self, other)
    }

    pub fn powf(self, c: f64) -> Expr {
        Expr::binary(BinaryOp::Pow, self, Expr::Const(c))
    }

    pub fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }

    pub fn scale(self, c: f64) -> Expr {
        Expr::Const(c).mul(self)
    }

    pub fn apply(self, op: UnaryOp) -> Expr {
        Expr::unary(op, self)
    }

    /// Sum of the terms, folding as it goes; the empty sum is zero.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Names of all variables occurring in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.to_string());
            }
            Expr::Unary(_, a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn contains_var(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => &**v == name,
            Expr::Unary(_, a) => a.contains_var(name),
            Expr::Binary(_, a, b) => a.contains_var(name) || b.contains_var(name),
        }
    }

    /// Replaces variables by expressions, refolding the result.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(v) => map.get(&**v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(map)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(map), b.substitute(map)),
        }
    }

    /// Rebuilds the tree through the folding constructors.
    pub fn fold(&self) -> Expr {
        self.substitute(&BTreeMap::new())
    }

    /// Exact symbolic derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Expr {
        diff::differentiate(self, var)
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Expr::Const(_) | Expr::Var(_) => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(_, _) => 5,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
            Expr::Binary(BinaryOp::Pow, _, _) => 4,
        }
    }
}

/// Symbolic derivative of `e` with respect to `var`.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    e.diff(var)
}

pub(crate) fn format_number(c: f64) -> String {
    let a = c.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{c:e}")
    } else {
        format!("{c}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c == 0.0 && c.is_sign_negative() {
                    write!(f, "-0")
                } else {
                    write!(f, "{}", format_number(*c))
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                if a.precedence() == 3 {
                    write!(f, "({a})")
                } else {
                    write_child(f, a, 3)
                }
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let (sym, prec) = match op {
                    BinaryOp::Add => (" + ", 1),
                    BinaryOp::Sub => (" - ", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                    BinaryOp::Pow => ("^", 4),
                };
                if *op == BinaryOp::Pow {
                    write_child(f, a, 5)?;
                    write!(f, "{sym}")?;
                    write_child(f, b, 3)
                } else {
                    write_child(f, a, prec)?;
                    write!(f, "{sym}")?;
                    write_child(f, b, prec + 1)
                }
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Expr> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printer_parenthesizes_by_precedence() {
        let e = parse("-(a+b)*c^-2 - (d - e)").unwrap();
        assert_eq!(e.to_string(), "-(a + b)*c^-2 - (d - e)");
        let p = parse("(x^2)^3").unwrap();
        assert_eq!(p.to_string(), "(x^2)^3");
        let r = parse("x^y^z").unwrap();
        assert_eq!(r.to_string(), "x^y^z");
    }

    #[test]
    fn folding_identities() {
        let x = Expr::var("x");
        assert_eq!(x.clone().mul(Expr::one()), x);
        assert_eq!(Expr::zero().mul(x.clone()), Expr::zero());
        assert_eq!(x.clone().pow(Expr::one()), x);
        assert_eq!(Expr::Const(2.0).add(Expr::Const(3.0)), Expr::Const(5.0));
        assert_eq!(x.clone().neg().neg(), x);
    }

    #[test]
    fn folding_keeps_singular_constants_symbolic() {
        let e = Expr::Const(1.0).div(Expr::zero());
        assert!(matches!(e, Expr::Binary(BinaryOp::Div, _, _)));
        assert!(evaluate(&e, &Default::default()).is_err());
    }

    #[test]
    fn free_vars_and_substitute() {
        let e = parse("x*y + sin(z)").unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, ["x", "y", "z"]);
        let mut map = BTreeMap::new();
        map.insert("y".to_string(), Expr::Const(0.0));
        assert_eq!(e.substitute(&map).to_string(), "sin(z)");
    }
}
