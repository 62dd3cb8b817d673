//! A canonical sum-of-monomials form used to decide symbolic equivalence.
//!
//! Products are expanded, like terms merged, and powers of a common base
//! combined. Function applications and non-polynomial powers of sums become
//! opaque atoms whose arguments are themselves canonical. Coefficients are
//! rounded to 12 significant digits so that round-off does not split terms.
//! This is not a general simplifier: `sin(x)^2 + cos(x)^2` stays as it is.

use std::collections::BTreeMap;
use std::fmt;

use super::{eval, BinaryOp, Expr, UnaryOp};

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// A small rational exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Q {
    n: i64,
    d: i64,
}

impl Q {
    fn new(n: i64, d: i64) -> Q {
        let g = gcd(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        Q { n: s * n / g, d: s * d / g }
    }

    fn int(n: i64) -> Q {
        Q { n, d: 1 }
    }

    fn add(self, o: Q) -> Q {
        Q::new(self.n * o.d + o.n * self.d, self.d * o.d)
    }

    fn mul(self, o: Q) -> Q {
        Q::new(self.n * o.n, self.d * o.d)
    }

    fn is_int(self) -> bool {
        self.d == 1
    }

    fn is_zero(self) -> bool {
        self.n == 0
    }

    fn to_f64(self) -> f64 {
        self.n as f64 / self.d as f64
    }

    fn from_f64(x: f64) -> Option<Q> {
        if !x.is_finite() || x.abs() > 1e9 {
            return None;
        }
        (1..=64).find_map(|d| {
            let n = (x * d as f64).round();
            ((n / d as f64 - x).abs() <= 1e-12 * x.abs().max(1.0)).then(|| Q::new(n as i64, d))
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Coef(f64);

impl PartialEq for Coef {
    fn eq(&self, o: &Self) -> bool {
        self.0.total_cmp(&o.0).is_eq()
    }
}
impl Eq for Coef {}
impl PartialOrd for Coef {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Coef {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

fn snap(c: f64) -> f64 {
    if c == 0.0 || !c.is_finite() {
        return c;
    }
    format!("{c:.11e}").parse().unwrap_or(c)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Atom {
    Var(String),
    Func(UnaryOp, Poly),
    Base(Poly),
    Pow(Poly, Poly),
}

type Mono = BTreeMap<Atom, Q>;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
struct Poly {
    terms: BTreeMap<Mono, Coef>,
}

impl Poly {
    fn constant(c: f64) -> Poly {
        let mut p = Poly::default();
        p.push(Mono::new(), c);
        p
    }

    fn atom(a: Atom, q: Q) -> Poly {
        let mut m = Mono::new();
        m.insert(a, q);
        let mut p = Poly::default();
        p.push(m, 1.0);
        p
    }

    fn push(&mut self, m: Mono, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.get(&m).map(|x| x.0) {
            Some(old) => {
                let s = old + c;
                if s.abs() <= 1e-12 * old.abs().max(c.abs()) {
                    self.terms.remove(&m);
                } else {
                    self.terms.insert(m, Coef(snap(s)));
                }
            }
            None => {
                self.terms.insert(m, Coef(snap(c)));
            }
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_empty().then_some(c.0)
            }
            _ => None,
        }
    }

    fn single(&self) -> Option<(&Mono, f64)> {
        if self.terms.len() == 1 {
            self.terms.iter().next().map(|(m, c)| (m, c.0))
        } else {
            None
        }
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut p = self.clone();
        for (m, c) in &o.terms {
            p.push(m.clone(), c.0);
        }
        p
    }

    fn scale(&self, s: f64) -> Poly {
        let mut p = Poly::default();
        for (m, c) in &self.terms {
            p.push(m.clone(), c.0 * s);
        }
        p
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut p = Poly::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                let mut m = ma.clone();
                for (atom, q) in mb {
                    let e = m.get(atom).copied().unwrap_or(Q::int(0)).add(*q);
                    if e.is_zero() {
                        m.remove(atom);
                    } else {
                        m.insert(atom.clone(), e);
                    }
                }
                p = p.add(&expand_integer_bases(m, ca.0 * cb.0));
            }
        }
        p
    }

    fn pow(&self, q: Q) -> Poly {
        if q.is_zero() {
            return Poly::constant(1.0);
        }
        if let Some(c) = self.as_const() {
            if let Ok(v) = eval::apply_binary(BinaryOp::Pow, c, q.to_f64()) {
                return Poly::constant(v);
            }
        }
        if let Some((m, c)) = self.single() {
            let exps_ok = q.is_int() || m.values().all(|e| e.n.abs() == 1 && e.d == 1);
            if exps_ok && (q.is_int() || c > 0.0) {
                let mut out = Mono::new();
                for (a, e) in m {
                    out.insert(a.clone(), e.mul(q));
                }
                return expand_integer_bases(out, c.powf(q.to_f64()));
            }
            return Poly::atom(Atom::Base(self.clone()), q);
        }
        if q.is_int() && q.n > 0 && q.n <= 6 {
            let mut p = self.clone();
            for _ in 1..q.n {
                p = p.mul(self);
            }
            return p;
        }
        let lead = self.terms.values().next().map(|c| c.0).unwrap_or(1.0);
        if lead > 0.0 || q.is_int() {
            let base = self.scale(1.0 / lead);
            Poly::atom(Atom::Base(base), q).scale(lead.powf(q.to_f64()))
        } else {
            Poly::atom(Atom::Base(self.clone()), q)
        }
    }

    fn inverse(&self) -> Poly {
        self.pow(Q::int(-1))
    }

    fn to_expr(&self) -> Expr {
        let mut out: Option<Expr> = None;
        for (m, c) in &self.terms {
            let mut term: Option<Expr> = None;
            for (a, q) in m {
                let base = match a {
                    Atom::Var(v) => Expr::var(v),
                    Atom::Func(op, p) => Expr::raw_unary(*op, p.to_expr()),
                    Atom::Base(p) => p.to_expr(),
                    Atom::Pow(b, e) => Expr::raw_binary(BinaryOp::Pow, b.to_expr(), e.to_expr()),
                };
                let f = if *q == Q::int(1) {
                    base
                } else {
                    Expr::raw_binary(BinaryOp::Pow, base, Expr::Const(q.to_f64()))
                };
                term = Some(match term {
                    None => f,
                    Some(t) => Expr::raw_binary(BinaryOp::Mul, t, f),
                });
            }
            let (neg, mag) = (c.0 < 0.0, c.0.abs());
            let term = match term {
                None => Expr::Const(mag),
                Some(t) if mag == 1.0 => t,
                Some(t) => Expr::raw_binary(BinaryOp::Mul, Expr::Const(mag), t),
            };
            out = Some(match (out, neg) {
                (None, false) => term,
                (None, true) => Expr::raw_unary(UnaryOp::Neg, term),
                (Some(o), false) => Expr::raw_binary(BinaryOp::Add, o, term),
                (Some(o), true) => Expr::raw_binary(BinaryOp::Sub, o, term),
            });
        }
        out.unwrap_or(Expr::Const(0.0))
    }
}

/// Multiplies out any sum base that ended up with a positive integer exponent.
fn expand_integer_bases(mut m: Mono, c: f64) -> Poly {
    let key = m
        .iter()
        .find(|(a, q)| matches!(a, Atom::Base(_)) && q.is_int() && q.n > 0)
        .map(|(a, q)| (a.clone(), *q));
    match key {
        None => {
            let mut p = Poly::default();
            p.push(m, c);
            p
        }
        Some((atom, q)) => {
            m.remove(&atom);
            let Atom::Base(base) = atom else { unreachable!() };
            let rest = expand_integer_bases(m, c);
            rest.mul(&base.pow(q))
        }
    }
}

fn canon(e: &Expr) -> Poly {
    match e {
        Expr::Const(c) => Poly::constant(*c),
        Expr::Var(v) => Poly::atom(Atom::Var(v.to_string()), Q::int(1)),
        Expr::Unary(op, a) => {
            let p = canon(a);
            match op {
                UnaryOp::Neg => p.scale(-1.0),
                UnaryOp::Sqrt => p.pow(Q::new(1, 2)),
                _ => match p.as_const().map(|c| eval::apply_unary(*op, c)) {
                    Some(Ok(v)) => Poly::constant(v),
                    _ => Poly::atom(Atom::Func(*op, p), Q::int(1)),
                },
            }
        }
        Expr::Binary(op, a, b) => {
            let (pa, pb) = (canon(a), canon(b));
            match op {
                BinaryOp::Add => pa.add(&pb),
                BinaryOp::Sub => pa.add(&pb.scale(-1.0)),
                BinaryOp::Mul => pa.mul(&pb),
                BinaryOp::Div => match pb.as_const() {
                    Some(c) if c != 0.0 => pa.scale(1.0 / c),
                    _ => pa.mul(&pb.inverse()),
                },
                BinaryOp::Pow => match pb.as_const().and_then(Q::from_f64) {
                    Some(q) => pa.pow(q),
                    None => Poly::atom(Atom::Pow(pa, pb), Q::int(1)),
                },
            }
        }
    }
}

/// Canonical form of an expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Canonical(Poly);

impl Canonical {
    pub fn of(e: &Expr) -> Canonical {
        Canonical(canon(e))
    }

    /// The canonical form rebuilt as an expression tree.
    pub fn to_expr(&self) -> Expr {
        self.0.to_expr()
    }

    pub fn term_count(&self) -> usize {
        self.0.terms.len()
    }
}

impl fmt::Display for Canonical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expr())
    }
}

/// True when both expressions have the same canonical form.
pub fn equivalent(a: &Expr, b: &Expr) -> bool {
    Canonical::of(a) == Canonical::of(b)
}
