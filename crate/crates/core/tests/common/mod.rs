//! Random expressions that stay finite on [-1, 1]^2.

#![allow(dead_code)]

use nhk::expr::{BinaryOp, Expr, UnaryOp};
use rand::Rng;

pub const VARS: [&str; 2] = ["x", "y"];

fn leaf(rng: &mut impl Rng) -> Expr {
    if rng.random_bool(0.6) {
        Expr::var(VARS[rng.random_range(0..2)])
    } else {
        Expr::constant((rng.random_range(-8..=8) as f64) / 4.0)
    }
}

fn positive(a: Expr) -> Expr {
    Expr::raw_binary(BinaryOp::Add, Expr::one(), Expr::raw_binary(BinaryOp::Mul, a.clone(), a))
}

fn bounded(a: Expr) -> Expr {
    Expr::raw_binary(BinaryOp::Mul, Expr::constant(0.5), Expr::raw_unary(UnaryOp::Sin, a))
}

/// A random expression tree of at most `depth` levels.
pub fn random_expr(rng: &mut impl Rng, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.2) {
        return leaf(rng);
    }
    let a = random_expr(rng, depth - 1);
    match rng.random_range(0..13) {
        0 => Expr::raw_binary(BinaryOp::Add, a, random_expr(rng, depth - 1)),
        1 => Expr::raw_binary(BinaryOp::Sub, a, random_expr(rng, depth - 1)),
        2 | 3 => Expr::raw_binary(BinaryOp::Mul, a, random_expr(rng, depth - 1)),
        4 => Expr::raw_binary(BinaryOp::Div, a, positive(random_expr(rng, depth - 1))),
        5 => {
            let base = if matches!(a, Expr::Var(_) | Expr::Const(_)) { a } else { bounded(a) };
            Expr::raw_binary(BinaryOp::Pow, base, Expr::constant(rng.random_range(2..=3) as f64))
        }
        6 => Expr::raw_binary(BinaryOp::Pow, positive(a), Expr::constant([-0.5, 1.0 / 3.0][rng.random_range(0..2)])),
        7 => Expr::raw_unary([UnaryOp::Sin, UnaryOp::Cos][rng.random_range(0..2)], a),
        8 => Expr::raw_unary(UnaryOp::Exp, bounded(a)),
        9 => Expr::raw_unary(UnaryOp::Log, positive(a)),
        10 => Expr::raw_unary(UnaryOp::Sqrt, positive(a)),
        11 => Expr::raw_unary([UnaryOp::Tan, UnaryOp::Sec][rng.random_range(0..2)], bounded(a)),
        _ => Expr::raw_unary(UnaryOp::Neg, a),
    }
}

/// Ridders' extrapolated central difference of `e` in variable `i` at `at`, with its error estimate.
pub fn fd_partial(e: &Expr, i: usize, at: &[f64]) -> nhk::Result<(f64, f64)> {
    let central = |h: f64| -> nhk::Result<f64> {
        let mut p = at.to_vec();
        let mut m = at.to_vec();
        p[i] += h;
        m[i] -= h;
        Ok((e.eval_at(&VARS, &p)? - e.eval_at(&VARS, &m)?) / (2.0 * h))
    };
    const SHRINK: f64 = 1.4;
    const ROUNDS: usize = 20;
    let mut h = 0.02;
    let mut table = vec![vec![0.0; ROUNDS]; ROUNDS];
    table[0][0] = central(h)?;
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for k in 1..ROUNDS {
        h /= SHRINK;
        table[0][k] = central(h)?;
        let mut fac = SHRINK * SHRINK;
        for j in 1..=k {
            table[j][k] = (table[j - 1][k] * fac - table[j - 1][k - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][k] - table[j - 1][k]).abs().max((table[j][k] - table[j - 1][k - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][k];
            }
        }
    }
    Ok((best, err))
}

/// |symbolic - finite difference| scaled by max(1, |symbolic|), worst over both variables.
/// None when the finite difference cannot resolve `e` at `at`.
pub fn derivative_defect(e: &Expr, at: &[f64]) -> nhk::Result<Option<f64>> {
    let mut worst: f64 = 0.0;
    for (i, v) in VARS.iter().enumerate() {
        let (fd, err) = fd_partial(e, i, at)?;
        if err > 1e-9 * fd.abs().max(1.0) {
            return Ok(None);
        }
        let sym = e.diff(v).eval_at(&VARS, at)?;
        worst = worst.max((sym - fd).abs() / sym.abs().max(1.0));
    }
    Ok(Some(worst))
}
