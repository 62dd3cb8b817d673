use super::{BinaryOp, Expr, UnaryOp};

pub(crate) fn differentiate(e: &Expr, var: &str) -> Expr {
    match e {
        Expr::Const(_) => Expr::zero(),
        Expr::Var(v) => {
            if &**v == var {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Unary(op, a) => {
            let da = differentiate(a, var);
            if da.is_zero() {
                return Expr::zero();
            }
            let u = (**a).clone();
            let outer = match op {
                UnaryOp::Neg => return da.neg(),
                UnaryOp::Sin => u.apply(UnaryOp::Cos),
                UnaryOp::Cos => u.apply(UnaryOp::Sin).neg(),
                UnaryOp::Tan => u.apply(UnaryOp::Sec).powf(2.0),
                UnaryOp::Sec => u.clone().apply(UnaryOp::Sec).mul(u.apply(UnaryOp::Tan)),
                UnaryOp::Csc => u.clone().apply(UnaryOp::Csc).mul(u.apply(UnaryOp::Cot)).neg(),
                UnaryOp::Cot => u.apply(UnaryOp::Csc).powf(2.0).neg(),
                UnaryOp::Exp => e.clone(),
                UnaryOp::Log => return da.div(u),
                UnaryOp::Sqrt => return da.div(Expr::Const(2.0).mul(e.clone())),
            };
            outer.mul(da)
        }
        Expr::Binary(op, a, b) => {
            let (u, v) = ((**a).clone(), (**b).clone());
            let du = differentiate(a, var);
            let dv = differentiate(b, var);
            match op {
                BinaryOp::Add => du.add(dv),
                BinaryOp::Sub => du.sub(dv),
                BinaryOp::Mul => du.mul(v).add(u.mul(dv)),
                BinaryOp::Div => {
                    if dv.is_zero() {
                        du.div(v)
                    } else {
                        du.mul(v.clone()).sub(u.mul(dv)).div(v.powf(2.0))
                    }
                }
                BinaryOp::Pow => {
                    if !v.contains_var(var) {
                        let vm1 = v.clone().sub(Expr::one());
                        v.mul(u.pow(vm1)).mul(du)
                    } else if !u.contains_var(var) {
                        e.clone().mul(u.apply(UnaryOp::Log)).mul(dv)
                    } else {
                        let inner = dv
                            .mul(u.clone().apply(UnaryOp::Log))
                            .add(v.mul(du).div(u));
                        e.clone().mul(inner)
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{evaluate, parse, Expr};
    use std::collections::HashMap;

    fn at(e: &Expr, x: f64) -> f64 {
        let mut env = HashMap::new();
        env.insert("x".to_string(), x);
        evaluate(e, &env).unwrap()
    }

    #[test]
    fn power_rule_prints_folded() {
        let e = parse("x^2").unwrap();
        assert_eq!(e.diff("x").to_string(), "2*x");
        assert_eq!(parse("y*z").unwrap().diff("x"), Expr::zero());
    }

    #[test]
    fn tangent_derivative_is_secant_squared() {
        let d = parse("tan(x)").unwrap().diff("x");
        let s = 1.0 / 0.3f64.cos();
        assert!((at(&d, 0.3) - s * s).abs() < 1e-14);
    }

    #[test]
    fn multiplier_derivative_matches_central_difference() {
        let f = parse("(1+x^2)^(-1/2)").unwrap();
        let d = f.diff("x");
        let h = 1e-5;
        let fd = (at(&f, 1.0 + h) - at(&f, 1.0 - h)) / (2.0 * h);
        assert!((at(&d, 1.0) - fd).abs() < 1e-9);
        assert!((at(&d, 1.0) + 1.0 / 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn variable_exponent() {
        let d = parse("x^x").unwrap().diff("x");
        let expect = 2f64.powf(2.0) * (2f64.ln() + 1.0);
        assert!((at(&d, 2.0) - expect).abs() < 1e-12);
        let g = parse("2^x").unwrap().diff("x");
        assert!((at(&g, 1.0) - 2.0 * 2f64.ln()).abs() < 1e-14);
    }
}
