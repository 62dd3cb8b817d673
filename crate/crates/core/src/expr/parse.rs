use super::{BinaryOp, Expr, UnaryOp};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s = &text[start..i];
            let v: f64 = s.parse().map_err(|_| Error::Syntax {
                pos: start,
                msg: format!("malformed number `{s}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(Error::Syntax {
                        pos: i,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((tok, i));
            i += c.len_utf8();
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::End => "unexpected end of input".into(),
        Tok::Num(v) => format!("unexpected number {v}"),
        Tok::Ident(s) => format!("unexpected identifier `{s}`"),
        Tok::Op(c) => format!("unexpected `{c}`"),
        Tok::LParen => "unexpected `(`".into(),
        Tok::RParen => "unexpected `)`".into(),
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vars: Option<&'a [&'a str]>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self) -> Error {
        Error::Syntax {
            pos: self.pos(),
            msg: describe(self.peek()),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::raw_binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::raw_binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            if matches!(self.peek(), Tok::Num(_)) {
                return Ok(match self.power()? {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::raw_unary(UnaryOp::Neg, other),
                });
            }
            let inner = self.unary()?;
            return Ok(Expr::raw_unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::raw_binary(BinaryOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(Error::Syntax {
                        pos: self.pos(),
                        msg: "expected `)`".into(),
                    });
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let op = UnaryOp::from_name(&name).ok_or(Error::UnknownIdentifier(name))?;
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return Err(Error::Syntax {
                            pos: self.pos(),
                            msg: "expected `)`".into(),
                        });
                    }
                    self.bump();
                    return Ok(Expr::raw_unary(op, arg));
                }
                if UnaryOp::from_name(&name).is_some() {
                    return Err(Error::Syntax {
                        pos: self.pos(),
                        msg: format!("expected `(` after `{name}`"),
                    });
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(vars) = self.vars {
                    if !vars.contains(&name.as_str()) {
                        return Err(Error::UnknownIdentifier(name));
                    }
                }
                Ok(Expr::var(&name))
            }
            other => Err(Error::Syntax {
                pos,
                msg: describe(&other),
            }),
        }
    }
}

fn run(text: &str, vars: Option<&[&str]>) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0, vars };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected());
    }
    Ok(e)
}

/// Parses an expression; any identifier that is not a function name is a variable.
pub fn parse(text: &str) -> Result<Expr> {
    run(text, None)
}

/// Parses an expression, rejecting identifiers outside `vars`.
pub fn parse_with_vars(text: &str, vars: &[&str]) -> Result<Expr> {
    run(text, Some(vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_error_reports_offset() {
        match parse("x +* y") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("(x"), Err(Error::Syntax { pos: 2, .. })));
        assert!(matches!(parse(""), Err(Error::Syntax { pos: 0, .. })));
        assert!(matches!(parse("x y"), Err(Error::Syntax { pos: 2, .. })));
        assert!(matches!(parse("2 $ 3"), Err(Error::Syntax { pos: 2, .. })));
    }

    #[test]
    fn unknown_identifiers() {
        assert_eq!(parse("foo(x)"), Err(Error::UnknownIdentifier("foo".into())));
        assert_eq!(
            parse_with_vars("x + q", &["x"]),
            Err(Error::UnknownIdentifier("q".into()))
        );
        assert!(parse("sin + 1").is_err());
    }

    #[test]
    fn numbers_and_constants() {
        assert_eq!(parse("0").unwrap(), Expr::Const(0.0));
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Const(1.5e-3));
        assert_eq!(parse("-2").unwrap(), Expr::Const(-2.0));
        assert_eq!(parse("pi").unwrap(), Expr::Const(std::f64::consts::PI));
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = parse("-x^2").unwrap();
        assert!(matches!(e, Expr::Unary(UnaryOp::Neg, _)));
        let e = parse("2^-1").unwrap();
        assert_eq!(e, Expr::raw_binary(BinaryOp::Pow, Expr::Const(2.0), Expr::Const(-1.0)));
    }
}
