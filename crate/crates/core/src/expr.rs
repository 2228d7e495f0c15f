//! Tiny expression language for user-supplied potentials V(x, y).
//!
//! Grammar (standard precedence, `^` binds tightest and associates right):
//!   expr   := term (('+' | '-') term)*
//!   term   := unary (('*' | '/') unary)*
//!   unary  := '-' unary | power
//!   power  := atom ('^' unary)?
//!   atom   := number | 'x' | 'y' | 'pi' | name '(' expr ')' | '(' expr ')'
//! with name one of sin, cos, exp, sqrt, abs, tanh. Parse errors carry the
//! byte position in the source text.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Call(UnaryFn, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        if p.pos == p.src.len() {
            return Err(Error::Config("empty potential expression".into()));
        }
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(e) => -e.eval(x, y),
            Expr::Call(f, e) => {
                let v = e.eval(x, y);
                match f {
                    UnaryFn::Sin => v.sin(),
                    UnaryFn::Cos => v.cos(),
                    UnaryFn::Exp => v.exp(),
                    UnaryFn::Sqrt => v.sqrt(),
                    UnaryFn::Abs => v.abs(),
                    UnaryFn::Tanh => v.tanh(),
                }
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Config(format!("expression error at byte {}: {msg}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.err("unexpected end of expression")),
        };
        if c == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(inner);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            return self.ident();
        }
        Err(self.err(&format!("unexpected character '{}'", c as char)))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Exponent suffix: e or E, optional sign, digits.
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mut j = self.pos + 1;
            if j < self.src.len() && (self.src[j] == b'+' || self.src[j] == b'-') {
                j += 1;
            }
            if j < self.src.len() && self.src[j].is_ascii_digit() {
                self.pos = j;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>().map(Expr::Num).map_err(|_| {
            Error::Config(format!(
                "expression error at byte {start}: bad number '{text}'"
            ))
        })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        match name {
            "x" => return Ok(Expr::X),
            "y" => return Ok(Expr::Y),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            _ => {}
        }
        let f = match name {
            "sin" => UnaryFn::Sin,
            "cos" => UnaryFn::Cos,
            "exp" => UnaryFn::Exp,
            "sqrt" => UnaryFn::Sqrt,
            "abs" => UnaryFn::Abs,
            "tanh" => UnaryFn::Tanh,
            _ => {
                return Err(Error::Config(format!(
                    "expression error at byte {start}: unknown name '{name}'"
                )))
            }
        };
        if !self.eat(b'(') {
            return Err(self.err(&format!("expected '(' after '{name}'")));
        }
        let arg = self.expr()?;
        if !self.eat(b')') {
            return Err(self.err("expected ')'"));
        }
        Ok(Expr::Call(f, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn anisotropic_trap_expression() {
        let e = Expr::parse("(0.9*x)^2 + (1.1*y)^2").unwrap();
        for (x, y) in [(0.0f64, 0.0f64), (1.0, 2.0), (-3.5, 0.25)] {
            let want = (0.9 * x).powi(2) + (1.1 * y).powi(2);
            assert_abs_diff_eq!(e.eval(x, y), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn precedence_and_associativity() {
        assert_abs_diff_eq!(Expr::parse("2+3*4^2").unwrap().eval(0.0, 0.0), 50.0);
        assert_abs_diff_eq!(Expr::parse("2^3^2").unwrap().eval(0.0, 0.0), 512.0);
        assert_abs_diff_eq!(Expr::parse("-x^2").unwrap().eval(3.0, 0.0), -9.0);
        assert_abs_diff_eq!(Expr::parse("2^-1").unwrap().eval(0.0, 0.0), 0.5);
        assert_abs_diff_eq!(Expr::parse("1 - 2 - 3").unwrap().eval(0.0, 0.0), -4.0);
        assert_abs_diff_eq!(Expr::parse("8 / 4 / 2").unwrap().eval(0.0, 0.0), 1.0);
    }

    #[test]
    fn functions_and_constants() {
        let e = Expr::parse("sin(pi/2) + cos(0) + exp(0) + sqrt(9) + abs(-2) + tanh(0)").unwrap();
        assert_abs_diff_eq!(
            e.eval(0.0, 0.0),
            1.0 + 1.0 + 1.0 + 3.0 + 2.0,
            epsilon = 1e-15
        );
        let g = Expr::parse("exp(-(x^2+y^2)/2)").unwrap();
        assert_abs_diff_eq!(g.eval(1.0, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn scientific_notation() {
        assert_abs_diff_eq!(Expr::parse("1.5e-3*x").unwrap().eval(2.0, 0.0), 3e-3);
        assert_abs_diff_eq!(Expr::parse("2E2").unwrap().eval(0.0, 0.0), 200.0);
    }

    #[test]
    fn errors_carry_positions() {
        for (src, frag) in [
            ("x +", "end of expression"),
            ("(x", "expected ')'"),
            ("foo(x)", "unknown name 'foo'"),
            ("x $ y", "trailing input"),
            ("", "empty"),
            ("sin x", "expected '('"),
            ("1..2", "bad number"),
        ] {
            let e = Expr::parse(src).unwrap_err();
            let msg = e.to_string();
            assert!(msg.contains(frag), "{src:?}: {msg}");
        }
    }
}
